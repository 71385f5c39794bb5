//! Small statistical tests used by the experiment reports.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// One-sided Mann–Whitney test of `x` stochastically smaller than `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSum {
    /// Pairs with `x_i > y_j`, ties counted one half.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

pub fn rank_sum_less(x: &[f64], y: &[f64]) -> RankSum {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, usize)> = x.iter().map(|&v| (v, 0)).chain(y.iter().map(|&v| (v, 1))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        let avg = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|r| *r = avg);
        i = j + 1;
    }
    let rx: f64 = all.iter().zip(&ranks).filter(|(a, _)| a.1 == 0).map(|(_, r)| r).sum();
    let u = rx - n1 * (n1 + 1.0) / 2.0;
    let nf = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let z = if var > 0.0 { (u - n1 * n2 / 2.0 + 0.5) / var.sqrt() } else { 0.0 };
    let p_value = Normal::standard().cdf(z);
    RankSum { u, z, p_value }
}

/// Ordinary least squares `y ≈ a + slope·x` with a two-sided confidence interval on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

pub fn slope_fit(x: &[f64], y: &[f64], level: f64) -> SlopeFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).map(|d| d.inverse_cdf(0.5 + level / 2.0)).unwrap_or(f64::NAN);
    SlopeFit { slope, stderr, ci_low: slope - t * stderr, ci_high: slope + t * stderr, level }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_sum_small_example() {
        // x entirely below y: U = 0.
        let r = rank_sum_less(&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(r.u, 0.0);
        assert!(r.p_value < 0.01);
        let r = rank_sum_less(&[6.0, 7.0, 8.0], &[1.0, 2.0, 3.0]);
        assert_eq!(r.u, 9.0);
        assert!(r.p_value > 0.9);
        // Ties share ranks.
        let r = rank_sum_less(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(r.u, 2.0);
    }

    #[test]
    fn exact_line_has_zero_stderr() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = slope_fit(&x, &y, 0.95);
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!(f.stderr < 1e-12);
    }

    #[test]
    fn t_interval_width() {
        // n = 5 points, 3 dof: t_{0.975} = 3.182446.
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 1.0, 0.0, 1.0, 0.0];
        let f = slope_fit(&x, &y, 0.95);
        assert!(((f.ci_high - f.slope) / f.stderr - 3.182_446_305).abs() < 1e-6);
    }
}
