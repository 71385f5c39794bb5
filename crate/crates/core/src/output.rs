//! Tidy CSV output: header row, `.` decimal point, 17 significant digits.

use std::io::{self, BufRead, Write};

use crate::measures::EmpiricalMeasure;
use crate::rate_function::{RadialProfile, RateError, RatePoint};
use crate::walk_sim::WalkRecord;

/// Shortest lossless-enough form with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Columns `b, I, lambda, mu, mass_res, gamma_res`; failed points are skipped.
pub fn write_rate_points<W: Write>(mut w: W, points: &[Result<RatePoint, RateError>]) -> io::Result<()> {
    writeln!(w, "b,I,lambda,mu,mass_res,gamma_res")?;
    for p in points.iter().flatten() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(p.b),
            fmt_f64(p.energy),
            fmt_f64(p.mult.lambda),
            fmt_f64(p.mult.mu),
            fmt_f64(p.mass_residual),
            fmt_f64(p.gamma_residual)
        )?;
    }
    Ok(())
}

/// Columns `r, y` on the profile's grid.
pub fn write_profile<W: Write>(mut w: W, profile: &RadialProfile) -> io::Result<()> {
    writeln!(w, "r,y")?;
    for (r, y) in profile.grid.nodes().iter().zip(&profile.y) {
        writeln!(w, "{},{}", fmt_f64(*r), fmt_f64(*y))?;
    }
    Ok(())
}

/// Columns `x1, …, xd, weight`.
pub fn write_cloud<W: Write>(mut w: W, cloud: &EmpiricalMeasure) -> io::Result<()> {
    let d = cloud.dim();
    let header: Vec<String> = (1..=d).map(|k| format!("x{k}")).chain(["weight".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (p, wt) in cloud.points().zip(cloud.weights()) {
        let row: Vec<String> = p.iter().chain([wt]).map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Inverse of [`write_cloud`].
pub fn read_cloud<R: BufRead>(r: R) -> io::Result<EmpiricalMeasure> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty cloud file".into()))??;
    let d = header.split(',').count().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| bad("missing columns".into()))?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<io::Result<Vec<f64>>>()?;
        if vals.len() != d + 1 {
            return Err(bad(format!("expected {} columns, got {}", d + 1, vals.len())));
        }
        weights.push(vals[d]);
        points.push(vals[..d].to_vec());
    }
    EmpiricalMeasure::new(d, &points, weights).map_err(|e| bad(e.to_string()))
}

/// Columns `seed, walk, n, d, eps, R_n, accepted`.
pub fn write_walks<W: Write>(mut w: W, records: &[WalkRecord]) -> io::Result<()> {
    writeln!(w, "seed,walk,n,d,eps,R_n,accepted")?;
    for r in records {
        let p = &r.params;
        writeln!(w, "{},{},{},{},{},{},{}", p.seed, r.index, p.n, p.d, fmt_f64(p.eps), r.range, r.accepted)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_round_trip_is_lossless() {
        let pts = vec![vec![0.1, -2.0 / 3.0], vec![1e-300, std::f64::consts::PI]];
        let c = EmpiricalMeasure::new(2, &pts, vec![0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,weight\n"));
        assert_eq!(read_cloud(&buf[..]).unwrap(), c);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }
}
