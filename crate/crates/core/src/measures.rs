//! Weighted point clouds on `R^d` and on `R^d × R^d`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("point {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("weight {index} is {weight}; weights must be positive and finite")]
    Weight { index: usize, weight: f64 },
    #[error("total weight {0} exceeds 1")]
    TooHeavy(f64),
}

const MASS_SLACK: f64 = 1e-12;

fn check_weights(weights: &[f64]) -> Result<(), MeasureError> {
    for (index, &weight) in weights.iter().enumerate() {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(MeasureError::Weight { index, weight });
        }
    }
    let total: f64 = weights.iter().sum();
    if total > 1.0 + MASS_SLACK {
        return Err(MeasureError::TooHeavy(total));
    }
    Ok(())
}

fn flatten(d: usize, points: &[Vec<f64>]) -> Result<Vec<f64>, MeasureError> {
    let mut flat = Vec::with_capacity(points.len() * d);
    for (index, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(MeasureError::Dimension { index, got: p.len(), expected: d });
        }
        flat.extend_from_slice(p);
    }
    Ok(flat)
}

/// Sub-probability measure `Σ w_i δ_{x_i}` on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    d: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(d: usize, points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self, MeasureError> {
        assert_eq!(points.len(), weights.len(), "one weight per point");
        check_weights(&weights)?;
        Ok(Self { d, coords: flatten(d, points)?, weights })
    }

    /// Equal weights `total / len`.
    pub fn uniform(d: usize, points: &[Vec<f64>], total: f64) -> Result<Self, MeasureError> {
        let w = total / points.len() as f64;
        Self::new(d, points, vec![w; points.len()])
    }

    pub(crate) fn from_flat(d: usize, coords: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), d * weights.len());
        Self { d, coords, weights }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.total_mass();
        let mut m = vec![0.0; self.d];
        for (p, w) in self.points().zip(&self.weights) {
            for k in 0..self.d {
                m[k] += w * p[k];
            }
        }
        m.iter_mut().for_each(|v| *v /= total);
        m
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.d);
        let coords = self.coords.iter().enumerate().map(|(i, c)| c + v[i % self.d]).collect();
        Self { d: self.d, coords, weights: self.weights.clone() }
    }

    /// Same atoms with every weight multiplied by `factor`.
    pub fn scaled_mass(&self, factor: f64) -> Self {
        Self { d: self.d, coords: self.coords.clone(), weights: self.weights.iter().map(|w| w * factor).collect() }
    }
}

/// Sub-probability measure `Σ w_i δ_{(x_i, y_i)}` on `R^d × R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEmpiricalMeasure {
    d: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Vec<f64>,
}

impl PairEmpiricalMeasure {
    pub fn new(d: usize, pairs: &[(Vec<f64>, Vec<f64>)], weights: Vec<f64>) -> Result<Self, MeasureError> {
        assert_eq!(pairs.len(), weights.len(), "one weight per pair");
        check_weights(&weights)?;
        let xs: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
        let ys: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
        Ok(Self { d, xs: flatten(d, &xs)?, ys: flatten(d, &ys)?, weights })
    }

    pub(crate) fn from_flat(d: usize, xs: Vec<f64>, ys: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(xs.len(), d * weights.len());
        debug_assert_eq!(ys.len(), d * weights.len());
        Self { d, xs, ys, weights }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.d..(i + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn first_marginal(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_flat(self.d, self.xs.clone(), self.weights.clone())
    }

    pub fn second_marginal(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_flat(self.d, self.ys.clone(), self.weights.clone())
    }

    /// Common translation of both coordinates.
    pub fn translated(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.d);
        let shift = |c: &Vec<f64>| c.iter().enumerate().map(|(i, x)| x + v[i % self.d]).collect();
        Self { d: self.d, xs: shift(&self.xs), ys: shift(&self.ys), weights: self.weights.clone() }
    }

    /// Weight of pairs with `|x − y| ≥ a`.
    pub fn displacement_tail(&self, a: f64) -> f64 {
        (0..self.len()).filter(|&i| dist2(self.x(i), self.y(i)) >= a * a).map(|i| self.weights[i]).sum()
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(matches!(
            EmpiricalMeasure::new(2, &[vec![0.0, 0.0, 1.0]], vec![0.5]),
            Err(MeasureError::Dimension { .. })
        ));
        assert!(matches!(EmpiricalMeasure::new(1, &[vec![0.0]], vec![-0.5]), Err(MeasureError::Weight { .. })));
        assert!(matches!(
            EmpiricalMeasure::new(1, &[vec![0.0], vec![1.0]], vec![0.7, 0.7]),
            Err(MeasureError::TooHeavy(_))
        ));
    }

    #[test]
    fn marginals_and_tail() {
        let pairs = vec![(vec![0.0, 0.0], vec![1.0, 0.0]), (vec![1.0, 0.0], vec![1.0, 3.0])];
        let mu = PairEmpiricalMeasure::new(2, &pairs, vec![0.5, 0.5]).unwrap();
        assert_eq!(mu.first_marginal().point(1), &[1.0, 0.0]);
        assert_eq!(mu.second_marginal().point(1), &[1.0, 3.0]);
        assert_eq!(mu.displacement_tail(2.0), 0.5);
        assert_eq!(mu.displacement_tail(0.5), 1.0);
        assert_eq!(mu.displacement_tail(1e9), 0.0);
        let t = mu.translated(&[2.0, -1.0]);
        assert_eq!(t.y(0), &[3.0, -1.0]);
        assert_eq!(t.displacement_tail(2.0), 0.5);
    }

    #[test]
    fn mean_of_cloud() {
        let m = EmpiricalMeasure::new(1, &[vec![0.0], vec![3.0]], vec![0.25, 0.75]).unwrap();
        assert!((m.mean()[0] - 2.25).abs() < 1e-15);
    }
}
