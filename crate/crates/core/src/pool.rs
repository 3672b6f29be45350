use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Tolerance on `Σ weights = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Finite weighted point cloud: a discrete probability measure on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPool {
    points: Vec<f64>,
    weights: Vec<f64>,
    d: usize,
}

impl WeightedPool {
    /// Normalizes `weights` to sum to one; each must be positive and finite.
    pub fn new(points: Vec<f64>, d: usize, weights: Vec<f64>) -> Result<Self> {
        if d == 0 || !points.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: points.len(),
            });
        }
        if weights.len() != points.len() / d {
            return Err(Error::DimensionMismatch {
                expected: points.len() / d,
                found: weights.len(),
            });
        }
        if weights.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: 0,
                particle: pos / d,
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter(
                "pool weights must be positive and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, weights, d })
    }

    pub fn uniform(points: Vec<f64>, d: usize) -> Result<Self> {
        let n = if d == 0 { 0 } else { points.len() / d };
        Self::new(points, d, vec![1.0; n])
    }

    pub fn from_ensemble(e: &Ensemble) -> Self {
        let n = e.n();
        Self {
            points: e.positions().to_vec(),
            weights: vec![1.0 / n as f64; n],
            d: e.d(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when all weights are equal within `1e-12` relative.
    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| (w - w0).abs() <= 1e-12 * w0)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for (x, w) in self.points.chunks_exact(self.d).zip(&self.weights) {
            for (ma, xa) in m.iter_mut().zip(x) {
                *ma += w * xa;
            }
        }
        m
    }
}
