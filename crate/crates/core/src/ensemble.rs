use crate::error::{Error, Result};

/// Particle positions at one iteration, stored row-major (`n` rows of `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    positions: Vec<f64>,
    n: usize,
    d: usize,
    /// Iteration index `k`.
    pub iteration: u64,
    /// Accumulated time: sum of the step sizes applied so far.
    pub elapsed_time: f64,
}

impl Ensemble {
    pub fn new(positions: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        Self::at(positions, n, d, 0, 0.0)
    }

    pub fn at(
        positions: Vec<f64>,
        n: usize,
        d: usize,
        iteration: u64,
        elapsed_time: f64,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "ensemble needs n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if positions.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: positions.len(),
            });
        }
        if let Some(pos) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                particle: pos / d,
            });
        }
        Ok(Self {
            positions,
            n,
            d,
            iteration,
            elapsed_time,
        })
    }

    /// Builds an ensemble from one slice per particle.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut positions = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            positions.extend_from_slice(r);
        }
        Self::new(positions, rows.len(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.positions.chunks_exact(self.d)
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    /// Mean over particles of `‖x‖⁴`.
    pub fn mean_fourth_moment(&self) -> f64 {
        self.rows()
            .map(|x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                r2 * r2
            })
            .sum::<f64>()
            / self.n as f64
    }
}
