//! Radial kernels with analytic derivatives.
//!
//! Every kernel here is a function of `r² = ‖x − y‖²`, so the derivative in
//! the second argument is `∇₂K(x, y) = g(r²)·(x − y)` and the trace of the
//! cross second derivatives depends only on `r²` and the dimension.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::notation::{parse_call, parse_f64};

/// Bandwidth floor used when the median heuristic degenerates.
pub const BANDWIDTH_FLOOR: f64 = 1e-12;

/// A concrete kernel `K(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(−r²/(2h²))`.
    Rbf { h: f64 },
    /// `(c + r²/(2s²))^(−1/2)`.
    Imq { c: f64, s: f64 },
    /// `K ≡ 0`. Removes the interaction, leaving pure Langevin dynamics.
    Zero,
}

/// Values of a radial kernel at one squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialTerms {
    /// `K`.
    pub k: f64,
    /// Coefficient `g` with `∇₂K(x, y) = g·(x − y)`.
    pub g: f64,
    /// `Σ_a ∂²K/∂x_a∂y_a`.
    pub mixed_trace: f64,
}

pub fn rbf_kernel(h: f64) -> Result<Kernel> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rbf bandwidth must be positive, got {h}"
        )));
    }
    Ok(Kernel::Rbf { h })
}

pub fn imq_kernel(c: f64, s: f64) -> Result<Kernel> {
    if !(c.is_finite() && c > 0.0 && s.is_finite() && s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "imq parameters must be positive, got c={c}, s={s}"
        )));
    }
    Ok(Kernel::Imq { c, s })
}

impl Kernel {
    /// `K(x,y)` and the `∇₂K` coefficient, skipping the mixed trace.
    #[inline(always)]
    pub fn value_and_slope(&self, r2: f64) -> (f64, f64) {
        match *self {
            Kernel::Rbf { h } => {
                let inv_h2 = 1.0 / (h * h);
                let k = (-0.5 * r2 * inv_h2).exp();
                (k, k * inv_h2)
            }
            Kernel::Imq { c, s } => {
                let inv_2s2 = 0.5 / (s * s);
                let q = c + r2 * inv_2s2;
                let k = 1.0 / q.sqrt();
                (k, inv_2s2 * k / q)
            }
            Kernel::Zero => (0.0, 0.0),
        }
    }

    #[inline]
    pub fn radial(&self, r2: f64, d: usize) -> RadialTerms {
        let d = d as f64;
        match *self {
            Kernel::Rbf { h } => {
                let inv_h2 = 1.0 / (h * h);
                let k = (-0.5 * r2 * inv_h2).exp();
                RadialTerms {
                    k,
                    g: k * inv_h2,
                    mixed_trace: (d * inv_h2 - r2 * inv_h2 * inv_h2) * k,
                }
            }
            Kernel::Imq { c, s } => {
                let inv_2s2 = 0.5 / (s * s);
                let q = c + r2 * inv_2s2;
                let k = 1.0 / q.sqrt();
                let k3 = k / q;
                let k5 = k3 / q;
                RadialTerms {
                    k,
                    g: inv_2s2 * k3,
                    mixed_trace: d * inv_2s2 * k3 - 3.0 * r2 * inv_2s2 * inv_2s2 * k5,
                }
            }
            Kernel::Zero => RadialTerms {
                k: 0.0,
                g: 0.0,
                mixed_trace: 0.0,
            },
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.value_and_slope(sq_dist(x, y)).0
    }

    /// `∇₂K(x, y)`, the gradient in the second argument.
    pub fn grad2(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let (_, g) = self.value_and_slope(sq_dist(x, y));
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = g * (a - b);
        }
    }

    /// Trace of the matrix of cross second derivatives `∂²K/∂x∂y`.
    pub fn mixed_trace(&self, x: &[f64], y: &[f64]) -> f64 {
        self.radial(sq_dist(x, y), x.len()).mixed_trace
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Rbf { h } => write!(f, "rbf({h})"),
            Kernel::Imq { c, s } => write!(f, "imq({c},{s})"),
            Kernel::Zero => write!(f, "zero"),
        }
    }
}

/// Squared Euclidean distance, summed in eight fixed interleaved lanes.
#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    const L: usize = 8;
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; L];
    let xc = x.chunks_exact(L);
    let yc = y.chunks_exact(L);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..L {
            let t = a[l] - b[l];
            acc[l] += t * t;
        }
    }
    for (l, (a, b)) in xr.iter().zip(yr).enumerate() {
        let t = a - b;
        acc[l] += t * t;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// `sq_dist(x, y_m)` for four points at once, bit-identical to four calls.
///
/// The four accumulators are independent, which keeps the adder pipeline busy.
#[inline]
pub fn sq_dist4(x: &[f64], ys: [&[f64]; 4]) -> [f64; 4] {
    const L: usize = 8;
    let d = x.len();
    let full = d - d % L;
    let mut acc = [[0.0f64; L]; 4];
    for o in (0..full).step_by(L) {
        let a: &[f64; L] = x[o..o + L].try_into().unwrap();
        for (m, y) in ys.iter().enumerate() {
            let b: &[f64; L] = y[o..o + L].try_into().unwrap();
            for l in 0..L {
                let t = a[l] - b[l];
                acc[m][l] += t * t;
            }
        }
    }
    let mut out = [0.0; 4];
    for (m, y) in ys.iter().enumerate() {
        for l in 0..d - full {
            let t = x[full + l] - y[full + l];
            acc[m][l] += t * t;
        }
        let a = &acc[m];
        out[m] = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    }
    out
}

/// Bandwidth selection for the RBF kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median heuristic, re-evaluated on the current particles at every step.
    Median,
}

/// Kernel as written in configuration files: `rbf(h)`, `rbf(median)`, `imq(c,s)`, `zero`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelSpec {
    Rbf(Bandwidth),
    Imq { c: f64, s: f64 },
    Zero,
}

impl KernelSpec {
    /// The concrete kernel for the given particle cloud.
    pub fn resolve(&self, ensemble: &Ensemble) -> Result<Kernel> {
        match *self {
            KernelSpec::Rbf(Bandwidth::Fixed(h)) => rbf_kernel(h),
            KernelSpec::Rbf(Bandwidth::Median) => {
                if ensemble.n() < 2 {
                    return rbf_kernel(1.0);
                }
                let mh = median_heuristic_bandwidth(ensemble.positions(), ensemble.d())?;
                rbf_kernel(mh.bandwidth)
            }
            KernelSpec::Imq { c, s } => imq_kernel(c, s),
            KernelSpec::Zero => Ok(Kernel::Zero),
        }
    }

    /// The kernel if it does not depend on the particles.
    pub fn fixed(&self) -> Option<Kernel> {
        match *self {
            KernelSpec::Rbf(Bandwidth::Fixed(h)) => Some(Kernel::Rbf { h }),
            KernelSpec::Rbf(Bandwidth::Median) => None,
            KernelSpec::Imq { c, s } => Some(Kernel::Imq { c, s }),
            KernelSpec::Zero => Some(Kernel::Zero),
        }
    }
}

impl From<Kernel> for KernelSpec {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::Rbf { h } => KernelSpec::Rbf(Bandwidth::Fixed(h)),
            Kernel::Imq { c, s } => KernelSpec::Imq { c, s },
            Kernel::Zero => KernelSpec::Zero,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Rbf(Bandwidth::Fixed(h)) => write!(f, "rbf({h})"),
            KernelSpec::Rbf(Bandwidth::Median) => write!(f, "rbf(median)"),
            KernelSpec::Imq { c, s } => write!(f, "imq({c},{s})"),
            KernelSpec::Zero => write!(f, "zero"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: "kernel",
            input: s.to_string(),
            reason: reason.into(),
        };
        let (name, args) = parse_call(s).ok_or_else(|| err("expected name(args)"))?;
        match (name, args.as_slice()) {
            ("rbf", []) => Ok(KernelSpec::Rbf(Bandwidth::Fixed(1.0))),
            ("rbf", ["median"]) => Ok(KernelSpec::Rbf(Bandwidth::Median)),
            ("rbf", [h]) => {
                let h = parse_f64(h).ok_or_else(|| err("bandwidth is not a number"))?;
                rbf_kernel(h).map(Into::into)
            }
            ("imq", []) => Ok(KernelSpec::Imq { c: 1.0, s: 1.0 }),
            ("imq", [c, sc]) => {
                let c = parse_f64(c).ok_or_else(|| err("offset is not a number"))?;
                let sc = parse_f64(sc).ok_or_else(|| err("scale is not a number"))?;
                imq_kernel(c, sc).map(Into::into)
            }
            ("zero", []) => Ok(KernelSpec::Zero),
            _ => Err(err("expected rbf(h), rbf(median), imq(c,s) or zero")),
        }
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KernelSpec> for String {
    fn from(k: KernelSpec) -> String {
        k.to_string()
    }
}

/// Result of the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianBandwidth {
    pub bandwidth: f64,
    /// True when all points coincide and [`BANDWIDTH_FLOOR`] was returned.
    pub floored: bool,
}

/// Median pairwise distance divided by `√(2·log(n+1))`.
pub fn median_heuristic_bandwidth(points: &[f64], d: usize) -> Result<MedianBandwidth> {
    if d == 0 || !points.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: points.len(),
        });
    }
    let n = points.len() / d;
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = &points[i * d..(i + 1) * d];
        for j in i + 1..n {
            dists.push(sq_dist(xi, &points[j * d..(j + 1) * d]).sqrt());
        }
    }
    let m = dists.len();
    let upper = *dists.select_nth_unstable_by(m / 2, f64::total_cmp).1;
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..m / 2]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    let bw = median / (2.0 * ((n + 1) as f64).ln()).sqrt();
    if bw < BANDWIDTH_FLOOR {
        Ok(MedianBandwidth {
            bandwidth: BANDWIDTH_FLOOR,
            floored: true,
        })
    } else {
        Ok(MedianBandwidth {
            bandwidth: bw,
            floored: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sq_dist4_matches_sq_dist_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [1, 3, 7, 8, 9, 16, 100] {
            let pts: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let got = sq_dist4(&pts[0], [&pts[1], &pts[2], &pts[3], &pts[4]]);
            for m in 0..4 {
                assert_eq!(got[m].to_bits(), sq_dist(&pts[0], &pts[m + 1]).to_bits());
                assert_eq!(got[m].to_bits(), sq_dist(&pts[m + 1], &pts[0]).to_bits());
            }
        }
    }

    fn fd_grad2(k: &Kernel, x: &[f64], y: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..y.len())
            .map(|a| {
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                yp[a] += eps;
                ym[a] -= eps;
                (k.eval(x, &yp) - k.eval(x, &ym)) / (2.0 * eps)
            })
            .collect()
    }

    fn fd_mixed(k: &Kernel, x: &[f64], y: &[f64]) -> f64 {
        let eps = 1e-5;
        let d = x.len();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        (0..d)
            .map(|a| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[a] += eps;
                xm[a] -= eps;
                k.grad2(&xp, y, &mut gp);
                k.grad2(&xm, y, &mut gm);
                (gp[a] - gm[a]) / (2.0 * eps)
            })
            .sum()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn rbf_coincident_points() {
        let k = rbf_kernel(1.0).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert_eq!(k.eval(&x, &x), 1.0);
        let mut g = [1.0; 3];
        k.grad2(&x, &x, &mut g);
        assert_eq!(g, [0.0; 3]);
        assert_eq!(k.mixed_trace(&x, &x), 3.0);
    }

    #[test]
    fn rbf_unit_distance() {
        let k = rbf_kernel(1.0).unwrap();
        assert!((k.eval(&[0.0], &[1.0]) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.eval(&[0.0], &[1.0]) - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn rbf_grad2_at_three_four() {
        let k = rbf_kernel(1.0).unwrap();
        let (x, y) = ([0.0, 0.0], [3.0, 4.0]);
        let mut g = [0.0; 2];
        k.grad2(&x, &y, &mut g);
        let e = (-12.5f64).exp();
        assert!((g[0] + 3.0 * e).abs() < 1e-18);
        assert!((g[1] + 4.0 * e).abs() < 1e-18);
        let fd = fd_grad2(&k, &x, &y);
        for a in 0..2 {
            assert!(close(g[a], fd[a], 1e-4), "{} vs {}", g[a], fd[a]);
        }
    }

    #[test]
    fn imq_reference_values() {
        let k = imq_kernel(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.7], &[0.7]), 1.0);
        let v = k.eval(&[0.0], &[1.0]);
        assert!((v - 1.0 / 1.5f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernels = [
            rbf_kernel(1.0).unwrap(),
            rbf_kernel(0.7).unwrap(),
            imq_kernel(1.0, 1.0).unwrap(),
            imq_kernel(2.0, 0.5).unwrap(),
        ];
        for k in kernels {
            for d in [1usize, 2, 5] {
                for _ in 0..20 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                    let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                    let mut g = vec![0.0; d];
                    k.grad2(&x, &y, &mut g);
                    let fd = fd_grad2(&k, &x, &y);
                    for a in 0..d {
                        assert!(close(g[a], fd[a], 1e-4), "{k} grad2 {} vs {}", g[a], fd[a]);
                    }
                    let m = k.mixed_trace(&x, &y);
                    assert!(close(m, fd_mixed(&k, &x, &y), 1e-3), "{k} mixed");
                    assert_eq!(k.eval(&x, &y), k.eval(&y, &x));
                }
            }
        }
    }

    #[test]
    fn radial_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in [rbf_kernel(1.0).unwrap(), imq_kernel(1.0, 1.0).unwrap()] {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let kxx = k.eval(&x, &x);
            for _ in 0..50 {
                let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert!(k.eval(&x, &y).abs() <= kxx);
            }
            let mut g = vec![1.0; 3];
            k.grad2(&x, &x, &mut g);
            assert!(g.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(rbf_kernel(0.0).is_err());
        assert!(rbf_kernel(-1.0).is_err());
        assert!(imq_kernel(0.0, 1.0).is_err());
        assert!(imq_kernel(1.0, -2.0).is_err());
        assert!("rbf(0)".parse::<KernelSpec>().is_err());
        assert!("poly(2)".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn spec_strings() {
        for s in ["rbf(1)", "rbf(median)", "imq(1,1)", "imq(2,0.5)", "zero"] {
            assert_eq!(s.parse::<KernelSpec>().unwrap().to_string(), s);
        }
        assert_eq!(
            "rbf".parse::<KernelSpec>().unwrap(),
            KernelSpec::Rbf(Bandwidth::Fixed(1.0))
        );
    }

    #[test]
    fn median_single_pair() {
        let mb = median_heuristic_bandwidth(&[0.0, 2.0], 1).unwrap();
        assert!((mb.bandwidth - 2.0 / (2.0 * 3f64.ln()).sqrt()).abs() < 1e-15);
        assert!(!mb.floored);
    }

    #[test]
    fn median_degenerate_and_errors() {
        let mb = median_heuristic_bandwidth(&[1.0; 8], 2).unwrap();
        assert!(mb.floored);
        assert_eq!(mb.bandwidth, BANDWIDTH_FLOOR);
        assert!(median_heuristic_bandwidth(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn median_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut all = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                if i < j {
                    let s: f64 = (0..3)
                        .map(|a| (pts[i * 3 + a] - pts[j * 3 + a]).powi(2))
                        .sum();
                    all.push(s.sqrt());
                }
            }
        }
        assert_eq!(all.len(), 45);
        all.sort_by(f64::total_cmp);
        let expected = all[22] / (2.0 * 11f64.ln()).sqrt();
        let got = median_heuristic_bandwidth(&pts, 3).unwrap().bandwidth;
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn sq_dist_matches_naive() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = (0..11).map(|i| (i as f64).sin()).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((sq_dist(&x, &y) - naive).abs() < 1e-12);
    }
}
