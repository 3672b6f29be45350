//! Diagnostics: DAMV, kernel Stein discrepancy and Gaussian-proxy KL/Fisher.
//!
//! The proxy diagnostics fit a Gaussian to the particles and compare it with
//! a Gaussian target in closed form. They equal the true KL and Fisher
//! information only when the particle law is itself Gaussian.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernels::{sq_dist, Kernel};
use crate::pool::WeightedPool;
use crate::targets::{GaussianMoments, Target};
use crate::transport::{w2_to_target, DEFAULT_SUPPORT_CAP};

/// KSD² values in `[−KSD_FLOOR, 0)` are rounding noise and clamp to zero.
pub const KSD_FLOOR: f64 = 1e-9;
/// Ridge added to a singular fitted covariance.
pub const COV_RIDGE: f64 = 1e-8;

/// Dimension-averaged marginal variance with the unbiased `n − 1` estimator.
pub fn damv(points: &[f64], d: usize) -> Result<f64> {
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
    let mut mean = vec![0.0; d];
    for x in points.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = 0.0;
    for x in points.chunks_exact(d) {
        for (m, v) in mean.iter().zip(x) {
            ss += (v - m) * (v - m);
        }
    }
    Ok(ss / ((n - 1) as f64 * d as f64))
}

/// DAMV of a weighted pool, using the reliability-weight correction `1/(1 − Σw²)`.
///
/// Reduces to [`damv`] for uniform weights.
pub fn damv_pool(pool: &WeightedPool) -> Result<f64> {
    if pool.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: pool.len(),
        });
    }
    let d = pool.d();
    let mean = pool.mean();
    let mut ss = 0.0;
    for (x, w) in pool.points().chunks_exact(d).zip(pool.weights()) {
        let s: f64 = x.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum();
        ss += w * s;
    }
    let w2: f64 = pool.weights().iter().map(|w| w * w).sum();
    Ok(ss / ((1.0 - w2) * d as f64))
}

/// Diagonal handling of the Stein-kernel double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsdEstimator {
    /// Includes `i = j`; the exact Stein Fisher information of the discrete measure.
    V,
    /// Excludes `i = j`, renormalized; unbiased for the population value, may be negative.
    U,
}

/// Stein kernel `u(x, y)` for score `s = −∇F`, given `∇F(x)` and `∇F(y)`.
#[inline]
fn stein_kernel(kernel: &Kernel, x: &[f64], y: &[f64], gx: &[f64], gy: &[f64]) -> f64 {
    let d = x.len();
    let t = kernel.radial(sq_dist(x, y), d);
    let mut ss = 0.0;
    let mut cross = 0.0;
    for a in 0..d {
        ss += gx[a] * gy[a];
        cross += (gx[a] - gy[a]) * (x[a] - y[a]);
    }
    t.k * ss - t.g * cross + t.mixed_trace
}

/// `Σ_{i,j} w_i w_j u(x_i, x_j)` over a weighted pool.
pub fn ksd_squared_pool(
    pool: &WeightedPool,
    target: &dyn Target,
    kernel: &Kernel,
    estimator: KsdEstimator,
) -> Result<f64> {
    let d = pool.d();
    if target.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: d,
        });
    }
    let pts = pool.points();
    let w = pool.weights();
    let n = pool.len();
    let grads = crate::dynamics::gradients(pts, d, target);
    // row i sums j > i in index order; rows are combined in index order
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, gi) = (&pts[i * d..(i + 1) * d], &grads[i * d..(i + 1) * d]);
            let mut off = 0.0;
            for j in i + 1..n {
                off += w[j]
                    * stein_kernel(
                        kernel,
                        xi,
                        &pts[j * d..(j + 1) * d],
                        gi,
                        &grads[j * d..(j + 1) * d],
                    );
            }
            (
                w[i] * w[i] * stein_kernel(kernel, xi, xi, gi, gi),
                2.0 * w[i] * off,
            )
        })
        .collect();
    let diag: f64 = rows.iter().map(|r| r.0).sum();
    let offdiag: f64 = rows.iter().map(|r| r.1).sum();
    match estimator {
        KsdEstimator::V => {
            let v = diag + offdiag;
            if v >= 0.0 {
                Ok(v)
            } else if v >= -KSD_FLOOR {
                Ok(0.0)
            } else {
                Err(Error::NegativeKsd(v))
            }
        }
        KsdEstimator::U => {
            if n < 2 {
                return Err(Error::TooFewPoints { needed: 2, got: n });
            }
            let norm = 1.0 - w.iter().map(|x| x * x).sum::<f64>();
            Ok(offdiag / norm)
        }
    }
}

/// V-statistic KSD² of the uniform empirical measure on `points`.
pub fn ksd_squared(points: &[f64], d: usize, target: &dyn Target, kernel: &Kernel) -> Result<f64> {
    let pool = WeightedPool::uniform(points.to_vec(), d)?;
    ksd_squared_pool(&pool, target, kernel, KsdEstimator::V)
}

/// Weighted mean and covariance (normalized by total weight) of a pool.
pub fn fit_gaussian(pool: &WeightedPool) -> GaussianMoments {
    let d = pool.d();
    let mean = pool.mean();
    let mut cov = vec![0.0; d * d];
    for (x, w) in pool.points().chunks_exact(d).zip(pool.weights()) {
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in 0..=a {
                cov[a * d + b] += w * da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[b * d + a] = cov[a * d + b];
        }
    }
    GaussianMoments { mean, cov }
}

fn to_matrix(m: &GaussianMoments) -> (DVector<f64>, DMatrix<f64>) {
    let d = m.dim();
    (
        DVector::from_column_slice(&m.mean),
        DMatrix::from_row_slice(d, d, &m.cov),
    )
}

/// Cholesky factor of `cov`, adding [`COV_RIDGE`] once if it is singular.
fn factor(cov: DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    let d = cov.nrows();
    if let Some(ch) = cov.clone().cholesky() {
        if ch.l().diagonal().iter().all(|v| *v > 1e-150) {
            return Ok((ch, false));
        }
    }
    let ridged = cov + DMatrix::identity(d, d) * COV_RIDGE;
    ridged
        .cholesky()
        .map(|c| (c, true))
        .ok_or_else(|| Error::InvalidParameter("covariance is not positive semi-definite".into()))
}

/// `KL(N(m, S) ‖ N(μ, Σ))` in closed form.
pub fn gaussian_kl(fit: &GaussianMoments, target: &GaussianMoments) -> Result<f64> {
    Ok(gaussian_kl_fisher(fit, target)?.kl)
}

/// Gaussian-proxy diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyDiagnostics {
    /// `KL(N(m,S) ‖ π)` for the fitted Gaussian.
    pub kl: f64,
    /// `E‖∇log N(m,S) − ∇log π‖²` under the fitted Gaussian.
    pub fisher: f64,
    /// Set when the fitted covariance needed a ridge.
    pub ridged: bool,
}

pub fn gaussian_kl_fisher(
    fit: &GaussianMoments,
    target: &GaussianMoments,
) -> Result<ProxyDiagnostics> {
    if fit.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: fit.dim(),
        });
    }
    let d = fit.dim() as f64;
    let (m, s) = to_matrix(fit);
    let (mu, sigma) = to_matrix(target);
    let (sig_ch, _) = factor(sigma)?;
    let (s_ch, ridged) = factor(s.clone())?;
    let s = if ridged {
        s.clone() + DMatrix::identity(s.nrows(), s.nrows()) * COV_RIDGE
    } else {
        s
    };
    let sig_inv = sig_ch.inverse();
    let s_inv = s_ch.inverse();
    let diff = &mu - &m;
    let logdet = |ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let quad = (diff.transpose() * &sig_inv * &diff)[(0, 0)];
    let kl = 0.5 * ((&sig_inv * &s).trace() + quad - d + logdet(&sig_ch) - logdet(&s_ch));
    // E‖Σ⁻¹(x−μ) − S⁻¹(x−m)‖² for x ~ N(m, S)
    let shift = &sig_inv * &diff;
    let fisher = shift.norm_squared() + (&sig_inv * &s * &sig_inv).trace() - 2.0 * sig_inv.trace()
        + s_inv.trace();
    Ok(ProxyDiagnostics {
        kl: kl.max(0.0),
        fisher: fisher.max(0.0),
        ridged,
    })
}

/// Fits a Gaussian to the pool and compares it with the target's analytic moments.
pub fn gaussian_proxy_kl(pool: &WeightedPool, target: &dyn Target) -> Result<ProxyDiagnostics> {
    let moments = target.analytic_moments().ok_or(Error::NoAnalyticMoments)?;
    if moments.dim() != pool.d() {
        return Err(Error::DimensionMismatch {
            expected: moments.dim(),
            found: pool.d(),
        });
    }
    gaussian_kl_fisher(&fit_gaussian(pool), &moments)
}

/// One row of diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub d: usize,
    pub n: usize,
    pub lambda: f64,
    pub kernel: String,
    pub target: String,
    pub seed: u64,
    pub iteration: u64,
    pub elapsed_time: f64,
    pub damv: f64,
    pub ksd_squared: Option<f64>,
    pub w2_to_target: Option<f64>,
    pub proxy_kl: Option<f64>,
    pub proxy_fisher: Option<f64>,
    /// Particle mean of `‖x‖⁴`.
    pub fourth_moment: f64,
}

/// Header of the metrics CSV.
pub const METRICS_HEADER: &str =
    "d,n,lambda,kernel,target,seed,iteration,elapsed_time,damv,ksd_squared,w2_to_target,proxy_kl,proxy_fisher,fourth_moment";

/// 17 significant digits, round-trippable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},\"{}\",\"{}\",{},{},{},{},{},{},{},{},{}",
            self.d,
            self.n,
            fmt_f64(self.lambda),
            self.kernel,
            self.target,
            self.seed,
            self.iteration,
            fmt_f64(self.elapsed_time),
            fmt_f64(self.damv),
            fmt_opt(self.ksd_squared),
            fmt_opt(self.w2_to_target),
            fmt_opt(self.proxy_kl),
            fmt_opt(self.proxy_fisher),
            fmt_f64(self.fourth_moment),
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, records: &[MetricRecord]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Per-run settings used to fill [`MetricRecord`]s.
pub struct MetricContext<'a> {
    config: &'a RunConfig,
    target: &'a dyn Target,
}

impl<'a> MetricContext<'a> {
    pub fn new(config: &'a RunConfig, target: &'a dyn Target) -> Self {
        Self { config, target }
    }

    pub fn record(&self, ensemble: &Ensemble, kernel: &Kernel) -> Result<MetricRecord> {
        let c = self.config;
        let d = ensemble.d();
        let pool = WeightedPool::from_ensemble(ensemble);
        let damv = if ensemble.n() >= 2 {
            damv(ensemble.positions(), d)?
        } else {
            0.0
        };
        let ksd = if c.ksd {
            Some(ksd_squared_pool(
                &pool,
                self.target,
                kernel,
                KsdEstimator::V,
            )?)
        } else {
            None
        };
        let (proxy_kl, proxy_fisher) = match (c.proxy, self.target.analytic_moments()) {
            (true, Some(_)) => {
                let p = gaussian_proxy_kl(&pool, self.target)?;
                (Some(p.kl), Some(p.fisher))
            }
            _ => (None, None),
        };
        let w2 = if c.w2_samples > 0 {
            Some(
                w2_to_target(
                    &pool,
                    self.target,
                    c.w2_samples,
                    c.seed,
                    DEFAULT_SUPPORT_CAP,
                )?
                .value,
            )
        } else {
            None
        };
        Ok(MetricRecord {
            d,
            n: ensemble.n(),
            lambda: c.lambda,
            kernel: c.kernel.to_string(),
            target: c.target.to_string(),
            seed: c.seed,
            iteration: ensemble.iteration,
            elapsed_time: ensemble.elapsed_time,
            damv,
            ksd_squared: ksd,
            w2_to_target: w2,
            proxy_kl,
            proxy_fisher,
            fourth_moment: ensemble.mean_fourth_moment(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{imq_kernel, rbf_kernel};
    use crate::rng::{Domain, RngStream};
    use crate::targets::{anisotropic_gaussian, standard_gaussian};

    fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut v = vec![0.0; n * d];
        RngStream::new(seed).fill_gaussian(Domain::TargetSample, 0, 0, &mut v);
        v
    }

    #[test]
    fn damv_two_points() {
        assert_eq!(damv(&[-1.0, 1.0], 1).unwrap(), 2.0);
        assert_eq!(damv(&[3.0; 10], 2).unwrap(), 0.0);
        assert!(damv(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn damv_of_gaussian_samples() {
        let v = damv(&gaussian_cloud(100_000, 10, 4), 10).unwrap();
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn damv_invariances() {
        let pts = gaussian_cloud(50, 3, 5);
        let base = damv(&pts, 3).unwrap();
        let shifted: Vec<f64> = pts
            .iter()
            .enumerate()
            .map(|(i, v)| v + [1.0, -7.0, 3.5][i % 3])
            .collect();
        assert!((damv(&shifted, 3).unwrap() - base).abs() < 1e-12);
        let permuted: Vec<f64> = pts.chunks(3).flat_map(|r| [r[2], r[0], r[1]]).collect();
        assert!((damv(&permuted, 3).unwrap() - base).abs() < 1e-12);
        let pool = WeightedPool::uniform(pts.clone(), 3).unwrap();
        assert!((damv_pool(&pool).unwrap() - base).abs() < 1e-12);
    }

    /// Stein kernel assembled from finite differences of `K` only.
    fn fd_stein(kernel: &Kernel, target: &dyn Target, x: &[f64], y: &[f64]) -> f64 {
        let d = x.len();
        let h = 1e-4;
        let k = |a: &[f64], b: &[f64]| kernel.eval(a, b);
        let mut sx = vec![0.0; d];
        let mut sy = vec![0.0; d];
        target.gradient(x, &mut sx);
        target.gradient(y, &mut sy);
        sx.iter_mut().for_each(|v| *v = -*v);
        sy.iter_mut().for_each(|v| *v = -*v);
        let mut u = k(x, y) * sx.iter().zip(&sy).map(|(a, b)| a * b).sum::<f64>();
        for a in 0..d {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[a] += h;
            ym[a] -= h;
            let dky = (k(x, &yp) - k(x, &ym)) / (2.0 * h);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[a] += h;
            xm[a] -= h;
            let dkx = (k(&xp, y) - k(&xm, y)) / (2.0 * h);
            let mixed = (k(&xp, &yp) - k(&xp, &ym) - k(&xm, &yp) + k(&xm, &ym)) / (4.0 * h * h);
            u += sx[a] * dky + sy[a] * dkx + mixed;
        }
        u
    }

    #[test]
    fn single_particle_at_mode_equals_dimension() {
        for d in [1usize, 3, 5] {
            let t = standard_gaussian(d).unwrap();
            let k = rbf_kernel(1.0).unwrap();
            let v = ksd_squared(&vec![0.0; d], d, &t, &k).unwrap();
            assert!((v - d as f64).abs() < 1e-12);
            assert!((fd_stein(&k, &t, &vec![0.0; d], &vec![0.0; d]) - d as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn two_points_match_fd_stein_kernel() {
        let t = anisotropic_gaussian(vec![1.0, 2.0]).unwrap();
        let pts = [0.3, -0.8, -1.1, 0.4];
        for k in [rbf_kernel(1.0).unwrap(), imq_kernel(1.0, 1.0).unwrap()] {
            let got = ksd_squared(&pts, 2, &t, &k).unwrap();
            let (x, y) = (&pts[..2], &pts[2..]);
            let want = 0.25
                * (fd_stein(&k, &t, x, x) + 2.0 * fd_stein(&k, &t, x, y) + fd_stein(&k, &t, y, y));
            assert!(
                (got - want).abs() < 1e-5 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn ksd_is_permutation_invariant() {
        let t = standard_gaussian(2).unwrap();
        let k = rbf_kernel(1.0).unwrap();
        let pts = gaussian_cloud(30, 2, 3);
        let rev: Vec<f64> = pts.chunks(2).rev().flatten().copied().collect();
        let a = ksd_squared(&pts, 2, &t, &k).unwrap();
        let b = ksd_squared(&rev, 2, &t, &k).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn u_statistic_is_smaller_than_v_on_exact_samples() {
        let t = standard_gaussian(2).unwrap();
        let k = rbf_kernel(1.0).unwrap();
        let pool = WeightedPool::uniform(gaussian_cloud(200, 2, 8), 2).unwrap();
        let v = ksd_squared_pool(&pool, &t, &k, KsdEstimator::V).unwrap();
        let u = ksd_squared_pool(&pool, &t, &k, KsdEstimator::U).unwrap();
        assert!(u < v);
        assert!(u.abs() < 0.02, "{u}");
    }

    #[test]
    fn ksd_shrinks_with_more_exact_samples() {
        let t = standard_gaussian(2).unwrap();
        let k = rbf_kernel(1.0).unwrap();
        let avg = |n: usize| {
            (0..5)
                .map(|s| ksd_squared(&gaussian_cloud(n, 2, 100 + s), 2, &t, &k).unwrap())
                .sum::<f64>()
                / 5.0
        };
        assert!(avg(100) > avg(400));
    }

    #[test]
    fn proxy_kl_closed_form() {
        let target = GaussianMoments::isotropic(vec![0.0], 1.0);
        let fit = GaussianMoments::isotropic(vec![0.0], 4.0);
        let p = gaussian_kl_fisher(&fit, &target).unwrap();
        assert!((p.kl - 0.5 * (3.0 - 4f64.ln())).abs() < 1e-14);
        assert!((p.kl - 0.8069).abs() < 1e-4);
        // (1 − 1/4)² · 4 = 2.25
        assert!((p.fisher - 2.25).abs() < 1e-12);
        let same = gaussian_kl_fisher(&target, &target).unwrap();
        assert_eq!(same.kl, 0.0);
        assert!(same.fisher.abs() < 1e-15);
    }

    #[test]
    fn proxy_kl_mean_shift() {
        let target = GaussianMoments::isotropic(vec![0.0, 0.0], 2.0);
        let fit = GaussianMoments::isotropic(vec![1.0, 1.0], 2.0);
        let p = gaussian_kl_fisher(&fit, &target).unwrap();
        assert!((p.kl - 0.5).abs() < 1e-14);
        assert!((p.fisher - 0.5).abs() < 1e-14);
    }

    #[test]
    fn proxy_handles_degenerate_clouds() {
        let t = standard_gaussian(2).unwrap();
        let pool = WeightedPool::uniform(vec![1.0, 1.0, 1.0, 1.0], 2).unwrap();
        let p = gaussian_proxy_kl(&pool, &t).unwrap();
        assert!(p.ridged);
        assert!(p.kl.is_finite() && p.kl > 0.0);
    }

    #[test]
    fn proxy_requires_moments() {
        let mix = crate::targets::gaussian_mixture(vec![vec![0.0]], vec![1.0], 1.0).unwrap();
        let pool = WeightedPool::uniform(vec![0.0, 1.0], 1).unwrap();
        assert!(matches!(
            gaussian_proxy_kl(&pool, &mix),
            Err(Error::NoAnalyticMoments)
        ));
    }

    proptest::proptest! {
        #[test]
        fn proxy_kl_non_negative(pts in proptest::collection::vec(-5.0f64..5.0, 6..40)) {
            let n = pts.len() / 2 * 2;
            let pool = WeightedPool::uniform(pts[..n].to_vec(), 2).unwrap();
            let p = gaussian_proxy_kl(&pool, &standard_gaussian(2).unwrap()).unwrap();
            proptest::prop_assert!(p.kl >= 0.0 && p.fisher >= 0.0);
        }
    }
}
