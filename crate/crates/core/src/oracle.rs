//! Large-n, constant-step particle simulation of the mean-field flow
//!
//! ```text
//! dX_t = −∫ (K(X_t,y)∇F(y) − ∇₂K(X_t,y)) dρ_t(y) dt − λ∇F(X_t) dt + √(2λ) dW_t
//! ```
//!
//! with `ρ_t` replaced by the empirical measure of the simulated particles,
//! plus the KL-Lyapunov and exponential-contraction checks run on it.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::InitSpec;
use crate::contracts::gradient_lipschitz_probe;
use crate::dynamics::{initial_ensemble, noisy_svgd_step};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, KernelSpec};
use crate::metrics::{damv, fmt_f64, gaussian_proxy_kl, ksd_squared_pool, KsdEstimator};
use crate::pool::WeightedPool;
use crate::rng::RngStream;
use crate::targets::{Target, TargetSpec};

/// Largest allowed `dt · L` for the gradient Lipschitz probe `L`.
pub const MAX_DT_LIPSCHITZ: f64 = 0.1;

/// Particle count below which the empirical measure is a poor stand-in for `ρ_t`.
pub const RECOMMENDED_N_REF: usize = 1000;

/// Settings of the reference flow. Lives under `[flow]` in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub n_ref: usize,
    pub d: usize,
    pub dt: f64,
    pub horizon: f64,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub target: TargetSpec,
    pub init: InitSpec,
    pub seed: u64,
    /// Keep a snapshot every this many steps (plus `t = 0` and `t = horizon`).
    pub snapshot_every: usize,
    /// Fraction of snapshots excluded from monotonicity and rate fits.
    pub burn_in: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_ref: 2000,
            d: 1,
            dt: 0.01,
            horizon: 5.0,
            lambda: 0.5,
            kernel: KernelSpec::Rbf(Bandwidth::Fixed(1.0)),
            target: TargetSpec::Gauss(None),
            init: InitSpec::Normal {
                mean: 0.0,
                std: 2.0,
            },
            seed: 0,
            snapshot_every: 10,
            burn_in: 0.1,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowFile {
    #[serde(default)]
    flow: FlowConfig,
}

impl FlowConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str::<FlowFile>(text)
            .map(|f| f.flow)
            .map_err(|e| Error::Parse {
                what: "flow config",
                input: "<toml>".into(),
                reason: e.to_string(),
            })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { what, reason, .. } => Error::Parse {
                what,
                input: path.display().to_string(),
                reason,
            },
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(&FlowFile { flow: self.clone() }).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of steps; `horizon` must be a whole number of `dt`.
    pub fn steps(&self) -> Result<u64> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let k = (self.horizon / self.dt).round();
        if (k * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Config(format!(
                "horizon {} is not a multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(k as u64)
    }
}

#[derive(Debug, Clone)]
pub struct FlowSnapshot {
    pub t: f64,
    pub ensemble: Ensemble,
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub snapshots: Vec<FlowSnapshot>,
    /// Always contains `constant-step` and `assumption-1-violated`.
    pub flags: Vec<String>,
    /// Gradient Lipschitz estimate used for the step-size precondition.
    pub lipschitz: f64,
}

/// Euler–Maruyama simulation of the mean-field flow with `n_ref` particles.
pub fn mv_reference_flow(config: &FlowConfig) -> Result<Flow> {
    if config.n_ref == 0 || config.d == 0 {
        return Err(Error::Config("n_ref and d must be positive".into()));
    }
    if !(config.lambda.is_finite() && config.lambda >= 0.0) {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    if !(0.0..1.0).contains(&config.burn_in) {
        return Err(Error::Config(format!(
            "burn_in must lie in [0, 1), got {}",
            config.burn_in
        )));
    }
    let steps = config.steps()?;
    let target = config.target.build(config.d)?;
    let lipschitz = gradient_lipschitz_probe(target.as_ref(), 256, 10.0, config.seed);
    if config.dt * lipschitz >= MAX_DT_LIPSCHITZ {
        return Err(Error::Config(format!(
            "dt·L = {} must stay below {MAX_DT_LIPSCHITZ} (probed L = {lipschitz})",
            config.dt * lipschitz
        )));
    }
    let mut flags = vec![
        "constant-step".to_string(),
        "assumption-1-violated".to_string(),
    ];
    if config.n_ref < RECOMMENDED_N_REF {
        flags.push("n-ref-below-recommended".into());
    }

    let stream = RngStream::new(config.seed);
    let every = config.snapshot_every.max(1) as u64;
    let mut ens = initial_ensemble(
        &config.init,
        config.n_ref,
        config.d,
        target.as_ref(),
        &stream,
    )?;
    let mut snapshots = vec![FlowSnapshot {
        t: 0.0,
        ensemble: ens.clone(),
    }];
    for k in 1..=steps {
        let kernel = config.kernel.resolve(&ens)?;
        ens = noisy_svgd_step(
            &ens,
            &kernel,
            target.as_ref(),
            config.dt,
            config.lambda,
            &stream,
        )?;
        if k % every == 0 || k == steps {
            snapshots.push(FlowSnapshot {
                t: k as f64 * config.dt,
                ensemble: ens.clone(),
            });
        }
    }
    Ok(Flow {
        snapshots,
        flags,
        lipschitz,
    })
}

/// Monte Carlo noise level of the proxy KL for `n` exact samples.
///
/// The fitted mean and covariance carry `p = d(d+3)/2` free parameters, so
/// the proxy KL is close to `χ²_p / (2n)`; this returns its mean plus three
/// standard deviations, `(p + 3√(2p)) / (2n)`.
pub fn proxy_kl_noise_level(d: usize, n: usize) -> f64 {
    let p = (d * (d + 3)) as f64 / 2.0;
    (p + 3.0 * (2.0 * p).sqrt()) / (2.0 * n as f64)
}

/// Diagnostics of one flow snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub t: f64,
    pub damv: f64,
    pub proxy_kl: f64,
    pub proxy_fisher: f64,
    pub ksd_squared: f64,
}

/// Proxy KL/Fisher and V-statistic KSD² along the flow.
pub fn flow_diagnostics(
    flow: &Flow,
    target: &dyn Target,
    kernel: &KernelSpec,
) -> Result<Vec<FlowRow>> {
    if target.analytic_moments().is_none() {
        return Err(Error::NoAnalyticMoments);
    }
    flow.snapshots
        .iter()
        .map(|s| {
            let pool = WeightedPool::from_ensemble(&s.ensemble);
            let proxy = gaussian_proxy_kl(&pool, target)?;
            let k = kernel.resolve(&s.ensemble)?;
            let ksd = ksd_squared_pool(&pool, target, &k, KsdEstimator::V)?;
            let spread = if s.ensemble.n() >= 2 {
                damv(s.ensemble.positions(), s.ensemble.d())?
            } else {
                0.0
            };
            Ok(FlowRow {
                t: s.t,
                damv: spread,
                proxy_kl: proxy.kl,
                proxy_fisher: proxy.fisher,
                ksd_squared: ksd,
            })
        })
        .collect()
}

fn burn_in_index(len: usize, burn_in: f64) -> usize {
    ((len as f64) * burn_in).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub rows: Vec<FlowRow>,
    pub lambda: f64,
    /// First snapshot index used for monotonicity.
    pub burn_in_index: usize,
    /// Consecutive increases of `proxy_kl` after burn-in by more than `noise_level`.
    pub violations: usize,
    pub comparisons: usize,
    /// `proxy_kl(0) − proxy_kl(T)`.
    pub decrement: f64,
    /// Trapezoid `∫₀ᵀ (KSD² + λ·proxy_fisher) dt`.
    pub integral: f64,
    /// `decrement / integral`; infinite or NaN if the integral vanishes.
    pub ratio: f64,
    /// [`proxy_kl_noise_level`] of the flow's particle count.
    pub noise_level: f64,
    /// Whether `proxy_kl` stays below three times the noise level throughout.
    pub stationary: bool,
}

impl LyapunovReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.comparisons == 0 {
            0.0
        } else {
            self.violations as f64 / self.comparisons as f64
        }
    }

    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.stationary {
            f.push("stationary within noise");
        }
        f
    }
}

/// Checks that the proxy KL decreases along the flow at the rate
/// `KSD² + λ·Fisher`.
pub fn lyapunov_check(
    flow: &Flow,
    target: &dyn Target,
    kernel: &KernelSpec,
    lambda: f64,
    burn_in: f64,
) -> Result<LyapunovReport> {
    if flow.snapshots.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: flow.snapshots.len(),
        });
    }
    let rows = flow_diagnostics(flow, target, kernel)?;
    let first = &flow.snapshots[0].ensemble;
    let b = burn_in_index(rows.len(), burn_in).min(rows.len() - 1);
    let post = &rows[b..];
    let noise_level = proxy_kl_noise_level(first.d(), first.n());
    let violations = post
        .windows(2)
        .filter(|w| w[1].proxy_kl > w[0].proxy_kl + noise_level)
        .count();
    let integral = rows
        .windows(2)
        .map(|w| {
            let f0 = w[0].ksd_squared + lambda * w[0].proxy_fisher;
            let f1 = w[1].ksd_squared + lambda * w[1].proxy_fisher;
            0.5 * (f0 + f1) * (w[1].t - w[0].t)
        })
        .sum::<f64>();
    let decrement = rows[0].proxy_kl - rows[rows.len() - 1].proxy_kl;
    let stationary = rows.iter().all(|r| r.proxy_kl <= 3.0 * noise_level);
    Ok(LyapunovReport {
        burn_in_index: b,
        violations,
        comparisons: post.len().saturating_sub(1),
        decrement,
        integral,
        ratio: decrement / integral,
        noise_level,
        stationary,
        lambda,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `−slope` of the least-squares fit of `ln proxy_kl` against `t`.
    pub fitted_rate: f64,
    /// `2αλ`.
    pub bound: f64,
    pub window: (f64, f64),
    pub points: usize,
    /// Values below this are treated as sampling noise and excluded.
    pub floor: f64,
    pub note: Option<&'static str>,
}

/// Fits an exponential decay rate to the proxy KL on the post-burn-in
/// window that ends before the KL reaches three times its noise level.
pub fn contraction_check(
    rows: &[FlowRow],
    alpha: f64,
    lambda: f64,
    burn_in: f64,
    d: usize,
    n: usize,
) -> Result<ContractionReport> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "log-Sobolev constant must be positive, got {alpha}"
        )));
    }
    let floor = 3.0 * proxy_kl_noise_level(d, n);
    let b = burn_in_index(rows.len(), burn_in);
    let window: Vec<&FlowRow> = rows
        .iter()
        .skip(b)
        .take_while(|r| r.proxy_kl > floor)
        .collect();
    if window.len() < 3 {
        return Err(Error::Check(format!(
            "converged too fast: only {} post-burn-in snapshots above the noise floor {floor:e}",
            window.len()
        )));
    }
    let m = window.len() as f64;
    let tm = window.iter().map(|r| r.t).sum::<f64>() / m;
    let ym = window.iter().map(|r| r.proxy_kl.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in &window {
        sxy += (r.t - tm) * (r.proxy_kl.ln() - ym);
        sxx += (r.t - tm) * (r.t - tm);
    }
    Ok(ContractionReport {
        fitted_rate: -sxy / sxx,
        bound: 2.0 * alpha * lambda,
        window: (window[0].t, window[window.len() - 1].t),
        points: window.len(),
        floor,
        note: (lambda == 0.0).then_some("bound vacuous at λ=0"),
    })
}

pub const LYAPUNOV_HEADER: &str = "t,damv,proxy_kl,proxy_fisher,ksd_squared,integrand";

pub fn write_lyapunov_csv<W: Write>(mut out: W, report: &LyapunovReport) -> Result<()> {
    writeln!(out, "{LYAPUNOV_HEADER}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.damv),
            fmt_f64(r.proxy_kl),
            fmt_f64(r.proxy_fisher),
            fmt_f64(r.ksd_squared),
            fmt_f64(r.ksd_squared + report.lambda * r.proxy_fisher)
        )?;
    }
    Ok(())
}

/// Human-readable summary of both checks.
pub fn summary(
    flow: &Flow,
    lyap: &LyapunovReport,
    contraction: &Result<ContractionReport>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "flags: {}", flow.flags.join(", "));
    let _ = writeln!(s, "lipschitz probe: {:.6}", flow.lipschitz);
    let _ = writeln!(s, "snapshots: {}", lyap.rows.len());
    let _ = writeln!(
        s,
        "monotonicity: {} increases beyond noise in {} comparisons after burn-in ({:.2}%)",
        lyap.violations,
        lyap.comparisons,
        100.0 * lyap.violation_fraction()
    );
    let _ = writeln!(s, "kl decrement: {:.6e}", lyap.decrement);
    let _ = writeln!(s, "integrated ksd^2 + lambda*fisher: {:.6e}", lyap.integral);
    let _ = writeln!(s, "ratio: {:.4}", lyap.ratio);
    let _ = writeln!(s, "noise level: {:.6e}", lyap.noise_level);
    for f in lyap.flags() {
        let _ = writeln!(s, "{f}");
    }
    match contraction {
        Ok(c) => {
            let _ = writeln!(
                s,
                "fitted kl rate: {:.4} over t in [{:.3}, {:.3}] ({} points)",
                c.fitted_rate, c.window.0, c.window.1, c.points
            );
            let _ = writeln!(s, "reference 2*alpha*lambda: {:.4}", c.bound);
            if let Some(note) = c.note {
                let _ = writeln!(s, "{note}");
            }
        }
        Err(e) => {
            let _ = writeln!(s, "contraction: {e}");
        }
    }
    let _ = writeln!(
        s,
        "note: KL and Fisher use a Gaussian fit, exact only while the particle law stays Gaussian"
    );
    s
}
