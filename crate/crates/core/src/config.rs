//! Run configuration, its TOML representation and validation.
//!
//! A config file is flat TOML; every key can also be overridden with a
//! `key=value` string (the value is parsed as a TOML literal, falling back
//! to a bare string). See the README for the full key list.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::contracts::{check_kernel, check_target_gradient, dissipativity_radius};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::schedule::StepSchedule;
use crate::notation::{parse_call, parse_f64};
use crate::targets::TargetSpec;

/// How initial particles are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitSpec {
    /// i.i.d. `N(0, I)`.
    StdNormal,
    /// i.i.d. `N(mean·1, std²·I)`.
    Normal { mean: f64, std: f64 },
    /// Exact draws from the target.
    Target,
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::StdNormal => write!(f, "std_normal"),
            InitSpec::Normal { mean, std } => write!(f, "normal({mean},{std})"),
            InitSpec::Target => write!(f, "target"),
        }
    }
}

impl FromStr for InitSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: "init",
            input: s.to_string(),
            reason: reason.into(),
        };
        let (name, args) = parse_call(s).ok_or_else(|| err("expected name(args)"))?;
        match (name, args.as_slice()) {
            ("std_normal", []) => Ok(InitSpec::StdNormal),
            ("target", []) => Ok(InitSpec::Target),
            ("normal", [m, sd]) => {
                let mean = parse_f64(m).ok_or_else(|| err("mean is not a number"))?;
                let std = parse_f64(sd).ok_or_else(|| err("std is not a number"))?;
                if std <= 0.0 {
                    return Err(err("std must be positive"));
                }
                Ok(InitSpec::Normal { mean, std })
            }
            _ => Err(err("expected std_normal, normal(mean,std) or target")),
        }
    }
}

/// Which snapshots a trajectory keeps. The final ensemble is always kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Retention {
    All,
    /// Iterations divisible by `m`, plus the first and last.
    Every(u64),
    /// Uniform reservoir sample of at most `capacity` snapshots.
    Reservoir(usize),
    /// `Every(m)` with the smallest `m` keeping at most [`AUTO_POOL_POINTS`] points.
    Auto,
}

/// Point budget for [`Retention::Auto`].
pub const AUTO_POOL_POINTS: u64 = 1_000_000;

impl Retention {
    /// Resolves `Auto` for a run of `iterations` steps with `n` particles.
    pub fn resolve(self, iterations: u64, n: usize) -> Retention {
        match self {
            Retention::Auto => {
                let total = (iterations + 1) * n as u64;
                Retention::Every(total.div_ceil(AUTO_POOL_POINTS).max(1))
            }
            other => other,
        }
    }
}

impl fmt::Display for Retention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Retention::All => write!(f, "all"),
            Retention::Every(m) => write!(f, "every({m})"),
            Retention::Reservoir(c) => write!(f, "reservoir({c})"),
            Retention::Auto => write!(f, "auto"),
        }
    }
}

impl FromStr for Retention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: "retention",
            input: s.to_string(),
            reason: reason.into(),
        };
        let (name, args) = parse_call(s).ok_or_else(|| err("expected name(args)"))?;
        match (name, args.as_slice()) {
            ("all", []) => Ok(Retention::All),
            ("auto", []) => Ok(Retention::Auto),
            ("every", [m]) => match m.parse::<u64>() {
                Ok(m) if m > 0 => Ok(Retention::Every(m)),
                _ => Err(err("every(m) needs a positive integer")),
            },
            ("reservoir", [c]) => match c.parse::<usize>() {
                Ok(c) if c >= 2 => Ok(Retention::Reservoir(c)),
                _ => Err(err("reservoir(c) needs an integer capacity >= 2")),
            },
            _ => Err(err("expected all, auto, every(m) or reservoir(capacity)")),
        }
    }
}

macro_rules! string_serde {
    ($($t:ty),*) => {$(
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    )*};
}
string_serde!(InitSpec, Retention);

/// Everything needed to reproduce one sampler run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub target: TargetSpec,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub seed: u64,
    pub init: InitSpec,
    /// Record a metric row every this many iterations (plus the first and last).
    pub metric_every: u64,
    pub retention: Retention,
    /// Compute the V-statistic KSD² in each metric row.
    pub ksd: bool,
    /// Compute the Gaussian-proxy KL and Fisher terms when the target has analytic moments.
    pub proxy: bool,
    /// Target sample count for W2-to-target; 0 disables it.
    pub w2_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 100,
            d: 2,
            lambda: 0.1,
            kernel: KernelSpec::Rbf(crate::kernels::Bandwidth::Fixed(1.0)),
            target: TargetSpec::Gauss(None),
            schedule: StepSchedule::Harmonic { a: 10.0 },
            iterations: 200,
            seed: 0,
            init: InitSpec::StdNormal,
            metric_every: 10,
            retention: Retention::Auto,
            ksd: true,
            proxy: true,
            w2_samples: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "run config",
            input: "<toml>".into(),
            reason: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            what: "run config",
            input: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Fails only for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        apply_overrides(self, overrides)
    }
}

/// Applies `key=value` overrides to any TOML-backed config struct.
pub fn apply_overrides<T, S>(config: T, overrides: &[S]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    S: AsRef<str>,
{
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut table = toml::Table::try_from(&config).map_err(|e| Error::Config(e.to_string()))?;
    for ov in overrides {
        let ov = ov.as_ref();
        let (key, raw) = ov.split_once('=').ok_or_else(|| Error::Parse {
            what: "override",
            input: ov.into(),
            reason: "expected key=value".into(),
        })?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        // string-typed keys (kernel specs etc.) must stay strings even if they look numeric
        let value = match (table.get(key), value) {
            (Some(toml::Value::String(_)), v) if !v.is_str() => {
                toml::Value::String(raw.to_string())
            }
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

/// Outcome of checking one sampler requirement.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    /// Holds by construction.
    Analytic,
    /// Passed a finite-difference or probe-set check.
    Verified,
    Violated,
    NotChecked,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Analytic => "analytic",
            CheckStatus::Verified => "verified",
            CheckStatus::Violated => "violated",
            CheckStatus::NotChecked => "not-checked",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

/// A config that passed validation, annotated with which requirements hold.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: RunConfig,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidatedConfig {
    pub fn flags(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Violated)
            .map(|c| format!("{}-violated", c.name))
            .collect()
    }

    pub fn status(&self, name: &str) -> Option<&CheckStatus> {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.status)
    }
}

const PROBES: usize = 32;
const PROBE_RADIUS: f64 = 3.0;
/// Probe-set bound on `|K|`, `‖∇₂K‖` and the kernel Lipschitz ratio.
pub const KERNEL_BOUND: f64 = 10.0;

pub fn validate_config(config: RunConfig) -> Result<ValidatedConfig> {
    if config.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    if config.d == 0 {
        return Err(Error::Config("d must be positive".into()));
    }
    if !(config.lambda.is_finite() && config.lambda >= 0.0) {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    if config.metric_every == 0 {
        return Err(Error::Config("metric_every must be positive".into()));
    }
    if let Some(td) = config.target.declared_dim() {
        if td != config.d {
            return Err(Error::Config(format!(
                "dimension mismatch: target {} has dimension {td}, init draws in d = {}",
                config.target, config.d
            )));
        }
    }
    let target = config.target.build(config.d)?;
    if target.dim() != config.d {
        return Err(Error::Config(format!(
            "dimension mismatch: target has dimension {}, init draws in d = {}",
            target.dim(),
            config.d
        )));
    }

    let mut checks = Vec::new();
    let (status, detail) = if config.schedule.satisfies_decay_conditions() {
        (
            CheckStatus::Analytic,
            format!("{}: steps vanish and sum to infinity", config.schedule),
        )
    } else {
        (
            CheckStatus::Violated,
            format!("{}: steps do not vanish", config.schedule),
        )
    };
    checks.push(AssumptionCheck {
        name: "assumption-1",
        status,
        detail,
    });

    let grad = check_target_gradient(target.as_ref(), PROBES, PROBE_RADIUS, config.seed);
    checks.push(AssumptionCheck {
        name: "target-gradient",
        status: if grad.passed() {
            CheckStatus::Verified
        } else {
            CheckStatus::Violated
        },
        detail: format!(
            "max relative finite-difference error {:.3e}",
            grad.max_rel_error
        ),
    });

    let diss = dissipativity_radius(
        target.as_ref(),
        0.5 * target.lsi_constant().unwrap_or(0.0),
        1.0,
        PROBES,
        2.0 * PROBE_RADIUS,
        config.seed,
    );
    checks.push(match target.lsi_constant() {
        Some(_) if diss == 0.0 => AssumptionCheck {
            name: "dissipativity",
            status: CheckStatus::Verified,
            detail: "holds on probe set".into(),
        },
        Some(_) => AssumptionCheck {
            name: "dissipativity",
            status: CheckStatus::Violated,
            detail: format!("fails inside radius {diss:.3}"),
        },
        None => AssumptionCheck {
            name: "dissipativity",
            status: CheckStatus::NotChecked,
            detail: "no growth constant known for this target".into(),
        },
    });

    match config.kernel.fixed() {
        Some(k) => {
            let kr = check_kernel(&k, config.d, PROBES, PROBE_RADIUS, config.seed);
            checks.push(AssumptionCheck {
                name: "kernel-regularity",
                status: if kr.passed(KERNEL_BOUND) {
                    CheckStatus::Verified
                } else {
                    CheckStatus::Violated
                },
                detail: format!(
                    "grad2 err {:.1e}, mixed err {:.1e}, sup|K| {:.3}, sup|grad2 K| {:.3}",
                    kr.max_grad2_rel_error, kr.max_mixed_rel_error, kr.sup_value, kr.sup_grad
                ),
            });
        }
        None => checks.push(AssumptionCheck {
            name: "kernel-regularity",
            status: CheckStatus::NotChecked,
            detail: "bandwidth depends on the particles".into(),
        }),
    }

    checks.push(AssumptionCheck {
        name: "init-moments",
        status: CheckStatus::Analytic,
        detail: format!("{} has finite fourth moment", config.init),
    });

    Ok(ValidatedConfig { config, checks })
}
