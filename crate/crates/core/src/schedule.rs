use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notation::{parse_call, parse_f64};

/// Deterministic step-size sequence `γ_k`, `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StepSchedule {
    /// `γ_k = a / k`.
    Harmonic { a: f64 },
    /// `γ_k = min(γ_max, a / k)`.
    CappedHarmonic { a: f64, max: f64 },
    /// `γ_k = γ`. Does not vanish, so the decaying-step requirement fails.
    Constant { gamma: f64 },
}

impl StepSchedule {
    pub fn harmonic(a: f64) -> Result<Self> {
        positive("harmonic coefficient", a)?;
        Ok(Self::Harmonic { a })
    }

    pub fn capped_harmonic(a: f64, max: f64) -> Result<Self> {
        positive("harmonic coefficient", a)?;
        positive("step cap", max)?;
        Ok(Self::CappedHarmonic { a, max })
    }

    pub fn constant(gamma: f64) -> Result<Self> {
        positive("constant step", gamma)?;
        Ok(Self::Constant { gamma })
    }

    /// Step size for iteration `k` (1-based).
    pub fn gamma(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        let k = k as f64;
        match *self {
            Self::Harmonic { a } => a / k,
            Self::CappedHarmonic { a, max } => (a / k).min(max),
            Self::Constant { gamma } => gamma,
        }
    }

    /// Whether `γ_k → 0` and `Σγ_k = ∞` both hold.
    pub fn satisfies_decay_conditions(&self) -> bool {
        !matches!(self, Self::Constant { .. })
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} must be positive and finite, got {v}"
        )))
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Harmonic { a } => write!(f, "harmonic({a})"),
            Self::CappedHarmonic { a, max } => write!(f, "capped({a},{max})"),
            Self::Constant { gamma } => write!(f, "constant({gamma})"),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: "step schedule",
            input: s.to_string(),
            reason: reason.into(),
        };
        let (name, args) = parse_call(s).ok_or_else(|| err("expected name(args)"))?;
        let nums = args
            .iter()
            .map(|a| parse_f64(a))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err("non-numeric argument"))?;
        match (name, nums.as_slice()) {
            ("harmonic", [a]) => Self::harmonic(*a),
            ("capped", [a, m]) | ("capped_harmonic", [a, m]) => Self::capped_harmonic(*a, *m),
            ("constant", [g]) => Self::constant(*g),
            _ => Err(err(
                "expected harmonic(a), capped(a,max) or constant(gamma)",
            )),
        }
    }
}

impl TryFrom<String> for StepSchedule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StepSchedule> for String {
    fn from(s: StepSchedule) -> String {
        s.to_string()
    }
}
