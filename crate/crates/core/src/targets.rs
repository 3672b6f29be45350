//! Target distributions `π ∝ exp(−F)`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notation::{parse_call, parse_f64};

/// Mean and covariance of a Gaussian, covariance stored row-major `d×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl GaussianMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            cov[a * d + a] = var;
        }
        Self { mean, cov }
    }
}

/// A target known through its potential and gradient.
///
/// Implementors must keep `gradient` consistent with `potential`; the
/// finite-difference contract in [`crate::contracts`] checks this.
pub trait Target: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;

    /// `F(x)`, up to an additive constant.
    fn potential(&self, x: &[f64]) -> f64;

    /// Writes `∇F(x)` into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// Mean and covariance when the target is Gaussian.
    fn analytic_moments(&self) -> Option<GaussianMoments> {
        None
    }

    /// Log-Sobolev constant `α`, when known.
    fn lsi_constant(&self) -> Option<f64> {
        None
    }

    /// Draws one exact sample into `out`.
    fn sample(&self, _rng: &mut ChaCha8Rng, _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsampleable)
    }

    /// Canonical description, as accepted by [`TargetSpec`].
    fn describe(&self) -> String;
}

/// Centered Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    variances: Vec<f64>,
}

pub fn standard_gaussian(d: usize) -> Result<GaussianTarget> {
    if d == 0 {
        return Err(Error::InvalidParameter(
            "dimension must be at least 1".into(),
        ));
    }
    Ok(GaussianTarget {
        variances: vec![1.0; d],
    })
}

pub fn anisotropic_gaussian(variances: Vec<f64>) -> Result<GaussianTarget> {
    if variances.is_empty() {
        return Err(Error::InvalidParameter(
            "dimension must be at least 1".into(),
        ));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "variances must be positive, got {v}"
        )));
    }
    Ok(GaussianTarget { variances })
}

impl GaussianTarget {
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn is_standard(&self) -> bool {
        self.variances.iter().all(|v| *v == 1.0)
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.variances)
            .map(|(v, s)| v * v / s)
            .sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), s) in out.iter_mut().zip(x).zip(&self.variances) {
            *o = v / s;
        }
    }

    fn analytic_moments(&self) -> Option<GaussianMoments> {
        let d = self.dim();
        let mut cov = vec![0.0; d * d];
        for (a, v) in self.variances.iter().enumerate() {
            cov[a * d + a] = *v;
        }
        Some(GaussianMoments {
            mean: vec![0.0; d],
            cov,
        })
    }

    fn lsi_constant(&self) -> Option<f64> {
        Some(1.0 / self.variances.iter().copied().fold(0.0, f64::max))
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        for (o, s) in out.iter_mut().zip(&self.variances) {
            let z: f64 = rng.sample(StandardNormal);
            *o = z * s.sqrt();
        }
        Ok(())
    }

    fn describe(&self) -> String {
        if self.is_standard() {
            format!("gauss({})", self.dim())
        } else {
            let vs: Vec<String> = self.variances.iter().map(|v| v.to_string()).collect();
            format!("gauss_diag({})", vs.join(","))
        }
    }
}

/// Equal-variance isotropic Gaussian mixture.
///
/// The potential drops the common normalizing constant.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTarget {
    centers: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    sigma2: f64,
    source: Option<PathBuf>,
}

pub fn gaussian_mixture(
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    sigma2: f64,
) -> Result<MixtureTarget> {
    if centers.is_empty() {
        return Err(Error::InvalidParameter(
            "mixture needs at least one component".into(),
        ));
    }
    if centers.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: centers.len(),
            found: weights.len(),
        });
    }
    let d = centers[0].len();
    if d == 0 {
        return Err(Error::InvalidParameter(
            "dimension must be at least 1".into(),
        ));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: c.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParameter(
            "mixture weights must be positive".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "mixture weights must sum to 1, got {total}"
        )));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mixture variance must be positive, got {sigma2}"
        )));
    }
    Ok(MixtureTarget {
        log_weights: weights.iter().map(|w| w.ln()).collect(),
        centers,
        weights,
        sigma2,
        source: None,
    })
}

#[derive(Deserialize)]
struct MixtureFile {
    sigma2: f64,
    components: Vec<MixtureComponent>,
}

#[derive(Deserialize)]
struct MixtureComponent {
    weight: f64,
    center: Vec<f64>,
}

impl MixtureTarget {
    /// Reads a TOML file with `sigma2` and `[[components]]` tables holding `weight` and `center`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MixtureFile = toml::from_str(&text).map_err(|e| Error::Parse {
            what: "mixture file",
            input: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let (weights, centers) = file
            .components
            .into_iter()
            .map(|c| (c.weight, c.center))
            .unzip();
        let mut m = gaussian_mixture(centers, weights, file.sigma2)?;
        m.source = Some(path.to_path_buf());
        Ok(m)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Component log-densities up to the shared constant, and their log-sum-exp.
    fn log_terms(&self, x: &[f64], terms: &mut Vec<f64>) -> f64 {
        terms.clear();
        let inv = 0.5 / self.sigma2;
        for (c, lw) in self.centers.iter().zip(&self.log_weights) {
            let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            terms.push(lw - r2 * inv);
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }
}

impl Target for MixtureTarget {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let mut terms = Vec::with_capacity(self.centers.len());
        -self.log_terms(x, &mut terms)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut terms = Vec::with_capacity(self.centers.len());
        let lse = self.log_terms(x, &mut terms);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, t) in self.centers.iter().zip(&terms) {
            let r = (t - lse).exp() / self.sigma2;
            for ((o, a), b) in out.iter_mut().zip(x).zip(c) {
                *o += r * (a - b);
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = j;
                break;
            }
        }
        let s = self.sigma2.sqrt();
        for (o, c) in out.iter_mut().zip(&self.centers[idx]) {
            let z: f64 = rng.sample(StandardNormal);
            *o = c + s * z;
        }
        Ok(())
    }

    fn describe(&self) -> String {
        match &self.source {
            Some(p) => format!("mix({})", p.display()),
            None => format!("mix(<{} components>)", self.centers.len()),
        }
    }
}

/// Target as written in configuration files: `gauss(d)`, `gauss_diag(v1,...,vd)`, `mix(file)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TargetSpec {
    /// Standard Gaussian; without an explicit dimension it follows the run's `d`.
    Gauss(Option<usize>),
    GaussDiag(Vec<f64>),
    Mix(PathBuf),
}

impl TargetSpec {
    /// Builds the target; `d` is used only when the spec leaves the dimension open.
    pub fn build(&self, d: usize) -> Result<Box<dyn Target>> {
        Ok(match self {
            TargetSpec::Gauss(dim) => Box::new(standard_gaussian(dim.unwrap_or(d))?),
            TargetSpec::GaussDiag(v) => Box::new(anisotropic_gaussian(v.clone())?),
            TargetSpec::Mix(p) => Box::new(MixtureTarget::from_file(p)?),
        })
    }

    /// Dimension, when it can be read off the spec without touching the filesystem.
    pub fn declared_dim(&self) -> Option<usize> {
        match self {
            TargetSpec::Gauss(d) => *d,
            TargetSpec::GaussDiag(v) => Some(v.len()),
            TargetSpec::Mix(_) => None,
        }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Gauss(Some(d)) => write!(f, "gauss({d})"),
            TargetSpec::Gauss(None) => write!(f, "gauss"),
            TargetSpec::GaussDiag(v) => {
                let vs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "gauss_diag({})", vs.join(","))
            }
            TargetSpec::Mix(p) => write!(f, "mix({})", p.display()),
        }
    }
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: "target",
            input: s.to_string(),
            reason: reason.into(),
        };
        let trimmed = s.trim();
        if let Some(inner) = trimmed
            .strip_prefix("mix(")
            .and_then(|r| r.strip_suffix(')'))
        {
            if inner.trim().is_empty() {
                return Err(err("mix needs a file path"));
            }
            return Ok(TargetSpec::Mix(PathBuf::from(inner.trim())));
        }
        let (name, args) = parse_call(trimmed).ok_or_else(|| err("expected name(args)"))?;
        match (name, args.as_slice()) {
            ("gauss", []) => Ok(TargetSpec::Gauss(None)),
            ("gauss", [d]) => {
                let d: usize = d.parse().map_err(|_| err("dimension is not an integer"))?;
                if d == 0 {
                    return Err(err("dimension must be at least 1"));
                }
                Ok(TargetSpec::Gauss(Some(d)))
            }
            ("gauss_diag", vs) if !vs.is_empty() => {
                let v = vs
                    .iter()
                    .map(|a| parse_f64(a))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| err("non-numeric variance"))?;
                if v.iter().any(|x| *x <= 0.0) {
                    return Err(err("variances must be positive"));
                }
                Ok(TargetSpec::GaussDiag(v))
            }
            _ => Err(err("expected gauss(d), gauss_diag(v1,...,vd) or mix(file)")),
        }
    }
}

impl TryFrom<String> for TargetSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TargetSpec> for String {
    fn from(t: TargetSpec) -> String {
        t.to_string()
    }
}
