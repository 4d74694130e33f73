//! Gaussian priors, the Gibbs posterior log-density, Gaussian KL, and the
//! temperature and architecture schedules used by the rate experiments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, NetworkArchitecture};

/// Independent `N(0, variance)` coordinates, optionally truncated to `[-B, B]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    variance: f64,
    truncation: Option<f64>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            variance: 1.0,
            truncation: None,
        }
    }
}

impl PriorSpec {
    pub fn new(variance: f64, truncation: Option<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "prior variance must be positive, got {variance}"
            )));
        }
        if let Some(b) = truncation {
            if !(b >= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "prior truncation B must be >= 1, got {b}"
                )));
            }
        }
        Ok(Self { variance, truncation })
    }

    pub fn standard() -> Self {
        Self::default()
    }

    pub fn truncated(variance: f64, bound_b: f64) -> Result<Self> {
        Self::new(variance, Some(bound_b))
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    /// Coefficient bound implied by the prior: `B` or infinity.
    pub fn bound(&self) -> f64 {
        self.truncation.unwrap_or(f64::INFINITY)
    }

    /// Sum of per-coordinate Gaussian log-densities.
    ///
    /// For a truncated prior the normalizing constant of the truncation is
    /// omitted. It does not depend on `theta`, so Metropolis-Hastings ratios
    /// are unaffected. A coordinate outside `[-B, B]` yields `-inf`.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if let Some(b) = self.truncation {
            if theta.iter().any(|v| !(v.abs() <= b)) {
                return f64::NEG_INFINITY;
            }
        }
        let sq: f64 = theta.iter().map(|v| v * v).sum();
        -0.5 * theta.len() as f64 * (2.0 * PI * self.variance).ln() - 0.5 * sq / self.variance
    }

    /// Adds the gradient of [`PriorSpec::log_density`] into `grad`.
    pub fn add_log_density_grad(&self, theta: &[f64], grad: &mut [f64]) {
        for (g, v) in grad.iter_mut().zip(theta) {
            *g -= v / self.variance;
        }
    }

    /// One prior draw of dimension `dim`; truncation by rejection per coordinate.
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        let normal = Normal::new(0.0, self.variance.sqrt()).expect("valid normal");
        (0..dim)
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                match self.truncation {
                    Some(b) if v.abs() > b => continue,
                    _ => break v,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
        }
    }
}

/// Temperature, prior and loss defining `rho(theta) ∝ exp(-lambda r_n(theta)) pi(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    lambda: f64,
    prior: PriorSpec,
    loss: LossKind,
}

impl GibbsConfig {
    /// `lambda = 0` is accepted and reduces the posterior to the prior.
    pub fn new(lambda: f64, prior: PriorSpec, loss: LossKind) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature lambda must be a finite nonnegative number, got {lambda}"
            )));
        }
        Ok(Self { lambda, prior, loss })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// `-lambda * r_n + log pi(theta)`.
    pub fn log_gibbs_unnormalized(&self, empirical_risk: f64, theta: &[f64]) -> f64 {
        debug_assert!(empirical_risk.is_finite());
        let lp = self.prior.log_density(theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        if self.lambda == 0.0 {
            return lp;
        }
        lp - self.lambda * empirical_risk
    }
}

/// `KL(N(mean, diag(sd^2)) || prior)` for an untruncated Gaussian prior.
pub fn kl_gaussian_to_prior(mean: &[f64], sd: &[f64], prior: &PriorSpec) -> Result<f64> {
    if prior.truncation.is_some() {
        return Err(Error::Unsupported(
            "closed-form KL against a truncated prior; use bounds::kl_numeric".into(),
        ));
    }
    if mean.len() != sd.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            actual: sd.len(),
            context: "mean and sd lengths",
        });
    }
    if let Some(s) = sd.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidParameter(format!("standard deviations must be positive, got {s}")));
    }
    let v = prior.variance;
    Ok(mean
        .iter()
        .zip(sd)
        .map(|(m, s)| 0.5 * ((s * s + m * m) / v - 1.0 - (s * s / v).ln()))
        .sum())
}

/// `lambda = n / C*` with `C* = 16 [C^2 + sigma^2 + C max(varsigma, 2C)]`.
pub fn lambda_regression(n: usize, clamp_c: f64, sigma: f64, varsigma: f64) -> f64 {
    let c_star = 16.0 * (clamp_c * clamp_c + sigma * sigma + clamp_c * varsigma.max(2.0 * clamp_c));
    n as f64 / c_star
}

/// `lambda = n / max(2K, C)`.
pub fn lambda_classification(n: usize, bernstein_k: f64, clamp_c: f64) -> f64 {
    n as f64 / (2.0 * bernstein_k).max(clamp_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleId {
    /// `L ~ log n`, `D ~ n^{d / (2(2 beta + d))}`.
    RegLanger,
    /// `L, D ~ (n / log n)^{d / (4(2 beta + d))}`.
    RegTienmt,
    /// `L, D ~ (n / log n)^{d / (4(beta + d))}`.
    ClsEntropy,
    /// `L, D ~ (n / log n)^{(beta + d) / (4(2 beta + d))}`.
    ClsMisclass,
}

impl ScheduleId {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleId::RegLanger => "reg_langer",
            ScheduleId::RegTienmt => "reg_tienmt",
            ScheduleId::ClsEntropy => "cls_entropy",
            ScheduleId::ClsMisclass => "cls_misclass",
        }
    }
}

impl fmt::Display for ScheduleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg_langer" => Ok(ScheduleId::RegLanger),
            "reg_tienmt" => Ok(ScheduleId::RegTienmt),
            "cls_entropy" => Ok(ScheduleId::ClsEntropy),
            "cls_misclass" => Ok(ScheduleId::ClsMisclass),
            _ => Err(Error::InvalidParameter(format!("unknown schedule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSchedule {
    pub schedule_id: ScheduleId,
    pub proportionality_constant: f64,
}

impl ArchitectureSchedule {
    pub fn new(schedule_id: ScheduleId, proportionality_constant: f64) -> Result<Self> {
        if !(proportionality_constant > 0.0 && proportionality_constant.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "proportionality constant must be positive, got {proportionality_constant}"
            )));
        }
        Ok(Self {
            schedule_id,
            proportionality_constant,
        })
    }

    /// Unrounded `(L, D)` before the constant, ceiling and floors are applied.
    pub fn raw_sizes(&self, n: usize, d: usize, beta: f64) -> (f64, f64) {
        let nf = n as f64;
        let df = d as f64;
        let ratio = nf / nf.ln();
        match self.schedule_id {
            ScheduleId::RegLanger => (nf.ln(), nf.powf(df / (2.0 * (2.0 * beta + df)))),
            ScheduleId::RegTienmt => {
                let v = ratio.powf(df / (4.0 * (2.0 * beta + df)));
                (v, v)
            }
            ScheduleId::ClsEntropy => {
                let v = ratio.powf(df / (4.0 * (beta + df)));
                (v, v)
            }
            ScheduleId::ClsMisclass => {
                let v = ratio.powf((beta + df) / (4.0 * (2.0 * beta + df)));
                (v, v)
            }
        }
    }

    /// `L = max(3, ceil(c * expr_L))`, `D = max(d, ceil(c * expr_D))`, natural logs.
    pub fn architecture(&self, n: usize, d: usize, beta: f64, activation: Activation) -> Result<NetworkArchitecture> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("schedules need n >= 3, got {n}")));
        }
        if !(beta > 0.0) || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "schedules need beta > 0 and d >= 1, got beta = {beta}, d = {d}"
            )));
        }
        let (l, w) = self.raw_sizes(n, d, beta);
        let c = self.proportionality_constant;
        let depth = ((c * l).ceil() as usize).max(3);
        let width = ((c * w).ceil() as usize).max(d);
        NetworkArchitecture::new(depth, width, d, activation)
    }
}
