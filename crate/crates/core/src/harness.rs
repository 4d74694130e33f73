//! Rate experiments: single cells, replicated n-sweeps, and log-log rate fits.
//!
//! A cell is one `(n, replicate)` pair. Everything random inside it (data,
//! chains, the evaluation design) is derived from
//! `derive_seed(master_seed, [n, replicate])`, so cells can run in any order
//! or in parallel and a rerun reproduces every file byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{catoni_bound_value, CatoniBound, FactorizedGaussian};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, split_seed, Execution};
use crate::network::{Activation, ClampSpec, Network, ParameterVector};
use crate::prior::{lambda_classification, lambda_regression, ArchitectureSchedule, GibbsConfig, LossKind, PriorSpec, ScheduleId};
use crate::risk::{
    empirical_risk_unchecked, misclassification_excess, population_excess_risk_logistic, population_excess_risk_regression,
    RiskEstimate,
};
use crate::sampler::{sample_gibbs, ChainDiagnostics, SamplerConfig};
use crate::synthesis::{
    check_margin_condition, make_classification_dataset, make_regression_dataset, validate_sub_gamma, Dataset, MarginReport,
    NoiseModel, SubGammaReport, TargetFunction, TargetKind, Task,
};

/// Grid used when checking the margin condition of a classification target.
pub const MARGIN_H_GRID: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTask {
    /// Squared loss, excess `||f - f0||^2`.
    Regression,
    /// Logistic loss, excess logistic risk.
    ClsEntropy,
    /// Logistic-loss posterior, excess 0-1 risk.
    ClsMisclass,
}

impl SweepTask {
    pub fn name(self) -> &'static str {
        match self {
            SweepTask::Regression => "regression",
            SweepTask::ClsEntropy => "cls_entropy",
            SweepTask::ClsMisclass => "cls_misclass",
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            SweepTask::Regression => LossKind::Squared,
            _ => LossKind::Logistic,
        }
    }

    pub fn data_task(self) -> Task {
        match self {
            SweepTask::Regression => Task::Regression,
            _ => Task::Classification,
        }
    }

    pub fn default_schedule(self) -> ScheduleId {
        match self {
            SweepTask::Regression => ScheduleId::RegTienmt,
            SweepTask::ClsEntropy => ScheduleId::ClsEntropy,
            SweepTask::ClsMisclass => ScheduleId::ClsMisclass,
        }
    }

    /// Rate exponent the theory predicts for excess risk against `n`.
    pub fn theory_exponent(self, beta: f64, d: usize) -> f64 {
        let d = d as f64;
        match self {
            SweepTask::Regression => -2.0 * beta / (2.0 * beta + d),
            SweepTask::ClsEntropy => -beta / (beta + d),
            SweepTask::ClsMisclass => -beta / (2.0 * beta + d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// `n / C*` for regression, `n / max(2K, C)` for classification.
    #[default]
    TheoremFormula,
    Manual(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogCorrection {
    #[default]
    None,
    /// Divide risks by `(log n)^p` before fitting.
    LognPow(f64),
    /// Regress on `log(n / log n)`, for rates of the form `(log n / n)^a`.
    LognOverNForm,
}

/// Which excess risk a cell reports as its headline number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcessMetric {
    /// `E_{theta ~ rho}[R(theta)] - R(f0)`.
    #[default]
    PosteriorAveraged,
    /// Excess risk of the aggregated predictor (posterior mean, or the
    /// sign of the posterior-mean logit for 0-1 loss).
    Aggregate,
}

fn default_one() -> f64 {
    1.0
}
fn default_d() -> usize {
    1
}
fn default_replicates() -> usize {
    10
}
fn default_target() -> TargetKind {
    TargetKind::SineMix { scale: 0.8 }
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_bernstein_k() -> f64 {
    4.0
}
fn default_mc_n() -> usize {
    10_000
}
fn default_risk_draws() -> usize {
    200
}
fn default_delta() -> f64 {
    0.05
}

/// Everything needed to run a sweep or a single cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub task: SweepTask,
    /// Defaults to the task's own schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleId>,
    #[serde(default = "default_one")]
    pub proportionality_constant: f64,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_one")]
    pub beta: f64,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_target")]
    pub target: TargetKind,
    /// Regression only; defaults to `gaussian(1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub lambda_policy: LambdaPolicy,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_one")]
    pub clamp_c: f64,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_bernstein_k")]
    pub bernstein_k: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Design points for Monte Carlo population risks.
    #[serde(default = "default_mc_n")]
    pub mc_n: usize,
    /// Posterior draws (evenly spaced over the pooled chains) used for population risks.
    #[serde(default = "default_risk_draws")]
    pub risk_draws: usize,
    #[serde(default)]
    pub metric: ExcessMetric,
    #[serde(default)]
    pub log_correction: LogCorrection,
    /// Declared margin constant; classification sweeps check it up front.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_c: Option<f64>,
    /// Sample size for single-run commands; defaults to the first grid value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Confidence level for PAC-Bayes bound evaluation.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl SweepPlan {
    /// A plan with every optional field at its default.
    pub fn new(task: SweepTask, n_grid: Vec<usize>) -> Self {
        Self {
            task,
            schedule: None,
            proportionality_constant: 1.0,
            n_grid,
            replicates: default_replicates(),
            beta: 1.0,
            d: 1,
            target: default_target(),
            noise: None,
            lambda_policy: LambdaPolicy::default(),
            activation: default_activation(),
            clamp_c: 1.0,
            prior: PriorSpec::default(),
            bernstein_k: default_bernstein_k(),
            sampler: SamplerConfig::default(),
            mc_n: default_mc_n(),
            risk_draws: default_risk_draws(),
            metric: ExcessMetric::default(),
            log_correction: LogCorrection::default(),
            margin_c: None,
            n: None,
            delta: default_delta(),
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_grid.is_empty() {
            return bad("n_grid must not be empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid must be strictly increasing, got {:?}", self.n_grid));
        }
        if self.n_grid[0] < 3 || self.n.is_some_and(|n| n < 3) {
            return bad("sample sizes must be at least 3".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        ArchitectureSchedule::new(self.schedule_id(), self.proportionality_constant)?;
        ClampSpec::new(self.clamp_c)?;
        PriorSpec::new(self.prior.variance(), self.prior.truncation())?;
        self.target_function()?;
        self.sampler.validate()?;
        if let LambdaPolicy::Manual(l) = self.lambda_policy {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("manual lambda must be finite and nonnegative, got {l}"));
            }
        }
        if !(self.bernstein_k > 0.0) {
            return bad(format!("bernstein_k must be positive, got {}", self.bernstein_k));
        }
        if self.mc_n < 1000 {
            return bad(format!("mc_n must be at least 1000, got {}", self.mc_n));
        }
        if self.risk_draws == 0 {
            return bad("risk_draws must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Some(c) = self.margin_c {
            if !(c > 0.0) {
                return bad(format!("margin_c must be positive, got {c}"));
            }
        }
        match (self.task, &self.noise) {
            (SweepTask::Regression, Some(noise)) => {
                noise.sampler()?;
            }
            (SweepTask::Regression, None) => {}
            (_, Some(_)) => return bad("classification plans take no noise model".into()),
            (_, None) => {}
        }
        Ok(())
    }

    pub fn schedule_id(&self) -> ScheduleId {
        self.schedule.unwrap_or(self.task.default_schedule())
    }

    pub fn schedule(&self) -> Result<ArchitectureSchedule> {
        ArchitectureSchedule::new(self.schedule_id(), self.proportionality_constant)
    }

    pub fn noise_model(&self) -> Option<NoiseModel> {
        match self.task {
            SweepTask::Regression => Some(self.noise.unwrap_or(NoiseModel::Gaussian { sigma: 1.0 })),
            _ => None,
        }
    }

    pub fn target_function(&self) -> Result<TargetFunction> {
        TargetFunction::new(self.target, self.beta)
    }

    pub fn single_n(&self) -> usize {
        self.n.unwrap_or(self.n_grid[0])
    }

    pub fn lambda(&self, n: usize) -> f64 {
        match self.lambda_policy {
            LambdaPolicy::Manual(l) => l,
            LambdaPolicy::TheoremFormula => match self.task {
                SweepTask::Regression => {
                    let (sigma, varsigma) = self.noise_model().expect("regression noise").declared_sub_gamma();
                    lambda_regression(n, self.clamp_c, sigma, varsigma)
                }
                _ => lambda_classification(n, self.bernstein_k, self.clamp_c),
            },
        }
    }

    pub fn theory_exponent(&self) -> f64 {
        self.task.theory_exponent(self.beta, self.d)
    }

    pub fn cell_seed(&self, n: usize, replicate: usize) -> u64 {
        derive_seed(self.master_seed, &[n as u64, replicate as u64])
    }
}

/// Per-cell results that exist only when the cell ran to completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// The plan's headline metric.
    pub excess_risk: RiskEstimate,
    pub posterior_averaged: RiskEstimate,
    pub aggregate: RiskEstimate,
    /// 0-1 tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_vote: Option<RiskEstimate>,
    /// Mean training risk over the evaluation draws.
    pub mean_empirical_risk: f64,
    pub accept_rate: f64,
    pub stuck: bool,
    pub chains: Vec<ChainDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task: SweepTask,
    pub schedule: ScheduleId,
    pub proportionality_constant: f64,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub lambda: f64,
    pub depth: usize,
    pub width: usize,
    pub parameter_count: usize,
    /// The activation is outside the class the guarantees cover.
    pub noncompliant_activation: bool,
    pub usable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CellMetrics>,
}

/// A completed cell together with what produced it.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub report: CellReport,
    pub network: Network,
    pub gibbs: GibbsConfig,
    pub data: Dataset,
    pub draws: Vec<ParameterVector>,
    pub target: TargetFunction,
}

fn evenly_spaced<T: Clone>(items: &[T], k: usize) -> Vec<T> {
    let m = items.len();
    if k >= m {
        return items.to_vec();
    }
    (0..k).map(|i| items[i * m / k].clone()).collect()
}

/// Runs one cell; sampler trouble is reported through `usable`, not as an error.
pub fn run_cell(plan: &SweepPlan, n: usize, replicate: usize, exec: Execution) -> Result<CellReport> {
    Ok(run_cell_full(plan, n, replicate, exec)?.report)
}

/// [`run_cell`] keeping the network, data and posterior draws.
pub fn run_cell_full(plan: &SweepPlan, n: usize, replicate: usize, exec: Execution) -> Result<CellRun> {
    plan.validate()?;
    if n < 3 {
        return Err(Error::InvalidParameter(format!("n must be at least 3, got {n}")));
    }
    let seed = plan.cell_seed(n, replicate);
    let arch = plan.schedule()?.architecture(n, plan.d, plan.beta, plan.activation)?;
    let network = Network::new(arch, ClampSpec::new(plan.clamp_c)?);
    let target = plan.target_function()?;
    let lambda = plan.lambda(n);
    let gibbs = GibbsConfig::new(lambda, plan.prior, plan.task.loss())?;

    let data = match plan.noise_model() {
        Some(noise) => make_regression_dataset(&target, &noise, n, plan.d, split_seed(seed, 0))?,
        None => make_classification_dataset(&target, n, plan.d, split_seed(seed, 0))?,
    };
    let mut scfg = plan.sampler;
    scfg.master_seed = split_seed(seed, 1);
    let sample = sample_gibbs(&network, &gibbs, &data, &scfg, exec)?;
    let bound_b = plan.prior.bound();
    let draws = sample.parameter_vectors(bound_b)?;
    let eval_draws = evenly_spaced(&draws, plan.risk_draws);

    let risk_seed = split_seed(seed, 2);
    let (posterior_averaged, aggregate, majority_vote) = match plan.task {
        SweepTask::Regression => {
            let e = population_excess_risk_regression(&network, &eval_draws, &target, plan.mc_n, risk_seed, exec)?;
            (e.posterior_averaged, e.posterior_mean, None)
        }
        SweepTask::ClsEntropy => {
            let e = population_excess_risk_logistic(&network, &eval_draws, &target, plan.mc_n, risk_seed, exec)?;
            (e.posterior_averaged, e.posterior_mean, None)
        }
        SweepTask::ClsMisclass => {
            let e = misclassification_excess(&network, &eval_draws, &target, plan.mc_n, risk_seed, exec)?;
            (e.posterior_averaged, e.plug_in, Some(e.majority_vote))
        }
    };
    let excess_risk = match plan.metric {
        ExcessMetric::PosteriorAveraged => posterior_averaged,
        ExcessMetric::Aggregate => aggregate,
    };
    let mean_empirical_risk = eval_draws
        .iter()
        .map(|th| empirical_risk_unchecked(&network, th.as_slice(), &data, plan.task.loss(), exec))
        .sum::<f64>()
        / eval_draws.len() as f64;
    let stuck = sample.any_stuck();
    if stuck {
        log::warn!("n = {n}, replicate {replicate}: a chain stopped moving; cell marked unusable");
    }
    let metrics = CellMetrics {
        excess_risk,
        posterior_averaged,
        aggregate,
        majority_vote,
        mean_empirical_risk,
        accept_rate: sample.mean_acceptance(),
        stuck,
        chains: sample.chains.clone(),
    };
    let report = CellReport {
        task: plan.task,
        schedule: plan.schedule_id(),
        proportionality_constant: plan.proportionality_constant,
        n,
        replicate,
        seed,
        lambda,
        depth: arch.depth(),
        width: arch.width(),
        parameter_count: arch.parameter_count(),
        noncompliant_activation: !plan.activation.is_compliant(),
        usable: !stuck && excess_risk.value.is_finite(),
        error: None,
        metrics: Some(metrics),
    };
    Ok(CellRun {
        report,
        network,
        gibbs,
        data,
        draws,
        target,
    })
}

fn failed_cell(plan: &SweepPlan, n: usize, replicate: usize, err: &Error) -> CellReport {
    let arch = plan
        .schedule()
        .and_then(|s| s.architecture(n, plan.d, plan.beta, plan.activation))
        .ok();
    CellReport {
        task: plan.task,
        schedule: plan.schedule_id(),
        proportionality_constant: plan.proportionality_constant,
        n,
        replicate,
        seed: plan.cell_seed(n, replicate),
        lambda: plan.lambda(n),
        depth: arch.as_ref().map_or(0, |a| a.depth()),
        width: arch.as_ref().map_or(0, |a| a.width()),
        parameter_count: arch.as_ref().map_or(0, |a| a.parameter_count()),
        noncompliant_activation: !plan.activation.is_compliant(),
        usable: false,
        error: Some(err.to_string()),
        metrics: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub theory_exponent: f64,
    pub n_points: usize,
    pub dropped: usize,
}

/// Ordinary least squares of `log(excess)` on `log(n)` after the declared
/// log correction. Nonpositive risks are dropped with a warning.
///
/// Log-risks are taken relative to the first retained point, so scaling all
/// risks by a power of two leaves the exponent bit-identical.
pub fn fit_rate(points: &[(usize, f64)], theory_exponent: f64, log_correction: LogCorrection) -> Result<RateFit> {
    let kept: Vec<(usize, f64)> = points
        .iter()
        .copied()
        .filter(|(n, r)| {
            let ok = *r > 0.0 && r.is_finite() && *n >= 2;
            if !ok {
                log::warn!("dropping rate point n = {n} with excess risk {r}");
            }
            ok
        })
        .collect();
    let dropped = points.len() - kept.len();
    if kept.len() < 4 {
        return Err(Error::TooFewPoints(kept.len()));
    }
    let reference = kept[0].1;
    let (xs, ys): (Vec<f64>, Vec<f64>) = kept
        .iter()
        .map(|&(n, r)| {
            let ln = (n as f64).ln();
            let y = (r / reference).ln();
            match log_correction {
                LogCorrection::None => (ln, y),
                LogCorrection::LognPow(p) => (ln, y - p * ln.ln()),
                LogCorrection::LognOverNForm => (ln - ln.ln(), y),
            }
        })
        .unzip();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs at least two distinct n".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let sst: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    Ok(RateFit {
        exponent: slope,
        intercept: intercept + reference.ln(),
        stderr: (ssr / (k - 2.0) / sxx).sqrt(),
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 },
        theory_exponent,
        n_points: kept.len(),
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    /// Mean headline excess risk over usable replicates.
    pub mean_excess: f64,
    /// Standard error of that mean across replicates.
    pub se: f64,
    pub usable_replicates: usize,
    /// Smallest `value + 3 se` over this n's cells; negative means an excess
    /// risk significantly below zero.
    pub min_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub plan: SweepPlan,
    pub theory_exponent: f64,
    pub points: Vec<SweepPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<RateFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    /// Mean excess risk strictly decreases along the grid.
    pub monotone_decreasing: bool,
    pub usable_cells: usize,
    pub total_cells: usize,
    /// Half or more of the cells were unusable.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<MarginReport>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub summary: SweepSummary,
    pub cells: Vec<CellReport>,
    pub csv_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
}

pub const CSV_HEADER: [&str; 11] = [
    "task",
    "schedule",
    "n",
    "replicate",
    "lambda",
    "L",
    "D",
    "excess_risk",
    "se",
    "accept_rate",
    "seed",
];

fn csv_row(c: &CellReport) -> [String; 11] {
    let (excess, se, acc) = match &c.metrics {
        Some(m) => (m.excess_risk.value.to_string(), m.excess_risk.mc_se.to_string(), m.accept_rate.to_string()),
        None => ("NaN".into(), "NaN".into(), "NaN".into()),
    };
    [
        c.task.name().into(),
        c.schedule.name().into(),
        c.n.to_string(),
        c.replicate.to_string(),
        c.lambda.to_string(),
        c.depth.to_string(),
        c.width.to_string(),
        excess,
        se,
        acc,
        c.seed.to_string(),
    ]
}

fn summarize(plan: &SweepPlan, cells: &[CellReport], margin: Option<MarginReport>) -> SweepSummary {
    let points: Vec<SweepPoint> = plan
        .n_grid
        .iter()
        .map(|&n| {
            let vals: Vec<&RiskEstimate> = cells
                .iter()
                .filter(|c| c.n == n && c.usable)
                .filter_map(|c| c.metrics.as_ref().map(|m| &m.excess_risk))
                .collect();
            let k = vals.len() as f64;
            let mean = vals.iter().map(|r| r.value).sum::<f64>() / k;
            let se = if vals.len() > 1 {
                (vals.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            let min_upper = vals.iter().map(|r| r.value + 3.0 * r.mc_se).fold(f64::INFINITY, f64::min);
            SweepPoint {
                n,
                mean_excess: if vals.is_empty() { f64::NAN } else { mean },
                se,
                usable_replicates: vals.len(),
                min_upper,
            }
        })
        .collect();
    let theory_exponent = plan.theory_exponent();
    let usable: Vec<(usize, f64)> = points
        .iter()
        .filter(|p| p.usable_replicates > 0)
        .map(|p| (p.n, p.mean_excess))
        .collect();
    let (fit, fit_error) = if plan.n_grid.len() < 4 {
        (None, Some(format!("a rate fit needs at least 4 grid values, got {}", plan.n_grid.len())))
    } else {
        match fit_rate(&usable, theory_exponent, plan.log_correction) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let usable_cells = cells.iter().filter(|c| c.usable).count();
    SweepSummary {
        plan: plan.clone(),
        theory_exponent,
        monotone_decreasing: usable.len() == points.len() && usable.windows(2).all(|w| w[1].1 < w[0].1),
        points,
        fit,
        fit_error,
        usable_cells,
        total_cells: cells.len(),
        failed: 2 * usable_cells <= cells.len(),
        margin,
    }
}

/// Runs every `(n, replicate)` cell, averages replicates per `n` and fits
/// the rate.
///
/// With `out`, writes `cells.csv` (flushed as cells finish), `cells.json`,
/// `sweep.json`, and `meta.json`. Only `meta.json` carries wall-clock data.
pub fn run_sweep(plan: &SweepPlan, out: Option<&Path>, exec: Execution) -> Result<SweepOutcome> {
    plan.validate()?;
    let started = SystemTime::now();
    let margin = match (plan.task, plan.margin_c) {
        (SweepTask::Regression, _) | (_, None) => None,
        (_, Some(c)) => {
            let seed = derive_seed(plan.master_seed, &[u64::MAX]);
            let report = check_margin_condition(&plan.target_function()?, plan.d, c, &MARGIN_H_GRID, 200_000, seed, exec)?;
            if !report.pass {
                log::warn!("target fails the margin condition with C_mg = {c}");
            }
            Some(report)
        }
    };

    let jobs: Vec<(usize, usize)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| (0..plan.replicates).map(move |r| (n, r)))
        .collect();

    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = csv::Writer::from_path(dir.join("cells.csv"))?;
            w.write_record(CSV_HEADER)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };

    let batch = exec.width().max(1);
    let mut cells = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(batch) {
        let done = exec.map(chunk.len(), |i| {
            let (n, r) = chunk[i];
            log::info!("{} cell n = {n}, replicate {r}", plan.task.name());
            run_cell(plan, n, r, exec).unwrap_or_else(|e| {
                log::warn!("cell n = {n}, replicate {r} failed: {e}");
                failed_cell(plan, n, r, &e)
            })
        });
        if let Some(w) = writer.as_mut() {
            for c in &done {
                w.write_record(csv_row(c))?;
            }
            w.flush()?;
        }
        cells.extend(done);
    }

    let summary = summarize(plan, &cells, margin);
    let (csv_path, json_path) = match out {
        Some(dir) => {
            let json_path = dir.join("sweep.json");
            write_json(&json_path, &summary)?;
            write_json(&dir.join("cells.json"), &cells)?;
            let meta = serde_json::json!({
                "generator": concat!("gibbsnet ", env!("CARGO_PKG_VERSION")),
                "started_unix_s": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                "elapsed_s": started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0),
            });
            write_json(&dir.join("meta.json"), &meta)?;
            (Some(dir.join("cells.csv")), Some(json_path))
        }
        None => (None, None),
    };
    Ok(SweepOutcome {
        summary,
        cells,
        csv_path,
        json_path,
    })
}

/// Catoni-style bound for a Gaussian fitted to one cell's posterior, next
/// to the held-out risk of that same Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub lambda: f64,
    pub delta: f64,
    pub bound: CatoniBound,
    /// `E_{theta ~ q}` of the average loss on a fresh sample of `mc_n` points.
    pub held_out_risk: RiskEstimate,
    /// `bound >= held-out risk`.
    pub holds: bool,
}

/// Draws from the fitted Gaussian used on each side of the bound.
pub const BOUND_Q_DRAWS: usize = 200;

pub fn evaluate_bound(plan: &SweepPlan, n: usize, replicate: usize, exec: Execution) -> Result<BoundReport> {
    let run = run_cell_full(plan, n, replicate, exec)?;
    let raw: Vec<Vec<f64>> = run.draws.iter().map(|d| d.as_slice().to_vec()).collect();
    let q = FactorizedGaussian::fit(&raw, 1e-3)?;
    let seed = run.report.seed;
    let loss = plan.task.loss();
    let (net, train) = (&run.network, &run.data);
    let bound = catoni_bound_value(
        &q,
        &plan.prior,
        run.report.lambda,
        plan.delta,
        BOUND_Q_DRAWS,
        split_seed(seed, 3),
        |th| empirical_risk_unchecked(net, th, train, loss, Execution::Sequential),
        exec,
    )?;
    let test = match plan.noise_model() {
        Some(noise) => make_regression_dataset(&run.target, &noise, plan.mc_n, plan.d, split_seed(seed, 4))?,
        None => make_classification_dataset(&run.target, plan.mc_n, plan.d, split_seed(seed, 4))?,
    };
    // same q draws as the empirical side of the bound
    let risks = exec.map(BOUND_Q_DRAWS, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split_seed(seed, 3), &[i as u64]));
        empirical_risk_unchecked(net, &q.sample(&mut rng), &test, loss, Execution::Sequential)
    });
    let m = risks.len() as f64;
    let mean = risks.iter().sum::<f64>() / m;
    let var = risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1.0);
    let held_out_risk = RiskEstimate {
        value: mean,
        mc_se: (var / m).sqrt(),
        n_eval: plan.mc_n,
    };
    Ok(BoundReport {
        n,
        replicate,
        seed,
        lambda: run.report.lambda,
        delta: plan.delta,
        holds: bound.value >= held_out_risk.value,
        bound,
        held_out_risk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_gamma: Option<SubGammaReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<MarginReport>,
    pub pass: bool,
}

/// Highest moment order checked for sub-Gamma noise.
pub const SUB_GAMMA_MAX_ORDER: u32 = 6;

/// Checks the plan's noise against its declared sub-Gamma pair (regression)
/// or the target against `margin_c` (classification, when declared).
pub fn validate_assumptions(plan: &SweepPlan, mc_n: usize, exec: Execution) -> Result<AssumptionReport> {
    plan.validate()?;
    let seed = derive_seed(plan.master_seed, &[u64::MAX - 1]);
    let sub_gamma = match plan.noise_model() {
        Some(noise) => {
            let (sigma, varsigma) = noise.declared_sub_gamma();
            Some(validate_sub_gamma(&noise, sigma, varsigma, SUB_GAMMA_MAX_ORDER, mc_n, seed, exec)?)
        }
        None => None,
    };
    let margin = match (plan.task, plan.margin_c) {
        (SweepTask::Regression, _) | (_, None) => None,
        (_, Some(c)) => Some(check_margin_condition(&plan.target_function()?, plan.d, c, &MARGIN_H_GRID, mc_n, seed, exec)?),
    };
    let pass = sub_gamma.as_ref().is_none_or(|r| r.pass) && margin.as_ref().is_none_or(|r| r.pass);
    Ok(AssumptionReport { sub_gamma, margin, pass })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
