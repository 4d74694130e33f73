//! Losses, empirical risk, and Monte Carlo population excess risks.
//!
//! Population risks draw a fresh uniform design and integrate the label or
//! response noise analytically at every design point, so the estimator of
//! `R(theta)` and of `R(f0)` share the same design points and differ only
//! through the predictor. Standard errors are taken over design points after
//! averaging across posterior draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::network::{sigmoid, Network, ParameterVector};
use crate::prior::LossKind;
use crate::synthesis::{Dataset, TargetFunction, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    #[serde(rename = "se")]
    pub mc_se: f64,
    pub n_eval: usize,
}

impl RiskEstimate {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            mc_se: (var / n).sqrt(),
            n_eval: v.len(),
        }
    }
}

#[inline]
pub fn loss_squared(y: f64, u: f64) -> f64 {
    (y - u) * (y - u)
}

/// `log(1 + exp(-y u))` for `y` in `{-1, +1}`.
pub fn loss_logistic(y: f64, u: f64) -> Result<f64> {
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidLabel(y));
    }
    Ok(softplus_neg(y * u))
}

/// `log(1 + exp(-z))` without overflow.
#[inline]
pub(crate) fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `d/du log(1 + exp(-y u)) = -y sigmoid(-y u)`.
#[inline]
fn logistic_dloss(y: f64, u: f64) -> f64 {
    -y * sigmoid(-y * u)
}

fn check_task(loss: LossKind, task: Task) -> Result<()> {
    match (loss, task) {
        (LossKind::Squared, Task::Regression) | (LossKind::Logistic, Task::Classification) => Ok(()),
        _ => Err(Error::TaskMismatch {
            loss: loss.name(),
            task: task.name(),
        }),
    }
}

fn check_labels(data: &Dataset) -> Result<()> {
    if data.task == Task::Classification {
        if let Some(y) = data.y.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(Error::InvalidLabel(*y));
        }
    }
    Ok(())
}

/// Mean loss over the dataset, summed in fixed chunks.
pub fn empirical_risk(net: &Network, theta: &ParameterVector, data: &Dataset, loss: LossKind, exec: Execution) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("empirical risk of an empty dataset".into()));
    }
    check_task(loss, data.task)?;
    check_labels(data)?;
    if theta.len() != net.parameter_count() {
        return Err(Error::DimensionMismatch {
            expected: net.parameter_count(),
            actual: theta.len(),
            context: "parameter vector length",
        });
    }
    if data.dim() != net.arch().input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.arch().input_dim(),
            actual: data.dim(),
            context: "input dimension",
        });
    }
    Ok(empirical_risk_unchecked(net, theta.as_slice(), data, loss, exec))
}

/// Hot-path variant of [`empirical_risk`] used inside the samplers.
pub(crate) fn empirical_risk_unchecked(net: &Network, theta: &[f64], data: &Dataset, loss: LossKind, exec: Execution) -> f64 {
    let total = exec.sum_chunks(data.len(), |range| {
        let mut ws = net.workspace();
        let mut s = 0.0;
        for i in range {
            let u = net.eval(theta, data.x.row(i), &mut ws);
            s += match loss {
                LossKind::Squared => loss_squared(data.y[i], u),
                LossKind::Logistic => softplus_neg(data.y[i] * u),
            };
        }
        s
    });
    total / data.len() as f64
}

/// Empirical risk and its gradient with respect to `theta`.
pub(crate) fn empirical_risk_and_grad(net: &Network, theta: &[f64], data: &Dataset, loss: LossKind, grad: &mut [f64]) -> f64 {
    let mut ws = net.workspace();
    grad.fill(0.0);
    let mut total = 0.0;
    for i in 0..data.len() {
        let y = data.y[i];
        let u = net.accumulate_grad(theta, data.x.row(i), grad, &mut ws, |u| match loss {
            LossKind::Squared => 2.0 * (u - y),
            LossKind::Logistic => logistic_dloss(y, u),
        });
        total += match loss {
            LossKind::Squared => loss_squared(y, u),
            LossKind::Logistic => softplus_neg(y * u),
        };
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    total / n
}

fn fresh_design(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).expect("consistent shape")
}

fn validate_draws(net: &Network, draws: &[ParameterVector], mc_n: usize) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("at least one posterior draw is required".into()));
    }
    if let Some(d) = draws.iter().find(|d| d.len() != net.parameter_count()) {
        return Err(Error::DimensionMismatch {
            expected: net.parameter_count(),
            actual: d.len(),
            context: "posterior draw length",
        });
    }
    if mc_n < 2 {
        return Err(Error::InvalidParameter("Monte Carlo risk needs at least two design points".into()));
    }
    Ok(())
}

/// Evaluates every draw at each design point and maps `(x, outputs)` to `K`
/// per-point statistics. Rows come back in design order.
fn per_point<const K: usize, F>(exec: Execution, net: &Network, draws: &[ParameterVector], design: &Matrix, f: F) -> Vec<[f64; K]>
where
    F: Fn(&[f64], &[f64]) -> [f64; K] + Sync + Send,
{
    const CHUNK: usize = 256;
    let n = design.rows();
    exec.map(n.div_ceil(CHUNK), |c| {
        let mut ws = net.workspace();
        let mut outs = Vec::with_capacity(draws.len());
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .map(|i| {
                let x = design.row(i);
                outs.clear();
                outs.extend(draws.iter().map(|th| net.eval(th.as_slice(), x, &mut ws)));
                f(x, &outs)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn column<const K: usize>(rows: &[[f64; K]], k: usize) -> RiskEstimate {
    RiskEstimate::from_samples(&rows.iter().map(|r| r[k]).collect::<Vec<_>>())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Excess risks of a posterior sample against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorExcess {
    /// `E_{theta ~ rho}[R(theta)] - R(f0)`.
    pub posterior_averaged: RiskEstimate,
    /// Excess risk of the aggregated predictor (posterior-mean output).
    pub posterior_mean: RiskEstimate,
}

/// Squared-loss excess risk `||f - f0||^2` in `L2(U[0,1]^d)`.
pub fn population_excess_risk_regression(
    net: &Network,
    draws: &[ParameterVector],
    f0: &TargetFunction,
    mc_n: usize,
    seed: u64,
    exec: Execution,
) -> Result<PosteriorExcess> {
    validate_draws(net, draws, mc_n)?;
    let design = fresh_design(mc_n, net.arch().input_dim(), seed);
    let rows = per_point(exec, net, draws, &design, |x, outs| {
        let truth = f0.eval(x);
        let avg = outs.iter().map(|u| (u - truth) * (u - truth)).sum::<f64>() / outs.len() as f64;
        let pm = mean(outs) - truth;
        [avg, pm * pm]
    });
    Ok(PosteriorExcess {
        posterior_averaged: column(&rows, 0),
        posterior_mean: column(&rows, 1),
    })
}

/// `E_Y[log(1 + exp(-Y u)) | x]` when `P(Y = 1 | x) = eta`.
#[inline]
fn conditional_logistic_risk(eta: f64, u: f64) -> f64 {
    eta * softplus_neg(u) + (1.0 - eta) * softplus_neg(-u)
}

/// Logistic-loss excess risk against the true logit `f0`.
pub fn population_excess_risk_logistic(
    net: &Network,
    draws: &[ParameterVector],
    f0: &TargetFunction,
    mc_n: usize,
    seed: u64,
    exec: Execution,
) -> Result<PosteriorExcess> {
    validate_draws(net, draws, mc_n)?;
    let design = fresh_design(mc_n, net.arch().input_dim(), seed);
    let rows = per_point(exec, net, draws, &design, |x, outs| {
        let logit = f0.eval(x);
        let eta = sigmoid(logit);
        let base = conditional_logistic_risk(eta, logit);
        let avg = outs.iter().map(|u| conditional_logistic_risk(eta, *u) - base).sum::<f64>() / outs.len() as f64;
        [avg, conditional_logistic_risk(eta, mean(outs)) - base]
    });
    Ok(PosteriorExcess {
        posterior_averaged: column(&rows, 0),
        posterior_mean: column(&rows, 1),
    })
}

/// `+1` when the output is `>= 0`, else `-1`.
#[inline]
pub fn sign_label(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn classify_sign(net: &Network, theta: &ParameterVector, x: &[f64]) -> Result<f64> {
    Ok(sign_label(net.forward(theta, x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sign of the posterior-mean logit.
    #[default]
    PosteriorMeanLogit,
    /// Majority of per-draw signs; ties go to `+1`.
    MajorityVote,
}

fn aggregate_label(outs: &[f64], how: Aggregation) -> f64 {
    match how {
        Aggregation::PosteriorMeanLogit => sign_label(mean(outs)),
        Aggregation::MajorityVote => sign_label(outs.iter().map(|u| sign_label(*u)).sum::<f64>()),
    }
}

/// Posterior classifier at `x`.
pub fn classify_posterior(net: &Network, draws: &[ParameterVector], x: &[f64], how: Aggregation) -> Result<f64> {
    validate_draws(net, draws, 2)?;
    let outs = draws.iter().map(|th| net.forward(th, x)).collect::<Result<Vec<_>>>()?;
    Ok(aggregate_label(&outs, how))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisclassificationExcess {
    /// `E_{theta ~ rho}[R01(theta)] - R01(f0)`.
    pub posterior_averaged: RiskEstimate,
    /// Sign of the posterior-mean logit.
    pub plug_in: RiskEstimate,
    pub majority_vote: RiskEstimate,
}

/// 0-1 excess risk over the Bayes classifier `sign(f0)`. Predicting the
/// wrong side at `x` costs `|2 eta(x) - 1|`.
pub fn misclassification_excess(
    net: &Network,
    draws: &[ParameterVector],
    f0: &TargetFunction,
    mc_n: usize,
    seed: u64,
    exec: Execution,
) -> Result<MisclassificationExcess> {
    validate_draws(net, draws, mc_n)?;
    let design = fresh_design(mc_n, net.arch().input_dim(), seed);
    let rows = per_point(exec, net, draws, &design, |x, outs| {
        let logit = f0.eval(x);
        let bayes = sign_label(logit);
        let cost = (2.0 * sigmoid(logit) - 1.0).abs();
        let wrong = |label: f64| if label != bayes { cost } else { 0.0 };
        let avg = outs.iter().map(|u| wrong(sign_label(*u))).sum::<f64>() / outs.len() as f64;
        [
            avg,
            wrong(aggregate_label(outs, Aggregation::PosteriorMeanLogit)),
            wrong(aggregate_label(outs, Aggregation::MajorityVote)),
        ]
    });
    Ok(MisclassificationExcess {
        posterior_averaged: column(&rows, 0),
        plug_in: column(&rows, 1),
        majority_vote: column(&rows, 2),
    })
}
