//! Markov chain Monte Carlo over network coefficients.
//!
//! Two kernels are provided: random-walk Metropolis with an isotropic Gaussian
//! proposal, and the Metropolis-adjusted Langevin algorithm. During burn-in
//! the step size is rescaled every [`ADAPT_WINDOW`] iterations (×1.1 when the
//! window's acceptance is above target, ÷1.1 otherwise); afterwards it is
//! frozen, so the retained part of each chain is a fixed-kernel MH chain.
//!
//! Chain `k` is seeded with [`split_seed`]`(master_seed, k)`, which makes every
//! chain independent of the others and of the execution order.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{split_seed, Execution};
use crate::matrix::Matrix;
use crate::network::{Network, ParameterVector};
use crate::prior::{GibbsConfig, PriorSpec};
use crate::risk::{empirical_risk_and_grad, empirical_risk_unchecked};
use crate::synthesis::Dataset;

pub const ADAPT_WINDOW: usize = 50;
const ADAPT_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Rwmh,
    Mala,
}

/// Missing fields take their [`Default`] values when deserializing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_chains: usize,
    pub burn_in: usize,
    pub n_samples: usize,
    pub thinning: usize,
    pub initial_step: f64,
    pub adapt_target_accept: f64,
    pub master_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Mala,
            n_chains: 4,
            burn_in: 2000,
            n_samples: 200,
            thinning: 10,
            initial_step: 0.05,
            adapt_target_accept: 0.3,
            master_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_chains == 0 {
            return bad("n_chains must be positive".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1".into());
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad(format!("initial_step must be positive, got {}", self.initial_step));
        }
        if !(self.adapt_target_accept > 0.0 && self.adapt_target_accept < 1.0) {
            return bad(format!(
                "adapt_target_accept must lie in (0, 1), got {}",
                self.adapt_target_accept
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub seed: u64,
    /// Acceptance rate of the retained (post burn-in) iterations.
    pub acceptance_rate: f64,
    pub step_size_final: f64,
    pub mean_log_posterior: f64,
    /// `m (1 - r1) / (1 + r1)` from the lag-1 autocorrelation `r1` of the
    /// retained log-posterior trace, clipped to `[1, m]`.
    pub ess_proxy: f64,
    /// Set when the chain rejected `10 * burn_in` proposals in a row.
    pub stuck: bool,
}

/// An unnormalized log-density the samplers can target.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the log-density.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// The Gibbs posterior `exp(-lambda r_n(theta)) pi(theta)` of a network on a dataset.
pub struct NetworkTarget<'a> {
    net: &'a Network,
    cfg: &'a GibbsConfig,
    data: &'a Dataset,
}

impl<'a> NetworkTarget<'a> {
    pub fn new(net: &'a Network, cfg: &'a GibbsConfig, data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidParameter("cannot sample a posterior from an empty dataset".into()));
        }
        if data.dim() != net.arch().input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.arch().input_dim(),
                actual: data.dim(),
                context: "dataset dimension",
            });
        }
        // surfaces task/loss mismatch and bad labels before sampling starts
        let zero = ParameterVector::unbounded(vec![0.0; net.parameter_count()]);
        crate::risk::empirical_risk(net, &zero, data, cfg.loss(), Execution::Sequential)?;
        Ok(Self { net, cfg, data })
    }
}

impl LogTarget for NetworkTarget<'_> {
    fn dim(&self) -> usize {
        self.net.parameter_count()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let lp = self.cfg.prior().log_density(theta);
        if lp == f64::NEG_INFINITY || self.cfg.lambda() == 0.0 {
            return lp;
        }
        let r = empirical_risk_unchecked(self.net, theta, self.data, self.cfg.loss(), Execution::Sequential);
        lp - self.cfg.lambda() * r
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let lp = self.cfg.prior().log_density(theta);
        if lp == f64::NEG_INFINITY {
            grad.fill(0.0);
            return lp;
        }
        let lambda = self.cfg.lambda();
        if lambda == 0.0 {
            grad.fill(0.0);
        } else {
            let r = empirical_risk_and_grad(self.net, theta, self.data, self.cfg.loss(), grad);
            grad.iter_mut().for_each(|g| *g *= -lambda);
            self.cfg.prior().add_log_density_grad(theta, grad);
            return lp - lambda * r;
        }
        self.cfg.prior().add_log_density_grad(theta, grad);
        lp
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.cfg.prior().sample(self.dim(), rng)
    }
}

/// Arbitrary log-density plugged into the samplers; chains start from `init`.
pub struct FnTarget<F, G> {
    dim: usize,
    log_density: F,
    grad: G,
    init: PriorSpec,
}

impl<F, G> FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, log_density: F, grad: G, init: PriorSpec) -> Self {
        Self {
            dim,
            log_density,
            grad,
            init,
        }
    }
}

impl<F, G> LogTarget for FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        (self.log_density)(theta)
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad)(theta, grad);
        (self.log_density)(theta)
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.init.sample(self.dim, rng)
    }
}

/// Pooled draws plus per-chain diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    /// Chain-major: all retained draws of chain 0, then chain 1, ...
    pub draws: Vec<Vec<f64>>,
    pub chains: Vec<ChainDiagnostics>,
}

impl PosteriorSample {
    pub fn any_stuck(&self) -> bool {
        self.chains.iter().any(|c| c.stuck)
    }

    pub fn mean_acceptance(&self) -> f64 {
        self.chains.iter().map(|c| c.acceptance_rate).sum::<f64>() / self.chains.len() as f64
    }

    /// Draws as parameter vectors bounded by `bound_b` (infinite for untruncated priors).
    pub fn parameter_vectors(&self, bound_b: f64) -> Result<Vec<ParameterVector>> {
        self.draws
            .iter()
            .map(|d| {
                if bound_b.is_infinite() {
                    Ok(ParameterVector::unbounded(d.clone()))
                } else {
                    ParameterVector::new(d.clone(), bound_b)
                }
            })
            .collect()
    }
}

/// Samples the network Gibbs posterior.
pub fn sample_gibbs(net: &Network, cfg: &GibbsConfig, data: &Dataset, scfg: &SamplerConfig, exec: Execution) -> Result<PosteriorSample> {
    let target = NetworkTarget::new(net, cfg, data)?;
    sample_target(&target, scfg, exec)
}

/// Runs `n_chains` independent chains on any [`LogTarget`].
pub fn sample_target<T: LogTarget>(target: &T, scfg: &SamplerConfig, exec: Execution) -> Result<PosteriorSample> {
    scfg.validate()?;
    let runs = exec.map(scfg.n_chains, |k| run_chain(target, scfg, split_seed(scfg.master_seed, k as u64)));
    let mut draws = Vec::with_capacity(scfg.n_chains * scfg.n_samples);
    let mut chains = Vec::with_capacity(scfg.n_chains);
    for (d, diag) in runs {
        draws.extend(d);
        chains.push(diag);
    }
    Ok(PosteriorSample { draws, chains })
}

struct State {
    theta: Vec<f64>,
    log_p: f64,
    grad: Vec<f64>,
}

fn run_chain<T: LogTarget>(target: &T, scfg: &SamplerConfig, seed: u64) -> (Vec<Vec<f64>>, ChainDiagnostics) {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mala = scfg.kind == SamplerKind::Mala;

    let evaluate = |theta: Vec<f64>| -> State {
        let mut grad = vec![0.0; if mala { dim } else { 0 }];
        let log_p = if mala {
            target.log_density_and_grad(&theta, &mut grad)
        } else {
            target.log_density(&theta)
        };
        State { theta, log_p, grad }
    };

    let mut cur = evaluate(target.initial_point(&mut rng));
    let mut step = scfg.initial_step;
    let total = scfg.burn_in + scfg.n_samples * scfg.thinning;
    let stuck_after = 10 * scfg.burn_in.max(1);

    let mut window_accepts = 0usize;
    let mut kept_accepts = 0usize;
    let mut rejections_in_a_row = 0usize;
    let mut stuck = false;
    let mut draws = Vec::with_capacity(scfg.n_samples);
    let mut trace = Vec::with_capacity(scfg.n_samples);
    let mut noise = vec![0.0; dim];

    for it in 0..total {
        noise.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        let proposal: Vec<f64> = if mala {
            let h2 = 0.5 * step * step;
            (0..dim).map(|i| cur.theta[i] + h2 * cur.grad[i] + step * noise[i]).collect()
        } else {
            (0..dim).map(|i| cur.theta[i] + step * noise[i]).collect()
        };
        let prop = evaluate(proposal);

        let mut log_ratio = prop.log_p - cur.log_p;
        if mala && prop.log_p.is_finite() {
            log_ratio += langevin_log_q(&cur.theta, &prop.theta, &prop.grad, step)
                - langevin_log_q(&prop.theta, &cur.theta, &cur.grad, step);
        }
        let u: f64 = rng.random();
        let accept = prop.log_p.is_finite() && (log_ratio >= 0.0 || u.ln() < log_ratio);
        if accept {
            cur = prop;
            rejections_in_a_row = 0;
        } else {
            rejections_in_a_row += 1;
            if rejections_in_a_row >= stuck_after {
                stuck = true;
            }
        }

        if it < scfg.burn_in {
            window_accepts += accept as usize;
            if (it + 1) % ADAPT_WINDOW == 0 {
                if window_accepts as f64 / ADAPT_WINDOW as f64 > scfg.adapt_target_accept {
                    step *= ADAPT_FACTOR;
                } else {
                    step /= ADAPT_FACTOR;
                }
                window_accepts = 0;
            }
        } else {
            kept_accepts += accept as usize;
            if (it - scfg.burn_in + 1).is_multiple_of(scfg.thinning) {
                draws.push(cur.theta.clone());
                trace.push(cur.log_p);
            }
        }
    }

    let kept = (total - scfg.burn_in) as f64;
    let diag = ChainDiagnostics {
        seed,
        acceptance_rate: kept_accepts as f64 / kept,
        step_size_final: step,
        mean_log_posterior: trace.iter().sum::<f64>() / trace.len() as f64,
        ess_proxy: ess_lag1(&trace),
        stuck,
    };
    (draws, diag)
}

/// `log q(to | from)` for the Langevin proposal, up to a constant.
fn langevin_log_q(to: &[f64], from: &[f64], grad_from: &[f64], step: f64) -> f64 {
    let h2 = 0.5 * step * step;
    let sq: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f - h2 * g;
            r * r
        })
        .sum();
    -sq / (2.0 * step * step)
}

fn ess_lag1(trace: &[f64]) -> f64 {
    let m = trace.len();
    if m < 3 {
        return m as f64;
    }
    let mean = trace.iter().sum::<f64>() / m as f64;
    let var: f64 = trace.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var == 0.0 {
        return 1.0;
    }
    let cov: f64 = trace.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    let r1 = (cov / var).clamp(-0.999, 0.999);
    (m as f64 * (1.0 - r1) / (1.0 + r1)).clamp(1.0, m as f64)
}

/// Monte Carlo average of the network outputs over `draws` at each row of `xs`.
pub fn posterior_predict_mean(net: &Network, draws: &[ParameterVector], xs: &Matrix) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("posterior prediction needs at least one draw".into()));
    }
    let mut acc = vec![0.0; xs.rows()];
    for th in draws {
        for (a, v) in acc.iter_mut().zip(net.forward_batch(th, xs)?) {
            *a += v;
        }
    }
    let m = draws.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

/// Writes each draw as `draw_<index>.bin` in the binary parameter format.
pub fn save_draws(dir: &Path, draws: &[ParameterVector]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, d) in draws.iter().enumerate() {
        let f = fs::File::create(dir.join(format!("draw_{i:05}.bin")))?;
        d.write_to(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

/// Metropolis chain over a finite state space with a uniform proposal over
/// the other states; returns the visit counts of each state.
pub fn sample_discrete(log_weights: &[f64], steps: usize, seed: u64) -> Result<Vec<u64>> {
    let m = log_weights.len();
    if m < 2 {
        return Err(Error::InvalidParameter("discrete chain needs at least two states".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; m];
    let mut s = 0usize;
    for _ in 0..steps {
        let mut t = rng.random_range(0..m - 1);
        if t >= s {
            t += 1;
        }
        let log_ratio = log_weights[t] - log_weights[s];
        if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
            s = t;
        }
        counts[s] += 1;
    }
    Ok(counts)
}
