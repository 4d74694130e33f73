//! Numerical PAC-Bayes machinery.
//!
//! The identities and inequalities the excess-risk guarantees are built from
//! are checked here directly: the Donsker–Varadhan variational formula on
//! finite spaces, Bernstein-type moment generating function bounds by Monte
//! Carlo against exact MGFs, and KL divergences by quadrature. The
//! Catoni-style empirical bound is evaluated for factorized Gaussian
//! posteriors. All exponentials of large arguments go through log-sum-exp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::prior::{kl_gaussian_to_prior, PriorSpec};
use crate::risk::RiskEstimate;

/// `log sum_i exp(a_i)`; `-inf` entries are skipped.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// A finite parameter space with prior weights and a bounded function `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSpace {
    prior_weights: Vec<f64>,
    h_values: Vec<f64>,
}

impl DiscreteSpace {
    pub fn new(prior_weights: Vec<f64>, h_values: Vec<f64>) -> Result<Self> {
        if prior_weights.is_empty() || prior_weights.len() != h_values.len() {
            return Err(Error::DimensionMismatch {
                expected: prior_weights.len(),
                actual: h_values.len(),
                context: "prior weights and h values",
            });
        }
        check_simplex(&prior_weights)?;
        if h_values.iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidParameter("h values must be finite".into()));
        }
        Ok(Self { prior_weights, h_values })
    }

    /// Random space with `m` states, Dirichlet(1) prior and `h ~ U[-h_max, h_max]`.
    pub fn random<R: Rng>(m: usize, h_max: f64, rng: &mut R) -> Self {
        let raw: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().ln()).collect();
        let s: f64 = raw.iter().sum();
        let prior_weights = raw.iter().map(|v| v / s).collect();
        let h_values = (0..m).map(|_| rng.random_range(-h_max..=h_max)).collect();
        Self { prior_weights, h_values }
    }

    pub fn len(&self) -> usize {
        self.prior_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior_weights.is_empty()
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }

    fn log_terms(&self, scale: f64) -> Vec<f64> {
        self.prior_weights
            .iter()
            .zip(&self.h_values)
            .map(|(p, h)| if *p > 0.0 { p.ln() + scale * h } else { f64::NEG_INFINITY })
            .collect()
    }

    /// The Gibbs measure `rho_i ∝ pi_i exp(scale * h_i)`.
    pub fn gibbs_measure(&self, scale: f64) -> Vec<f64> {
        let terms = self.log_terms(scale);
        let z = log_sum_exp(&terms);
        terms.iter().map(|t| (t - z).exp()).collect()
    }
}

fn check_simplex(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("probability weights must be nonnegative".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("probability weights sum to {s}, not 1")));
    }
    Ok(())
}

/// `KL(rho || pi)` on a finite space; `+inf` when `rho` charges a `pi`-null state.
pub fn kl_discrete(rho: &[f64], pi: &[f64]) -> f64 {
    rho.iter()
        .zip(pi)
        .map(|(r, p)| match (*r > 0.0, *p > 0.0) {
            (false, _) => 0.0,
            (true, false) => f64::INFINITY,
            (true, true) => r * (r.ln() - p.ln()),
        })
        .sum()
}

/// `log E_pi[exp(h)]`.
pub fn dv_lhs(space: &DiscreteSpace) -> f64 {
    log_sum_exp(&space.log_terms(1.0))
}

/// `E_rho[h] - KL(rho || pi)`.
pub fn dv_objective(space: &DiscreteSpace, rho: &[f64]) -> f64 {
    let kl = kl_discrete(rho, &space.prior_weights);
    if kl.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let mean: f64 = rho.iter().zip(&space.h_values).map(|(r, h)| r * h).sum();
    mean - kl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvSup {
    pub best_value: f64,
    /// Index into the candidate list, or `None` when the Gibbs measure wins.
    pub best_candidate: Option<usize>,
    pub argmax: Vec<f64>,
    pub gibbs_value: f64,
    pub candidate_values: Vec<f64>,
}

/// Maximizes `E_rho[h] - KL(rho || pi)` over the candidates and the exact Gibbs measure.
pub fn dv_rhs_sup(space: &DiscreteSpace, candidate_rhos: &[Vec<f64>]) -> Result<DvSup> {
    for c in candidate_rhos {
        if c.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                actual: c.len(),
                context: "candidate measure length",
            });
        }
        check_simplex(c)?;
    }
    let gibbs = space.gibbs_measure(1.0);
    let gibbs_value = dv_objective(space, &gibbs);
    let candidate_values: Vec<f64> = candidate_rhos.iter().map(|c| dv_objective(space, c)).collect();
    let mut best = (gibbs_value, None);
    for (i, v) in candidate_values.iter().enumerate() {
        if *v > best.0 {
            best = (*v, Some(i));
        }
    }
    let argmax = match best.1 {
        Some(i) => candidate_rhos[i].clone(),
        None => gibbs,
    };
    Ok(DvSup {
        best_value: best.0,
        best_candidate: best.1,
        argmax,
        gibbs_value,
        candidate_values,
    })
}

/// `E_{rho_lambda}[r]` with `rho_lambda ∝ pi exp(-lambda r)`, by exact enumeration.
pub fn gibbs_expectation(prior_weights: &[f64], risks: &[f64], lambda: f64) -> Result<f64> {
    let space = DiscreteSpace::new(prior_weights.to_vec(), risks.to_vec())?;
    let rho = space.gibbs_measure(-lambda);
    Ok(rho.iter().zip(risks).map(|(p, r)| p * r).sum())
}

/// Factorized Gaussian `N(mean, diag(sd^2))` over parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedGaussian {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FactorizedGaussian {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if mean.len() != sd.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: sd.len(),
                context: "mean and sd lengths",
            });
        }
        if sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("standard deviations must be positive".into()));
        }
        Ok(Self { mean, sd })
    }

    /// Moment fit to a set of draws; `sd_floor` keeps degenerate coordinates proper.
    pub fn fit(draws: &[Vec<f64>], sd_floor: f64) -> Result<Self> {
        let m = draws.len();
        if m < 2 {
            return Err(Error::InvalidParameter("moment fit needs at least two draws".into()));
        }
        let dim = draws[0].len();
        let mut mean = vec![0.0; dim];
        for d in draws {
            for (a, v) in mean.iter_mut().zip(d) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0; dim];
        for d in draws {
            for ((a, v), mu) in var.iter_mut().zip(d).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let sd = var.iter().map(|v| (v / (m as f64 - 1.0)).sqrt().max(sd_floor)).collect();
        Self::new(mean, sd)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.sd)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatoniBound {
    pub value: f64,
    pub expected_empirical_risk: RiskEstimate,
    pub kl: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// `E_{theta ~ q}[r_n(theta)] + (KL(q || pi) + log(2/delta)) / lambda`, the
/// expectation taken over `m` draws from `q`.
#[allow(clippy::too_many_arguments)]
pub fn catoni_bound_value<F>(
    q: &FactorizedGaussian,
    prior: &PriorSpec,
    lambda: f64,
    delta: f64,
    m: usize,
    seed: u64,
    empirical_risk_fn: F,
    exec: Execution,
) -> Result<CatoniBound>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if m < 2 {
        return Err(Error::InvalidParameter("need at least two draws from q".into()));
    }
    let kl = kl_gaussian_to_prior(&q.mean, &q.sd, prior)?;
    let risks = exec.map(m, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        empirical_risk_fn(&q.sample(&mut rng))
    });
    let mean = risks.iter().sum::<f64>() / m as f64;
    let var = risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m as f64 - 1.0);
    let expected = RiskEstimate {
        value: mean,
        mc_se: (var / m as f64).sqrt(),
        n_eval: m,
    };
    Ok(CatoniBound {
        value: mean + (kl + (2.0 / delta).ln()) / lambda,
        expected_empirical_risk: expected,
        kl,
        lambda,
        delta,
    })
}

/// `g(x) = (e^x - 1 - x) / x^2`, `g(0) = 1/2`.
pub fn bernstein_g(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        0.5 + x / 6.0 + x * x / 24.0
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

/// Bounded test distributions with closed-form moments and MGFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum BoundedDistribution {
    Constant { value: f64 },
    /// Fair coin on `{-1, +1}`.
    Rademacher,
    Uniform { lo: f64, hi: f64 },
    Bernoulli { p: f64 },
}

impl BoundedDistribution {
    pub fn name(&self) -> String {
        match self {
            BoundedDistribution::Constant { value } => format!("constant({value})"),
            BoundedDistribution::Rademacher => "rademacher".into(),
            BoundedDistribution::Uniform { lo, hi } => format!("uniform({lo},{hi})"),
            BoundedDistribution::Bernoulli { p } => format!("bernoulli({p})"),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            BoundedDistribution::Constant { value } => value,
            BoundedDistribution::Rademacher => 0.0,
            BoundedDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            BoundedDistribution::Bernoulli { p } => p,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            BoundedDistribution::Constant { .. } => 0.0,
            BoundedDistribution::Rademacher => 1.0,
            BoundedDistribution::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            BoundedDistribution::Bernoulli { p } => p * (1.0 - p),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            BoundedDistribution::Constant { value } => value,
            BoundedDistribution::Rademacher => 1.0,
            BoundedDistribution::Uniform { hi, .. } => hi,
            BoundedDistribution::Bernoulli { .. } => 1.0,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            BoundedDistribution::Constant { value } => value,
            BoundedDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            BoundedDistribution::Uniform { lo, hi } => rng.random_range(lo..=hi),
            BoundedDistribution::Bernoulli { p } => (rng.random::<f64>() < p) as u8 as f64,
        }
    }

    /// `E exp(t (U - E U))`, exactly.
    pub fn centered_mgf(&self, t: f64) -> f64 {
        match *self {
            BoundedDistribution::Constant { .. } => 1.0,
            BoundedDistribution::Rademacher => t.cosh(),
            BoundedDistribution::Uniform { lo, hi } => {
                let a = 0.5 * (hi - lo) * t;
                if a.abs() < 1e-8 {
                    1.0 + a * a / 6.0
                } else {
                    a.sinh() / a
                }
            }
            BoundedDistribution::Bernoulli { p } => p * (t * (1.0 - p)).exp() + (1.0 - p) * (-t * p).exp(),
        }
    }

    /// `E[(U)_+^k]`, exactly.
    pub fn positive_part_moment(&self, k: u32) -> f64 {
        let k = k as i32;
        match *self {
            BoundedDistribution::Constant { value } => value.max(0.0).powi(k),
            BoundedDistribution::Rademacher => 0.5,
            BoundedDistribution::Uniform { lo, hi } => {
                (hi.max(0.0).powi(k + 1) - lo.max(0.0).powi(k + 1)) / ((k as f64 + 1.0) * (hi - lo))
            }
            BoundedDistribution::Bernoulli { p } => p,
        }
    }

    pub fn second_moment(&self) -> f64 {
        self.variance() + self.mean() * self.mean()
    }

    /// Whether `n` iid copies satisfy the moment conditions of the
    /// Bernstein–Massart inequality with constants `(v, w)`, checked for
    /// `k = 3..=60` (the positive parts are bounded, so larger orders follow).
    pub fn satisfies_massart(&self, n: usize, v: f64, w: f64) -> bool {
        let nf = n as f64;
        if nf * self.second_moment() > v * (1.0 + 1e-12) {
            return false;
        }
        let mut factorial = 2.0f64;
        (3..=60u32).all(|k| {
            factorial *= k as f64;
            nf * self.positive_part_moment(k) <= v * factorial * w.powi(k as i32 - 2) / 2.0 * (1.0 + 1e-12)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckMargin {
    /// Grid value (`t` or `zeta`), or a case index for non-grid checks.
    pub param: f64,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    /// Exact left-hand side when available in closed form.
    pub exact: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub pass: bool,
    pub margins: Vec<CheckMargin>,
}

impl CheckReport {
    pub fn new(check_name: impl Into<String>, margins: Vec<CheckMargin>) -> Self {
        Self {
            check_name: check_name.into(),
            pass: margins.iter().all(|m| m.pass),
            margins,
        }
    }
}

/// Monte Carlo estimate and standard error of `E exp(s sum_{i<n} (U_i - E U_i))`.
fn mgf_estimate(dist: &BoundedDistribution, s: f64, n: usize, reps: usize, seed: u64, exec: Execution) -> (f64, f64) {
    let mu = dist.mean();
    let vals = exec.map(reps, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
        let sum: f64 = (0..n).map(|_| dist.sample(&mut rng) - mu).sum();
        (s * sum).exp()
    });
    let m = reps as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

fn mgf_margin(estimate: f64, se: f64, bound: f64, param: f64, exact: f64) -> CheckMargin {
    let rel = if estimate > 0.0 { se / estimate } else { 0.0 };
    CheckMargin {
        param,
        estimate,
        se,
        bound,
        exact: Some(exact),
        pass: estimate <= bound * (1.0 + 5.0 * rel) && exact <= bound * (1.0 + 1e-12),
    }
}

/// Checks `E exp(t S_n) <= exp(g(C t) n t^2 Var U)` over `t_grid`, where
/// `S_n` is a centered sum of `n` draws and `U - E U <= C` almost surely.
///
/// A grid point passes when the Monte Carlo estimate is at most
/// `bound * (1 + 5 * relative SE)` and the exact MGF is below the bound.
pub fn bernstein_mgf_check(
    dist: &BoundedDistribution,
    c_bound: f64,
    t_grid: &[f64],
    n: usize,
    mc_reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<CheckReport> {
    if dist.sup() - dist.mean() > c_bound {
        return Err(Error::InvalidParameter(format!(
            "U - E U reaches {} which exceeds C = {c_bound}",
            dist.sup() - dist.mean()
        )));
    }
    if mc_reps < 2 || n == 0 {
        return Err(Error::InvalidParameter("need n >= 1 and at least two repetitions".into()));
    }
    let var = dist.variance();
    let mut margins = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        if (c_bound * t).abs() > 700.0 || (t * n as f64 * dist.sup().abs().max(1.0)).abs() > 700.0 {
            return Err(Error::InvalidParameter(format!("t = {t} overflows the exponential")));
        }
        let bound = (bernstein_g(c_bound * t) * n as f64 * t * t * var).exp();
        let exact = dist.centered_mgf(t).powi(n as i32);
        let (est, se) = mgf_estimate(dist, t, n, mc_reps, derive_seed(seed, &[j as u64]), exec);
        margins.push(mgf_margin(est, se, bound, t, exact));
    }
    Ok(CheckReport::new(format!("bernstein_mgf:{}", dist.name()), margins))
}

/// Checks `E exp(zeta S_n) <= exp(v zeta^2 / (2 (1 - w zeta)))` for `zeta` in `(0, 1/w)`.
#[allow(clippy::too_many_arguments)]
pub fn bernstein_massart_check(
    dist: &BoundedDistribution,
    v: f64,
    w: f64,
    zeta_grid: &[f64],
    n: usize,
    mc_reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<CheckReport> {
    if !(v > 0.0 && w > 0.0) {
        return Err(Error::InvalidParameter("v and w must be positive".into()));
    }
    if let Some(z) = zeta_grid.iter().find(|z| !(**z > 0.0 && **z < 1.0 / w)) {
        return Err(Error::InvalidParameter(format!("zeta = {z} is outside (0, 1/w) = (0, {})", 1.0 / w)));
    }
    if !dist.satisfies_massart(n, v, w) {
        return Err(Error::InvalidParameter(format!(
            "{} does not satisfy the moment conditions with v = {v}, w = {w}",
            dist.name()
        )));
    }
    if mc_reps < 2 || n == 0 {
        return Err(Error::InvalidParameter("need n >= 1 and at least two repetitions".into()));
    }
    let margins = zeta_grid
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let bound = (v * z * z / (2.0 * (1.0 - w * z))).exp();
            let exact = dist.centered_mgf(z).powi(n as i32);
            let (est, se) = mgf_estimate(dist, z, n, mc_reps, derive_seed(seed, &[j as u64]), exec);
            mgf_margin(est, se, bound, z, exact)
        })
        .collect();
    Ok(CheckReport::new(format!("bernstein_massart:{}", dist.name()), margins))
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs two points");
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + h * i as f64).collect()
}

/// Trapezoidal quadrature of `p log(p / q)` over a sorted grid. Returns
/// `+inf` when `q` vanishes somewhere `p` does not.
pub fn kl_numeric<P, Q>(p_density: P, q_density: Q, support_grid: &[f64]) -> f64
where
    P: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    kl_numeric_log(|x| p_density(x).ln(), |x| q_density(x).ln(), support_grid)
}

/// [`kl_numeric`] on log-densities, which stays finite where the densities
/// themselves would underflow.
pub fn kl_numeric_log<P, Q>(log_p: P, log_q: Q, support_grid: &[f64]) -> f64
where
    P: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    let mut values = Vec::with_capacity(support_grid.len());
    for &x in support_grid {
        let lp = log_p(x);
        if lp == f64::NEG_INFINITY {
            values.push(0.0);
            continue;
        }
        let lq = log_q(x);
        if lq == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        values.push(lp.exp() * (lp - lq));
    }
    support_grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
        .sum()
}

pub fn normal_log_density(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        let z = (x - mean) / sd;
        -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

pub fn normal_density(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        let z = (x - mean) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Runs the lemma-level oracle suite with deterministic seeds.
pub fn verify_lemmas(seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();

    // Donsker–Varadhan: Gibbs attains log E exp(h); random candidates never beat it.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let mut equality = Vec::new();
    let mut variational = Vec::new();
    for case in 0..100 {
        let m = rng.random_range(2..=50);
        let space = DiscreteSpace::random(m, 20.0, &mut rng);
        let lhs = dv_lhs(&space);
        let candidates: Vec<Vec<f64>> = (0..5).map(|_| DiscreteSpace::random(m, 1.0, &mut rng).prior_weights).collect();
        let sup = dv_rhs_sup(&space, &candidates)?;
        let gap = (lhs - sup.gibbs_value).abs();
        equality.push(CheckMargin {
            param: case as f64,
            estimate: sup.gibbs_value,
            se: 0.0,
            bound: lhs,
            exact: Some(gap),
            pass: gap <= 1e-10,
        });
        let worst = sup.candidate_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        variational.push(CheckMargin {
            param: case as f64,
            estimate: worst,
            se: 0.0,
            bound: lhs,
            exact: None,
            pass: worst <= lhs + 1e-10,
        });
    }
    reports.push(CheckReport::new("donsker_varadhan_equality", equality));
    reports.push(CheckReport::new("donsker_varadhan_variational", variational));

    // Bernstein (Catoni form).
    let t_grid = [0.05, 0.1, 0.2, 0.3];
    let bern = [
        (BoundedDistribution::Rademacher, 1.0),
        (BoundedDistribution::Uniform { lo: -1.0, hi: 1.0 }, 1.0),
        (BoundedDistribution::Bernoulli { p: 0.3 }, 0.7),
        (BoundedDistribution::Constant { value: 0.4 }, 0.0),
    ];
    for (i, (dist, c)) in bern.iter().enumerate() {
        reports.push(bernstein_mgf_check(dist, *c, &t_grid, 10, 200_000, derive_seed(seed, &[1, i as u64]), exec)?);
    }

    // Bernstein–Massart.
    let zeta_grid = [0.1, 0.25, 0.5, 0.75];
    let massart = [
        (BoundedDistribution::Uniform { lo: -1.0, hi: 1.0 }, 5, 5.0 / 3.0, 1.0),
        (BoundedDistribution::Rademacher, 5, 5.0, 1.0),
    ];
    for (i, (dist, n, v, w)) in massart.iter().enumerate() {
        reports.push(bernstein_massart_check(dist, *v, *w, &zeta_grid, *n, 200_000, derive_seed(seed, &[2, i as u64]), exec)?);
    }

    // Closed-form Gaussian KL against quadrature.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let mut kl = Vec::new();
    for case in 0..100 {
        let mean = rng.random_range(-2.0..=2.0);
        let sd = rng.random_range(0.3..=2.5);
        let var = rng.random_range(0.5..=3.0);
        let prior = PriorSpec::new(var, None)?;
        let closed = kl_gaussian_to_prior(&[mean], &[sd], &prior)?;
        let half = 14.0 * sd.max(var.sqrt()) + mean.abs();
        let numeric = kl_numeric_log(
            normal_log_density(mean, sd),
            normal_log_density(0.0, var.sqrt()),
            &uniform_grid(-half, half, 40_001),
        );
        let rel = (numeric - closed).abs() / closed.max(1e-300);
        kl.push(CheckMargin {
            param: case as f64,
            estimate: numeric,
            se: 0.0,
            bound: closed,
            exact: Some(rel),
            pass: rel <= 1e-6,
        });
    }
    reports.push(CheckReport::new("kl_closed_form_vs_quadrature", kl));

    // Gibbs risk is nonincreasing in the temperature.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4]));
    let prior = DiscreteSpace::random(50, 1.0, &mut rng).prior_weights;
    let risks: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let lambdas = [0.0, 1.0, 10.0, 100.0];
    let values = lambdas
        .iter()
        .map(|l| gibbs_expectation(&prior, &risks, *l))
        .collect::<Result<Vec<_>>>()?;
    let mono = lambdas
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(i, (l, v))| CheckMargin {
            param: *l,
            estimate: *v,
            se: 0.0,
            bound: if i == 0 { f64::INFINITY } else { values[i - 1] },
            exact: None,
            pass: i == 0 || *v < values[i - 1],
        })
        .collect();
    reports.push(CheckReport::new("gibbs_risk_monotone_in_lambda", mono));

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dv_lhs_examples() {
        let s = DiscreteSpace::new(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        assert_eq!(dv_lhs(&s), 0.0);
        let s = DiscreteSpace::new(vec![0.2, 0.3, 0.5], vec![1.7; 3]).unwrap();
        assert!((dv_lhs(&s) - 1.7).abs() < 1e-15);
        let s = DiscreteSpace::new(vec![0.5, 0.5], vec![0.0, 3f64.ln()]).unwrap();
        assert!((dv_lhs(&s) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dv_uniform_candidate_on_zero_h() {
        let s = DiscreteSpace::new(vec![0.25; 4], vec![0.0; 4]).unwrap();
        let sup = dv_rhs_sup(&s, &[vec![0.25; 4]]).unwrap();
        assert_eq!(sup.candidate_values[0], 0.0);
        assert!(sup.best_value.abs() < 1e-15);
    }

    #[test]
    fn dv_gibbs_attains_lhs_on_random_spaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = rng.random_range(2..=50);
            let s = DiscreteSpace::random(m, 20.0, &mut rng);
            let lhs = dv_lhs(&s);
            let cands: Vec<Vec<f64>> = (0..4).map(|_| DiscreteSpace::random(m, 1.0, &mut rng).prior_weights).collect();
            let sup = dv_rhs_sup(&s, &cands).unwrap();
            assert!((sup.gibbs_value - lhs).abs() <= 1e-10);
            assert!(sup.candidate_values.iter().all(|v| *v <= lhs + 1e-10));
        }
    }

    #[test]
    fn dv_candidate_outside_support_scores_neg_inf() {
        let s = DiscreteSpace::new(vec![1.0, 0.0], vec![0.0, 5.0]).unwrap();
        let sup = dv_rhs_sup(&s, &[vec![0.0, 1.0]]).unwrap();
        assert_eq!(sup.candidate_values[0], f64::NEG_INFINITY);
        assert_eq!(sup.best_candidate, None);
        assert!(dv_rhs_sup(&s, &[vec![0.6, 0.6]]).is_err());
        assert!(DiscreteSpace::new(vec![0.6, 0.6], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn gibbs_expectation_monotone_by_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let prior = DiscreteSpace::random(50, 1.0, &mut rng).prior_weights;
            let risks: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            let vals: Vec<f64> = [0.0, 1.0, 10.0, 100.0]
                .iter()
                .map(|l| gibbs_expectation(&prior, &risks, *l).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        }
        let flat = gibbs_expectation(&[0.5, 0.5], &[0.3, 0.3], 100.0).unwrap();
        assert!((flat - 0.3).abs() < 1e-15);
    }

    #[test]
    fn g_function_continuity() {
        assert_eq!(bernstein_g(0.0), 0.5);
        for x in [1e-5f64, -1e-5, 9.9e-5, 1.01e-4] {
            let direct = (x.exp_m1() - x) / (x * x);
            assert!((bernstein_g(x) - direct).abs() < 1e-7, "{x}");
        }
        assert!((bernstein_g(1.0) - (1f64.exp() - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn coin_cosh_versus_g_bound() {
        let lhs = 0.1f64.cosh().powi(10);
        let bound = (bernstein_g(0.1) * 10.0 * 0.01).exp();
        assert!((lhs - 1.0512).abs() < 5e-5, "{lhs}");
        assert!((bound - 1.053069).abs() < 5e-6, "{bound}");
        assert!(lhs <= bound);
        let r = bernstein_mgf_check(&BoundedDistribution::Rademacher, 1.0, &[0.1], 10, 100_000, 1, Execution::Parallel).unwrap();
        assert!(r.pass);
        assert!((r.margins[0].exact.unwrap() - lhs).abs() < 1e-15);
    }

    #[test]
    fn degenerate_distribution_gives_one() {
        let r = bernstein_mgf_check(&BoundedDistribution::Constant { value: 2.0 }, 0.0, &[0.1, 1.0], 5, 10, 1, Execution::Sequential).unwrap();
        assert!(r.pass);
        for m in &r.margins {
            assert_eq!(m.estimate, 1.0);
            assert_eq!(m.bound, 1.0);
        }
    }

    #[test]
    fn bernstein_precondition_enforced() {
        assert!(bernstein_mgf_check(&BoundedDistribution::Rademacher, 0.5, &[0.1], 10, 10, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn massart_uniform_case() {
        let u = BoundedDistribution::Uniform { lo: -1.0, hi: 1.0 };
        assert!(u.satisfies_massart(5, 5.0 / 3.0, 1.0));
        let r = bernstein_massart_check(&u, 5.0 / 3.0, 1.0, &[0.5], 5, 100_000, 3, Execution::Parallel).unwrap();
        assert!(r.pass);
        let exact = (0.5f64.sinh() / 0.5).powi(5);
        assert!((r.margins[0].exact.unwrap() - exact).abs() < 1e-14);
        // zeta -> 0: both sides -> 1
        let r = bernstein_massart_check(&u, 5.0 / 3.0, 1.0, &[1e-6], 5, 1000, 3, Execution::Parallel).unwrap();
        assert!((r.margins[0].bound - 1.0).abs() < 1e-11);
        assert!((r.margins[0].estimate - 1.0).abs() < 1e-5);
        assert!(bernstein_massart_check(&u, 5.0 / 3.0, 1.0, &[1.0], 5, 100, 3, Execution::Parallel).is_err());
        assert!(bernstein_massart_check(&u, 0.1, 1.0, &[0.5], 5, 100, 3, Execution::Parallel).is_err());
    }

    #[test]
    fn kl_numeric_examples() {
        let grid = uniform_grid(-15.0, 15.0, 30_001);
        let same = kl_numeric(normal_density(0.3, 1.2), normal_density(0.3, 1.2), &grid);
        assert!(same.abs() < 1e-8);
        let shifted = kl_numeric(normal_density(1.0, 1.0), normal_density(0.0, 1.0), &grid);
        assert!((shifted - 0.5).abs() < 1e-6);
        let disjoint = kl_numeric(
            |x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 },
            |x| if (2.0..3.0).contains(&x) { 1.0 } else { 0.0 },
            &uniform_grid(-1.0, 4.0, 501),
        );
        assert_eq!(disjoint, f64::INFINITY);
    }

    #[test]
    fn kl_closed_form_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let mean = rng.random_range(-2.0..=2.0);
            let sd = rng.random_range(0.3..=2.5);
            let prior = PriorSpec::standard();
            let closed = kl_gaussian_to_prior(&[mean], &[sd], &prior).unwrap();
            let numeric = kl_numeric_log(normal_log_density(mean, sd), normal_log_density(0.0, 1.0), &uniform_grid(-40.0, 40.0, 40_001));
            assert!(closed >= 0.0);
            assert!((numeric - closed).abs() <= 1e-6 * closed, "{mean} {sd}: {numeric} vs {closed}");
        }
    }

    #[test]
    fn catoni_quadratic_toy_closed_form() {
        // r(theta) = (theta - a)^2 + c, q = N(mu, s^2): E_q r = (mu - a)^2 + s^2 + c
        let (a, c, mu, s) = (0.7, 0.2, 0.3, 0.5);
        let q = FactorizedGaussian::new(vec![mu], vec![s]).unwrap();
        let prior = PriorSpec::standard();
        let (lambda, delta) = (20.0, 0.05);
        let b = catoni_bound_value(&q, &prior, lambda, delta, 20_000, 4, |t| (t[0] - a).powi(2) + c, Execution::Parallel).unwrap();
        let exact_risk = (mu - a).powi(2) + s * s + c;
        let kl = 0.5 * (s * s + mu * mu - 1.0 - 2.0 * s.ln());
        assert!((b.expected_empirical_risk.value - exact_risk).abs() < 3.0 * b.expected_empirical_risk.mc_se);
        assert!((b.kl - kl).abs() < 1e-14);
        let exact_bound = exact_risk + (kl + (2.0 / delta).ln()) / lambda;
        assert!((b.value - exact_bound).abs() < 3.0 * b.expected_empirical_risk.mc_se);
    }

    #[test]
    fn catoni_limits() {
        let q = FactorizedGaussian::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let prior = PriorSpec::standard();
        let b = catoni_bound_value(&q, &prior, 4.0, 0.1, 100, 1, |t| t[0] * t[0], Execution::Sequential).unwrap();
        assert_eq!(b.kl, 0.0);
        assert!((b.value - b.expected_empirical_risk.value - (20f64).ln() / 4.0).abs() < 1e-12);
        let q2 = FactorizedGaussian::new(vec![1.0, 0.0], vec![0.5, 1.0]).unwrap();
        let big = catoni_bound_value(&q2, &prior, 1e12, 0.1, 100, 1, |t| t[0] * t[0], Execution::Sequential).unwrap();
        assert!((big.value - big.expected_empirical_risk.value).abs() < 1e-10);
        assert!(catoni_bound_value(&q, &prior, 1.0, 1.0, 100, 1, |_| 0.0, Execution::Sequential).is_err());
    }

    #[test]
    fn lemma_suite_passes() {
        let reports = verify_lemmas(2024, Execution::Parallel).unwrap();
        for r in &reports {
            assert!(r.pass, "{}: {:?}", r.check_name, r.margins.iter().filter(|m| !m.pass).collect::<Vec<_>>());
        }
        assert!(reports.len() >= 9);
    }
}
