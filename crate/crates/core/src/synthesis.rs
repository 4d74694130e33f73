//! Synthetic ground truth: target functions on `[0,1]^d`, noise models,
//! regression and logistic datasets, and Monte Carlo validators for the
//! sub-Gamma noise and margin conditions.
//!
//! Target smoothness is nominal metadata. Each family documents the class it
//! belongs to analytically; nothing here certifies Besov membership.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::matrix::Matrix;
use crate::network::sigmoid;

const SINE_TERMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetKind {
    /// `s * sum_k k^{-(beta+1)} sin(2 pi k u + k) / sum_k k^{-(beta+1)}` on
    /// `u = mean(x)`; Fourier weights decay like a Hölder-`beta` function.
    SineMix { scale: f64 },
    /// `s * (0.625 t + 0.375 t^3)` with `t = 2u - 1`; infinitely smooth, `sup = s`.
    PolySmooth { scale: f64 },
    /// Piecewise constant in `u`: `-s` on `[0, 1/2)`, `+s` on `[1/2, 1]`.
    /// Bounded and discontinuous.
    StepBesov { scale: f64 },
    /// `s * prod_j cos(pi x_j)`; smooth, vanishes on the mid-hyperplanes.
    TensorProduct { scale: f64 },
    /// `slope * (x_1 - offset)`.
    Linear { slope: f64, offset: f64 },
    Constant { value: f64 },
}

/// Ground-truth regression function or logit, with its nominal smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub kind: TargetKind,
    pub nominal_beta: f64,
}

impl TargetFunction {
    pub fn new(kind: TargetKind, nominal_beta: f64) -> Result<Self> {
        if !(nominal_beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {nominal_beta}")));
        }
        Ok(Self { kind, nominal_beta })
    }

    pub fn sine_mix(beta: f64) -> Self {
        Self::new(TargetKind::SineMix { scale: 0.8 }, beta).expect("valid beta")
    }

    pub fn poly_smooth(beta: f64) -> Self {
        Self::new(TargetKind::PolySmooth { scale: 0.8 }, beta).expect("valid beta")
    }

    pub fn step_besov(beta: f64) -> Self {
        Self::new(TargetKind::StepBesov { scale: 0.7 }, beta).expect("valid beta")
    }

    pub fn tensor_product(beta: f64) -> Self {
        Self::new(TargetKind::TensorProduct { scale: 0.8 }, beta).expect("valid beta")
    }

    pub fn constant(value: f64) -> Self {
        Self::new(TargetKind::Constant { value }, 1.0).expect("valid beta")
    }

    pub fn linear(slope: f64, offset: f64) -> Self {
        Self::new(TargetKind::Linear { slope, offset }, 1.0).expect("valid beta")
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            TargetKind::SineMix { .. } => "sine_mix",
            TargetKind::PolySmooth { .. } => "poly_smooth",
            TargetKind::StepBesov { .. } => "step_besov",
            TargetKind::TensorProduct { .. } => "tensor_product",
            TargetKind::Linear { .. } => "linear",
            TargetKind::Constant { .. } => "constant",
        }
    }

    /// Builds a named default target (`sup <= 1`).
    pub fn by_id(id: &str, beta: f64) -> Result<Self> {
        let t = match id {
            "sine_mix" => Self::sine_mix(beta),
            "poly_smooth" => Self::poly_smooth(beta),
            "step_besov" => Self::step_besov(beta),
            "tensor_product" => Self::tensor_product(beta),
            _ => return Err(Error::InvalidParameter(format!("unknown target `{id}`"))),
        };
        Self::new(t.kind, beta)
    }

    /// Upper bound on `|f(x)|` over the unit cube.
    pub fn sup_bound(&self) -> f64 {
        match self.kind {
            TargetKind::SineMix { scale }
            | TargetKind::PolySmooth { scale }
            | TargetKind::StepBesov { scale }
            | TargetKind::TensorProduct { scale } => scale.abs(),
            TargetKind::Linear { slope, offset } => slope.abs() * offset.abs().max((1.0 - offset).abs()),
            TargetKind::Constant { value } => value.abs(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mean = || x.iter().sum::<f64>() / x.len() as f64;
        match self.kind {
            TargetKind::SineMix { scale } => {
                let u = mean();
                let p = self.nominal_beta + 1.0;
                let (mut num, mut den) = (0.0, 0.0);
                for k in 1..=SINE_TERMS {
                    let kf = k as f64;
                    let w = kf.powf(-p);
                    num += w * (2.0 * std::f64::consts::PI * kf * u + kf).sin();
                    den += w;
                }
                scale * num / den
            }
            TargetKind::PolySmooth { scale } => {
                let t = 2.0 * mean() - 1.0;
                scale * (0.625 * t + 0.375 * t * t * t)
            }
            TargetKind::StepBesov { scale } => {
                if mean() < 0.5 {
                    -scale
                } else {
                    scale
                }
            }
            TargetKind::TensorProduct { scale } => {
                scale * x.iter().map(|v| (std::f64::consts::PI * v).cos()).product::<f64>()
            }
            TargetKind::Linear { slope, offset } => slope * (x[0] - offset),
            TargetKind::Constant { value } => value,
        }
    }

    /// `eta(x) = sigmoid(f(x))`, the probability of label `+1`.
    pub fn eta(&self, x: &[f64]) -> f64 {
        sigmoid(self.eval(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    /// Uniform on `[-a, a]`.
    BoundedUniform { a: f64 },
    /// `G - shape * scale` with `G ~ Gamma(shape, scale)`.
    ScaledCenteredGamma { shape: f64, scale: f64 },
    /// Student t scaled to unit variance; heavy-tailed negative control, never a default.
    StudentT { df: f64 },
}

impl NoiseModel {
    pub fn id(&self) -> &'static str {
        match self {
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::BoundedUniform { .. } => "bounded_uniform",
            NoiseModel::ScaledCenteredGamma { .. } => "scaled_centered_gamma",
            NoiseModel::StudentT { .. } => "student_t",
        }
    }

    /// The `(sigma, varsigma)` pair this model is shipped with.
    pub fn declared_sub_gamma(&self) -> (f64, f64) {
        match *self {
            NoiseModel::Gaussian { sigma } => (sigma, sigma),
            NoiseModel::BoundedUniform { a } => (a / 3f64.sqrt(), a),
            NoiseModel::ScaledCenteredGamma { shape, scale } => (shape.sqrt() * scale, scale * shape.sqrt().max(2.0)),
            NoiseModel::StudentT { .. } => (1.0, 1.0),
        }
    }

    /// Shipped defaults; every one of them satisfies its declared sub-Gamma pair.
    pub fn defaults() -> Vec<NoiseModel> {
        vec![
            NoiseModel::Gaussian { sigma: 1.0 },
            NoiseModel::BoundedUniform { a: 1.0 },
            NoiseModel::ScaledCenteredGamma { shape: 2.0, scale: 0.5 },
        ]
    }

    pub fn sampler(&self) -> Result<NoiseSampler> {
        Ok(match *self {
            NoiseModel::Gaussian { sigma: 0.0 } => NoiseSampler::Zero,
            NoiseModel::Gaussian { sigma } => NoiseSampler::Normal(
                Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?,
            ),
            NoiseModel::BoundedUniform { a } => {
                if !(a > 0.0) {
                    return Err(Error::InvalidParameter(format!("uniform half-width must be positive, got {a}")));
                }
                NoiseSampler::Uniform(a)
            }
            NoiseModel::ScaledCenteredGamma { shape, scale } => NoiseSampler::Gamma(
                Gamma::new(shape, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?,
                shape * scale,
            ),
            NoiseModel::StudentT { df } => {
                if !(df > 2.0) {
                    return Err(Error::InvalidParameter(format!(
                        "unit-variance Student t needs df > 2, got {df}"
                    )));
                }
                NoiseSampler::StudentT(
                    StudentT::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?,
                    ((df - 2.0) / df).sqrt(),
                )
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum NoiseSampler {
    Zero,
    Normal(Normal<f64>),
    Uniform(f64),
    Gamma(Gamma<f64>, f64),
    StudentT(StudentT<f64>, f64),
}

impl NoiseSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSampler::Zero => 0.0,
            NoiseSampler::Normal(n) => n.sample(rng),
            NoiseSampler::Uniform(a) => rng.random_range(-a..=*a),
            NoiseSampler::Gamma(g, mean) => g.sample(rng) - mean,
            NoiseSampler::StudentT(t, scale) => t.sample(rng) * scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub target: TargetFunction,
    pub noise: Option<NoiseModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub task: Task,
    pub seed: u64,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    task: Task,
    n: usize,
    d: usize,
    seed: u64,
    provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Writes `<stem>.csv` (header `x1..xd,y`) and `<stem>.json` provenance.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (row, y) in self.x.iter_rows().zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{y:?}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let sidecar = DatasetSidecar {
            task: self.task,
            n: self.len(),
            d: self.dim(),
            seed: self.seed,
            provenance: self.provenance.clone(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let sidecar: DatasetSidecar = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut data = Vec::with_capacity(sidecar.n * sidecar.d);
        let mut y = Vec::with_capacity(sidecar.n);
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad CSV value `{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != sidecar.d + 1 {
                return Err(Error::Format(format!("expected {} columns, got {}", sidecar.d + 1, vals.len())));
            }
            data.extend_from_slice(&vals[..sidecar.d]);
            y.push(vals[sidecar.d]);
        }
        Ok(Self {
            x: Matrix::new(y.len(), sidecar.d, data)?,
            y,
            task: sidecar.task,
            seed: sidecar.seed,
            provenance: sidecar.provenance,
        })
    }
}

fn uniform_design<R: Rng>(n: usize, d: usize, rng: &mut R) -> Matrix {
    let data = (0..n * d).map(|_| rng.random::<f64>()).collect();
    Matrix::new(n, d, data).expect("consistent shape")
}

/// `X ~ U([0,1]^d)` iid and `Y = f0(X) + eps`.
pub fn make_regression_dataset(f0: &TargetFunction, noise: &NoiseModel, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("datasets need n >= 1 and d >= 1".into()));
    }
    let sampler = noise.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_design(n, d, &mut rng);
    let y = x.iter_rows().map(|row| f0.eval(row) + sampler.sample(&mut rng)).collect();
    Ok(Dataset {
        x,
        y,
        task: Task::Regression,
        seed,
        provenance: Provenance {
            target: *f0,
            noise: Some(*noise),
        },
    })
}

/// `X ~ U([0,1]^d)` iid and `Y = +1` with probability `sigmoid(f0(X))`, else `-1`.
pub fn make_classification_dataset(f0: &TargetFunction, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("datasets need n >= 1 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_design(n, d, &mut rng);
    let y = x
        .iter_rows()
        .map(|row| if rng.random::<f64>() < f0.eta(row) { 1.0 } else { -1.0 })
        .collect();
    Ok(Dataset {
        x,
        y,
        task: Task::Classification,
        seed,
        provenance: Provenance {
            target: *f0,
            noise: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMargin {
    pub k: u32,
    pub estimate: f64,
    /// Sample standard error of `estimate`.
    pub se: f64,
    /// Standard error implied by the declared pair at order `2k`:
    /// `sqrt(((2k)!/2) sigma^2 varsigma^(2k-2) / mc_n)`.
    pub se_declared: f64,
    pub bound: f64,
    /// `bound + 3 se_declared - estimate`; negative means the order fails.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGammaReport {
    pub noise: NoiseModel,
    pub sigma: f64,
    pub varsigma: f64,
    pub pass: bool,
    pub margins: Vec<MomentMargin>,
}

impl SubGammaReport {
    pub fn failing_orders(&self) -> Vec<u32> {
        self.margins.iter().filter(|m| !m.pass).map(|m| m.k).collect()
    }
}

const MC_CHUNK: usize = 1 << 16;

fn moment_bound(k: u32, sigma: f64, varsigma: f64) -> f64 {
    let factorial: f64 = (1..=k).map(f64::from).product();
    factorial / 2.0 * sigma * sigma * varsigma.powi(k as i32 - 2)
}

/// Monte Carlo check of `E|eps|^k <= (k!/2) sigma^2 varsigma^(k-2)` for `k = 2..=k_max`.
///
/// Order `k` passes iff the estimate is at most `bound + 3 se`, where `se` is
/// the standard error the estimator would have if the condition held at order
/// `2k`. The sample standard error is reported too, but it is useless as a
/// yardstick for heavy tails: the draws that inflate the moment estimate
/// inflate it just as much.
pub fn validate_sub_gamma(
    noise: &NoiseModel,
    sigma: f64,
    varsigma: f64,
    k_max: u32,
    mc_n: usize,
    seed: u64,
    exec: Execution,
) -> Result<SubGammaReport> {
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!("k_max must be >= 2, got {k_max}")));
    }
    if mc_n < 2 {
        return Err(Error::InvalidParameter("need at least two Monte Carlo draws".into()));
    }
    let sampler = noise.sampler()?;
    let orders = (k_max - 1) as usize;
    let chunks = mc_n.div_ceil(MC_CHUNK);
    // per chunk: sums of |e|^k and |e|^{2k}
    let partials = exec.map(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[c as u64]));
        let len = MC_CHUNK.min(mc_n - c * MC_CHUNK);
        let mut s1 = vec![0.0; orders];
        let mut s2 = vec![0.0; orders];
        for _ in 0..len {
            let e = sampler.sample(&mut rng).abs();
            let mut p = e;
            for i in 0..orders {
                p *= e;
                s1[i] += p;
                s2[i] += p * p;
            }
        }
        (s1, s2)
    });
    let nf = mc_n as f64;
    let mut margins = Vec::with_capacity(orders);
    for i in 0..orders {
        let k = i as u32 + 2;
        let s1: f64 = partials.iter().map(|p| p.0[i]).sum();
        let s2: f64 = partials.iter().map(|p| p.1[i]).sum();
        let mean = s1 / nf;
        let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
        let se = (var / nf).sqrt();
        let bound = moment_bound(k, sigma, varsigma);
        let se_declared = (moment_bound(2 * k, sigma, varsigma) / nf).sqrt();
        let margin = bound + 3.0 * se_declared - mean;
        margins.push(MomentMargin {
            k,
            estimate: mean,
            se,
            se_declared,
            bound,
            margin,
            pass: margin >= 0.0,
        });
    }
    Ok(SubGammaReport {
        noise: *noise,
        sigma,
        varsigma,
        pass: margins.iter().all(|m| m.pass),
        margins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub h: f64,
    pub probability: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub c_mg: f64,
    pub pass: bool,
    pub rows: Vec<MarginRow>,
}

/// Monte Carlo check of `P(|eta(X) - 1/2| <= h) <= c_mg h` over `X ~ U([0,1]^d)`.
pub fn check_margin_condition(
    f0: &TargetFunction,
    d: usize,
    c_mg: f64,
    h_grid: &[f64],
    mc_n: usize,
    seed: u64,
    exec: Execution,
) -> Result<MarginReport> {
    if let Some(h) = h_grid.iter().find(|h| !(**h > 0.0 && **h < 0.5)) {
        return Err(Error::InvalidParameter(format!("margin grid values must lie in (0, 1/2), got {h}")));
    }
    if mc_n < 2 || d == 0 {
        return Err(Error::InvalidParameter("margin check needs mc_n >= 2 and d >= 1".into()));
    }
    let chunks = mc_n.div_ceil(MC_CHUNK);
    let partials = exec.map(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[c as u64]));
        let len = MC_CHUNK.min(mc_n - c * MC_CHUNK);
        let mut counts = vec![0usize; h_grid.len()];
        let mut x = vec![0.0; d];
        for _ in 0..len {
            x.iter_mut().for_each(|v| *v = rng.random());
            let gap = (f0.eta(&x) - 0.5).abs();
            for (cnt, h) in counts.iter_mut().zip(h_grid) {
                if gap <= *h {
                    *cnt += 1;
                }
            }
        }
        counts
    });
    let nf = mc_n as f64;
    let rows: Vec<MarginRow> = h_grid
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let hits: usize = partials.iter().map(|p| p[i]).sum();
            let p = hits as f64 / nf;
            let se = (p * (1.0 - p) / nf).sqrt();
            let bound = c_mg * h;
            MarginRow {
                h,
                probability: p,
                se,
                bound,
                pass: p <= bound + 3.0 * se,
            }
        })
        .collect();
    Ok(MarginReport {
        c_mg,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}
