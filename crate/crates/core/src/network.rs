//! Fully connected networks with a shared hidden width.
//!
//! A network of depth `L` and width `D` on inputs of dimension `d` is the
//! recursion
//!
//! ```text
//! h0 = x
//! h_l = phi(W_l h_{l-1} + b_l)            l = 1 .. L-1   (width D)
//! f(x) = clamp_C(phi(w_L . h_{L-1} + b_L))               (scalar)
//! ```
//!
//! The coefficients are stacked into a flat vector of length `L * D * (D + 1)`:
//! `L` blocks of a row-major `D x D` weight matrix followed by `D` biases. The
//! first block only reads its first `d` columns and the last block only its
//! first row and first bias; the unread coordinates are carried along but do
//! not influence the output.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    LeakyRelu { slope: f64 },
    /// The logistic sigmoid. `sigmoid(0) = 1/2`, so it violates `|phi(x)| <= |x|`;
    /// reports built on it carry a noncompliance flag.
    SigmoidNoncompliant,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::SigmoidNoncompliant => sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x` given the already computed `y = apply(x)`.
    #[inline]
    pub fn derivative_with_output(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::SigmoidNoncompliant => y * (1.0 - y),
            _ => self.derivative(x),
        }
    }

    /// Derivative, with the subgradient at kinks taken from the left
    /// (`relu'(0) = 0`, `leaky_relu'(0) = slope`).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::SigmoidNoncompliant => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// Whether `|phi(x)| <= |x|` and `phi` is 1-Lipschitz.
    pub fn is_compliant(self) -> bool {
        !matches!(self, Activation::SigmoidNoncompliant)
    }

    /// True when `phi` has a kink at 0 where the finite-difference check is excluded.
    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    pub fn is_odd(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Identity)
    }

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Identity => f.write_str("identity"),
            Activation::LeakyRelu { slope } if *slope == DEFAULT_LEAKY_SLOPE => {
                f.write_str("leaky_relu")
            }
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu({slope})"),
            Activation::SigmoidNoncompliant => f.write_str("sigmoid"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "relu" => return Ok(Activation::Relu),
            "tanh" => return Ok(Activation::Tanh),
            "identity" => return Ok(Activation::Identity),
            "leaky_relu" => return Ok(Activation::leaky_relu()),
            "sigmoid" | "sigmoid_noncompliant" => return Ok(Activation::SigmoidNoncompliant),
            _ => {}
        }
        let slope = s
            .strip_prefix("leaky_relu(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown activation `{s}`")))?;
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )));
        }
        Ok(Activation::LeakyRelu { slope })
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    depth: usize,
    width: usize,
    input_dim: usize,
    activation: Activation,
}

impl NetworkArchitecture {
    pub fn new(depth: usize, width: usize, input_dim: usize, activation: Activation) -> Result<Self> {
        if depth < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "depth must be at least 3, got {depth}"
            )));
        }
        if input_dim == 0 {
            return Err(Error::InvalidArchitecture("input dimension must be positive".into()));
        }
        if width < input_dim {
            return Err(Error::InvalidArchitecture(format!(
                "width {width} is smaller than input dimension {input_dim}"
            )));
        }
        if let Activation::LeakyRelu { slope } = activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::InvalidArchitecture(format!(
                    "leaky_relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(Self {
            depth,
            width,
            input_dim,
            activation,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `T = L * D * (D + 1)`.
    pub fn parameter_count(&self) -> usize {
        self.depth * self.width * (self.width + 1)
    }

    fn block_len(&self) -> usize {
        self.width * (self.width + 1)
    }
}

/// Stacked network coefficients, each bounded in absolute value by `bound_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    bound_b: f64,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, bound_b: f64) -> Result<Self> {
        if !(bound_b >= 1.0) {
            return Err(Error::InvalidParameter(format!("bound B must be >= 1, got {bound_b}")));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() <= bound_b))
        {
            return Err(Error::InvalidParameter(format!(
                "coefficient {i} = {v} exceeds bound {bound_b}"
            )));
        }
        Ok(Self { values, bound_b })
    }

    /// Parameter vector with no coefficient bound (untruncated prior).
    pub fn unbounded(values: Vec<f64>) -> Self {
        Self {
            values,
            bound_b: f64::INFINITY,
        }
    }

    pub fn zeros(arch: &NetworkArchitecture, bound_b: f64) -> Result<Self> {
        Self::new(vec![0.0; arch.parameter_count()], bound_b)
    }

    pub fn bound_b(&self) -> f64 {
        self.bound_b
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    /// Writes the little-endian binary form: a `u64` count followed by the values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary form written by [`ParameterVector::write_to`].
    pub fn read_from<R: Read>(mut r: R, bound_b: f64) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("missing length header: {e}")))?;
        let len = u64::from_le_bytes(header) as usize;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != len * 8 {
            return Err(Error::Format(format!(
                "header declares {len} values but payload holds {} bytes",
                buf.len()
            )));
        }
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if bound_b.is_infinite() {
            Ok(Self::unbounded(values))
        } else {
            Self::new(values, bound_b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampSpec {
    output_bound_c: f64,
}

impl ClampSpec {
    pub fn new(output_bound_c: f64) -> Result<Self> {
        if !(output_bound_c >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "output bound C must be >= 1, got {output_bound_c}"
            )));
        }
        Ok(Self { output_bound_c })
    }

    pub fn bound(&self) -> f64 {
        self.output_bound_c
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        v.clamp(-self.output_bound_c, self.output_bound_c)
    }

    /// One strictly inside `(-C, C)`, zero elsewhere.
    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        if v.abs() < self.output_bound_c {
            1.0
        } else {
            0.0
        }
    }
}

/// JSON form of an architecture together with its coefficient and output bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureFile {
    #[serde(rename = "L")]
    pub depth: usize,
    #[serde(rename = "D")]
    pub width: usize,
    #[serde(rename = "d")]
    pub input_dim: usize,
    pub activation: Activation,
    /// `null` in JSON when coefficients are unbounded.
    #[serde(rename = "B", with = "infinite_as_null")]
    pub bound_b: f64,
    #[serde(rename = "C")]
    pub clamp_c: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ArchitectureFile {
    pub fn new(arch: &NetworkArchitecture, bound_b: f64, clamp: ClampSpec) -> Self {
        Self {
            depth: arch.depth,
            width: arch.width,
            input_dim: arch.input_dim,
            activation: arch.activation,
            bound_b,
            clamp_c: clamp.bound(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn network(&self) -> Result<Network> {
        let arch = NetworkArchitecture::new(self.depth, self.width, self.input_dim, self.activation)?;
        Ok(Network::new(arch, ClampSpec::new(self.clamp_c)?))
    }
}

/// Reusable buffers for evaluating one network.
#[derive(Debug, Clone)]
pub struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
    // pre-activations, one row of `D` per hidden layer
    pre: Vec<f64>,
    // post-activations, one row of `D` per hidden layer
    post: Vec<f64>,
    delta: Vec<f64>,
    back: Vec<f64>,
}

/// An architecture paired with its output clamp; the unit the rest of the
/// crate evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Network {
    arch: NetworkArchitecture,
    clamp: ClampSpec,
}

impl Network {
    pub fn new(arch: NetworkArchitecture, clamp: ClampSpec) -> Self {
        Self { arch, clamp }
    }

    pub fn arch(&self) -> &NetworkArchitecture {
        &self.arch
    }

    pub fn clamp(&self) -> ClampSpec {
        self.clamp
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    pub fn workspace(&self) -> Workspace {
        let d = self.arch.width;
        let hidden = self.arch.depth - 1;
        Workspace {
            a: vec![0.0; d],
            b: vec![0.0; d],
            pre: vec![0.0; hidden * d],
            post: vec![0.0; hidden * d],
            delta: vec![0.0; d],
            back: vec![0.0; d],
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: theta.len(),
                context: "parameter vector length",
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: x.len(),
                context: "input dimension",
            });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            log::warn!("input {x:?} lies outside the unit cube");
        }
        Ok(())
    }

    /// Clamped network output at `x`.
    pub fn forward(&self, theta: &ParameterVector, x: &[f64]) -> Result<f64> {
        self.check_theta(theta.as_slice())?;
        self.check_input(x)?;
        Ok(self.eval(theta.as_slice(), x, &mut self.workspace()))
    }

    /// Row-wise [`Network::forward`]; bit-identical to calling it per row.
    pub fn forward_batch(&self, theta: &ParameterVector, xs: &Matrix) -> Result<Vec<f64>> {
        self.check_theta(theta.as_slice())?;
        if xs.cols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: xs.cols(),
                context: "input dimension",
            });
        }
        if xs.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            log::warn!("batch contains inputs outside the unit cube");
        }
        let mut ws = self.workspace();
        Ok(xs.iter_rows().map(|x| self.eval(theta.as_slice(), x, &mut ws)).collect())
    }

    /// Unchecked evaluation. Panics if `theta` or `x` have the wrong length.
    #[inline]
    pub fn eval(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
        let z = self.eval_preclamp(theta, x, ws);
        self.clamp.apply(self.arch.activation.apply(z))
    }

    /// Output pre-activation `w_L . h_{L-1} + b_L`, before `phi` and the clamp.
    pub fn eval_preclamp(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
        let width = self.arch.width;
        let bl = self.arch.block_len();
        let act = self.arch.activation;
        assert_eq!(theta.len(), self.parameter_count(), "parameter vector length");
        assert_eq!(x.len(), self.arch.input_dim, "input dimension");

        let (mut cur, mut next) = (&mut ws.a, &mut ws.b);
        let mut in_dim = x.len();
        cur[..in_dim].copy_from_slice(x);
        for layer in 0..self.arch.depth - 1 {
            let block = &theta[layer * bl..(layer + 1) * bl];
            let (w, bias) = block.split_at(width * width);
            for i in 0..width {
                let row = &w[i * width..i * width + in_dim];
                let z = bias[i] + dot(row, &cur[..in_dim]);
                next[i] = act.apply(z);
            }
            std::mem::swap(&mut cur, &mut next);
            in_dim = width;
        }
        let last = &theta[(self.arch.depth - 1) * bl..];
        last[width * width] + dot(&last[..width], &cur[..width])
    }

    /// Gradient of the clamped output with respect to every coefficient,
    /// written into `grad` (length `T`). Returns the output value.
    pub fn grad_output_wrt_theta(&self, theta: &[f64], x: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
        assert_eq!(grad.len(), self.parameter_count(), "gradient length");
        grad.fill(0.0);
        self.accumulate_grad(theta, x, grad, ws, |_| 1.0)
    }

    /// Forward pass at `x`, then adds `s * d(output)/d(theta)` to `grad`
    /// where `s = seed(output)`. Returns the output value.
    #[inline]
    pub(crate) fn accumulate_grad<S>(&self, theta: &[f64], x: &[f64], grad: &mut [f64], ws: &mut Workspace, seed: S) -> f64
    where
        S: FnOnce(f64) -> f64,
    {
        let width = self.arch.width;
        let hidden = self.arch.depth - 1;
        let bl = self.arch.block_len();
        let act = self.arch.activation;
        assert_eq!(theta.len(), self.parameter_count(), "parameter vector length");
        assert_eq!(grad.len(), self.parameter_count(), "gradient length");
        assert_eq!(x.len(), self.arch.input_dim, "input dimension");

        // forward pass, caching pre- and post-activations
        for layer in 0..hidden {
            let block = &theta[layer * bl..(layer + 1) * bl];
            let (w, bias) = block.split_at(width * width);
            let (done, rest) = ws.post.split_at_mut(layer * width);
            let input: &[f64] = if layer == 0 { x } else { &done[(layer - 1) * width..] };
            let in_dim = input.len();
            for i in 0..width {
                let z = bias[i] + dot(&w[i * width..i * width + in_dim], input);
                ws.pre[layer * width + i] = z;
                rest[i] = act.apply(z);
            }
        }
        let last_off = hidden * bl;
        let h_last = &ws.post[(hidden - 1) * width..hidden * width];
        let z_out = theta[last_off + width * width] + dot(&theta[last_off..last_off + width], h_last);
        let phi_out = act.apply(z_out);
        let out = self.clamp.apply(phi_out);

        // output layer
        let g = self.clamp.derivative(phi_out) * act.derivative_with_output(z_out, phi_out);
        if g == 0.0 {
            return out;
        }
        let g = g * seed(out);
        if g == 0.0 {
            return out;
        }
        for j in 0..width {
            grad[last_off + j] += g * h_last[j];
            ws.back[j] = g * theta[last_off + j];
        }
        grad[last_off + width * width] += g;

        // hidden layers, last to first
        for layer in (0..hidden).rev() {
            let off = layer * bl;
            for i in 0..width {
                ws.delta[i] = ws.back[i] * act.derivative_with_output(ws.pre[layer * width + i], ws.post[layer * width + i]);
            }
            let input: &[f64] = if layer == 0 {
                x
            } else {
                &ws.post[(layer - 1) * width..layer * width]
            };
            let in_dim = input.len();
            for i in 0..width {
                let di = ws.delta[i];
                let row = &mut grad[off + i * width..off + i * width + in_dim];
                for (gj, &hj) in row.iter_mut().zip(input) {
                    *gj += di * hj;
                }
                grad[off + width * width + i] += di;
            }
            if layer > 0 {
                for j in 0..width {
                    let mut s = 0.0;
                    for i in 0..width {
                        s += ws.delta[i] * theta[off + i * width + j];
                    }
                    ws.back[j] = s;
                }
            }
        }
        out
    }

    /// Checked gradient returning a fresh vector.
    pub fn grad(&self, theta: &ParameterVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta.as_slice())?;
        self.check_input(x)?;
        let mut g = vec![0.0; self.parameter_count()];
        self.grad_output_wrt_theta(theta.as_slice(), x, &mut g, &mut self.workspace());
        Ok(g)
    }

    /// Smallest distance from a kink (relu hinge or clamp edge) along the
    /// evaluation at `x`; finite-difference checks skip points where it is tiny.
    pub fn kink_distance(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
        let mut g = vec![0.0; self.parameter_count()];
        self.grad_output_wrt_theta(theta, x, &mut g, ws);
        let mut dist = f64::INFINITY;
        if self.arch.activation.has_kink() {
            dist = ws.pre.iter().fold(dist, |m, z| m.min(z.abs()));
        }
        let z_out = self.eval_preclamp(theta, x, ws);
        if self.arch.activation.has_kink() {
            dist = dist.min(z_out.abs());
        }
        let phi_out = self.arch.activation.apply(z_out);
        let c = self.clamp.bound();
        dist.min((phi_out - c).abs()).min((phi_out + c).abs())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
