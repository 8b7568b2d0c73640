//! State and co-state multilayer perceptrons.
//!
//! Both networks read `(x₀, τ)`. Their parameters live in one flat vector so a
//! single optimizer updates them together. The batched forward pass carries a
//! tangent with respect to τ through every layer (rows `0..B` hold values,
//! rows `B..2B` the τ-derivatives), which makes `∂/∂τ` of every output
//! available without a second pass. [`PinnModel::backward`] is the matching
//! reverse sweep over that forward-with-tangent computation, so residuals
//! built from τ-derivatives can be differentiated with respect to all
//! parameters.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{sigmoid, Scalar};
use crate::pmp::Workspace;

/// Coefficient of the co-state weight penalty.
pub const L2_COEFFICIENT: f64 = 1e-6;

const MAGIC: &[u8; 8] = b"TPINNMDL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("non-finite activation in {network} network, layer {layer}")]
    NonFinite { network: &'static str, layer: usize },
    #[error("invalid layer specification: {0}")]
    Spec(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// `α sin(β z)` with trainable per-layer α, β.
    AdaptiveSine,
    Silu,
    Identity,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Self::AdaptiveSine => 0,
            Self::Silu => 1,
            Self::Identity => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::AdaptiveSine),
            1 => Some(Self::Silu),
            2 => Some(Self::Identity),
            _ => None,
        }
    }

    /// (φ, φ', φ'') at `z`.
    #[inline]
    fn eval(self, z: f64, alpha: f64, beta: f64) -> (f64, f64, f64) {
        match self {
            Self::AdaptiveSine => {
                let (s, c) = (beta * z).sin_cos();
                (alpha * s, alpha * beta * c, -alpha * beta * beta * s)
            }
            Self::Silu => {
                let sg = sigmoid(z);
                let d = sg * (1.0 + z * (1.0 - sg));
                let dd = sg * (1.0 - sg) * (2.0 + z * (1.0 - 2.0 * sg));
                (z * sg, d, dd)
            }
            Self::Identity => (z, 1.0, 0.0),
        }
    }

    fn apply<S: Scalar>(self, z: S, alpha: S, beta: S) -> S {
        match self {
            Self::AdaptiveSine => alpha * (beta * z).sin(),
            Self::Silu => z * z.sigmoid(),
            Self::Identity => z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Hidden-layer stack of one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn uniform(depth: usize, width: usize, activation: Activation) -> Self {
        Self {
            hidden: vec![LayerSpec::new(width, activation); depth],
        }
    }

    /// 3 × 128 adaptive-sine layers.
    pub fn state_default() -> Self {
        Self::uniform(3, 128, Activation::AdaptiveSine)
    }

    /// 5 × 128 SiLU layers.
    pub fn costate_default() -> Self {
        Self::uniform(5, 128, Activation::Silu)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.hidden.iter().any(|l| l.width == 0) {
            return Err(NetworkError::Spec("layer width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
    activation: Activation,
    /// Offset of (α, β) for adaptive layers.
    adaptive: Option<usize>,
}

/// Parameter layout and evaluation of one perceptron. Offsets are absolute
/// positions in the owning model's parameter vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    name: &'static str,
    inputs: usize,
    outputs: usize,
    spec: NetSpec,
    layers: Vec<Layer>,
    start: usize,
    end: usize,
}

/// Values kept from the forward pass for the reverse sweep.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    rows: usize,
    /// Stacked `[a; ȧ]` entering each layer (index 0 is the network input).
    acts: Vec<Array2<f64>>,
    /// Stacked `[z; ż]` of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    fn new(name: &'static str, inputs: usize, spec: NetSpec, outputs: usize, start: usize) -> Self {
        let mut layers = Vec::new();
        let mut offset = start;
        let mut fan_in = inputs;
        let widths: Vec<(usize, Activation)> = spec
            .hidden
            .iter()
            .map(|l| (l.width, l.activation))
            .chain(std::iter::once((outputs, Activation::Identity)))
            .collect();
        let n_hidden = spec.hidden.len();
        for (k, (fan_out, activation)) in widths.into_iter().enumerate() {
            let weight = offset;
            let bias = weight + fan_in * fan_out;
            offset = bias + fan_out;
            let adaptive = if activation == Activation::AdaptiveSine && k < n_hidden {
                let at = offset;
                offset += 2;
                Some(at)
            } else {
                None
            };
            layers.push(Layer {
                fan_in,
                fan_out,
                weight,
                bias,
                activation,
                adaptive,
            });
            fan_in = fan_out;
        }
        Self {
            name,
            inputs,
            outputs,
            spec,
            layers,
            start,
            end: offset,
        }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    /// Ranges of every weight matrix (biases and activation parameters excluded).
    pub fn weight_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.layers.iter().map(|l| l.weight..l.bias)
    }

    fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut params[l.weight..l.bias] {
                *w = rng.random_range(-limit..limit);
            }
            params[l.bias..l.bias + l.fan_out].fill(0.0);
            if let Some(at) = l.adaptive {
                params[at] = 1.0;
                params[at + 1] = 1.0;
            }
        }
    }

    fn weight<'a>(&self, params: &'a [f64], l: &Layer) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((l.fan_in, l.fan_out), &params[l.weight..l.bias]).expect("layout")
    }

    /// Forward pass over stacked `[input; input tangent]` (2B rows).
    pub fn forward(&self, params: &[f64], input: Array2<f64>) -> Result<(Array2<f64>, MlpTrace), NetworkError> {
        let rows = input.nrows() / 2;
        debug_assert_eq!(input.ncols(), self.inputs);
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut a = input;
        for (k, l) in self.layers.iter().enumerate() {
            let w = self.weight(params, l);
            let mut z = Array2::<f64>::zeros((2 * rows, l.fan_out));
            general_mat_mul(1.0, &a, &w, 0.0, &mut z);
            let bias = &params[l.bias..l.bias + l.fan_out];
            z.slice_mut(s![..rows, ..])
                .rows_mut()
                .into_iter()
                .for_each(|mut row| row.iter_mut().zip(bias).for_each(|(v, b)| *v += b));
            acts.push(a);
            if k + 1 == self.layers.len() {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(NetworkError::NonFinite {
                        network: self.name,
                        layer: k,
                    });
                }
                return Ok((z, MlpTrace { rows, acts, pre }));
            }
            let (alpha, beta) = l.adaptive.map_or((1.0, 1.0), |at| (params[at], params[at + 1]));
            let mut next = Array2::<f64>::zeros(z.raw_dim());
            {
                let zs = z.as_slice().expect("standard layout");
                let ns = next.as_slice_mut().expect("standard layout");
                let half = rows * l.fan_out;
                let mut finite = true;
                for i in 0..half {
                    let (f, d, _) = l.activation.eval(zs[i], alpha, beta);
                    ns[i] = f;
                    ns[half + i] = d * zs[half + i];
                    finite &= f.is_finite() && ns[half + i].is_finite();
                }
                if !finite {
                    return Err(NetworkError::NonFinite {
                        network: self.name,
                        layer: k,
                    });
                }
            }
            pre.push(z);
            a = next;
        }
        unreachable!("output layer is always last")
    }

    /// Reverse sweep. `out_adj` holds stacked `[ȳ; ẏ̄]`; parameter gradients
    /// are accumulated into `grad`.
    pub fn backward(&self, params: &[f64], trace: &MlpTrace, out_adj: Array2<f64>, grad: &mut [f64]) {
        let rows = trace.rows;
        let mut zbar = out_adj;
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if k + 1 < self.layers.len() {
                // zbar currently holds the adjoint of this layer's activation output.
                let z = &trace.pre[k];
                let (alpha, beta) = l.adaptive.map_or((1.0, 1.0), |at| (params[at], params[at + 1]));
                let zs = z.as_slice().expect("standard layout");
                let bs = zbar.as_slice_mut().expect("standard layout");
                let half = rows * l.fan_out;
                let (mut g_alpha, mut g_beta) = (0.0, 0.0);
                for i in 0..half {
                    let (zv, zt) = (zs[i], zs[half + i]);
                    let (abar, atbar) = (bs[i], bs[half + i]);
                    let (_, d, dd) = l.activation.eval(zv, alpha, beta);
                    bs[i] = abar * d + atbar * dd * zt;
                    bs[half + i] = atbar * d;
                    if l.adaptive.is_some() {
                        let (sn, cs) = (beta * zv).sin_cos();
                        g_alpha += abar * sn + atbar * beta * cs * zt;
                        g_beta += abar * alpha * zv * cs + atbar * alpha * (cs - beta * zv * sn) * zt;
                    }
                }
                if let Some(at) = l.adaptive {
                    grad[at] += g_alpha;
                    grad[at + 1] += g_beta;
                }
            }
            let a_prev = &trace.acts[k];
            {
                let mut gw = ArrayViewMut2::from_shape((l.fan_in, l.fan_out), &mut grad[l.weight..l.bias])
                    .expect("layout");
                general_mat_mul(1.0, &a_prev.t(), &zbar, 1.0, &mut gw);
            }
            let gb = zbar.slice(s![..rows, ..]).sum_axis(Axis(0));
            grad[l.bias..l.bias + l.fan_out]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(g, v)| *g += v);
            if k > 0 {
                let w = self.weight(params, l);
                let mut prev = Array2::<f64>::zeros((2 * rows, l.fan_in));
                general_mat_mul(1.0, &zbar, &w.t(), 0.0, &mut prev);
                zbar = prev;
            }
        }
    }

    /// Single-input evaluation over any [`Scalar`]; used to cross-check the
    /// batched passes against the tape.
    pub fn forward_point<S: Scalar>(&self, params: &[S], input: &[S]) -> Vec<S> {
        let mut a: Vec<S> = input.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.fan_out);
            for j in 0..l.fan_out {
                let mut acc = params[l.bias + j];
                for (i, ai) in a.iter().enumerate() {
                    acc = acc + *ai * params[l.weight + i * l.fan_out + j];
                }
                z.push(acc);
            }
            if k + 1 == self.layers.len() {
                return z;
            }
            let (alpha, beta) = match l.adaptive {
                Some(at) => (params[at], params[at + 1]),
                None => (z[0].lift(1.0), z[0].lift(1.0)),
            };
            a = z.into_iter().map(|v| l.activation.apply(v, alpha, beta)).collect();
        }
        a
    }
}

/// Affine maps between physical units and network units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Workspace center subtracted from x₀ before scaling.
    pub center: [f64; 2],
    /// Multiplies centered x₀ (1 / workspace half-width).
    pub input_scale: f64,
    /// Multiplies the raw position outputs (workspace half-width).
    pub position_scale: f64,
    /// Multiplies softplus of the raw final-time output.
    pub time_scale: f64,
}

impl Normalization {
    pub fn for_workspace(ws: &Workspace, speed: f64) -> Self {
        let hw = ws.half_width();
        Self {
            center: [ws.center(), ws.center()],
            input_scale: 1.0 / hw,
            position_scale: hw,
            time_scale: hw / speed,
        }
    }
}

/// Output channel indices.
pub mod ch {
    pub const X1: usize = 0;
    pub const X2: usize = 1;
    pub const PSI: usize = 2;
    pub const TF: usize = 3;
    pub const P1: usize = 4;
    pub const P2: usize = 5;
    pub const COUNT: usize = 6;
}

/// Per-point network outputs and their τ-derivatives, indexed by [`ch`].
#[derive(Debug, Clone, PartialEq)]
pub struct PinnOutputs {
    pub value: [Vec<f64>; ch::COUNT],
    pub dtau: [Vec<f64>; ch::COUNT],
}

impl PinnOutputs {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: std::array::from_fn(|_| vec![0.0; n]),
            dtau: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    pub fn len(&self) -> usize {
        self.value[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct PinnTrace {
    state: MlpTrace,
    costate: MlpTrace,
    raw_tf: Vec<f64>,
    raw_tf_dot: Vec<f64>,
}

/// The pair of networks plus normalization constants.
#[derive(Debug, Clone)]
pub struct PinnModel {
    seed: u64,
    norm: Normalization,
    state: Mlp,
    costate: Mlp,
    params: Vec<f64>,
}

impl PinnModel {
    pub fn init(seed: u64, state: NetSpec, costate: NetSpec, norm: Normalization) -> Result<Self, NetworkError> {
        state.validate()?;
        costate.validate()?;
        let state = Mlp::new("state", 3, state, 4, 0);
        let costate = Mlp::new("costate", 3, costate, 2, state.end);
        let mut params = vec![0.0; costate.end];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        state.init(&mut params, &mut rng);
        costate.init(&mut params, &mut rng);
        Ok(Self {
            seed,
            norm,
            state,
            costate,
            params,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn state_net(&self) -> &Mlp {
        &self.state
    }

    pub fn costate_net(&self) -> &Mlp {
        &self.costate
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn stacked_input(&self, points: &[([f64; 2], f64)]) -> Array2<f64> {
        let n = points.len();
        let mut input = Array2::<f64>::zeros((2 * n, 3));
        for (i, (x0, tau)) in points.iter().enumerate() {
            input[[i, 0]] = (x0[0] - self.norm.center[0]) * self.norm.input_scale;
            input[[i, 1]] = (x0[1] - self.norm.center[1]) * self.norm.input_scale;
            input[[i, 2]] = *tau;
            input[[n + i, 2]] = 1.0;
        }
        input
    }

    /// Both networks at every `(x₀, τ)` point.
    pub fn forward(&self, points: &[([f64; 2], f64)]) -> Result<(PinnOutputs, PinnTrace), NetworkError> {
        let n = points.len();
        let input = self.stacked_input(points);
        let (so, state) = self.state.forward(&self.params, input.clone())?;
        let (co, costate) = self.costate.forward(&self.params, input)?;
        let mut out = PinnOutputs::zeros(n);
        let (ps, ts) = (self.norm.position_scale, self.norm.time_scale);
        let mut raw_tf = vec![0.0; n];
        let mut raw_tf_dot = vec![0.0; n];
        for i in 0..n {
            for (c, k) in [(ch::X1, 0), (ch::X2, 1)] {
                out.value[c][i] = ps * so[[i, k]];
                out.dtau[c][i] = ps * so[[n + i, k]];
            }
            out.value[ch::PSI][i] = so[[i, 2]];
            out.dtau[ch::PSI][i] = so[[n + i, 2]];
            let (r, rd) = (so[[i, 3]], so[[n + i, 3]]);
            raw_tf[i] = r;
            raw_tf_dot[i] = rd;
            out.value[ch::TF][i] = ts * softplus(r);
            out.dtau[ch::TF][i] = ts * sigmoid(r) * rd;
            for (c, k) in [(ch::P1, 0), (ch::P2, 1)] {
                out.value[c][i] = co[[i, k]];
                out.dtau[c][i] = co[[n + i, k]];
            }
        }
        if out.value[ch::TF].iter().any(|tf| !(*tf > 0.0)) {
            return Err(NetworkError::NonFinite {
                network: "state",
                layer: self.state.layers.len() - 1,
            });
        }
        Ok((
            out,
            PinnTrace {
                state,
                costate,
                raw_tf,
                raw_tf_dot,
            },
        ))
    }

    /// Parameter gradient of a scalar whose derivatives with respect to the
    /// outputs (and their τ-derivatives) are `adj`.
    pub fn backward(&self, trace: &PinnTrace, adj: &PinnOutputs) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(trace, adj, &mut grad);
        grad
    }

    pub fn backward_into(&self, trace: &PinnTrace, adj: &PinnOutputs, grad: &mut [f64]) {
        let n = adj.len();
        let (ps, ts) = (self.norm.position_scale, self.norm.time_scale);
        let mut sa = Array2::<f64>::zeros((2 * n, 4));
        let mut ca = Array2::<f64>::zeros((2 * n, 2));
        for i in 0..n {
            for (c, k) in [(ch::X1, 0), (ch::X2, 1)] {
                sa[[i, k]] = ps * adj.value[c][i];
                sa[[n + i, k]] = ps * adj.dtau[c][i];
            }
            sa[[i, 2]] = adj.value[ch::PSI][i];
            sa[[n + i, 2]] = adj.dtau[ch::PSI][i];
            let (r, rd) = (trace.raw_tf[i], trace.raw_tf_dot[i]);
            let sg = sigmoid(r);
            let (tbar, tdbar) = (adj.value[ch::TF][i], adj.dtau[ch::TF][i]);
            sa[[i, 3]] = ts * sg * tbar + ts * sg * (1.0 - sg) * rd * tdbar;
            sa[[n + i, 3]] = ts * sg * tdbar;
            for (c, k) in [(ch::P1, 0), (ch::P2, 1)] {
                ca[[i, k]] = adj.value[c][i];
                ca[[n + i, k]] = adj.dtau[c][i];
            }
        }
        self.state.backward(&self.params, &trace.state, sa, grad);
        self.costate.backward(&self.params, &trace.costate, ca, grad);
    }

    /// Single point over any [`Scalar`] parameter vector: the six outputs
    /// in [`ch`] order. `tau` may itself be a tape variable.
    pub fn forward_point<S: Scalar>(&self, params: &[S], x0: [f64; 2], tau: S) -> [S; ch::COUNT] {
        let input = [
            tau.lift((x0[0] - self.norm.center[0]) * self.norm.input_scale),
            tau.lift((x0[1] - self.norm.center[1]) * self.norm.input_scale),
            tau,
        ];
        let so = self.state.forward_point(params, &input);
        let co = self.costate.forward_point(params, &input);
        let r = so[3];
        // softplus(r) = ln(1 + e^r)
        let tf = (r.exp() + 1.0).ln() * self.norm.time_scale;
        [
            so[0] * self.norm.position_scale,
            so[1] * self.norm.position_scale,
            so[2],
            tf,
            co[0],
            co[1],
        ]
    }

    /// `1e-6 Σ w²` over the co-state network's weight matrices.
    pub fn l2_penalty(&self) -> f64 {
        L2_COEFFICIENT
            * self
                .costate
                .weight_ranges()
                .flat_map(|r| self.params[r].iter())
                .map(|w| w * w)
                .sum::<f64>()
    }

    pub fn add_l2_gradient(&self, grad: &mut [f64], scale: f64) {
        for r in self.costate.weight_ranges() {
            for i in r {
                grad[i] += scale * 2.0 * L2_COEFFICIENT * self.params[i];
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NetworkError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in [
            self.norm.center[0],
            self.norm.center[1],
            self.norm.input_scale,
            self.norm.position_scale,
            self.norm.time_scale,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for net in [&self.state, &self.costate] {
            w.write_all(&(net.spec.hidden.len() as u32).to_le_bytes())?;
            for l in &net.spec.hidden {
                w.write_all(&(l.width as u32).to_le_bytes())?;
                w.write_all(&[l.activation.code()])?;
            }
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NetworkError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NetworkError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NetworkError::Format(format!("unsupported version {version}")));
        }
        let seed = read_u64(&mut r)?;
        let mut nv = [0.0; 5];
        for v in &mut nv {
            *v = read_f64(&mut r)?;
        }
        let norm = Normalization {
            center: [nv[0], nv[1]],
            input_scale: nv[2],
            position_scale: nv[3],
            time_scale: nv[4],
        };
        let mut specs = Vec::new();
        for _ in 0..2 {
            let depth = read_u32(&mut r)? as usize;
            if depth > 1024 {
                return Err(NetworkError::Format("implausible depth".into()));
            }
            let mut hidden = Vec::with_capacity(depth);
            for _ in 0..depth {
                let width = read_u32(&mut r)? as usize;
                let mut code = [0u8; 1];
                r.read_exact(&mut code)?;
                let activation = Activation::from_code(code[0])
                    .ok_or_else(|| NetworkError::Format(format!("unknown activation {}", code[0])))?;
                hidden.push(LayerSpec { width, activation });
            }
            specs.push(NetSpec { hidden });
        }
        let costate = specs.pop().expect("two specs");
        let state = specs.pop().expect("two specs");
        let mut model = Self::init(seed, state, costate, norm)?;
        let count = read_u64(&mut r)? as usize;
        if count != model.params.len() {
            return Err(NetworkError::Format(format!(
                "parameter count {count} does not match layout {}",
                model.params.len()
            )));
        }
        for p in &mut model.params {
            *p = read_f64(&mut r)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
