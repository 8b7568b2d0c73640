//! Residual losses, loss balancing, and the training loop.
//!
//! Loss indices follow the usual numbering of the necessary conditions:
//!
//! | k  | residual                                              |
//! |----|-------------------------------------------------------|
//! | 1  | H_d − Ĥ                                               |
//! | 2  | ∂c/∂t − dĤ/dt                                         |
//! | 3  | (1/t̂f) dx̂₁/dτ − v cos ψ̂                               |
//! | 4  | (1/t̂f) dx̂₂/dτ − v sin ψ̂                               |
//! | 5  | (1/t̂f) dp̂₁/dτ + ∂c/∂x₁                                |
//! | 6  | (1/t̂f) dp̂₂/dτ + ∂c/∂x₂                                |
//! | 7  | ∂H/∂ψ at ψ̂                                            |
//! | 8  | ‖x̂(0) − x₀‖²                                          |
//! | 9  | ‖x̂(1) − x_f‖²                                         |
//! | 10 | right Riemann path cost                               |
//!
//! Losses 1–7 are mean squares over the collocation points. Inside a
//! training step the network outputs and their τ-derivatives are lifted onto
//! a [`Tape`]; the loss graph is differentiated back to those outputs and
//! [`PinnModel::backward`] carries the adjoints into the parameters.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::networks::{ch, NetSpec, NetworkError, Normalization, PinnModel, PinnOutputs};
use crate::pmp::{self, PmpError, Scenario};
use crate::threat_field::TemporalMode;

pub const LOSS_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Pmp(#[from] PmpError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training diverged at epoch {}: {}", .0.epoch, .0.detail)]
    Divergence(Box<Divergence>),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// State captured when a loss exceeds the divergence threshold.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub epoch: usize,
    /// Offending loss (1-based); `None` when the network itself blew up.
    pub loss: Option<usize>,
    pub value: f64,
    pub detail: String,
    pub log: Vec<LogRow>,
}

/// Per-loss weights w₁..w₁₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub [f64; LOSS_COUNT]);

impl LossWeights {
    pub fn static_field() -> Self {
        Self([100.0, 1.0, 1.0, 1.0, 50.0, 50.0, 1.0, 50.0, 50.0, 1.0])
    }

    pub fn time_varying() -> Self {
        Self([100.0, 0.0, 2.0, 2.0, 200.0, 200.0, 75.0, 50.0, 50.0, 1.0])
    }

    pub fn for_mode(mode: TemporalMode) -> Self {
        match mode {
            TemporalMode::Static => Self::static_field(),
            TemporalMode::Cosine => Self::time_varying(),
        }
    }

    /// Weight of loss `k` (1-based).
    pub fn get(&self, k: usize) -> f64 {
        self.0[k - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 128-neuron networks, 512 collocation points, 10 000 epochs.
    Full,
    /// 64-neuron networks, 128 collocation points, 3 000 epochs.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Collocation points per trajectory (τ grid size).
    pub collocation: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Divisor applied to the learning rate from `decay_epoch` on.
    pub decay_factor: f64,
    pub decay_epoch: usize,
    /// Gradient-statistics loss balancing; off unless requested.
    pub annealing: bool,
    pub anneal_alpha: f64,
    pub anneal_every: usize,
    /// Losses (1-based) that receive a multiplier; the rest keep λ = 1.
    pub annealed: Vec<usize>,
    /// Training stops once every weighted-in L1..L9 is below this.
    pub stop_threshold: f64,
    pub divergence_threshold: f64,
    pub seed: u64,
    pub log_every: usize,
    pub state_net: NetSpec,
    pub costate_net: NetSpec,
    /// Initial states per batch in conditioned training.
    pub conditioned_states: usize,
    /// Minimum distance between sampled initial and final states.
    pub min_separation: f64,
}

impl TrainConfig {
    pub fn new(profile: Profile, mode: TemporalMode) -> Self {
        let decay_factor = match mode {
            TemporalMode::Static => 2.0,
            TemporalMode::Cosine => 10.0,
        };
        let (width, collocation, max_epochs, decay_epoch) = match profile {
            Profile::Full => (128, 512, 10_000, 7_500),
            Profile::Desk => (64, 128, 3_000, 2_250),
        };
        Self {
            collocation,
            max_epochs,
            learning_rate: 1e-3,
            decay_factor,
            decay_epoch,
            annealing: false,
            anneal_alpha: 0.9,
            anneal_every: 50,
            annealed: (1..=LOSS_COUNT).collect(),
            stop_threshold: 1e-3,
            divergence_threshold: 1e6,
            seed: 0,
            log_every: 100,
            state_net: NetSpec::uniform(3, width, crate::Activation::AdaptiveSine),
            costate_net: NetSpec::uniform(5, width, crate::Activation::Silu),
            conditioned_states: 16,
            min_separation: 5.0,
        }
    }

    pub fn full(mode: TemporalMode) -> Self {
        Self::new(Profile::Full, mode)
    }

    pub fn desk(mode: TemporalMode) -> Self {
        Self::new(Profile::Desk, mode)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.collocation < 2 {
            return Err(TrainError::Config("collocation count must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0) {
            return Err(TrainError::Config("decay factor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.anneal_alpha) {
            return Err(TrainError::Config("annealing alpha must lie in [0, 1)".into()));
        }
        if self.annealed.iter().any(|k| !(1..=LOSS_COUNT).contains(k)) {
            return Err(TrainError::Config("annealed loss indices must lie in 1..=10".into()));
        }
        if self.conditioned_states == 0 {
            return Err(TrainError::Config("conditioned batch needs at least one state".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.learning_rate / self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// Unweighted losses of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub losses: [f64; LOSS_COUNT],
    pub regularization: f64,
    pub epochs: usize,
    #[serde(skip)]
    pub wall_time: f64,
}

impl LossReport {
    /// Loss `k` (1-based).
    pub fn get(&self, k: usize) -> f64 {
        self.losses[k - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.losses.iter().all(|v| v.is_finite()) && self.regularization.is_finite()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub learning_rate: f64,
    pub losses: [f64; LOSS_COUNT],
    pub regularization: f64,
}

/// Collocation batch: a fixed uniform τ grid repeated for each initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub initial_states: Vec<[f64; 2]>,
    pub taus: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.initial_states.len() * self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Group-major `(x₀, τ)` pairs.
    pub fn points(&self) -> Vec<([f64; 2], f64)> {
        self.initial_states
            .iter()
            .flat_map(|x0| self.taus.iter().map(move |t| (*x0, *t)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CollocationMode {
    Single,
    Conditioned,
}

/// Builds the collocation batch. Single mode uses the scenario's x₀;
/// conditioned mode draws `config.conditioned_states` initial states
/// uniformly over the workspace, at least `config.min_separation` from x_f.
pub fn collocate(config: &TrainConfig, scenario: &Scenario, mode: CollocationMode, seed: u64) -> Batch {
    let taus = pmp::uniform_grid(config.collocation);
    let initial_states = match mode {
        CollocationMode::Single => vec![scenario.x0],
        CollocationMode::Conditioned => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_states(&mut rng, scenario, config.conditioned_states, config.min_separation)
        }
    };
    Batch { initial_states, taus }
}

fn sample_states(rng: &mut ChaCha8Rng, s: &Scenario, count: usize, min_sep: f64) -> Vec<[f64; 2]> {
    let ws = s.workspace;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = [rng.random_range(ws.lo..=ws.hi), rng.random_range(ws.lo..=ws.hi)];
        if (x[0] - s.xf[0]).hypot(x[1] - s.xf[1]) >= min_sep {
            out.push(x);
        }
    }
    out
}

/// Loss terms recorded on a tape, plus the leaves they were built from.
pub struct LossGraph<'t> {
    pub terms: [Var<'t>; LOSS_COUNT],
    value: [Vec<Var<'t>>; ch::COUNT],
    dtau: [Vec<Var<'t>>; ch::COUNT],
    first_nonfinite: Option<(usize, usize)>,
}

impl<'t> LossGraph<'t> {
    pub fn values(&self) -> [f64; LOSS_COUNT] {
        self.terms.map(|v| v.value())
    }

    /// Offending (loss, point) of the first non-finite residual.
    pub fn first_nonfinite(&self) -> Option<(usize, usize)> {
        self.first_nonfinite
    }

    /// Derivatives of `objective` with respect to every network output and
    /// τ-derivative.
    pub fn output_adjoint(&self, tape: &'t Tape, objective: Var<'t>) -> Result<PinnOutputs, AutodiffError> {
        let adj = tape.adjoints(objective)?;
        let n = self.value[0].len();
        let mut out = PinnOutputs::zeros(n);
        for c in 0..ch::COUNT {
            for i in 0..n {
                out.value[c][i] = adj.get(self.value[c][i]);
                out.dtau[c][i] = adj.get(self.dtau[c][i]);
            }
        }
        Ok(out)
    }
}

fn sum_vars<'t>(tape: &'t Tape, items: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    items
        .into_iter()
        .reduce(|a, b| a + b)
        .unwrap_or_else(|| tape.constant(0.0))
}

/// Records all ten losses for `outputs` evaluated on `batch`.
pub fn record_losses<'t>(
    tape: &'t Tape,
    scenario: &Scenario,
    batch: &Batch,
    outputs: &PinnOutputs,
) -> Result<LossGraph<'t>, TrainError> {
    let n_tau = batch.taus.len();
    let n = batch.len();
    if n == 0 || outputs.len() != n {
        return Err(TrainError::Config(format!(
            "batch of {n} points does not match {} network outputs",
            outputs.len()
        )));
    }
    pmp::check_uniform(&batch.taus)?;
    let value: [Vec<Var<'t>>; ch::COUNT] = std::array::from_fn(|c| tape.vars(&outputs.value[c]));
    let dtau: [Vec<Var<'t>>; ch::COUNT] = std::array::from_fn(|c| tape.vars(&outputs.dtau[c]));
    let v = scenario.speed;
    let field = &scenario.field;
    let is_static = field.is_static();

    let mut sq: [Vec<Var<'t>>; 7] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut boundary0 = Vec::new();
    let mut boundary1 = Vec::new();
    let mut costs = Vec::new();
    let mut first_nonfinite = None;

    for (g, x0) in batch.initial_states.iter().enumerate() {
        let range = g * n_tau..(g + 1) * n_tau;
        let xs: Vec<[Var<'t>; 2]> = range.clone().map(|i| [value[ch::X1][i], value[ch::X2][i]]).collect();
        let tf_mean = sum_vars(tape, range.clone().map(|i| value[ch::TF][i])) / n_tau as f64;
        let hd = if is_static {
            None
        } else {
            Some(pmp::hd_profile(field, tf_mean, &batch.taus, &xs)?)
        };
        for (j, i) in range.clone().enumerate() {
            let tau = batch.taus[j];
            let x = xs[j];
            let psi = value[ch::PSI][i];
            let tf = value[ch::TF][i];
            let p = [value[ch::P1][i], value[ch::P2][i]];
            let dx = [dtau[ch::X1][i], dtau[ch::X2][i]];
            let dpsi = dtau[ch::PSI][i];
            let dp = [dtau[ch::P1][i], dtau[ch::P2][i]];
            let t = tf * tau;
            let (cos, sin) = (psi.cos(), psi.sin());
            let c = field.value(x, t);
            let grad = field.grad_x(x, t);
            let h = (p[0] * cos + p[1] * sin) * v + c + scenario.bolza;

            let r1 = match &hd {
                Some(hd) => hd[j] - h,
                None => -h,
            };
            // dĤ/dτ holding t̂f fixed in t = τ t̂f
            let dh_costate = (dp[0] * cos - p[0] * sin * dpsi + dp[1] * sin + p[1] * cos * dpsi) * v;
            let mut dh = dh_costate + grad[0] * dx[0] + grad[1] * dx[1];
            let r2 = if is_static {
                -(dh / tf)
            } else {
                let ct = field.dc_dt(x, t);
                dh = dh + ct * tf;
                ct - dh / tf
            };
            let r3 = dx[0] / tf - cos * v;
            let r4 = dx[1] / tf - sin * v;
            let r5 = dp[0] / tf + grad[0];
            let r6 = dp[1] / tf + grad[1];
            let r7 = pmp::dh_dpsi(v, psi, p);
            for (k, r) in [r1, r2, r3, r4, r5, r6, r7].into_iter().enumerate() {
                if first_nonfinite.is_none() && !r.value().is_finite() {
                    first_nonfinite = Some((k + 1, i));
                }
                sq[k].push(r.square());
            }
        }
        let start = range.start;
        let end = range.end - 1;
        boundary0.push((value[ch::X1][start] - x0[0]).square() + (value[ch::X2][start] - x0[1]).square());
        boundary1.push(
            (value[ch::X1][end] - scenario.xf[0]).square() + (value[ch::X2][end] - scenario.xf[1]).square(),
        );
        costs.push(pmp::path_cost(scenario, &xs, &batch.taus, tf_mean)?);
    }
    let groups = batch.initial_states.len() as f64;
    let mut terms = [tape.constant(0.0); LOSS_COUNT];
    for (k, list) in sq.into_iter().enumerate() {
        terms[k] = sum_vars(tape, list) / n as f64;
    }
    terms[7] = sum_vars(tape, boundary0) / groups;
    terms[8] = sum_vars(tape, boundary1) / groups;
    terms[9] = sum_vars(tape, costs) / groups;
    if first_nonfinite.is_none() {
        if let Some(k) = terms.iter().position(|t| !t.value().is_finite()) {
            first_nonfinite = Some((k + 1, 0));
        }
    }
    Ok(LossGraph {
        terms,
        value,
        dtau,
        first_nonfinite,
    })
}

/// Unweighted losses of `model` on `batch`.
pub fn compute_losses(model: &PinnModel, scenario: &Scenario, batch: &Batch) -> Result<[f64; LOSS_COUNT], TrainError> {
    let (outputs, _) = model.forward(&batch.points())?;
    losses_of_outputs(scenario, batch, &outputs)
}

/// Unweighted losses of arbitrary per-point outputs.
pub fn losses_of_outputs(scenario: &Scenario, batch: &Batch, outputs: &PinnOutputs) -> Result<[f64; LOSS_COUNT], TrainError> {
    let tape = Tape::new();
    let graph = record_losses(&tape, scenario, batch, outputs)?;
    Ok(graph.values())
}

/// Losses whose weighted sum is the annealing reference.
pub const REFERENCE: [usize; 2] = [8, 9];

/// Smoothed per-loss multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealingState {
    pub multipliers: [f64; LOSS_COUNT],
    pub alpha: f64,
    pub updates: usize,
}

impl AnnealingState {
    pub fn new(alpha: f64) -> Self {
        Self {
            multipliers: [1.0; LOSS_COUNT],
            alpha,
            updates: 0,
        }
    }

    /// `λ̂_k = max|∇L_ref| / mean|∇L_k|`, then `λ_k ← α λ_k + (1 − α) λ̂_k`.
    /// Losses whose gradient is identically zero keep their multiplier.
    /// Returns the indices that were skipped.
    pub fn update(&mut self, reference: &[f64], grads: &[(usize, &[f64])]) -> Vec<usize> {
        let max_ref = reference.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut skipped = Vec::new();
        for (k, g) in grads {
            let mean = g.iter().map(|v| v.abs()).sum::<f64>() / g.len().max(1) as f64;
            if !(mean > 0.0) || !mean.is_finite() {
                skipped.push(*k);
                continue;
            }
            let target = max_ref / mean;
            let slot = &mut self.multipliers[k - 1];
            *slot = self.alpha * *slot + (1.0 - self.alpha) * target;
        }
        self.updates += 1;
        skipped
    }
}

/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8 and bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Errors with the first non-finite gradient index, leaving parameters
    /// and moments untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), usize> {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(i);
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Sampled trajectory in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub tau: f64,
    pub t: f64,
    pub x: [f64; 2],
    pub psi: f64,
    pub p: [f64; 2],
    pub h: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub final_time: f64,
    pub cost: f64,
}

impl Trajectory {
    pub fn max_abs_hamiltonian(&self) -> f64 {
        self.points.iter().fold(0.0f64, |m, p| m.max(p.h.abs()))
    }

    pub fn start(&self) -> [f64; 2] {
        self.points.first().map_or([f64::NAN; 2], |p| p.x)
    }

    pub fn end(&self) -> [f64; 2] {
        self.points.last().map_or([f64::NAN; 2], |p| p.x)
    }
}

/// Network outputs for one initial state on an `n`-point grid, with the
/// final time taken as the mean t̂f.
pub fn sample_trajectory(model: &PinnModel, scenario: &Scenario, n: usize) -> Result<Trajectory, TrainError> {
    let taus = pmp::uniform_grid(n);
    let points: Vec<_> = taus.iter().map(|t| (scenario.x0, *t)).collect();
    let (out, _) = model.forward(&points)?;
    let tf = out.value[ch::TF].iter().sum::<f64>() / n as f64;
    let mut pts = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for (i, tau) in taus.iter().enumerate() {
        let x = [out.value[ch::X1][i], out.value[ch::X2][i]];
        let psi = out.value[ch::PSI][i];
        let p = [out.value[ch::P1][i], out.value[ch::P2][i]];
        let t = tau * tf;
        xs.push(x);
        pts.push(TrajectoryPoint {
            tau: *tau,
            t,
            x,
            psi,
            p,
            h: pmp::hamiltonian(scenario, x, psi, p, t),
            c: scenario.field.value(x, t),
        });
    }
    let cost = pmp::path_cost(scenario, &xs, &taus, tf)?;
    Ok(Trajectory {
        points: pts,
        final_time: tf,
        cost,
    })
}

/// Loss report and trajectory of a trained model for the scenario's x₀.
pub fn evaluate(model: &PinnModel, scenario: &Scenario, n: usize) -> Result<(LossReport, Trajectory), TrainError> {
    let batch = Batch {
        initial_states: vec![scenario.x0],
        taus: pmp::uniform_grid(n),
    };
    let losses = compute_losses(model, scenario, &batch)?;
    let report = LossReport {
        losses,
        regularization: model.l2_penalty(),
        epochs: 0,
        wall_time: 0.0,
    };
    Ok((report, sample_trajectory(model, scenario, n)?))
}

/// Pointwise necessary-condition terms of a trained model along one
/// trajectory, in physical time. `d/dt = (1/t̂f) d/dτ` with the per-point t̂f.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    pub psi: Vec<f64>,
    pub p: Vec<[f64; 2]>,
    pub dx_dt: Vec<[f64; 2]>,
    pub dp_dt: Vec<[f64; 2]>,
    pub velocity: Vec<[f64; 2]>,
    pub grad_c: Vec<[f64; 2]>,
    pub h: Vec<f64>,
    pub h_desired: Vec<f64>,
    pub dh_dt: Vec<f64>,
    pub dc_dt: Vec<f64>,
    pub dh_dpsi: Vec<f64>,
    pub final_time: f64,
}

pub fn diagnostics(model: &PinnModel, scenario: &Scenario, n: usize) -> Result<Diagnostics, TrainError> {
    let taus = pmp::uniform_grid(n);
    let points: Vec<_> = taus.iter().map(|t| (scenario.x0, *t)).collect();
    let (out, _) = model.forward(&points)?;
    let v = scenario.speed;
    let tf_mean = out.value[ch::TF].iter().sum::<f64>() / n as f64;
    let xs: Vec<[f64; 2]> = (0..n).map(|i| [out.value[ch::X1][i], out.value[ch::X2][i]]).collect();
    let h_desired = pmp::hd_profile(&scenario.field, tf_mean, &taus, &xs)?;
    let mut d = Diagnostics {
        tau: taus.clone(),
        t: Vec::with_capacity(n),
        x: xs.clone(),
        psi: out.value[ch::PSI].clone(),
        p: Vec::with_capacity(n),
        dx_dt: Vec::with_capacity(n),
        dp_dt: Vec::with_capacity(n),
        velocity: Vec::with_capacity(n),
        grad_c: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        h_desired,
        dh_dt: Vec::with_capacity(n),
        dc_dt: Vec::with_capacity(n),
        dh_dpsi: Vec::with_capacity(n),
        final_time: tf_mean,
    };
    for i in 0..n {
        let tf = out.value[ch::TF][i];
        let t = taus[i] * tf;
        let x = xs[i];
        let psi = out.value[ch::PSI][i];
        let p = [out.value[ch::P1][i], out.value[ch::P2][i]];
        let dx = [out.dtau[ch::X1][i] / tf, out.dtau[ch::X2][i] / tf];
        let dp = [out.dtau[ch::P1][i] / tf, out.dtau[ch::P2][i] / tf];
        let dpsi = out.dtau[ch::PSI][i] / tf;
        let (sin, cos) = psi.sin_cos();
        let g = scenario.field.grad_x(x, t);
        let ct = scenario.field.dc_dt(x, t);
        let dh = v * (dp[0] * cos - p[0] * sin * dpsi + dp[1] * sin + p[1] * cos * dpsi) + g[0] * dx[0] + g[1] * dx[1] + ct;
        d.t.push(t);
        d.p.push(p);
        d.dx_dt.push(dx);
        d.dp_dt.push(dp);
        d.velocity.push([v * cos, v * sin]);
        d.grad_c.push(g);
        d.h.push(pmp::hamiltonian(scenario, x, psi, p, t));
        d.dh_dt.push(dh);
        d.dc_dt.push(ct);
        d.dh_dpsi.push(pmp::dh_dpsi(v, psi, p));
    }
    Ok(d)
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PinnModel,
    pub report: LossReport,
    pub trajectory: Trajectory,
    pub log: Vec<LogRow>,
    pub annealing: AnnealingState,
    /// Initial states of the first batch (a single entry in single mode).
    pub trained_states: Vec<[f64; 2]>,
}

fn new_model(scenario: &Scenario, config: &TrainConfig) -> Result<PinnModel, TrainError> {
    Ok(PinnModel::init(
        config.seed,
        config.state_net.clone(),
        config.costate_net.clone(),
        Normalization::for_workspace(&scenario.workspace, scenario.speed),
    )?)
}

fn weighted_in(weights: &LossWeights, k: usize) -> bool {
    weights.get(k) != 0.0
}

fn parameter_gradient<'t>(
    model: &PinnModel,
    trace: &crate::networks::PinnTrace,
    tape: &'t Tape,
    graph: &LossGraph<'t>,
    objective: Var<'t>,
) -> Result<Vec<f64>, TrainError> {
    let adj = graph.output_adjoint(tape, objective)?;
    Ok(model.backward(trace, &adj))
}

/// Weighted objective `L_ref + Σ_k w_k λ_k L_k` with
/// `L_ref = Σ_{k∈{8,9}} w_k L_k`; zero-weight terms are left out of the
/// graph entirely.
pub fn total_objective<'t>(
    tape: &'t Tape,
    graph: &LossGraph<'t>,
    weights: &LossWeights,
    multipliers: &[f64; LOSS_COUNT],
) -> Var<'t> {
    let annealed = (1..=LOSS_COUNT)
        .filter(|&k| weighted_in(weights, k))
        .map(|k| graph.terms[k - 1] * (weights.get(k) * multipliers[k - 1]));
    reference_objective(tape, graph, weights) + sum_vars(tape, annealed)
}

fn reference_objective<'t>(tape: &'t Tape, graph: &LossGraph<'t>, weights: &LossWeights) -> Var<'t> {
    sum_vars(
        tape,
        REFERENCE
            .iter()
            .filter(|&&k| weighted_in(weights, k))
            .map(|&k| graph.terms[k - 1] * weights.get(k)),
    )
}

fn converged(losses: &[f64; LOSS_COUNT], weights: &LossWeights, threshold: f64) -> bool {
    (1..=9)
        .filter(|&k| weighted_in(weights, k))
        .all(|k| losses[k - 1] < threshold)
}

struct Trainer<'a> {
    scenario: &'a Scenario,
    config: &'a TrainConfig,
    weights: &'a LossWeights,
    mode: CollocationMode,
}

impl Trainer<'_> {
    fn run(&self) -> Result<TrainOutcome, TrainError> {
        let config = self.config;
        config.validate()?;
        let started = Instant::now();
        let mut model = new_model(self.scenario, config)?;
        let mut adam = Adam::new(model.param_count());
        let mut annealing = AnnealingState::new(config.anneal_alpha);
        let mut sampler = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut batch = collocate(config, self.scenario, self.mode, sampler.random());
        let trained_states = batch.initial_states.clone();
        let mut log = Vec::new();
        let mut tape = Tape::with_capacity(64 * batch.len());
        let mut epochs = 0;

        for epoch in 0..config.max_epochs {
            if self.mode == CollocationMode::Conditioned && epoch > 0 {
                batch = collocate(config, self.scenario, self.mode, sampler.random());
            }
            let lr = config.learning_rate_at(epoch);
            let diverged = |loss: Option<usize>, value: f64, detail: String, log: Vec<LogRow>| {
                TrainError::Divergence(Box::new(Divergence {
                    epoch,
                    loss,
                    value,
                    detail,
                    log,
                }))
            };
            let (outputs, trace) = match model.forward(&batch.points()) {
                Ok(r) => r,
                Err(e @ NetworkError::NonFinite { .. }) => return Err(diverged(None, f64::NAN, e.to_string(), log)),
                Err(e) => return Err(e.into()),
            };
            tape.clear();
            let graph = record_losses(&tape, self.scenario, &batch, &outputs)?;
            let losses = graph.values();
            if let Some((loss, point)) = graph.first_nonfinite() {
                let detail = format!("L{loss} is not finite at collocation point {point}");
                return Err(diverged(Some(loss), losses[loss - 1], detail, log));
            }
            let reg = model.l2_penalty();
            if epoch % config.log_every.max(1) == 0 {
                log.push(LogRow {
                    epoch,
                    learning_rate: lr,
                    losses,
                    regularization: reg,
                });
            }
            if let Some(k) = losses.iter().position(|v| v.abs() > config.divergence_threshold) {
                let detail = format!("L{} = {}", k + 1, losses[k]);
                return Err(diverged(Some(k + 1), losses[k], detail, log));
            }
            if converged(&losses, self.weights, config.stop_threshold) {
                break;
            }

            if config.annealing && epoch % config.anneal_every.max(1) == 0 {
                let r = reference_objective(&tape, &graph, self.weights);
                let g_ref = parameter_gradient(&model, &trace, &tape, &graph, r)?;
                let mut per_loss = Vec::new();
                for k in config.annealed.iter().copied().filter(|&k| weighted_in(self.weights, k)) {
                    per_loss.push((k, parameter_gradient(&model, &trace, &tape, &graph, graph.terms[k - 1])?));
                }
                let views: Vec<(usize, &[f64])> = per_loss.iter().map(|(k, g)| (*k, g.as_slice())).collect();
                annealing.update(&g_ref, &views);
            }

            let objective = total_objective(&tape, &graph, self.weights, &annealing.multipliers);
            let mut grad = parameter_gradient(&model, &trace, &tape, &graph, objective)?;
            model.add_l2_gradient(&mut grad, 1.0);
            if let Err(index) = adam.step(model.params_mut(), &grad, lr) {
                return Err(diverged(None, grad[index], format!("non-finite gradient for parameter {index}"), log));
            }
            epochs = epoch + 1;
        }

        let losses = compute_losses(&model, self.scenario, &batch)?;
        let report = LossReport {
            losses,
            regularization: model.l2_penalty(),
            epochs,
            wall_time: started.elapsed().as_secs_f64(),
        };
        let trajectory = sample_trajectory(&model, self.scenario, config.collocation)?;
        Ok(TrainOutcome {
            model,
            report,
            trajectory,
            log,
            annealing,
            trained_states,
        })
    }
}

/// Trains a model for the scenario's fixed pair of endpoints.
pub fn train_single(scenario: &Scenario, config: &TrainConfig, weights: &LossWeights) -> Result<TrainOutcome, TrainError> {
    scenario.validate()?;
    Trainer {
        scenario,
        config,
        weights,
        mode: CollocationMode::Single,
    }
    .run()
}

/// Trains one model over initial states drawn from the workspace, with the
/// scenario's final state fixed. The returned trajectory is for the
/// scenario's own x₀; use [`evaluate`] for any other.
pub fn train_conditioned(
    scenario: &Scenario,
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome, TrainError> {
    scenario.validate()?;
    Trainer {
        scenario,
        config,
        weights,
        mode: CollocationMode::Conditioned,
    }
    .run()
}

/// Hand-built extremal on a constant field: straight line at speed v with
/// `p = −(c₀/v)(cos ψ, sin ψ)` and `t_f = |x_f − x₀| / v`.
pub fn straight_line_outputs(scenario: &Scenario, batch: &Batch) -> PinnOutputs {
    let x0 = scenario.x0;
    let d = [scenario.xf[0] - x0[0], scenario.xf[1] - x0[1]];
    let tf = scenario.straight_line_time();
    let psi = d[1].atan2(d[0]);
    let c0 = scenario.field.offset() + scenario.bolza;
    let p = [-(c0 / scenario.speed) * psi.cos(), -(c0 / scenario.speed) * psi.sin()];
    let n = batch.len();
    let mut out = PinnOutputs::zeros(n);
    for (i, (_, tau)) in batch.points().into_iter().enumerate() {
        out.value[ch::X1][i] = x0[0] + tau * d[0];
        out.value[ch::X2][i] = x0[1] + tau * d[1];
        out.dtau[ch::X1][i] = d[0];
        out.dtau[ch::X2][i] = d[1];
        out.value[ch::PSI][i] = psi;
        out.value[ch::TF][i] = tf;
        out.value[ch::P1][i] = p[0];
        out.value[ch::P2][i] = p[1];
    }
    out
}
