//! Minimum-principle mathematics for the minimum-exposure problem with
//! constant-speed kinematics `ẋ = v (cos ψ, sin ψ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::threat_field::{FieldError, ThreatField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmpError {
    #[error("speed must be positive, got {0}")]
    Speed(f64),
    #[error("bolza constant must be non-negative and finite, got {0}")]
    Bolza(f64),
    #[error("initial and final positions coincide")]
    DegenerateEndpoints,
    #[error("{which} position ({x1}, {x2}) lies outside the workspace")]
    OutsideWorkspace { which: &'static str, x1: f64, x2: f64 },
    #[error("workspace bounds [{lo}, {hi}] are empty")]
    Workspace { lo: f64, hi: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("heading undefined for a zero co-state")]
    ZeroCostate,
    #[error("co-state elimination requires a time-invariant field")]
    TimeVarying,
    #[error("non-positive running cost {0} in heading-rate denominator")]
    Denominator(f64),
    #[error("τ grid is not uniform (node {index})")]
    NonUniformGrid { index: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("sample counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// Axis-aligned square workspace `[lo, hi]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { lo: -15.0, hi: 15.0 }
    }
}

impl Workspace {
    pub fn contains(&self, x: [f64; 2]) -> bool {
        x.iter().all(|v| *v >= self.lo && *v <= self.hi)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub x0: [f64; 2],
    pub xf: [f64; 2],
    pub speed: f64,
    pub bolza: f64,
    pub field: ThreatField,
    pub workspace: Workspace,
}

impl Scenario {
    pub fn new(
        x0: [f64; 2],
        xf: [f64; 2],
        speed: f64,
        bolza: f64,
        field: ThreatField,
        workspace: Workspace,
    ) -> Result<Self, PmpError> {
        let s = Self {
            x0,
            xf,
            speed,
            bolza,
            field,
            workspace,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PmpError> {
        let ws = self.workspace;
        if !(ws.lo < ws.hi) || !ws.lo.is_finite() || !ws.hi.is_finite() {
            return Err(PmpError::Workspace { lo: ws.lo, hi: ws.hi });
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(PmpError::Speed(self.speed));
        }
        if !(self.bolza >= 0.0) || !self.bolza.is_finite() {
            return Err(PmpError::Bolza(self.bolza));
        }
        if self.x0 == self.xf {
            return Err(PmpError::DegenerateEndpoints);
        }
        for (which, x) in [("initial", self.x0), ("final", self.xf)] {
            if !ws.contains(x) {
                return Err(PmpError::OutsideWorkspace {
                    which,
                    x1: x[0],
                    x2: x[1],
                });
            }
        }
        self.field.validate_positive(ws.lo, ws.hi, 61)?;
        Ok(())
    }

    /// Same problem between different endpoints.
    pub fn with_endpoints(&self, x0: [f64; 2], xf: [f64; 2]) -> Result<Self, PmpError> {
        let mut s = self.clone();
        s.x0 = x0;
        s.xf = xf;
        s.validate()?;
        Ok(s)
    }

    pub fn distance(&self) -> f64 {
        (self.xf[0] - self.x0[0]).hypot(self.xf[1] - self.x0[1])
    }

    /// Travel time of the straight line at constant speed.
    pub fn straight_line_time(&self) -> f64 {
        self.distance() / self.speed
    }
}

/// A point of a candidate extremal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmpPoint {
    pub x: [f64; 2],
    pub psi: f64,
    pub p: [f64; 2],
    pub t: f64,
}

/// H = λ + c(x, t) + v (p₁ cos ψ + p₂ sin ψ).
pub fn hamiltonian<S: Scalar>(s: &Scenario, x: [S; 2], psi: S, p: [S; 2], t: S) -> S {
    let c = s.field.value(x, t);
    (p[0] * psi.cos() + p[1] * psi.sin()) * s.speed + c + s.bolza
}

pub fn hamiltonian_at(s: &Scenario, pt: &PmpPoint) -> f64 {
    hamiltonian(s, pt.x, pt.psi, pt.p, pt.t)
}

/// ∂H/∂ψ = v (p₂ cos ψ − p₁ sin ψ).
pub fn dh_dpsi<S: Scalar>(speed: f64, psi: S, p: [S; 2]) -> S {
    (p[1] * psi.cos() - p[0] * psi.sin()) * speed
}

/// Heading minimizing H for co-state `p`: `atan2(−p₂, −p₁)`.
pub fn stationary_heading(p: [f64; 2]) -> Result<f64, PmpError> {
    if p[0] == 0.0 && p[1] == 0.0 {
        return Err(PmpError::ZeroCostate);
    }
    Ok((-p[1]).atan2(-p[0]))
}

/// Right-hand side of the state/co-state system with the heading eliminated
/// through [`stationary_heading`]: `y = (x₁, x₂, p₁, p₂)`.
pub fn extremal_rhs(s: &Scenario, y: [f64; 4], t: f64) -> Result<[f64; 4], PmpError> {
    let psi = stationary_heading([y[2], y[3]])?;
    let g = s.field.grad_x([y[0], y[1]], t);
    Ok([
        s.speed * psi.cos(),
        s.speed * psi.sin(),
        -g[0],
        -g[1],
    ])
}

pub(crate) fn check_uniform(taus: &[f64]) -> Result<f64, PmpError> {
    if taus.len() < 2 {
        return Err(PmpError::TooFewSamples {
            need: 2,
            got: taus.len(),
        });
    }
    let step = (taus[taus.len() - 1] - taus[0]) / (taus.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(PmpError::NonUniformGrid { index: 1 });
    }
    let tol = (1e-9 * step).max(1e-12);
    for (i, w) in taus.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > tol {
            return Err(PmpError::NonUniformGrid { index: i + 1 });
        }
    }
    Ok(step)
}

/// Desired Hamiltonian along a predicted path: zero at the final node and
/// accumulated backward with trapezoid weights of ∂c/∂t evaluated at
/// `(x_j, τ_j t_f)`.
pub fn hd_profile<S: Scalar>(field: &ThreatField, tf: S, taus: &[f64], xs: &[[S; 2]]) -> Result<Vec<S>, PmpError> {
    if taus.len() != xs.len() {
        return Err(PmpError::LengthMismatch(taus.len(), xs.len()));
    }
    let step = check_uniform(taus)?;
    let n = taus.len();
    let rates: Vec<S> = xs
        .iter()
        .zip(taus)
        .map(|(x, &tau)| field.dc_dt(*x, tf * tau))
        .collect();
    let mut out = vec![tf.lift(0.0); n];
    let mut acc: Option<S> = None;
    for i in (0..n - 1).rev() {
        let seg = (rates[i + 1] + rates[i]) * (0.5 * step);
        acc = Some(match acc {
            Some(a) => a + seg,
            None => seg,
        });
        out[i] = -(tf * acc.unwrap());
    }
    Ok(out)
}

/// ψ̇ on a static field when H ≡ 0:
/// `v (cos ψ ∂c/∂x₂ − sin ψ ∂c/∂x₁) / (λ + c)`.
pub fn heading_rate(s: &Scenario, x: [f64; 2], psi: f64) -> Result<f64, PmpError> {
    if !s.field.is_static() {
        return Err(PmpError::TimeVarying);
    }
    let den = s.bolza + s.field.value(x, 0.0);
    if !(den > 0.0) {
        return Err(PmpError::Denominator(den));
    }
    let g = s.field.grad_x(x, 0.0);
    Ok(s.speed * (psi.cos() * g[1] - psi.sin() * g[0]) / den)
}

/// Co-state consistent with H = 0 and the minimizing heading branch.
pub fn reconstruct_costate(s: &Scenario, x: [f64; 2], psi: f64, t: f64) -> [f64; 2] {
    let k = -(s.bolza + s.field.value(x, t)) / s.speed;
    [k * psi.cos(), k * psi.sin()]
}

/// Right Riemann sum of the running cost over a uniform τ grid:
/// `t_f Σ_{i≥2} (λ + c(x_i, τ_i t_f)) Δτ`.
pub fn path_cost<S: Scalar>(s: &Scenario, xs: &[[S; 2]], taus: &[f64], tf: S) -> Result<S, PmpError> {
    if taus.len() != xs.len() {
        return Err(PmpError::LengthMismatch(taus.len(), xs.len()));
    }
    let step = check_uniform(taus)?;
    let mut sum: Option<S> = None;
    for (x, &tau) in xs.iter().zip(taus).skip(1) {
        let c = s.field.value(*x, tf * tau);
        sum = Some(match sum {
            Some(a) => a + c,
            None => c,
        });
    }
    let sum = sum.expect("at least two samples");
    let mut cost = tf * sum * step;
    if s.bolza > 0.0 {
        cost = cost + tf * (s.bolza * step * (taus.len() - 1) as f64);
    }
    Ok(cost)
}

/// Uniform grid over `[0, 1]` including both endpoints.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
