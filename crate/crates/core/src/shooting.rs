//! Multi-start shooting on the initial heading for static fields.
//!
//! With H ≡ 0 the co-states drop out and the extremals obey
//! `ẋ = v (cos ψ, sin ψ)`, `ψ̇ = heading_rate(x, ψ)`. Each shot is flown
//! with RK4 until its closest approach to x_f.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::pmp::{self, PmpError, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootConfig {
    /// Initial headings sampled uniformly over [0, 2π).
    pub grid: usize,
    pub dt: f64,
    /// Accepted terminal miss in metres.
    pub tolerance: f64,
    /// Flight-time cap; `None` means three straight-line times.
    pub max_time: Option<f64>,
    pub bisections: usize,
}

impl Default for ShootConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            dt: 1e-3,
            tolerance: 0.05,
            max_time: None,
            bisections: 60,
        }
    }
}

impl ShootConfig {
    pub fn validate(&self) -> Result<(), PmpError> {
        if !(self.dt > 0.0) || !(self.tolerance > 0.0) || self.grid == 0 {
            return Err(PmpError::Config(format!(
                "need dt > 0, tolerance > 0 and a non-empty grid (dt = {}, tolerance = {}, grid = {})",
                self.dt, self.tolerance, self.grid
            )));
        }
        if let Some(t) = self.max_time {
            if !(t > 0.0) {
                return Err(PmpError::Config(format!("max flight time {t} must be positive")));
            }
        }
        Ok(())
    }

    fn flight_cap(&self, s: &Scenario) -> f64 {
        self.max_time.unwrap_or(3.0 * s.straight_line_time())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotSample {
    pub t: f64,
    pub x: [f64; 2],
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub psi0: f64,
    pub trajectory: Vec<ShotSample>,
    /// Distance to x_f at arrival.
    pub miss: f64,
    pub arrival: f64,
    pub cost: f64,
    pub converged: bool,
}

impl ShotResult {
    pub fn end(&self) -> [f64; 2] {
        self.trajectory.last().map_or([f64::NAN; 2], |s| s.x)
    }

    /// Co-states from H = 0 on the minimizing branch, one per sample.
    pub fn costates(&self, s: &Scenario) -> Vec<[f64; 2]> {
        self.trajectory
            .iter()
            .map(|p| pmp::reconstruct_costate(s, p.x, p.psi, p.t))
            .collect()
    }
}

type State = [f64; 3];

fn rhs(s: &Scenario, y: State) -> Result<State, PmpError> {
    let (sin, cos) = y[2].sin_cos();
    Ok([s.speed * cos, s.speed * sin, pmp::heading_rate(s, [y[0], y[1]], y[2])?])
}

fn rk4(s: &Scenario, y: State, h: f64) -> Result<State, PmpError> {
    let add = |a: State, b: State, k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
    let k1 = rhs(s, y)?;
    let k2 = rhs(s, add(y, k1, 0.5 * h))?;
    let k3 = rhs(s, add(y, k2, 0.5 * h))?;
    let k4 = rhs(s, add(y, k3, h))?;
    Ok([
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        y[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ])
}

/// Half the rate of change of |x − x_f|².
fn approach_rate(s: &Scenario, y: State) -> f64 {
    (y[0] - s.xf[0]) * y[2].cos() + (y[1] - s.xf[1]) * y[2].sin()
}

/// Perpendicular offset of x_f from the heading line; its magnitude is the
/// miss at closest approach.
fn signed_miss(s: &Scenario, y: State) -> f64 {
    y[2].cos() * (s.xf[1] - y[1]) - y[2].sin() * (s.xf[0] - y[0])
}

fn distance(s: &Scenario, y: State) -> f64 {
    (y[0] - s.xf[0]).hypot(y[1] - s.xf[1])
}

/// Arrival time of a shot: the first closest approach, or the cap.
fn arrival_time(s: &Scenario, psi0: f64, cfg: &ShootConfig) -> Result<f64, PmpError> {
    let cap = cfg.flight_cap(s);
    let steps = (cap / cfg.dt).ceil() as usize;
    let mut y = [s.x0[0], s.x0[1], psi0];
    let mut g = approach_rate(s, y);
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let h = cfg.dt.min(cap - t);
        let next = rk4(s, y, h)?;
        let g_next = approach_rate(s, next);
        if g < 0.0 && g_next >= 0.0 {
            return Ok(t + refine_crossing(s, y, h, g, g_next)?);
        }
        y = next;
        g = g_next;
    }
    Ok(cap)
}

/// Root of the approach rate inside one step, by Illinois regula falsi on
/// partial RK4 steps from `y`.
fn refine_crossing(s: &Scenario, y: State, h: f64, g0: f64, g1: f64) -> Result<f64, PmpError> {
    let (mut a, mut b, mut ga, mut gb) = (0.0, h, g0, g1);
    let mut side = 0i8;
    for _ in 0..60 {
        let m = (a * gb - b * ga) / (gb - ga);
        let gm = approach_rate(s, rk4(s, y, m)?);
        if gm == 0.0 || (b - a) <= 1e-15 * h.max(1.0) {
            return Ok(m);
        }
        if gm < 0.0 {
            a = m;
            ga = gm;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = m;
            gb = gm;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Ok((a * gb - b * ga) / (gb - ga))
}

/// RK4 over `[0, t_end]` with the largest uniform step not above `dt`.
fn fly_uniform(s: &Scenario, psi0: f64, t_end: f64, dt: f64) -> Result<Vec<ShotSample>, PmpError> {
    let n = ((t_end / dt).ceil() as usize).max(1);
    let h = t_end / n as f64;
    let mut y = [s.x0[0], s.x0[1], psi0];
    let mut out = Vec::with_capacity(n + 1);
    out.push(ShotSample { t: 0.0, x: [y[0], y[1]], psi: y[2] });
    for k in 1..=n {
        y = rk4(s, y, h)?;
        out.push(ShotSample {
            t: k as f64 * h,
            x: [y[0], y[1]],
            psi: y[2],
        });
    }
    Ok(out)
}

fn check_static(s: &Scenario) -> Result<(), PmpError> {
    s.validate()?;
    if !s.field.is_static() {
        return Err(PmpError::TimeVarying);
    }
    Ok(())
}

/// Flies one shot from heading `psi0` to its closest approach.
pub fn integrate(s: &Scenario, psi0: f64, cfg: &ShootConfig) -> Result<ShotResult, PmpError> {
    check_static(s)?;
    cfg.validate()?;
    let arrival = arrival_time(s, psi0, cfg)?;
    let trajectory = fly_uniform(s, psi0, arrival, cfg.dt)?;
    let xs: Vec<[f64; 2]> = trajectory.iter().map(|p| p.x).collect();
    let cost = pmp::path_cost(s, &xs, &pmp::uniform_grid(xs.len()), arrival)?;
    let last = trajectory[trajectory.len() - 1];
    let miss = distance(s, [last.x[0], last.x[1], last.psi]);
    Ok(ShotResult {
        psi0,
        trajectory,
        miss,
        arrival,
        cost,
        converged: miss <= cfg.tolerance,
    })
}

/// Signed miss and distance at arrival, without building the trajectory.
fn probe(s: &Scenario, psi0: f64, cfg: &ShootConfig) -> Result<(f64, f64), PmpError> {
    let arrival = arrival_time(s, psi0, cfg)?;
    let traj = fly_uniform(s, psi0, arrival, cfg.dt)?;
    let last = traj[traj.len() - 1];
    let y = [last.x[0], last.x[1], last.psi];
    Ok((signed_miss(s, y), distance(s, y)))
}

/// Best converged shot over the heading grid, or the closest miss flagged
/// as not converged.
pub fn solve(s: &Scenario, cfg: &ShootConfig) -> Result<ShotResult, PmpError> {
    check_static(s)?;
    cfg.validate()?;
    let headings: Vec<f64> = (0..cfg.grid).map(|k| TAU * k as f64 / cfg.grid as f64).collect();
    let probes = headings
        .iter()
        .map(|&psi| probe(s, psi, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut roots = Vec::new();
    for k in 0..cfg.grid {
        let j = (k + 1) % cfg.grid;
        let (a, b) = (headings[k], if j == 0 { TAU } else { headings[j] });
        let (ma, da) = probes[k];
        let (mb, _) = probes[j];
        if da <= cfg.tolerance && ma == 0.0 {
            roots.push(a);
            continue;
        }
        if ma.signum() == mb.signum() {
            continue;
        }
        roots.push(bisect(s, cfg, a, b, ma)?);
    }

    let mut best: Option<ShotResult> = None;
    for psi in roots {
        let shot = integrate(s, psi.rem_euclid(TAU), cfg)?;
        if !shot.converged {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => shot.cost < b.cost || (shot.cost == b.cost && shot.psi0 < b.psi0),
        };
        if better {
            best = Some(shot);
        }
    }
    if let Some(b) = best {
        return Ok(b);
    }
    let closest = probes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| headings[k])
        .unwrap_or(0.0);
    let mut shot = integrate(s, closest, cfg)?;
    shot.converged = false;
    Ok(shot)
}

fn bisect(s: &Scenario, cfg: &ShootConfig, mut a: f64, mut b: f64, mut ma: f64) -> Result<f64, PmpError> {
    for _ in 0..cfg.bisections {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let (mm, _) = probe(s, m, cfg)?;
        if mm == 0.0 {
            return Ok(m);
        }
        if mm.signum() == ma.signum() {
            a = m;
            ma = mm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Relative cost gap `(C_PINN − C_ref) / C_ref`; `None` when the reference
/// is missing or not positive.
pub fn cost_gap(pinn_cost: f64, reference: Option<f64>) -> Option<f64> {
    match reference {
        Some(r) if r > 0.0 && r.is_finite() => Some((pinn_cost - r) / r),
        _ => None,
    }
}
