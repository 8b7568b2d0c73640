//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Training criteria run at the desk profile by default. Set
//! `ACCEPTANCE_PROFILE=full` for the 128-neuron, 512-point, 10 000-epoch
//! static and time-varying runs.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use threat_pinn::autodiff::Elementary;
use threat_pinn::networks::{NetSpec, Normalization, PinnModel};
use threat_pinn::pmp::{self, uniform_grid};
use threat_pinn::shooting::{self, ShootConfig};
use threat_pinn::trainer::{self, Batch, Profile};
use threat_pinn::{Activation, RadialBasis, Scenario, Tape, TemporalMode, ThreatField, Workspace};
use threat_pinn_cli::commands;
use threat_pinn_cli::scenario::ScenarioFile;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn full_profile() -> bool {
    std::env::var("ACCEPTANCE_PROFILE").is_ok_and(|v| v == "full")
}

fn fmt_losses(l: &[f64]) -> String {
    l.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")
}

// 1 ------------------------------------------------------------------------

fn partials(op: Elementary, a: f64, b: f64) -> Vec<f64> {
    use Elementary::*;
    match op {
        Add => vec![1.0, 1.0],
        Sub => vec![1.0, -1.0],
        Mul => vec![b, a],
        Div => vec![1.0 / b, -a / (b * b)],
        Sin => vec![a.cos()],
        Cos => vec![-a.sin()],
        Exp => vec![a.exp()],
        Ln => vec![1.0 / a],
        Tanh => vec![1.0 - a.tanh().powi(2)],
        Sigmoid => {
            let s = 1.0 / (1.0 + (-a).exp());
            vec![s * (1.0 - s)]
        }
        Atan2 => {
            let r = a * a + b * b;
            vec![b / r, -a / r]
        }
        Pow => vec![b * a.powf(b - 1.0), a.powf(b) * a.ln()],
    }
}

fn elementary_error() -> f64 {
    use Elementary::*;
    let mut worst: f64 = 0.0;
    for op in [Add, Sub, Mul, Div, Sin, Cos, Exp, Ln, Tanh, Sigmoid, Atan2, Pow] {
        for &(a, b) in &[(0.3, 1.7), (2.2, -0.6), (1.1, 0.9), (0.05, 2.5)] {
            let tape = Tape::new();
            let args = [tape.var(a), tape.var(b)];
            let want = partials(op, a, b);
            let y = tape.record(op, &args[..want.len()]).unwrap();
            let got = tape.gradient(y, &args[..want.len()]).unwrap();
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs() / w.abs().max(1.0));
            }
        }
    }
    worst
}

fn gradient_scenario(mode: TemporalMode) -> Scenario {
    let field = ThreatField::new(
        vec![
            RadialBasis::new(1.0, [2.0, -1.0], [0.08, 0.02, 0.05]),
            RadialBasis::new(0.6, [-4.0, 5.0], [0.12, -0.03, 0.09]),
        ],
        5.0,
        1.0,
        mode,
    )
    .unwrap();
    Scenario::new([-9.0, -4.0], [8.0, 6.0], 10.0, 0.2, field, Workspace::default()).unwrap()
}

/// Worst relative error of each loss's parameter gradient against a
/// five-point central difference.
fn per_loss_errors(mode: TemporalMode) -> [f64; 10] {
    let s = gradient_scenario(mode);
    let model = PinnModel::init(
        5,
        NetSpec::uniform(2, 8, Activation::AdaptiveSine),
        NetSpec::uniform(2, 8, Activation::Silu),
        Normalization::for_workspace(&s.workspace, s.speed),
    )
    .unwrap();
    let batch = Batch {
        initial_states: vec![s.x0],
        taus: uniform_grid(8),
    };
    let losses_at = |m: &PinnModel| trainer::compute_losses(m, &s, &batch).unwrap();
    let fd: Vec<[f64; 10]> = (0..model.param_count())
        .map(|i| {
            let h = 1e-4 * model.params()[i].abs().max(1.0);
            let at = |k: f64| {
                let mut m = model.clone();
                m.params_mut()[i] += k * h;
                losses_at(&m)
            };
            let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
            std::array::from_fn(|k| (m2[k] - 8.0 * m1[k] + 8.0 * p1[k] - p2[k]) / (12.0 * h))
        })
        .collect();
    let (out, trace) = model.forward(&batch.points()).unwrap();
    std::array::from_fn(|k| {
        let tape = Tape::new();
        let g = trainer::record_losses(&tape, &s, &batch, &out).unwrap();
        let grad = model.backward(&trace, &g.output_adjoint(&tape, g.terms[k]).unwrap());
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return fd.iter().fold(0.0f64, |m, r| m.max(r[k].abs()));
        }
        (0..grad.len())
            .map(|i| (fd[i][k] - grad[i]).abs() / fd[i][k].abs().max(grad[i].abs()).max(1e-3 * scale))
            .fold(0.0, f64::max)
    })
}

fn criterion_1() -> Outcome {
    let elem = elementary_error();
    let mut worst: f64 = 0.0;
    for mode in [TemporalMode::Static, TemporalMode::Cosine] {
        worst = per_loss_errors(mode).into_iter().fold(worst, f64::max);
    }
    outcome(
        worst <= 1e-4 && elem <= 1e-8,
        format!("worst per-loss rel. err {worst:.2e} (≤ 1e-4), elementary {elem:.2e} (≤ 1e-8)"),
    )
}

// 2 ------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for (x0, xf, c0) in [([-9.0, -4.0], [8.0, 6.0], 1.0), ([12.0, 0.0], [-12.0, 3.5], 2.5)] {
        let s = Scenario::new(x0, xf, 10.0, 0.0, ThreatField::constant(c0), Workspace::default()).unwrap();
        let batch = Batch {
            initial_states: vec![x0],
            taus: uniform_grid(128),
        };
        let out = trainer::straight_line_outputs(&s, &batch);
        let l = trainer::losses_of_outputs(&s, &batch, &out).unwrap();
        worst = l[..9].iter().copied().fold(worst, f64::max);
    }
    outcome(worst <= 1e-10, format!("max L1..L9 {worst:.2e} (≤ 1e-10)"))
}

// 3, 4 ---------------------------------------------------------------------

fn train_file(name: &str, profile: Profile) -> threat_pinn_cli::artifacts::LossReportFile {
    let dir = TempDir::new().unwrap();
    commands::train(&sample(name), profile, None, dir.path()).unwrap()
}

fn criterion_3() -> Outcome {
    let (profile, tol) = if full_profile() { (Profile::Full, 5e-2) } else { (Profile::Desk, 2e-1) };
    let mut passed = 0;
    let mut lines = Vec::new();
    for name in ["static_a.toml", "static_b.toml", "static_c.toml"] {
        let t = Instant::now();
        let r = train_file(name, profile);
        let secs = t.elapsed().as_secs_f64();
        let worst = [0, 2, 3, 4, 5, 6, 7, 8].iter().map(|&k| r.losses[k]).fold(0.0, f64::max);
        let budget = if profile == Profile::Full { 1800.0 } else { 300.0 };
        let ok = worst <= tol && r.max_abs_hamiltonian <= 0.1 && secs <= budget;
        passed += ok as usize;
        lines.push(format!(
            "{name}: max(L1,L3..L9) {worst:.2e}, max|H| {:.3}, {secs:.0}s",
            r.max_abs_hamiltonian
        ));
    }
    let label = if profile == Profile::Full { "full" } else { "desk" };
    outcome(
        passed >= 2,
        format!("{label} profile, {passed}/3 runs within {tol:.0e}: {}", lines.join("; ")),
    )
}

fn criterion_4() -> Outcome {
    let profile = if full_profile() { Profile::Full } else { Profile::Desk };
    let t = Instant::now();
    let r = train_file("cosine_a.toml", profile);
    let secs = t.elapsed().as_secs_f64();
    let worst = (0..9).filter(|&k| k != 1).map(|k| r.losses[k]).fold(0.0, f64::max);
    let label = if profile == Profile::Full { "full" } else { "desk" };
    outcome(
        worst <= 1e-1 && secs <= 2700.0,
        format!("{label} profile, max(L1,L3..L9) {worst:.2e} (≤ 1e-1), {secs:.0}s; losses {}", fmt_losses(&r.losses[..9])),
    )
}

// 5 ------------------------------------------------------------------------

fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let bases = (0..rng.random_range(1..=4))
        .map(|_| {
            let l11: f64 = rng.random_range(0.03..0.2);
            let l22: f64 = rng.random_range(0.03..0.2);
            let l12 = rng.random_range(-0.4..0.4) * (l11 * l22).sqrt();
            RadialBasis::new(
                rng.random_range(0.2..1.5),
                [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)],
                [l11, l12, l22],
            )
        })
        .collect();
    let field = ThreatField::new(bases, 5.0, 1.0, TemporalMode::Static).unwrap();
    loop {
        let x0: [f64; 2] = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
        let xf = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
        if (x0[0] - xf[0]).hypot(x0[1] - xf[1]) >= 5.0 {
            return Scenario::new(x0, xf, 10.0, 0.0, field, Workspace::default()).unwrap();
        }
    }
}

// Each swept shot is closed with a straight run from its closest approach to
// x_f, so every candidate is a feasible path.
fn sweep(s: &Scenario, cfg: &ShootConfig, n: usize) -> f64 {
    (0..n)
        .map(|k| {
            let shot = shooting::integrate(s, TAU * k as f64 / n as f64, cfg).unwrap();
            let (a, b) = (shot.end(), s.xf);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let closing = if len == 0.0 {
                0.0
            } else {
                let steps = (len / (s.speed * cfg.dt)).ceil().max(1.0) as usize;
                let taus = uniform_grid(steps + 1);
                let xs: Vec<[f64; 2]> = taus.iter().map(|t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]).collect();
                pmp::path_cost(s, &xs, &taus, len / s.speed).unwrap()
            };
            shot.cost + closing
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let cfg = ShootConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut converged = 0;
    for _ in 0..10 {
        let s = random_scenario(&mut rng);
        let best = shooting::solve(&s, &cfg).unwrap();
        converged += best.converged as usize;
        worst_excess = worst_excess.max(best.cost - sweep(&s, &cfg, 4096));
    }
    let s = Scenario::new([-12.0, -10.0], [12.0, 10.0], 10.0, 0.0, ThreatField::constant(1.0), Workspace::default()).unwrap();
    let shot = shooting::solve(&s, &cfg).unwrap();
    let exact = s.distance() / s.speed;
    let rel = (shot.cost - exact).abs() / exact;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst_excess <= 1e-6 && converged == 10 && rel <= 1e-4 && secs <= 300.0,
        format!(
            "max(shooting − sweep) {worst_excess:.2e} (≤ 1e-6), {converged}/10 converged, constant-field rel. err {rel:.2e} (≤ 1e-4), {secs:.0}s"
        ),
    )
}

// 6 ------------------------------------------------------------------------

/// Reference magnitudes for the sweep means of the unweighted L1..L9.
const REFERENCE_MEANS: [f64; 9] = [0.629e-3, 57.13e-3, 3.314e-3, 4.296e-3, 1.222e-3, 1.412e-3, 11.31e-3, 0.797e-3, 12.39e-3];

fn criterion_6(sweep_dir: &Path) -> (Outcome, Outcome) {
    let t = Instant::now();
    let r = commands::compare(&sample("static_a.toml"), Profile::Desk, 10, 0, sweep_dir).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let mean = r.delta.mean.unwrap_or(f64::NAN);
    let delta = outcome(
        (-0.05..=0.3).contains(&mean) && r.delta.n == 10,
        format!(
            "mean δ {mean:.4} over {} trials (in [−0.05, 0.3]), σ {:.4}, {secs:.0}s",
            r.delta.n,
            r.delta.std.unwrap_or(f64::NAN)
        ),
    );
    let means: Vec<f64> = r.losses[..9].iter().map(|s| s.mean.unwrap_or(f64::NAN)).collect();
    let ratios: Vec<f64> = means.iter().zip(REFERENCE_MEANS).map(|(m, p)| m / p).collect();
    let table = outcome(
        ratios.iter().all(|q| *q <= 10.0),
        format!("μ(L1..L9) / reference mean: {}", ratios.iter().map(|q| format!("{q:.2}")).collect::<Vec<_>>().join(" ")),
    );
    (delta, table)
}

// 7 ------------------------------------------------------------------------

fn hd_error(n: usize) -> f64 {
    let (peak, center, spread, radius) = (1.3, [1.0, -2.0], 3.0, 4.0);
    let field = ThreatField::new(vec![RadialBasis::isotropic(peak, center, spread)], 5.0, 1.0, TemporalMode::Cosine).unwrap();
    let tf = 3.7;
    let taus = uniform_grid(n);
    let xs: Vec<[f64; 2]> = taus
        .iter()
        .map(|t| [center[0] + radius * (TAU * t).cos(), center[1] + radius * (TAU * t).sin()])
        .collect();
    let hd = pmp::hd_profile(&field, tf, &taus, &xs).unwrap();
    let g = (-0.5 * radius * radius / (spread * spread)).exp();
    let m = |t: f64| 0.5 * peak * ((peak * t).cos() + 1.5);
    taus.iter()
        .zip(&hd)
        .map(|(tau, h)| (h + 5.0 * g * (m(tf) - m(tau * tf))).abs())
        .fold(0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let ns = [64usize, 128, 256];
    let errs: Vec<f64> = ns.iter().map(|&n| hd_error(n)).collect();
    let orders: Vec<f64> = (0..2)
        .map(|i| (errs[i] / errs[i + 1]).ln() / (((ns[i + 1] - 1) as f64) / ((ns[i] - 1) as f64)).ln())
        .collect();
    outcome(
        orders.iter().all(|p| *p >= 1.8),
        format!("observed orders {:.3}, {:.3} (≥ 1.8)", orders[0], orders[1]),
    )
}

// 8 ------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let field = ThreatField::new(
        vec![
            RadialBasis::new(1.2, [2.0, -1.0], [0.08, 0.02, 0.05]),
            RadialBasis::new(0.7, [-4.0, 5.0], [0.12, -0.03, 0.09]),
        ],
        5.0,
        1.0,
        TemporalMode::Cosine,
    )
    .unwrap();
    let s = Scenario::new([-10.0, -3.0], [9.0, 7.0], 10.0, 0.4, field, Workspace::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = [rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0)];
        let psi: f64 = rng.random_range(-PI..PI);
        let k: f64 = rng.random_range(0.05..2.0);
        let psi_dot: f64 = rng.random_range(-3.0..3.0);
        let t: f64 = rng.random_range(0.0..6.0);
        let tape = Tape::new();
        let v = tape.vars(&[x[0], x[1], psi, -k * psi.cos(), -k * psi.sin(), t]);
        let h = pmp::hamiltonian(&s, [v[0], v[1]], v[2], [v[3], v[4]], v[5]);
        let g = tape.gradient(h, &v).unwrap();
        // ẋ = ∂H/∂p, ṗ = −∂H/∂x, and ∂H/∂ψ = 0 on this heading branch
        let x_dot = [g[3], g[4]];
        let p_dot = [-g[0], -g[1]];
        let total = g[0] * x_dot[0] + g[1] * x_dot[1] + g[2] * psi_dot + g[3] * p_dot[0] + g[4] * p_dot[1] + g[5];
        worst = worst.max((total - s.field.dc_dt(x, t)).abs());
    }
    outcome(worst <= 1e-8, format!("max |dH/dt − ∂c/∂t| {worst:.2e} over 1000 states (≤ 1e-8)"))
}

// 9 ------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let file = ScenarioFile::load(&sample("conditioned_a.toml")).unwrap();
    let s = file.scenario().unwrap();
    let config = file.train_config(Profile::Desk, None).unwrap();
    let out = trainer::train_conditioned(&s, &config, &file.weights()).unwrap();
    let mut worst: f64 = 0.0;
    let mut finite = true;
    let mut lines = Vec::new();
    for x0 in [[-12.0, 3.0], [4.0, -13.0], [-6.0, -12.0]] {
        let unseen = s.with_endpoints(x0, s.xf).unwrap();
        let (report, traj) = trainer::evaluate(&out.model, &unseen, config.collocation).unwrap();
        let (a, b) = (traj.start(), traj.end());
        let miss = (a[0] - x0[0]).hypot(a[1] - x0[1]).max((b[0] - s.xf[0]).hypot(b[1] - s.xf[1]));
        worst = worst.max(miss);
        finite &= report.is_finite();
        lines.push(format!("{x0:?} miss {miss:.3} m, L8 {:.1e}, L9 {:.1e}", report.losses[7], report.losses[8]));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 0.5 && finite && secs <= 2700.0,
        format!("desk profile, worst endpoint miss {worst:.3} m (≤ 0.5), {secs:.0}s: {}", lines.join("; ")),
    )
}

// 10 -----------------------------------------------------------------------

const QUICK: &str = r#"
seed = 4
x0 = [-10.0, -3.0]
xf = [9.0, 5.0]
[field]
[[field.bases]]
peak = 0.15
center = [0.0, -2.0]
shape = [0.0625, 0.0, 0.0625]
[train]
max_epochs = 60
collocation = 16
width = 8
log_every = 5
"#;

fn files_of(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(files_of(&p));
        } else {
            v.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
        }
    }
    v.sort();
    v
}

fn criterion_10() -> Outcome {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("quick.toml");
    std::fs::write(&scenario, QUICK).unwrap();
    let cosine = dir.path().join("cosine.toml");
    std::fs::write(&cosine, QUICK.replace("[field]", "[field]\nmode = \"cosine\"")).unwrap();
    let invocations: Vec<(&str, Vec<String>)> = vec![
        ("train", vec!["train".into(), "--profile".into(), "desk".into(), "--scenario".into(), scenario.display().to_string()]),
        ("train cosine", vec!["train".into(), "--profile".into(), "desk".into(), "--scenario".into(), cosine.display().to_string()]),
        ("shoot", vec!["shoot".into(), "--scenario".into(), scenario.display().to_string()]),
        (
            "compare",
            vec!["compare".into(), "--profile".into(), "desk".into(), "--trials".into(), "3".into(), "--seed".into(), "17".into(), "--scenario".into(), scenario.display().to_string()],
        ),
    ];
    let mut identical = 0;
    let mut notes = Vec::new();
    for (label, args) in &invocations {
        let outs: Vec<Vec<(PathBuf, Vec<u8>)>> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.path().join(format!("{}-{tag}", label.replace(' ', "-")));
                let o = Command::new(env!("CARGO_BIN_EXE_threat-pinn"))
                    .args(args)
                    .arg("--out-dir")
                    .arg(&out)
                    .output()
                    .unwrap();
                assert!(o.status.success(), "{label} failed: {}", String::from_utf8_lossy(&o.stderr));
                if label.starts_with("train") {
                    let o = Command::new(env!("CARGO_BIN_EXE_threat-pinn"))
                        .args(["plotdata", "--out-dir"])
                        .arg(&out)
                        .output()
                        .unwrap();
                    assert!(o.status.success());
                }
                files_of(&out)
            })
            .collect();
        let same = outs[0] == outs[1] && !outs[0].is_empty();
        identical += same as usize;
        notes.push(format!("{label}: {} files {}", outs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    outcome(identical == invocations.len(), notes.join("; "))
}

fn main() {
    let started = Instant::now();
    let sweep_dir = TempDir::new().unwrap();
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut record = |label: &str, o: Outcome| {
        println!("{} {label}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((label.to_string(), o));
    };
    record("criterion 1 (autodiff correctness)", criterion_1());
    record("criterion 2 (exact-solution residuals)", criterion_2());
    record("criterion 3 (static-field training)", criterion_3());
    record("criterion 4 (time-varying training)", criterion_4());
    record("criterion 5 (baseline optimality)", criterion_5());
    let (delta, table) = criterion_6(sweep_dir.path());
    record("criterion 6 (cost gap δ)", delta);
    record("criterion 7 (H_d quadrature order)", criterion_7());
    record("criterion 8 (dH/dt = ∂c/∂t)", criterion_8());
    record("criterion 9 (conditioned mode)", criterion_9());
    record("criterion 10 (determinism)", criterion_10());
    println!("{} desk sweep loss means (≤ 10× reference): {}", if table.pass { "PASS" } else { "FAIL" }, table.detail);
    results.push(("desk sweep loss means".into(), table));
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(l, _)| l.as_str()).collect();
    println!("acceptance finished in {:.0}s", started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
