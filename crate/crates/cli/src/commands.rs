use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use threat_pinn::pmp::PmpError;
use threat_pinn::shooting::{self, ShootConfig};
use threat_pinn::trainer::{self, Profile, TrainError, TrainOutcome};
use threat_pinn::{PinnModel, Scenario, TemporalMode};

use crate::artifacts::{self as art, CompareReport, CompareRow, LossReportFile, ShotFile};
use crate::scenario::ScenarioFile;
use crate::CliError;

pub fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Full => "full",
        Profile::Desk => "desk",
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        e @ TrainError::Divergence(_) => CliError::Divergence(e.to_string()),
        TrainError::Config(m) => CliError::Input(m),
        TrainError::Pmp(e) => CliError::Input(e.to_string()),
        other => CliError::Failure(other.to_string()),
    }
}

fn pmp_error(e: PmpError) -> CliError {
    match e {
        PmpError::TimeVarying => CliError::InvalidMode(e.to_string()),
        PmpError::Denominator(_) => CliError::Failure(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

fn run_training(s: &Scenario, file: &ScenarioFile, profile: Profile, seed: Option<u64>) -> Result<TrainOutcome, TrainError> {
    let config = file.train_config(profile, seed).map_err(|e| TrainError::Config(e.to_string()))?;
    let weights = file.weights();
    if file.is_conditioned() {
        let out = trainer::train_conditioned(s, &config, &weights)?;
        let (mut report, trajectory) = trainer::evaluate(&out.model, s, config.collocation)?;
        report.epochs = out.report.epochs;
        Ok(TrainOutcome {
            report,
            trajectory,
            ..out
        })
    } else {
        trainer::train_single(s, &config, &weights)
    }
}

pub fn validate(scenario: &Path) -> Result<ScenarioFile, CliError> {
    let file = ScenarioFile::load(scenario)?;
    file.scenario()?;
    file.train_config(Profile::Full, None)?;
    file.shoot_config()?;
    Ok(file)
}

pub fn train(scenario: &Path, profile: Profile, seed: Option<u64>, out: &Path) -> Result<LossReportFile, CliError> {
    let file = ScenarioFile::load(scenario)?;
    let s = file.scenario()?;
    ensure_dir(out)?;
    let seed = seed.unwrap_or(file.seed);
    let outcome = match run_training(&s, &file, profile, Some(seed)) {
        Ok(o) => o,
        Err(TrainError::Divergence(d)) => {
            art::write_log(&out.join(art::TRAIN_LOG), &d.log)?;
            return Err(train_error(TrainError::Divergence(d)));
        }
        Err(e) => return Err(train_error(e)),
    };
    outcome
        .model
        .save(&out.join(art::MODEL))
        .map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out.join(art::SCENARIO_COPY), file.to_toml()).map_err(|e| CliError::Io(e.to_string()))?;
    art::write_log(&out.join(art::TRAIN_LOG), &outcome.log)?;
    art::write_csv(&out.join(art::TRAJECTORY), &art::pinn_rows(&outcome.trajectory))?;
    let report = LossReportFile::new(
        seed,
        profile_name(profile),
        file.is_conditioned(),
        &s,
        &outcome.report,
        &outcome.trajectory,
    );
    art::write_json(&out.join(art::LOSS_REPORT), &report)?;
    Ok(report)
}

pub fn shoot(scenario: &Path, out: &Path) -> Result<ShotFile, CliError> {
    let file = ScenarioFile::load(scenario)?;
    let s = file.scenario()?;
    let cfg = file.shoot_config()?;
    if s.field.mode() != TemporalMode::Static && !s.field.bases().is_empty() {
        return Err(CliError::InvalidMode(
            "co-states cannot be eliminated for a time-varying field".into(),
        ));
    }
    let shot = shooting::solve(&s, &cfg).map_err(pmp_error)?;
    ensure_dir(out)?;
    art::write_csv(&out.join(art::TRAJECTORY), &art::shot_rows(&s, &shot))?;
    let summary = ShotFile {
        psi0: shot.psi0,
        miss: shot.miss,
        arrival: shot.arrival,
        cost: shot.cost,
        converged: shot.converged,
        tolerance: cfg.tolerance,
        dt: cfg.dt,
    };
    art::write_json(&out.join(art::SHOT), &summary)?;
    Ok(summary)
}

/// Uniform endpoint pair at least `min_sep` apart.
pub fn draw_pair(rng: &mut ChaCha8Rng, s: &Scenario, min_sep: f64) -> ([f64; 2], [f64; 2]) {
    let (lo, hi) = (s.workspace.lo, s.workspace.hi);
    loop {
        let a = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        let b = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        if (a[0] - b[0]).hypot(a[1] - b[1]) >= min_sep {
            return (a, b);
        }
    }
}

fn compare_trial(
    base: &Scenario,
    file: &ScenarioFile,
    profile: Profile,
    shoot_cfg: &ShootConfig,
    row: &mut CompareRow,
) -> Result<(), CliError> {
    let s = base
        .with_endpoints([row.x0_1, row.x0_2], [row.xf_1, row.xf_2])
        .map_err(|e| CliError::Input(e.to_string()))?;
    let mut single = file.clone();
    single.train.conditioned = Some(false);
    let outcome = run_training(&s, &single, profile, Some(row.seed)).map_err(train_error)?;
    row.epochs = Some(outcome.report.epochs);
    row.set_losses(&outcome.report.losses);
    row.pinn_cost = Some(outcome.trajectory.cost);
    if s.field.is_static() {
        let shot = shooting::solve(&s, shoot_cfg).map_err(pmp_error)?;
        row.baseline_converged = Some(shot.converged);
        if shot.converged {
            row.baseline_cost = Some(shot.cost);
            row.delta = shooting::cost_gap(outcome.trajectory.cost, Some(shot.cost));
        }
    }
    Ok(())
}

/// Scenario files behind a compare source: the file itself, or every
/// `*.toml` in a directory, sorted by name.
pub fn scenario_files(source: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    if !source.is_dir() {
        return Ok(vec![source.to_path_buf()]);
    }
    let entries = std::fs::read_dir(source).map_err(|e| CliError::Input(format!("{}: {e}", source.display())))?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!("no scenario files in {}", source.display())));
    }
    Ok(files)
}

/// Trial `i` uses the `i mod k`-th of the `k` scenarios found at `source`.
pub fn compare(source: &Path, profile: Profile, trials: usize, seed: u64, out: &Path) -> Result<CompareReport, CliError> {
    let mut family = Vec::new();
    for path in scenario_files(source)? {
        let file = ScenarioFile::load(&path)?;
        let base = file.scenario()?;
        let shoot_cfg = file.shoot_config()?;
        file.train_config(profile, Some(seed))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        family.push((name, file, base, shoot_cfg));
    }
    ensure_dir(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let (name, file, base, shoot_cfg) = &family[trial % family.len()];
        let (x0, xf) = draw_pair(&mut rng, base, 5.0);
        let trial_seed: u64 = rng.random();
        let mut row = CompareRow {
            trial,
            scenario: name.clone(),
            seed: trial_seed,
            x0_1: x0[0],
            x0_2: x0[1],
            xf_1: xf[0],
            xf_2: xf[1],
            status: "ok".into(),
            ..Default::default()
        };
        if let Err(e) = compare_trial(base, file, profile, shoot_cfg, &mut row) {
            row.status = "failed".into();
            row.error = e.to_string();
            row.clear_results();
        }
        rows.push(row);
    }
    art::write_csv_with_header(&out.join(art::REPORT_CSV), &art::COMPARE_HEADER, &rows)?;
    let report = CompareReport::aggregate(seed, profile_name(profile), rows);
    art::write_json(&out.join(art::REPORT_JSON), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct HamiltonianRow {
    pub tau: f64,
    pub t: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "H_d")]
    pub h_d: f64,
    #[serde(rename = "dH_dt")]
    pub dh_dt: f64,
    pub dc_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct OverlayRow {
    pub tau: f64,
    pub t: f64,
    /// Network derivative, first component.
    pub lhs_1: f64,
    /// Necessary-condition value, first component.
    pub rhs_1: f64,
    pub residual_1: f64,
    pub lhs_2: f64,
    pub rhs_2: f64,
    pub residual_2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ScalarRow {
    pub tau: f64,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct GridRow {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct PathRow {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
}

pub const PLOT_DIR: &str = "plot";
pub const HEAT_GRID_SIZE: usize = 61;

/// Raster of c over the workspace at time `t`.
pub fn heat_grid(s: &Scenario, t: f64, n: usize) -> Vec<GridRow> {
    let (lo, hi) = (s.workspace.lo, s.workspace.hi);
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x1 = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let x2 = lo + (hi - lo) * j as f64 / (n - 1) as f64;
            rows.push(GridRow {
                t,
                x1,
                x2,
                c: s.field.value([x1, x2], t),
            });
        }
    }
    rows
}

fn overlay(tau: &[f64], t: &[f64], lhs: &[[f64; 2]], rhs: &[[f64; 2]]) -> Vec<OverlayRow> {
    (0..tau.len())
        .map(|i| OverlayRow {
            tau: tau[i],
            t: t[i],
            lhs_1: lhs[i][0],
            rhs_1: rhs[i][0],
            residual_1: lhs[i][0] - rhs[i][0],
            lhs_2: lhs[i][1],
            rhs_2: rhs[i][1],
            residual_2: lhs[i][1] - rhs[i][1],
        })
        .collect()
}

/// Writes plot tables for the training run in `run`, into `run/plot`.
pub fn plotdata(run: &Path) -> Result<(), CliError> {
    let model_path = run.join(art::MODEL);
    let scenario_path = run.join(art::SCENARIO_COPY);
    let trajectory_path = run.join(art::TRAJECTORY);
    for p in [&model_path, &scenario_path, &trajectory_path] {
        if !p.is_file() {
            return Err(CliError::Input(format!("missing run artifact {}", p.display())));
        }
    }
    let file = ScenarioFile::load(&scenario_path)?;
    let s = file.scenario()?;
    let model = PinnModel::load(&model_path).map_err(|e| CliError::Input(e.to_string()))?;
    let n = art::read_csv::<art::TrajectoryRow>(&trajectory_path)?.len();
    if n < 2 {
        return Err(CliError::Input(format!("{} has fewer than two rows", trajectory_path.display())));
    }
    let d = trainer::diagnostics(&model, &s, n).map_err(train_error)?;
    let dir = run.join(PLOT_DIR);
    ensure_dir(&dir)?;

    let ham: Vec<HamiltonianRow> = (0..n)
        .map(|i| HamiltonianRow {
            tau: d.tau[i],
            t: d.t[i],
            h: d.h[i],
            h_d: d.h_desired[i],
            dh_dt: d.dh_dt[i],
            dc_dt: d.dc_dt[i],
        })
        .collect();
    art::write_csv(&dir.join("hamiltonian.csv"), &ham)?;
    art::write_csv(&dir.join("kinematics.csv"), &overlay(&d.tau, &d.t, &d.dx_dt, &d.velocity))?;
    let neg_grad: Vec<[f64; 2]> = d.grad_c.iter().map(|g| [-g[0], -g[1]]).collect();
    art::write_csv(&dir.join("costate.csv"), &overlay(&d.tau, &d.t, &d.dp_dt, &neg_grad))?;
    let dpsi: Vec<ScalarRow> = (0..n)
        .map(|i| ScalarRow {
            tau: d.tau[i],
            t: d.t[i],
            value: d.dh_dpsi[i],
        })
        .collect();
    art::write_csv(&dir.join("dh_dpsi.csv"), &dpsi)?;
    let mut grid = heat_grid(&s, 0.0, HEAT_GRID_SIZE);
    if !s.field.is_static() {
        grid.extend(heat_grid(&s, d.final_time, HEAT_GRID_SIZE));
    }
    art::write_csv(&dir.join("field_grid.csv"), &grid)?;
    let path: Vec<PathRow> = (0..n)
        .map(|i| PathRow {
            t: d.t[i],
            x1: d.x[i][0],
            x2: d.x[i][1],
        })
        .collect();
    art::write_csv(&dir.join("path.csv"), &path)?;
    Ok(())
}
