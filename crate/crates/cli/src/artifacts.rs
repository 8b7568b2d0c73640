//! On-disk formats. Every writer has a matching reader and floats are
//! written in shortest round-trip form, so files re-read bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use threat_pinn::trainer::{LogRow, LossReport, Trajectory, LOSS_COUNT};
use threat_pinn::{pmp, Scenario, ShotResult};

use crate::CliError;

pub const MODEL: &str = "model.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const LOSS_REPORT: &str = "loss_report.json";
pub const SCENARIO_COPY: &str = "scenario.toml";
pub const SHOT: &str = "shot.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a header-only file when `rows` is empty.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        w.write_record(header).map_err(|e| io_err(path, e))?;
        return w.flush().map_err(|e| io_err(path, e));
    }
    write_csv(path, rows)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Shared trajectory schema of trainer and baseline output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub tau: f64,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub psi: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub c: f64,
}

pub const TRAJECTORY_HEADER: [&str; 9] = ["tau", "t", "x1", "x2", "psi", "p1", "p2", "H", "c"];

pub fn pinn_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    traj.points
        .iter()
        .map(|p| TrajectoryRow {
            tau: p.tau,
            t: p.t,
            x1: p.x[0],
            x2: p.x[1],
            psi: p.psi,
            p1: p.p[0],
            p2: p.p[1],
            h: p.h,
            c: p.c,
        })
        .collect()
}

pub fn shot_rows(s: &Scenario, shot: &ShotResult) -> Vec<TrajectoryRow> {
    let costates = shot.costates(s);
    shot.trajectory
        .iter()
        .zip(costates)
        .map(|(q, p)| TrajectoryRow {
            tau: if shot.arrival > 0.0 { q.t / shot.arrival } else { 0.0 },
            t: q.t,
            x1: q.x[0],
            x2: q.x[1],
            psi: q.psi,
            p1: p[0],
            p2: p[1],
            h: pmp::hamiltonian(s, q.x, q.psi, p, q.t),
            c: s.field.value(q.x, q.t),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LogCsvRow {
    pub epoch: usize,
    pub lr: f64,
    pub L1: f64,
    pub L2: f64,
    pub L3: f64,
    pub L4: f64,
    pub L5: f64,
    pub L6: f64,
    pub L7: f64,
    pub L8: f64,
    pub L9: f64,
    pub L10: f64,
    pub L_reg: f64,
}

pub const LOG_HEADER: [&str; 13] = [
    "epoch", "lr", "L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8", "L9", "L10", "L_reg",
];

impl From<&LogRow> for LogCsvRow {
    fn from(r: &LogRow) -> Self {
        let l = r.losses;
        Self {
            epoch: r.epoch,
            lr: r.learning_rate,
            L1: l[0],
            L2: l[1],
            L3: l[2],
            L4: l[3],
            L5: l[4],
            L6: l[5],
            L7: l[6],
            L8: l[7],
            L9: l[8],
            L10: l[9],
            L_reg: r.regularization,
        }
    }
}

pub fn write_log(path: &Path, log: &[LogRow]) -> Result<(), CliError> {
    let rows: Vec<LogCsvRow> = log.iter().map(LogCsvRow::from).collect();
    write_csv_with_header(path, &LOG_HEADER, &rows)
}

/// Contents of `loss_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReportFile {
    pub seed: u64,
    pub profile: String,
    pub conditioned: bool,
    pub epochs: usize,
    pub x0: [f64; 2],
    pub xf: [f64; 2],
    /// Unweighted L1..L10.
    pub losses: [f64; LOSS_COUNT],
    pub regularization: f64,
    pub final_time: f64,
    pub cost: f64,
    pub max_abs_hamiltonian: f64,
}

impl LossReportFile {
    pub fn new(seed: u64, profile: &str, conditioned: bool, s: &Scenario, r: &LossReport, t: &Trajectory) -> Self {
        Self {
            seed,
            profile: profile.to_string(),
            conditioned,
            epochs: r.epochs,
            x0: s.x0,
            xf: s.xf,
            losses: r.losses,
            regularization: r.regularization,
            final_time: t.final_time,
            cost: t.cost,
            max_abs_hamiltonian: t.max_abs_hamiltonian(),
        }
    }
}

/// Contents of `shot.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotFile {
    pub psi0: f64,
    pub miss: f64,
    pub arrival: f64,
    pub cost: f64,
    pub converged: bool,
    pub tolerance: f64,
    pub dt: f64,
}

/// One trial of a comparison sweep; loss columns are empty for failures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CompareRow {
    pub trial: usize,
    /// Scenario file stem the trial's field came from.
    pub scenario: String,
    pub seed: u64,
    pub x0_1: f64,
    pub x0_2: f64,
    pub xf_1: f64,
    pub xf_2: f64,
    pub status: String,
    pub error: String,
    pub epochs: Option<usize>,
    pub L1: Option<f64>,
    pub L2: Option<f64>,
    pub L3: Option<f64>,
    pub L4: Option<f64>,
    pub L5: Option<f64>,
    pub L6: Option<f64>,
    pub L7: Option<f64>,
    pub L8: Option<f64>,
    pub L9: Option<f64>,
    pub L10: Option<f64>,
    pub pinn_cost: Option<f64>,
    pub baseline_cost: Option<f64>,
    pub baseline_converged: Option<bool>,
    pub delta: Option<f64>,
}

pub const COMPARE_HEADER: [&str; 24] = [
    "trial",
    "scenario",
    "seed",
    "x0_1",
    "x0_2",
    "xf_1",
    "xf_2",
    "status",
    "error",
    "epochs",
    "L1",
    "L2",
    "L3",
    "L4",
    "L5",
    "L6",
    "L7",
    "L8",
    "L9",
    "L10",
    "pinn_cost",
    "baseline_cost",
    "baseline_converged",
    "delta",
];

impl CompareRow {
    pub fn losses(&self) -> [Option<f64>; LOSS_COUNT] {
        [
            self.L1, self.L2, self.L3, self.L4, self.L5, self.L6, self.L7, self.L8, self.L9, self.L10,
        ]
    }

    pub fn clear_results(&mut self) {
        (self.L1, self.L2, self.L3, self.L4, self.L5) = (None, None, None, None, None);
        (self.L6, self.L7, self.L8, self.L9, self.L10) = (None, None, None, None, None);
        self.epochs = None;
        self.pinn_cost = None;
        self.baseline_cost = None;
        self.baseline_converged = None;
        self.delta = None;
    }

    pub fn set_losses(&mut self, l: &[f64; LOSS_COUNT]) {
        let [a, b, c, d, e, f, g, h, i, j] = l.map(Some);
        (self.L1, self.L2, self.L3, self.L4, self.L5) = (a, b, c, d, e);
        (self.L6, self.L7, self.L8, self.L9, self.L10) = (f, g, h, i, j);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1 denominator).
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, std: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean: Some(mean),
            std: Some(std),
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub profile: String,
    pub trials: usize,
    pub failures: usize,
    /// Aggregates of L1..L10 over successful trials.
    pub losses: Vec<Stat>,
    pub delta: Stat,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn aggregate(seed: u64, profile: &str, rows: Vec<CompareRow>) -> Self {
        let losses = (0..LOSS_COUNT)
            .map(|k| {
                let v: Vec<f64> = rows.iter().filter_map(|r| r.losses()[k]).collect();
                Stat::of(&v)
            })
            .collect();
        let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
        Self {
            seed,
            profile: profile.to_string(),
            trials: rows.len(),
            failures: rows.iter().filter(|r| r.status != "ok").count(),
            losses,
            delta: Stat::of(&deltas),
            rows,
        }
    }
}
