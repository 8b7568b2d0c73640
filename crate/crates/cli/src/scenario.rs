//! Scenario files: TOML with a strict schema.
//!
//! ```toml
//! seed = 7
//! speed = 10.0          # m/s, default 10
//! bolza = 0.0           # default 0
//! x0 = [-12.0, -10.0]
//! xf = [12.0, 10.0]
//!
//! [workspace]           # default [-15, 15]
//! lo = -15.0
//! hi = 15.0
//!
//! [field]
//! amplitude = 5.0       # default 5
//! offset = 1.0          # default 1
//! mode = "static"       # or "cosine"
//!
//! [[field.bases]]
//! peak = 1.0
//! center = [-5.0, 4.0]
//! shape = [0.08, 0.0, 0.08]   # [l11, l12, l22]
//!
//! [train]               # every key optional
//! max_epochs = 3000
//! conditioned = false
//!
//! [shoot]               # every key optional
//! grid = 64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use threat_pinn::shooting::ShootConfig;
use threat_pinn::trainer::{LossWeights, Profile, TrainConfig};
use threat_pinn::{RadialBasis, Scenario, TemporalMode, ThreatField, Workspace};

use crate::CliError;

fn default_speed() -> f64 {
    10.0
}

fn default_amplitude() -> f64 {
    5.0
}

fn default_offset() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default)]
    pub bolza: f64,
    pub x0: [f64; 2],
    pub xf: [f64; 2],
    #[serde(default)]
    pub workspace: WorkspaceSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub shoot: ShootOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        let w = Workspace::default();
        Self { lo: w.lo, hi: w.hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default)]
    pub mode: TemporalMode,
    #[serde(default)]
    pub bases: Vec<BasisSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub peak: f64,
    pub center: [f64; 2],
    pub shape: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub collocation: Option<usize>,
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub decay_factor: Option<f64>,
    pub decay_epoch: Option<usize>,
    pub annealing: Option<bool>,
    pub anneal_alpha: Option<f64>,
    pub anneal_every: Option<usize>,
    pub annealed: Option<Vec<usize>>,
    pub stop_threshold: Option<f64>,
    pub log_every: Option<usize>,
    pub width: Option<usize>,
    pub weights: Option<[f64; 10]>,
    pub conditioned: Option<bool>,
    pub conditioned_states: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootOverrides {
    pub grid: Option<usize>,
    pub dt: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_time: Option<f64>,
    pub bisections: Option<usize>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("scenario schema: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn field(&self) -> Result<ThreatField, CliError> {
        let bases = self
            .field
            .bases
            .iter()
            .map(|b| RadialBasis::new(b.peak, b.center, b.shape))
            .collect();
        ThreatField::new(bases, self.field.amplitude, self.field.offset, self.field.mode)
            .map_err(|e| CliError::Input(format!("field: {e}")))
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let ws = Workspace {
            lo: self.workspace.lo,
            hi: self.workspace.hi,
        };
        Scenario::new(self.x0, self.xf, self.speed, self.bolza, self.field()?, ws)
            .map_err(|e| CliError::Input(format!("scenario: {e}")))
    }

    pub fn is_conditioned(&self) -> bool {
        self.train.conditioned.unwrap_or(false)
    }

    pub fn weights(&self) -> LossWeights {
        self.train
            .weights
            .map(LossWeights)
            .unwrap_or_else(|| LossWeights::for_mode(self.field.mode))
    }

    /// Profile defaults with the file's overrides and seed applied.
    pub fn train_config(&self, profile: Profile, seed: Option<u64>) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::new(profile, self.field.mode).with_seed(seed.unwrap_or(self.seed));
        let o = &self.train;
        if let Some(w) = o.width {
            c.state_net = threat_pinn::NetSpec::uniform(c.state_net.hidden.len(), w, threat_pinn::Activation::AdaptiveSine);
            c.costate_net = threat_pinn::NetSpec::uniform(c.costate_net.hidden.len(), w, threat_pinn::Activation::Silu);
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f.clone() { c.$f = v; } )* };
        }
        set!(
            collocation,
            max_epochs,
            learning_rate,
            decay_factor,
            decay_epoch,
            annealing,
            anneal_alpha,
            anneal_every,
            annealed,
            stop_threshold,
            log_every,
            conditioned_states
        );
        c.validate().map_err(|e| CliError::Input(format!("train: {e}")))?;
        Ok(c)
    }

    pub fn shoot_config(&self) -> Result<ShootConfig, CliError> {
        let d = ShootConfig::default();
        let o = &self.shoot;
        let c = ShootConfig {
            grid: o.grid.unwrap_or(d.grid),
            dt: o.dt.unwrap_or(d.dt),
            tolerance: o.tolerance.unwrap_or(d.tolerance),
            max_time: o.max_time.or(d.max_time),
            bisections: o.bisections.unwrap_or(d.bisections),
        };
        c.validate().map_err(|e| CliError::Input(format!("shoot: {e}")))?;
        Ok(c)
    }
}
