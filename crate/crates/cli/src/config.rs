//! Run configuration: one TOML document describes the system, the data,
//! the model, training and the downstream tasks.

use crate::error::{CliError, CliResult};
use obliq_core::dynamics::GenConfig;
use obliq_core::eval::{ErrorMetric, GridSpec, SweepConfig, TaskSuite};
use obliq_core::numerics::serde_matrix;
use obliq_core::{DynSystem, EmbeddingModel, FeatureMap, InputSchedule, Matrix, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seeds data generation and training; `--seed` replaces it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub system: DynSystem,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Defaults to the suite for `system` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<TaskSuite>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub run: RunSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_traj: usize,
    pub traj_len: usize,
    /// Defaults to `[-3, 3]` on every component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_box: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub schedule: InputSchedule,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_dt() -> f64 {
    0.05
}

fn default_h() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// EDMD on monomials up to `degree`.
    Edmd { degree: u32 },
    /// Stage 1 only, on every sample.
    NormalNn,
    /// Both stages with learned test functions.
    Proposed,
    /// A hand-specified model; nothing is fitted.
    Explicit {
        features: FeatureMap,
        #[serde(with = "serde_matrix")]
        a: Matrix,
        #[serde(with = "serde_matrix")]
        b: Matrix,
    },
}

impl ModelConfig {
    pub fn method(&self) -> &'static str {
        match self {
            ModelConfig::Edmd { .. } => "edmd",
            ModelConfig::NormalNn => "normal_nn",
            ModelConfig::Proposed => "proposed",
            ModelConfig::Explicit { .. } => "explicit",
        }
    }

    pub fn needs_data(&self) -> bool {
        !matches!(self, ModelConfig::Explicit { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub contour: ContourConfig,
    pub basin: BasinConfig,
    pub input_sweep: InputSweepConfig,
    pub sensitivity: SensitivityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourConfig {
    /// Defaults to a 101×101 grid over the first two components of the data box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    pub metric: ErrorMetric,
    /// Held input; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<f64>>,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self { grid: None, metric: ErrorMetric::StatePrediction, input: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinConfig {
    /// Initial conditions; defaults to 9×9 over `[-2, 2]²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    pub steps: usize,
    pub success_radius: f64,
}

impl Default for BasinConfig {
    fn default() -> Self {
        Self { grid: None, steps: 400, success_radius: 0.1 }
    }
}

/// Modeling error at one state over a list of held inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSweepConfig {
    /// Defaults to the origin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub inputs: Vec<f64>,
}

impl Default for InputSweepConfig {
    fn default() -> Self {
        Self { x0: None, inputs: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, std::f64::consts::PI] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub trials: usize,
    pub edmd_degree: u32,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { trials: 10, edmd_degree: 3 }
    }
}

/// Steps executed by `obliq run` after data generation and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSteps {
    pub tasks: Vec<String>,
}

impl Default for RunSteps {
    fn default() -> Self {
        Self { tasks: vec!["predict".into(), "contour".into()] }
    }
}

fn config_err(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { path: path.into(), msg: msg.into() }
}

fn check_core(path: &str, r: obliq_core::Result<()>) -> CliResult<()> {
    r.map_err(|e| config_err(path, e.to_string()))
}

impl RunConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("<document>", e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path.is_empty() || path == "." { "<document>" } else { &path }, e.into_inner().to_string())
        })?;
        // Unit enum variants accept stray keys, so compare against a re-serialization.
        let given: toml::Value = toml::from_str(text).map_err(|e| config_err("<document>", e.to_string()))?;
        let parsed = serde_json::to_value(&cfg).map_err(|e| config_err("<document>", e.to_string()))?;
        if let Some(path) = unknown_key(&given, &parsed, String::new()) {
            let key = path.rsplit('.').next().unwrap_or(&path).to_string();
            return Err(config_err(&path, format!("unknown field `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        check_core("system", self.system.validate())?;
        let n = self.system.state_dim();
        let p = self.system.input_dim();
        if self.data.n_traj == 0 || self.data.traj_len < 2 {
            return Err(config_err("data", "need n_traj >= 1 and traj_len >= 2"));
        }
        if let Some(b) = &self.data.init_box {
            if b.len() != n {
                return Err(config_err("data.init_box", format!("expected {n} intervals, got {}", b.len())));
            }
        }
        if self.system.is_continuous() {
            check_core("data.dt", obliq_core::dynamics::substeps(self.data.dt, self.data.h).map(|_| ()))?;
        }
        if self.train.seed != 0 {
            return Err(config_err("train.seed", "set the top-level `seed` instead"));
        }
        check_core("train", self.train.validate())?;
        match &self.model {
            ModelConfig::Edmd { degree } if *degree == 0 => {
                return Err(config_err("model.degree", "degree must be >= 1"));
            }
            ModelConfig::Explicit { features, a, b } => {
                if features.state_dim() != n || b.ncols() != p {
                    return Err(config_err("model", format!("explicit model must map state dim {n} and input dim {p}")));
                }
                check_core("model", EmbeddingModel::new(features.clone(), a.clone(), b.clone()).map(|_| ()))?;
            }
            _ => {}
        }
        let suite = self.task_suite();
        for (path, x0) in [
            ("tasks.predict.x0", &suite.predict.x0),
            ("tasks.lqr.x0", &suite.lqr.x0),
            ("tasks.servo.x0", &suite.servo.x0),
            ("tasks.mpc.x0", &suite.mpc.x0),
        ] {
            if x0.len() != n {
                return Err(config_err(path, format!("expected {n} entries, got {}", x0.len())));
            }
        }
        if suite.lqr.q_state.len() != n {
            return Err(config_err("tasks.lqr.q_state", format!("expected {n} entries")));
        }
        if n >= 2 {
            check_core("eval.contour.grid", self.contour_grid().validate(n))?;
            check_core("eval.basin.grid", self.basin_grid().validate(n))?;
        }
        if let Some(u) = &self.eval.contour.input {
            if u.len() != p {
                return Err(config_err("eval.contour.input", format!("expected {p} entries")));
            }
        }
        if let Some(x) = &self.eval.input_sweep.x0 {
            if x.len() != n {
                return Err(config_err("eval.input_sweep.x0", format!("expected {n} entries")));
            }
        }
        if self.eval.sensitivity.trials == 0 {
            return Err(config_err("eval.sensitivity.trials", "must be >= 1"));
        }
        for (i, t) in self.run.tasks.iter().enumerate() {
            if crate::commands::Step::parse(t).is_none() {
                return Err(config_err(&format!("run.tasks[{i}]"), format!("unknown task `{t}`")));
            }
        }
        Ok(())
    }

    pub fn init_box(&self) -> Vec<[f64; 2]> {
        self.data.init_box.clone().unwrap_or_else(|| vec![[-3.0, 3.0]; self.system.state_dim()])
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n_traj: self.data.n_traj,
            traj_len: self.data.traj_len,
            init_box: self.init_box(),
            schedule: self.data.schedule.clone(),
            dt: self.data.dt,
            h: self.data.h,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn task_suite(&self) -> TaskSuite {
        self.tasks.clone().unwrap_or_else(|| {
            let mut s = TaskSuite::for_system(&self.system);
            s.dt = self.data.dt;
            s.h = self.data.h;
            s
        })
    }

    pub fn contour_grid(&self) -> GridSpec {
        self.eval.contour.grid.clone().unwrap_or_else(|| {
            let b = self.init_box();
            let mut g = GridSpec::square(b[0][0], b[0][1], 101);
            if b.len() > 1 {
                g.y.lo = b[1][0];
                g.y.hi = b[1][1];
            }
            g
        })
    }

    pub fn basin_grid(&self) -> GridSpec {
        self.eval.basin.grid.clone().unwrap_or_else(|| GridSpec::square(-2.0, 2.0, 9))
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            system: self.system.clone(),
            generation: self.gen_config(),
            edmd_degree: self.eval.sensitivity.edmd_degree,
            train: self.train_config(),
            tasks: self.task_suite(),
            trials: self.eval.sensitivity.trials,
            base_seed: self.seed,
        }
    }

    /// Canonical JSON used for hashing and provenance.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }
}

fn unknown_key(given: &toml::Value, parsed: &serde_json::Value, path: String) -> Option<String> {
    match (given, parsed) {
        (toml::Value::Table(t), serde_json::Value::Object(o)) => t.iter().find_map(|(k, v)| {
            let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match o.get(k) {
                Some(p) => unknown_key(v, p, sub),
                None => Some(sub),
            }
        }),
        (toml::Value::Array(a), serde_json::Value::Array(b)) => {
            a.iter().zip(b).enumerate().find_map(|(i, (x, y))| unknown_key(x, y, format!("{path}[{i}]")))
        }
        _ => None,
    }
}
