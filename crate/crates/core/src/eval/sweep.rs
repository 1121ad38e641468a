use super::tasks::{run_task, Task, TaskRecord, TaskSuite};
use crate::dynamics::{generate_dataset, GenConfig};
use crate::embedding::{edmd_fit, FeatureMap, FitMode};
use crate::training::{train_normal_nn, train_two_stage, TrainConfig};
use crate::{DynSystem, EmbeddingModel, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Edmd,
    NormalNn,
    Proposed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Edmd, Method::NormalNn, Method::Proposed];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Edmd => "edmd",
            Method::NormalNn => "normal_nn",
            Method::Proposed => "proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub system: DynSystem,
    /// `seed` is replaced by `base_seed + trial`.
    pub generation: GenConfig,
    pub edmd_degree: u32,
    /// `seed` is replaced by `base_seed + trial`.
    pub train: TrainConfig,
    pub tasks: TaskSuite,
    pub trials: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub trial: usize,
    pub method: Method,
    #[serde(flatten)]
    pub record: TaskRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub task: Task,
    pub runs: usize,
    pub successes: usize,
    pub diverged: usize,
    /// Mean and max of the finite metrics.
    pub mean_metric: Option<f64>,
    pub max_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub trials: usize,
    pub base_seed: u64,
    pub records: Vec<SweepRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepSummary {
    pub fn aggregate(records: &[SweepRecord]) -> Vec<Aggregate> {
        let mut out = Vec::new();
        for method in Method::ALL {
            for task in Task::ALL {
                let rs: Vec<&TaskRecord> = records
                    .iter()
                    .filter(|r| r.method == method && r.record.task == task)
                    .map(|r| &r.record)
                    .collect();
                if rs.is_empty() {
                    continue;
                }
                let finite: Vec<f64> = rs.iter().map(|r| r.metric).filter(|m| m.is_finite()).collect();
                out.push(Aggregate {
                    method,
                    task,
                    runs: rs.len(),
                    successes: rs.iter().filter(|r| r.succeeded()).count(),
                    diverged: rs.iter().filter(|r| r.diverged).count(),
                    mean_metric: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                    max_metric: finite.iter().cloned().reduce(f64::max),
                });
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn train_models(cfg: &SweepConfig, seed: u64) -> Result<Vec<(Method, std::result::Result<EmbeddingModel, String>)>> {
    let gen = GenConfig { seed, ..cfg.generation.clone() };
    let data = generate_dataset(&cfg.system, &gen)?;
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    let n = cfg.system.state_dim();
    let edmd = FeatureMap::monomial(n, cfg.edmd_degree).and_then(|g| {
        let fit = edmd_fit(&data.samples(None), &g, FitMode::default())?;
        Ok(EmbeddingModel::from_fit(g, fit)?.with_method("edmd"))
    });
    let normal = train_normal_nn(&data, &tc).map(|(m, _)| m);
    let proposed = train_two_stage(&data, &tc).map(|o| o.model);
    Ok(vec![
        (Method::Edmd, edmd.map_err(|e| e.to_string())),
        (Method::NormalNn, normal.map_err(|e| e.to_string())),
        (Method::Proposed, proposed.map_err(|e| e.to_string())),
    ])
}

/// For each trial: regenerate data with seed `base_seed + trial`, fit all
/// three model kinds on it and run the four tasks. A failing model or task is
/// recorded and the sweep carries on.
pub fn sensitivity_sweep(cfg: &SweepConfig) -> Result<SweepSummary> {
    if cfg.trials == 0 {
        return Err(crate::Error::usage("sensitivity sweep needs trials >= 1"));
    }
    let per_trial: Vec<Result<Vec<SweepRecord>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = cfg.base_seed + trial as u64;
            let models = train_models(cfg, seed)?;
            let mut recs = Vec::new();
            for (method, model) in models {
                for task in Task::ALL {
                    let record = match &model {
                        Ok(m) => run_task(task, &cfg.system, m, &cfg.tasks)?,
                        Err(msg) => TaskRecord {
                            task,
                            outcome: None,
                            diverged: false,
                            metric: f64::INFINITY,
                            trajectory: Vec::new(),
                            inputs: Vec::new(),
                            reference: Vec::new(),
                            predicted: Vec::new(),
                            error: Some(format!("training failed: {msg}")),
                        },
                    };
                    recs.push(SweepRecord { trial, method, record });
                }
            }
            Ok(recs)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_trial {
        records.extend(r?);
    }
    let aggregates = SweepSummary::aggregate(&records);
    Ok(SweepSummary { trials: cfg.trials, base_seed: cfg.base_seed, records, aggregates })
}
