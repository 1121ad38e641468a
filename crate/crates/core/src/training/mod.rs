//! Neural feature learning: the orthogonal-projection initialization and the
//! oblique-projection refinement.

mod loss;

pub use loss::{loss_j, loss_j_oblique, LossEval, LossWeights};

use crate::dynamics::{split_dataset, Samples};
use crate::embedding::{oblique_edmd_fit, FeatureMap, FitMode, TestFunctionSet};
use crate::numerics::{Activation, Adam, AdamConfig, Mlp};
use crate::{Dataset, EmbeddingModel, Error, Matrix, Result, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// Shape of the learned part of the embedding, `g = [x, net(x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureArch {
    /// Number of learned features (the embedding has `n + count` coordinates).
    pub count: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Swish
}

/// Test functions used in stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestArch {
    /// Free test functions started as an exact copy of `[g, u]` plus a
    /// residual network with these hidden widths.
    TiedCopy { hidden: Vec<usize> },
    /// `[x, u, head(x)]` with a freshly initialized head.
    Structured { hidden: Vec<usize>, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { window: 100, min_improvement: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub adam: AdamConfig,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Share of trajectories in D1. `1.0` trains stage 1 on every sample.
    pub split_fraction: f64,
    pub features: FeatureArch,
    pub tests: TestArch,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            stage1_epochs: 2000,
            stage2_epochs: 2000,
            adam: AdamConfig::default(),
            lambda_reg: 1e-8,
            seed: 0,
            split_fraction: 0.5,
            features: FeatureArch { count: 2, hidden: vec![10], activation: Activation::Swish },
            tests: TestArch::TiedCopy { hidden: vec![10] },
            early_stop: Some(EarlyStop::default()),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2, lambda_reg: self.lambda_reg }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) || self.lambda1 + self.lambda2 == 0.0 {
            return Err(Error::usage("lambda1 and lambda2 must be >= 0 and not both zero"));
        }
        if self.stage1_epochs == 0 {
            return Err(Error::usage("stage1_epochs must be >= 1"));
        }
        if !(self.lambda_reg > 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::usage("lambda_reg must be positive"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::usage("split_fraction must lie in (0, 1]"));
        }
        if self.features.count == 0 {
            return Err(Error::usage("at least one learned feature is required"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if let TestArch::Structured { count: 0, .. } = self.tests {
            return Err(Error::usage("structured test functions need count >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage1_loss: Vec<f64>,
    pub stage2_loss: Vec<f64>,
    /// Objective at the returned parameters with the exact refit, per split.
    pub final_loss_d1: f64,
    pub final_loss_d2: Option<f64>,
    pub final_loss_all: f64,
    pub stage1_condition: f64,
    pub final_condition: f64,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
    pub diverged: bool,
    pub diverged_stage: Option<u8>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `epoch,stage,loss`.
    pub fn write_loss_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "stage", "loss"])?;
        for (stage, hist) in [(1, &self.stage1_loss), (2, &self.stage2_loss)] {
            for (e, l) in hist.iter().enumerate() {
                out.write_record([e.to_string(), stage.to_string(), l.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub struct TrainOutcome {
    /// Final model: oblique operator refit exactly on all data.
    pub model: EmbeddingModel,
    pub tests: TestFunctionSet,
    pub report: TrainReport,
    /// Stage-1 features with the orthogonal (EDMD) operator refit on all data.
    pub initial: EmbeddingModel,
}

struct StageResult {
    params: Vec<Matrix>,
    history: Vec<f64>,
    diverged: bool,
    seconds: f64,
}

fn run_stage<F>(stage: u8, epochs: usize, init: Vec<Matrix>, cfg: &TrainConfig, mut eval: F) -> Result<StageResult>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    let start = Instant::now();
    let mut params = init;
    let mut adam = Adam::new(cfg.adam);
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, Vec<Matrix>)> = None;
    let mut diverged = false;
    for epoch in 0..epochs {
        let (value, grads) = match eval(&params) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|m| m.iter().all(|x| x.is_finite())) => (v, g),
            Ok(_) | Err(Error::Numerical(_)) | Err(Error::Divergence { .. }) => {
                log::warn!("stage {stage} diverged at epoch {epoch}");
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        history.push(value);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, params.clone()));
        }
        if let Some(es) = cfg.early_stop {
            if es.window > 0 && history.len() > es.window {
                let past = history[history.len() - 1 - es.window];
                if past - value < es.min_improvement {
                    log::debug!("stage {stage} stopped early at epoch {epoch}");
                    break;
                }
            }
        }
        adam.step(&mut params, &grads)?;
    }
    if !diverged {
        if let Ok((value, _)) = eval(&params) {
            if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, params.clone()));
            }
        }
    }
    match best {
        Some((_, p)) => Ok(StageResult { params: p, history, diverged, seconds: start.elapsed().as_secs_f64() }),
        None => Err(Error::TrainingDivergence { stage, epoch: 0 }),
    }
}

fn init_features(n: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<FeatureMap> {
    let mut sizes = vec![n];
    sizes.extend(&cfg.features.hidden);
    sizes.push(cfg.features.count);
    Ok(FeatureMap::mlp(Mlp::new(&sizes, cfg.features.activation, rng)?))
}

fn init_tests(features: &FeatureMap, p: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<TestFunctionSet> {
    let n = features.state_dim();
    let act = cfg.features.activation;
    match &cfg.tests {
        TestArch::TiedCopy { hidden } => {
            let mut sizes = vec![n + p];
            sizes.extend(hidden);
            sizes.push(features.dim() + p);
            TestFunctionSet::tied_copy(features, Mlp::new(&sizes, act, rng)?, p)
        }
        TestArch::Structured { hidden, count } => {
            let mut sizes = vec![n];
            sizes.extend(hidden);
            sizes.push(*count);
            Ok(TestFunctionSet::Structured { head: Mlp::new(&sizes, act, rng)? })
        }
    }
}

/// Weighted objective of a fitted model, summed over `samples`.
pub fn model_objective(model: &EmbeddingModel, samples: &Samples, lambda1: f64, lambda2: f64) -> f64 {
    let n = model.state_dim;
    (0..samples.len())
        .map(|i| {
            let x = samples.x.row(i).transpose();
            let u = samples.u.row(i).transpose();
            let y = samples.y.row(i).transpose();
            let r = model.embed(y.as_slice()) - model.step_embedded(&model.embed(x.as_slice()), u.as_slice());
            lambda1 * r.norm_squared() + lambda2 * r.rows(0, n).norm_squared()
        })
        .sum()
}

fn exact_model(features: &FeatureMap, tests: &TestFunctionSet, samples: &Samples, method: &str) -> Result<EmbeddingModel> {
    let fit = oblique_edmd_fit(samples, features, tests, FitMode::default())?;
    let model = EmbeddingModel::from_fit(features.clone(), fit)?.with_method(method);
    Ok(match tests {
        TestFunctionSet::Tied => model,
        t => model.with_tests(t.clone()),
    })
}

fn stage_samples(data: &Dataset, cfg: &TrainConfig) -> Result<(Samples, Option<Samples>)> {
    if cfg.split_fraction >= 1.0 {
        return Ok((data.samples(None), None));
    }
    let split;
    let data = if data.count(Split::D2) == 0 && data.trajectory_count(Split::D1) >= 2 {
        split = split_dataset(data, cfg.split_fraction, cfg.seed)?;
        &split
    } else {
        data
    };
    let d2 = (data.count(Split::D2) > 0).then(|| data.samples(Some(Split::D2)));
    Ok((data.samples(Some(Split::D1)), d2))
}

/// Two-stage training.
///
/// Stage 1 fits the feature network on D1 with test functions tied to the
/// features. Stage 2 starts the test functions from the stage-1 features and
/// trains both networks on D1 ∪ D2. `[A B]` is then recomputed with the exact
/// pseudo-inverse on all samples.
///
/// If the dataset carries no D2 rows and `split_fraction < 1`, trajectories
/// are split here with `cfg.seed`. A stage that diverges stops early and keeps
/// its best parameters; the report records which stage it was.
pub fn train_two_stage(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::usage("training on an empty dataset"));
    }
    let n = data.state_dim();
    let p = data.input_dim();
    let w = cfg.weights();
    let all = data.samples(None);
    let (d1, d2) = stage_samples(data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut features = init_features(n, cfg, &mut rng)?;
    let s1 = run_stage(1, cfg.stage1_epochs, features.params(), cfg, |params| {
        let mut g = features.clone();
        g.set_params(params)?;
        let l = loss_j(&g, &d1, &w)?;
        Ok((l.value, l.feature_grads))
    })?;
    features.set_params(&s1.params)?;
    let initial = exact_model(&features, &TestFunctionSet::Tied, &all, "normal_nn")?;
    let stage1_condition = initial.provenance.condition.unwrap_or(f64::NAN);

    let mut report = TrainReport {
        stage1_loss: s1.history,
        stage2_loss: Vec::new(),
        final_loss_d1: 0.0,
        final_loss_d2: None,
        final_loss_all: 0.0,
        stage1_condition,
        final_condition: stage1_condition,
        stage1_seconds: s1.seconds,
        stage2_seconds: 0.0,
        diverged: s1.diverged,
        diverged_stage: s1.diverged.then_some(1),
    };

    let (model, tests) = if cfg.stage2_epochs == 0 {
        (initial.clone(), TestFunctionSet::Tied)
    } else {
        let mut tests = init_tests(&features, p, cfg, &mut rng)?;
        let k = features.params().len();
        let mut init = features.params();
        init.extend(tests.params());
        let s2 = run_stage(2, cfg.stage2_epochs, init, cfg, |params| {
            let mut g = features.clone();
            let mut t = tests.clone();
            g.set_params(&params[..k])?;
            t.set_params(&params[k..])?;
            let l = loss_j_oblique(&g, &t, &all, &w)?;
            let mut grads = l.feature_grads;
            grads.extend(l.test_grads);
            Ok((l.value, grads))
        })?;
        features.set_params(&s2.params[..k])?;
        tests.set_params(&s2.params[k..])?;
        report.stage2_loss = s2.history;
        report.stage2_seconds = s2.seconds;
        if s2.diverged && !report.diverged {
            report.diverged = true;
            report.diverged_stage = Some(2);
        }
        let model = exact_model(&features, &tests, &all, "proposed")?;
        report.final_condition = model.provenance.condition.unwrap_or(f64::NAN);
        (model, tests)
    };
    report.final_loss_d1 = model_objective(&model, &d1, cfg.lambda1, cfg.lambda2);
    report.final_loss_d2 = d2.as_ref().map(|s| model_objective(&model, s, cfg.lambda1, cfg.lambda2));
    report.final_loss_all = model_objective(&model, &all, cfg.lambda1, cfg.lambda2);
    Ok(TrainOutcome { model, tests, report, initial })
}

/// The normal-NN baseline: stage 1 only, on every sample.
pub fn train_normal_nn(data: &Dataset, cfg: &TrainConfig) -> Result<(EmbeddingModel, TrainReport)> {
    let cfg = TrainConfig { stage2_epochs: 0, split_fraction: 1.0, ..cfg.clone() };
    let out = train_two_stage(data, &cfg)?;
    Ok((out.model, out.report))
}
