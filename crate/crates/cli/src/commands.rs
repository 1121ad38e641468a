use crate::config::{ModelConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::provenance::{sha256_hex, ArtifactWriter};
use obliq_core::control::solve_dare;
use obliq_core::control::{DARE_MAX_ITER, DARE_TOL};
use obliq_core::dynamics::{generate_dataset, sample_map, DatasetMeta};
use obliq_core::embedding::edmd_fit;
use obliq_core::eval::{
    basin_estimate, error_contour, forecast_pure, predict_true, run_task, sensitivity_sweep, write_basin_csv, Task,
    TaskRecord,
};
use obliq_core::training::{train_normal_nn, train_two_stage};
use obliq_core::{Controller, Dataset, EmbeddingModel, FeatureMap, FitMode, Vector};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const DATA_CSV: &str = "data.csv";
pub const DATA_META: &str = "data.json";
pub const MODEL: &str = "model.json";
pub const STAGE1_MODEL: &str = "model_stage1.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Predict,
    Contour,
    Basin,
    Forecast,
    InputSweep,
    Sensitivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlTask {
    Lqr,
    Servo,
    Mpc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Eval(EvalTask),
    Control(ControlTask),
}

impl Step {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "predict" => Step::Eval(EvalTask::Predict),
            "contour" => Step::Eval(EvalTask::Contour),
            "basin" => Step::Eval(EvalTask::Basin),
            "forecast" => Step::Eval(EvalTask::Forecast),
            "input-sweep" => Step::Eval(EvalTask::InputSweep),
            "sensitivity" => Step::Eval(EvalTask::Sensitivity),
            "lqr" => Step::Control(ControlTask::Lqr),
            "servo" => Step::Control(ControlTask::Servo),
            "mpc" => Step::Control(ControlTask::Mpc),
            _ => return None,
        })
    }
}

fn csv_bytes<F>(header: &[String], fill: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(obliq_core::Error::from)?;
        fill(&mut w).map_err(obliq_core::Error::from)?;
        w.flush().map_err(obliq_core::Error::from)?;
    }
    Ok(buf)
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Hash of the config parts that determine the dataset and the model.
pub fn model_key(cfg: &RunConfig) -> String {
    let key = serde_json::json!({
        "schema_version": cfg.schema_version,
        "seed": cfg.seed,
        "system": cfg.system,
        "data": cfg.data,
        "model": cfg.model,
        "train": cfg.train,
    });
    sha256_hex(key.to_string().as_bytes())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let data = generate_dataset(&cfg.system, &cfg.gen_config())?;
    if data.meta.truncated_trajectories > 0 {
        log::warn!("{} trajectories were truncated after diverging", data.meta.truncated_trajectories);
    }
    let mut w = ArtifactWriter::new(out, cfg, "gen-data")?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    w.write(DATA_CSV, &csv)?;
    let meta = serde_json::to_string_pretty(&data.meta).map_err(obliq_core::Error::from)?;
    w.write(DATA_META, meta.as_bytes())?;
    Ok(w.written)
}

fn load_data(cfg: &RunConfig, w: &mut ArtifactWriter) -> CliResult<(Dataset, String)> {
    let meta_bytes = w.read_input(DATA_META, "gen-data")?;
    let csv = w.read_input(DATA_CSV, "gen-data")?;
    let meta: DatasetMeta = serde_json::from_slice(&meta_bytes).map_err(obliq_core::Error::from)?;
    if meta.system != cfg.system || meta.generation != cfg.gen_config() {
        return Err(CliError::StaleArtifact {
            path: PathBuf::from(DATA_CSV),
            reason: "generated from a different system or data block; rerun gen-data".into(),
        });
    }
    let hash = sha256_hex(&csv);
    Ok((Dataset::read_csv(csv.as_slice(), meta)?, hash))
}

fn stamp(model: EmbeddingModel, cfg: &RunConfig, dataset_hash: Option<&str>) -> EmbeddingModel {
    let mut m = model;
    m.provenance.dataset_hash = dataset_hash.map(str::to_string);
    m.provenance.config_hash = Some(model_key(cfg));
    m
}

pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut w = ArtifactWriter::new(out, cfg, "train")?;
    if let ModelConfig::Explicit { features, a, b } = &cfg.model {
        let model = EmbeddingModel::new(features.clone(), a.clone(), b.clone())?.with_method("explicit");
        w.write(MODEL, stamp(model, cfg, None).to_json()?.as_bytes())?;
        return Ok(w.written);
    }
    let (data, hash) = load_data(cfg, &mut w)?;
    let tcfg = cfg.train_config();
    match &cfg.model {
        ModelConfig::Edmd { degree } => {
            let g = FeatureMap::monomial(data.state_dim(), *degree)?;
            let fit = edmd_fit(&data.samples(None), &g, FitMode::default())?;
            let model = EmbeddingModel::from_fit(g, fit)?.with_method("edmd");
            w.write(MODEL, stamp(model, cfg, Some(&hash)).to_json()?.as_bytes())?;
        }
        ModelConfig::NormalNn => {
            let (model, report) = train_normal_nn(&data, &tcfg)?;
            w.write(MODEL, stamp(model, cfg, Some(&hash)).to_json()?.as_bytes())?;
            write_report(&mut w, &report)?;
        }
        ModelConfig::Proposed => {
            let outcome = train_two_stage(&data, &tcfg)?;
            w.write(MODEL, stamp(outcome.model, cfg, Some(&hash)).to_json()?.as_bytes())?;
            w.write(STAGE1_MODEL, stamp(outcome.initial, cfg, Some(&hash)).to_json()?.as_bytes())?;
            write_report(&mut w, &outcome.report)?;
        }
        ModelConfig::Explicit { .. } => unreachable!(),
    }
    Ok(w.written)
}

fn write_report(w: &mut ArtifactWriter, report: &obliq_core::TrainReport) -> CliResult<()> {
    if report.diverged {
        log::warn!("training diverged in stage {:?}; the best parameters were kept", report.diverged_stage);
    }
    w.write("train_report.json", report.to_json()?.as_bytes())?;
    let mut loss = Vec::new();
    report.write_loss_csv(&mut loss)?;
    w.write("loss.csv", &loss)?;
    Ok(())
}

fn load_model(cfg: &RunConfig, w: &mut ArtifactWriter) -> CliResult<EmbeddingModel> {
    load_named_model(cfg, w, MODEL)
}

fn load_named_model(cfg: &RunConfig, w: &mut ArtifactWriter, name: &str) -> CliResult<EmbeddingModel> {
    let bytes = w.read_input(name, "train")?;
    let text = String::from_utf8(bytes).map_err(|e| obliq_core::Error::Format(e.to_string()))?;
    let model = EmbeddingModel::from_json(&text)?;
    if model.provenance.config_hash.as_deref() != Some(model_key(cfg).as_str()) {
        return Err(CliError::StaleArtifact {
            path: PathBuf::from(name),
            reason: "trained with a different system, data, model or train block; rerun train".into(),
        });
    }
    Ok(model)
}

fn trajectory_csv(rows: &[Vec<f64>], n: usize, dt: f64) -> CliResult<Vec<u8>> {
    let mut header = vec!["t".to_string()];
    header.extend(numbered("chi", n));
    csv_bytes(&header, |w| {
        for (k, r) in rows.iter().enumerate() {
            let mut rec = vec![(k as f64 * dt).to_string()];
            rec.extend(r.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

pub fn eval(cfg: &RunConfig, out: &Path, task: EvalTask) -> CliResult<Vec<PathBuf>> {
    let mut w = ArtifactWriter::new(out, cfg, "eval")?;
    let sys = &cfg.system;
    let n = sys.state_dim();
    let p = sys.input_dim();
    let suite = cfg.task_suite();
    let (dt, h) = (suite.dt, suite.h);
    if task == EvalTask::Sensitivity {
        let summary = sensitivity_sweep(&cfg.sweep_config())?;
        w.write("sensitivity.json", summary.to_json()?.as_bytes())?;
        return Ok(w.written);
    }
    let model = load_model(cfg, &mut w)?;
    match task {
        EvalTask::Predict => {
            let rec = run_task(Task::Predict, sys, &model, &suite)?;
            fail_on_error(&rec)?;
            w.write("predict.csv", &trajectory_csv(&rec.predicted, n, dt)?)?;
            w.write("predict_true.csv", &trajectory_csv(&rec.trajectory, n, dt)?)?;
        }
        EvalTask::Contour => {
            let u = cfg.eval.contour.input.clone().unwrap_or_else(|| vec![0.0; p]);
            let grid = cfg.contour_grid();
            let metric = cfg.eval.contour.metric;
            let c = error_contour(&model, sys, &grid, &u, metric, dt, h)?;
            let mut buf = Vec::new();
            c.write_csv(&mut buf)?;
            w.write("contour.csv", &buf)?;
            if matches!(cfg.model, ModelConfig::Proposed) {
                let stage1 = load_named_model(cfg, &mut w, STAGE1_MODEL)?;
                let c = error_contour(&stage1, sys, &grid, &u, metric, dt, h)?;
                let mut buf = Vec::new();
                c.write_csv(&mut buf)?;
                w.write("contour_stage1.csv", &buf)?;
            }
        }
        EvalTask::Basin => {
            let (qw, rw) = suite.lqr_weights(&model)?;
            let sol = solve_dare(&model.a, &model.b, &qw, &rw, DARE_TOL, DARE_MAX_ITER)
                .map_err(|e| CliError::Task { task: "basin".into(), msg: e.to_string() })?;
            let inits = cfg.basin_grid().points(n);
            let b = &cfg.eval.basin;
            let records =
                basin_estimate(sys, &model, &Controller::lqr(&sol), &inits, b.steps, b.success_radius, dt, h)?;
            let mut buf = Vec::new();
            write_basin_csv(&records, n, &mut buf)?;
            w.write("basin.csv", &buf)?;
        }
        EvalTask::Forecast => {
            let x0 = &suite.predict.x0;
            let horizon = suite.predict.horizon;
            let inputs = vec![Vector::zeros(p); horizon];
            let fc = forecast_pure(&model, x0, &inputs, horizon)?;
            let roll = model.rollout(x0, &inputs, horizon)?;
            let truth = predict_true(sys, x0, horizon, dt, h)?;
            let fstates = fc.states(n);
            let mut header = vec!["t".to_string()];
            header.extend(numbered("forecast_chi", n));
            header.extend(numbered("rollout_chi", n));
            header.extend(numbered("true_chi", n));
            let cells = |v: Option<&Vector>| -> Vec<String> {
                match v {
                    Some(x) => x.iter().map(|e| e.to_string()).collect(),
                    None => vec![String::new(); n],
                }
            };
            let bytes = csv_bytes(&header, |wr| {
                for k in 0..=horizon {
                    let mut rec = vec![(k as f64 * dt).to_string()];
                    rec.extend(cells(fstates.get(k)));
                    rec.extend(cells(roll.states.get(k)));
                    rec.extend(cells(truth.get(k)));
                    wr.write_record(&rec)?;
                }
                Ok(())
            })?;
            w.write("forecast.csv", &bytes)?;
        }
        EvalTask::InputSweep => {
            if p != 1 {
                return Err(CliError::Config {
                    path: "eval.input_sweep".into(),
                    msg: "input sweeps need a single-input system".into(),
                });
            }
            let x0 = cfg.eval.input_sweep.x0.clone().unwrap_or_else(|| vec![0.0; n]);
            let mut rows = Vec::new();
            for &u in &cfg.eval.input_sweep.inputs {
                let y = sample_map(sys, &x0, &[u], dt, h)?;
                rows.push((u, model.modeling_error(&x0, &[u], &y)));
            }
            let bytes = csv_bytes(&["u".into(), "err".into()], |wr| {
                for (u, e) in rows {
                    wr.write_record([u.to_string(), e.to_string()])?;
                }
                Ok(())
            })?;
            w.write("input_sweep.csv", &bytes)?;
        }
        EvalTask::Sensitivity => unreachable!(),
    }
    Ok(w.written)
}

fn fail_on_error(rec: &TaskRecord) -> CliResult<()> {
    match &rec.error {
        Some(msg) => Err(CliError::Task { task: rec.task.as_str().into(), msg: msg.clone() }),
        None => Ok(()),
    }
}

pub fn control(cfg: &RunConfig, out: &Path, task: ControlTask) -> CliResult<Vec<PathBuf>> {
    let mut w = ArtifactWriter::new(out, cfg, "control")?;
    let model = load_model(cfg, &mut w)?;
    let suite = cfg.task_suite();
    let (t, name) = match task {
        ControlTask::Lqr => (Task::Lqr, "lqr"),
        ControlTask::Servo => (Task::Servo, "servo"),
        ControlTask::Mpc => (Task::Mpc, "mpc"),
    };
    let rec = run_task(t, &cfg.system, &model, &suite)?;
    let mut summary = rec.clone();
    summary.trajectory.clear();
    summary.inputs.clear();
    summary.reference.clear();
    let json = serde_json::to_string_pretty(&summary).map_err(obliq_core::Error::from)?;
    w.write(&format!("{name}.json"), json.as_bytes())?;
    fail_on_error(&rec)?;

    let n = cfg.system.state_dim();
    let p = cfg.system.input_dim();
    let with_ref = !rec.reference.is_empty();
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend(numbered("chi", n));
    header.extend(numbered("u", p));
    if with_ref {
        header.push("ref".into());
    }
    let bytes = csv_bytes(&header, |wr| {
        for (k, x) in rec.trajectory.iter().enumerate() {
            let mut r = vec![k.to_string(), (k as f64 * suite.dt).to_string()];
            r.extend(x.iter().map(|v| v.to_string()));
            match rec.inputs.get(k) {
                Some(u) => r.extend(u.iter().map(|v| v.to_string())),
                None => r.extend(std::iter::repeat_n(String::new(), p)),
            }
            if with_ref {
                r.push(rec.reference.get(k).map(|v| v.to_string()).unwrap_or_default());
            }
            wr.write_record(&r)?;
        }
        Ok(())
    })?;
    w.write(&format!("{name}.csv"), &bytes)?;
    if rec.diverged {
        log::warn!("{name} closed loop diverged");
    }
    Ok(w.written)
}

/// Data generation, training and the configured steps, in order.
pub fn run_all(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    if cfg.model.needs_data() {
        written.extend(gen_data(cfg, out)?);
    }
    written.extend(train(cfg, out)?);
    for t in &cfg.run.tasks {
        written.extend(match Step::parse(t).expect("validated") {
            Step::Eval(e) => eval(cfg, out, e)?,
            Step::Control(c) => control(cfg, out, c)?,
        });
    }
    Ok(written)
}

pub fn print_written(files: &[PathBuf], mut out: impl Write) {
    for f in files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
}
