use super::integrate::{sample_map, DIVERGENCE_LIMIT};
use super::{DynSystem, InputSchedule};
use crate::{Error, Matrix, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    D1,
    D2,
}

impl Split {
    fn label(self) -> &'static str {
        match self {
            Split::D1 => "D1",
            Split::D2 => "D2",
        }
    }
}

/// Trajectory-generation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_traj: usize,
    /// States per trajectory, so `traj_len - 1` transitions.
    pub traj_len: usize,
    /// Per-dimension `[lo, hi]` for uniformly drawn initial conditions.
    pub init_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub schedule: InputSchedule,
    pub dt: f64,
    pub h: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub system: DynSystem,
    pub generation: GenConfig,
    /// Transition count of each trajectory, in row order.
    pub trajectory_lengths: Vec<usize>,
    pub truncated_trajectories: usize,
    #[serde(default)]
    pub split_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: Option<u64>,
}

/// Stacked `(x, u, y)` rows, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Matrix,
    pub u: Matrix,
    pub y: Matrix,
}

impl Samples {
    pub fn new(x: Matrix, u: Matrix, y: Matrix) -> Result<Self> {
        if x.nrows() != u.nrows() || x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(Error::usage(format!(
                "sample blocks disagree: x {:?}, u {:?}, y {:?}",
                x.shape(),
                u.shape(),
                y.shape()
            )));
        }
        Ok(Self { x, u, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Samples {
        Samples { x: self.x.select_rows(rows), u: self.u.select_rows(rows), y: self.y.select_rows(rows) }
    }
}

/// Transition triples `y_i = F(x_i, u_i)` with a D1/D2 marker per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub states: Matrix,
    pub inputs: Matrix,
    pub successors: Matrix,
    pub split: Vec<Split>,
    pub meta: DatasetMeta,
}

struct Trajectory {
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    truncated: bool,
}

fn simulate_trajectory(sys: &DynSystem, cfg: &GenConfig, index: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let x0: Vec<f64> = cfg
        .init_box
        .iter()
        .map(|&[lo, hi]| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let p = sys.input_dim();
    let mut states = vec![x0];
    let mut inputs = Vec::with_capacity(cfg.traj_len);
    let mut truncated = false;
    for k in 0..cfg.traj_len.saturating_sub(1) {
        // Channel j follows the signal of trajectory index + j.
        let u: Vec<f64> = (0..p).map(|j| cfg.schedule.value(index + j, k, cfg.dt)).collect();
        let next = sample_map(sys, states.last().unwrap(), &u, cfg.dt, cfg.h);
        match next {
            Ok(s) if s.iter().all(|v| v.abs() <= DIVERGENCE_LIMIT) => {
                inputs.push(u);
                states.push(s);
            }
            Ok(_) | Err(Error::Divergence { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => panic!("sample_map failed on validated input: {e}"),
        }
    }
    Trajectory { states, inputs, truncated }
}

/// Simulate `n_traj` trajectories and stack their transitions.
///
/// Each trajectory draws from its own ChaCha stream (`seed`, stream =
/// trajectory index), so the output does not depend on thread scheduling.
/// Trajectories that leave the finite range are cut at their last good state.
pub fn generate_dataset(sys: &DynSystem, cfg: &GenConfig) -> Result<Dataset> {
    sys.validate()?;
    if cfg.n_traj == 0 || cfg.traj_len == 0 {
        return Err(Error::usage("n_traj and traj_len must be at least 1"));
    }
    let n = sys.state_dim();
    let p = sys.input_dim();
    if cfg.init_box.len() != n {
        return Err(Error::usage(format!("init_box has {} intervals for a {n}-dimensional state", cfg.init_box.len())));
    }
    if cfg.init_box.iter().any(|&[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::usage("init_box intervals must be finite with lo <= hi"));
    }
    if sys.is_continuous() {
        super::substeps(cfg.dt, cfg.h)?;
    }

    let trajectories: Vec<Trajectory> =
        (0..cfg.n_traj).into_par_iter().map(|t| simulate_trajectory(sys, cfg, t)).collect();

    let lengths: Vec<usize> = trajectories.iter().map(|t| t.inputs.len()).collect();
    let total: usize = lengths.iter().sum();
    let truncated = trajectories.iter().filter(|t| t.truncated).count();
    if truncated > 0 {
        log::warn!("{truncated} of {} trajectories diverged and were truncated", cfg.n_traj);
    }

    let mut states = Matrix::zeros(total, n);
    let mut inputs = Matrix::zeros(total, p);
    let mut successors = Matrix::zeros(total, n);
    let mut row = 0;
    for t in &trajectories {
        for (k, u) in t.inputs.iter().enumerate() {
            for j in 0..n {
                states[(row, j)] = t.states[k][j];
                successors[(row, j)] = t.states[k + 1][j];
            }
            for j in 0..p {
                inputs[(row, j)] = u[j];
            }
            row += 1;
        }
    }

    let data = Dataset {
        states,
        inputs,
        successors,
        split: vec![Split::D1; total],
        meta: DatasetMeta {
            system: sys.clone(),
            generation: cfg.clone(),
            trajectory_lengths: lengths,
            truncated_trajectories: truncated,
            split_fraction: None,
            split_seed: None,
        },
    };
    data.verify_transitions(0.01, cfg.seed)?;
    Ok(data)
}

/// Mark a seeded random `fraction` of the trajectories as D1 and the rest as D2.
///
/// The D1 count is `round(fraction · T)`, clamped so that both parts keep at
/// least one trajectory whenever `T >= 2`.
pub fn split_dataset(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::usage(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let t = data.meta.trajectory_lengths.len();
    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut n_d1 = (fraction * t as f64).round() as usize;
    if t >= 2 {
        n_d1 = n_d1.clamp(1, t - 1);
    }
    let mut label = vec![Split::D2; t];
    for &i in &order[..n_d1] {
        label[i] = Split::D1;
    }
    let mut out = data.clone();
    out.split = data.trajectory_ids().into_iter().map(|i| label[i]).collect();
    out.meta.split_fraction = Some(fraction);
    out.meta.split_seed = Some(seed);
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Trajectory index of every row.
    pub fn trajectory_ids(&self) -> Vec<usize> {
        self.meta
            .trajectory_lengths
            .iter()
            .enumerate()
            .flat_map(|(i, &len)| std::iter::repeat_n(i, len))
            .collect()
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.iter().filter(|&&s| s == which).count()
    }

    /// Number of trajectories (with at least one transition) in a split.
    pub fn trajectory_count(&self, which: Split) -> usize {
        let mut seen = vec![false; self.meta.trajectory_lengths.len()];
        for (id, s) in self.trajectory_ids().into_iter().zip(&self.split) {
            if *s == which {
                seen[id] = true;
            }
        }
        seen.into_iter().filter(|&b| b).count()
    }

    /// All rows, or only the rows of one split.
    pub fn samples(&self, which: Option<Split>) -> Samples {
        let rows: Vec<usize> = match which {
            None => (0..self.len()).collect(),
            Some(w) => (0..self.len()).filter(|&i| self.split[i] == w).collect(),
        };
        Samples {
            x: self.states.select_rows(&rows),
            u: self.inputs.select_rows(&rows),
            y: self.successors.select_rows(&rows),
        }
    }

    /// Recompute `F(x_i, u_i)` on a seeded subsample of rows (at least one).
    pub fn verify_transitions(&self, fraction: f64, seed: u64) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let m = self.len();
        let count = ((fraction * m as f64).ceil() as usize).clamp(1, m);
        let mut rows: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let sys = &self.meta.system;
        let (dt, h) = (self.meta.generation.dt, self.meta.generation.h);
        for &i in &rows[..count] {
            let x: Vec<f64> = self.states.row(i).iter().copied().collect();
            let u: Vec<f64> = self.inputs.row(i).iter().copied().collect();
            let y = sample_map(sys, &x, &u, dt, h)?;
            let err = y.iter().zip(self.successors.row(i).iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-9 {
                return Err(Error::Data(format!("row {i} is not a transition of {} (error {err:e})", sys.name())));
            }
        }
        Ok(())
    }

    pub fn csv_header(n: usize, p: usize) -> Vec<String> {
        (1..=n)
            .map(|i| format!("chi_{i}"))
            .chain((1..=p).map(|i| format!("u_{i}")))
            .chain((1..=n).map(|i| format!("y_{i}")))
            .chain(std::iter::once("split".to_string()))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header(self.state_dim(), self.input_dim()))?;
        let mut record = Vec::with_capacity(2 * self.state_dim() + self.input_dim() + 1);
        for i in 0..self.len() {
            record.clear();
            record.extend(self.states.row(i).iter().map(|v| v.to_string()));
            record.extend(self.inputs.row(i).iter().map(|v| v.to_string()));
            record.extend(self.successors.row(i).iter().map(|v| v.to_string()));
            record.push(self.split[i].label().to_string());
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, meta: DatasetMeta) -> Result<Self> {
        let n = meta.system.state_dim();
        let p = meta.system.input_dim();
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != Self::csv_header(n, p) {
            return Err(Error::Format(format!("unexpected dataset header {header:?}")));
        }
        let (mut xs, mut us, mut ys, mut split) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|e| Error::Format(format!("row {line}, column {j}: {e}")))
            };
            for j in 0..n {
                xs.push(parse(j)?);
            }
            for j in 0..p {
                us.push(parse(n + j)?);
            }
            for j in 0..n {
                ys.push(parse(n + p + j)?);
            }
            split.push(match &rec[2 * n + p] {
                "D1" => Split::D1,
                "D2" => Split::D2,
                other => return Err(Error::Format(format!("row {line}: unknown split marker {other:?}"))),
            });
        }
        let m = split.len();
        if meta.trajectory_lengths.iter().sum::<usize>() != m {
            return Err(Error::Format("trajectory lengths in metadata do not match the row count".into()));
        }
        Ok(Dataset {
            states: Matrix::from_row_slice(m, n, &xs),
            inputs: Matrix::from_row_slice(m, p, &us),
            successors: Matrix::from_row_slice(m, n, &ys),
            split,
            meta,
        })
    }

    /// Write `<stem>.csv` and the `<stem>.json` metadata sidecar.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(stem.with_extension("csv"), buf)?;
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let file = fs::File::open(stem.with_extension("csv"))?;
        Self::read_csv(std::io::BufReader::new(file), meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn duffing_cfg(n_traj: usize, traj_len: usize, seed: u64) -> GenConfig {
        GenConfig {
            n_traj,
            traj_len,
            init_box: vec![[-3.0, 3.0], [-3.0, 3.0]],
            schedule: InputSchedule::default(),
            dt: 0.05,
            h: 0.01,
            seed,
        }
    }

    #[test]
    fn transition_count_and_determinism() {
        let cfg = duffing_cfg(24, 50, 7);
        let a = generate_dataset(&DynSystem::Duffing, &cfg).unwrap();
        assert_eq!(a.len(), 24 * 49);
        let b = generate_dataset(&DynSystem::Duffing, &cfg).unwrap();
        assert_eq!(a, b);
        a.verify_transitions(1.0, 0).unwrap();
        let c = generate_dataset(&DynSystem::Duffing, &duffing_cfg(24, 50, 8)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn inputs_follow_round_robin_schedule() {
        let d = generate_dataset(&DynSystem::Duffing, &duffing_cfg(7, 5, 1)).unwrap();
        // trajectory 0 and 6 use the zero-frequency signal
        for row in (0..4).chain(24..28) {
            assert_eq!(d.inputs[(row, 0)], 1.0);
        }
        assert!((d.inputs[(4 + 2, 0)] - (20.0 * 2.0 * 0.05_f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn successive_rows_chain_within_trajectory() {
        let d = generate_dataset(&DynSystem::Pendulum, &duffing_cfg(3, 6, 2)).unwrap();
        for row in 0..4 {
            assert_eq!(d.successors.row(row), d.states.row(row + 1));
        }
    }

    #[test]
    fn diverging_trajectories_are_truncated() {
        let sys = DynSystem::LinearDiscrete {
            a: Matrix::from_element(1, 1, 10.0),
            b: Matrix::from_element(1, 1, 0.0),
        };
        let cfg = GenConfig {
            n_traj: 2,
            traj_len: 20,
            init_box: vec![[1.0, 2.0]],
            schedule: InputSchedule::Zero,
            dt: 1.0,
            h: 1.0,
            seed: 0,
        };
        let d = generate_dataset(&sys, &cfg).unwrap();
        assert_eq!(d.meta.truncated_trajectories, 2);
        assert!(d.len() < 2 * 19);
        assert!(d.successors.iter().all(|v| v.abs() <= DIVERGENCE_LIMIT));
    }

    #[test]
    fn split_at_trajectory_granularity() {
        let d = generate_dataset(&DynSystem::Duffing, &duffing_cfg(600, 3, 3)).unwrap();
        let s = split_dataset(&d, 0.5, 11).unwrap();
        assert_eq!(s.trajectory_count(Split::D1), 300);
        assert_eq!(s.trajectory_count(Split::D2), 300);
        assert_eq!(s, split_dataset(&d, 0.5, 11).unwrap());
        let ids = s.trajectory_ids();
        for w in 1..s.len() {
            if ids[w] == ids[w - 1] {
                assert_eq!(s.split[w], s.split[w - 1]);
            }
        }
        let last = split_dataset(&d, 599.0 / 600.0, 1).unwrap();
        assert_eq!(last.trajectory_count(Split::D2), 1);
        assert!(split_dataset(&d, 1.0, 1).is_err());
        assert!(split_dataset(&d, 0.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = generate_dataset(&DynSystem::Duffing, &duffing_cfg(4, 6, 5)).unwrap();
        let d = split_dataset(&d, 0.5, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("chi_1,chi_2,u_1,y_1,y_2,split\n"));
        let back = Dataset::read_csv(&buf[..], d.meta.clone()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn bad_generation_requests() {
        let mut cfg = duffing_cfg(0, 5, 0);
        assert!(generate_dataset(&DynSystem::Duffing, &cfg).is_err());
        cfg.n_traj = 2;
        cfg.init_box.pop();
        assert!(generate_dataset(&DynSystem::Duffing, &cfg).is_err());
    }
}
