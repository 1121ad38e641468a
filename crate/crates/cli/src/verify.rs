//! Analytic oracle checks runnable from an installed binary.

use obliq_core::control::{solve_dare, DARE_MAX_ITER, DARE_TOL};
use obliq_core::dynamics::{generate_dataset, sample_map, GenConfig, Samples};
use obliq_core::embedding::{edmd_fit, oblique_edmd_fit};
use obliq_core::numerics::{Activation, Mlp};
use obliq_core::{DynSystem, EmbeddingModel, FeatureMap, FitMode, InputSchedule, Matrix, TestFunctionSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<String, String>) -> Check {
    match r {
        Ok(detail) => Check { name, passed: true, detail },
        Err(detail) => Check { name, passed: false, detail },
    }
}

fn sine_table() -> Result<String, String> {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = Matrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let model = EmbeddingModel::new(FeatureMap::SineAugmented { state_dim: 1 }, a, b).map_err(|e| e.to_string())?;
    let table = [(0.0, 0.0), (0.5, 0.479), (1.0, 0.841), (1.5, 0.997), (2.0, 0.909), (2.5, 0.598)];
    let mut worst: f64 = 0.0;
    for (u, want) in table.into_iter().chain([(std::f64::consts::PI, 0.0)]) {
        let y = sample_map(&DynSystem::SineMap, &[0.0], &[u], 1.0, 1.0).map_err(|e| e.to_string())?;
        let got = model.modeling_error(&[0.0], &[u], &y);
        if (got - want).abs() >= 1e-3 {
            return Err(format!("u = {u}: error {got}, expected {want}"));
        }
        worst = worst.max((got - want).abs());
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn scalar_dare() -> Result<String, String> {
    let one = Matrix::identity(1, 1);
    let sol = solve_dare(&one, &one, &one, &one, DARE_TOL, DARE_MAX_ITER).map_err(|e| e.to_string())?;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let (p, k) = (sol.p[(0, 0)], sol.gain[(0, 0)].abs());
    if (p - golden).abs() < 1e-7 && (k - (golden - 1.0)).abs() < 1e-7 {
        Ok(format!("P = {p:.10}, |gain| = {k:.10}"))
    } else {
        Err(format!("P = {p}, |gain| = {k}"))
    }
}

fn least_squares(gx: &Matrix, gy: &Matrix) -> Option<Matrix> {
    let qr = gx.clone().qr();
    let rhs = qr.q().transpose() * gy;
    qr.r().solve_upper_triangular(&rhs).map(|s| s.transpose())
}

fn tied_fit_instances() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut done = 0;
    let mut worst: f64 = 0.0;
    while done < 20 {
        let n = rng.random_range(1..=4);
        let p = rng.random_range(1..=2);
        let nx = rng.random_range(n..=6);
        let m = rng.random_range(nx + p + 1..=50);
        let g = if nx == n {
            FeatureMap::monomial(n, 1).map_err(|e| e.to_string())?
        } else {
            FeatureMap::mlp(Mlp::new(&[n, 8, nx - n], Activation::Swish, &mut rng).map_err(|e| e.to_string())?)
        };
        let x = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let u = Matrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let mut gx = Matrix::zeros(m, nx + p);
        gx.columns_mut(0, nx).copy_from(&g.embed_batch(&x));
        gx.columns_mut(nx, p).copy_from(&u);
        let sv = gx.singular_values();
        if sv.max() / sv.min() > 1e3 {
            continue;
        }
        let Some(oracle) = least_squares(&gx, &g.embed_batch(&y)) else { continue };
        let samples = Samples::new(x, u, y).map_err(|e| e.to_string())?;
        let fit = oblique_edmd_fit(&samples, &g, &TestFunctionSet::Tied, FitMode::default()).map_err(|e| e.to_string())?;
        let mut ab = Matrix::zeros(nx, nx + p);
        ab.columns_mut(0, nx).copy_from(&fit.a);
        ab.columns_mut(nx, p).copy_from(&fit.b);
        let d = (ab - oracle).norm();
        if d >= 1e-8 {
            return Err(format!("instance {done}: ‖Δ‖_F = {d:.3e}"));
        }
        worst = worst.max(d);
        done += 1;
    }
    Ok(format!("20 instances, max ‖Δ‖_F {worst:.1e}"))
}

fn lti_recovery() -> Result<String, String> {
    let a = Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
    let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let sys = DynSystem::LinearDiscrete { a: a.clone(), b: b.clone() };
    let gen = GenConfig {
        n_traj: 6,
        traj_len: 10,
        init_box: vec![[-1.0, 1.0]; 2],
        schedule: InputSchedule::default(),
        dt: 0.05,
        h: 0.01,
        seed: 1,
    };
    let data = generate_dataset(&sys, &gen).map_err(|e| e.to_string())?;
    let g = FeatureMap::monomial(2, 1).map_err(|e| e.to_string())?;
    let fit = edmd_fit(&data.samples(None), &g, FitMode::default()).map_err(|e| e.to_string())?;
    let d = (fit.a - a).amax().max((fit.b - b).amax());
    if d < 1e-8 {
        Ok(format!("(A, B) recovered within {d:.1e}"))
    } else {
        Err(format!("(A, B) off by {d:.3e}"))
    }
}

pub fn run_checks() -> Vec<Check> {
    vec![
        check("sine_model_error_table", sine_table()),
        check("scalar_dare", scalar_dare()),
        check("tied_fit_is_least_squares", tied_fit_instances()),
        check("lti_recovery", lti_recovery()),
    ]
}
