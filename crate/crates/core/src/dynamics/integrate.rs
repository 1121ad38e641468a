use super::DynSystem;
use crate::{Error, Result};

/// States with a component beyond this magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Classical RK4 with `u` held constant over the step.
pub fn rk4_step(sys: &DynSystem, z: &[f64], u: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::usage(format!("step size must be positive, got {h}")));
    }
    if !sys.is_continuous() {
        return Err(Error::usage(format!("{} is discrete-time; rk4_step needs a continuous system", sys.name())));
    }
    let n = z.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    sys.drift(z, u, &mut k1);
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k1[i];
    }
    sys.drift(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k2[i];
    }
    sys.drift(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = z[i] + h * k3[i];
    }
    sys.drift(&tmp, u, &mut k4);

    let next: Vec<f64> = (0..n)
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { state: next });
    }
    Ok(next)
}

/// Number of RK4 substeps in one sampling period; `dt` must be a multiple of `h`.
pub fn substeps(dt: f64, h: f64) -> Result<usize> {
    if !(dt > 0.0 && h > 0.0) {
        return Err(Error::usage(format!("sampling period and step must be positive (dt={dt}, h={h})")));
    }
    let ratio = dt / h;
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::usage(format!("dt={dt} is not an integer multiple of h={h}")));
    }
    Ok(steps as usize)
}

/// The sampled map `F(x, u)`: `dt / h` RK4 steps for continuous systems, one
/// application of the map for discrete ones (`dt`, `h` unused).
pub fn sample_map(sys: &DynSystem, z: &[f64], u: &[f64], dt: f64, h: f64) -> Result<Vec<f64>> {
    if z.len() != sys.state_dim() || u.len() != sys.input_dim() {
        return Err(Error::usage(format!(
            "{} expects state dim {} and input dim {}, got {} and {}",
            sys.name(),
            sys.state_dim(),
            sys.input_dim(),
            z.len(),
            u.len()
        )));
    }
    if !sys.is_continuous() {
        let next = sys.map(z, u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { state: next });
        }
        return Ok(next);
    }
    let steps = substeps(dt, h)?;
    let mut state = z.to_vec();
    for _ in 0..steps {
        state = rk4_step(sys, &state, u, h)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use std::f64::consts::PI;

    fn decay() -> DynSystem {
        DynSystem::LinearContinuous {
            a: Matrix::from_element(1, 1, -1.0),
            b: Matrix::from_element(1, 1, 0.0),
        }
    }

    #[test]
    fn rk4_single_step_exponential() {
        let z = rk4_step(&decay(), &[1.0], &[0.0], 0.01).unwrap();
        assert!((z[0] - 0.9900498337).abs() < 1e-9);
    }

    #[test]
    fn rk4_global_error_on_unit_interval() {
        let sys = decay();
        let mut z = vec![1.0];
        for _ in 0..100 {
            z = rk4_step(&sys, &z, &[0.0], 0.01).unwrap();
        }
        assert!((z[0] - (-1.0_f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn fixed_points_are_stationary() {
        let systems = [
            DynSystem::Duffing,
            DynSystem::Pendulum,
            DynSystem::Rtac { epsilon: 0.2 },
            DynSystem::NonNormal { a: 0.3, b: -0.3 },
            DynSystem::SineMap,
        ];
        for sys in systems {
            for fp in sys.fixed_points() {
                let next = sample_map(&sys, &fp, &[0.0], 0.05, 0.01).unwrap();
                for (a, b) in next.iter().zip(&fp) {
                    assert!((a - b).abs() < 1e-10, "{} drifted from {fp:?}", sys.name());
                }
            }
        }
    }

    #[test]
    fn duffing_and_pendulum_fixed_points_single_step() {
        let z = rk4_step(&DynSystem::Duffing, &[0.5, 0.0], &[0.0], 0.01).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-12 && z[1].abs() < 1e-12);
        let z = rk4_step(&DynSystem::Pendulum, &[PI, 0.0], &[0.0], 0.01).unwrap();
        assert!((z[0] - PI).abs() < 1e-12 && z[1].abs() < 1e-12);
    }

    #[test]
    fn sample_map_uses_five_substeps() {
        assert_eq!(substeps(0.05, 0.01).unwrap(), 5);
        let sys = DynSystem::Pendulum;
        let mut manual = vec![1.0, -0.3];
        for _ in 0..5 {
            manual = rk4_step(&sys, &manual, &[0.2], 0.01).unwrap();
        }
        assert_eq!(sample_map(&sys, &[1.0, -0.3], &[0.2], 0.05, 0.01).unwrap(), manual);
        assert!(substeps(0.05, 0.03).is_err());
    }

    #[test]
    fn discrete_map_ignores_step_sizes() {
        assert_eq!(sample_map(&DynSystem::SineMap, &[0.0], &[1.0], 0.05, 0.01).unwrap(), vec![1.0]);
    }

    #[test]
    fn blow_up_is_reported() {
        let sys = DynSystem::LinearContinuous {
            a: Matrix::from_element(1, 1, 1e308),
            b: Matrix::from_element(1, 1, 0.0),
        };
        assert!(matches!(rk4_step(&sys, &[10.0], &[0.0], 0.5), Err(Error::Divergence { .. })));
        assert!(rk4_step(&DynSystem::Duffing, &[0.0, 0.0], &[0.0], 0.0).is_err());
    }
}
