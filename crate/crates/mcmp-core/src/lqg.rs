//! Discrete LQG tracking: exact discretization of the continuous model,
//! finite-horizon controller and filter synthesis, and simulation of the
//! combined closed loop in deviation coordinates.
//!
//! The joint state is `zeta_t = [dx_t; dxhat_t]` (true deviation from the
//! nominal trajectory stacked with the filter's estimate). It evolves as
//! `zeta_{t+1} = M_t zeta_t + n_t` with `n_t ~ N(0, N_t)`, which is what both
//! the exact moment recursion and the Monte Carlo rollouts simulate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::DynamicsSpec;
use crate::error::{McmpError, Result};
use crate::linalg::{psd_factor, symmetrize};

/// Zero-order-hold discretization of the tracked system at step `dt`.
#[derive(Clone, Debug)]
pub struct DiscreteLqgModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Process noise covariance per step.
    pub v: DMatrix<f64>,
    /// Sensing noise covariance per step; scales like w_c / dt so that the
    /// information rate is independent of the discretization.
    pub w: DMatrix<f64>,
    pub dt: f64,
}

/// Exact discretization. The input map and the process noise covariance are
/// read off block matrix exponentials, so no quadrature error is involved:
///
/// * `A = exp(A_c dt)`
/// * `B` is the top-right block of `exp([[A_c, B_c],[0,0]] dt)`
/// * `V` comes from the Van Loan construction
///   `exp([[-A_c, V_c],[0, A_c^T]] dt) = [[F1, G1],[0, F2]]`, `V = F2^T G1`.
pub fn discretize(spec: &DynamicsSpec, dt: f64) -> Result<DiscreteLqgModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(McmpError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    spec.validate()?;
    let d = spec.state_dim();
    let m = spec.input_dim();
    let a_c = spec.a_c();
    let b_c = spec.b_c();

    let a = (&a_c * dt).exp();

    let mut aug = DMatrix::zeros(d + m, d + m);
    aug.view_mut((0, 0), (d, d)).copy_from(&a_c);
    aug.view_mut((0, d), (d, m)).copy_from(&b_c);
    let aug_exp = (aug * dt).exp();
    let b = aug_exp.view((0, d), (d, m)).into_owned();

    let mut h = DMatrix::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(&(-&a_c));
    h.view_mut((0, d), (d, d)).copy_from(&spec.v_c);
    h.view_mut((d, d), (d, d)).copy_from(&a_c.transpose());
    let h_exp = (h * dt).exp();
    let g1 = h_exp.view((0, d), (d, d)).into_owned();
    let f2 = h_exp.view((d, d), (d, d)).into_owned();
    let mut v = f2.transpose() * g1;
    symmetrize(&mut v);

    let w = &spec.w_c / dt;

    Ok(DiscreteLqgModel { a, b, c: spec.c_c(), v, w, dt })
}

/// Time-varying LQG tracking law over a fixed horizon, with the closed-loop
/// maps and per-step noise factorizations precomputed for simulation.
#[derive(Clone, Debug)]
pub struct TrackingLaw {
    pub model: DiscreteLqgModel,
    /// Number of steps; states are indexed 0..=horizon.
    pub horizon: usize,
    /// Feedback gains L_t applied to the estimated deviation, t = 0..horizon.
    pub feedback: Vec<DMatrix<f64>>,
    /// Kalman gains K_t, t = 0..horizon.
    pub kalman: Vec<DMatrix<f64>>,
    /// Joint closed-loop maps M_t over [dx; dxhat].
    pub loop_maps: Vec<DMatrix<f64>>,
    /// Joint noise covariances N_t = blockdiag(V, K_t W K_t^T).
    pub noise_covs: Vec<DMatrix<f64>>,
    /// Square factors of N_t with clamped eigenvalues; one column per joint
    /// dimension so each step consumes a fixed number of normal draws.
    pub noise_factors: Vec<DMatrix<f64>>,
    pub p0: DMatrix<f64>,
    pub p0_factor: DMatrix<f64>,
}

impl TrackingLaw {
    pub fn state_dim(&self) -> usize {
        self.model.a.nrows()
    }

    pub fn joint_dim(&self) -> usize {
        2 * self.state_dim()
    }
}

/// Builds the finite-horizon tracking law: a backward Riccati pass for the
/// feedback gains, a forward filter pass for the Kalman gains, then the
/// joint closed-loop maps.
pub fn synthesize(spec: &DynamicsSpec, model: &DiscreteLqgModel, horizon: usize) -> Result<TrackingLaw> {
    if horizon == 0 {
        return Err(McmpError::InvalidArgument("horizon must be at least one step".into()));
    }
    spec.validate()?;
    let d = spec.state_dim();
    let a = &model.a;
    let b = &model.b;
    let c = &model.c;

    // Backward pass: S_t = Q + A^T (S - S B (R + B^T S B)^{-1} B^T S) A,
    // seeded with the terminal cost; L_t = -(R + B^T S_{t+1} B)^{-1} B^T S_{t+1} A.
    let mut feedback = vec![DMatrix::zeros(0, 0); horizon];
    let mut s = spec.q_final.clone();
    for t in (0..horizon).rev() {
        let bsb = &spec.r + b.transpose() * &s * b;
        let chol = bsb
            .clone()
            .cholesky()
            .ok_or_else(|| McmpError::Numeric("R + B^T S B is not positive definite".into()))?;
        let bsa = b.transpose() * &s * a;
        let l = -chol.solve(&bsa);
        let sa = &s * a;
        s = &spec.q + a.transpose() * (&sa - (&s * b) * chol.solve(&bsa));
        symmetrize(&mut s);
        feedback[t] = l;
    }

    // Forward pass: one-step-predictor Kalman gains from the error covariance
    // recursion P_{t+1} = V + A (P - P C^T (W + C P C^T)^{-1} C P) A^T.
    let mut kalman = Vec::with_capacity(horizon);
    let mut p = spec.p0.clone();
    for _t in 0..horizon {
        let innov = &model.w + c * &p * c.transpose();
        let chol = innov
            .clone()
            .cholesky()
            .ok_or_else(|| McmpError::Numeric("innovation covariance is not positive definite".into()))?;
        let cp = c * &p;
        let k = a * cp.transpose() * chol.inverse();
        p = &model.v + a * (&p - cp.transpose() * chol.solve(&cp)) * a.transpose();
        symmetrize(&mut p);
        kalman.push(k);
    }

    let mut loop_maps = Vec::with_capacity(horizon);
    let mut noise_covs = Vec::with_capacity(horizon);
    let mut noise_factors = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let bl = b * &feedback[t];
        let kc = &kalman[t] * c;
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(a);
        m.view_mut((0, d), (d, d)).copy_from(&bl);
        m.view_mut((d, 0), (d, d)).copy_from(&kc);
        m.view_mut((d, d), (d, d)).copy_from(&(a + &bl - &kc));
        loop_maps.push(m);

        let mut n = DMatrix::zeros(2 * d, 2 * d);
        n.view_mut((0, 0), (d, d)).copy_from(&model.v);
        let kwk = &kalman[t] * &model.w * kalman[t].transpose();
        n.view_mut((d, d), (d, d)).copy_from(&kwk);
        noise_factors.push(psd_factor(&n)?.factor);
        noise_covs.push(n);
    }

    let p0_factor = psd_factor(&spec.p0)?.factor;

    Ok(TrackingLaw {
        model: model.clone(),
        horizon,
        feedback,
        kalman,
        loop_maps,
        noise_covs,
        noise_factors,
        p0: spec.p0.clone(),
        p0_factor,
    })
}

/// First and second moments of the joint deviation state per step.
#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

impl Moments {
    /// Covariance of the true state deviation at step t.
    pub fn state_cov(&self, t: usize, d: usize) -> DMatrix<f64> {
        self.cov[t].view((0, 0), (d, d)).into_owned()
    }

    /// Covariance of the position coordinates at step t.
    pub fn position_cov(&self, t: usize, w: usize) -> DMatrix<f64> {
        self.cov[t].view((0, 0), (w, w)).into_owned()
    }
}

fn propagate_core(
    law: &TrackingLaw,
    mean0: DVector<f64>,
    cov0: DMatrix<f64>,
    shifts: &[DVector<f64>],
) -> Moments {
    let t_len = law.horizon;
    let mut mean = Vec::with_capacity(t_len + 1);
    let mut cov = Vec::with_capacity(t_len + 1);
    mean.push(mean0);
    cov.push(cov0);
    for t in 0..t_len {
        let m = &law.loop_maps[t];
        let mut mu = m * &mean[t];
        if let Some(s) = shifts.get(t) {
            mu += s;
        }
        let mut sg = m * &cov[t] * m.transpose() + &law.noise_covs[t];
        symmetrize(&mut sg);
        mean.push(mu);
        cov.push(sg);
    }
    Moments { mean, cov }
}

/// Moments of the closed loop started from the true initial distribution:
/// dx_0 ~ N(0, P0) and the estimate pinned at zero.
pub fn propagate_moments(law: &TrackingLaw) -> Moments {
    let d = law.state_dim();
    let dd = law.joint_dim();
    let mut cov0 = DMatrix::zeros(dd, dd);
    cov0.view_mut((0, 0), (d, d)).copy_from(&law.p0);
    propagate_core(law, DVector::zeros(dd), cov0, &[])
}

/// Moments with a zero initial state: the covariance then measures exactly
/// what the per-step noise can reach, which is the Gramian the mean-shift
/// solver inverts.
pub fn propagate_moments_zero_init(law: &TrackingLaw) -> Moments {
    let dd = law.joint_dim();
    propagate_core(law, DVector::zeros(dd), DMatrix::zeros(dd, dd), &[])
}

/// Moments under deterministic per-step mean shifts added to the noise;
/// `shifts[s]` is added when forming the state at step s+1. Covariances are
/// unaffected.
pub fn propagate_moments_shifted(law: &TrackingLaw, shifts: &[DVector<f64>]) -> Moments {
    let d = law.state_dim();
    let dd = law.joint_dim();
    let mut cov0 = DMatrix::zeros(dd, dd);
    cov0.view_mut((0, 0), (d, d)).copy_from(&law.p0);
    propagate_core(law, DVector::zeros(dd), cov0, shifts)
}

/// One simulated tracking run in deviation coordinates.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// True state deviation dx_t, t = 0..=horizon.
    pub states: Vec<DVector<f64>>,
    /// Filter estimate dxhat_t.
    pub estimates: Vec<DVector<f64>>,
    /// Realized joint noise n_t (shift included when one was applied),
    /// t = 0..horizon.
    pub noises: Vec<DVector<f64>>,
}

/// Draw layout per rollout: `d` normals for the initial state, then `2d`
/// per step. The layout never depends on numeric ranks, so any consumer that
/// replays a (seed, particle) pair sees identical trajectories.
pub fn simulate_rollout<R: Rng + ?Sized>(law: &TrackingLaw, rng: &mut R) -> Rollout {
    simulate_rollout_shifted(law, &[], rng)
}

/// Rollout with deterministic mean shifts added to the per-step noise;
/// `shifts` may be shorter than the horizon (missing entries mean zero).
pub fn simulate_rollout_shifted<R: Rng + ?Sized>(
    law: &TrackingLaw,
    shifts: &[DVector<f64>],
    rng: &mut R,
) -> Rollout {
    let d = law.state_dim();
    let dd = law.joint_dim();
    let t_len = law.horizon;

    let mut xi = DVector::zeros(d);
    for i in 0..d {
        xi[i] = rng.sample::<f64, _>(StandardNormal);
    }
    let dx0 = &law.p0_factor * xi;

    let mut zeta = DVector::zeros(dd);
    zeta.rows_mut(0, d).copy_from(&dx0);

    let mut states = Vec::with_capacity(t_len + 1);
    let mut estimates = Vec::with_capacity(t_len + 1);
    let mut noises = Vec::with_capacity(t_len);
    states.push(zeta.rows(0, d).into_owned());
    estimates.push(zeta.rows(d, d).into_owned());

    let mut xi2 = DVector::zeros(dd);
    for t in 0..t_len {
        for i in 0..dd {
            xi2[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let mut n = &law.noise_factors[t] * &xi2;
        if let Some(s) = shifts.get(t) {
            n += s;
        }
        zeta = &law.loop_maps[t] * &zeta + &n;
        states.push(zeta.rows(0, d).into_owned());
        estimates.push(zeta.rows(d, d).into_owned());
        noises.push(n);
    }

    Rollout { states, estimates, noises }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsKind;
    use approx::assert_relative_eq;

    fn si_spec(w: usize) -> DynamicsSpec {
        DynamicsSpec {
            kind: DynamicsKind::SingleIntegrator,
            position_dim: w,
            v_c: DMatrix::identity(w, w) * 0.02,
            w_c: DMatrix::identity(w, w) * 0.01,
            p0: DMatrix::identity(w, w) * 1e-3,
            q: DMatrix::identity(w, w) * 1.0,
            r: DMatrix::identity(w, w) * 0.25,
            q_final: DMatrix::identity(w, w) * 1.0,
            speed: 1.0,
            steer_control_weight: 1.0,
            steer_time_weight: 1.0,
        }
    }

    fn di_spec(w: usize) -> DynamicsSpec {
        let d = 2 * w;
        let mut v_c = DMatrix::zeros(d, d);
        for i in w..d {
            v_c[(i, i)] = 0.03;
        }
        DynamicsSpec {
            kind: DynamicsKind::DoubleIntegrator,
            position_dim: w,
            v_c,
            w_c: DMatrix::identity(w, w) * 0.01,
            p0: DMatrix::identity(d, d) * 1e-3,
            q: DMatrix::identity(d, d),
            r: DMatrix::identity(w, w) * 0.5,
            q_final: DMatrix::identity(d, d),
            speed: 1.0,
            steer_control_weight: 1.0,
            steer_time_weight: 1.0,
        }
    }

    #[test]
    fn discretize_single_integrator_closed_form() {
        let spec = si_spec(2);
        let dt = 0.125;
        let m = discretize(&spec, dt).unwrap();
        assert_relative_eq!(m.a[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.a[(0, 1)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(m.b[(0, 0)], dt, epsilon = 1e-14);
        assert_relative_eq!(m.v[(0, 0)], 0.02 * dt, max_relative = 1e-12);
        assert_relative_eq!(m.v[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.w[(0, 0)], 0.01 / dt, max_relative = 1e-14);
    }

    #[test]
    fn discretize_double_integrator_closed_form() {
        let spec = di_spec(1);
        let dt = 0.2;
        let m = discretize(&spec, dt).unwrap();
        // A = [[1, dt],[0,1]], B = [dt^2/2; dt]
        assert_relative_eq!(m.a[(0, 1)], dt, epsilon = 1e-14);
        assert_relative_eq!(m.b[(0, 0)], dt * dt / 2.0, max_relative = 1e-12);
        assert_relative_eq!(m.b[(1, 0)], dt, max_relative = 1e-13);
        // acceleration noise sigma integrates to the standard jerk-free kernel
        let s = 0.03;
        assert_relative_eq!(m.v[(1, 1)], s * dt, max_relative = 1e-11);
        assert_relative_eq!(m.v[(0, 1)], s * dt * dt / 2.0, max_relative = 1e-10);
        assert_relative_eq!(m.v[(0, 0)], s * dt * dt * dt / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn riccati_scalar_fixed_point_is_golden_ratio() {
        // a = b = q = r = 1: the stationary Riccati solution solves
        // s^2 = s + 1, and the stationary gain is -s/(1+s) = -1/phi.
        let spec = DynamicsSpec {
            kind: DynamicsKind::SingleIntegrator,
            position_dim: 1,
            v_c: DMatrix::identity(1, 1),
            w_c: DMatrix::identity(1, 1),
            p0: DMatrix::identity(1, 1),
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            q_final: DMatrix::identity(1, 1),
            speed: 1.0,
            steer_control_weight: 1.0,
            steer_time_weight: 1.0,
        };
        // dt = 1 gives a = 1, b = 1 exactly for the single integrator
        let model = discretize(&spec, 1.0).unwrap();
        let law = synthesize(&spec, &model, 80).unwrap();
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert_relative_eq!(law.feedback[0][(0, 0)], -1.0 / phi, epsilon = 1e-9);
    }

    #[test]
    fn loop_maps_have_expected_block_structure() {
        let spec = si_spec(2);
        let model = discretize(&spec, 0.1).unwrap();
        let law = synthesize(&spec, &model, 5).unwrap();
        let m = &law.loop_maps[2];
        let a = &model.a;
        let bl = &model.b * &law.feedback[2];
        let kc = &law.kalman[2] * &model.c;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(m[(i, j)], a[(i, j)], epsilon = 1e-14);
                assert_relative_eq!(m[(i, 2 + j)], bl[(i, j)], epsilon = 1e-14);
                assert_relative_eq!(m[(2 + i, j)], kc[(i, j)], epsilon = 1e-14);
                assert_relative_eq!(
                    m[(2 + i, 2 + j)],
                    a[(i, j)] + bl[(i, j)] - kc[(i, j)],
                    epsilon = 1e-14
                );
            }
        }
        let n = &law.noise_covs[2];
        assert_relative_eq!(n[(0, 0)], model.v[(0, 0)], epsilon = 1e-14);
        assert_relative_eq!(n[(0, 2)], 0.0, epsilon = 1e-14);
        let kwk = &law.kalman[2] * &model.w * law.kalman[2].transpose();
        assert_relative_eq!(n[(2, 2)], kwk[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn moments_match_empirical_rollouts() {
        use crate::rng::particle_rng;
        let spec = di_spec(1);
        let model = discretize(&spec, 0.15).unwrap();
        let law = synthesize(&spec, &model, 24).unwrap();
        let moments = propagate_moments(&law);

        let m = 30_000usize;
        let dd = law.joint_dim();
        let t_probe = [8usize, 24];
        let mut sums = vec![DVector::<f64>::zeros(dd); t_probe.len()];
        let mut sq = vec![DMatrix::<f64>::zeros(dd, dd); t_probe.len()];
        for i in 0..m {
            let mut rng = particle_rng(991, i as u64);
            let r = simulate_rollout(&law, &mut rng);
            for (k, &t) in t_probe.iter().enumerate() {
                let mut z = DVector::zeros(dd);
                z.rows_mut(0, 2).copy_from(&r.states[t]);
                z.rows_mut(2, 2).copy_from(&r.estimates[t]);
                sq[k] += &z * z.transpose();
                sums[k] += z;
            }
        }
        for (k, &t) in t_probe.iter().enumerate() {
            let mean = &sums[k] / m as f64;
            let cov = &sq[k] / m as f64 - &mean * mean.transpose();
            for i in 0..dd {
                let se_mean = (moments.cov[t][(i, i)] / m as f64).sqrt();
                assert!(
                    (mean[i] - moments.mean[t][i]).abs() < 5.0 * se_mean,
                    "mean mismatch at t={t} i={i}"
                );
                for j in 0..dd {
                    let sii = moments.cov[t][(i, i)];
                    let sjj = moments.cov[t][(j, j)];
                    let sij = moments.cov[t][(i, j)];
                    let se_cov = ((sii * sjj + sij * sij) / m as f64).sqrt();
                    assert!(
                        (cov[(i, j)] - sij).abs() < 5.0 * se_cov.max(1e-12),
                        "cov mismatch at t={t} ({i},{j}): got {} want {}",
                        cov[(i, j)],
                        sij
                    );
                }
            }
        }
    }

    #[test]
    fn shifted_moments_and_rollouts_agree_on_the_mean() {
        use crate::rng::particle_rng;
        let spec = si_spec(1);
        let model = discretize(&spec, 0.1).unwrap();
        let law = synthesize(&spec, &model, 10).unwrap();
        let dd = law.joint_dim();
        let shifts: Vec<DVector<f64>> = (0..6)
            .map(|s| DVector::from_fn(dd, |i, _| 0.01 * (s as f64 + 1.0) * (i as f64 - 0.5)))
            .collect();
        let mm = propagate_moments_shifted(&law, &shifts);

        let m = 20_000usize;
        let d = law.state_dim();
        let mut sum_end = DVector::<f64>::zeros(dd);
        for i in 0..m {
            let mut rng = particle_rng(5150, i as u64);
            let r = simulate_rollout_shifted(&law, &shifts, &mut rng);
            for k in 0..d {
                sum_end[k] += r.states[10][k];
                sum_end[d + k] += r.estimates[10][k];
            }
        }
        let mean_end = sum_end / m as f64;
        for i in 0..dd {
            let se = (mm.cov[10][(i, i)] / m as f64).sqrt();
            assert!((mean_end[i] - mm.mean[10][i]).abs() < 5.0 * se);
        }
    }

    #[test]
    fn rejects_bad_horizon_and_dt() {
        let spec = si_spec(1);
        assert!(discretize(&spec, 0.0).is_err());
        assert!(discretize(&spec, -1.0).is_err());
        let model = discretize(&spec, 0.1).unwrap();
        assert!(synthesize(&spec, &model, 0).is_err());
    }
}
