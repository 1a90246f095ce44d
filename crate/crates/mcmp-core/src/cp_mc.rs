//! Monte Carlo path collision probability estimation.
//!
//! Two estimators share one simulation kernel:
//!
//! * [`simple_mc`]: the indicator mean over closed-loop rollouts;
//! * [`estimate_cp_vr`]: the variance-reduced estimator, which samples
//!   rollouts from a mixture of mean-shifted noise distributions (one
//!   component per close obstacle point), reweights them by the exact
//!   likelihood ratio, and regresses out the crossing-count control variate
//!   whose expectation is known in closed form.
//!
//! Estimates are reproducible: particle `i` of a run with seed `s` always
//! consumes stream `i` of a counter-based generator keyed by `s`, draws in a
//! fixed layout, and reductions run in particle order, so results are
//! independent of thread count and scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{McmpError, Result};
use crate::geometry::{build_close_set, CloseSet, Workspace};
use crate::linalg::{log_sum_exp, psd_factor, solve_spd};
use crate::lqg::{propagate_moments, propagate_moments_zero_init, Rollout, TrackingLaw};
use crate::rng::particle_rng;
use crate::trajectory::NominalTrajectory;

/// Everything a path collision probability depends on: the tracking law, the
/// nominal trajectory it follows, and the workspace it must avoid.
#[derive(Clone, Copy)]
pub struct CpProblem<'a> {
    pub law: &'a TrackingLaw,
    pub nominal: &'a NominalTrajectory,
    pub workspace: &'a Workspace,
}

impl<'a> CpProblem<'a> {
    fn validate(&self) -> Result<()> {
        self.nominal.validate()?;
        if self.nominal.horizon() != self.law.horizon {
            return Err(McmpError::InvalidArgument(format!(
                "law horizon {} does not match trajectory horizon {}",
                self.law.horizon,
                self.nominal.horizon()
            )));
        }
        let d = self.law.state_dim();
        if self.nominal.states[0].len() != d {
            return Err(McmpError::InvalidArgument("trajectory state dimension mismatch".into()));
        }
        if self.workspace.position_dim > d {
            return Err(McmpError::InvalidArgument("workspace position dim exceeds state dim".into()));
        }
        Ok(())
    }
}

/// Point estimate with its estimator variance.
#[derive(Clone, Copy, Debug)]
pub struct CpEstimate {
    pub p_hat: f64,
    pub variance: f64,
    pub particles: u64,
}

impl CpEstimate {
    pub fn std_err(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Variance-reduced estimate plus its regression diagnostics.
#[derive(Clone, Debug)]
pub struct VrEstimate {
    pub p_hat: f64,
    pub variance: f64,
    pub particles: u64,
    /// Fitted control variate coefficient.
    pub beta: f64,
    /// Exact expectation of the crossing count under the nominal law.
    pub theta: f64,
    /// Sample mean of the weighted crossing count under the mixture.
    pub theta_hat_q: f64,
    /// Sample mean of the weighted collision indicator before the control
    /// variate correction.
    pub p_hat_q: f64,
    /// Mixture components used.
    pub components: usize,
}

impl VrEstimate {
    pub fn std_err(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }

    pub fn as_estimate(&self) -> CpEstimate {
        CpEstimate { p_hat: self.p_hat, variance: self.variance, particles: self.particles }
    }
}

// ---------------------------------------------------------------------------
// flat simulation kernel

struct FlatObstacle {
    faces: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
    aabb: Option<(Vec<f64>, Vec<f64>)>,
}

/// Per-problem data laid out for the rollout inner loop. All matrices are
/// row-major flat slices; the layout (and hence the consumed random stream)
/// matches `lqg::simulate_rollout` exactly.
struct Kernel {
    d: usize,
    dd: usize,
    w: usize,
    steps: usize,
    loop_flat: Vec<f64>,
    nfac_flat: Vec<f64>,
    p0fac: Vec<f64>,
    nom_pos: Vec<f64>,
    obstacles: Vec<FlatObstacle>,
}

struct Scratch {
    zeta: Vec<f64>,
    znew: Vec<f64>,
    phi: Vec<f64>,
    pnew: Vec<f64>,
    xi: Vec<f64>,
    pos_prev: Vec<f64>,
    pos_cur: Vec<f64>,
    g: Vec<f64>,
}

impl Scratch {
    fn new(dd: usize, w: usize, comps: usize) -> Self {
        Scratch {
            zeta: vec![0.0; dd],
            znew: vec![0.0; dd],
            phi: vec![0.0; dd],
            pnew: vec![0.0; dd],
            xi: vec![0.0; dd],
            pos_prev: vec![0.0; w],
            pos_cur: vec![0.0; w],
            g: vec![0.0; comps],
        }
    }
}

#[inline]
fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[inline]
fn gemv(out: &mut [f64], m: &[f64], x: &[f64], n: usize) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

#[inline]
fn gemv_acc(out: &mut [f64], m: &[f64], x: &[f64], n: usize) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * x[j];
        }
        out[i] += acc;
    }
}

impl Kernel {
    fn build(problem: &CpProblem) -> Result<Kernel> {
        problem.validate()?;
        let law = problem.law;
        let d = law.state_dim();
        let dd = law.joint_dim();
        let w = problem.workspace.position_dim;
        let steps = law.horizon;

        let mut loop_flat = Vec::with_capacity(steps * dd * dd);
        let mut nfac_flat = Vec::with_capacity(steps * dd * dd);
        for t in 0..steps {
            loop_flat.extend(flatten_row_major(&law.loop_maps[t]));
            nfac_flat.extend(flatten_row_major(&law.noise_factors[t]));
        }
        let p0fac = flatten_row_major(&law.p0_factor);

        let mut nom_pos = Vec::with_capacity((steps + 1) * w);
        for s in &problem.nominal.states {
            for k in 0..w {
                nom_pos.push(s[k]);
            }
        }

        let ws = problem.workspace;
        let obstacles = ws
            .obstacles
            .iter()
            .enumerate()
            .map(|(oi, o)| {
                let s = if o.inflatable { ws.inflation } else { 0.0 };
                let mut offsets = Vec::with_capacity(o.normals.nrows());
                for j in 0..o.normals.nrows() {
                    offsets.push(o.offsets[j] + s);
                }
                FlatObstacle {
                    faces: o.normals.nrows(),
                    normals: flatten_row_major(&o.normals),
                    offsets,
                    aabb: ws.aabb_of(oi).map(|(lo, hi)| (lo.to_vec(), hi.to_vec())),
                }
            })
            .collect();

        Ok(Kernel { d, dd, w, steps, loop_flat, nfac_flat, p0fac, nom_pos, obstacles })
    }

    /// Draws the initial deviation into `zeta` (d normals) in the layout of
    /// `simulate_rollout`.
    #[inline]
    fn init_state(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch) {
        for i in 0..self.d {
            sc.xi[i] = rng.sample::<f64, _>(StandardNormal);
        }
        sc.zeta.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.d {
            let row = &self.p0fac[i * self.d..(i + 1) * self.d];
            let mut acc = 0.0;
            for j in 0..self.d {
                acc += row[j] * sc.xi[j];
            }
            sc.zeta[i] = acc;
        }
    }

    /// One closed-loop step: fills `znew` from `zeta` plus fresh noise and
    /// an optional mean shift slice of length dd.
    #[inline]
    fn step(&self, t: usize, rng: &mut ChaCha8Rng, sc: &mut Scratch, shift: Option<&[f64]>) {
        let dd = self.dd;
        for i in 0..dd {
            sc.xi[i] = rng.sample::<f64, _>(StandardNormal);
        }
        match shift {
            Some(s) => sc.znew.copy_from_slice(s),
            None => sc.znew.iter_mut().for_each(|v| *v = 0.0),
        }
        let nf = &self.nfac_flat[t * dd * dd..(t + 1) * dd * dd];
        gemv_acc(&mut sc.znew, nf, &sc.xi, dd);
        let mf = &self.loop_flat[t * dd * dd..(t + 1) * dd * dd];
        gemv_acc(&mut sc.znew, mf, &sc.zeta, dd);
        std::mem::swap(&mut sc.zeta, &mut sc.znew);
    }

    #[inline]
    fn positions(&self, t: usize, zeta: &[f64], out: &mut [f64]) {
        let base = t * self.w;
        for k in 0..self.w {
            out[k] = self.nom_pos[base + k] + zeta[k];
        }
    }

    #[inline]
    fn segment_collides(&self, p: &[f64], q: &[f64]) -> bool {
        'obstacle: for o in &self.obstacles {
            if let Some((lo, hi)) = &o.aabb {
                for k in 0..self.w {
                    let (a, b) = if p[k] <= q[k] { (p[k], q[k]) } else { (q[k], p[k]) };
                    if b < lo[k] || a > hi[k] {
                        continue 'obstacle;
                    }
                }
            }
            let mut tlo = 0.0_f64;
            let mut thi = 1.0_f64;
            let mut hit = true;
            for j in 0..o.faces {
                let row = &o.normals[j * self.w..(j + 1) * self.w];
                let mut sp = -o.offsets[j];
                let mut sq = sp;
                for k in 0..self.w {
                    sp += row[k] * p[k];
                    sq += row[k] * q[k];
                }
                if sp > 0.0 && sq > 0.0 {
                    hit = false;
                    break;
                }
                if sp > 0.0 {
                    tlo = tlo.max(sp / (sp - sq));
                } else if sq > 0.0 {
                    thi = thi.min(sp / (sp - sq));
                }
                if tlo > thi {
                    hit = false;
                    break;
                }
            }
            if hit {
                return true;
            }
        }
        false
    }

    /// Collision indicator only, with early exit; the plain estimator path.
    fn rollout_collides(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch) -> bool {
        self.init_state(rng, sc);
        self.positions(0, &sc.zeta, &mut sc.pos_prev);
        for t in 0..self.steps {
            self.step(t, rng, sc, None);
            self.positions(t + 1, &sc.zeta, &mut sc.pos_cur);
            if self.segment_collides(&sc.pos_prev, &sc.pos_cur) {
                return true;
            }
            std::mem::swap(&mut sc.pos_prev, &mut sc.pos_cur);
        }
        false
    }
}

// ---------------------------------------------------------------------------
// plain Monte Carlo

/// Collision probability by direct simulation: the mean of the path
/// collision indicator over `m` closed-loop rollouts.
pub fn simple_mc(problem: &CpProblem, m: u64, seed: u64) -> Result<CpEstimate> {
    let kernel = Kernel::build(problem)?;
    if m == 0 {
        return Err(McmpError::InvalidArgument("particle count must be positive".into()));
    }
    let hits: u64 = (0..m as usize)
        .into_par_iter()
        .with_min_len(1024)
        .map_init(
            || Scratch::new(kernel.dd, kernel.w, 0),
            |sc, i| {
                let mut rng = particle_rng(seed, i as u64);
                kernel.rollout_collides(&mut rng, sc) as u64
            },
        )
        .sum();
    let p = hits as f64 / m as f64;
    Ok(CpEstimate { p_hat: p, variance: p * (1.0 - p) / m as f64, particles: m })
}

// ---------------------------------------------------------------------------
// control variate

/// Crossing count of one rollout against the close set: for every close
/// point with a usable direction, one when the deviation at its step crosses
/// the tangent plane. Its exact expectation under the nominal law is
/// `close.theta`.
pub fn control_variate_value(rollout: &Rollout, close: &CloseSet) -> f64 {
    let mut h = 0.0;
    for p in &close.points {
        if p.mdist <= 1e-12 {
            continue;
        }
        let dx = &rollout.states[p.step];
        let mut along = 0.0;
        for i in 0..p.normal.len() {
            along += p.normal[i] * dx[i];
        }
        if along >= p.mdist {
            h += 1.0;
        }
    }
    h
}

/// Path collision indicator of a recorded rollout.
pub fn rollout_collides(problem: &CpProblem, rollout: &Rollout) -> bool {
    let w = problem.workspace.position_dim;
    let mut prev: Vec<f64> = (0..w)
        .map(|k| problem.nominal.states[0][k] + rollout.states[0][k])
        .collect();
    let mut cur = vec![0.0; w];
    for t in 1..rollout.states.len() {
        for k in 0..w {
            cur[k] = problem.nominal.states[t][k] + rollout.states[t][k];
        }
        if problem.workspace.segment_in_collision(&prev, &cur, 0.0) {
            return true;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    false
}

// ---------------------------------------------------------------------------
// mean shifts

/// Minimum-energy sequence of noise mean shifts driving the expected
/// position deviation at `target_step` to `target`.
#[derive(Clone, Debug)]
pub struct ShiftSchedule {
    pub target_step: usize,
    pub target: DVector<f64>,
    /// Gramian multiplier; also the gradient of the log likelihood ratio
    /// with respect to the reached position.
    pub lambda: DVector<f64>,
    /// Per-step shifts of the joint noise, length target_step + 1 with a
    /// zero trailing entry.
    pub shifts: Vec<DVector<f64>>,
}

/// Solves for the mean shifts. The positional reachability Gramian at step t
/// is the position block of the zero-initial-state covariance; the shifts
/// are `N_s Phi(t, s+1)^T P^T lambda`, computed by one backward pass, and
/// they are in the range of each `N_s` by construction.
pub fn solve_shift(law: &TrackingLaw, target_step: usize, target: &DVector<f64>) -> Result<ShiftSchedule> {
    let noise_cov = propagate_moments_zero_init(law);
    let w = target.len();
    let gram = noise_cov.cov[target_step.min(law.horizon)].view((0, 0), (w, w)).into_owned();
    solve_shift_with_gramian(law, target_step, target, &gram)
}

fn solve_shift_with_gramian(
    law: &TrackingLaw,
    target_step: usize,
    target: &DVector<f64>,
    gram: &DMatrix<f64>,
) -> Result<ShiftSchedule> {
    let d = law.state_dim();
    let dd = law.joint_dim();
    let w = target.len();
    if w > d {
        return Err(McmpError::InvalidArgument("shift target dimension exceeds state".into()));
    }
    if target_step > law.horizon {
        return Err(McmpError::InvalidArgument(format!(
            "shift target step {} beyond horizon {}",
            target_step, law.horizon
        )));
    }
    if target_step == 0 {
        if target.norm() <= 1e-12 {
            return Ok(ShiftSchedule {
                target_step,
                target: target.clone(),
                lambda: DVector::zeros(w),
                shifts: vec![DVector::zeros(dd)],
            });
        }
        return Err(McmpError::UnreachableShift(
            "no noise enters before step 0, so its mean cannot be moved".into(),
        ));
    }

    let (lambda, residual) = solve_spd(gram, target)?;
    if residual > 1e-8 {
        return Err(McmpError::UnreachableShift(format!(
            "target is outside the reachable subspace (residual {residual:.3e})"
        )));
    }

    // psi_t = P^T lambda, psi_s = M_s^T psi_{s+1}; shift_s = N_s psi_{s+1}
    let mut psi = DVector::zeros(dd);
    for i in 0..w {
        psi[i] = lambda[i];
    }
    let mut shifts = vec![DVector::zeros(dd); target_step + 1];
    for s in (0..target_step).rev() {
        shifts[s] = &law.noise_covs[s] * &psi;
        psi = law.loop_maps[s].transpose() * psi;
    }

    Ok(ShiftSchedule { target_step, target: target.clone(), lambda, shifts })
}

/// Relative-entropy-style cost of a shift schedule:
/// `1/2 sum_s shift_s^T N_s^+ shift_s`. The solver's schedule minimizes this
/// among all schedules reaching the same target.
pub fn shift_cost(law: &TrackingLaw, shifts: &[DVector<f64>]) -> Result<f64> {
    let mut cost = 0.0;
    for (s, sh) in shifts.iter().enumerate() {
        if sh.norm() == 0.0 {
            continue;
        }
        if s >= law.horizon {
            return Err(McmpError::InvalidArgument("shift past the horizon".into()));
        }
        let f = psd_factor(&law.noise_covs[s])?;
        cost += 0.5 * sh.dot(&(&f.pinv * sh));
    }
    Ok(cost)
}

// ---------------------------------------------------------------------------
// importance distribution

#[derive(Clone, Debug)]
pub struct IsComponent {
    pub close_index: usize,
    pub step: usize,
    pub weight: f64,
    pub schedule: ShiftSchedule,
    /// Precomputed `lambda . target / 2` for likelihood evaluation.
    pub half_quad: f64,
}

/// Mixture of mean-shifted noise laws, one component per retained close
/// point, weighted by hit probability.
#[derive(Clone, Debug)]
pub struct IsDistribution {
    pub components: Vec<IsComponent>,
    /// Expected crossing count over the full close set (the control variate
    /// mean, regardless of pruning).
    pub close_theta: f64,
    /// Components dropped because their weight was negligible or their step
    /// admits no shift.
    pub dropped: usize,
}

/// Builds the mixture from a close set. Components whose share of the total
/// hit probability is below `min_weight` are pruned (so every kept component
/// is expected to be sampled at the planned particle count), as are close
/// points at step 0, whose mean no shift can move; weights are renormalized
/// over what remains.
pub fn build_is_distribution(
    law: &TrackingLaw,
    close: &CloseSet,
    min_weight: f64,
) -> Result<IsDistribution> {
    let w = law.model.c.nrows();
    let noise_cov = propagate_moments_zero_init(law);
    let total: f64 = close.points.iter().map(|p| p.hit_prob).sum();
    let mut kept: Vec<(usize, f64)> = Vec::new();
    let mut dropped = 0usize;
    for (i, p) in close.points.iter().enumerate() {
        let rel = if total > 0.0 { p.hit_prob / total } else { 0.0 };
        if rel < min_weight || p.step == 0 || p.mdist <= 1e-12 {
            dropped += 1;
            continue;
        }
        kept.push((i, p.hit_prob));
    }
    let kept_total: f64 = kept.iter().map(|(_, h)| h).sum();
    let mut components = Vec::with_capacity(kept.len());
    for (idx, hp) in kept {
        let p = &close.points[idx];
        let target = &p.point - &p.nominal_position;
        let gram = noise_cov.cov[p.step].view((0, 0), (w, w)).into_owned();
        match solve_shift_with_gramian(law, p.step, &target, &gram) {
            Ok(schedule) => {
                let half_quad = 0.5 * schedule.lambda.dot(&target);
                components.push(IsComponent {
                    close_index: idx,
                    step: p.step,
                    weight: hp / kept_total,
                    schedule,
                    half_quad,
                });
            }
            Err(McmpError::UnreachableShift(_)) => {
                dropped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    // renormalize after unreachable drops
    let wsum: f64 = components.iter().map(|c| c.weight).sum();
    if wsum > 0.0 {
        for c in &mut components {
            c.weight /= wsum;
        }
    }
    Ok(IsDistribution { components, close_theta: close.theta, dropped })
}

/// Component selection shared by the estimator and external samplers: `u`
/// uniform in [0,1) picks by cumulative weight.
pub fn select_component(dist: &IsDistribution, u: f64) -> usize {
    let mut acc = 0.0;
    for (k, c) in dist.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return k;
        }
    }
    dist.components.len() - 1
}

// ---------------------------------------------------------------------------
// likelihood ratios

/// Likelihood ratio `dP/dQ` of a rollout, where Q is the shift mixture.
/// Computed from the noise-driven deviation at each component's step:
/// the per-component log ratio is `lambda . w_t - lambda . target / 2`
/// with `w_t` the position deviation minus the free response of the initial
/// state.
pub fn likelihood_ratio(law: &TrackingLaw, dist: &IsDistribution, rollout: &Rollout) -> f64 {
    if dist.components.is_empty() {
        return 1.0;
    }
    let d = law.state_dim();
    let dd = law.joint_dim();
    let w = dist.components[0].schedule.target.len();

    // free response of the initial condition, propagated alongside
    let mut phi = DVector::<f64>::zeros(dd);
    phi.rows_mut(0, d).copy_from(&rollout.states[0]);
    phi.rows_mut(d, d).copy_from(&rollout.estimates[0]);

    let mut by_step: Vec<Vec<usize>> = vec![Vec::new(); law.horizon + 1];
    for (k, c) in dist.components.iter().enumerate() {
        by_step[c.step].push(k);
    }

    let mut terms = vec![0.0_f64; dist.components.len()];
    for t in 1..=law.horizon {
        phi = &law.loop_maps[t - 1] * phi;
        for &k in &by_step[t] {
            let c = &dist.components[k];
            let mut g = -c.half_quad;
            for i in 0..w {
                g += c.schedule.lambda[i] * (rollout.states[t][i] - phi[i]);
            }
            terms[k] = c.weight.ln() + g;
        }
    }
    (-log_sum_exp(&terms)).exp()
}

/// Reference implementation of the likelihood ratio that works step by step
/// with noise pseudo-inverses: per component,
/// `log g_k = sum_s shift_s . N_s^+ (n_s - shift_s / 2)`. Slow; kept as an
/// independent cross-check of [`likelihood_ratio`].
pub fn likelihood_ratio_stepwise(
    law: &TrackingLaw,
    dist: &IsDistribution,
    rollout: &Rollout,
) -> Result<f64> {
    if dist.components.is_empty() {
        return Ok(1.0);
    }
    let pinvs: Vec<DMatrix<f64>> = law
        .noise_covs
        .iter()
        .map(|n| psd_factor(n).map(|f| f.pinv))
        .collect::<Result<_>>()?;
    let mut terms = Vec::with_capacity(dist.components.len());
    for c in &dist.components {
        let mut g = 0.0;
        for (s, sh) in c.schedule.shifts.iter().enumerate() {
            if sh.norm() == 0.0 {
                continue;
            }
            let centered = &rollout.noises[s] - sh * 0.5;
            g += sh.dot(&(&pinvs[s] * centered));
        }
        terms.push(c.weight.ln() + g);
    }
    Ok((-log_sum_exp(&terms)).exp())
}

// ---------------------------------------------------------------------------
// variance-reduced estimator

struct VrKernel {
    base: Kernel,
    // close points, grouped by step: (normal w floats, mdist)
    cp_normals: Vec<f64>,
    cp_mdist: Vec<f64>,
    cp_step_off: Vec<u32>, // csr offsets per step, len steps+2
    // mixture components grouped by target step
    comp_lambda: Vec<f64>,
    comp_half_quad: Vec<f64>,
    comp_log_weight: Vec<f64>,
    comp_step_off: Vec<u32>,
    comp_order: Vec<u32>, // component index per csr slot
    comp_cum_weight: Vec<f64>,
    // per component: flattened shifts, length target_step * dd
    comp_shifts: Vec<Vec<f64>>,
    comp_steps: Vec<usize>,
    n_comps: usize,
}

impl VrKernel {
    fn build(problem: &CpProblem, close: &CloseSet, dist: &IsDistribution) -> Result<VrKernel> {
        let base = Kernel::build(problem)?;
        let w = base.w;
        let dd = base.dd;
        let steps = base.steps;

        let mut cp_normals = Vec::with_capacity(close.points.len() * w);
        let mut cp_mdist = Vec::with_capacity(close.points.len());
        let mut cp_step_off = Vec::with_capacity(steps + 2);
        cp_step_off.push(0u32);
        for t in 0..=steps {
            for &i in &close.per_step[t] {
                let p = &close.points[i as usize];
                if p.mdist <= 1e-12 {
                    continue; // degenerate direction, not part of theta
                }
                for k in 0..w {
                    cp_normals.push(p.normal[k]);
                }
                cp_mdist.push(p.mdist);
            }
            cp_step_off.push(cp_mdist.len() as u32);
        }

        let n_comps = dist.components.len();
        let mut comp_lambda = vec![0.0; n_comps * w];
        let mut comp_half_quad = vec![0.0; n_comps];
        let mut comp_log_weight = vec![0.0; n_comps];
        let mut comp_shifts = Vec::with_capacity(n_comps);
        let mut comp_steps = Vec::with_capacity(n_comps);
        let mut comp_cum_weight = Vec::with_capacity(n_comps);
        let mut acc = 0.0;
        for (k, c) in dist.components.iter().enumerate() {
            for i in 0..w {
                comp_lambda[k * w + i] = c.schedule.lambda[i];
            }
            comp_half_quad[k] = c.half_quad;
            comp_log_weight[k] = c.weight.ln();
            acc += c.weight;
            comp_cum_weight.push(acc);
            let mut flat = vec![0.0; c.step * dd];
            for s in 0..c.step {
                let sh = &c.schedule.shifts[s];
                for i in 0..dd {
                    flat[s * dd + i] = sh[i];
                }
            }
            comp_shifts.push(flat);
            comp_steps.push(c.step);
        }

        let mut comp_step_off = vec![0u32; steps + 2];
        for c in &dist.components {
            comp_step_off[c.step + 1] += 1;
        }
        for t in 0..=steps {
            comp_step_off[t + 1] += comp_step_off[t];
        }
        let mut comp_order = vec![0u32; n_comps];
        let mut cursor = comp_step_off.clone();
        for (k, c) in dist.components.iter().enumerate() {
            comp_order[cursor[c.step] as usize] = k as u32;
            cursor[c.step] += 1;
        }

        Ok(VrKernel {
            base,
            cp_normals,
            cp_mdist,
            cp_step_off,
            comp_lambda,
            comp_half_quad,
            comp_log_weight,
            comp_step_off,
            comp_order,
            comp_cum_weight,
            comp_shifts,
            comp_steps,
            n_comps,
        })
    }

    /// Count of tangent plane crossings among close points at step t.
    #[inline]
    fn crossings_at(&self, t: usize, zeta: &[f64]) -> f64 {
        let w = self.base.w;
        let lo = self.cp_step_off[t] as usize;
        let hi = self.cp_step_off[t + 1] as usize;
        let mut h = 0.0;
        for idx in lo..hi {
            let row = &self.cp_normals[idx * w..(idx + 1) * w];
            let mut along = 0.0;
            for i in 0..w {
                along += row[i] * zeta[i];
            }
            if along >= self.cp_mdist[idx] {
                h += 1.0;
            }
        }
        h
    }

    /// One mixture-sampled rollout: returns the collision indicator, the
    /// crossing count, and the likelihood ratio. Consumes one uniform (the
    /// component pick) followed by the standard rollout draw layout.
    fn sample(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch) -> (f64, f64, f64) {
        let b = &self.base;
        let dd = b.dd;
        let w = b.w;

        let u: f64 = rng.random();
        let comp = match self.comp_cum_weight.iter().position(|&cw| u < cw) {
            Some(k) => k,
            None => self.n_comps - 1,
        };
        let shift_flat = &self.comp_shifts[comp];
        let shift_steps = self.comp_steps[comp];

        b.init_state(rng, sc);
        sc.phi.copy_from_slice(&sc.zeta);
        b.positions(0, &sc.zeta, &mut sc.pos_prev);
        let mut f = 0.0_f64;
        let mut h = self.crossings_at(0, &sc.zeta);

        for t in 0..b.steps {
            let shift = if t < shift_steps {
                Some(&shift_flat[t * dd..(t + 1) * dd])
            } else {
                None
            };
            b.step(t, rng, sc, shift);
            // free response advances with the same map
            gemv(&mut sc.pnew, &b.loop_flat[t * dd * dd..(t + 1) * dd * dd], &sc.phi, dd);
            std::mem::swap(&mut sc.phi, &mut sc.pnew);

            let tn = t + 1;
            if f == 0.0 {
                b.positions(tn, &sc.zeta, &mut sc.pos_cur);
                if b.segment_collides(&sc.pos_prev, &sc.pos_cur) {
                    f = 1.0;
                }
                std::mem::swap(&mut sc.pos_prev, &mut sc.pos_cur);
            } else {
                // still need positions for subsequent segments? no: once
                // collided the indicator is settled, but h and the
                // likelihood still consume the full trajectory
            }
            h += self.crossings_at(tn, &sc.zeta);

            let lo = self.comp_step_off[tn] as usize;
            let hi = self.comp_step_off[tn + 1] as usize;
            for slot in lo..hi {
                let k = self.comp_order[slot] as usize;
                let lrow = &self.comp_lambda[k * w..(k + 1) * w];
                let mut g = -self.comp_half_quad[k];
                for i in 0..w {
                    g += lrow[i] * (sc.zeta[i] - sc.phi[i]);
                }
                sc.g[k] = self.comp_log_weight[k] + g;
            }
        }

        let l = (-log_sum_exp(&sc.g[..self.n_comps])).exp();
        (f, h, l)
    }
}

/// Variance-reduced collision probability: importance sampling over the
/// close point mixture with the crossing-count control variate.
///
/// With weighted indicator `fL` and weighted crossing count `hL`, the
/// estimate is `mean(fL) - beta (mean(hL) - theta)` where beta is the least
/// squares coefficient of fL on hL and theta the exact crossing mean; the
/// variance estimate is the sample variance of the corrected terms divided
/// by m. No clamping is applied, so replication means stay unbiased.
pub fn estimate_cp_vr(problem: &CpProblem, m: u64, seed: u64) -> Result<VrEstimate> {
    if m == 0 {
        return Err(McmpError::InvalidArgument("particle count must be positive".into()));
    }
    let moments = propagate_moments(problem.law);
    let close = build_close_set(problem.workspace, problem.nominal, &moments)?;
    if close.points.is_empty() {
        // nothing within the mdist cutoff: the collision probability is
        // below anything m rollouts could resolve
        return Ok(VrEstimate {
            p_hat: 0.0,
            variance: 0.0,
            particles: 0,
            beta: 0.0,
            theta: 0.0,
            theta_hat_q: 0.0,
            p_hat_q: 0.0,
            components: 0,
        });
    }
    let dist = build_is_distribution(problem.law, &close, 0.5 / m as f64)?;
    if dist.components.is_empty() {
        let est = simple_mc(problem, m, seed)?;
        return Ok(VrEstimate {
            p_hat: est.p_hat,
            variance: est.variance,
            particles: est.particles,
            beta: 0.0,
            theta: close.theta,
            theta_hat_q: 0.0,
            p_hat_q: est.p_hat,
            components: 0,
        });
    }
    let kernel = VrKernel::build(problem, &close, &dist)?;

    let triples: Vec<(f64, f64, f64)> = (0..m as usize)
        .into_par_iter()
        .with_min_len(64)
        .map_init(
            || Scratch::new(kernel.base.dd, kernel.base.w, kernel.n_comps),
            |sc, i| {
                let mut rng = particle_rng(seed, i as u64);
                kernel.sample(&mut rng, sc)
            },
        )
        .collect();

    Ok(vr_statistics(&triples, close.theta, dist.components.len()))
}

/// The estimator statistics on collected (f, h, L) triples; reductions run
/// in particle order.
fn vr_statistics(triples: &[(f64, f64, f64)], theta: f64, components: usize) -> VrEstimate {
    let m = triples.len() as f64;
    let mut sum_fl = 0.0;
    let mut sum_hl = 0.0;
    for &(f, h, l) in triples {
        sum_fl += f * l;
        sum_hl += h * l;
    }
    let p_hat_q = sum_fl / m;
    let theta_hat_q = sum_hl / m;

    let mut cov = 0.0;
    let mut var_h = 0.0;
    for &(f, h, l) in triples {
        let df = f * l - p_hat_q;
        let dh = h * l - theta_hat_q;
        cov += df * dh;
        var_h += dh * dh;
    }
    let beta = if var_h > 1e-300 { cov / var_h } else { 0.0 };
    let p_hat = p_hat_q - beta * (theta_hat_q - theta);

    let mut var_acc = 0.0;
    for &(f, h, l) in triples {
        let r = f * l - p_hat - beta * (h * l - theta);
        var_acc += r * r;
    }
    let variance = var_acc / (m * m);

    VrEstimate {
        p_hat,
        variance,
        particles: triples.len() as u64,
        beta,
        theta,
        theta_hat_q,
        p_hat_q,
        components,
    }
}

// ---------------------------------------------------------------------------
// adaptive driver

#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOpts {
    pub batch: u64,
    pub max_particles: u64,
    /// Decision threshold in standard errors.
    pub z: f64,
}

impl Default for AdaptiveOpts {
    fn default() -> Self {
        AdaptiveOpts { batch: 500, max_particles: 2500, z: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpDecision {
    Above,
    Below,
    Undecided,
}

#[derive(Clone, Debug)]
pub struct AdaptiveEstimate {
    pub p_hat: f64,
    pub variance: f64,
    pub particles: u64,
    pub decision: CpDecision,
}

impl AdaptiveEstimate {
    pub fn std_err(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Sequential test of `cp <= alpha`, growing the particle count in batches
/// until the estimate is `z` standard errors away from the threshold or the
/// budget is exhausted. Particle streams continue across batches, so the
/// result for a given final count is identical to a one-shot run.
pub fn estimate_cp_adaptive(
    problem: &CpProblem,
    alpha: f64,
    seed: u64,
    opts: &AdaptiveOpts,
) -> Result<AdaptiveEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(McmpError::InvalidArgument("alpha must be in (0, 1)".into()));
    }
    if opts.batch == 0 || opts.max_particles == 0 {
        return Err(McmpError::InvalidArgument("adaptive batch sizes must be positive".into()));
    }
    let moments = propagate_moments(problem.law);
    let close = build_close_set(problem.workspace, problem.nominal, &moments)?;
    if close.points.is_empty() {
        return Ok(AdaptiveEstimate { p_hat: 0.0, variance: 0.0, particles: 0, decision: CpDecision::Below });
    }
    let dist = build_is_distribution(problem.law, &close, 0.5 / opts.max_particles as f64)?;

    let kernel = if dist.components.is_empty() {
        None
    } else {
        Some(VrKernel::build(problem, &close, &dist)?)
    };
    let plain = Kernel::build(problem)?;

    let mut triples: Vec<(f64, f64, f64)> = Vec::new();
    let mut done = 0u64;
    loop {
        let take = opts.batch.min(opts.max_particles - done);
        let batch: Vec<(f64, f64, f64)> = (done as usize..(done + take) as usize)
            .into_par_iter()
            .with_min_len(64)
            .map_init(
                || Scratch::new(plain.dd, plain.w, kernel.as_ref().map_or(0, |k| k.n_comps)),
                |sc, i| {
                    let mut rng = particle_rng(seed, i as u64);
                    match &kernel {
                        Some(k) => k.sample(&mut rng, sc),
                        None => {
                            let f = plain.rollout_collides(&mut rng, sc) as u64 as f64;
                            (f, 0.0, 1.0)
                        }
                    }
                },
            )
            .collect();
        triples.extend(batch);
        done += take;

        let est = if kernel.is_some() {
            let v = vr_statistics(&triples, close.theta, dist.components.len());
            AdaptiveEstimate { p_hat: v.p_hat, variance: v.variance, particles: done, decision: CpDecision::Undecided }
        } else {
            let p = triples.iter().map(|t| t.0).sum::<f64>() / done as f64;
            AdaptiveEstimate {
                p_hat: p,
                variance: p * (1.0 - p) / done as f64,
                particles: done,
                decision: CpDecision::Undecided,
            }
        };
        let se = est.std_err();
        let decided = (est.p_hat - alpha).abs() > opts.z * se;
        if decided || done >= opts.max_particles {
            let decision = if decided {
                if est.p_hat > alpha {
                    CpDecision::Above
                } else {
                    CpDecision::Below
                }
            } else {
                CpDecision::Undecided
            };
            return Ok(AdaptiveEstimate { decision, ..est });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsKind, DynamicsSpec};
    use crate::geometry::ConvexObstacle;
    use crate::linalg::normal_cdf;
    use crate::lqg::{discretize, simulate_rollout, simulate_rollout_shifted, synthesize};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn si_spec(w: usize, v_c: f64, w_c: f64, p0: f64) -> DynamicsSpec {
        DynamicsSpec {
            kind: DynamicsKind::SingleIntegrator,
            position_dim: w,
            v_c: DMatrix::identity(w, w) * v_c,
            w_c: DMatrix::identity(w, w) * w_c,
            p0: DMatrix::identity(w, w) * p0,
            q: DMatrix::identity(w, w),
            r: DMatrix::identity(w, w),
            q_final: DMatrix::identity(w, w),
            speed: 1.0,
            steer_control_weight: 1.0,
            steer_time_weight: 1.0,
        }
    }

    fn still_trajectory(d: usize, horizon: usize, dt: f64) -> NominalTrajectory {
        NominalTrajectory {
            states: vec![DVector::zeros(d); horizon + 1],
            inputs: vec![DVector::zeros(d); horizon],
            dt,
        }
    }

    /// 1D single integrator held at the origin for one step, with an
    /// obstacle starting exactly two deviation sigmas away. The collision
    /// event is exactly "the deviation crosses the face", so the path
    /// collision probability is the normal tail at two sigma.
    fn one_step_problem() -> (TrackingLaw, NominalTrajectory, Workspace) {
        let v_c = 0.04;
        let spec = si_spec(1, v_c, 0.01, 0.0);
        let model = discretize(&spec, 1.0).unwrap();
        let law = synthesize(&spec, &model, 1).unwrap();
        let sigma = v_c.sqrt(); // process noise variance after one step
        let c = 2.0 * sigma;
        let ws = Workspace::new(
            1,
            DVector::from_element(1, -50.0),
            DVector::from_element(1, 50.0),
            vec![ConvexObstacle::rect(&[c], &[c + 20.0]).unwrap()],
        )
        .unwrap();
        (law, still_trajectory(1, 1, 1.0), ws)
    }

    /// 2D single integrator drifting along a wall; collisions and crossings
    /// are related but not identical, so the regression does real work.
    fn wall_problem(horizon: usize) -> (TrackingLaw, NominalTrajectory, Workspace) {
        let spec = si_spec(2, 0.02, 0.01, 1e-4);
        let dt = 0.2;
        let model = discretize(&spec, dt).unwrap();
        let law = synthesize(&spec, &model, horizon).unwrap();
        let mut states = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            states.push(DVector::from_vec(vec![0.25 * t as f64 * dt, 0.0]));
        }
        let inputs = vec![DVector::from_vec(vec![0.25, 0.0]); horizon];
        let nominal = NominalTrajectory { states, inputs, dt };
        let ws = Workspace::new(
            2,
            DVector::from_vec(vec![-5.0, -5.0]),
            DVector::from_vec(vec![10.0, 5.0]),
            vec![ConvexObstacle::rect(&[0.3, 0.22], &[2.0, 3.0]).unwrap()],
        )
        .unwrap();
        (law, nominal, ws)
    }

    #[test]
    fn one_step_plain_mc_matches_normal_tail() {
        let (law, nominal, ws) = one_step_problem();
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let est = simple_mc(&problem, 400_000, 11).unwrap();
        let truth = normal_cdf(-2.0);
        assert!(
            (est.p_hat - truth).abs() < 5.0 * est.std_err(),
            "p_hat {} vs {}",
            est.p_hat,
            truth
        );
    }

    #[test]
    fn one_step_vr_estimate_is_exact() {
        // crossing indicator and collision indicator coincide here, so the
        // control variate removes all the randomness
        let (law, nominal, ws) = one_step_problem();
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let est = estimate_cp_vr(&problem, 4_000, 3).unwrap();
        let truth = normal_cdf(-2.0);
        // tolerance reflects the covariance regularization, not MC noise
        // (plain MC at this particle count has standard error ~2e-3)
        assert_relative_eq!(est.p_hat, truth, max_relative = 1e-6);
        assert!(est.variance < 1e-12, "variance {}", est.variance);
        assert_relative_eq!(est.beta, 1.0, max_relative = 1e-6);
        assert_relative_eq!(est.theta, truth, max_relative = 1e-6);
    }

    #[test]
    fn vr_and_plain_mc_agree_on_the_wall() {
        let (law, nominal, ws) = wall_problem(20);
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let plain = simple_mc(&problem, 400_000, 21).unwrap();
        let vr = estimate_cp_vr(&problem, 20_000, 22).unwrap();
        assert!(vr.components > 0);
        let se = (plain.variance + vr.variance).sqrt();
        assert!(
            (plain.p_hat - vr.p_hat).abs() < 5.0 * se,
            "plain {} vr {} se {}",
            plain.p_hat,
            vr.p_hat,
            se
        );
        // same-particle-count efficiency
        let plain_var_small = vr.p_hat * (1.0 - vr.p_hat) / 20_000.0;
        assert!(
            vr.variance < plain_var_small,
            "vr variance {} not below plain {}",
            vr.variance,
            plain_var_small
        );
    }

    #[test]
    fn streaming_kernel_matches_recorded_rollouts() {
        let (law, nominal, ws) = wall_problem(16);
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let moments = propagate_moments(&law);
        let close = build_close_set(&ws, &nominal, &moments).unwrap();
        assert!(!close.points.is_empty());
        let dist = build_is_distribution(&law, &close, 1e-4).unwrap();
        assert!(dist.components.len() > 1);
        let kernel = VrKernel::build(&problem, &close, &dist).unwrap();
        let mut sc = Scratch::new(kernel.base.dd, kernel.base.w, kernel.n_comps);

        for i in 0..300u64 {
            let mut rng = particle_rng(99, i);
            let (f, h, l) = kernel.sample(&mut rng, &mut sc);

            // replay the identical stream through the recorded-rollout path
            let mut rng2 = particle_rng(99, i);
            let u: f64 = rng2.random();
            let k = select_component(&dist, u);
            let rollout =
                simulate_rollout_shifted(&law, &dist.components[k].schedule.shifts, &mut rng2);
            let f2 = rollout_collides(&problem, &rollout) as u64 as f64;
            let h2 = control_variate_value(&rollout, &close);
            let l2 = likelihood_ratio(&law, &dist, &rollout);
            let l3 = likelihood_ratio_stepwise(&law, &dist, &rollout).unwrap();

            assert_eq!(f, f2, "collision indicator diverged on particle {i}");
            assert_eq!(h, h2, "crossing count diverged on particle {i}");
            assert_relative_eq!(l, l2, max_relative = 1e-9);
            assert_relative_eq!(l2, l3, max_relative = 1e-7);
        }
    }

    #[test]
    fn crossing_count_mean_matches_theta() {
        let (law, nominal, ws) = wall_problem(16);
        let moments = propagate_moments(&law);
        let close = build_close_set(&ws, &nominal, &moments).unwrap();
        let m = 30_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..m {
            let mut rng = particle_rng(123, i);
            let r = simulate_rollout(&law, &mut rng);
            let h = control_variate_value(&r, &close);
            sum += h;
            sumsq += h * h;
        }
        let mean = sum / m as f64;
        let var = (sumsq / m as f64 - mean * mean).max(0.0);
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - close.theta).abs() < 5.0 * se,
            "mean {} theta {} se {}",
            mean,
            close.theta,
            se
        );
    }

    #[test]
    fn mixture_likelihood_has_unit_mean() {
        let (law, nominal, ws) = wall_problem(16);
        let moments = propagate_moments(&law);
        let close = build_close_set(&ws, &nominal, &moments).unwrap();
        let dist = build_is_distribution(&law, &close, 0.5 / 30_000.0).unwrap();
        let m = 30_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..m {
            let mut rng = particle_rng(321, i);
            let u: f64 = rng.random();
            let k = select_component(&dist, u);
            let r = simulate_rollout_shifted(&law, &dist.components[k].schedule.shifts, &mut rng);
            let l = likelihood_ratio(&law, &dist, &r);
            sum += l;
            sumsq += l * l;
        }
        let mean = sum / m as f64;
        let var = (sumsq / m as f64 - mean * mean).max(0.0);
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0).abs() < 5.0 * se, "mean {} se {}", mean, se);
    }

    #[test]
    fn shift_schedule_reaches_target_and_cost_identity() {
        let (law, _nominal, _ws) = wall_problem(12);
        let target = DVector::from_vec(vec![0.3, -0.2]);
        let schedule = solve_shift(&law, 7, &target).unwrap();
        assert_eq!(schedule.shifts.len(), 8);
        assert_eq!(schedule.shifts[7].norm(), 0.0);

        let mm = crate::lqg::propagate_moments_shifted(&law, &schedule.shifts);
        for i in 0..2 {
            assert_relative_eq!(mm.mean[7][i], target[i], epsilon = 1e-8);
        }
        // minimal-cost identity: cost of the optimal schedule is half the
        // Gramian quadratic form
        let cost = shift_cost(&law, &schedule.shifts).unwrap();
        assert_relative_eq!(cost, 0.5 * schedule.lambda.dot(&target), max_relative = 1e-8);

        assert!(solve_shift(&law, 0, &target).is_err());
        assert!(solve_shift(&law, 0, &DVector::zeros(2)).is_ok());
    }

    #[test]
    fn estimates_are_reproducible_across_thread_counts() {
        let (law, nominal, ws) = wall_problem(12);
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };

        let run_vr = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| estimate_cp_vr(&problem, 5_000, 77).unwrap())
        };
        let a = run_vr(1);
        let b = run_vr(3);
        assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());

        let run_plain = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| simple_mc(&problem, 50_000, 78).unwrap())
        };
        let c = run_plain(1);
        let d = run_plain(4);
        assert_eq!(c.p_hat.to_bits(), d.p_hat.to_bits());
    }

    #[test]
    fn adaptive_stops_early_when_far_from_threshold() {
        let (law, nominal, ws) = wall_problem(12);
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let opts = AdaptiveOpts::default();
        let est = estimate_cp_adaptive(&problem, 0.9, 42, &opts).unwrap();
        assert_eq!(est.decision, CpDecision::Below);
        assert_eq!(est.particles, opts.batch);
    }

    #[test]
    fn adaptive_with_unreachable_threshold_matches_one_shot() {
        let (law, nominal, ws) = wall_problem(12);
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let opts = AdaptiveOpts { batch: 500, max_particles: 2500, z: 1e18 };
        let adaptive = estimate_cp_adaptive(&problem, 0.5, 7, &opts).unwrap();
        assert_eq!(adaptive.decision, CpDecision::Undecided);
        assert_eq!(adaptive.particles, 2500);
        let one_shot = estimate_cp_vr(&problem, 2500, 7).unwrap();
        assert_eq!(adaptive.p_hat.to_bits(), one_shot.p_hat.to_bits());
        assert_eq!(adaptive.variance.to_bits(), one_shot.variance.to_bits());
    }

    #[test]
    fn far_obstacles_give_zero_estimate() {
        let spec = si_spec(2, 0.0001, 0.01, 1e-6);
        let model = discretize(&spec, 0.2).unwrap();
        let law = synthesize(&spec, &model, 10).unwrap();
        let nominal = still_trajectory(2, 10, 0.2);
        let ws = Workspace::new(
            2,
            DVector::from_vec(vec![-5.0, -5.0]),
            DVector::from_vec(vec![10.0, 5.0]),
            vec![ConvexObstacle::rect(&[8.0, 4.0], &[9.0, 4.5]).unwrap()],
        )
        .unwrap();
        let problem = CpProblem { law: &law, nominal: &nominal, workspace: &ws };
        let est = estimate_cp_vr(&problem, 1000, 5).unwrap();
        assert_eq!(est.p_hat, 0.0);
        assert_eq!(est.particles, 0);
        let ad = estimate_cp_adaptive(&problem, 0.01, 5, &AdaptiveOpts::default()).unwrap();
        assert_eq!(ad.decision, CpDecision::Below);
    }
}
