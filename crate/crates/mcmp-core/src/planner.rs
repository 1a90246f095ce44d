//! Sampling-based kinodynamic planner.
//!
//! A fixed node set (start, goal samples, uniform samples) is wired once by
//! [`prepare`] into a cached roadmap with steering edges; [`plan`] then runs
//! Dijkstra over the cache with lazy, per-call collision checking, so the
//! same roadmap can be replanned against many differently inflated
//! workspaces without recomputing any steering. Steering happens only in
//! `prepare`, which makes replans cheap and keeps the meta planner's inner
//! loop deterministic.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DynamicsKind, DynamicsSpec};
use crate::error::{McmpError, Result};
use crate::geometry::Workspace;
use crate::lqg::DiscreteLqgModel;
use crate::rng::derive_seed;
use crate::trajectory::NominalTrajectory;

#[derive(Clone, Debug)]
pub struct PlannerConfig {
    /// Uniform samples drawn in the workspace bounds (start and goal nodes
    /// come on top of these).
    pub samples: usize,
    pub seed: u64,
    /// Multiplier on the connection radius.
    pub gamma_scale: f64,
    /// Nodes placed inside the goal region (region center included).
    pub goal_samples: usize,
    /// Spacing of sampled points along curved steering edges when they are
    /// collision checked.
    pub polyline_step: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            samples: 500,
            seed: 1,
            gamma_scale: 2.0,
            goal_samples: 16,
            polyline_step: 0.25,
        }
    }
}

/// Where the plan must end, in position space.
#[derive(Clone, Debug)]
pub enum GoalRegion {
    Ball { center: DVector<f64>, radius: f64 },
    Box { lo: DVector<f64>, hi: DVector<f64> },
}

impl GoalRegion {
    pub fn contains(&self, pos: &DVector<f64>) -> bool {
        match self {
            GoalRegion::Ball { center, radius } => (pos - center).norm() <= *radius,
            GoalRegion::Box { lo, hi } => {
                (0..lo.len()).all(|i| pos[i] >= lo[i] && pos[i] <= hi[i])
            }
        }
    }

    pub fn center(&self) -> DVector<f64> {
        match self {
            GoalRegion::Ball { center, .. } => center.clone(),
            GoalRegion::Box { lo, hi } => (lo + hi) * 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GoalRegion::Ball { center, .. } => center.len(),
            GoalRegion::Box { lo, .. } => lo.len(),
        }
    }

    /// Deterministic positions inside the region: the center plus
    /// `count - 1` seeded uniform draws.
    pub fn sample_positions(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut out = vec![self.center()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.dim();
        while out.len() < count {
            let p = match self {
                GoalRegion::Ball { center, radius } => {
                    // rejection sample in the enclosing cube
                    let q = DVector::from_fn(w, |_, _| rng.random_range(-1.0..1.0) * *radius);
                    if q.norm() > *radius {
                        continue;
                    }
                    center + q
                }
                GoalRegion::Box { lo, hi } => {
                    DVector::from_fn(w, |i, _| rng.random_range(lo[i]..hi[i]))
                }
            };
            out.push(p);
        }
        out
    }
}

/// One steering connection: its cost, how long it takes, and the polyline
/// its collision checks walk.
#[derive(Clone, Debug)]
pub struct Steer {
    pub cost: f64,
    pub duration: f64,
    /// Position-space points, endpoints included.
    pub poly: Vec<DVector<f64>>,
}

/// Steers between two full states.
///
/// Single integrator: straight line at cruise speed; cost is the travel
/// time. Double integrator: the minimum of `time_weight * tau + control
/// energy` over the connection time tau, solved in closed form per axis for
/// fixed tau and by bisection on the derivative in tau; cost is that
/// minimum. Returns None when no connection exists (it always does for
/// these dynamics).
pub fn steer(
    spec: &DynamicsSpec,
    from: &DVector<f64>,
    to: &DVector<f64>,
    polyline_step: f64,
) -> Result<Option<Steer>> {
    let w = spec.position_dim;
    match spec.kind {
        DynamicsKind::SingleIntegrator => {
            let dist = (to - from).norm();
            let duration = dist / spec.speed;
            Ok(Some(Steer { cost: duration, duration, poly: vec![from.clone(), to.clone()] }))
        }
        DynamicsKind::DoubleIntegrator => {
            let r = spec.steer_control_weight;
            let tw = spec.steer_time_weight;
            let p0 = from.rows(0, w).into_owned();
            let v0 = from.rows(w, w).into_owned();
            let p1 = to.rows(0, w).into_owned();
            let v1 = to.rows(w, w).into_owned();

            // derivative of the optimal cost in tau
            let cdot = |tau: f64| -> f64 {
                let mut vdp = 0.0;
                let mut dv2 = 0.0;
                for i in 0..w {
                    let dp = p1[i] - p0[i] - tau * v0[i];
                    let dv = v1[i] - v0[i];
                    let d_p = r * (12.0 * dp / tau.powi(3) - 6.0 * dv / tau.powi(2));
                    let d_v = r * (-6.0 * dp / tau.powi(2) + 4.0 * dv / tau);
                    vdp += v1[i] * d_p;
                    dv2 += d_v * d_v;
                }
                tw - 2.0 * vdp - dv2 / r
            };

            // bracket the root: cdot -> -inf as tau -> 0+, -> tw > 0 at
            // infinity
            let scale = ((&p1 - &p0).norm() + v0.norm() + v1.norm()) / spec.speed.max(1e-9);
            let mut hi = scale.max(1e-3);
            let mut grow = 0;
            while cdot(hi) < 0.0 {
                hi *= 2.0;
                grow += 1;
                if grow > 200 {
                    return Err(McmpError::Numeric("steering time bracket diverged".into()));
                }
            }
            let mut lo = hi;
            let mut shrink = 0;
            while cdot(lo) > 0.0 {
                lo *= 0.5;
                shrink += 1;
                if shrink > 200 {
                    // degenerate connection (identical states): free
                    return Ok(Some(Steer {
                        cost: 0.0,
                        duration: 0.0,
                        poly: vec![p0.clone(), p1.clone()],
                    }));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdot(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = 0.5 * (lo + hi);

            // optimal multipliers and cost at tau
            let mut d_p = DVector::zeros(w);
            let mut d_v = DVector::zeros(w);
            let mut energy = 0.0;
            for i in 0..w {
                let dp = p1[i] - p0[i] - tau * v0[i];
                let dv = v1[i] - v0[i];
                d_p[i] = r * (12.0 * dp / tau.powi(3) - 6.0 * dv / tau.powi(2));
                d_v[i] = r * (-6.0 * dp / tau.powi(2) + 4.0 * dv / tau);
                energy += dp * d_p[i] + dv * d_v[i];
            }
            let cost = tw * tau + energy;

            // sampled position polyline of
            // p(t) = p0 + v0 t + (d_p (tau t^2/2 - t^3/6) + d_v t^2/2) / r
            let arc = (&p1 - &p0).norm() + 0.5 * (v0.norm() + v1.norm()) * tau;
            let k = ((arc / polyline_step).ceil() as usize).max(4);
            let mut poly = Vec::with_capacity(k + 1);
            for j in 0..=k {
                let t = tau * j as f64 / k as f64;
                let mut p = &p0 + &v0 * t;
                p += (&d_p * (tau * t * t / 2.0 - t.powi(3) / 6.0) + &d_v * (t * t / 2.0)) / r;
                poly.push(p);
            }
            Ok(Some(Steer { cost, duration: tau, poly }))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub to: usize,
    pub cost: f64,
    pub duration: f64,
    pub poly: Vec<DVector<f64>>,
}

/// Roadmap built once per query and replanned against many inflations.
#[derive(Clone, Debug)]
pub struct PlannerCache {
    /// Full states; node 0 is the start.
    pub nodes: Vec<DVector<f64>>,
    pub goal_ids: Vec<usize>,
    pub edges: Vec<Vec<Edge>>,
    pub radius: f64,
    /// Steering computations performed; only `prepare` increments this.
    pub steer_calls: usize,
}

/// Nominal plan through the roadmap.
#[derive(Clone, Debug)]
pub struct PlannedPath {
    /// Node states visited, start to goal.
    pub states: Vec<DVector<f64>>,
    /// Per-edge durations, length states.len() - 1.
    pub durations: Vec<f64>,
    pub cost: f64,
}

fn unit_ball_volume(w: usize) -> f64 {
    match w {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        4 => std::f64::consts::PI * std::f64::consts::PI / 2.0,
        _ => {
            // enough workspaces stop at 4; fall back to the recurrence
            let mut v = std::f64::consts::PI * std::f64::consts::PI / 2.0;
            for k in 5..=w {
                v *= std::f64::consts::TAU / k as f64;
            }
            v
        }
    }
}

/// Builds the roadmap: start node, goal nodes, uniform samples, and all
/// steering edges within the connection radius. Samples are rejected
/// against the workspace at zero inflation (a node inside an uninflated
/// obstacle is useless at every inflation); edges are not collision checked
/// here at all.
pub fn prepare(
    spec: &DynamicsSpec,
    workspace: &Workspace,
    start: &DVector<f64>,
    goal: &GoalRegion,
    config: &PlannerConfig,
) -> Result<PlannerCache> {
    let w = spec.position_dim;
    let d = spec.state_dim();
    if start.len() != d {
        return Err(McmpError::InvalidArgument("start state has wrong dimension".into()));
    }
    if goal.dim() != w {
        return Err(McmpError::InvalidArgument("goal region has wrong dimension".into()));
    }
    if workspace.bounds_lo.len() != d {
        return Err(McmpError::InvalidArgument("workspace bounds must be state dimensional".into()));
    }
    let ws0 = workspace.inflate(0.0);

    let mut nodes = vec![start.clone()];
    let mut goal_ids = Vec::new();

    for gpos in goal.sample_positions(config.goal_samples, derive_seed(config.seed, 2)) {
        let mut state = DVector::zeros(d);
        for i in 0..w {
            state[i] = gpos[i];
        }
        // double integrator goals arrive at rest (velocity block stays zero)
        if ws0.point_in_collision(&state.as_slice()[0..w]) {
            continue;
        }
        goal_ids.push(nodes.len());
        nodes.push(state);
    }
    if goal_ids.is_empty() {
        return Err(McmpError::Infeasible("every goal sample is inside an obstacle".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < config.samples {
        attempts += 1;
        if attempts > config.samples.saturating_mul(1000).max(100_000) {
            return Err(McmpError::Infeasible(
                "sampling kept hitting obstacles; free space looks empty".into(),
            ));
        }
        let cand = DVector::from_fn(d, |i, _| {
            rng.random_range(workspace.bounds_lo[i]..workspace.bounds_hi[i])
        });
        if ws0.point_in_collision(&cand.as_slice()[0..w]) {
            continue;
        }
        nodes.push(cand);
        accepted += 1;
    }

    // connection radius from the sample density in position space
    let n = nodes.len();
    let mut vol_pos = 1.0;
    for i in 0..w {
        vol_pos *= workspace.bounds_hi[i] - workspace.bounds_lo[i];
    }
    let gamma = 2.0 * ((vol_pos / unit_ball_volume(w)) / w as f64).powf(1.0 / w as f64)
        * config.gamma_scale;
    let radius = gamma * ((n as f64).ln() / n as f64).powf(1.0 / w as f64);

    let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); n];
    let mut steer_calls = 0usize;
    let symmetric = spec.kind == DynamicsKind::SingleIntegrator;
    for i in 0..n {
        let lo_j = if symmetric { i + 1 } else { 0 };
        for j in lo_j..n {
            if i == j {
                continue;
            }
            let mut dist2 = 0.0;
            for k in 0..w {
                let dk = nodes[i][k] - nodes[j][k];
                dist2 += dk * dk;
            }
            if dist2 > radius * radius {
                continue;
            }
            steer_calls += 1;
            if let Some(s) = steer(spec, &nodes[i], &nodes[j], config.polyline_step)? {
                if symmetric {
                    let mut rev = s.poly.clone();
                    rev.reverse();
                    edges[j].push(Edge {
                        to: i,
                        cost: s.cost,
                        duration: s.duration,
                        poly: rev,
                    });
                }
                edges[i].push(Edge { to: j, cost: s.cost, duration: s.duration, poly: s.poly });
            }
        }
    }

    Ok(PlannerCache { nodes, goal_ids, edges, radius, steer_calls })
}

#[derive(PartialEq)]
struct HeapKey(f64, usize);

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Dijkstra over the cached roadmap against the workspace as currently
/// inflated. Edges are collision checked lazily, at most once per call, when
/// their tail node is expanded; nothing is steered here. The first goal node
/// popped ends the search.
pub fn plan(cache: &PlannerCache, workspace: &Workspace) -> Result<PlannedPath> {
    let n = cache.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n]; // (node, edge idx)
    let mut done = vec![false; n];
    let mut memo: Vec<Vec<Option<bool>>> =
        cache.edges.iter().map(|es| vec![None; es.len()]).collect();

    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    heap.push(Reverse(HeapKey(0.0, 0)));

    let goal_hit = loop {
        let Some(Reverse(HeapKey(du, u))) = heap.pop() else {
            break None;
        };
        if done[u] {
            continue;
        }
        done[u] = true;
        if cache.goal_ids.contains(&u) {
            break Some(u);
        }
        for (ei, e) in cache.edges[u].iter().enumerate() {
            if done[e.to] {
                continue;
            }
            let nd = du + e.cost;
            if nd >= dist[e.to] {
                continue;
            }
            let free = *memo[u][ei].get_or_insert_with(|| {
                !polyline_in_collision(workspace, &e.poly)
            });
            if !free {
                continue;
            }
            dist[e.to] = nd;
            prev[e.to] = Some((u, ei));
            heap.push(Reverse(HeapKey(nd, e.to)));
        }
    };

    let Some(goal) = goal_hit else {
        return Err(McmpError::Infeasible("no collision-free route to the goal".into()));
    };

    let mut rev_nodes = vec![goal];
    let mut rev_edges = Vec::new();
    let mut cur = goal;
    while let Some((p, ei)) = prev[cur] {
        rev_edges.push((p, ei));
        rev_nodes.push(p);
        cur = p;
    }
    rev_nodes.reverse();
    rev_edges.reverse();

    let states = rev_nodes.iter().map(|&i| cache.nodes[i].clone()).collect();
    let durations = rev_edges.iter().map(|&(p, ei)| cache.edges[p][ei].duration).collect();
    Ok(PlannedPath { states, durations, cost: dist[goal] })
}

fn polyline_in_collision(workspace: &Workspace, poly: &[DVector<f64>]) -> bool {
    for k in 0..poly.len() - 1 {
        if workspace.segment_in_collision(poly[k].as_slice(), poly[k + 1].as_slice(), 0.0) {
            return true;
        }
    }
    false
}

/// One splice sweep: try to replace subpaths by chords, scanning splice
/// starts forward and splice ends backward (longest jump first), until a
/// full pass changes nothing. Removal only, so the length never increases.
fn splice_pass(workspace: &Workspace, pts: &mut Vec<DVector<f64>>) {
    loop {
        let mut changed = false;
        let mut i = 0;
        while i + 2 < pts.len() {
            let mut j = pts.len() - 1;
            while j > i + 1 {
                if !workspace.segment_in_collision(pts[i].as_slice(), pts[j].as_slice(), 0.0) {
                    // j >= i + 2 here, so at least one waypoint goes
                    pts.drain(i + 1..j);
                    changed = true;
                    break;
                }
                j -= 1;
            }
            i += 1;
        }
        if !changed {
            break;
        }
    }
}

fn polyline_length(pts: &[DVector<f64>]) -> f64 {
    (0..pts.len() - 1).map(|k| (&pts[k + 1] - &pts[k]).norm()).sum()
}

/// One snap sweep: move each interior bend onto the obstacle corner that
/// shortens its two segments the most while staying collision free. Taut
/// polylines among polytopes bend only at corners, so this is what lets the
/// path close the final gap a pure splice cannot (a bend locked behind a
/// corner has no free chord across it).
fn snap_pass(
    workspace: &Workspace,
    corners: &[DVector<f64>],
    pts: &mut [DVector<f64>],
) -> bool {
    let mut improved = false;
    for i in 1..pts.len() - 1 {
        let current = (&pts[i] - &pts[i - 1]).norm() + (&pts[i + 1] - &pts[i]).norm();
        let mut best: Option<(f64, &DVector<f64>)> = None;
        for k in corners {
            let cand = (k - &pts[i - 1]).norm() + (&pts[i + 1] - k).norm();
            if cand >= best.map_or(current - 1e-12, |(c, _)| c) {
                continue;
            }
            if workspace.segment_in_collision(pts[i - 1].as_slice(), k.as_slice(), 0.0)
                || workspace.segment_in_collision(k.as_slice(), pts[i + 1].as_slice(), 0.0)
            {
                continue;
            }
            best = Some((cand, k));
        }
        if let Some((_, k)) = best {
            pts[i] = k.clone();
            improved = true;
        }
    }
    improved
}

/// Shortcut smoothing for straight-line dynamics: splice sweeps alternate
/// with corner snapping and midpoint subdivision, so bend points slide onto
/// obstacle corners instead of sticking at sampled vertices; iteration
/// stops when a round stops paying. The result is a taut polyline (within
/// tolerance) in the path's homotopy class, and the length never increases.
/// The sweep is deterministic. Curved dynamics pass through unchanged,
/// since their edges cannot be replaced by chords.
pub fn adaptive_shortcut(
    spec: &DynamicsSpec,
    workspace: &Workspace,
    path: &PlannedPath,
) -> PlannedPath {
    if spec.kind != DynamicsKind::SingleIntegrator || path.states.len() < 3 {
        return path.clone();
    }
    let corners = workspace.bend_candidates();
    let mut pts: Vec<DVector<f64>> = path.states.clone();
    splice_pass(workspace, &mut pts);
    let mut len = polyline_length(&pts);
    for _ in 0..40 {
        if pts.len() < 3 {
            break;
        }
        let mut split = Vec::with_capacity(2 * pts.len() - 1);
        for k in 0..pts.len() - 1 {
            split.push(pts[k].clone());
            split.push((&pts[k] + &pts[k + 1]) * 0.5);
        }
        split.push(pts[pts.len() - 1].clone());
        for _ in 0..20 {
            if !snap_pass(workspace, &corners, &mut split) {
                break;
            }
        }
        splice_pass(workspace, &mut split);
        let new_len = polyline_length(&split);
        if new_len < len {
            pts = split;
        }
        if new_len >= len - 1e-9 * len.max(1.0) {
            break;
        }
        len = new_len;
    }
    let mut durations = Vec::with_capacity(pts.len() - 1);
    let mut cost = 0.0;
    for k in 0..pts.len() - 1 {
        let t = (&pts[k + 1] - &pts[k]).norm() / spec.speed;
        durations.push(t);
        cost += t;
    }
    PlannedPath { states: pts, durations, cost }
}

/// Converts a plan into a discrete nominal trajectory the tracking law can
/// follow exactly: states and inputs satisfying `x_{k+1} = A x_k + B u_k`
/// for the discretized model.
///
/// Single integrator: constant-speed arc length walk along the polyline.
/// Double integrator: each edge becomes a discrete minimum-energy
/// connection over `round(duration/dt)` steps (at least two), so node
/// states are met exactly.
pub fn time_parameterize(
    spec: &DynamicsSpec,
    model: &DiscreteLqgModel,
    path: &PlannedPath,
) -> Result<NominalTrajectory> {
    let dt = model.dt;
    match spec.kind {
        DynamicsKind::SingleIntegrator => {
            let step = spec.speed * dt;
            let mut states = vec![path.states[0].clone()];
            for k in 0..path.states.len() - 1 {
                let a = &path.states[k];
                let b = &path.states[k + 1];
                let seg = (b - a).norm();
                if seg < 1e-12 {
                    continue;
                }
                // continue the walk from wherever the previous segment ended
                let cur = states.last().unwrap().clone();
                let already = (&cur - a).norm();
                let dir = (b - a) / seg;
                let mut s = already + step;
                while s < seg - 1e-12 {
                    states.push(a + &dir * s);
                    s += step;
                }
                states.push(b.clone());
            }
            if states.len() < 2 {
                states.push(states[0].clone());
            }
            let mut inputs = Vec::with_capacity(states.len() - 1);
            for k in 0..states.len() - 1 {
                inputs.push((&states[k + 1] - &states[k]) / dt);
            }
            Ok(NominalTrajectory { states, inputs, dt })
        }
        DynamicsKind::DoubleIntegrator => {
            let d = spec.state_dim();
            let mut states = vec![path.states[0].clone()];
            let mut inputs: Vec<DVector<f64>> = Vec::new();
            for k in 0..path.states.len() - 1 {
                let steps = ((path.durations[k] / dt).round() as usize).max(2);
                let (xs, us) =
                    discrete_min_energy(model, &path.states[k], &path.states[k + 1], steps)?;
                debug_assert_eq!(xs.len(), steps + 1);
                for x in xs.into_iter().skip(1) {
                    states.push(x);
                }
                inputs.extend(us);
                let _ = d;
            }
            if inputs.is_empty() {
                // degenerate single-node path: hold position
                let (xs, us) = discrete_min_energy(model, &path.states[0], &path.states[0], 2)?;
                for x in xs.into_iter().skip(1) {
                    states.push(x);
                }
                inputs.extend(us);
            }
            Ok(NominalTrajectory { states, inputs, dt })
        }
    }
}

/// Minimum-energy discrete connection from `x0` to `x1` in exactly `steps`
/// steps of the given model: `u_k = B^T (A^T)^{steps-1-k} lambda` with
/// lambda from the controllability Gramian.
fn discrete_min_energy(
    model: &DiscreteLqgModel,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    steps: usize,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let d = model.a.nrows();
    let mut apow = vec![DMatrix::identity(d, d)];
    for _ in 0..steps {
        apow.push(&model.a * apow.last().unwrap());
    }
    let mut gram = DMatrix::zeros(d, d);
    for j in 0..steps {
        let m = &apow[j] * &model.b;
        gram += &m * m.transpose();
    }
    let rhs = x1 - &apow[steps] * x0;
    let (lambda, residual) = crate::linalg::solve_spd(&gram, &rhs)?;
    if residual > 1e-6 {
        return Err(McmpError::Numeric(format!(
            "discrete connection unreachable in {steps} steps (residual {residual:.2e})"
        )));
    }
    let mut xs = vec![x0.clone()];
    let mut us = Vec::with_capacity(steps);
    for k in 0..steps {
        let u = model.b.transpose() * apow[steps - 1 - k].transpose() * &lambda;
        let x = &model.a * xs.last().unwrap() + &model.b * &u;
        xs.push(x);
        us.push(u);
    }
    Ok((xs, us))
}
