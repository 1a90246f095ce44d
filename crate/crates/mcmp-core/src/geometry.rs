//! Convex workspace geometry.
//!
//! Obstacles are intersections of halfspaces `a_j . x <= b_j` with unit
//! normals, which makes three operations cheap and exact: inflation (offset
//! every face by the same margin), point membership, and segment
//! intersection by parametric clipping. On top of those this module builds
//! the distance-to-collision machinery the estimators need: the closest
//! obstacle point in the Mahalanobis metric of the tracking distribution,
//! and the per-waypoint set of "close points" that drives both the control
//! variate and the importance distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{McmpError, Result};
use crate::linalg::normal_cdf;
use crate::lqg::Moments;
use crate::trajectory::NominalTrajectory;

/// Close points further than this many standard deviations contribute less
/// than ~1e-15 each and are dropped.
pub const MDIST_CUTOFF: f64 = 8.0;

/// Convex obstacle: `{ x : normals * x <= offsets + inflation }`.
/// `inflatable` is false for blocker obstacles added during backtracking,
/// which must keep their size when the workspace is inflated.
#[derive(Clone, Debug)]
pub struct ConvexObstacle {
    /// One row per face, rows have unit norm.
    pub normals: DMatrix<f64>,
    /// Face offsets at zero inflation.
    pub offsets: DVector<f64>,
    pub inflatable: bool,
}

impl ConvexObstacle {
    /// Builds an obstacle from raw halfspaces; rows are normalized and the
    /// region is checked to be nonempty and bounded.
    pub fn from_halfspaces(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        let m = normals.nrows();
        let w = normals.ncols();
        if m == 0 || w == 0 {
            return Err(McmpError::Scenario("obstacle needs at least one halfspace".into()));
        }
        if offsets.len() != m {
            return Err(McmpError::Scenario("halfspace offsets do not match normals".into()));
        }
        let mut nn = normals;
        let mut bb = offsets;
        for j in 0..m {
            let norm = nn.row(j).norm();
            if norm < 1e-12 {
                return Err(McmpError::Scenario("halfspace normal is numerically zero".into()));
            }
            for k in 0..w {
                nn[(j, k)] /= norm;
            }
            bb[j] /= norm;
        }
        let obs = ConvexObstacle { normals: nn, offsets: bb, inflatable: true };
        obs.check_nonempty()?;
        obs.check_bounded()?;
        Ok(obs)
    }

    /// Axis-aligned box obstacle.
    pub fn rect(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let w = lo.len();
        if w == 0 || hi.len() != w {
            return Err(McmpError::Scenario("rect bounds must have matching dimension".into()));
        }
        for i in 0..w {
            if !(lo[i] < hi[i]) {
                return Err(McmpError::Scenario(format!(
                    "rect has empty extent on axis {i}: [{}, {}]",
                    lo[i], hi[i]
                )));
            }
        }
        let mut normals = DMatrix::zeros(2 * w, w);
        let mut offsets = DVector::zeros(2 * w);
        for i in 0..w {
            normals[(2 * i, i)] = 1.0;
            offsets[2 * i] = hi[i];
            normals[(2 * i + 1, i)] = -1.0;
            offsets[2 * i + 1] = -lo[i];
        }
        Ok(ConvexObstacle { normals, offsets, inflatable: true })
    }

    /// Convex polygon in the plane from counterclockwise vertices.
    pub fn from_vertices_2d(pts: &[[f64; 2]]) -> Result<Self> {
        let n = pts.len();
        if n < 3 {
            return Err(McmpError::Scenario("polygon needs at least three vertices".into()));
        }
        let mut normals = DMatrix::zeros(n, 2);
        let mut offsets = DVector::zeros(n);
        for i in 0..n {
            let p = pts[i];
            let q = pts[(i + 1) % n];
            let e = [q[0] - p[0], q[1] - p[1]];
            let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
            if len < 1e-12 {
                return Err(McmpError::Scenario("polygon has a degenerate edge".into()));
            }
            // outward normal for a CCW polygon
            let nx = e[1] / len;
            let ny = -e[0] / len;
            normals[(i, 0)] = nx;
            normals[(i, 1)] = ny;
            offsets[i] = nx * p[0] + ny * p[1];
        }
        let obs = ConvexObstacle { normals, offsets, inflatable: true };
        obs.check_nonempty()?;
        obs.check_bounded()?;
        Ok(obs)
    }

    /// Hypercube blocker of the given half side; not affected by inflation.
    pub fn blocker(center: &[f64], half_side: f64) -> Result<Self> {
        if !(half_side > 0.0) {
            return Err(McmpError::InvalidArgument("blocker half side must be positive".into()));
        }
        let lo: Vec<f64> = center.iter().map(|c| c - half_side).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + half_side).collect();
        let mut o = Self::rect(&lo, &hi)?;
        o.inflatable = false;
        o
            .check_nonempty()
            .and(o.check_bounded())
            .map(|_| o)
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    fn margin(&self, inflation: f64) -> f64 {
        if self.inflatable {
            inflation
        } else {
            0.0
        }
    }

    pub fn contains(&self, p: &[f64], inflation: f64) -> bool {
        let s = self.margin(inflation);
        for j in 0..self.normals.nrows() {
            let mut dot = 0.0;
            for k in 0..self.dim() {
                dot += self.normals[(j, k)] * p[k];
            }
            if dot > self.offsets[j] + s {
                return false;
            }
        }
        true
    }

    /// Exact segment intersection by clipping the parameter interval against
    /// every face. Touching the boundary counts as a hit.
    pub fn segment_hits(&self, p: &[f64], q: &[f64], inflation: f64) -> bool {
        let s = self.margin(inflation);
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        for j in 0..self.normals.nrows() {
            let mut sp = -(self.offsets[j] + s);
            let mut sq = sp;
            for k in 0..self.dim() {
                sp += self.normals[(j, k)] * p[k];
                sq += self.normals[(j, k)] * q[k];
            }
            if sp > 0.0 && sq > 0.0 {
                return false;
            }
            if sp > 0.0 {
                lo = lo.max(sp / (sp - sq));
            } else if sq > 0.0 {
                hi = hi.min(sp / (sp - sq));
            }
            if lo > hi {
                return false;
            }
        }
        true
    }

    /// Vertices of the inflated polytope; only implemented in the plane,
    /// where they are enumerated from face pairs. Used for bounding boxes.
    fn vertices_2d(&self, inflation: f64) -> Option<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return None;
        }
        let s = self.margin(inflation);
        let m = self.normals.nrows();
        let mut verts = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let a = [self.normals[(i, 0)], self.normals[(i, 1)]];
                let b = [self.normals[(j, 0)], self.normals[(j, 1)]];
                let det = a[0] * b[1] - a[1] * b[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let bi = self.offsets[i] + s;
                let bj = self.offsets[j] + s;
                let x = (bi * b[1] - a[1] * bj) / det;
                let y = (a[0] * bj - bi * b[0]) / det;
                let mut feas = true;
                for k in 0..m {
                    if self.normals[(k, 0)] * x + self.normals[(k, 1)] * y
                        > self.offsets[k] + s + 1e-9
                    {
                        feas = false;
                        break;
                    }
                }
                if feas {
                    verts.push([x, y]);
                }
            }
        }
        if verts.is_empty() {
            None
        } else {
            Some(verts)
        }
    }

    /// Feasibility probe by alternating projection onto violated halfspaces.
    fn check_nonempty(&self) -> Result<()> {
        let w = self.dim();
        let mut x = DVector::<f64>::zeros(w);
        for _ in 0..20_000 {
            let mut worst = 0.0;
            let mut worst_j = usize::MAX;
            for j in 0..self.normals.nrows() {
                let mut v = -self.offsets[j];
                for k in 0..w {
                    v += self.normals[(j, k)] * x[k];
                }
                if v > worst {
                    worst = v;
                    worst_j = j;
                }
            }
            if worst <= 1e-9 {
                return Ok(());
            }
            for k in 0..w {
                x[k] -= worst * self.normals[(worst_j, k)];
            }
        }
        Err(McmpError::Scenario("obstacle halfspaces have empty intersection".into()))
    }

    /// A polytope is bounded iff every direction is blocked by some face.
    /// In the plane that reduces to the sorted normal angles having no gap
    /// of pi or more; in higher dimension a direction sample is used.
    fn check_bounded(&self) -> Result<()> {
        let w = self.dim();
        let m = self.normals.nrows();
        match w {
            1 => {
                let has_pos = (0..m).any(|j| self.normals[(j, 0)] > 0.5);
                let has_neg = (0..m).any(|j| self.normals[(j, 0)] < -0.5);
                if has_pos && has_neg {
                    Ok(())
                } else {
                    Err(McmpError::Scenario("obstacle is unbounded".into()))
                }
            }
            2 => {
                let mut angles: Vec<f64> =
                    (0..m).map(|j| self.normals[(j, 1)].atan2(self.normals[(j, 0)])).collect();
                angles.sort_by(f64::total_cmp);
                let mut max_gap = 0.0_f64;
                for i in 0..angles.len() {
                    let next = if i + 1 < angles.len() {
                        angles[i + 1]
                    } else {
                        angles[0] + std::f64::consts::TAU
                    };
                    max_gap = max_gap.max(next - angles[i]);
                }
                if max_gap < std::f64::consts::PI - 1e-9 {
                    Ok(())
                } else {
                    Err(McmpError::Scenario("obstacle is unbounded".into()))
                }
            }
            _ => {
                // sampled support directions: every direction must see a face
                // with positive alignment
                let dirs = sample_directions(w, 512);
                for u in dirs {
                    let blocked = (0..m).any(|j| {
                        let mut dot = 0.0;
                        for k in 0..w {
                            dot += self.normals[(j, k)] * u[k];
                        }
                        dot > 1e-6
                    });
                    if !blocked {
                        return Err(McmpError::Scenario(
                            "obstacle looks unbounded along a sampled direction".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Low-discrepancy-ish unit directions for the boundedness probe.
fn sample_directions(w: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count + 2 * w);
    for i in 0..w {
        let mut e = vec![0.0; w];
        e[i] = 1.0;
        out.push(e.clone());
        e[i] = -1.0;
        out.push(e);
    }
    // deterministic scrambled lattice mapped through a normal quantile-free
    // trick: coordinates from shifted cosines are enough for a probe
    for i in 0..count {
        let mut v: Vec<f64> = (0..w)
            .map(|k| ((i as f64 + 1.0) * (k as f64 * 2.399_963 + 1.0)).cos())
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

/// Planning workspace: a state-space box plus convex obstacles living in the
/// position coordinates, carried together with the current inflation.
#[derive(Clone, Debug)]
pub struct Workspace {
    /// Dimension of the position coordinates (the first coordinates of the
    /// state).
    pub position_dim: usize,
    /// State-space sampling bounds.
    pub bounds_lo: DVector<f64>,
    pub bounds_hi: DVector<f64>,
    pub obstacles: Vec<ConvexObstacle>,
    pub inflation: f64,
    /// Per-obstacle bounding boxes at the current inflation (plane only);
    /// used as a rejection prefilter in the collision hot path.
    aabbs: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Workspace {
    pub fn new(
        position_dim: usize,
        bounds_lo: DVector<f64>,
        bounds_hi: DVector<f64>,
        obstacles: Vec<ConvexObstacle>,
    ) -> Result<Self> {
        if position_dim == 0 || bounds_lo.len() < position_dim {
            return Err(McmpError::Scenario("workspace bounds must cover the position dims".into()));
        }
        if bounds_lo.len() != bounds_hi.len() {
            return Err(McmpError::Scenario("workspace bounds dimensions differ".into()));
        }
        for i in 0..bounds_lo.len() {
            if !(bounds_lo[i] < bounds_hi[i]) {
                return Err(McmpError::Scenario(format!("workspace bounds empty on axis {i}")));
            }
        }
        for o in &obstacles {
            if o.dim() != position_dim {
                return Err(McmpError::Scenario("obstacle dimension does not match workspace".into()));
            }
        }
        let mut ws = Workspace {
            position_dim,
            bounds_lo,
            bounds_hi,
            obstacles,
            inflation: 0.0,
            aabbs: Vec::new(),
        };
        ws.rebuild_aabbs();
        Ok(ws)
    }

    fn rebuild_aabbs(&mut self) {
        let s = self.inflation;
        self.aabbs = self
            .obstacles
            .iter()
            .map(|o| {
                o.vertices_2d(s).map(|vs| {
                    let mut lo = vec![f64::INFINITY; 2];
                    let mut hi = vec![f64::NEG_INFINITY; 2];
                    for v in vs {
                        for k in 0..2 {
                            lo[k] = lo[k].min(v[k]);
                            hi[k] = hi[k].max(v[k]);
                        }
                    }
                    (lo, hi)
                })
            })
            .collect();
    }

    /// The same workspace at absolute inflation `s`: every inflatable face
    /// is offset by `s`. Inflations do not accumulate.
    pub fn inflate(&self, s: f64) -> Workspace {
        let mut ws = self.clone();
        ws.inflation = s.max(0.0);
        ws.rebuild_aabbs();
        ws
    }

    /// Adds a fixed-size hypercube blocker (immune to inflation).
    pub fn with_blocker(&self, center: &[f64], half_side: f64) -> Result<Workspace> {
        let mut ws = self.clone();
        ws.obstacles.push(ConvexObstacle::blocker(center, half_side)?);
        ws.rebuild_aabbs();
        Ok(ws)
    }

    pub fn state_in_bounds(&self, x: &DVector<f64>) -> bool {
        (0..self.bounds_lo.len()).all(|i| x[i] >= self.bounds_lo[i] && x[i] <= self.bounds_hi[i])
    }

    /// Bounding box of obstacle `idx` at the current inflation, if one is
    /// maintained (plane workspaces only).
    pub fn aabb_of(&self, idx: usize) -> Option<(&[f64], &[f64])> {
        self.aabbs.get(idx)?.as_ref().map(|(lo, hi)| (lo.as_slice(), hi.as_slice()))
    }

    /// Bend candidates for taut shortcutting: every obstacle corner at the
    /// current inflation, pushed just outside the boundary so the membership
    /// test does not count the bend itself as a hit. Plane workspaces only;
    /// elsewhere the list is empty and shortcutting falls back to splicing.
    pub fn bend_candidates(&self) -> Vec<DVector<f64>> {
        if self.position_dim != 2 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for o in &self.obstacles {
            let Some(verts) = o.vertices_2d(self.inflation) else { continue };
            let n = verts.len() as f64;
            let cx = verts.iter().map(|v| v[0]).sum::<f64>() / n;
            let cy = verts.iter().map(|v| v[1]).sum::<f64>() / n;
            for v in verts {
                let dx = v[0] - cx;
                let dy = v[1] - cy;
                let len = (dx * dx + dy * dy).sqrt();
                if len < 1e-12 {
                    continue;
                }
                let push = 1e-7 / len;
                out.push(DVector::from_vec(vec![v[0] + dx * push, v[1] + dy * push]));
            }
        }
        out
    }

    /// Whether a position lies inside any obstacle at the current inflation.
    pub fn point_in_collision(&self, pos: &[f64]) -> bool {
        debug_assert_eq!(pos.len(), self.position_dim);
        for (o, bb) in self.obstacles.iter().zip(&self.aabbs) {
            if let Some((lo, hi)) = bb {
                let out = (0..2).any(|k| pos[k] < lo[k] || pos[k] > hi[k]);
                if out {
                    continue;
                }
            }
            if o.contains(pos, self.inflation) {
                return true;
            }
        }
        false
    }

    /// Whether the straight segment from `p` to `q` (positions) intersects
    /// any obstacle. Polytopes admit an exact parametric test, so
    /// `_resolution` is not consulted; it bounds the sampling gap an
    /// implicit-shape extension would be allowed to use.
    pub fn segment_in_collision(&self, p: &[f64], q: &[f64], _resolution: f64) -> bool {
        for (o, bb) in self.obstacles.iter().zip(&self.aabbs) {
            if let Some((lo, hi)) = bb {
                let mut reject = false;
                for k in 0..2 {
                    let (a, b) = if p[k] <= q[k] { (p[k], q[k]) } else { (q[k], p[k]) };
                    if b < lo[k] || a > hi[k] {
                        reject = true;
                        break;
                    }
                }
                if reject {
                    continue;
                }
            }
            if o.segment_hits(p, q, self.inflation) {
                return true;
            }
        }
        false
    }
}

/// Closest point of a convex obstacle in the Mahalanobis metric of `sigma`,
/// solved in the whitened frame by Hildreth's coordinate descent on the dual
/// quadratic program. Returns the point and its Mahalanobis distance; a
/// query already inside the obstacle returns (x, 0).
///
/// Singular covariances are regularized by `eps = 1e-9 tr(sigma)/w` on the
/// diagonal so the whitening always exists.
pub fn mahalanobis_closest_point(
    obstacle: &ConvexObstacle,
    x: &DVector<f64>,
    sigma: &DMatrix<f64>,
    inflation: f64,
) -> Result<(DVector<f64>, f64)> {
    let w = obstacle.dim();
    if x.len() != w || sigma.nrows() != w || sigma.ncols() != w {
        return Err(McmpError::InvalidArgument("closest point dimensions mismatch".into()));
    }
    let mut sig = sigma.clone();
    let eps = 1e-9 * (sig.trace() / w as f64).max(1e-300);
    for i in 0..w {
        sig[(i, i)] += eps;
    }
    let chol = sig
        .cholesky()
        .ok_or_else(|| McmpError::Numeric("covariance is not positive semidefinite".into()))?;
    let l = chol.l();

    // whitened constraints: minimize |y|^2 / 2 subject to G y <= h,
    // y = L^{-1}(z - x)
    let s = obstacle.margin(inflation);
    let m = obstacle.normals.nrows();
    let g = &obstacle.normals * &l;
    let mut hvec = DVector::zeros(m);
    for j in 0..m {
        let mut dot = 0.0;
        for k in 0..w {
            dot += obstacle.normals[(j, k)] * x[k];
        }
        hvec[j] = obstacle.offsets[j] + s - dot;
    }

    // dual: minimize lambda^T Q lambda / 2 + h^T lambda over lambda >= 0
    let qmat = &g * g.transpose();
    let mut lambda = DVector::<f64>::zeros(m);
    let mut qlam = DVector::<f64>::zeros(m); // Q lambda, maintained incrementally
    for _cycle in 0..500 {
        let mut delta_max = 0.0_f64;
        for j in 0..m {
            let qjj = qmat[(j, j)];
            if qjj < 1e-16 {
                continue;
            }
            let grad = qlam[j] + hvec[j];
            let new = (lambda[j] - grad / qjj).max(0.0);
            let dl = new - lambda[j];
            if dl != 0.0 {
                lambda[j] = new;
                for i in 0..m {
                    qlam[i] += qmat[(i, j)] * dl;
                }
                delta_max = delta_max.max(dl.abs());
            }
        }
        if delta_max <= 1e-10 * (1.0 + lambda.amax()) {
            break;
        }
    }
    let y = -g.transpose() * &lambda;
    let md = y.norm();
    let z = x + l * y;
    Ok((z, md))
}

/// One waypoint-obstacle near point: the obstacle point most likely to be
/// reached at step `step`, with the crossing direction prewhitened so that
/// `normal . (position deviation)` has unit variance.
#[derive(Clone, Debug)]
pub struct ClosePoint {
    pub step: usize,
    pub obstacle: usize,
    pub point: DVector<f64>,
    /// Nominal position at `step`; kept so downstream users need not carry
    /// the trajectory (point - nominal is the mean shift reaching the point).
    pub nominal_position: DVector<f64>,
    /// sigma^{-1} (point - nominal) / mdist; unit variance direction.
    pub normal: DVector<f64>,
    pub mdist: f64,
    /// Phi(-mdist): probability that the deviation crosses the tangent plane.
    pub hit_prob: f64,
}

/// All close points of a nominal trajectory, with the per-step index needed
/// by streaming evaluation and theta, the expected total crossing count.
#[derive(Clone, Debug)]
pub struct CloseSet {
    pub points: Vec<ClosePoint>,
    /// Sum of hit probabilities over the points with a usable crossing
    /// direction: the exact mean of the crossing-count statistic. Points
    /// with mdist ~ 0 (nominal inside an obstacle) are excluded here because
    /// their crossing indicator is degenerate.
    pub theta: f64,
    /// Indices into `points` grouped by step, length horizon + 1.
    pub per_step: Vec<Vec<u32>>,
}

/// Builds the close set: for each waypoint and obstacle, project the nominal
/// position onto the obstacle in the Mahalanobis metric, drop points beyond
/// [`MDIST_CUTOFF`], then within each waypoint drop occluded points: walking
/// candidates by ascending distance, a point is kept only if no kept point's
/// tangent plane already separates it from the nominal (that crossing region
/// is then a subset of the kept one's).
pub fn build_close_set(
    workspace: &Workspace,
    nominal: &NominalTrajectory,
    moments: &Moments,
) -> Result<CloseSet> {
    let w = workspace.position_dim;
    let t_count = nominal.states.len();
    let mut points = Vec::new();
    let mut per_step: Vec<Vec<u32>> = vec![Vec::new(); t_count];

    for t in 0..t_count {
        let xpos = nominal.states[t].rows(0, w).into_owned();
        let sigma = moments.position_cov(t, w);
        let mut sig_reg = sigma.clone();
        let eps = 1e-9 * (sig_reg.trace() / w as f64).max(1e-300);
        for i in 0..w {
            sig_reg[(i, i)] += eps;
        }
        let sig_inv = sig_reg
            .clone()
            .cholesky()
            .ok_or_else(|| McmpError::Numeric("position covariance not PSD".into()))?
            .inverse();

        let mut cands: Vec<ClosePoint> = Vec::new();
        for (oi, obs) in workspace.obstacles.iter().enumerate() {
            let (z, md) =
                mahalanobis_closest_point(obs, &xpos, &sigma, workspace.inflation)?;
            if md > MDIST_CUTOFF {
                continue;
            }
            let diff = &z - &xpos;
            let normal = if md > 1e-12 {
                &sig_inv * diff / md
            } else {
                // nominal inside the obstacle: no useful direction, but the
                // point still contributes hit probability 1/2
                DVector::zeros(w)
            };
            cands.push(ClosePoint {
                step: t,
                obstacle: oi,
                point: z,
                nominal_position: xpos.clone(),
                normal,
                mdist: md,
                hit_prob: normal_cdf(-md),
            });
        }
        cands.sort_by(|a, b| a.mdist.total_cmp(&b.mdist));

        let mut kept: Vec<ClosePoint> = Vec::new();
        'cand: for c in cands {
            for k in &kept {
                if k.mdist > 1e-12 {
                    let mut along = 0.0;
                    for i in 0..w {
                        along += k.normal[i] * (c.point[i] - xpos[i]);
                    }
                    if along > k.mdist {
                        continue 'cand; // occluded: already beyond a kept tangent plane
                    }
                }
            }
            kept.push(c);
        }
        for c in kept {
            per_step[t].push(points.len() as u32);
            points.push(c);
        }
    }

    let theta = points.iter().filter(|p| p.mdist > 1e-12).map(|p| p.hit_prob).sum();
    Ok(CloseSet { points, theta, per_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_box() -> ConvexObstacle {
        ConvexObstacle::rect(&[1.0, 1.0], &[2.0, 2.0]).unwrap()
    }

    #[test]
    fn rect_membership_and_inflation() {
        let o = unit_box();
        assert!(o.contains(&[1.5, 1.5], 0.0));
        assert!(!o.contains(&[0.9, 1.5], 0.0));
        assert!(o.contains(&[0.9, 1.5], 0.2));
        assert!(!o.contains(&[0.9, 1.5], 0.05));
    }

    #[test]
    fn segment_clipping_matches_dense_sampling() {
        let o = ConvexObstacle::from_vertices_2d(&[[0.0, 0.0], [2.0, 0.5], [1.0, 2.0]]).unwrap();
        let cases = [
            ([-1.0, -1.0], [3.0, 3.0]),
            ([-1.0, 2.0], [3.0, 2.0]),
            ([-1.0, 0.0], [0.4, 1.9]),
            ([2.5, 0.0], [2.5, 2.0]),
            ([0.5, 0.5], [0.6, 0.6]),
            ([-0.5, -0.5], [-0.1, 3.0]),
        ];
        for (p, q) in cases {
            let exact = o.segment_hits(&p, &q, 0.0);
            let mut sampled = false;
            let n = 20_000;
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                if o.contains(&x, 0.0) {
                    sampled = true;
                    break;
                }
            }
            assert_eq!(exact, sampled, "disagreement on segment {p:?} -> {q:?}");
        }
    }

    #[test]
    fn unbounded_or_empty_obstacles_rejected() {
        // single halfspace: unbounded
        let n = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0]);
        assert!(ConvexObstacle::from_halfspaces(n, b).is_err());
        // contradictory pair: empty
        let n = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![-2.0, -2.0, 1.0, 1.0]);
        assert!(ConvexObstacle::from_halfspaces(n, b).is_err());
    }

    #[test]
    fn workspace_inflation_is_absolute_not_cumulative() {
        let ws = Workspace::new(
            2,
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![10.0, 10.0]),
            vec![unit_box()],
        )
        .unwrap();
        let a = ws.inflate(0.3);
        let b = a.inflate(0.1);
        assert!(a.point_in_collision(&[0.75, 1.5]));
        assert!(!b.point_in_collision(&[0.75, 1.5]));
        assert!(b.point_in_collision(&[0.95, 1.5]));
    }

    #[test]
    fn blockers_ignore_inflation() {
        let ws = Workspace::new(
            2,
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![10.0, 10.0]),
            vec![],
        )
        .unwrap()
        .with_blocker(&[5.0, 5.0], 0.5)
        .unwrap();
        let inflated = ws.inflate(1.0);
        assert!(inflated.point_in_collision(&[5.4, 5.0]));
        assert!(!inflated.point_in_collision(&[5.6, 5.0]));
    }

    #[test]
    fn closest_point_axis_aligned_analytic() {
        // diagonal covariance: projection onto a box decouples per axis
        let o = unit_box();
        let x = DVector::from_vec(vec![0.0, 1.5]);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.01]));
        let (z, md) = mahalanobis_closest_point(&o, &x, &sigma, 0.0).unwrap();
        assert_relative_eq!(z[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(z[1], 1.5, epsilon = 1e-6);
        assert_relative_eq!(md, 1.0 / 0.2, max_relative = 1e-6);
    }

    #[test]
    fn closest_point_inside_returns_zero() {
        let o = unit_box();
        let x = DVector::from_vec(vec![1.5, 1.5]);
        let sigma = DMatrix::identity(2, 2);
        let (z, md) = mahalanobis_closest_point(&o, &x, &sigma, 0.0).unwrap();
        assert_relative_eq!((z - x).norm(), 0.0, epsilon = 1e-9);
        assert_eq!(md, 0.0);
    }

    #[test]
    fn closest_point_matches_active_set_enumeration() {
        // brute-force oracle: try every subset of active faces, solve the
        // equality-constrained projection, keep the best feasible candidate
        let obs = ConvexObstacle::from_vertices_2d(&[[0.0, 0.0], [3.0, 1.0], [2.0, 3.0], [-1.0, 2.0]])
            .unwrap();
        let sigmas = [
            DMatrix::from_row_slice(2, 2, &[0.05, 0.02, 0.02, 0.08]),
            DMatrix::from_row_slice(2, 2, &[0.2, -0.05, -0.05, 0.03]),
            DMatrix::identity(2, 2),
        ];
        let queries = [
            DVector::from_vec(vec![-2.0, -1.0]),
            DVector::from_vec(vec![4.0, 4.0]),
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::from_vec(vec![-3.0, 3.5]),
        ];
        for sigma in &sigmas {
            for x in &queries {
                let (z, md) = mahalanobis_closest_point(&obs, x, sigma, 0.0).unwrap();
                let (z_ref, md_ref) = brute_projection(&obs, x, sigma);
                assert_relative_eq!(md, md_ref, max_relative = 1e-6, epsilon = 1e-8);
                assert_relative_eq!((z - z_ref).norm(), 0.0, epsilon = 1e-5);
            }
        }
    }

    fn brute_projection(
        obs: &ConvexObstacle,
        x: &DVector<f64>,
        sigma: &DMatrix<f64>,
    ) -> (DVector<f64>, f64) {
        let w = 2usize;
        let mut sig = sigma.clone();
        let eps = 1e-9 * sig.trace() / w as f64;
        for i in 0..w {
            sig[(i, i)] += eps;
        }
        let l = sig.cholesky().unwrap().l();
        let g = &obs.normals * &l;
        let m = obs.normals.nrows();
        let h = DVector::from_fn(m, |j, _| {
            obs.offsets[j] - obs.normals.row(j).transpose().dot(x)
        });
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
            let y = if active.is_empty() {
                DVector::zeros(w)
            } else if active.len() <= w {
                let ga = DMatrix::from_fn(active.len(), w, |r, c| g[(active[r], c)]);
                let ha = DVector::from_fn(active.len(), |r, _| h[active[r]]);
                let gg = &ga * ga.transpose();
                match gg.cholesky() {
                    Some(ch) => ga.transpose() * ch.solve(&ha),
                    None => continue,
                }
            } else {
                continue;
            };
            let feasible = (0..m).all(|j| g.row(j).transpose().dot(&y) <= h[j] + 1e-8);
            if feasible {
                let md = y.norm();
                if best.as_ref().map_or(true, |(_, b)| md < *b) {
                    best = Some((x + &l * y, md));
                }
            }
        }
        best.expect("feasible projection must exist for nonempty obstacle")
    }
}
