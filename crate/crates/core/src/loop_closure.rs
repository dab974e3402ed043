//! Drift estimation from matched objects and trajectory correction.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{Landmark, MapState};
use crate::geometry::{hat, GeometryError, Pose, Twist};
use crate::refinement::{default_odometry_info, relative_pose_residual};
use crate::scene_graph::{MatchSet, SceneGraph, Vertex};
use crate::solver::{solve_gauss_newton, GnConfig, Problem, SolveReport, SolverError};

/// A matched object seen in the drifted local map and in the global map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectConstraint {
    pub local: Pose,
    pub global: Pose,
    pub info: Matrix6<f64>,
    /// Match similarity; the strongest constraint seeds the estimate.
    pub score: f64,
}

impl ObjectConstraint {
    pub fn new(local: Pose, global: Pose) -> Self {
        Self {
            local,
            global,
            info: Matrix6::identity(),
            score: 0.0,
        }
    }

    /// Constraint whose information reflects isotropic orientation and
    /// position noise on both object poses, each expressed about the object
    /// itself. The residual covariance is that noise carried through the
    /// adjoint of the global pose.
    pub fn with_noise(local: Pose, global: Pose, sigma_rot: f64, sigma_trans: f64) -> Self {
        let mut sigma_inv = Matrix6::zeros();
        for i in 0..3 {
            sigma_inv[(i, i)] = 1.0 / (2.0 * sigma_rot * sigma_rot);
            sigma_inv[(i + 3, i + 3)] = 1.0 / (2.0 * sigma_trans * sigma_trans);
        }
        let ad_inv = adjoint(&global.inverse());
        Self {
            info: ad_inv.transpose() * sigma_inv * ad_inv,
            ..Self::new(local, global)
        }
    }
}

/// Adjoint of `p` acting on twists ordered rotation first.
pub fn adjoint(p: &Pose) -> Matrix6<f64> {
    let r = p.rotation();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&p.translation()) * r));
    m
}

/// `log(D^-1 * T_wo_l * T_wo_g^-1)`: zero when the local object equals the
/// global one moved by the world-frame drift `D`.
pub fn drift_residual(drift: &Pose, c: &ObjectConstraint) -> Result<Twist, GeometryError> {
    drift.inverse().compose(&c.local).compose(&c.global.inverse()).log()
}

/// Graph vertex for `lm` estimated only from its measurements in `frames`:
/// mean position and chordal mean orientation. `None` when no measurement
/// falls in the range.
pub fn submap_vertex(lm: &Landmark, keyframes: &BTreeMap<u64, Pose>, frames: RangeInclusive<u64>) -> Option<Vertex> {
    let mut sum = Vector3::zeros();
    let mut rot = Matrix3::zeros();
    let mut dims = Vector3::zeros();
    let mut n = 0usize;
    for (f, m) in lm.measurements.range(frames) {
        let Some(t_wc) = keyframes.get(f) else {
            continue;
        };
        let t_wo = t_wc.compose(&m.t_co);
        sum += t_wo.translation();
        rot += t_wo.rotation();
        dims += m.dims;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mut v = Vertex::from_landmark(lm);
    v.pose = Pose::from_parts_unchecked(project_to_rotation(&rot), sum / n as f64);
    v.dims = dims / n as f64;
    Some(v)
}

/// Nearest rotation to `m` in the Frobenius norm.
fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * v_t).determinant().signum();
    u * d * v_t
}

/// Scene graph over every landmark measured within `frames`.
pub fn submap_graph(map: &MapState, frames: RangeInclusive<u64>, k_nn: usize) -> SceneGraph {
    let vertices = map
        .landmarks
        .values()
        .filter_map(|lm| submap_vertex(lm, &map.keyframes, frames.clone()))
        .collect();
    SceneGraph::build(vertices, k_nn)
}

/// Global-map graph for a loop check at `frame`: measurements older than
/// `min_loop_gap` frames. A landmark measured again later only counts when
/// it first went unobserved for at least as many frames as separate the old
/// range from the local window; otherwise it is still being tracked and
/// matching it is not a revisit.
pub fn global_submap_graph(
    map: &MapState,
    frame: u64,
    local_window: u64,
    min_loop_gap: u64,
    k_nn: usize,
) -> SceneGraph {
    let Some(last_old) = frame.checked_sub(min_loop_gap + 1) else {
        return SceneGraph::build(Vec::new(), k_nn);
    };
    let hole = (min_loop_gap + 1).saturating_sub(local_window);
    let revisited = |lm: &Landmark| {
        let before = lm.measurements.range(..=last_old).next_back().map(|(f, _)| *f);
        let after = lm.measurements.range(last_old + 1..).next().map(|(f, _)| *f);
        match (before, after) {
            (Some(a), Some(b)) => b - a > hole,
            _ => true,
        }
    };
    let vertices = map
        .landmarks
        .values()
        .filter(|lm| revisited(lm))
        .filter_map(|lm| submap_vertex(lm, &map.keyframes, 0..=last_old))
        .collect();
    SceneGraph::build(vertices, k_nn)
}

/// One constraint per verified pair, using the graph vertex poses.
pub fn constraints_from_matches(
    matches: &MatchSet,
    g_l: &SceneGraph,
    g_g: &SceneGraph,
    cfg: &LoopConfig,
) -> Vec<ObjectConstraint> {
    matches
        .pairs
        .iter()
        .filter_map(|p| {
            let l = g_l.vertex(p.local)?;
            let g = g_g.vertex(p.global)?;
            Some(ObjectConstraint {
                score: p.s_l,
                ..ObjectConstraint::with_noise(l.pose, g.pose, cfg.object_sigma_rot, cfg.object_sigma_trans)
            })
        })
        .collect()
}

/// Earliest frame in which any matched global landmark was observed.
pub fn select_loop_frame(matches: &MatchSet, map: &MapState) -> Option<u64> {
    matches
        .pairs
        .iter()
        .filter_map(|p| map.landmarks.get(&p.global))
        .map(|lm| lm.first_frame())
        .min()
}

/// Least-squares drift over all constraints, started from the exact drift
/// of the highest-scoring one. The problem is solved about the centroid of
/// the global objects, with information moved into that frame, so the
/// result does not depend on where the world origin sits.
pub fn estimate_drift(constraints: &[ObjectConstraint], gn: &GnConfig) -> Result<(Pose, SolveReport), SolverError> {
    if constraints.is_empty() {
        return Err(SolverError::InvalidProblem("no object constraints".into()));
    }
    let centroid = constraints.iter().map(|c| c.global.translation()).sum::<Vector3<f64>>() / constraints.len() as f64;
    let shift = Pose::from_translation(centroid);
    let unshift = shift.inverse();
    let ad_shift = adjoint(&shift);
    let centered: Vec<ObjectConstraint> = constraints
        .iter()
        .map(|c| ObjectConstraint {
            local: unshift.compose(&c.local),
            global: unshift.compose(&c.global),
            info: ad_shift.transpose() * c.info * ad_shift,
            ..*c
        })
        .collect();
    let seed = centered
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.score.total_cmp(&b.1.score).then(b.0.cmp(&a.0)))
        .map(|(_, c)| c)
        .expect("non-empty");
    let mut problem = Problem::new();
    let var = problem.add_variable(seed.local.compose(&seed.global.inverse()), false);
    for c in centered {
        problem.add_residual(&[var], c.info, move |x: &[Pose]| {
            Ok(drift_residual(&x[0], &c)?.to_vector())
        })?;
    }
    let report = solve_gauss_newton(&mut problem, gn)?;
    Ok((shift.compose(problem.pose(var)).compose(&unshift), report))
}

/// Moves the drifted current camera pose back into the global frame.
pub fn correct_current_pose(t_wc: &Pose, drift: &Pose) -> Pose {
    drift.inverse().compose(t_wc)
}

/// Optimizes a chain of poses under relative constraints `rel[i]` between
/// `poses[i]` and `poses[i + 1]`, holding the poses at `anchors` fixed.
pub fn optimize_frame_graph(
    poses: &[Pose],
    rel: &[Pose],
    anchors: &[usize],
    info: &Matrix6<f64>,
    gn: &GnConfig,
) -> Result<(Vec<Pose>, SolveReport), SolverError> {
    if poses.len() < 2 || rel.len() + 1 != poses.len() {
        return Err(SolverError::InvalidProblem(format!(
            "{} poses need {} relative measurements, got {}",
            poses.len(),
            poses.len().saturating_sub(1),
            rel.len()
        )));
    }
    if let Some(a) = anchors.iter().find(|&&a| a >= poses.len()) {
        return Err(SolverError::InvalidProblem(format!("anchor {a} out of range")));
    }
    let mut problem = Problem::new();
    let vars: Vec<usize> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| problem.add_variable(*p, anchors.contains(&i)))
        .collect();
    for (i, t_ij) in rel.iter().enumerate() {
        let t_ij = *t_ij;
        problem.add_residual(&[vars[i], vars[i + 1]], *info, move |x: &[Pose]| {
            Ok(relative_pose_residual(&t_ij, &x[0], &x[1])?.to_vector())
        })?;
    }
    let report = solve_gauss_newton(&mut problem, gn)?;
    Ok((problem.into_poses(), report))
}

/// Re-expresses landmarks through their first observing keyframe when that
/// frame moved, then merges matched local landmarks into their global
/// counterparts. `old` and `new` map frame ids to camera poses.
pub fn propagate_correction(
    map: &mut MapState,
    old: &BTreeMap<u64, Pose>,
    new: &BTreeMap<u64, Pose>,
    matches: &MatchSet,
    history_cap: usize,
) {
    for lm in map.landmarks.values_mut() {
        let anchor = lm.first_frame();
        if let (Some(o), Some(n)) = (old.get(&anchor), new.get(&anchor)) {
            if o != n {
                lm.pose = n.compose(&o.inverse().compose(&lm.pose));
            }
        }
    }
    for (f, p) in new {
        if let Some(k) = map.keyframes.get_mut(f) {
            *k = *p;
        }
    }
    for pair in &matches.pairs {
        if pair.local == pair.global || !map.landmarks.contains_key(&pair.global) {
            continue;
        }
        if let Some(local) = map.landmarks.remove(&pair.local) {
            map.landmarks
                .get_mut(&pair.global)
                .expect("checked above")
                .absorb(local, history_cap);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub enabled: bool,
    /// Frames between loop detection attempts.
    pub check_interval: u64,
    /// Measurements from this many recent keyframes form the local map.
    pub local_window: u64,
    /// The global map holds measurements older than this many keyframes.
    pub min_loop_gap: u64,
    /// Assumed orientation noise of a map object, rad.
    pub object_sigma_rot: f64,
    /// Assumed position noise of a map object, m.
    pub object_sigma_trans: f64,
    pub gn: GnConfig,
    pub odometry_info: Matrix6<f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            check_interval: 5,
            local_window: 25,
            min_loop_gap: 50,
            object_sigma_rot: 0.05,
            object_sigma_trans: 0.15,
            gn: GnConfig::default(),
            odometry_info: default_odometry_info(),
        }
    }
}

/// One applied loop closure.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopResult {
    pub loop_frame: u64,
    pub current_frame: u64,
    pub matches: MatchSet,
    pub drift: Pose,
    pub drift_report: SolveReport,
    pub graph_report: SolveReport,
}

impl LoopResult {
    pub fn record(&self) -> LoopRecord {
        let log = self.drift.log().map(|t| t.omega.norm()).unwrap_or(std::f64::consts::PI);
        LoopRecord {
            loop_frame: self.loop_frame,
            current_frame: self.current_frame,
            n_matches: self.matches.len(),
            drift_translation_m: self.drift.translation().norm(),
            drift_rotation_deg: log.to_degrees(),
            cost_before: self.graph_report.initial_cost,
            cost_after: self.graph_report.final_cost,
        }
    }
}

/// JSONL line of the loop log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub loop_frame: u64,
    pub current_frame: u64,
    pub n_matches: usize,
    pub drift_translation_m: f64,
    pub drift_rotation_deg: f64,
    pub cost_before: f64,
    pub cost_after: f64,
}

/// Runs drift estimation, current-pose correction, frame-graph optimization
/// and map synchronization for a verified match set found at `current`.
pub fn close_loop(
    map: &mut MapState,
    current: u64,
    matches: &MatchSet,
    constraints: &[ObjectConstraint],
    cfg: &LoopConfig,
    history_cap: usize,
) -> Result<LoopResult, SolverError> {
    let (drift, drift_report) = estimate_drift(constraints, &cfg.gn)?;
    let loop_frame = select_loop_frame(matches, map)
        .ok_or_else(|| SolverError::InvalidProblem("matches reference no global landmark".into()))?
        .min(current);

    let old: BTreeMap<u64, Pose> = map
        .keyframes
        .range(loop_frame..=current)
        .map(|(f, p)| (*f, *p))
        .collect();
    let frames: Vec<u64> = old.keys().copied().collect();
    let mut poses: Vec<Pose> = old.values().copied().collect();
    let rel: Vec<Pose> = poses.windows(2).map(|w| w[0].inverse().compose(&w[1])).collect();
    let last = poses.len() - 1;
    poses[last] = correct_current_pose(&poses[last], &drift);

    let (optimized, graph_report) = if poses.len() >= 2 {
        optimize_frame_graph(&poses, &rel, &[0, last], &cfg.odometry_info, &cfg.gn)?
    } else {
        let zero = SolveReport {
            iterations: 0,
            initial_cost: 0.0,
            final_cost: 0.0,
            converged: true,
            trace: Vec::new(),
        };
        (poses, zero)
    };
    let new: BTreeMap<u64, Pose> = frames.into_iter().zip(optimized).collect();
    propagate_correction(map, &old, &new, matches, history_cap);
    Ok(LoopResult {
        loop_frame,
        current_frame: current,
        matches: matches.clone(),
        drift,
        drift_report,
        graph_report,
    })
}
