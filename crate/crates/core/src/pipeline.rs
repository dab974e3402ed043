//! End-to-end driver: association, window refinement, loop detection and
//! correction over a stream of keyframes.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{apply_associations, assign_matches, build_similarity_matrix, AssocConfig, MapState};
use crate::evaluation::{ate, AteReport, LoopAttempt, Trajectory};
use crate::features::{filter_proposals, Detection, FrameDetections};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::loop_closure::{
    close_loop, constraints_from_matches, correct_current_pose, estimate_drift, global_submap_graph, submap_graph,
    LoopConfig, LoopResult, ObjectConstraint,
};
use crate::refinement::{refine_window, WindowConfig};
use crate::scene_graph::{match_graphs, GraphConfig, MatchSet};
use crate::simulation::{frame_stamp, Scenario};
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: u64,
        #[source]
        source: SolverError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub association: AssocConfig,
    pub window: WindowConfig,
    pub graph: GraphConfig,
    pub loop_closure: LoopConfig,
    /// Position tolerance for a correct loop declaration, meters.
    pub tau_l: f64,
    /// Estimate scale when aligning trajectories for ATE.
    pub align_scale: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            association: AssocConfig::default(),
            window: WindowConfig::default(),
            graph: GraphConfig::default(),
            loop_closure: LoopConfig::default(),
            tau_l: 5.0,
            align_scale: false,
        }
    }
}

/// Keyframe stream: frame `i` has timestamp `stamps[i]`, detections
/// `detections[i]`, and is reached from frame `i - 1` by `odometry[i - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineInput {
    pub initial: Pose,
    pub odometry: Vec<Pose>,
    pub stamps: Vec<f64>,
    pub detections: Vec<Vec<Detection>>,
    pub ground_truth: Option<Vec<Pose>>,
}

impl PipelineInput {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            initial: s.truth.poses[0],
            odometry: s.odometry.clone(),
            stamps: s.frames.iter().map(|f| f.stamp).collect(),
            detections: s.frames.iter().map(|f| f.detections.clone()).collect(),
            ground_truth: Some(s.truth.poses.clone()),
        }
    }

    /// Builds the stream from an absolute odometry trajectory and detection
    /// records keyed by frame index.
    pub fn from_records(
        odometry: &[(f64, Pose)],
        frames: Vec<FrameDetections>,
        ground_truth: Option<Vec<Pose>>,
    ) -> Result<Self, PipelineError> {
        if odometry.is_empty() {
            return Err(PipelineError::Input("odometry trajectory is empty".into()));
        }
        let n = odometry.len();
        let mut detections = vec![Vec::new(); n];
        for f in frames {
            let slot = detections.get_mut(f.frame as usize).ok_or_else(|| {
                PipelineError::Input(format!("detections reference frame {} beyond odometry", f.frame))
            })?;
            slot.extend(f.detections);
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != n {
                return Err(PipelineError::Input(format!(
                    "ground truth has {} poses, odometry {}",
                    gt.len(),
                    n
                )));
            }
        }
        Ok(Self {
            initial: odometry[0].1,
            odometry: odometry.windows(2).map(|w| w[0].1.inverse().compose(&w[1].1)).collect(),
            stamps: odometry.iter().map(|(t, _)| *t).collect(),
            detections,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let n = self.stamps.len();
        if n == 0 {
            return Err(PipelineError::Input("no keyframes".into()));
        }
        if self.odometry.len() + 1 != n || self.detections.len() != n {
            return Err(PipelineError::Input(format!(
                "{} keyframes need {} odometry steps and {} detection lists",
                n,
                n - 1,
                n
            )));
        }
        if self.ground_truth.as_ref().is_some_and(|g| g.len() != n) {
            return Err(PipelineError::Input(
                "ground truth length differs from keyframe count".into(),
            ));
        }
        Ok(())
    }
}

pub const STAGES: [&str; 4] = [
    "data_association",
    "object_optimization",
    "loop_detection",
    "drift_correction",
];

/// Wall time per stage invocation, milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub samples: BTreeMap<&'static str, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub stage: String,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl StageTimes {
    fn record(&mut self, stage: &'static str, start: Instant) {
        self.samples
            .entry(stage)
            .or_default()
            .push(start.elapsed().as_secs_f64() * 1e3);
    }

    pub fn rows(&self) -> Vec<RuntimeRow> {
        STAGES
            .iter()
            .map(|s| {
                let v = self.samples.get(s).map(Vec::as_slice).unwrap_or(&[]);
                let mean = if v.is_empty() {
                    0.0
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                };
                RuntimeRow {
                    stage: s.to_string(),
                    mean_ms: mean,
                    max_ms: v.iter().copied().fold(0.0, f64::max),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,mean_ms,max_ms\n");
        for r in self.rows() {
            s.push_str(&format!("{},{:.4},{:.4}\n", r.stage, r.mean_ms, r.max_ms));
        }
        s
    }
}

/// Detections scored against simulator identities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationStats {
    pub correct: usize,
    pub total: usize,
}

impl AssociationStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    /// Final keyframe estimates with timestamps.
    pub trajectory: Vec<(f64, Pose)>,
    pub map: MapState,
    pub loops: Vec<LoopResult>,
    pub attempts: Vec<LoopAttempt>,
    pub association: AssociationStats,
    /// Largest final cost among window refinements.
    pub max_refinement_cost: f64,
    pub times: StageTimes,
}

impl RunOutput {
    /// Everything except wall-clock timings, for determinism checks.
    pub fn same_results(&self, other: &RunOutput) -> bool {
        self.trajectory == other.trajectory
            && self.map == other.map
            && self.loops == other.loops
            && self.attempts == other.attempts
            && self.association == other.association
            && self.max_refinement_cost.to_bits() == other.max_refinement_cost.to_bits()
    }
}

fn score_detections(
    stats: &mut AssociationStats,
    map: &MapState,
    dets: &[Detection],
    candidates: &[u64],
    matches: &[(usize, u64)],
) {
    let matched: BTreeMap<usize, u64> = matches.iter().copied().collect();
    for (i, d) in dets.iter().enumerate() {
        let Some(gt) = d.gt_id else { continue };
        stats.total += 1;
        let ok = match matched.get(&i) {
            Some(id) => map.landmarks[id].origin_truth == Some(gt),
            None => !candidates.iter().any(|id| map.landmarks[id].origin_truth == Some(gt)),
        };
        if ok {
            stats.correct += 1;
        }
    }
}

/// Frames at least this far apart can form a loop opportunity.
pub const MIN_LOOP_GAP: usize = 50;

/// Whether frame `j` revisits ground truth: some frame more than
/// [`MIN_LOOP_GAP`] earlier lies within `tau_l`.
pub fn loop_opportunity(gt: &[Pose], j: usize, tau_l: f64) -> bool {
    let p = gt[j].translation();
    j > MIN_LOOP_GAP
        && gt[..j - MIN_LOOP_GAP]
            .iter()
            .any(|q| (q.translation() - p).norm() <= tau_l)
}

fn attempt_position(constraints: &[ObjectConstraint], t_wc: &Pose, cfg: &LoopConfig) -> Vector3<f64> {
    if constraints.is_empty() {
        return *t_wc.translation();
    }
    match estimate_drift(constraints, &cfg.gn) {
        Ok((drift, _)) => *correct_current_pose(t_wc, &drift).translation(),
        Err(_) => *t_wc.translation(),
    }
}

/// Processes the whole stream once.
pub fn run_mapping(input: &PipelineInput, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    input.validate()?;
    let k = &cfg.intrinsics;
    let mut map = MapState::new();
    let mut out_loops = Vec::new();
    let mut attempts = Vec::new();
    let mut stats = AssociationStats::default();
    let mut times = StageTimes::default();
    let mut max_cost: f64 = 0.0;
    let mut applied: BTreeSet<(u64, u64)> = BTreeSet::new();

    for i in 0..input.len() {
        let frame = i as u64;
        let (pose, odom) = if i == 0 {
            (input.initial, None)
        } else {
            let prev = map.keyframes[&(frame - 1)];
            (prev.compose(&input.odometry[i - 1]), Some(input.odometry[i - 1]))
        };
        map.insert_keyframe(frame, input.stamps[i], pose, odom);

        let start = Instant::now();
        let dets = filter_proposals(&input.detections[i], &cfg.association.filter);
        let candidates = map.association_candidates(frame, &pose, k, &cfg.association);
        let sim = build_similarity_matrix(&dets, &map, &candidates, &pose, k, cfg.association.lambda);
        let assignment = assign_matches(&sim, cfg.association.threshold);
        score_detections(&mut stats, &map, &dets, &candidates, &assignment.matches);
        apply_associations(&mut map, frame, &pose, &assignment, &dets, cfg.association.history_cap);
        times.record("data_association", start);

        let start = Instant::now();
        let w = cfg.window.window.max(2);
        let window: Vec<u64> = map.keyframes.keys().rev().take(w).rev().copied().collect();
        if window.len() >= 2 {
            let report = refine_window(&mut map, &window, &cfg.window).map_err(|source| PipelineError::Stage {
                stage: "object_optimization",
                frame,
                source,
            })?;
            if let Some(s) = report.solve {
                max_cost = max_cost.max(s.final_cost);
            }
        }
        times.record("object_optimization", start);

        let lc = &cfg.loop_closure;
        if !(lc.enabled && frame > 0 && frame % lc.check_interval.max(1) == 0) {
            continue;
        }
        let start = Instant::now();
        let g_l = submap_graph(
            &map,
            (frame + 1).saturating_sub(lc.local_window)..=frame,
            cfg.graph.k_nn,
        );
        let matches = if frame > lc.min_loop_gap {
            let g_g = global_submap_graph(&map, frame, lc.local_window, lc.min_loop_gap, cfg.graph.k_nn);
            let m = match_graphs(&g_l, &g_g, &cfg.graph);
            let c = constraints_from_matches(&m, &g_l, &g_g, &cfg.loop_closure);
            (m, c)
        } else {
            (MatchSet::default(), Vec::new())
        };
        let (matches, constraints) = matches;
        let current = map.keyframes[&frame];
        let est = attempt_position(&constraints, &current, lc);
        let gt = input.ground_truth.as_ref().map_or(est, |g| *g[i].translation());
        attempts.push(LoopAttempt {
            frame,
            score: matches.score(),
            n_matches: matches.len(),
            est: est.into(),
            gt: gt.into(),
            opportunity: input
                .ground_truth
                .as_ref()
                .is_some_and(|g| loop_opportunity(g, i, cfg.tau_l)),
        });
        times.record("loop_detection", start);

        // Correct only when the matches reveal duplicates not merged yet.
        let fresh = matches
            .pairs
            .iter()
            .any(|p| p.local != p.global && !applied.contains(&(p.local, p.global)));
        if matches.len() >= cfg.graph.min_matches.max(1) && fresh {
            let start = Instant::now();
            let result = close_loop(&mut map, frame, &matches, &constraints, lc, cfg.association.history_cap).map_err(
                |source| PipelineError::Stage {
                    stage: "drift_correction",
                    frame,
                    source,
                },
            )?;
            applied.extend(matches.pairs.iter().map(|p| (p.local, p.global)));
            out_loops.push(result);
            times.record("drift_correction", start);
        }
    }

    let trajectory = map
        .keyframes
        .iter()
        .map(|(f, p)| (map.stamps.get(f).copied().unwrap_or_else(|| frame_stamp(*f)), *p))
        .collect();
    Ok(RunOutput {
        trajectory,
        map,
        loops: out_loops,
        attempts,
        association: stats,
        max_refinement_cost: max_cost,
        times,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    /// Mapping only, loop closure disabled.
    pub before: RunOutput,
    pub after: RunOutput,
    pub ate_before: Option<AteReport>,
    pub ate_after: Option<AteReport>,
}

fn ate_against(run: &RunOutput, input: &PipelineInput, with_scale: bool) -> Option<AteReport> {
    let gt = input.ground_truth.as_ref()?;
    let est = Trajectory::new(run.trajectory.clone()).ok()?;
    let gt = Trajectory::new(input.stamps.iter().copied().zip(gt.iter().copied()).collect()).ok()?;
    ate(&est, &gt, with_scale).ok()
}

/// Runs mapping without and with loop closure and scores both against
/// ground truth when available.
pub fn run_pipeline(input: &PipelineInput, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let mut mapping_only = cfg.clone();
    mapping_only.loop_closure.enabled = false;
    let before = run_mapping(input, &mapping_only)?;
    let after = if cfg.loop_closure.enabled {
        run_mapping(input, cfg)?
    } else {
        before.clone()
    };
    Ok(PipelineOutput {
        ate_before: ate_against(&before, input, cfg.align_scale),
        ate_after: ate_against(&after, input, cfg.align_scale),
        before,
        after,
    })
}
