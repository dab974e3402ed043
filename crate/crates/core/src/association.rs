//! Detection-to-landmark association and landmark bookkeeping.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::features::{emb_similarity, hist_similarity, ColorHistogram, Detection, Embedding, FilterConfig};
use crate::geometry::{iou_2d, predict_bbox, BBox2D, CameraIntrinsics, Cuboid, Pose};
use crate::hungarian::max_weight_assignment;

/// Per-frame measurement of a landmark, kept for window refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub t_co: Pose,
    pub dims: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub label: String,
    /// T_wo.
    pub pose: Pose,
    pub dims: Vector3<f64>,
    pub hist_history: VecDeque<ColorHistogram>,
    pub emb_history: VecDeque<Embedding>,
    /// Ascending, no duplicates.
    pub observed_frames: Vec<u64>,
    pub measurements: BTreeMap<u64, Measurement>,
    /// Simulator id of the detection that spawned this landmark. Evaluation only.
    pub origin_truth: Option<u64>,
}

impl Landmark {
    pub fn obs_count(&self) -> usize {
        self.observed_frames.len()
    }

    pub fn first_frame(&self) -> u64 {
        self.observed_frames[0]
    }

    pub fn last_frame(&self) -> u64 {
        *self.observed_frames.last().expect("landmark without observations")
    }

    pub fn cuboid(&self) -> Cuboid {
        Cuboid::from_pose(&self.pose, self.dims).expect("landmark dims are positive")
    }

    pub fn position(&self) -> Vector3<f64> {
        *self.pose.translation()
    }

    /// Mean of the stored histograms, renormalized and sorted.
    pub fn mean_hist(&self) -> Vec<f64> {
        let n = self.hist_history[0].len();
        let mut acc = vec![0.0; n];
        for h in &self.hist_history {
            for (a, x) in acc.iter_mut().zip(h.as_slice()) {
                *a += x;
            }
        }
        let sum: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= sum);
        acc.sort_by(|a, b| b.total_cmp(a));
        acc
    }

    /// Mean of the stored embeddings, renormalized to unit length.
    pub fn mean_emb(&self) -> Vec<f64> {
        let n = self.emb_history[0].len();
        let mut acc = vec![0.0; n];
        for e in &self.emb_history {
            for (a, x) in acc.iter_mut().zip(e.as_slice()) {
                *a += x;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|a| *a /= norm);
        }
        acc
    }

    fn push_history(&mut self, hist: ColorHistogram, emb: Embedding, cap: usize) {
        self.hist_history.push_back(hist);
        self.emb_history.push_back(emb);
        while self.hist_history.len() > cap {
            self.hist_history.pop_front();
        }
        while self.emb_history.len() > cap {
            self.emb_history.pop_front();
        }
    }

    fn observe(&mut self, frame: u64, det: &Detection, cap: usize) {
        self.push_history(det.hist.clone(), det.emb.clone(), cap);
        if let Err(pos) = self.observed_frames.binary_search(&frame) {
            self.observed_frames.insert(pos, frame);
        }
        self.measurements.insert(
            frame,
            Measurement {
                t_co: det.pose_in_camera(),
                dims: det.dims,
            },
        );
    }

    /// Merges `other` (a later duplicate of the same object) into `self`.
    pub fn absorb(&mut self, other: Landmark, cap: usize) {
        for (h, e) in other.hist_history.into_iter().zip(other.emb_history) {
            self.push_history(h, e, cap);
        }
        for f in other.observed_frames {
            if let Err(pos) = self.observed_frames.binary_search(&f) {
                self.observed_frames.insert(pos, f);
            }
        }
        for (f, m) in other.measurements {
            self.measurements.entry(f).or_insert(m);
        }
    }
}

/// Landmarks plus the estimated keyframe trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapState {
    pub landmarks: BTreeMap<u64, Landmark>,
    /// Frame id -> T_wc.
    pub keyframes: BTreeMap<u64, Pose>,
    pub stamps: BTreeMap<u64, f64>,
    /// Frame id -> odometry measurement from the previous keyframe.
    pub odometry: BTreeMap<u64, Pose>,
    next_id: u64,
}

impl MapState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_keyframe(&mut self, frame: u64, stamp: f64, pose: Pose, odometry: Option<Pose>) {
        self.keyframes.insert(frame, pose);
        self.stamps.insert(frame, stamp);
        if let Some(o) = odometry {
            self.odometry.insert(frame, o);
        }
    }

    pub fn next_landmark_id(&self) -> u64 {
        self.next_id
    }

    /// Spawns a landmark from a detection seen at `frame` by a camera at `t_wc`.
    pub fn spawn_landmark(&mut self, frame: u64, t_wc: &Pose, det: &Detection, cap: usize) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut lm = Landmark {
            id,
            label: det.label.clone(),
            pose: t_wc.compose(&det.pose_in_camera()),
            dims: det.dims,
            hist_history: VecDeque::new(),
            emb_history: VecDeque::new(),
            observed_frames: Vec::new(),
            measurements: BTreeMap::new(),
            origin_truth: det.gt_id,
        };
        lm.observe(frame, det, cap);
        self.landmarks.insert(id, lm);
        id
    }

    /// Landmarks eligible for association at `frame`: seen within the last
    /// `recency` frames, within range, and with their center projecting
    /// into the image.
    pub fn association_candidates(&self, frame: u64, t_wc: &Pose, k: &CameraIntrinsics, cfg: &AssocConfig) -> Vec<u64> {
        let t_cw = t_wc.inverse();
        self.landmarks
            .values()
            .filter(|lm| lm.last_frame() + cfg.candidate_recency >= frame)
            .filter(|lm| {
                let pc = t_cw.transform_point(&lm.position());
                if pc.z <= 0.0 || pc.norm() > cfg.filter.max_range {
                    return false;
                }
                let (u, v) = k.project(&pc);
                (0.0..=k.width).contains(&u)
                    && (0.0..=k.height).contains(&v)
                    && predict_bbox(&lm.cuboid(), &t_cw, k).is_ok()
            })
            .map(|lm| lm.id)
            .collect()
    }

    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            landmarks: self
                .landmarks
                .values()
                .map(|lm| LandmarkRecord {
                    id: lm.id,
                    label: lm.label.clone(),
                    t: [
                        lm.pose.translation().x,
                        lm.pose.translation().y,
                        lm.pose.translation().z,
                    ],
                    yaw: lm.pose.yaw(),
                    dims: [lm.dims.x, lm.dims.y, lm.dims.z],
                    obs_count: lm.obs_count(),
                    first_frame: lm.first_frame(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub id: u64,
    pub label: String,
    pub t: [f64; 3],
    pub yaw: f64,
    pub dims: [f64; 3],
    pub obs_count: usize,
    pub first_frame: u64,
}

/// JSON map export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub landmarks: Vec<LandmarkRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssocConfig {
    /// Weight between box overlap and appearance terms, in [0, 1].
    pub lambda: f64,
    /// Minimum similarity for a match.
    pub threshold: f64,
    /// Histogram/embedding history length per landmark.
    pub history_cap: usize,
    /// Landmarks not observed for more than this many frames are left to
    /// loop closure instead of being re-associated directly.
    pub candidate_recency: u64,
    pub filter: FilterConfig,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            threshold: 0.35,
            history_cap: 10,
            candidate_recency: 120,
            filter: FilterConfig::default(),
        }
    }
}

fn weighted_similarity(d: &Detection, o: &Landmark, predicted: Option<&BBox2D>, lambda: f64) -> f64 {
    if d.label != o.label {
        return 0.0;
    }
    let iou = predicted.map_or(0.0, |b| iou_2d(&d.bbox, b));
    let his = hist_similarity(&d.hist, &o.hist_history).unwrap_or(0.0);
    let emb = emb_similarity(&d.emb, &o.emb_history).unwrap_or(0.0).max(0.0);
    lambda * iou + lambda * (1.0 - lambda) * his + (1.0 - lambda) * (1.0 - lambda) * emb
}

/// Similarity between a detection and a landmark seen from `t_wc`.
/// Zero across labels; a negative embedding term is clamped to zero.
pub fn detection_similarity(d: &Detection, o: &Landmark, t_wc: &Pose, k: &CameraIntrinsics, lambda: f64) -> f64 {
    let predicted = predict_bbox(&o.cuboid(), &t_wc.inverse(), k).ok();
    weighted_similarity(d, o, predicted.as_ref(), lambda)
}

/// Rows are detections, columns are the landmarks in `landmark_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: DMatrix<f64>,
    pub landmark_ids: Vec<u64>,
}

pub fn build_similarity_matrix(
    dets: &[Detection],
    map: &MapState,
    landmark_ids: &[u64],
    t_wc: &Pose,
    k: &CameraIntrinsics,
    lambda: f64,
) -> SimilarityMatrix {
    let t_cw = t_wc.inverse();
    let landmarks: Vec<&Landmark> = landmark_ids.iter().map(|id| &map.landmarks[id]).collect();
    let boxes: Vec<Option<BBox2D>> = landmarks
        .iter()
        .map(|o| predict_bbox(&o.cuboid(), &t_cw, k).ok())
        .collect();
    let scores = DMatrix::from_fn(dets.len(), landmarks.len(), |i, j| {
        weighted_similarity(&dets[i], landmarks[j], boxes[j].as_ref(), lambda)
    });
    SimilarityMatrix {
        scores,
        landmark_ids: landmark_ids.to_vec(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// (detection index, landmark id)
    pub matches: Vec<(usize, u64)>,
    pub unmatched: Vec<usize>,
}

/// Optimal one-to-one assignment over entries with score >= `threshold`
/// (and strictly positive).
pub fn assign_matches(m: &SimilarityMatrix, threshold: f64) -> Assignment {
    let gated = m.scores.map(|s| if s >= threshold && s > 0.0 { s } else { 0.0 });
    let rows = max_weight_assignment(&gated);
    let mut out = Assignment::default();
    for (i, col) in rows.into_iter().enumerate() {
        match col {
            Some(j) if gated[(i, j)] > 0.0 => out.matches.push((i, m.landmark_ids[j])),
            _ => out.unmatched.push(i),
        }
    }
    out
}

/// Applies an assignment: matched landmarks record the observation, each
/// unmatched detection spawns a landmark. Returns the new landmark ids.
pub fn apply_associations(
    map: &mut MapState,
    frame: u64,
    t_wc: &Pose,
    assignment: &Assignment,
    dets: &[Detection],
    history_cap: usize,
) -> Vec<u64> {
    for (i, id) in &assignment.matches {
        if let Some(lm) = map.landmarks.get_mut(id) {
            lm.observe(frame, &dets[*i], history_cap);
        }
    }
    assignment
        .unmatched
        .iter()
        .map(|i| map.spawn_landmark(frame, t_wc, &dets[*i], history_cap))
        .collect()
}
