//! Appearance signals attached to detections: HSV color histograms from
//! K-means++ clustering, unit embeddings, plus proposal gating and the
//! detection JSONL format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{camera_from_body, rot_z, BBox2D, Pose};

pub const DEFAULT_HIST_BINS: usize = 8;
const LLOYD_MAX_ITERATIONS: usize = 50;
const LLOYD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("pixel patch is empty")]
    EmptyPatch,
    #[error("similarity history is empty")]
    EmptyHistory,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing or malformed field `{field}`")]
    Schema { line: usize, field: String },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized color distribution over `K_c` clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ColorHistogram(Vec<f64>);

impl ColorHistogram {
    /// Normalizes the weights to sum to one. Already-normalized input is
    /// kept bit-for-bit.
    pub fn new(weights: Vec<f64>) -> Result<Self, FeatureError> {
        if weights.is_empty() {
            return Err(FeatureError::InvalidValue("histogram has no bins".into()));
        }
        if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(FeatureError::InvalidValue(
                "histogram weights must be finite and >= 0".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(FeatureError::InvalidValue("histogram weights sum to zero".into()));
        }
        if (sum - 1.0).abs() > 1e-12 {
            Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
        } else {
            Ok(Self(weights))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sorted_descending(&self) -> Self {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        Self(v)
    }
}

impl TryFrom<Vec<f64>> for ColorHistogram {
    type Error = FeatureError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ColorHistogram> for Vec<f64> {
    fn from(h: ColorHistogram) -> Self {
        h.0
    }
}

/// Unit-length appearance embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(v: Vec<f64>) -> Result<Self, FeatureError> {
        if v.is_empty() || !v.iter().all(|x| x.is_finite()) {
            return Err(FeatureError::InvalidValue(
                "embedding must be non-empty and finite".into(),
            ));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(FeatureError::InvalidValue("embedding has zero norm".into()));
        }
        if (norm - 1.0).abs() > 1e-12 {
            Ok(Self(v.into_iter().map(|x| x / norm).collect()))
        } else {
            Ok(Self(v))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = FeatureError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Hue in degrees [0, 360); saturation and value in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelPatch(Vec<Hsv>);

impl PixelPatch {
    pub fn new(pixels: Vec<Hsv>) -> Result<Self, FeatureError> {
        if pixels.is_empty() {
            return Err(FeatureError::EmptyPatch);
        }
        for p in &pixels {
            let ok = (0.0..360.0).contains(&p.h) && (0.0..=1.0).contains(&p.s) && (0.0..=1.0).contains(&p.v);
            if !ok {
                return Err(FeatureError::InvalidValue(format!("HSV pixel out of range: {p:?}")));
            }
        }
        Ok(Self(pixels))
    }

    pub fn pixels(&self) -> &[Hsv] {
        &self.0
    }
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// K-means++ seeding. Stops early when every point already coincides with a
/// chosen center.
fn seed_centers(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
    }
    centers
}

/// Clusters the patch's HSV values and returns the per-cluster member
/// fractions, largest first, zero-padded to `k` bins.
pub fn extract_color_histogram(patch: &PixelPatch, k: usize, seed: u64) -> Result<ColorHistogram, FeatureError> {
    if k == 0 {
        return Err(FeatureError::InvalidValue("cluster count must be >= 1".into()));
    }
    let points: Vec<[f64; 3]> = patch.pixels().iter().map(|p| [p.h / 360.0, p.s, p.v]).collect();
    if points.is_empty() {
        return Err(FeatureError::EmptyPatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(&points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];

    for _ in 0..LLOYD_MAX_ITERATIONS {
        for (l, p) in labels.iter_mut().zip(&points) {
            *l = nearest(p, &centers).0;
        }
        let mut sums = vec![[0.0f64; 3]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (l, p) in labels.iter().zip(&points) {
            counts[*l] += 1;
            for d in 0..3 {
                sums[*l][d] += p[d];
            }
        }
        let mut shift = 0.0f64;
        for (i, c) in centers.iter_mut().enumerate() {
            if counts[i] == 0 {
                continue;
            }
            let n = counts[i] as f64;
            let updated = [sums[i][0] / n, sums[i][1] / n, sums[i][2] / n];
            shift = shift.max(sq_dist(c, &updated).sqrt());
            *c = updated;
        }
        if shift < LLOYD_TOLERANCE {
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(&points) {
        *l = nearest(p, &centers).0;
    }

    let mut counts = vec![0usize; k];
    for l in &labels {
        counts[*l] += 1;
    }
    counts.sort_by(|a, b| b.cmp(a));
    let n = points.len() as f64;
    ColorHistogram::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

fn mean_dot<'a, I>(query: &[f64], history: I) -> Result<f64, FeatureError>
where
    I: ExactSizeIterator<Item = &'a [f64]>,
{
    let n = history.len();
    if n == 0 {
        return Err(FeatureError::EmptyHistory);
    }
    let mut acc = 0.0;
    for h in history {
        if h.len() != query.len() {
            return Err(FeatureError::DimMismatch {
                expected: query.len(),
                found: h.len(),
            });
        }
        acc += query.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc / n as f64)
}

/// Mean dot product between `h` and each stored histogram.
pub fn hist_similarity<'a, I>(h: &ColorHistogram, history: I) -> Result<f64, FeatureError>
where
    I: IntoIterator<Item = &'a ColorHistogram>,
    I::IntoIter: ExactSizeIterator,
{
    mean_dot(h.as_slice(), history.into_iter().map(|x| x.as_slice()))
}

/// Mean dot product between `e` and each stored embedding; in [-1, 1].
pub fn emb_similarity<'a, I>(e: &Embedding, history: I) -> Result<f64, FeatureError>
where
    I: IntoIterator<Item = &'a Embedding>,
    I::IntoIter: ExactSizeIterator,
{
    mean_dot(e.as_slice(), history.into_iter().map(|x| x.as_slice()))
}

/// One 3D detection in camera coordinates. The orientation is a yaw about the
/// camera's vertical axis; see [`Detection::pose_in_camera`].
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox2D,
    pub hist: ColorHistogram,
    pub emb: Embedding,
    pub t_co: Vector3<f64>,
    pub yaw_co: f64,
    pub dims: Vector3<f64>,
    pub score: f64,
    /// Simulator object id, carried only for evaluation.
    pub gt_id: Option<u64>,
}

impl Detection {
    /// T_co for a level camera: `R_co = R_cam_from_body * Rz(yaw_co)`.
    pub fn pose_in_camera(&self) -> Pose {
        Pose::from_parts_unchecked(camera_from_body() * rot_z(self.yaw_co), self.t_co)
    }

    /// Inverse of [`Detection::pose_in_camera`] for the yaw part.
    pub fn yaw_from_camera_pose(pose: &Pose) -> f64 {
        let m = camera_from_body().transpose() * pose.rotation();
        m[(1, 0)].atan2(m[(0, 0)])
    }

    pub fn range(&self) -> f64 {
        self.t_co.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Largest allowed extent on any axis, meters.
    pub max_dim: f64,
    /// Largest allowed camera-to-object distance, meters.
    pub max_range: f64,
    pub min_score: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_dim: 8.0,
            max_range: 40.0,
            min_score: 0.3,
        }
    }
}

/// Drops oversized, distant and low-confidence proposals, keeping order.
pub fn filter_proposals(dets: &[Detection], cfg: &FilterConfig) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.dims.iter().all(|x| *x <= cfg.max_dim) && d.range() <= cfg.max_range && d.score >= cfg.min_score)
        .cloned()
        .collect()
}

/// Detections observed at one keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub frame: u64,
    pub stamp: f64,
    pub detections: Vec<Detection>,
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    frame: u64,
    stamp: f64,
    label: &'a str,
    bbox: [f64; 4],
    dims: [f64; 3],
    t_co: [f64; 3],
    yaw_co: f64,
    hist: &'a [f64],
    emb: &'a [f64],
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_id: Option<u64>,
}

const REQUIRED_FIELDS: [&str; 10] = [
    "frame", "stamp", "label", "bbox", "dims", "t_co", "yaw_co", "hist", "emb", "score",
];

fn field_f64(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<f64, FeatureError> {
    obj.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| FeatureError::Schema {
            line,
            field: key.into(),
        })
}

fn field_vec(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    line: usize,
    len: Option<usize>,
) -> Result<Vec<f64>, FeatureError> {
    let schema = || FeatureError::Schema {
        line,
        field: key.into(),
    };
    let arr = obj.get(key).and_then(Value::as_array).ok_or_else(schema)?;
    let vals: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
    let vals = vals.ok_or_else(schema)?;
    if len.is_some_and(|n| n != vals.len()) {
        return Err(schema());
    }
    Ok(vals)
}

fn parse_record(line_no: usize, text: &str) -> Result<(u64, f64, Detection), FeatureError> {
    let value: Value = serde_json::from_str(text).map_err(|e| FeatureError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| FeatureError::Parse {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    for f in REQUIRED_FIELDS {
        if !obj.contains_key(f) {
            return Err(FeatureError::Schema {
                line: line_no,
                field: f.into(),
            });
        }
    }
    let frame = obj
        .get("frame")
        .and_then(Value::as_u64)
        .ok_or_else(|| FeatureError::Schema {
            line: line_no,
            field: "frame".into(),
        })?;
    let stamp = field_f64(obj, "stamp", line_no)?;
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| FeatureError::Schema {
            line: line_no,
            field: "label".into(),
        })?
        .to_string();
    let b = field_vec(obj, "bbox", line_no, Some(4))?;
    let bbox = BBox2D::new(b[0], b[1], b[2], b[3]).map_err(|e| FeatureError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let d = field_vec(obj, "dims", line_no, Some(3))?;
    if !d.iter().all(|x| *x > 0.0) {
        return Err(FeatureError::Parse {
            line: line_no,
            message: "dims must be positive".into(),
        });
    }
    let t = field_vec(obj, "t_co", line_no, Some(3))?;
    let yaw_co = field_f64(obj, "yaw_co", line_no)?;
    let at_line = |e: FeatureError| FeatureError::Parse {
        line: line_no,
        message: e.to_string(),
    };
    let hist = ColorHistogram::new(field_vec(obj, "hist", line_no, None)?).map_err(at_line)?;
    let emb = Embedding::new(field_vec(obj, "emb", line_no, None)?).map_err(at_line)?;
    let score = field_f64(obj, "score", line_no)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(FeatureError::Parse {
            line: line_no,
            message: format!("score {score} outside [0, 1]"),
        });
    }
    let gt_id = obj.get("gt_id").and_then(Value::as_u64);
    Ok((
        frame,
        stamp,
        Detection {
            label,
            bbox,
            hist,
            emb,
            t_co: Vector3::new(t[0], t[1], t[2]),
            yaw_co,
            dims: Vector3::new(d[0], d[1], d[2]),
            score,
            gt_id,
        },
    ))
}

/// Parses detection JSONL, grouping by frame id in ascending order.
pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<FrameDetections>, FeatureError> {
    let mut frames: BTreeMap<u64, FrameDetections> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (frame, stamp, det) = parse_record(i + 1, &line)?;
        frames
            .entry(frame)
            .or_insert_with(|| FrameDetections {
                frame,
                stamp,
                detections: Vec::new(),
            })
            .detections
            .push(det);
    }
    Ok(frames.into_values().collect())
}

pub fn ingest_detections(path: &Path) -> Result<Vec<FrameDetections>, FeatureError> {
    let f = std::fs::File::open(path)?;
    read_detections(std::io::BufReader::new(f))
}

pub fn write_detections<W: Write>(mut w: W, frames: &[FrameDetections]) -> Result<(), FeatureError> {
    for fd in frames {
        for d in &fd.detections {
            let rec = DetectionRecord {
                frame: fd.frame,
                stamp: fd.stamp,
                label: &d.label,
                bbox: d.bbox.to_array(),
                dims: [d.dims.x, d.dims.y, d.dims.z],
                t_co: [d.t_co.x, d.t_co.y, d.t_co.z],
                yaw_co: d.yaw_co,
                hist: d.hist.as_slice(),
                emb: d.emb.as_slice(),
                score: d.score,
                gt_id: d.gt_id,
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| FeatureError::InvalidValue(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(label: &str, range: f64, dims: [f64; 3], score: f64) -> Detection {
        Detection {
            label: label.into(),
            bbox: BBox2D::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            hist: ColorHistogram::new(vec![1.0, 0.0]).unwrap(),
            emb: Embedding::new(vec![1.0, 0.0]).unwrap(),
            t_co: Vector3::new(0.0, 0.0, range),
            yaw_co: 0.0,
            dims: Vector3::from(dims),
            score,
            gt_id: None,
        }
    }

    fn hsv(h: f64, s: f64, v: f64) -> Hsv {
        Hsv { h, s, v }
    }

    #[test]
    fn single_color_patch() {
        let patch = PixelPatch::new(vec![hsv(120.0, 0.5, 0.5); 40]).unwrap();
        let h = extract_color_histogram(&patch, 4, 7).unwrap();
        assert_eq!(h.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_color_patch_splits_evenly() {
        let mut px = vec![hsv(10.0, 0.9, 0.9); 50];
        px.extend(vec![hsv(200.0, 0.1, 0.2); 50]);
        let patch = PixelPatch::new(px).unwrap();
        let h = extract_color_histogram(&patch, 2, 1).unwrap();
        assert_eq!(h.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn histogram_is_seed_independent_on_separated_data() {
        let mut px = Vec::new();
        for i in 0..30 {
            let j = i as f64 * 0.001;
            px.push(hsv(20.0 + j, 0.8, 0.8));
            if i % 2 == 0 {
                px.push(hsv(220.0 + j, 0.2, 0.3 + j));
            }
            if i % 3 == 0 {
                px.push(hsv(100.0, 0.5 + j, 0.1));
            }
        }
        let patch = PixelPatch::new(px).unwrap();
        let a = extract_color_histogram(&patch, 3, 1).unwrap();
        let b = extract_color_histogram(&patch, 3, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_slice(), &[30.0 / 55.0, 15.0 / 55.0, 10.0 / 55.0]);
    }

    #[test]
    fn empty_patch_rejected() {
        assert!(matches!(PixelPatch::new(vec![]), Err(FeatureError::EmptyPatch)));
    }

    #[test]
    fn hist_similarity_cases() {
        let a = ColorHistogram::new(vec![1.0, 0.0]).unwrap();
        let b = ColorHistogram::new(vec![0.0, 1.0]).unwrap();
        let half = ColorHistogram::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(hist_similarity(&a, &[a.clone()]).unwrap(), 1.0);
        assert_eq!(hist_similarity(&a, &[b.clone()]).unwrap(), 0.0);
        assert_eq!(hist_similarity(&half, &[a, b]).unwrap(), 0.5);
        let empty: Vec<ColorHistogram> = vec![];
        assert!(matches!(
            hist_similarity(&half, &empty),
            Err(FeatureError::EmptyHistory)
        ));
        let three = ColorHistogram::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            hist_similarity(&half, &[three]),
            Err(FeatureError::DimMismatch { .. })
        ));
    }

    #[test]
    fn emb_similarity_cases() {
        let e = Embedding::new(vec![0.6, 0.8]).unwrap();
        let neg = Embedding::new(vec![-0.6, -0.8]).unwrap();
        let orth = Embedding::new(vec![0.8, -0.6]).unwrap();
        assert!((emb_similarity(&e, &[e.clone()]).unwrap() - 1.0).abs() < 1e-15);
        assert!(emb_similarity(&e, &[orth]).unwrap().abs() < 1e-15);
        assert!(emb_similarity(&e, &[e.clone(), neg]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn embedding_is_renormalized() {
        let e = Embedding::new(vec![2.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn filter_gates() {
        let cfg = FilterConfig {
            max_dim: 6.0,
            max_range: 40.0,
            min_score: 0.3,
        };
        assert!(filter_proposals(&[det("car", 80.0, [2.0, 2.0, 1.5], 0.9)], &cfg).is_empty());
        assert_eq!(
            filter_proposals(&[det("car", 10.0, [2.0, 2.0, 1.5], 0.9)], &cfg).len(),
            1
        );
        assert!(filter_proposals(&[det("car", 10.0, [7.0, 2.0, 1.5], 0.9)], &cfg).is_empty());
        assert!(filter_proposals(&[det("car", 10.0, [2.0, 2.0, 1.5], 0.1)], &cfg).is_empty());
        assert!(filter_proposals(&[], &cfg).is_empty());
    }

    #[test]
    fn camera_yaw_round_trip() {
        let mut d = det("car", 5.0, [1.0, 1.0, 1.0], 1.0);
        d.yaw_co = 0.7;
        let p = d.pose_in_camera();
        assert!((Detection::yaw_from_camera_pose(&p) - 0.7).abs() < 1e-15);
        assert!(Pose::new(*p.rotation(), *p.translation()).is_ok());
    }

    const GOOD: &str = r#"{"frame":1,"stamp":0.1,"label":"car","bbox":[1,2,30,40],"dims":[4,2,1.5],"t_co":[0,0,5],"yaw_co":0.1,"hist":[0.5,0.5],"emb":[0,2],"score":0.9}
{"frame":0,"stamp":0.0,"label":"van","bbox":[1,2,30,40],"dims":[4,2,1.5],"t_co":[0,0,5],"yaw_co":0.1,"hist":[2,2],"emb":[1,0],"score":0.9,"gt_id":4}
"#;

    #[test]
    fn read_groups_and_sorts_frames() {
        let frames = read_detections(GOOD.as_bytes()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].frame, 0);
        assert_eq!(frames[0].detections[0].gt_id, Some(4));
        assert_eq!(frames[0].detections[0].hist.as_slice(), &[0.5, 0.5]);
        assert_eq!(frames[1].detections[0].emb.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_label_is_schema_error() {
        let text = "{\"frame\":1,\"stamp\":0.1,\"bbox\":[1,2,30,40],\"dims\":[4,2,1.5],\"t_co\":[0,0,5],\"yaw_co\":0.1,\"hist\":[1],\"emb\":[1],\"score\":0.9}\n";
        let input = format!("{}\n{}", GOOD.lines().next().unwrap(), text);
        let err = read_detections(input.as_bytes()).unwrap_err();
        match err {
            FeatureError::Schema { line, field } => {
                assert_eq!(line, 2);
                assert_eq!(field, "label");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = read_detections("\n{not json\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FeatureError::Parse { line: 2, .. }));
    }
}
