//! Deterministic synthetic scenarios: labelled cuboids on a ground plane, a
//! camera path, drifting odometry and noisy 3D detections.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3, Vector6};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ColorHistogram, Detection, Embedding, FrameDetections};
use crate::geometry::{
    camera_from_body, level_camera_rotation, predict_bbox, rot_z, wrap_angle, CameraIntrinsics, Cuboid, Pose, Twist,
};

const STREAM_ODOMETRY: u64 = 1;
const STREAM_DETECTIONS: u64 = 1 << 32;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("placed {placed} of {requested} objects before giving up")]
    PlacementFailure { placed: usize, requested: usize },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    /// Nominal length, width, height in meters.
    pub dims: [f64; 3],
    pub weight: f64,
}

impl LabelSpec {
    fn new(name: &str, dims: [f64; 3], weight: f64) -> Self {
        Self {
            name: name.into(),
            dims,
            weight,
        }
    }
}

pub fn default_labels() -> Vec<LabelSpec> {
    vec![
        LabelSpec::new("car", [4.4, 1.8, 1.5], 0.5),
        LabelSpec::new("van", [5.0, 2.0, 2.0], 0.2),
        LabelSpec::new("truck", [5.8, 2.4, 2.6], 0.1),
        LabelSpec::new("bicycle", [1.8, 0.6, 1.2], 0.1),
        LabelSpec::new("bench", [1.6, 0.6, 0.9], 0.1),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Line,
    Rectangle,
    Curve,
}

/// Final leg that comes back to the middle of the first segment from a
/// rotated direction, reached by a detour outside sensor range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RevisitConfig {
    /// Heading of the revisit leg relative to the first segment, degrees.
    pub offset_deg: f64,
    /// Distance driven past the revisited point.
    pub overshoot: f64,
}

impl Default for RevisitConfig {
    fn default() -> Self {
        Self {
            offset_deg: 130.0,
            overshoot: 15.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub shape: Shape,
    /// Line length, rectangle width along the first side, or curve arc length.
    pub span: f64,
    /// Rectangle second side.
    pub height: f64,
    /// Curve radius.
    pub radius: f64,
    /// Distance between keyframes.
    pub spacing: f64,
    pub revisit: Option<RevisitConfig>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Rectangle,
            span: 40.0,
            height: 20.0,
            radius: 40.0,
            spacing: 1.0,
            revisit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Odometry rotation noise per meter travelled, rad/m.
    pub odom_rot_per_m: f64,
    /// Odometry translation noise per meter travelled, m/m.
    pub odom_trans_per_m: f64,
    /// Detection translation noise per axis, m.
    pub det_trans: f64,
    pub det_yaw: f64,
    pub det_dims: f64,
    pub label_flip: f64,
    /// Dirichlet concentration of per-detection histogram jitter; 0 disables it.
    pub hist_concentration: f64,
    /// Per-dimension Gaussian noise added to embedding latents.
    pub emb_noise: f64,
    pub dropout: f64,
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            odom_rot_per_m: 0.0,
            odom_trans_per_m: 0.0,
            det_trans: 0.0,
            det_yaw: 0.0,
            det_dims: 0.0,
            label_flip: 0.0,
            hist_concentration: 0.0,
            emb_noise: 0.0,
            dropout: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            odom_rot_per_m: 0.002,
            odom_trans_per_m: 0.01,
            det_trans: 0.15,
            det_yaw: 0.05,
            det_dims: 0.1,
            label_flip: 0.01,
            hist_concentration: 200.0,
            emb_noise: 0.03,
            dropout: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_objects: usize,
    pub labels: Vec<LabelSpec>,
    /// Objects are placed in `[min, max]` on the ground plane; when absent,
    /// in the path's bounding box grown by `world_margin`.
    pub world_min: Option<[f64; 2]>,
    pub world_max: Option<[f64; 2]>,
    pub world_margin: f64,
    pub min_separation: f64,
    /// Minimum distance between an object center and any keyframe.
    pub path_clearance: f64,
    pub trajectory: TrajectoryConfig,
    pub intrinsics: CameraIntrinsics,
    pub hfov_deg: f64,
    pub max_range: f64,
    pub hist_bins: usize,
    pub emb_dim: usize,
    /// Angle between label anchors on the unit sphere, degrees.
    pub anchor_separation_deg: f64,
    /// Typical angle between an instance embedding and its label anchor.
    pub instance_spread_deg: f64,
    pub noise: NoiseConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_objects: 30,
            labels: default_labels(),
            world_min: None,
            world_max: None,
            world_margin: 15.0,
            min_separation: 2.0,
            path_clearance: 3.0,
            trajectory: TrajectoryConfig::default(),
            intrinsics: CameraIntrinsics::default(),
            hfov_deg: 110.0,
            max_range: 40.0,
            hist_bins: 8,
            emb_dim: 16,
            anchor_separation_deg: 30.0,
            instance_spread_deg: 45.0,
            noise: NoiseConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        let n = &self.noise;
        let sigmas = [
            n.odom_rot_per_m,
            n.odom_trans_per_m,
            n.det_trans,
            n.det_yaw,
            n.det_dims,
            n.emb_noise,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise standard deviations must be >= 0");
        }
        if ![n.label_flip, n.dropout].iter().all(|p| (0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(n.hist_concentration >= 0.0 && n.hist_concentration.is_finite()) {
            return bad("histogram concentration must be finite and >= 0");
        }
        if self.n_objects == 0 {
            return bad("n_objects must be >= 1");
        }
        if self.labels.is_empty()
            || self
                .labels
                .iter()
                .any(|l| !(l.weight > 0.0) || l.dims.iter().any(|d| !(*d > 0.0)))
        {
            return bad("labels need positive weights and dims");
        }
        if self.emb_dim < self.labels.len() + 1 || self.hist_bins == 0 {
            return bad("emb_dim must exceed the label count and hist_bins must be >= 1");
        }
        let t = &self.trajectory;
        if !(t.span > 0.0 && t.spacing > 0.0) {
            return bad("trajectory span and spacing must be > 0");
        }
        if t.shape == Shape::Rectangle && !(t.height > 0.0) {
            return bad("rectangle height must be > 0");
        }
        if t.shape == Shape::Curve && !(t.radius > 0.0) {
            return bad("curve radius must be > 0");
        }
        if !(self.max_range > 0.0 && self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad("max_range must be > 0 and hfov in (0, 180)");
        }
        self.intrinsics
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrueObject {
    pub id: u64,
    pub label: String,
    pub cuboid: Cuboid,
    pub hist: ColorHistogram,
    pub emb: Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<Pose>,
    pub objects: Vec<TrueObject>,
    /// First keyframe of the revisit leg, if any.
    pub revisit_start: Option<usize>,
}

fn camera_pose(p: Vector2<f64>, heading: f64) -> Pose {
    Pose::from_parts_unchecked(level_camera_rotation(heading), Vector3::new(p.x, p.y, 0.0))
}

fn dir(h: f64) -> Vector2<f64> {
    Vector2::new(h.cos(), h.sin())
}

/// Heading of a pose produced by [`camera_pose`].
pub fn camera_heading(p: &Pose) -> f64 {
    // Optical axis (camera z) expressed in the world.
    let z = p.rotation().column(2);
    z.y.atan2(z.x)
}

/// Samples a polyline at `spacing`, including both ends.
fn sample_polyline(pts: &[Vector2<f64>], spacing: f64) -> Vec<(Vector2<f64>, f64)> {
    let lens: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = lens.iter().sum();
    let n = (total / spacing).round().max(1.0) as usize;
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 0..=n {
        let s = (i as f64 * step).min(total);
        while seg + 1 < lens.len() && s >= seg_start + lens[seg] - 1e-9 {
            seg_start += lens[seg];
            seg += 1;
        }
        let a = pts[seg];
        let b = pts[seg + 1];
        let u = ((s - seg_start) / lens[seg]).clamp(0.0, 1.0);
        let h = (b.y - a.y).atan2(b.x - a.x);
        out.push((a + (b - a) * u, h));
    }
    out
}

/// Positions and headings of the base shape, plus the first segment's
/// midpoint and heading.
fn base_shape(t: &TrajectoryConfig) -> (Vec<(Vector2<f64>, f64)>, Vector2<f64>, f64) {
    match t.shape {
        Shape::Line => {
            let pts = [Vector2::zeros(), Vector2::new(t.span, 0.0)];
            (sample_polyline(&pts, t.spacing), Vector2::new(0.5 * t.span, 0.0), 0.0)
        }
        Shape::Rectangle => {
            let (w, h) = (t.span, t.height);
            let pts = [
                Vector2::zeros(),
                Vector2::new(w, 0.0),
                Vector2::new(w, h),
                Vector2::new(0.0, h),
                Vector2::zeros(),
            ];
            (sample_polyline(&pts, t.spacing), Vector2::new(0.5 * w, 0.0), 0.0)
        }
        Shape::Curve => {
            let n = (t.span / t.spacing).round().max(1.0) as usize;
            let r = t.radius;
            let at = |s: f64| (Vector2::new(r * (s / r).sin(), r * (1.0 - (s / r).cos())), s / r);
            let samples = (0..=n).map(|i| at(t.span * i as f64 / n as f64)).collect();
            let (q, hq) = at(0.25 * t.span);
            (samples, q, hq)
        }
    }
}

fn world_bounds(cfg: &ScenarioConfig, base: &[(Vector2<f64>, f64)]) -> (Vector2<f64>, Vector2<f64>) {
    if let (Some(a), Some(b)) = (cfg.world_min, cfg.world_max) {
        return (Vector2::new(a[0], a[1]), Vector2::new(b[0], b[1]));
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for (p, _) in base {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let m = Vector2::repeat(cfg.world_margin);
    (lo - m, hi + m)
}

/// Distance along `d` from `p` to the circle (center `c`, radius `r`),
/// assuming `p` lies inside it.
fn exit_distance(p: Vector2<f64>, d: Vector2<f64>, c: Vector2<f64>, r: f64) -> f64 {
    let o = p - c;
    let b = o.dot(&d);
    let disc = b * b - (o.norm_squared() - r * r);
    -b + disc.max(0.0).sqrt()
}

/// Keyframe poses along the configured path.
pub fn generate_trajectory(cfg: &ScenarioConfig) -> (Vec<Pose>, Option<usize>) {
    let t = &cfg.trajectory;
    let (mut samples, q, hq) = base_shape(t);
    let mut revisit_start = None;
    if let Some(rv) = t.revisit {
        let (lo, hi) = world_bounds(cfg, &samples);
        let c = (lo + hi) * 0.5;
        let radius = 0.5 * (hi - lo).norm() + cfg.max_range + 5.0;
        let (end, h_end) = *samples.last().expect("non-empty path");
        // Leave the world straight ahead.
        let exit = end + dir(h_end) * exit_distance(end, dir(h_end), c, radius);
        let hr = hq + rv.offset_deg.to_radians();
        let entry = q - dir(hr) * exit_distance(q, -dir(hr), c, radius);
        let mut pts = vec![end, exit];
        let a0 = (exit.y - c.y).atan2(exit.x - c.x);
        let a1 = (entry.y - c.y).atan2(entry.x - c.x);
        let sweep = wrap_angle(a1 - a0);
        let arc_steps = ((sweep.abs() * radius / t.spacing).ceil() as usize).max(1);
        for k in 1..arc_steps {
            let a = a0 + sweep * k as f64 / arc_steps as f64;
            pts.push(c + dir(a) * radius);
        }
        pts.push(entry);
        let detour = sample_polyline(&pts, t.spacing);
        samples.extend(detour.into_iter().skip(1));
        revisit_start = Some(samples.len());
        let approach = sample_polyline(&[entry, q + dir(hr) * rv.overshoot], t.spacing);
        samples.extend(approach.into_iter().skip(1));
    }
    (
        samples.into_iter().map(|(p, h)| camera_pose(p, h)).collect(),
        revisit_start,
    )
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = alpha
        .iter()
        .map(|a| Gamma::new(*a, 1.0).expect("positive shape").sample(rng).max(1e-300))
        .collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}

fn label_anchor(index: usize, dim: usize, separation: f64) -> Vec<f64> {
    // Anchors a_i = cos(b) e_0 + sin(b) e_{i+1} have pairwise angle `separation`.
    let b = separation.cos().sqrt().acos();
    let mut v = vec![0.0; dim];
    v[0] = b.cos();
    v[index + 1] = b.sin();
    v
}

fn perturbed_unit(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Embedding {
    let v: Vec<f64> = base.iter().map(|x| x + sigma * gaussian(rng)).collect();
    Embedding::new(v).expect("non-degenerate embedding")
}

/// Places objects and draws their appearance.
pub fn generate_world(cfg: &ScenarioConfig) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let (poses, revisit_start) = generate_trajectory(cfg);
    let (base, _, _) = base_shape(&cfg.trajectory);
    let (lo, hi) = world_bounds(cfg, &base);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights =
        WeightedIndex::new(cfg.labels.iter().map(|l| l.weight)).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let path: Vec<Vector2<f64>> = poses.iter().map(|p| p.translation().xy()).collect();
    let instance_sigma = cfg.instance_spread_deg.to_radians().tan() / (cfg.emb_dim as f64).sqrt();

    let mut objects: Vec<TrueObject> = Vec::with_capacity(cfg.n_objects);
    let mut attempts = 0;
    while objects.len() < cfg.n_objects {
        if attempts >= PLACEMENT_ATTEMPTS {
            return Err(SimError::PlacementFailure {
                placed: objects.len(),
                requested: cfg.n_objects,
            });
        }
        attempts += 1;
        let p = Vector2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        let separated = objects
            .iter()
            .all(|o| (o.cuboid.center.xy() - p).norm() >= cfg.min_separation);
        let clear = path.iter().all(|q| (q - p).norm() >= cfg.path_clearance);
        if !(separated && clear) {
            continue;
        }
        let li = weights.sample(&mut rng);
        let spec = &cfg.labels[li];
        let dims = Vector3::from_fn(|i, _| spec.dims[i] * rng.random_range(0.9..=1.1));
        let yaw = rng.random_range(-PI..PI);
        let cuboid = Cuboid::new(Vector3::new(p.x, p.y, 0.0), yaw, dims).expect("positive dims");
        let mut hist = dirichlet(&vec![1.0; cfg.hist_bins], &mut rng);
        hist.sort_by(|a, b| b.total_cmp(a));
        let anchor = label_anchor(li, cfg.emb_dim, cfg.anchor_separation_deg.to_radians());
        objects.push(TrueObject {
            id: objects.len() as u64,
            label: spec.name.clone(),
            cuboid,
            hist: ColorHistogram::new(hist).expect("valid histogram"),
            emb: perturbed_unit(&anchor, instance_sigma, &mut rng),
        });
    }
    Ok(GroundTruth {
        poses,
        objects,
        revisit_start,
    })
}

/// Noisy relative poses between consecutive keyframes. Each step is
/// perturbed on the right by `exp(eps)` with per-axis standard deviation
/// proportional to the step length.
pub fn simulate_odometry(poses: &[Pose], noise: &NoiseConfig, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_ODOMETRY);
    poses
        .windows(2)
        .map(|w| {
            let rel = w[0].inverse().compose(&w[1]);
            let len = rel.translation().norm();
            let (sr, st) = (noise.odom_rot_per_m * len, noise.odom_trans_per_m * len);
            let eps = Vector6::from_fn(|i, _| gaussian(&mut rng) * if i < 3 { sr } else { st });
            if eps.iter().all(|x| *x == 0.0) {
                rel
            } else {
                rel.compose(&Pose::exp(&Twist::from_vector(&eps)))
            }
        })
        .collect()
}

/// Chains relative poses onto `start`.
pub fn compose_odometry(start: &Pose, rel: &[Pose]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(rel.len() + 1);
    out.push(*start);
    for r in rel {
        let next = out.last().expect("non-empty").compose(r);
        out.push(next);
    }
    out
}

/// Whether an object center is inside the horizontal field of view and range.
pub fn in_frustum(t_cw: &Pose, center: &Vector3<f64>, hfov: f64, max_range: f64) -> bool {
    let p = t_cw.transform_point(center);
    p.z > 0.0 && p.x.atan2(p.z).abs() <= 0.5 * hfov && p.norm() <= max_range
}

/// Detections of every object visible from `t_wc`, with noise drawn from a
/// stream keyed by `(seed, frame)`.
pub fn render_detections(truth: &GroundTruth, t_wc: &Pose, frame: u64, cfg: &ScenarioConfig) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_DETECTIONS + frame);
    let n = &cfg.noise;
    let t_cw = t_wc.inverse();
    let hfov = cfg.hfov_deg.to_radians();
    let mut out = Vec::new();
    for obj in &truth.objects {
        if !in_frustum(&t_cw, &obj.cuboid.center, hfov, cfg.max_range) {
            continue;
        }
        // Draw every variate so the stream layout does not depend on outcomes.
        let drop = rng.random::<f64>() < n.dropout;
        let dt = Vector3::from_fn(|_, _| gaussian(&mut rng) * n.det_trans);
        let dyaw = gaussian(&mut rng) * n.det_yaw;
        let dd = Vector3::from_fn(|_, _| gaussian(&mut rng) * n.det_dims);
        let flip = rng.random::<f64>() < n.label_flip;
        let flip_pick = rng.random_range(0..cfg.labels.len().max(2) - 1);
        let hist_alpha: Vec<f64> = obj
            .hist
            .as_slice()
            .iter()
            .map(|h| n.hist_concentration * h + 1.0)
            .collect();
        let jitter = if n.hist_concentration > 0.0 {
            dirichlet(&hist_alpha, &mut rng)
        } else {
            obj.hist.as_slice().to_vec()
        };
        let emb = perturbed_unit(obj.emb.as_slice(), n.emb_noise, &mut rng);
        let score = rng.random_range(0.5..=1.0);
        if drop {
            continue;
        }

        let t_co_true = t_cw.compose(&obj.cuboid.pose());
        let yaw_co = wrap_angle(Detection::yaw_from_camera_pose(&t_co_true) + dyaw);
        let t_co = t_co_true.translation() + dt;
        let dims = (obj.cuboid.dims + dd).map(|d| d.max(0.1));
        let label = if flip && cfg.labels.len() > 1 {
            let others: Vec<&LabelSpec> = cfg.labels.iter().filter(|l| l.name != obj.label).collect();
            others[flip_pick.min(others.len() - 1)].name.clone()
        } else {
            obj.label.clone()
        };
        let mut hist = jitter;
        hist.sort_by(|a, b| b.total_cmp(a));
        let t_co_noisy = Pose::from_parts_unchecked(camera_from_body() * rot_z(yaw_co), t_co);
        let noisy = Cuboid::from_pose(&t_wc.compose(&t_co_noisy), dims).expect("positive dims");
        let Ok(bbox) = predict_bbox(&noisy, &t_cw, &cfg.intrinsics) else {
            continue;
        };
        let det = Detection {
            label,
            bbox,
            hist: ColorHistogram::new(hist).expect("valid histogram"),
            emb,
            t_co,
            yaw_co,
            dims,
            score,
            gt_id: Some(obj.id),
        };
        out.push(det);
    }
    out
}

/// A complete simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    /// Relative odometry between consecutive keyframes.
    pub odometry: Vec<Pose>,
    pub frames: Vec<FrameDetections>,
}

/// Keyframe timestamps are `0.1 s * frame`.
pub fn frame_stamp(frame: u64) -> f64 {
    frame as f64 * 0.1
}

impl Scenario {
    /// Odometry chained from the true initial pose.
    pub fn odometry_trajectory(&self) -> Vec<Pose> {
        compose_odometry(&self.truth.poses[0], &self.odometry)
    }
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<Scenario, SimError> {
    let truth = generate_world(cfg)?;
    let odometry = simulate_odometry(&truth.poses, &cfg.noise, cfg.seed);
    let frames = truth
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| FrameDetections {
            frame: i as u64,
            stamp: frame_stamp(i as u64),
            detections: render_detections(&truth, p, i as u64, cfg),
        })
        .collect();
    Ok(Scenario {
        config: cfg.clone(),
        truth,
        odometry,
        frames,
    })
}
