//! Rigid-body algebra on SE(3), yaw-only cuboids, pinhole projection and
//! overlap measures.
//!
//! Rotations are stored as orthonormal 3x3 matrices. Quaternions only show
//! up at the file boundary (see [`crate::tum`]).

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// Below this rotation angle exp/log switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;
/// log() refuses rotations whose angle is within this margin of pi.
const NEAR_PI_MARGIN: f64 = 1e-6;
/// Corners closer than this to the image plane are dropped from projections.
const MIN_DEPTH: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {0:.9} rad is too close to pi for a stable logarithm")]
    AngleNearPi(f64),
    #[error("cuboid is not visible from this camera")]
    NotVisible,
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

fn invalid(what: &'static str, reason: impl Into<String>) -> GeometryError {
    GeometryError::Invalid {
        what,
        reason: reason.into(),
    }
}

#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation about the +z axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Maps vehicle-frame vectors (x forward, y left, z up) into the optical
/// camera frame (x right, y down, z forward).
pub fn camera_from_body() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// World orientation of a level camera whose optical axis points along
/// `heading` (radians from +x, counter-clockwise about +z).
pub fn level_camera_rotation(heading: f64) -> Matrix3<f64> {
    rot_z(heading) * camera_from_body().transpose()
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x >= PI {
        x -= 2.0 * PI;
    }
    x
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).abs().max()
}

fn closest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    Rotation3::from_matrix_eps(r, 1e-15, 100, Rotation3::identity()).into_inner()
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking that `rotation` is a proper rotation within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(invalid("pose", "non-finite entry"));
        }
        let err = orthonormality_error(&rotation);
        if err > 1e-9 {
            return Err(invalid("rotation", format!("R R^T deviates from I by {err:e}")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(invalid("rotation", format!("determinant {det}")));
        }
        Ok(Self { rotation, translation })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Yaw-only pose: rotation about +z followed by translation.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation: t,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Heading of the rotated x-axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let s = 0.5 * vee(&(self.rotation - self.rotation.transpose())).norm();
        s.atan2(c)
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > 1e-12 {
            rotation = closest_rotation(&rotation);
        }
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// SE(3) logarithm.
    pub fn log(&self) -> Result<Twist, GeometryError> {
        let r = &self.rotation;
        let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let a = 0.5 * vee(&(r - r.transpose()));
        let s = a.norm();
        let theta = s.atan2(c);
        if theta >= PI - NEAR_PI_MARGIN {
            return Err(GeometryError::AngleNearPi(theta));
        }

        let omega = if theta < SMALL_ANGLE {
            a * (1.0 + theta * theta / 6.0)
        } else if c < -0.5 {
            // Axis from the symmetric part; the antisymmetric part is tiny here.
            let b = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
            let i = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
            let mut axis = b.column(i).into_owned() / (b[(i, i)] * (1.0 - c)).sqrt();
            axis.normalize_mut();
            if axis.dot(&a) < 0.0 {
                axis = -axis;
            }
            axis * theta
        } else {
            a * (theta / s)
        };

        let w = hat(&omega);
        let d = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half / half.tan()) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - 0.5 * w + d * (w * w);
        Ok(Twist {
            omega,
            v: v_inv * self.translation,
        })
    }

    /// SE(3) exponential.
    pub fn exp(x: &Twist) -> Pose {
        let theta = x.omega.norm();
        let (a, b, c) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let st = theta.sin();
            (
                st / theta,
                2.0 * (0.5 * theta).sin().powi(2) / (theta * theta),
                (theta - st) / (theta * theta * theta),
            )
        };
        let w = hat(&x.omega);
        let w2 = w * w;
        let rotation = Matrix3::identity() + a * w + b * w2;
        let v = Matrix3::identity() + b * w + c * w2;
        Pose {
            rotation,
            translation: v * x.v,
        }
    }

    /// Right perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        self.compose(&Pose::exp(&Twist::from_vector(delta)))
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn pose_inverse(a: &Pose) -> Pose {
    a.inverse()
}

pub fn se3_log(p: &Pose) -> Result<Twist, GeometryError> {
    p.log()
}

pub fn se3_exp(x: &Twist) -> Pose {
    Pose::exp(x)
}

/// Tangent vector of SE(3): rotation part first, then translation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            omega: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.omega.x, self.omega.y, self.omega.z, self.v.x, self.v.y, self.v.z)
    }
}

/// Distance between the origins of two frames, `|t(a^-1 b)|`.
pub fn translation_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation.transpose() * (b.translation - a.translation)).norm()
}

/// Object box with zero roll and pitch: center, heading about +z, full extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cuboid {
    pub center: Vector3<f64>,
    pub yaw: f64,
    pub dims: Vector3<f64>,
}

impl Cuboid {
    pub fn new(center: Vector3<f64>, yaw: f64, dims: Vector3<f64>) -> Result<Self, GeometryError> {
        if !dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(invalid("cuboid", format!("dims must be positive, got {dims:?}")));
        }
        if !center.iter().all(|x| x.is_finite()) || !yaw.is_finite() {
            return Err(invalid("cuboid", "non-finite center or yaw"));
        }
        Ok(Self {
            center,
            yaw: wrap_angle(yaw),
            dims,
        })
    }

    /// Projects an arbitrary object pose onto the yaw-only model.
    pub fn from_pose(pose: &Pose, dims: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(*pose.translation(), pose.yaw(), dims)
    }

    pub fn pose(&self) -> Pose {
        Pose::from_yaw(self.yaw, self.center)
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let r = rot_z(self.yaw);
        let h = self.dims * 0.5;
        let mut out = [Vector3::zeros(); 8];
        let mut i = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[i] = r * Vector3::new(sx * h.x, sy * h.y, sz * h.z) + self.center;
                    i += 1;
                }
            }
        }
        out
    }

    /// Ground-plane footprint, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hx = self.dims.x * 0.5;
        let hy = self.dims.y * 0.5;
        let local = [[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]];
        local.map(|[x, y]| [c * x - s * y + self.center.x, s * x + c * y + self.center.y])
    }

    fn z_range(&self) -> (f64, f64) {
        (self.center.z - 0.5 * self.dims.z, self.center.z + 0.5 * self.dims.z)
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox2D {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox2D {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeometryError> {
        if !(left < right && top < bottom) {
            return Err(invalid(
                "bbox",
                format!("[{left}, {top}, {right}, {bottom}] has no area"),
            ));
        }
        Ok(Self {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn area(&self) -> f64 {
        (self.right - self.left) * (self.bottom - self.top)
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.left, self.top, self.right, self.bottom]
    }
}

/// Pinhole camera without distortion.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    /// 1280x720 with a 110 degree horizontal field of view.
    fn default() -> Self {
        let f = 640.0 / (55.0f64).to_radians().tan();
        Self {
            fx: f,
            fy: f,
            cx: 640.0,
            cy: 360.0,
            width: 1280.0,
            height: 720.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid("intrinsics", "focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(invalid("intrinsics", "principal point outside the image"));
        }
        Ok(())
    }

    /// Projects a camera-frame point; caller guarantees positive depth.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Half of the horizontal field of view, radians.
    pub fn half_fov_x(&self) -> f64 {
        (self.cx.max(self.width - self.cx) / self.fx).atan()
    }
}

/// Image rectangle spanned by the projected corners of `cuboid`, clamped to
/// the image. `t_cw` maps world points into the camera frame.
pub fn predict_bbox(cuboid: &Cuboid, t_cw: &Pose, k: &CameraIntrinsics) -> Result<BBox2D, GeometryError> {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for corner in cuboid.corners() {
        let pc = t_cw.transform_point(&corner);
        if pc.z <= MIN_DEPTH {
            continue;
        }
        any = true;
        let (u, v) = k.project(&pc);
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    if !any {
        return Err(GeometryError::NotVisible);
    }
    let left = lo.0.clamp(0.0, k.width);
    let right = hi.0.clamp(0.0, k.width);
    let top = lo.1.clamp(0.0, k.height);
    let bottom = hi.1.clamp(0.0, k.height);
    if right - left <= 0.0 || bottom - top <= 0.0 {
        return Err(GeometryError::NotVisible);
    }
    Ok(BBox2D {
        left,
        top,
        right,
        bottom,
    })
}

pub fn iou_2d(a: &BBox2D, b: &BBox2D) -> f64 {
    let w = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let h = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = cross2(a, b, p);
    let d2 = cross2(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman clipping of `subject` against the convex,
/// counter-clockwise polygon `clip`.
pub fn clip_convex_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross2(a, b, cur) >= 0.0;
            let prev_in = cross2(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s.abs()
}

/// Exact volumetric IoU of two yaw-only cuboids.
pub fn iou_3d(a: &Cuboid, b: &Cuboid) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let reach = 0.5 * (a.dims.x.hypot(a.dims.y) + b.dims.x.hypot(b.dims.y));
    if (a.center.xy() - b.center.xy()).norm() >= reach {
        return 0.0;
    }
    let inter_area = polygon_area(&clip_convex_polygon(&a.footprint(), &b.footprint()));
    let inter = inter_area * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn compose_translations() {
        let a = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(0.0, 2.0, 0.0));
        assert_eq!(*(a * b).translation(), Vector3::new(1.0, 2.0, 0.0));
        let p = Pose::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0));
        assert!((Pose::identity() * p).max_abs_diff(&p) == 0.0);
        assert!((p * p.inverse()).max_abs_diff(&Pose::identity()) < 1e-15);
    }

    #[test]
    fn inverse_of_translation() {
        let p = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(*p.inverse().translation(), Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(Pose::identity().inverse(), Pose::identity());
    }

    #[test]
    fn log_quarter_turn_about_z() {
        let p = Pose::from_yaw(PI / 2.0, Vector3::zeros());
        let x = p.log().unwrap();
        assert!((x.omega - Vector3::new(0.0, 0.0, PI / 2.0)).norm() < 1e-12);
        assert!(x.v.norm() < 1e-12);
    }

    #[test]
    fn log_pure_translation() {
        let x = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)).log().unwrap();
        assert_eq!(x.omega, Vector3::zeros());
        assert!((x.v - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-15);
        assert_eq!(Pose::identity().log().unwrap(), Twist::zero());
    }

    #[test]
    fn log_rejects_half_turn() {
        let p = Pose::from_yaw(PI, Vector3::zeros());
        assert!(matches!(p.log(), Err(GeometryError::AngleNearPi(_))));
    }

    #[test]
    fn exp_half_turn_matches_rodrigues() {
        let p = Pose::exp(&Twist::new(Vector3::new(0.0, 0.0, PI), Vector3::zeros()));
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((p.rotation() - expected).abs().max() < 1e-15);
        assert_eq!(Pose::exp(&Twist::zero()), Pose::identity());
    }

    #[test]
    fn exp_log_small_angles_are_smooth() {
        for k in 0..12 {
            let a = 10f64.powi(-k);
            let x = Twist::new(Vector3::new(a, -0.5 * a, 0.25 * a), Vector3::new(1.0, -2.0, 0.5));
            let back = Pose::exp(&x).log().unwrap();
            assert!((back.to_vector() - x.to_vector()).norm() < 1e-12, "angle {a}");
        }
    }

    #[test]
    fn exp_log_close_to_pi() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        for gap in [1e-2, 1e-3, 1e-4, 1e-5] {
            let x = Twist::new(axis * (PI - gap), Vector3::new(0.3, 0.1, -1.0));
            let p = Pose::exp(&x);
            let q = Pose::exp(&p.log().unwrap());
            assert!(p.max_abs_diff(&q) < 1e-9, "gap {gap}");
        }
    }

    #[test]
    fn pose_new_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    fn square_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 320.0, 640.0, 640.0).unwrap()
    }

    /// Camera at the world origin looking down +x (level).
    fn forward_camera_cw(position: Vector3<f64>) -> Pose {
        Pose::new(level_camera_rotation(0.0), position).unwrap().inverse()
    }

    #[test]
    fn predict_bbox_unit_cube_on_axis() {
        let cube = Cuboid::new(Vector3::new(5.0, 0.0, 0.0), 0.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let b = predict_bbox(&cube, &forward_camera_cw(Vector3::zeros()), &square_camera()).unwrap();
        let half = 500.0 * 0.5 / 4.5;
        assert!(close(b.left, 320.0 - half, 1e-9));
        assert!(close(b.right, 320.0 + half, 1e-9));
        assert!(close(b.top, 320.0 - half, 1e-9));
        assert!(close(b.bottom, 320.0 + half, 1e-9));
    }

    #[test]
    fn predict_bbox_behind_camera() {
        let cube = Cuboid::new(Vector3::new(-5.0, 0.0, 0.0), 0.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let r = predict_bbox(&cube, &forward_camera_cw(Vector3::zeros()), &square_camera());
        assert_eq!(r, Err(GeometryError::NotVisible));
    }

    #[test]
    fn predict_bbox_clamps_at_border() {
        // Camera shifted 1.5 m to the left (+y world) so the cube sits right
        // of center: corners at lateral offsets 1.0..2.0 m, depths 4.5..5.5 m.
        let cube = Cuboid::new(Vector3::new(5.0, 0.0, 0.0), 0.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let b = predict_bbox(&cube, &forward_camera_cw(Vector3::new(0.0, 1.5, 0.0)), &square_camera()).unwrap();
        let left = 320.0 + 500.0 * 1.0 / 5.5;
        assert!(close(b.left, left, 1e-9));
        // Unclamped right edge would be 320 + 500 * 2 / 4.5 = 542.2, still inside.
        assert!(close(b.right, 320.0 + 500.0 * 2.0 / 4.5, 1e-9));
        let b = predict_bbox(&cube, &forward_camera_cw(Vector3::new(0.0, 3.0, 0.0)), &square_camera()).unwrap();
        assert_eq!(b.right, 640.0);
        assert!(close(b.left, 320.0 + 500.0 * 2.5 / 5.5, 1e-9));
    }

    #[test]
    fn predict_bbox_shrinks_with_distance() {
        let cam = forward_camera_cw(Vector3::zeros());
        let k = square_camera();
        let mut last = f64::INFINITY;
        for d in [3.0, 4.0, 6.0, 10.0, 20.0, 40.0] {
            let cube = Cuboid::new(Vector3::new(d, 0.0, 0.0), 0.4, Vector3::new(2.0, 1.0, 1.5)).unwrap();
            let b = predict_bbox(&cube, &cam, &k).unwrap();
            assert!(b.width() < last);
            last = b.width();
        }
    }

    #[test]
    fn iou_2d_cases() {
        let a = BBox2D::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox2D::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let c = BBox2D::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou_2d(&a, &a), 1.0);
        assert_eq!(iou_2d(&a, &c), 0.0);
        assert!(close(iou_2d(&a, &b), 1.0 / 7.0, 1e-15));
        assert!(BBox2D::new(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn iou_3d_offset_cubes() {
        let a = Cuboid::new(Vector3::zeros(), 0.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let b = Cuboid::new(Vector3::new(0.5, 0.0, 0.0), 0.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert!(close(iou_3d(&a, &b), 1.0 / 3.0, 1e-12));
        assert_eq!(iou_3d(&a, &a), 1.0);
        let far = Cuboid::new(Vector3::new(3.0, 0.0, 0.0), 0.7, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(iou_3d(&a, &far), 0.0);
    }

    #[test]
    fn iou_3d_rotated_square_inside_square() {
        // A unit square rotated 45 deg inside a 2x2 square: footprint overlap
        // is the full unit square.
        let a = Cuboid::new(Vector3::zeros(), 0.0, Vector3::new(2.0, 2.0, 1.0)).unwrap();
        let b = Cuboid::new(Vector3::zeros(), PI / 4.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert!(close(iou_3d(&a, &b), 0.25, 1e-12));
    }

    #[test]
    fn translation_distance_cases() {
        let a = Pose::identity();
        let b = Pose::from_translation(Vector3::new(3.0, 4.0, 0.0));
        assert_eq!(translation_distance(&a, &a), 0.0);
        assert!(close(translation_distance(&a, &b), 5.0, 1e-15));
        let g = Pose::exp(&Twist::new(Vector3::new(0.1, -0.4, 1.2), Vector3::new(3.0, -1.0, 2.0)));
        assert!(close(translation_distance(&(g * a), &(g * b)), 5.0, 1e-12));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15));
        assert!(close(wrap_angle(-PI / 2.0), -PI / 2.0, 1e-15));
    }

    #[test]
    fn level_camera_axes() {
        let r = level_camera_rotation(PI / 2.0);
        // Optical axis (camera z) along world +y; image down (camera y) along world -z.
        assert!((r * Vector3::z() - Vector3::y()).norm() < 1e-15);
        assert!((r * Vector3::y() + Vector3::z()).norm() < 1e-15);
    }
}
