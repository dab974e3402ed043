//! Sliding-window joint refinement of camera and object poses.

use std::collections::BTreeMap;

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::association::MapState;
use crate::geometry::{GeometryError, Pose, Twist};
use crate::solver::{solve_gauss_newton, GnConfig, Problem, SolveReport, SolverError};

/// `log(T_wo^-1 * T_wc * T_co)`: zero when the measurement is consistent.
pub fn object_camera_residual(t_wo: &Pose, t_wc: &Pose, t_co: &Pose) -> Result<Twist, GeometryError> {
    t_wo.inverse().compose(t_wc).compose(t_co).log()
}

/// `log(T_ij^-1 * T_wi^-1 * T_wj)` for a relative-pose measurement `T_ij`.
pub fn relative_pose_residual(t_ij: &Pose, t_wi: &Pose, t_wj: &Pose) -> Result<Twist, GeometryError> {
    t_ij.inverse().compose(&t_wi.inverse().compose(t_wj)).log()
}

/// Default information for odometry constraints, rotation entries first.
pub fn default_odometry_info() -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::new(100.0, 100.0, 100.0, 25.0, 25.0, 25.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Number of most recent keyframes optimized together.
    pub window: usize,
    /// Objects need strictly more observations than this to be refined.
    pub min_track: usize,
    pub gn: GnConfig,
    pub object_info: Matrix6<f64>,
    /// Odometry between consecutive window keyframes keeps cameras that see
    /// no eligible object constrained.
    pub use_odometry: bool,
    pub odometry_info: Matrix6<f64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 10,
            min_track: 4,
            gn: GnConfig::default(),
            object_info: Matrix6::identity(),
            use_odometry: true,
            odometry_info: default_odometry_info(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowReport {
    pub cameras: usize,
    pub objects: usize,
    pub residuals: usize,
    /// `None` when no object was eligible.
    pub solve: Option<SolveReport>,
}

/// Jointly refines the keyframes in `frames` (ascending; the first is held
/// fixed) and every landmark with more than `min_track` observations that
/// was measured inside the window. Writes the optimized poses back.
pub fn refine_window(map: &mut MapState, frames: &[u64], cfg: &WindowConfig) -> Result<WindowReport, SolverError> {
    if frames.len() < 2 {
        return Err(SolverError::InvalidProblem("window needs at least two frames".into()));
    }
    let eligible: Vec<u64> = map
        .landmarks
        .values()
        .filter(|lm| lm.obs_count() > cfg.min_track)
        .filter(|lm| frames.iter().any(|f| lm.measurements.contains_key(f)))
        .map(|lm| lm.id)
        .collect();
    let mut report = WindowReport {
        cameras: frames.len(),
        objects: eligible.len(),
        residuals: 0,
        solve: None,
    };
    if eligible.is_empty() {
        return Ok(report);
    }

    let mut problem = Problem::new();
    let mut cam_var = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        let pose = *map
            .keyframes
            .get(f)
            .ok_or_else(|| SolverError::InvalidProblem(format!("frame {f} is not a keyframe")))?;
        cam_var.insert(*f, problem.add_variable(pose, i == 0));
    }
    let mut seen_cameras = vec![false; frames.len()];
    let mut obj_var = Vec::with_capacity(eligible.len());
    for id in &eligible {
        let lm = &map.landmarks[id];
        let v = problem.add_variable(lm.pose, false);
        obj_var.push((*id, v));
        for (k, f) in frames.iter().enumerate() {
            if let Some(m) = lm.measurements.get(f) {
                let t_co = m.t_co;
                problem.add_residual(&[v, cam_var[f]], cfg.object_info, move |x: &[Pose]| {
                    Ok(object_camera_residual(&x[0], &x[1], &t_co)?.to_vector())
                })?;
                seen_cameras[k] = true;
                report.residuals += 1;
            }
        }
    }
    for (k, pair) in frames.windows(2).enumerate() {
        let odom = if cfg.use_odometry {
            map.odometry.get(&pair[1]).copied()
        } else {
            None
        };
        match odom {
            Some(t_ij) => {
                problem.add_residual(
                    &[cam_var[&pair[0]], cam_var[&pair[1]]],
                    cfg.odometry_info,
                    move |x: &[Pose]| Ok(relative_pose_residual(&t_ij, &x[0], &x[1])?.to_vector()),
                )?;
                report.residuals += 1;
            }
            // Without odometry an unobserved camera has nothing holding it.
            None if !seen_cameras[k + 1] => {
                return Err(SolverError::InvalidProblem(format!(
                    "frame {} is unconstrained",
                    pair[1]
                )));
            }
            None => {}
        }
    }

    let solve = solve_gauss_newton(&mut problem, &cfg.gn)?;
    let poses = problem.into_poses();
    for (f, v) in &cam_var {
        map.keyframes.insert(*f, poses[*v]);
    }
    for (id, v) in obj_var {
        let lm = map.landmarks.get_mut(&id).expect("eligible landmark exists");
        lm.pose = poses[v];
        let n = lm.measurements.len() as f64;
        let mean: Vector3<f64> = lm.measurements.values().map(|m| m.dims).sum::<Vector3<f64>>() / n;
        lm.dims = mean;
    }
    report.solve = Some(solve);
    Ok(report)
}
