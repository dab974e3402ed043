//! Trajectory alignment, absolute trajectory error and loop-detection
//! precision/recall.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("timestamps must be strictly increasing (sample {0})")]
    NonMonotonic(usize),
    #[error("no timestamps match within tolerance")]
    NoOverlap,
    #[error("matched positions are coincident or collinear")]
    DegenerateGeometry,
    #[error("attempt log is empty")]
    EmptyLog,
}

/// Maximum timestamp difference when pairing samples, seconds.
pub const STAMP_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if let Some(i) = samples.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NonMonotonic(i + 1));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn nearest(&self, t: f64) -> Option<&Pose> {
        let i = self.samples.partition_point(|(s, _)| *s < t);
        let mut best: Option<(f64, &Pose)> = None;
        for j in [i.wrapping_sub(1), i] {
            if let Some((s, p)) = self.samples.get(j) {
                let d = (s - t).abs();
                if d <= STAMP_TOLERANCE && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, p));
                }
            }
        }
        best.map(|(_, p)| p)
    }
}

/// Position pairs (estimate, ground truth) matched by nearest timestamp.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    est.samples
        .iter()
        .filter_map(|(t, p)| gt.nearest(*t).map(|g| (*p.translation(), *g.translation())))
        .collect()
}

/// Similarity mapping estimated positions onto ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub pose: Pose,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation() * p * self.scale + self.pose.translation()
    }
}

/// Closed-form least-squares similarity (or rigid when `with_scale` is
/// false) minimizing `sum |s R p_est + t - p_gt|^2`.
pub fn align_points(pairs: &[(Vector3<f64>, Vector3<f64>)], with_scale: bool) -> Result<Alignment, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let n = pairs.len() as f64;
    let mu_e = pairs.iter().map(|(e, _)| e).sum::<Vector3<f64>>() / n;
    let mu_g = pairs.iter().map(|(_, g)| g).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    let mut spread_g = Matrix3::zeros();
    for (e, g) in pairs {
        let de = e - mu_e;
        let dg = g - mu_g;
        cov += dg * de.transpose();
        var_e += de.norm_squared();
        spread_g += dg * dg.transpose();
    }
    cov /= n;
    var_e /= n;
    spread_g /= n;
    // Rank check on the ground-truth point spread.
    let sv = spread_g.symmetric_eigenvalues();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(EvalError::DegenerateGeometry);
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = if with_scale {
        let sigma = svd.singular_values;
        (sigma[0] * d[(0, 0)] + sigma[1] * d[(1, 1)] + sigma[2] * d[(2, 2)]) / var_e
    } else {
        1.0
    };
    let t = mu_g - r * mu_e * scale;
    let pose = Pose::new(r, t).map_err(|_| EvalError::DegenerateGeometry)?;
    Ok(Alignment { scale, pose })
}

pub fn align_similarity(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<Alignment, EvalError> {
    align_points(&associate(est, gt), with_scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub mse: f64,
    pub rmse: f64,
    pub std: f64,
    pub max: f64,
    pub n: usize,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

impl AteReport {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let n = errors.len();
        if n == 0 {
            return Self {
                mse: 0.0,
                rmse: 0.0,
                std: 0.0,
                max: 0.0,
                n,
                errors,
            };
        }
        let nf = n as f64;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / nf;
        let mean = errors.iter().sum::<f64>() / nf;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / nf;
        Self {
            mse,
            rmse: mse.sqrt(),
            std: var.sqrt(),
            max: errors.iter().copied().fold(0.0, f64::max),
            n,
            errors,
        }
    }
}

/// Aligns `est` to `gt` and reports per-frame position errors.
pub fn ate(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<AteReport, EvalError> {
    let pairs = associate(est, gt);
    let a = align_points(&pairs, with_scale)?;
    Ok(AteReport::from_errors(
        pairs.iter().map(|(e, g)| (a.apply(e) - g).norm()).collect(),
    ))
}

/// One loop-detection attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopAttempt {
    pub frame: u64,
    pub score: f64,
    pub n_matches: usize,
    /// Camera position implied by the attempt's matches.
    pub est: [f64; 3],
    pub gt: [f64; 3],
    /// Whether a true revisit was available to detect at this attempt.
    pub opportunity: bool,
}

impl LoopAttempt {
    pub fn position_error(&self) -> f64 {
        (Vector3::from(self.est) - Vector3::from(self.gt)).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Counts at one score threshold. A declaration (score >= threshold) is a
/// true positive when its position error is within `tau_l`. Recall is the
/// fraction of opportunities that became true positives; `fn_` counts the
/// remaining opportunities.
pub fn pr_point(attempts: &[LoopAttempt], tau_l: f64, threshold: f64) -> PrPoint {
    let mut tp = 0;
    let mut fp = 0;
    let mut hit = 0;
    let mut opportunities = 0;
    for a in attempts {
        let declared = a.score >= threshold && a.n_matches > 0;
        let correct = declared && a.position_error() <= tau_l;
        if declared {
            if correct {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if a.opportunity {
            opportunities += 1;
            if correct {
                hit += 1;
            }
        }
    }
    PrPoint {
        threshold,
        precision: if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if opportunities == 0 {
            0.0
        } else {
            hit as f64 / opportunities as f64
        },
        tp,
        fp,
        fn_: opportunities - hit,
    }
}

pub fn pr_curve(attempts: &[LoopAttempt], tau_l: f64, thresholds: &[f64]) -> Result<Vec<PrPoint>, EvalError> {
    if attempts.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    Ok(thresholds.iter().map(|t| pr_point(attempts, tau_l, *t)).collect())
}

/// Every distinct positive score plus one threshold above the maximum.
pub fn default_thresholds(attempts: &[LoopAttempt]) -> Vec<f64> {
    let mut t: Vec<f64> = attempts.iter().map(|a| a.score).filter(|s| *s > 0.0).collect();
    t.sort_by(|a, b| a.total_cmp(b));
    t.dedup();
    let top = t.last().copied().unwrap_or(0.0);
    t.insert(0, 0.0);
    t.push(top + 1.0);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Twist;

    fn traj(points: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64 * 0.1, Pose::from_translation(Vector3::from(*p))))
                .collect(),
        )
        .unwrap()
    }

    fn zigzag() -> Vec<[f64; 3]> {
        (0..20)
            .map(|i| [i as f64, if i % 2 == 0 { 0.0 } else { 1.5 }, 0.1 * i as f64])
            .collect()
    }

    #[test]
    fn identical_trajectories_align_to_identity() {
        let gt = traj(&zigzag());
        let a = align_similarity(&gt, &gt, true).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        assert!(a.pose.max_abs_diff(&Pose::identity()) < 1e-12);
        let r = ate(&gt, &gt, false).unwrap();
        assert!(r.rmse < 1e-12 && r.max < 1e-12);
    }

    #[test]
    fn recovers_planted_rigid_transform() {
        let g = Pose::exp(&Twist::new(Vector3::new(0.1, -0.2, 0.7), Vector3::new(3.0, -1.0, 2.0)));
        let pts = zigzag();
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| g.transform_point(&Vector3::from(*p)).into())
            .collect();
        let a = align_similarity(&traj(&moved), &traj(&pts), false).unwrap();
        assert!(a.pose.max_abs_diff(&g.inverse()) < 1e-9);
        assert!(ate(&traj(&moved), &traj(&pts), false).unwrap().rmse < 1e-9);
    }

    #[test]
    fn recovers_planted_scale() {
        let pts = zigzag();
        let doubled: Vec<[f64; 3]> = pts.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect();
        let a = align_similarity(&traj(&doubled), &traj(&pts), true).unwrap();
        assert!((a.scale - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_sample_errors() {
        let r = AteReport::from_errors(vec![0.6, 0.8]);
        assert!((r.mse - 0.5).abs() < 1e-15);
        assert_eq!(r.max, 0.8);
        assert!((r.rmse * r.rmse - r.mse).abs() < 1e-12);
        assert!((r.std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(
            align_similarity(&traj(&line), &traj(&line), false),
            Err(EvalError::DegenerateGeometry)
        );
        let late = Trajectory::new(vec![(100.0, Pose::identity())]).unwrap();
        assert_eq!(
            align_similarity(&late, &traj(&zigzag()), false),
            Err(EvalError::NoOverlap)
        );
        assert!(Trajectory::new(vec![(1.0, Pose::identity()), (1.0, Pose::identity())]).is_err());
    }

    #[test]
    fn timestamps_pair_within_tolerance() {
        let gt = traj(&zigzag());
        let shifted = Trajectory::new(gt.samples().iter().map(|(t, p)| (t + 0.04, *p)).collect()).unwrap();
        assert_eq!(associate(&shifted, &gt).len(), 20);
        let far = Trajectory::new(gt.samples().iter().map(|(t, p)| (t + 0.06, *p)).collect()).unwrap();
        assert_eq!(associate(&far, &gt).len(), 19);
    }

    fn attempt(score: f64, err: f64, opportunity: bool) -> LoopAttempt {
        LoopAttempt {
            frame: 0,
            score,
            n_matches: score.floor() as usize,
            est: [err, 0.0, 0.0],
            gt: [0.0, 0.0, 0.0],
            opportunity,
        }
    }

    #[test]
    fn pr_counting_rules() {
        let log = vec![
            attempt(3.9, 1.0, true),
            attempt(4.5, 6.0, false),
            attempt(0.0, 0.0, true),
        ];
        let p = pr_point(&log, 5.0, 3.0);
        assert_eq!((p.tp, p.fp, p.fn_), (1, 1, 1));
        assert_eq!(p.precision, 0.5);
        assert_eq!(p.recall, 0.5);
        let good = pr_point(&log[..1], 5.0, 3.0);
        assert_eq!(good.precision, 1.0);
        let above = pr_point(&log, 5.0, 10.0);
        assert_eq!((above.precision, above.recall), (1.0, 0.0));
        assert!(pr_curve(&[], 5.0, &[1.0]).is_err());
    }
}
