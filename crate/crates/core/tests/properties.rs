use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;

use semloop::association::{assign_matches, detection_similarity, MapState, SimilarityMatrix};
use semloop::evaluation::{align_similarity, pr_point, LoopAttempt, Trajectory};
use semloop::features::{
    emb_similarity, extract_color_histogram, filter_proposals, hist_similarity, read_detections, write_detections,
    ColorHistogram, Detection, Embedding, FilterConfig, FrameDetections, Hsv, PixelPatch,
};
use semloop::geometry::{
    iou_2d, iou_3d, predict_bbox, translation_distance, BBox2D, CameraIntrinsics, Cuboid, Pose, Twist,
};
use semloop::loop_closure::{correct_current_pose, estimate_drift, optimize_frame_graph, ObjectConstraint};
use semloop::refinement::default_odometry_info;
use semloop::scene_graph::{
    detect_loop, layout_descriptor, layout_difference, semantic_similarity, GraphConfig, SceneGraph, Vertex,
};
use semloop::solver::GnConfig;

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0..1.0f64),
        0.0..(PI - 1e-3),
        prop::array::uniform3(-30.0..30.0f64),
    )
        .prop_map(|(axis, angle, t)| {
            let a = Vector3::from(axis);
            let axis = if a.norm() < 1e-3 { Vector3::z() } else { a.normalize() };
            Pose::exp(&Twist::new(axis * angle, Vector3::from(t)))
        })
}

fn planar_pose() -> impl Strategy<Value = Pose> {
    (-PI..PI, -20.0..20.0f64, -20.0..20.0f64).prop_map(|(yaw, x, y)| Pose::from_yaw(yaw, Vector3::new(x, y, 0.0)))
}

fn cuboid() -> impl Strategy<Value = Cuboid> {
    (
        prop::array::uniform3(-2.0..2.0f64),
        -PI..PI,
        prop::array::uniform3(0.3..3.0f64),
    )
        .prop_map(|(c, yaw, d)| Cuboid::new(Vector3::from(c), yaw, Vector3::from(d)).unwrap())
}

fn bbox() -> impl Strategy<Value = BBox2D> {
    (0.0..100.0f64, 0.0..100.0f64, 1.0..50.0f64, 1.0..50.0f64)
        .prop_map(|(l, t, w, h)| BBox2D::new(l, t, l + w, t + h).unwrap())
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, dim)
}

fn detection() -> impl Strategy<Value = Detection> {
    (
        prop::sample::select(vec!["car", "van", "bench"]),
        bbox(),
        unit_vec(4),
        unit_vec(6),
        prop::array::uniform3(-20.0..20.0f64),
        -PI..PI,
        prop::array::uniform3(0.2..10.0f64),
        0.0..=1.0f64,
    )
        .prop_map(|(label, bbox, hist, emb, t, yaw, dims, score)| {
            let mut hist = hist;
            hist.sort_by(|a, b| b.total_cmp(a));
            Detection {
                label: label.into(),
                bbox,
                hist: ColorHistogram::new(hist).unwrap(),
                emb: Embedding::new(emb).unwrap(),
                t_co: Vector3::from(t),
                yaw_co: yaw,
                dims: Vector3::from(dims),
                score,
                gt_id: None,
            }
        })
}

fn vertices(n: usize) -> impl Strategy<Value = Vec<Vertex>> {
    prop::collection::vec(planar_pose(), n).prop_map(|poses| {
        poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| Vertex {
                id: i as u64,
                label: format!("label{i}"),
                pose,
                dims: Vector3::new(1.0, 1.0, 1.0),
                hist: vec![1.0],
                emb: vec![1.0],
            })
            .collect()
    })
}

fn well_separated(vs: &[Vertex], min: f64) -> bool {
    vs.iter()
        .enumerate()
        .all(|(i, a)| vs[i + 1..].iter().all(|b| (a.position() - b.position()).norm() >= min))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_log_round_trip(p in pose()) {
        let back = Pose::exp(&p.log().unwrap());
        prop_assert!(back.max_abs_diff(&p) <= 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity(p in pose()) {
        prop_assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) <= 1e-12);
    }

    #[test]
    fn translation_distance_is_a_left_invariant_metric(a in pose(), b in pose(), c in pose(), g in pose()) {
        let d = translation_distance;
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!((d(&g.compose(&a), &g.compose(&b)) - d(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn iou_2d_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let x = iou_2d(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, iou_2d(&b, &a));
        prop_assert!((iou_2d(&a, &a) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn iou_3d_symmetric_and_bounded(a in cuboid(), b in cuboid()) {
        let x = iou_3d(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - iou_3d(&b, &a)).abs() <= 1e-12);
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() <= 1e-12);
        if a != b {
            prop_assert!(x < 1.0 - 1e-12 || (a.dims - b.dims).norm() < 1e-9);
        }
    }

    #[test]
    fn bbox_shrinks_as_cuboid_recedes(side in 0.3..3.0f64, near in 3.0..20.0f64, step in 0.5..10.0f64) {
        let k = CameraIntrinsics::default();
        let at = |z: f64| {
            let c = Cuboid::new(Vector3::new(0.0, 0.0, z), 0.0, Vector3::repeat(side)).unwrap();
            predict_bbox(&c, &Pose::identity(), &k).unwrap()
        };
        let (a, b) = (at(near), at(near + step));
        prop_assert!(b.width() <= a.width() && b.height() <= a.height());
    }

    #[test]
    fn color_histogram_is_normalized_and_sorted(
        pixels in prop::collection::vec((0.0..360.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 1..200),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let patch = PixelPatch::new(pixels.into_iter().map(|(h, s, v)| Hsv { h, s, v }).collect()).unwrap();
        let h = extract_color_histogram(&patch, k, seed).unwrap();
        prop_assert!((h.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(h.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singleton_similarities_are_symmetric(a in unit_vec(5), b in unit_vec(5)) {
        let (ha, hb) = (ColorHistogram::new(a.clone()).unwrap(), ColorHistogram::new(b.clone()).unwrap());
        prop_assert!((hist_similarity(&ha, [&hb]).unwrap() - hist_similarity(&hb, [&ha]).unwrap()).abs() <= 1e-15);
        let (ea, eb) = (Embedding::new(a).unwrap(), Embedding::new(b).unwrap());
        prop_assert!((emb_similarity(&ea, [&eb]).unwrap() - emb_similarity(&eb, [&ea]).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn filter_is_idempotent(dets in prop::collection::vec(detection(), 0..12)) {
        let cfg = FilterConfig::default();
        let once = filter_proposals(&dets, &cfg);
        prop_assert_eq!(filter_proposals(&once, &cfg), once);
    }

    #[test]
    fn detection_files_reach_a_fixed_point(dets in prop::collection::vec(detection(), 1..8)) {
        let frames = vec![FrameDetections { frame: 2, stamp: 0.2, detections: dets }];
        let mut first = Vec::new();
        write_detections(&mut first, &frames).unwrap();
        let parsed = read_detections(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_detections(&mut second, &parsed).unwrap();
        let reparsed = read_detections(second.as_slice()).unwrap();
        let mut third = Vec::new();
        write_detections(&mut third, &reparsed).unwrap();
        prop_assert_eq!(&parsed, &reparsed);
        prop_assert_eq!(second, third);
    }

    #[test]
    fn label_gate_and_nonnegative_similarity(d in detection(), e in detection(), lambda in 0.0..=1.0f64, cam in planar_pose()) {
        let mut map = MapState::new();
        let id = map.spawn_landmark(0, &cam, &e, 10);
        let s = detection_similarity(&d, &map.landmarks[&id], &cam, &CameraIntrinsics::default(), lambda);
        prop_assert!(s >= 0.0);
        if d.label != e.label {
            prop_assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn assignment_matches_exhaustive_search(
        rows in 1usize..=6,
        cols in 1usize..=6,
        vals in prop::collection::vec(0.0..1.0f64, 36),
        threshold in 0.0..0.6f64,
    ) {
        let scores = DMatrix::from_fn(rows, cols, |i, j| vals[i * 6 + j]);
        let m = SimilarityMatrix { scores: scores.clone(), landmark_ids: (0..cols as u64).collect() };
        let a = assign_matches(&m, threshold);
        let got: f64 = a.matches.iter().map(|(i, j)| scores[(*i, *j as usize)]).sum();
        let gate = |s: f64| if s >= threshold && s > 0.0 { s } else { 0.0 };
        fn best(s: &DMatrix<f64>, gate: &dyn Fn(f64) -> f64, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == s.nrows() {
                return 0.0;
            }
            let mut b = best(s, gate, row + 1, used);
            for c in 0..s.ncols() {
                if !used[c] && gate(s[(row, c)]) > 0.0 {
                    used[c] = true;
                    b = b.max(gate(s[(row, c)]) + best(s, gate, row + 1, used));
                    used[c] = false;
                }
            }
            b
        }
        let oracle = best(&scores, &gate, 0, &mut vec![false; cols]);
        prop_assert!((got - oracle).abs() <= 1e-9);
        prop_assert!(a.matches.iter().all(|(i, j)| gate(scores[(*i, *j as usize)]) > 0.0));
    }

    #[test]
    fn layout_descriptor_rigid_and_scale_invariant(vs in vertices(10), g in pose(), scale in 0.05..20.0f64) {
        let moved: Vec<Vertex> = vs
            .iter()
            .map(|v| {
                let p = g.compose(&v.pose);
                Vertex { pose: Pose::new(*p.rotation(), p.translation() * scale).unwrap(), ..v.clone() }
            })
            .collect();
        let (a, b) = (SceneGraph::build(vs.clone(), 4), SceneGraph::build(moved, 4));
        for v in &vs {
            let (da, db) = (layout_descriptor(&a, v.id).unwrap(), layout_descriptor(&b, v.id).unwrap());
            prop_assert!(layout_difference(&da, &db).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn layout_difference_is_a_pseudometric(
        a in prop::collection::vec(0.0..1.0f64, 4),
        b in prop::collection::vec(0.0..1.0f64, 4),
        c in prop::collection::vec(0.0..1.0f64, 4),
    ) {
        let d = |x: &[f64], y: &[f64]| layout_difference(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn semantic_similarity_range(vs in vertices(2), same_label in any::<bool>()) {
        let cfg = GraphConfig::default();
        let (a, mut b) = (vs[0].clone(), vs[1].clone());
        if same_label {
            b.label = a.label.clone();
        }
        let s = semantic_similarity(&a, &b, &cfg);
        prop_assert!(s == 0.0 || (s > 0.0 && s <= 2.0));
        if !same_label {
            prop_assert_eq!(s, 0.0);
        }
        let twin = semantic_similarity(&a, &a, &cfg);
        prop_assert!(twin <= 2.0 && twin >= s);
    }

    #[test]
    fn planted_rigid_copy_is_recovered_in_any_order(vs in vertices(7), g in planar_pose(), rot in 0usize..7) {
        prop_assume!(well_separated(&vs, 1.0));
        let cfg = GraphConfig::default();
        let copy: Vec<Vertex> = vs
            .iter()
            .map(|v| Vertex { id: v.id + 100, pose: g.compose(&v.pose), ..v.clone() })
            .collect();
        let mut shuffled = copy.clone();
        shuffled.rotate_left(rot);
        let g_g = SceneGraph::build(vs.clone(), cfg.k_nn);
        let found = detect_loop(&SceneGraph::build(copy, cfg.k_nn), &g_g, &cfg).expect("planted copy");
        let again = detect_loop(&SceneGraph::build(shuffled, cfg.k_nn), &g_g, &cfg).expect("planted copy");
        prop_assert_eq!(&found, &again);
        prop_assert!(found.pairs.iter().all(|p| p.local == p.global + 100));
        prop_assert_eq!(found.len(), vs.len());
    }

    #[test]
    fn noiseless_drift_is_exact(d in pose(), gs in prop::collection::vec(pose(), 1..6)) {
        let cs: Vec<ObjectConstraint> = gs.iter().map(|g| ObjectConstraint::new(d.compose(g), *g)).collect();
        let (est, _) = estimate_drift(&cs, &GnConfig::default()).unwrap();
        prop_assert!(est.max_abs_diff(&d) <= 1e-6);
    }

    #[test]
    fn identity_drift_leaves_pose_untouched(p in pose()) {
        prop_assert_eq!(correct_current_pose(&p, &Pose::identity()), p);
    }

    #[test]
    fn frame_graph_never_moves_anchors(poses in prop::collection::vec(pose(), 3..8), noise in pose()) {
        let rel: Vec<Pose> = poses.windows(2).map(|w| w[0].inverse().compose(&w[1]).compose(&Pose::exp(
            &Twist::from_vector(&(noise.log().unwrap().to_vector() * 0.01)),
        ))).collect();
        let anchors = [0, poses.len() - 1];
        let (out, _) = optimize_frame_graph(&poses, &rel, &anchors, &default_odometry_info(), &GnConfig::default()).unwrap();
        for a in anchors {
            prop_assert_eq!(out[a], poses[a]);
        }
    }

    #[test]
    fn ate_is_invariant_to_rigid_motion(g in pose(), pts in prop::collection::vec(prop::array::uniform3(-10.0..10.0f64), 4..20)) {
        let gt: Vec<(f64, Pose)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64, Pose::from_translation(Vector3::from(*p))))
            .collect();
        let est: Vec<(f64, Pose)> = gt
            .iter()
            .map(|(t, p)| (*t, Pose::from_translation(p.translation() + Vector3::new(0.1 * t.sin(), 0.05 * t.cos(), 0.02 * t))))
            .collect();
        let moved: Vec<(f64, Pose)> = est.iter().map(|(t, p)| (*t, g.compose(p))).collect();
        let (gt, est, moved) = (Trajectory::new(gt).unwrap(), Trajectory::new(est).unwrap(), Trajectory::new(moved).unwrap());
        let (Ok(a), Ok(b)) = (semloop::evaluation::ate(&est, &gt, false), semloop::evaluation::ate(&moved, &gt, false)) else {
            return Ok(());
        };
        prop_assert!((a.rmse - b.rmse).abs() <= 1e-8);
        prop_assert!(align_similarity(&moved, &gt, false).is_ok());
    }

    #[test]
    fn recall_never_rises_with_threshold(
        raw in prop::collection::vec((0.0..8.0f64, 0usize..6, 0.0..12.0f64, any::<bool>()), 1..60),
        t1 in 0.0..8.0f64,
        dt in 0.0..4.0f64,
    ) {
        let attempts: Vec<LoopAttempt> = raw
            .iter()
            .enumerate()
            .map(|(i, (score, n, err, opp))| LoopAttempt {
                frame: i as u64,
                score: *score,
                n_matches: *n,
                est: [*err, 0.0, 0.0],
                gt: [0.0; 3],
                opportunity: *opp,
            })
            .collect();
        let (lo, hi) = (pr_point(&attempts, 5.0, t1), pr_point(&attempts, 5.0, t1 + dt));
        prop_assert!(hi.recall <= lo.recall);
        prop_assert!(hi.tp + hi.fp <= lo.tp + lo.fp);
    }
}
