use semloop::pipeline::{run_mapping, run_pipeline, PipelineConfig, PipelineInput};
use semloop::simulation::{simulate, RevisitConfig, Scenario, ScenarioConfig, Shape, TrajectoryConfig};

fn scenario(shape: Shape, revisit: Option<RevisitConfig>, seed: u64) -> Scenario {
    simulate(&ScenarioConfig {
        seed,
        trajectory: TrajectoryConfig {
            shape,
            span: if shape == Shape::Line { 80.0 } else { 40.0 },
            revisit,
            ..TrajectoryConfig::default()
        },
        ..ScenarioConfig::default()
    })
    .unwrap()
}

#[test]
fn line_without_revisit_closes_no_loop() {
    let input = PipelineInput::from_scenario(&scenario(Shape::Line, None, 1));
    let out = run_pipeline(&input, &PipelineConfig::default()).unwrap();
    assert!(out.after.loops.is_empty());
    assert_eq!(out.before.trajectory, out.after.trajectory);
    // A straight path is degenerate for rigid alignment, so no ATE.
    assert!(out.ate_after.is_none());
}

#[test]
fn disabled_loop_closure_is_mapping_only() {
    let input = PipelineInput::from_scenario(&scenario(Shape::Rectangle, Some(RevisitConfig::default()), 2));
    let mut off = PipelineConfig::default();
    off.loop_closure.enabled = false;
    let reference = run_mapping(&input, &off).unwrap();
    let disabled = run_pipeline(&input, &off).unwrap();
    assert!(disabled.after.same_results(&reference));
    assert!(disabled.after.attempts.is_empty());
    let enabled = run_pipeline(&input, &PipelineConfig::default()).unwrap();
    assert!(enabled.before.same_results(&reference));
}

#[test]
fn loop_correction_moves_camera_toward_truth() {
    let s = scenario(Shape::Rectangle, Some(RevisitConfig::default()), 600);
    let input = PipelineInput::from_scenario(&s);
    let out = run_pipeline(&input, &PipelineConfig::default()).unwrap();
    let first = out.after.loops.first().expect("revisit is detected");
    let k = first.current_frame as usize;
    let gt = s.truth.poses[k].translation();
    let attempt = out
        .after
        .attempts
        .iter()
        .find(|a| a.frame == first.current_frame)
        .unwrap();
    let corrected = nalgebra::Vector3::from(attempt.est);
    let uncorrected = out.before.trajectory[k].1.translation();
    assert!((corrected - gt).norm() < (uncorrected - gt).norm());
    assert!((out.after.trajectory[k].1.translation() - gt).norm() < (uncorrected - gt).norm());
    assert!(out.ate_after.unwrap().rmse < out.ate_before.unwrap().rmse);
}
