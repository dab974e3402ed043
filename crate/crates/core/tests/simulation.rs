use nalgebra::Vector3;
use semloop::geometry::level_camera_rotation;
use semloop::simulation::{compose_odometry, simulate, simulate_odometry, NoiseConfig, ScenarioConfig};
use semloop::Pose;

fn straight(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            Pose::new(
                level_camera_rotation(0.3),
                Vector3::new(i as f64 * 0.3f64.cos(), i as f64 * 0.3f64.sin(), 0.0),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn terminal_drift_follows_random_walk_variance() {
    let truth = straight(401);
    let noise = NoiseConfig {
        odom_trans_per_m: 0.01,
        ..NoiseConfig::zero()
    };
    let trials = 500;
    let mut sum_sq = 0.0;
    for seed in 0..trials {
        let odom = compose_odometry(&truth[0], &simulate_odometry(&truth, &noise, seed));
        let e = odom.last().unwrap().translation() - truth.last().unwrap().translation();
        sum_sq += e.norm_squared();
    }
    // 400 unit steps, each adding independent noise of 0.01 m per axis.
    let expected = 3.0 * 400.0 * 0.01f64.powi(2);
    let measured = sum_sq / trials as f64;
    assert!(
        (measured / expected - 1.0).abs() < 0.1,
        "measured {measured}, expected {expected}"
    );
}

#[test]
fn zero_noise_odometry_reproduces_truth() {
    let truth = straight(50);
    let odom = compose_odometry(&truth[0], &simulate_odometry(&truth, &NoiseConfig::zero(), 4));
    for (a, b) in odom.iter().zip(&truth) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
}

#[test]
fn same_config_gives_identical_streams() {
    let cfg = ScenarioConfig {
        seed: 9,
        ..ScenarioConfig::default()
    };
    assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    let other = simulate(&ScenarioConfig {
        seed: 10,
        ..cfg.clone()
    })
    .unwrap();
    assert_ne!(simulate(&cfg).unwrap().odometry, other.odometry);
}
