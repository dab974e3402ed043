"""Smoke test for the semloop_py extension.

Build and install first:
    pip install maturin
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math

import semloop_py as sl


def check_pose():
    p = sl.Pose.exp([0.1, -0.2, 0.3, 1.0, 2.0, -0.5])
    back = sl.Pose.exp(p.log())
    assert p.max_abs_diff(back) < 1e-12
    ident = p @ p.inverse()
    assert ident.max_abs_diff(sl.Pose.identity()) < 1e-12
    q = sl.Pose.from_yaw(math.pi / 2, [1.0, 0.0, 0.0])
    x, y, _ = q.transform_point([1.0, 0.0, 0.0])
    assert abs(x - 1.0) < 1e-12 and abs(y - 1.0) < 1e-12
    try:
        sl.Pose([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0, 0.0, 0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("non-rotation accepted")


def check_iou():
    same = sl.iou_3d([0, 0, 0], 0.3, [4, 2, 1.5], [0, 0, 0], 0.3, [4, 2, 1.5])
    assert abs(same - 1.0) < 1e-12
    half = sl.iou_3d([0, 0, 0], 0.0, [2, 2, 2], [1, 0, 0], 0.0, [2, 2, 2])
    assert abs(half - 1.0 / 3.0) < 1e-12
    apart = sl.iou_3d([0, 0, 0], 0.0, [1, 1, 1], [5, 0, 0], 0.0, [1, 1, 1])
    assert apart == 0.0


def check_ate():
    gt = [[float(i), float(i % 3), 0.0] for i in range(10)]
    moved = sl.Pose.from_yaw(0.7, [3.0, -1.0, 0.5])
    est = [moved.transform_point(p) for p in gt]
    report = sl.ate(est, gt)
    assert report["rmse"] < 1e-9 and report["n"] == 10


def check_pipeline():
    config = json.dumps({"trajectory": {"shape": "rectangle", "revisit": {"offset_deg": 130}}})
    scenario = sl.simulate(config, seed=600)
    assert scenario.n_frames == len(scenario.ground_truth())
    assert scenario.revisit_start is not None
    result = sl.run_pipeline(scenario)
    before, after = result.ate_before(), result.ate_after()
    print(f"frames {scenario.n_frames}, detections {scenario.n_detections}, loops {result.n_loops}")
    print(f"ATE rmse before {before['rmse']:.3f} m, after {after['rmse']:.3f} m")
    print(f"association accuracy {result.association_accuracy:.4f}")
    assert result.n_loops > 0
    assert after["rmse"] < before["rmse"]
    assert len(result.trajectory_after()) == scenario.n_frames
    for _, precision, recall in result.precision_recall([0.0, 3.0, 1e9]):
        assert 0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0
    print("loops:", result.loops()[:2])

    again = sl.run_pipeline(sl.simulate(config, seed=600))
    assert [p.translation for p in again.trajectory_after()] == [p.translation for p in result.trajectory_after()]


if __name__ == "__main__":
    check_pose()
    check_iou()
    check_ate()
    check_pipeline()
    print("smoke test passed")
