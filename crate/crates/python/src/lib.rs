//! Python bindings: poses, cuboid IoU, the simulator, the pipeline and metrics.

use nalgebra::{Matrix3, Vector3, Vector6};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use semloop::evaluation::{ate as ate_report, pr_curve, AteReport, Trajectory};
use semloop::geometry::{iou_3d as cuboid_iou, Cuboid, Pose as CorePose, Twist};
use semloop::pipeline::{run_pipeline as run, PipelineConfig, PipelineInput, PipelineOutput};
use semloop::simulation::{simulate as run_simulation, Scenario as CoreScenario, ScenarioConfig};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix4(p: &CorePose) -> [[f64; 4]; 4] {
    let (r, t) = (p.rotation(), p.translation());
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn report_dict<'py>(py: Python<'py>, r: &AteReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mse", r.mse)?;
    d.set_item("rmse", r.rmse)?;
    d.set_item("std", r.std)?;
    d.set_item("max", r.max)?;
    d.set_item("n", r.n)?;
    Ok(d)
}

/// Rigid transform T = [R | t].
#[pyclass(name = "Pose", skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyPose {
    inner: CorePose,
}

#[pymethods]
impl PyPose {
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        let inner = CorePose::new(r, Vector3::from(translation)).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: CorePose::identity(),
        }
    }

    #[staticmethod]
    fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        Self {
            inner: CorePose::from_yaw(yaw, Vector3::from(translation)),
        }
    }

    /// Twist ordered as rotation then translation.
    #[staticmethod]
    fn exp(twist: [f64; 6]) -> Self {
        Self {
            inner: CorePose::exp(&Twist::from_vector(&Vector6::from(twist))),
        }
    }

    fn log(&self) -> PyResult<[f64; 6]> {
        let v = self.inner.log().map_err(value_err)?.to_vector();
        Ok(v.into())
    }

    fn compose(&self, other: PyRef<'_, PyPose>) -> Self {
        Self {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn __matmul__(&self, other: PyRef<'_, PyPose>) -> Self {
        self.compose(other)
    }

    fn inverse(&self) -> Self {
        Self {
            inner: self.inner.inverse(),
        }
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.inner.transform_point(&Vector3::from(p)).into()
    }

    fn matrix(&self) -> [[f64; 4]; 4] {
        matrix4(&self.inner)
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        (*self.inner.translation()).into()
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.inner.rotation();
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.inner.yaw()
    }

    fn max_abs_diff(&self, other: PyRef<'_, PyPose>) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __repr__(&self) -> String {
        let t = self.inner.translation();
        format!("Pose(t=[{:.4}, {:.4}, {:.4}], yaw={:.4})", t.x, t.y, t.z, self.inner.yaw())
    }
}

/// Simulated run: ground truth, odometry and per-frame detections.
#[pyclass(name = "Scenario")]
struct PyScenario {
    inner: CoreScenario,
}

#[pymethods]
impl PyScenario {
    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.truth.poses.len()
    }

    #[getter]
    fn n_objects(&self) -> usize {
        self.inner.truth.objects.len()
    }

    #[getter]
    fn revisit_start(&self) -> Option<usize> {
        self.inner.truth.revisit_start
    }

    #[getter]
    fn n_detections(&self) -> usize {
        self.inner.frames.iter().map(|f| f.detections.len()).sum()
    }

    fn ground_truth(&self) -> Vec<PyPose> {
        self.inner.truth.poses.iter().map(|p| PyPose { inner: *p }).collect()
    }

    fn odometry_trajectory(&self) -> Vec<PyPose> {
        self.inner
            .odometry_trajectory()
            .into_iter()
            .map(|p| PyPose { inner: p })
            .collect()
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(value_err)
    }
}

/// Mapping-only and loop-closing runs of one input.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    inner: PipelineOutput,
    tau_l: f64,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn n_loops(&self) -> usize {
        self.inner.after.loops.len()
    }

    #[getter]
    fn association_accuracy(&self) -> f64 {
        self.inner.after.association.accuracy()
    }

    fn ate_before<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        self.inner.ate_before.as_ref().map(|r| report_dict(py, r)).transpose()
    }

    fn ate_after<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        self.inner.ate_after.as_ref().map(|r| report_dict(py, r)).transpose()
    }

    fn trajectory_before(&self) -> Vec<PyPose> {
        self.inner.before.trajectory.iter().map(|(_, p)| PyPose { inner: *p }).collect()
    }

    fn trajectory_after(&self) -> Vec<PyPose> {
        self.inner.after.trajectory.iter().map(|(_, p)| PyPose { inner: *p }).collect()
    }

    fn loops<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .after
            .loops
            .iter()
            .map(|l| {
                let r = l.record();
                let d = PyDict::new(py);
                d.set_item("loop_frame", r.loop_frame)?;
                d.set_item("current_frame", r.current_frame)?;
                d.set_item("n_matches", r.n_matches)?;
                d.set_item("drift_translation_m", r.drift_translation_m)?;
                d.set_item("drift_rotation_deg", r.drift_rotation_deg)?;
                Ok(d)
            })
            .collect()
    }

    /// One `(threshold, precision, recall)` per threshold.
    fn precision_recall(&self, thresholds: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        let curve = pr_curve(&self.inner.after.attempts, self.tau_l, &thresholds).map_err(value_err)?;
        Ok(curve.iter().map(|p| (p.threshold, p.precision, p.recall)).collect())
    }
}

/// Simulates a scenario from an optional JSON config; `seed` overrides it.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn simulate(config: Option<&str>, seed: Option<u64>) -> PyResult<PyScenario> {
    let mut cfg: ScenarioConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(value_err)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let inner = run_simulation(&cfg).map_err(value_err)?;
    Ok(PyScenario { inner })
}

/// Runs the back-end on a scenario with an optional JSON pipeline config.
#[pyfunction]
#[pyo3(signature = (scenario, config=None))]
fn run_pipeline(py: Python<'_>, scenario: PyRef<'_, PyScenario>, config: Option<&str>) -> PyResult<PyRunResult> {
    let cfg: PipelineConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    let input = PipelineInput::from_scenario(&scenario.inner);
    let inner = py.detach(|| run(&input, &cfg)).map_err(value_err)?;
    Ok(PyRunResult { inner, tau_l: cfg.tau_l })
}

/// Absolute trajectory error between equally long position lists.
#[pyfunction]
#[pyo3(signature = (estimate, ground_truth, with_scale=false))]
fn ate<'py>(
    py: Python<'py>,
    estimate: Vec<[f64; 3]>,
    ground_truth: Vec<[f64; 3]>,
    with_scale: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let traj = |pts: &[[f64; 3]]| {
        let samples = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64, CorePose::from_translation(Vector3::from(*p))))
            .collect();
        Trajectory::new(samples).map_err(value_err)
    };
    let r = ate_report(&traj(&estimate)?, &traj(&ground_truth)?, with_scale).map_err(value_err)?;
    report_dict(py, &r)
}

/// IoU of two yawed cuboids given center, yaw and full dimensions.
#[pyfunction]
fn iou_3d(center_a: [f64; 3], yaw_a: f64, dims_a: [f64; 3], center_b: [f64; 3], yaw_b: f64, dims_b: [f64; 3]) -> PyResult<f64> {
    let a = Cuboid::new(Vector3::from(center_a), yaw_a, Vector3::from(dims_a)).map_err(value_err)?;
    let b = Cuboid::new(Vector3::from(center_b), yaw_b, Vector3::from(dims_b)).map_err(value_err)?;
    Ok(cuboid_iou(&a, &b))
}

#[pymodule]
fn semloop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    Ok(())
}
