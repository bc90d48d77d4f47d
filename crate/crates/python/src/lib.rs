//! Python bindings for the push-to-pick planner.

use ipromp::basis::GaussianBasis;
use ipromp::demos::{generate_nominals, DemoConfig, DemoSet};
use ipromp::geometry::Vec3;
use ipromp::iplanner::{plan_target, CycleConfig, CyclePlan, Primitive, HOME};
use ipromp::promp::{self, Waypoint};
use ipromp::scene::{preset, ClusterScene, PRESETS};
use ipromp::sim::{contact_metrics, metrics_json, replay, SimConfig, SimTrace};
use ipromp::{Error, ErrorKind};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Validation => PyValueError::new_err(e.to_string()),
        ErrorKind::Numerical => PyArithmeticError::new_err(e.to_string()),
        ErrorKind::Io => PyIOError::new_err(e.to_string()),
    }
}

fn arr(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[pyclass(name = "Scene", module = "ipromp")]
struct PyScene(ClusterScene);

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn preset(id: &str) -> PyResult<Self> {
        preset(id).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ClusterScene::from_json(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    fn fruit_ids(&self) -> Vec<usize> {
        self.0.fruits.iter().map(|f| f.id).collect()
    }

    fn ripe_ids(&self) -> Vec<usize> {
        self.0.ripe().map(|f| f.id).collect()
    }

    fn position(&self, fruit: usize) -> PyResult<[f64; 3]> {
        self.0.fruit(fruit).map(|f| arr(f.position)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Scene({} fruits)", self.0.fruits.len())
    }
}

#[pyclass(name = "DemoSet", module = "ipromp")]
struct PyDemoSet(DemoSet);

#[pymethods]
impl PyDemoSet {
    #[staticmethod]
    #[pyo3(signature = (seed = 0, samples_per_traj = 10))]
    fn generate(seed: u64, samples_per_traj: usize) -> PyResult<Self> {
        let cfg = DemoConfig {
            samples_per_traj,
            ..DemoConfig::default()
        };
        generate_nominals(&cfg, seed).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        DemoSet::from_json(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    fn window(&self, start: f64, end: f64, duration: f64) -> PyResult<Self> {
        self.0.window(start, end, duration).map(Self).map_err(to_py)
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration
    }

    fn __len__(&self) -> usize {
        self.0.demos.len()
    }
}

#[pyclass(name = "ProMP", module = "ipromp")]
struct PyProMP(promp::ProMP);

#[pymethods]
impl PyProMP {
    #[staticmethod]
    #[pyo3(signature = (demos, k, h = None, lam = promp::DEFAULT_LAMBDA))]
    fn learn(demos: &PyDemoSet, k: usize, h: Option<f64>, lam: f64) -> PyResult<Self> {
        let basis = match h {
            Some(h) => GaussianBasis::with_bandwidth(k, h),
            None => GaussianBasis::new(k),
        }
        .map_err(to_py)?;
        promp::ProMP::learn(&demos.0, &basis, lam).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        promp::ProMP::from_json(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.basis().len()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration()
    }

    fn mean_at(&self, t: f64) -> PyResult<[f64; 3]> {
        self.0.mean_at(t).map(arr).map_err(to_py)
    }

    fn var_at(&self, t: f64) -> PyResult<[f64; 3]> {
        self.0.var_at(t).map(arr).map_err(to_py)
    }

    fn with_weight_prior(&self, variance: f64) -> PyResult<Self> {
        self.0.with_weight_prior(variance).map(Self).map_err(to_py)
    }

    /// Hard conditioning on `position` at time `t`.
    fn condition(&self, t: f64, position: [f64; 3]) -> PyResult<Self> {
        self.0.condition(&Waypoint::hard(t, Vec3::from(position))).map(Self).map_err(to_py)
    }

    fn sample(&self, times: Vec<f64>, seed: u64) -> PyResult<Vec<[f64; 3]>> {
        let traj = self.0.sample_trajectory(&times, seed).map_err(to_py)?;
        Ok(traj.points.into_iter().map(arr).collect())
    }
}

#[pyclass(name = "Primitive", module = "ipromp")]
struct PyPrimitive(Primitive);

#[pymethods]
impl PyPrimitive {
    #[staticmethod]
    #[pyo3(signature = (mp1, mp2, t1 = promp::DEFAULT_T1, total = promp::DEFAULT_TOTAL))]
    fn composite(mp1: &PyProMP, mp2: &PyProMP, t1: f64, total: f64) -> PyResult<Self> {
        Primitive::composite(&mp1.0, &mp2.0, t1, total).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (mp, total = promp::DEFAULT_TOTAL))]
    fn single(mp: &PyProMP, total: f64) -> PyResult<Self> {
        Primitive::single(&mp.0, total).map(Self).map_err(to_py)
    }

    /// Reach and push segments trained on seeded demonstrations.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, k1 = promp::DEFAULT_K1, k2 = promp::DEFAULT_K2))]
    fn trained(seed: u64, k1: usize, k2: usize) -> PyResult<Self> {
        let set = generate_nominals(&DemoConfig::default(), seed).map_err(to_py)?;
        let t1 = promp::DEFAULT_T1;
        let total = promp::DEFAULT_TOTAL;
        let reach = set.window(0.0, t1, t1).map_err(to_py)?;
        let push = set.window(t1, set.duration, total - t1).map_err(to_py)?;
        let basis = |k| GaussianBasis::new(k).map_err(to_py);
        let mp1 = promp::ProMP::learn(&reach, &basis(k1)?, promp::DEFAULT_LAMBDA).map_err(to_py)?;
        let mp2 = promp::ProMP::learn(&push, &basis(k2)?, promp::DEFAULT_LAMBDA).map_err(to_py)?;
        Self::composite(&PyProMP(mp1), &PyProMP(mp2), t1, total)
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration()
    }

    fn mean_at(&self, t: f64) -> PyResult<[f64; 3]> {
        self.0.mean_at(t).map(arr).map_err(to_py)
    }
}

#[pyclass(name = "Plan", module = "ipromp")]
struct PyPlan(CyclePlan);

#[pymethods]
impl PyPlan {
    #[getter]
    fn target(&self) -> usize {
        self.0.plan.target_id
    }

    #[getter]
    fn pushed(&self) -> Vec<usize> {
        self.0.plan.directives.iter().map(|d| d.fruit_id).collect()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.result.mean_path.times.clone()
    }

    #[getter]
    fn mean(&self) -> Vec<[f64; 3]> {
        self.0.result.mean_path.mean.iter().copied().map(arr).collect()
    }

    #[getter]
    fn planning_time(&self) -> f64 {
        self.0.result.planning_time
    }

    fn max_waypoint_error(&self) -> PyResult<f64> {
        self.0.result.max_waypoint_error().map_err(to_py)
    }

    fn plan_json(&self) -> PyResult<String> {
        self.0.plan.to_json().map_err(to_py)
    }

    fn schedule_json(&self) -> PyResult<String> {
        self.0.result.schedule.to_json().map_err(to_py)
    }

    fn trajectory_csv(&self) -> String {
        self.0.result.mean_path.to_csv()
    }
}

#[pyclass(name = "Trace", module = "ipromp")]
struct PyTrace {
    trace: SimTrace,
    metrics: String,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn min_clearance(&self) -> f64 {
        self.trace.min_clearance.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(tick, fruit)` if a stem jammed.
    #[getter]
    fn jam(&self) -> Option<(usize, usize)> {
        self.trace.jam.map(|j| (j.tick, j.fruit))
    }

    fn displacement(&self, fruit: usize) -> Option<f64> {
        self.trace.displacement(fruit)
    }

    fn metrics_json(&self) -> String {
        self.metrics.clone()
    }

    fn to_csv(&self) -> String {
        self.trace.to_csv()
    }

    fn __len__(&self) -> usize {
        self.trace.len()
    }
}

#[pyfunction]
#[pyo3(signature = (scene, target, primitive, prev_goal = None, naive = false, timing = "T_c1"))]
fn plan(
    scene: &PyScene,
    target: usize,
    primitive: &PyPrimitive,
    prev_goal: Option<[f64; 3]>,
    naive: bool,
    timing: &str,
) -> PyResult<PyPlan> {
    let cfg = CycleConfig {
        naive,
        timing: timing.to_string(),
        ..CycleConfig::default()
    };
    let start = Vec3::from(prev_goal.unwrap_or(HOME));
    plan_target(&scene.0, target, start, &primitive.0, &cfg).map(PyPlan).map_err(to_py)
}

#[pyfunction]
#[pyo3(name = "replay", signature = (scene, plan, spring_back = 0.0))]
fn replay_plan(scene: &PyScene, plan: &PyPlan, spring_back: f64) -> PyResult<PyTrace> {
    let sim = SimConfig {
        spring_back,
        ..SimConfig::default()
    };
    let traj = plan.0.result.mean_path.mean_trajectory();
    let trace = replay(&scene.0, &traj, Some(plan.0.plan.target_id), &sim).map_err(to_py)?;
    let metrics = contact_metrics(&trace, &scene.0, &plan.0.plan).map_err(to_py)?;
    let metrics = metrics_json("scene", &metrics).map_err(to_py)?;
    Ok(PyTrace { trace, metrics })
}

#[pymodule]
#[pyo3(name = "ipromp")]
fn ipromp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyDemoSet>()?;
    m.add_class::<PyProMP>()?;
    m.add_class::<PyPrimitive>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(replay_plan, m)?)?;
    m.add("PRESETS", PRESETS.to_vec())?;
    Ok(())
}
