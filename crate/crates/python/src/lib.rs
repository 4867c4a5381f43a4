//! Python bindings: build, query and export scene graphs from Python.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use sg3d_core::frame::CameraIntrinsics;
use sg3d_core::graph::{self, SceneGraph3D};
use sg3d_core::pddl::{self, ExportProfile};
use sg3d_core::pipeline::{build_dir, PipelineConfig};
use sg3d_core::query::{evaluate as run_query, parse_query, ColorTable, QueryContext, Taxonomy};
use sg3d_core::synth::{evaluate_graph, generate_bundle, GroundTruth, NoiseSpec, TrajectorySpec, WorldSpec};
use sg3d_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A scene graph loaded from (or built into) memory.
#[pyclass(name = "SceneGraph", module = "sg3d")]
struct PySceneGraph {
    inner: SceneGraph3D,
    path: Option<PathBuf>,
}

#[pymethods]
impl PySceneGraph {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = graph::load(&path).map_err(py_err)?;
        Ok(PySceneGraph {
            inner,
            path: Some(path),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = graph::from_json_str(text, None).map_err(py_err)?;
        Ok(PySceneGraph { inner, path: None })
    }

    fn save(&mut self, path: PathBuf) -> PyResult<()> {
        graph::save(&self.inner, &path).map_err(py_err)?;
        self.path = Some(path);
        Ok(())
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.nodes().len()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.edge_count()
    }

    fn __len__(&self) -> usize {
        self.inner.nodes().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SceneGraph(nodes={}, edges={})",
            self.inner.nodes().len(),
            self.inner.edge_count()
        )
    }

    /// Canonical JSON text, thumbnails omitted.
    fn to_json(&self) -> String {
        graph::to_canonical_json(&self.inner, None)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (self.to_json(),))
    }

    fn to_dot(&self) -> String {
        graph::to_dot(&self.inner)
    }

    /// Runs one query; returns the result as a dict.
    #[pyo3(signature = (expr, taxonomy=None, colors=None))]
    fn query<'py>(
        &self,
        py: Python<'py>,
        expr: &str,
        taxonomy: Option<PathBuf>,
        colors: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut ctx = QueryContext {
            graph_path: self.path.clone(),
            ..QueryContext::default()
        };
        if let Some(p) = taxonomy {
            ctx.taxonomy = Taxonomy::load(&p).map_err(py_err)?;
        }
        if let Some(p) = colors {
            ctx.colors = ColorTable::load(&p).map_err(py_err)?;
        }
        let q = parse_query(expr).map_err(py_err)?;
        to_py(py, &run_query(&self.inner, &q, &ctx))
    }

    #[pyo3(signature = (goal, name="scene", profile=None))]
    fn export_pddl(&self, goal: &str, name: &str, profile: Option<PathBuf>) -> PyResult<String> {
        let profile = match profile {
            Some(p) => ExportProfile::load(&p).map_err(py_err)?,
            None => ExportProfile::builtin(),
        };
        let problem = pddl::to_problem(&self.inner, &profile, goal, name).map_err(py_err)?;
        Ok(problem.render())
    }

    /// Matches the graph against a synthetic ground truth file.
    fn evaluate<'py>(&self, py: Python<'py>, ground_truth: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let truth = GroundTruth::load(&ground_truth).map_err(py_err)?;
        let m = evaluate_graph(&self.inner, &truth).map_err(py_err)?;
        to_py(py, &m)
    }
}

/// Builds a graph from a bundle directory. Returns (graph, report dict).
#[pyfunction]
#[pyo3(signature = (bundle, config=None, overrides=Vec::new(), seed=None))]
fn build<'py>(
    py: Python<'py>,
    bundle: PathBuf,
    config: Option<PathBuf>,
    mut overrides: Vec<String>,
    seed: Option<u64>,
) -> PyResult<(PySceneGraph, Bound<'py, PyAny>)> {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = match &config {
        Some(p) => PipelineConfig::load(p, &overrides),
        None => PipelineConfig::from_toml_with("", &overrides),
    }
    .map_err(py_err)?;
    let out = py.detach(|| build_dir(&bundle, &cfg)).map_err(py_err)?;
    let report = to_py(py, &out.report)?;
    Ok((
        PySceneGraph {
            inner: out.graph,
            path: None,
        },
        report,
    ))
}

fn read_intrinsics(p: &Path) -> PyResult<CameraIntrinsics> {
    let text = std::fs::read_to_string(p).map_err(|e| PyOSError::new_err(format!("{}: {e}", p.display())))?;
    let k: CameraIntrinsics =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("{}: {e}", p.display())))?;
    k.validate().map_err(py_err)?;
    Ok(k)
}

/// Renders a synthetic bundle into `out`; returns the ground truth dict.
#[pyfunction]
#[pyo3(signature = (world, trajectory, out, intrinsics, noise=None, seed=None))]
fn synthesize<'py>(
    py: Python<'py>,
    world: PathBuf,
    trajectory: PathBuf,
    out: PathBuf,
    intrinsics: PathBuf,
    noise: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let world = WorldSpec::load(&world).map_err(py_err)?;
    let trajectory = TrajectorySpec::load(&trajectory).map_err(py_err)?;
    let mut noise = match noise {
        Some(p) => NoiseSpec::load(&p).map_err(py_err)?,
        None => NoiseSpec::default(),
    };
    if let Some(s) = seed {
        noise.seed = s;
    }
    let k = read_intrinsics(&intrinsics)?;
    let truth = py
        .detach(|| generate_bundle(&world, &trajectory, &noise, &k, &out))
        .map_err(py_err)?;
    py.import("json")?.call_method1("loads", (truth.to_json(),))
}

/// Validates PDDL problem text; raises ValueError with the byte offset of the first problem.
#[pyfunction]
fn check_pddl(text: &str) -> PyResult<()> {
    pddl::check_pddl(text).map_err(|d| PyValueError::new_err(d.to_string()))
}

#[pymodule]
fn sg3d(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySceneGraph>()?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(check_pddl, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
