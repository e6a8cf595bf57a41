//! Python bindings for `cadinspect`.
//!
//! Points cross the boundary as sequences of `(x, y, z)` triples, so plain
//! lists and `(n, 3)` NumPy arrays both work. Circles come back as
//! `(center, radius, normal)` tuples.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cadinspect::features::{self, Circle3D};
use cadinspect::registration;
use cadinspect::report::{self, PipelineConfig, SceneSpec};
use cadinspect::{Error, Point3, PointCloud};

type Triple = [f64; 3];
type CircleTuple = (Triple, f64, Triple);

/// The exception class follows the innermost error; the message keeps the
/// failing stage.
fn to_py(e: Error) -> PyErr {
    let mut inner = &e;
    while let Error::Stage { source, .. } = inner {
        inner = source;
    }
    let message = e.to_string();
    match inner {
        Error::Io { .. } => PyOSError::new_err(message),
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Degenerate(_) | Error::EmptyMesh => PyValueError::new_err(message),
        _ => PyRuntimeError::new_err(message),
    }
}

fn points(raw: Vec<Triple>) -> Vec<Point3> {
    raw.into_iter().map(|[x, y, z]| Point3::new(x, y, z)).collect()
}

fn cloud(raw: Vec<Triple>) -> PyResult<PointCloud> {
    PointCloud::new(points(raw)).map_err(to_py)
}

fn circle_tuple(c: &Circle3D) -> CircleTuple {
    (c.center.coords.into(), c.radius, c.normal.into())
}

fn config(toml: Option<&str>, seed: Option<u64>) -> PyResult<PipelineConfig> {
    let mut c = match toml {
        Some(text) => PipelineConfig::from_toml_str(text).map_err(to_py)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate().map_err(to_py)?;
    Ok(c)
}

/// Least-squares circle through at least three points.
#[pyfunction]
fn fit_circle(points: Vec<Triple>) -> PyResult<CircleTuple> {
    let pts = self::points(points);
    features::fit_circle(&pts).map(|c| circle_tuple(&c)).map_err(to_py)
}

/// Outlier-rejecting circle fit. Returns `(circle, inlier indices, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (points, eps = 0.1, eta = 0.03, max_iter = 150))]
fn fit_circle_iterative(points: Vec<Triple>, eps: f64, eta: f64, max_iter: usize) -> PyResult<(CircleTuple, Vec<usize>, usize, bool)> {
    let pts = self::points(points);
    let fit = features::fit_circle_iterative(&pts, eps, eta, max_iter).map_err(to_py)?;
    Ok((circle_tuple(&fit.circle), fit.inliers, fit.iterations, fit.converged))
}

/// Fits every circle in a set of edge points. Returns `(circles, labels)`
/// with label `-1` for points on no circle.
#[pyfunction]
#[pyo3(signature = (points, config = None, seed = None))]
fn fit_circles(py: Python<'_>, points: Vec<Triple>, config: Option<&str>, seed: Option<u64>) -> PyResult<(Vec<CircleTuple>, Vec<i32>)> {
    let params = self::config(config, seed)?.mcfs();
    let pts = self::points(points);
    let out = py.detach(|| features::mcfs(&pts, &params)).map_err(to_py)?;
    Ok((out.circles.iter().map(circle_tuple).collect(), out.labels))
}

/// Rigid registration of `source` onto `target`. Returns the row-major 4 × 4
/// transform and the final RMSE.
#[pyfunction]
#[pyo3(signature = (source, target, max_iter = 100, tol = 1e-6))]
fn register(py: Python<'_>, source: Vec<Triple>, target: Vec<Triple>, max_iter: usize, tol: f64) -> PyResult<([[f64; 4]; 4], f64)> {
    let (s, t) = (cloud(source)?, cloud(target)?);
    let r = py.detach(|| registration::register(&s, &t, max_iter, tol)).map_err(to_py)?;
    Ok((r.transform.to_rows(), r.rmse))
}

/// Runs the whole assessment on a scan file and a mesh file.
///
/// `config` is the text of a TOML settings document. The result holds the
/// headline errors, the scan-to-CAD transform, the fitted circles and the
/// full structured report under `"report"`. With `out` set, the report is
/// also written to that directory.
#[pyfunction]
#[pyo3(signature = (scan, mesh, config = None, seed = None, out = None))]
fn assess<'py>(py: Python<'py>, scan: &str, mesh: &str, config: Option<&str>, seed: Option<u64>, out: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let config = self::config(config, seed)?;
    let a = py.detach(|| report::run_pipeline(scan, mesh, &config)).map_err(to_py)?;
    if let Some(dir) = out {
        a.write(dir, &report::OutputOptions::default()).map_err(to_py)?;
    }
    let r = &a.report;
    let d = PyDict::new(py);
    for (k, v) in [
        ("e_reg", r.e_reg),
        ("e_global", r.e_global),
        ("e_part_avg", r.e_part_avg),
        ("e_part_max", r.e_part_max),
        ("e_comp_radius_avg", r.e_comp_radius_avg),
        ("e_comp_radius_max", r.e_comp_radius_max),
        ("e_comp_centroid_avg", r.e_comp_centroid_avg),
        ("e_comp_centroid_max", r.e_comp_centroid_max),
    ] {
        d.set_item(k, v)?;
    }
    d.set_item("f_n", r.f_n)?;
    d.set_item("f_p", r.f_p)?;
    d.set_item("primitives", r.primitives.len())?;
    d.set_item("transform", r.transform)?;
    d.set_item("circles", a.circles.circles.iter().map(circle_tuple).collect::<Vec<_>>())?;
    d.set_item("report", r.to_structured().map_err(to_py)?)?;
    Ok(d)
}

/// Writes a synthetic scan, mesh and ground truth for a TOML scene spec.
/// Returns the written paths.
#[pyfunction]
#[pyo3(signature = (spec, out, seed = 0))]
fn synth(spec: &str, out: &str, seed: u64) -> PyResult<Vec<String>> {
    let spec = SceneSpec::load(spec).map_err(to_py)?;
    let scene = report::generate_synthetic_scene(&spec, seed).map_err(to_py)?;
    let files = report::write_scene(&scene, seed, std::path::Path::new(out), false).map_err(to_py)?;
    Ok(files.into_iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn pycadinspect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fit_circle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_circle_iterative, m)?)?;
    m.add_function(wrap_pyfunction!(fit_circles, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
