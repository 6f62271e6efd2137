//! Python bindings: meshes, the morphable model, pipeline stages,
//! stylization, blending, rendering and metrics.
//!
//! Vertices cross the boundary as lists of `(x, y, z)` tuples and images as
//! nested `[channel][row][col]` lists, so the module needs nothing beyond the
//! interpreter.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use facestyle::checkpoint::Checkpoint;
use facestyle::config::RunConfig;
use facestyle::deform::DeformModel;
use facestyle::mage::MageModel;
use facestyle::mesh::{self, TriMesh};
use facestyle::morph::{MorphParams, TopologyVariant, ToyMorphable};
use facestyle::pipeline as pl;
use facestyle::render::{render_all, RenderRig};
use facestyle::stylize;
use facestyle::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<RunConfig> {
    json.map_or_else(|| Ok(RunConfig::default()), |s| RunConfig::from_json(s).map_err(py_err))
}

/// Triangle mesh with optional named landmark sets.
#[pyclass(name = "Mesh", module = "facestyle_py", unsendable)]
struct PyMesh {
    inner: TriMesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> PyResult<Self> {
        Ok(Self {
            inner: TriMesh::new(vertices, faces).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, landmarks=None))]
    fn read_obj(path: PathBuf, landmarks: Option<PathBuf>) -> PyResult<Self> {
        Ok(Self {
            inner: TriMesh::read_obj_with_landmarks(&path, landmarks.as_deref()).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn icosphere(levels: usize) -> Self {
        Self {
            inner: mesh::icosphere(levels),
        }
    }

    fn write_obj(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_obj(&path).map_err(py_err)
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().to_vec()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces().to_vec()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    #[getter]
    fn num_faces(&self) -> usize {
        self.inner.num_faces()
    }

    fn landmark_names(&self) -> Vec<String> {
        self.inner.landmarks().keys().cloned().collect()
    }

    fn face_areas(&self) -> Vec<f64> {
        self.inner.face_areas()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    /// Area-weighted surface samples, `ceil(ratio · V)` of them, as
    /// `(face, position)` pairs.
    fn sims_sample(&self, ratio: f64, seed: u64) -> PyResult<Vec<(usize, [f64; 3])>> {
        let s = mesh::sims_sample(&self.inner, ratio, seed).map_err(py_err)?;
        Ok(s.into_iter().map(|p| (p.face, p.position)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, faces={})", self.inner.num_vertices(), self.inner.num_faces())
    }
}

/// Procedural linear face model: template plus shape and expression bases.
#[pyclass(name = "MorphableModel", module = "facestyle_py", unsendable)]
struct PyMorphable {
    inner: ToyMorphable,
}

#[pymethods]
impl PyMorphable {
    #[new]
    #[pyo3(signature = (seed=0, config=None))]
    fn new(seed: u64, config: Option<&str>) -> PyResult<Self> {
        Ok(Self {
            inner: pl::gen_model(&self::config(config)?, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pl::load_morphable(&path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, seed=0))]
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        pl::save_morphable(&self.inner, &path, seed).map_err(py_err)
    }

    #[getter]
    fn shape_rank(&self) -> usize {
        self.inner.shape_rank()
    }

    #[getter]
    fn expr_rank(&self) -> usize {
        self.inner.expr_rank()
    }

    fn template(&self) -> PyMesh {
        PyMesh {
            inner: self.inner.template().clone(),
        }
    }

    /// `(beta, psi)` drawn uniformly from the sampling range.
    fn sample_params(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let p = self.inner.sample_params(seed);
        (p.beta, p.psi)
    }

    fn decode(&self, beta: Vec<f64>, psi: Vec<f64>) -> PyResult<PyMesh> {
        Ok(PyMesh {
            inner: self.inner.decode(&MorphParams { beta, psi }).map_err(py_err)?,
        })
    }

    /// Template remeshed as `original`, `simplified`, `loop1` or `loop2`.
    fn variant(&self, name: &str) -> PyResult<PyMesh> {
        let kind = TopologyVariant::parse(name).map_err(py_err)?;
        Ok(PyMesh {
            inner: self.inner.variant(kind).map_err(py_err)?.mesh,
        })
    }

    /// Carries a decoded original-topology mesh onto a remeshed template.
    fn remesh(&self, decoded: &PyMesh, name: &str) -> PyResult<PyMesh> {
        let kind = TopologyVariant::parse(name).map_err(py_err)?;
        let v = self.inner.variant(kind).map_err(py_err)?;
        Ok(PyMesh {
            inner: v.carry(&decoded.inner).map_err(py_err)?,
        })
    }
}

/// A stylized field together with the mesh-agnostic encoder.
#[pyclass(name = "Stylizer", module = "facestyle_py", unsendable)]
struct PyStylizer {
    dt: DeformModel,
    mage: MageModel,
}

#[pymethods]
impl PyStylizer {
    /// Loads `dt` and `mage` checkpoints; `config` must be the JSON they were
    /// trained with.
    #[staticmethod]
    #[pyo3(signature = (model, dt, mage, config=None, force=false))]
    fn load(
        model: &PyMorphable,
        dt: PathBuf,
        mage: PathBuf,
        config: Option<&str>,
        force: bool,
    ) -> PyResult<Self> {
        let cfg = self::config(config)?;
        Ok(Self {
            dt: pl::load_deform(&cfg, &model.inner, &dt, force).map_err(py_err)?,
            mage: pl::load_mage(&cfg, &model.inner, &mage, force).map_err(py_err)?,
        })
    }

    /// Latent code of any mesh, as `(z_s, z_e)`.
    fn encode(&self, mesh: &PyMesh) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let c = self.mage.encode(&mesh.inner).map_err(py_err)?;
        Ok((c.z_s, c.z_e))
    }

    /// Stylized `target` on the connectivity of `template`.
    fn stylize(&self, target: &PyMesh, template: &PyMesh) -> PyResult<PyMesh> {
        Ok(PyMesh {
            inner: stylize::stylize(&target.inner, &self.mage, &self.dt, &template.inner).map_err(py_err)?,
        })
    }
}

/// Runs every training stage into `out` with the default file names.
#[pyfunction]
#[pyo3(signature = (out, seed=0, config=None))]
fn run_pipeline(out: PathBuf, seed: u64, config: Option<&str>) -> PyResult<()> {
    let cfg = self::config(config)?;
    std::fs::create_dir_all(&out).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let go = || -> facestyle::Result<()> {
        let morph = pl::gen_model(&cfg, seed)?;
        pl::save_morphable(&morph, &out.join(pl::MODEL_FILE), seed)?;
        let (ds, _) = pl::run_train_ds(&cfg, &morph, seed)?;
        pl::save_deform(&ds, &out.join(pl::DS_FILE), seed)?;
        let ex = pl::make_exemplar(&cfg, &morph, seed)?;
        pl::save_exemplar(&ex, &out)?;
        let (dt, _) = pl::run_train_dt(&cfg, &ds, &ex, &morph, seed)?;
        pl::save_deform(&dt, &out.join(pl::DT_FILE), seed)?;
        let (mage, _, _) = pl::run_train_mage(&cfg, &ds, &morph, seed)?;
        pl::save_mage(&mage, &out.join(pl::MAGE_FILE), seed)
    };
    go().map_err(py_err)
}

/// `alpha·A + (1 − alpha)·B` over two checkpoint files, written to `out`.
#[pyfunction]
fn interpolate(a: PathBuf, b: PathBuf, alpha: f64, out: PathBuf) -> PyResult<()> {
    let ca = Checkpoint::load(&a, None, false).map_err(py_err)?;
    let cb = Checkpoint::load(&b, None, false).map_err(py_err)?;
    stylize::interpolate(&ca, &cb, alpha).map_err(py_err)?.save(&out).map_err(py_err)
}

/// Every rig view of `mesh` as `(level, view, [3][R][R] pixels)`. The rig is
/// anchored on `anchor`'s landmarks.
#[pyfunction]
#[pyo3(signature = (mesh, anchor, config=None))]
#[allow(clippy::type_complexity)]
fn render(mesh: &PyMesh, anchor: &PyMesh, config: Option<&str>) -> PyResult<Vec<(usize, usize, Vec<Vec<Vec<f64>>>)>> {
    let cfg = self::config(config)?;
    let rig = RenderRig::build(&anchor.inner, &cfg.rig).map_err(py_err)?;
    let views = render_all(&mesh.inner, &rig, &cfg.render).map_err(py_err)?;
    Ok(views
        .into_iter()
        .map(|(l, v, img)| {
            let r = img.resolution();
            let px = (0..3)
                .map(|c| (0..r).map(|y| (0..r).map(|x| img.get(c, y, x)).collect()).collect())
                .collect();
            (l, v, px)
        })
        .collect())
}

/// `{"sp", "ip", "avg"}`: embedding similarity to the style exemplar and to
/// the deformation target.
#[pyfunction]
#[pyo3(signature = (stylized, style_exemplar, target, anchor, config=None))]
fn eval_metrics(
    stylized: &PyMesh,
    style_exemplar: &PyMesh,
    target: &PyMesh,
    anchor: &PyMesh,
    config: Option<&str>,
) -> PyResult<std::collections::BTreeMap<&'static str, f64>> {
    let cfg = self::config(config)?;
    let space = pl::semantic_space(&cfg, &anchor.inner).map_err(py_err)?;
    let m = stylize::eval_metrics(&stylized.inner, &style_exemplar.inner, &target.inner, &space).map_err(py_err)?;
    Ok([("sp", m.sp), ("ip", m.ip), ("avg", m.avg)].into_iter().collect())
}

/// The full default configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json_pretty()
}

#[pyfunction]
fn stage_seed(seed: u64, stage: &str) -> u64 {
    pl::stage_seed(seed, stage)
}

#[pymodule]
pub fn facestyle_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyMorphable>()?;
    m.add_class::<PyStylizer>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(eval_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(stage_seed, m)?)?;
    m.add("MODEL_FILE", pl::MODEL_FILE)?;
    m.add("DS_FILE", pl::DS_FILE)?;
    m.add("DT_FILE", pl::DT_FILE)?;
    m.add("MAGE_FILE", pl::MAGE_FILE)?;
    m.add("EXEMPLAR_STYLE_FILE", pl::EXEMPLAR_STYLE_FILE)?;
    Ok(())
}
