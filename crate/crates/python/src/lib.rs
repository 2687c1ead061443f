//! Python bindings.
//!
//! Images cross the boundary as nested `H×W×C` lists of floats, so
//! `numpy.asarray` works on every returned image. Configurations, schedules,
//! descriptors and reports cross as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use turnsplat::fit::FitConfig;
use turnsplat::image::{BitDepth, Image};
use turnsplat::meshing::{self, MeshFormat};
use turnsplat::raster::{render, RasterSettings};
use turnsplat::refine::{self, RefineRequest, RefineSchedule};
use turnsplat::scene::{self, Gaussian};
use turnsplat::synth::{self, ExperimentDescriptor};
use turnsplat::{io, Error};

type Nested = Vec<Vec<Vec<f32>>>;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Refiner { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_nested(img: &Image<f32>) -> Nested {
    let c = img.channels();
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| (0..c).map(|k| img.get(x, y, k)).collect()).collect())
        .collect()
}

fn from_nested(rows: &Nested) -> PyResult<Image<f32>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    let c = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(h * w * c);
    for row in rows {
        if row.len() != w {
            return Err(PyValueError::new_err("ragged image rows"));
        }
        for px in row {
            if px.len() != c {
                return Err(PyValueError::new_err("ragged image channels"));
            }
            data.extend_from_slice(px);
        }
    }
    Image::from_vec(w, h, c, data).map_err(err)
}

fn parse<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(json_err),
        None => Ok(T::default()),
    }
}

fn fit_config(json: Option<&str>) -> PyResult<FitConfig> {
    let c: FitConfig = parse(json)?;
    c.validate().map_err(err)?;
    Ok(c)
}

/// A cloud of anisotropic 3D Gaussians.
#[pyclass(module = "turnsplat_py", from_py_object)]
#[derive(Clone)]
pub struct GaussianCloud {
    inner: scene::GaussianCloud,
}

#[pymethods]
impl GaussianCloud {
    #[new]
    #[pyo3(signature = (extent = 1.0))]
    fn new(extent: f64) -> Self {
        Self {
            inner: scene::GaussianCloud::new(extent),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_splats(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_splats(&self.inner, &path).map_err(err)
    }

    /// Append an isotropic Gaussian; returns its id.
    fn add_isotropic(&mut self, mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> PyResult<u64> {
        if !(scale > 0.0 && opacity > 0.0 && opacity < 1.0) {
            return Err(PyValueError::new_err("scale must be positive and opacity in (0, 1)"));
        }
        Ok(self.inner.push(Gaussian::isotropic(mean, scale, opacity, color)))
    }

    #[getter]
    fn extent(&self) -> f64 {
        self.inner.extent
    }

    fn means(&self) -> Vec<[f64; 3]> {
        self.inner.gaussians().iter().map(|g| g.mean).collect()
    }

    fn scales(&self) -> Vec<[f64; 3]> {
        self.inner.gaussians().iter().map(|g| g.scales()).collect()
    }

    /// Unit quaternions `(w, x, y, z)`.
    fn rotations(&self) -> Vec<[f64; 4]> {
        self.inner.gaussians().iter().map(|g| g.rotation).collect()
    }

    fn opacities(&self) -> Vec<f64> {
        self.inner.gaussians().iter().map(|g| g.opacity()).collect()
    }

    fn colors(&self) -> Vec<[f64; 3]> {
        self.inner.gaussians().iter().map(|g| g.color).collect()
    }

    fn mean_radius(&self) -> f64 {
        self.inner.mean_radius()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("GaussianCloud(len={}, extent={})", self.inner.len(), self.inner.extent)
    }
}

/// Pinhole cameras placed on a turn-table orbit.
#[pyclass(module = "turnsplat_py", from_py_object)]
#[derive(Clone)]
pub struct CameraRig {
    inner: scene::CameraRig,
}

#[pymethods]
impl CameraRig {
    #[staticmethod]
    #[pyo3(signature = (views, elevation, distance, fov_y, width, height, azimuth_offset = 0.0))]
    fn turntable(
        views: usize,
        elevation: f64,
        distance: f64,
        fov_y: f64,
        width: usize,
        height: usize,
        azimuth_offset: f64,
    ) -> PyResult<Self> {
        let inner = scene::make_turntable_rig(views, elevation, distance, fov_y, width, height, azimuth_offset)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scene::CameraRig::from_json(json).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// The rig rotated by half a view step.
    fn interleaved(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.interleaved().map_err(err)?,
        })
    }

    fn azimuths(&self) -> Vec<f64> {
        self.inner.azimuths()
    }

    #[getter]
    fn elevation(&self) -> f64 {
        self.inner.elevation
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Posed RGB views with optional masks.
#[pyclass(module = "turnsplat_py", from_py_object)]
#[derive(Clone)]
pub struct ViewSet {
    inner: scene::ViewSet,
}

#[pymethods]
impl ViewSet {
    #[new]
    #[pyo3(signature = (images, rig, masks = None))]
    fn new(images: Vec<Nested>, rig: &CameraRig, masks: Option<Vec<Nested>>) -> PyResult<Self> {
        let images = images.iter().map(from_nested).collect::<PyResult<Vec<_>>>()?;
        let masks = masks.map(|m| m.iter().map(from_nested).collect::<PyResult<Vec<_>>>()).transpose()?;
        let cond = scene::Conditioning::with_elevation(rig.inner.elevation);
        Ok(Self {
            inner: scene::ViewSet::new(images, masks, rig.inner.clone(), cond).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_view_set(&dir).map_err(err)?,
        })
    }

    #[pyo3(signature = (dir, sixteen_bit = false))]
    fn save(&self, dir: PathBuf, sixteen_bit: bool) -> PyResult<()> {
        let depth = if sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
        io::save_view_set(&self.inner, &dir, depth).map_err(err)
    }

    fn image(&self, k: usize) -> PyResult<Nested> {
        self.inner.images.get(k).map(to_nested).ok_or_else(|| PyIndexError::new_err(k))
    }

    fn mask(&self, k: usize) -> PyResult<Option<Nested>> {
        match &self.inner.masks {
            None => Ok(None),
            Some(m) => m.get(k).map(|m| Some(to_nested(m))).ok_or_else(|| PyIndexError::new_err(k)),
        }
    }

    #[getter]
    fn rig(&self) -> CameraRig {
        CameraRig {
            inner: self.inner.rig.clone(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Triangle mesh from marching cubes.
#[pyclass(module = "turnsplat_py")]
pub struct Mesh {
    inner: meshing::Mesh,
}

#[pymethods]
impl Mesh {
    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices.clone()
    }

    #[getter]
    fn triangles(&self) -> Vec<[u32; 3]> {
        self.inner.triangles.clone()
    }

    #[getter]
    fn colors(&self) -> Option<Vec<[f64; 3]>> {
        self.inner.colors.clone()
    }

    fn signed_volume(&self) -> f64 {
        self.inner.signed_volume()
    }

    /// Write `.obj` or `.ply`, chosen by extension.
    fn export(&self, path: PathBuf) -> PyResult<()> {
        let format = MeshFormat::from_path(&path).map_err(err)?;
        meshing::export_mesh(&self.inner, &path, format).map_err(err)
    }
}

/// Render one rig camera; returns `(rgb, alpha)`.
#[pyfunction]
#[pyo3(name = "render", signature = (cloud, rig, index, background = [1.0; 3]))]
fn render_view(cloud: &GaussianCloud, rig: &CameraRig, index: usize, background: [f64; 3]) -> PyResult<(Nested, Nested)> {
    let cam = rig.inner.cameras.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
    let out = render::<f32>(&cloud.inner, cam, background, &RasterSettings::default()).map_err(err)?;
    Ok((to_nested(&out.rgb), to_nested(&out.alpha)))
}

/// Render every rig camera into a view set whose masks are the alphas.
#[pyfunction]
#[pyo3(signature = (cloud, rig, background = [1.0; 3]))]
fn render_views(py: Python<'_>, cloud: &GaussianCloud, rig: &CameraRig, background: [f64; 3]) -> PyResult<ViewSet> {
    let inner = py
        .detach(|| synth::render_ground_truth(&cloud.inner, &rig.inner, background))
        .map_err(err)?;
    Ok(ViewSet { inner })
}

/// Default fit configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string(&FitConfig::default()).map_err(json_err)
}

/// Default refine schedule as JSON.
#[pyfunction]
fn default_schedule() -> PyResult<String> {
    serde_json::to_string(&RefineSchedule::default()).map_err(json_err)
}

/// Build a synthetic experiment from a JSON descriptor.
///
/// Returns `(scene, clean, inconsistent, heldout)`; the last two may be `None`.
#[pyfunction]
#[pyo3(signature = (descriptor = None))]
fn synthesize(
    py: Python<'_>,
    descriptor: Option<&str>,
) -> PyResult<(GaussianCloud, ViewSet, Option<ViewSet>, Option<ViewSet>)> {
    let d: ExperimentDescriptor = parse(descriptor)?;
    let e = py.detach(|| synth::run_experiment(&d)).map_err(err)?;
    let wrap = |v: Option<scene::ViewSet>| v.map(|inner| ViewSet { inner });
    Ok((GaussianCloud { inner: e.scene }, ViewSet { inner: e.clean }, wrap(e.inconsistent), wrap(e.heldout)))
}

/// Fit a cloud to `views`; returns `(cloud, report_json)`.
#[pyfunction]
#[pyo3(signature = (views, config = None))]
fn fit(py: Python<'_>, views: &ViewSet, config: Option<&str>) -> PyResult<(GaussianCloud, String)> {
    let cfg = fit_config(config)?;
    let (cloud, report) = py.detach(|| turnsplat::fit::fit(&views.inner, &cfg)).map_err(err)?;
    Ok((GaussianCloud { inner: cloud }, report.to_json().map_err(err)?))
}

/// Score a cloud against held-out views; returns the metrics report as JSON.
#[pyfunction]
#[pyo3(signature = (cloud, heldout, background = [1.0; 3]))]
fn evaluate(py: Python<'_>, cloud: &GaussianCloud, heldout: &ViewSet, background: [f64; 3]) -> PyResult<String> {
    let m = py.detach(|| synth::evaluate(&cloud.inner, &heldout.inner, background)).map_err(err)?;
    m.to_json().map_err(err)
}

/// PSNR in dB between two images of the same shape.
#[pyfunction]
fn psnr(a: Nested, b: Nested) -> PyResult<f64> {
    synth::psnr(&from_nested(&a)?, &from_nested(&b)?).map_err(err)
}

/// Forward-noise every view: `√(1−σ²)·x + σ·ε`.
#[pyfunction]
fn noise_views(views: &ViewSet, sigma_t: f64, seed: u64) -> PyResult<ViewSet> {
    Ok(ViewSet {
        inner: refine::noise_views(&views.inner, sigma_t, seed).map_err(err)?,
    })
}

/// Fit with periodic view refinement.
///
/// `refiner` is either a float `beta` (oracle refiner pulling toward
/// `ground_truth`) or a callable `f(noised_images, sigma_t, round, seed)`
/// returning refined images. Returns `(cloud, final_views, report_json)`.
#[pyfunction]
#[pyo3(signature = (views, refiner, ground_truth = None, config = None, schedule = None, heldout = None))]
fn refine_fit(
    py: Python<'_>,
    views: &ViewSet,
    refiner: Bound<'_, PyAny>,
    ground_truth: Option<&ViewSet>,
    config: Option<&str>,
    schedule: Option<&str>,
    heldout: Option<&ViewSet>,
) -> PyResult<(GaussianCloud, ViewSet, String)> {
    let cfg = fit_config(config)?;
    let sched: RefineSchedule = parse(schedule)?;
    let held = heldout.map(|h| &h.inner);
    let result = if let Ok(beta) = refiner.extract::<f64>() {
        let gt = ground_truth.ok_or_else(|| PyValueError::new_err("an oracle refiner needs ground_truth"))?;
        let mut oracle = refine::oracle_refiner(&gt.inner, beta).map_err(err)?;
        py.detach(|| refine::refine_loop(&views.inner, &mut oracle, &cfg, &sched, held))
    } else if refiner.is_callable() {
        let mut call = |req: &RefineRequest<'_>| -> turnsplat::Result<Vec<Image<f32>>> {
            let fail = |message: String| Error::Refiner {
                round: req.round,
                message,
            };
            let noised: Vec<Nested> = req.noised.iter().map(to_nested).collect();
            let out = refiner
                .call1((noised, req.sigma_t, req.round, req.seed))
                .and_then(|o| o.extract::<Vec<Nested>>())
                .map_err(|e| fail(e.to_string()))?;
            out.iter().map(|n| from_nested(n).map_err(|e| fail(e.to_string()))).collect()
        };
        refine::refine_loop(&views.inner, &mut call, &cfg, &sched, held)
    } else {
        return Err(PyValueError::new_err("refiner must be a float beta or a callable"));
    };
    let (cloud, final_views, report) = result.map_err(err)?;
    Ok((
        GaussianCloud { inner: cloud },
        ViewSet { inner: final_views },
        report.to_json().map_err(err)?,
    ))
}

/// Extract the iso-surface of the cloud's density on a uniform grid.
#[pyfunction]
#[pyo3(signature = (cloud, resolution = 128, iso = meshing::DEFAULT_ISO))]
fn marching_cubes(py: Python<'_>, cloud: &GaussianCloud, resolution: usize, iso: f64) -> PyResult<Mesh> {
    let inner = py.detach(|| meshing::marching_cubes(&cloud.inner, resolution, iso)).map_err(err)?;
    Ok(Mesh { inner })
}

#[pymodule]
fn turnsplat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GaussianCloud>()?;
    m.add_class::<CameraRig>()?;
    m.add_class::<ViewSet>()?;
    m.add_class::<Mesh>()?;
    m.add_function(wrap_pyfunction!(render_view, m)?)?;
    m.add_function(wrap_pyfunction!(render_views, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(default_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(noise_views, m)?)?;
    m.add_function(wrap_pyfunction!(refine_fit, m)?)?;
    m.add_function(wrap_pyfunction!(marching_cubes, m)?)?;
    Ok(())
}
