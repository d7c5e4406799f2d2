//! Python bindings. Images cross the boundary as float64 NumPy arrays of
//! shape (H, W, C) with values in [0, 1].

use numpy::{IntoPyArray, PyArray1, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3, PyUntypedArrayMethods};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use raw2raw_core::annotation;
use raw2raw_core::baselines::{self, FdaConfig};
use raw2raw_core::calibfit::{self, CalibrationMap, ColorSamplePair, Kernel, SampleOrigin};
use raw2raw_core::evalkit::{self, CameraColorProfile, EvalPair, IlluminantSource};
use raw2raw_core::nnmap::{self, model_io, Direction, InferConfig, MappingModel};
use raw2raw_core::rawio::{self, PackedImage, Patch};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn packed(img: &PyReadonlyArray3<'_, f64>, camera_id: &str) -> PyResult<PackedImage> {
    PackedImage::new(img.as_array().to_owned(), camera_id).map_err(value_err)
}

fn kernel(name: &str) -> PyResult<Kernel> {
    match name.to_ascii_lowercase().as_str() {
        "poly11" => Ok(Kernel::Poly11),
        "3x3" | "identity" | "linear" => Ok(Kernel::Identity),
        other => Err(PyValueError::new_err(format!("unknown kernel '{other}' (use 'poly11' or '3x3')"))),
    }
}

fn colors(a: &PyReadonlyArray2<'_, f64>, what: &str) -> PyResult<Vec<[f64; 3]>> {
    let v = a.as_array();
    if v.ncols() != 3 {
        return Err(PyValueError::new_err(format!("{what} must have shape (N, 3), got {:?}", a.shape())));
    }
    Ok(v.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
}

/// Loads a raw frame and returns (counts as uint16 (H, W, C), metadata JSON).
#[pyfunction]
fn load_frame<'py>(py: Python<'py>, path: &str) -> PyResult<(Bound<'py, PyArray3<u16>>, String)> {
    let f = rawio::load_frame(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let meta = f.meta.to_json();
    Ok((f.pixels.into_pyarray(py), meta))
}

/// Loads a raw frame and returns the normalized, packed image.
#[pyfunction]
fn load_image<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let f = rawio::load_frame(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(rawio::normalize(&f).map_err(value_err)?.data.into_pyarray(py))
}

/// Gamma-encoded 8-bit RGB rendering, shape (H, W, 3).
#[pyfunction]
fn render_preview<'py>(py: Python<'py>, img: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray3<u8>>> {
    let pv = rawio::render_preview(&packed(&img, "")?);
    let (h, w, _) = pv.data.dim();
    let bytes = ndarray::Array3::from_shape_vec((h, w, 3), pv.to_rgb8()).expect("preview is (h, w, 3)");
    Ok(bytes.into_pyarray(py))
}

/// Returns (pass, cv) for the square patch at (x, y) of the given size.
#[pyfunction]
#[pyo3(signature = (img, x, y, size, threshold = annotation::HOMOGENEITY_THRESHOLD))]
fn homogeneity_check(img: PyReadonlyArray3<'_, f64>, x: usize, y: usize, size: usize, threshold: f64) -> PyResult<(bool, f64)> {
    let h = annotation::homogeneity_check_with(&packed(&img, "")?, &Patch::new(x, y, size), threshold)
        .map_err(value_err)?;
    Ok((h.pass, h.cv))
}

/// CIEDE2000 color difference of two Lab triplets.
#[pyfunction]
fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    evalkit::ciede2000(lab1, lab2)
}

/// PSNR, SSIM, MAE and mean ΔE2000 of `mapped` against `gt`, using the
/// target camera's raw-to-XYZ matrix. Without an illuminant the gray-world
/// estimate of `gt` is used for both images.
#[pyfunction]
#[pyo3(signature = (mapped, gt, xyz_matrix, illuminant = None))]
fn evaluate(
    mapped: PyReadonlyArray3<'_, f64>,
    gt: PyReadonlyArray3<'_, f64>,
    xyz_matrix: [[f64; 3]; 3],
    illuminant: Option<[f64; 3]>,
) -> PyResult<(f64, f64, f64, f64)> {
    let profile = CameraColorProfile::new("target", xyz_matrix).map_err(value_err)?;
    let mut pair = EvalPair::new("image", packed(&mapped, "")?, packed(&gt, "")?);
    pair.illuminant = illuminant;
    let r = evalkit::evaluate_pair(&pair, &profile, IlluminantSource::Reference).map_err(value_err)?;
    Ok((r.psnr, r.ssim, r.mae, r.delta_e))
}

/// Fourier domain adaptation of `src` toward `target`'s low-frequency amplitude.
#[pyfunction]
#[pyo3(signature = (src, target, beta = baselines::DEFAULT_BETA))]
fn fda_map<'py>(
    py: Python<'py>,
    src: PyReadonlyArray3<'py, f64>,
    target: PyReadonlyArray3<'py, f64>,
    beta: f64,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let cfg = FdaConfig::new(beta).map_err(value_err)?;
    let out = baselines::fda_map(&packed(&src, "")?, &packed(&target, "")?, &cfg).map_err(value_err)?;
    Ok(out.data.into_pyarray(py))
}

/// Fitted color map `dst ≈ M φ(src)`.
#[pyclass(name = "CalibrationMap", module = "raw2raw", from_py_object)]
#[derive(Clone)]
struct PyCalibrationMap {
    inner: CalibrationMap,
}

#[pymethods]
impl PyCalibrationMap {
    /// Least-squares fit from (N, 3) source and destination colors.
    #[staticmethod]
    #[pyo3(signature = (src, dst, kernel = "poly11"))]
    fn fit(src: PyReadonlyArray2<'_, f64>, dst: PyReadonlyArray2<'_, f64>, kernel: &str) -> PyResult<Self> {
        let (s, d) = (colors(&src, "src")?, colors(&dst, "dst")?);
        if s.len() != d.len() {
            return Err(PyValueError::new_err(format!("{} source colors but {} targets", s.len(), d.len())));
        }
        let samples: Vec<ColorSamplePair> =
            s.into_iter().zip(d).map(|(a, b)| ColorSamplePair::new(a, b, SampleOrigin::Chart)).collect();
        let inner = calibfit::fit_map(&samples, self::kernel(kernel)?).map_err(value_err)?;
        Ok(PyCalibrationMap { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyCalibrationMap { inner: serde_json::from_str(text).map_err(value_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn kernel(&self) -> &'static str {
        match self.inner.kernel {
            Kernel::Identity => "3x3",
            Kernel::Poly11 => "poly11",
        }
    }

    /// The 3 × k matrix.
    #[getter]
    fn matrix<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.inner.matrix.clone().into_pyarray(py)
    }

    #[getter]
    fn residual_rms(&self) -> f64 {
        self.inner.fit_residual_rms
    }

    fn map_color(&self, rgb: [f64; 3]) -> [f64; 3] {
        self.inner.map_color(rgb)
    }

    /// Maps an (H, W, 3) image; returns (mapped, out-of-gamut fraction).
    fn apply<'py>(&self, py: Python<'py>, img: PyReadonlyArray3<'py, f64>) -> PyResult<(Bound<'py, PyArray3<f64>>, f64)> {
        let m = calibfit::apply_map(&packed(&img, "")?, &self.inner).map_err(value_err)?;
        Ok((m.image.data.into_pyarray(py), m.out_of_gamut_fraction))
    }

    fn __repr__(&self) -> String {
        format!("CalibrationMap(kernel={}, residual_rms={:.6})", self.kernel(), self.inner.fit_residual_rms)
    }
}

/// Trained dual encoder-decoder.
#[pyclass(name = "MappingModel", module = "raw2raw")]
struct PyMappingModel {
    inner: MappingModel<f32>,
}

#[pymethods]
impl PyMappingModel {
    /// Randomly initialized model with the given encoder widths.
    #[new]
    #[pyo3(signature = (in_channels, channels, skip_connections = true, seed = 0))]
    fn new(in_channels: usize, channels: Vec<usize>, skip_connections: bool, seed: u64) -> PyResult<Self> {
        let arch = nnmap::network::ArchitectureSpec::new(in_channels, channels, skip_connections).map_err(value_err)?;
        Ok(PyMappingModel { inner: MappingModel::init(&arch, seed).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyMappingModel { inner: model_io::load_model(path).map_err(|e| PyIOError::new_err(e.to_string()))? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model_io::save_model(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn in_channels(&self) -> usize {
        self.inner.arch.in_channels
    }

    #[getter]
    fn channels(&self) -> Vec<usize> {
        self.inner.arch.channels.clone()
    }

    /// Decoder-swap mapping of a full image ("A2B" or "B2A").
    #[pyo3(signature = (img, direction = "A2B", tile = 256, overlap = 32))]
    fn map_image<'py>(
        &self,
        py: Python<'py>,
        img: PyReadonlyArray3<'py, f64>,
        direction: &str,
        tile: usize,
        overlap: usize,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let dir: Direction = direction.parse().map_err(value_err)?;
        let src = packed(&img, "")?;
        let cfg = InferConfig { tile, overlap };
        let out = py.detach(|| nnmap::map_image_with(&src, &self.inner, dir, &cfg)).map_err(value_err)?;
        Ok(out.data.into_pyarray(py))
    }

    /// Trains a fresh model. `config` is the JSON training configuration;
    /// `anchors` is a list of aligned (A, B) image pairs. Returns the model
    /// and the per-epoch total loss.
    #[staticmethod]
    #[pyo3(signature = (channels, config, unpaired_a, unpaired_b, anchors, skip_connections = true))]
    fn train<'py>(
        py: Python<'py>,
        channels: Vec<usize>,
        config: &str,
        unpaired_a: Vec<PyReadonlyArray3<'py, f64>>,
        unpaired_b: Vec<PyReadonlyArray3<'py, f64>>,
        anchors: Vec<(PyReadonlyArray3<'py, f64>, PyReadonlyArray3<'py, f64>)>,
        skip_connections: bool,
    ) -> PyResult<(Self, Bound<'py, PyArray1<f64>>)> {
        let cfg: nnmap::TrainConfig = serde_json::from_str(config).map_err(value_err)?;
        let data = nnmap::TrainData {
            unpaired_a: unpaired_a.iter().map(|i| packed(i, "A")).collect::<PyResult<_>>()?,
            unpaired_b: unpaired_b.iter().map(|i| packed(i, "B")).collect::<PyResult<_>>()?,
            anchors: anchors.iter().map(|(a, b)| Ok((packed(a, "A")?, packed(b, "B")?))).collect::<PyResult<_>>()?,
        };
        let in_channels = data.channels().ok_or_else(|| PyValueError::new_err("no training images"))?;
        let arch =
            nnmap::network::ArchitectureSpec::new(in_channels, channels, skip_connections).map_err(value_err)?;
        let outcome = py
            .detach(|| nnmap::train::<f32>(&data, &arch, &cfg, nnmap::TrainOptions::default()))
            .map_err(value_err)?;
        let losses: Vec<f64> = outcome.log.iter().map(|l| l.total).collect();
        Ok((PyMappingModel { inner: outcome.model }, losses.into_pyarray(py)))
    }
}

#[pymodule]
fn raw2raw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(load_frame, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(render_preview, m)?)?;
    m.add_function(wrap_pyfunction!(homogeneity_check, m)?)?;
    m.add_function(wrap_pyfunction!(ciede2000, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fda_map, m)?)?;
    m.add_class::<PyCalibrationMap>()?;
    m.add_class::<PyMappingModel>()?;
    Ok(())
}
