//! Python bindings: `import pycolorvein`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use colorvein::colorize::{save_npz, ColorVein as CoreColorVein};
use colorvein::embedding::Checkpoint;
use colorvein::hints::IdentityToken as CoreToken;
use colorvein::imaging::{load_gray, BinaryPattern as CorePattern, FeatureVector as CoreFeature, GrayImage as CoreGray};
use colorvein::pipeline::{PipelineParams, System as CoreSystem, DEFAULT_HINT_COUNT};
use colorvein::{extraction, hints, matching, metrics, synthetic};

fn err(e: colorvein::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows_of(data: &[f64], width: usize) -> Vec<Vec<f64>> {
    data.chunks(width).map(<[f64]>::to_vec).collect()
}

fn flatten<T: Copy>(rows: Vec<Vec<T>>) -> PyResult<(usize, usize, Vec<T>)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok((h, w, rows.into_iter().flatten().collect()))
}

#[pyclass(frozen)]
struct GrayImage(CoreGray);

#[pymethods]
impl GrayImage {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let (h, w, data) = flatten(rows)?;
        CoreGray::new(h, w, data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_gray(path, None).map(Self).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        rows_of(self.0.data(), self.0.width())
    }
}

#[pyclass(frozen)]
struct BinaryPattern(CorePattern);

#[pymethods]
impl BinaryPattern {
    #[new]
    fn new(rows: Vec<Vec<bool>>) -> PyResult<Self> {
        let (h, w, data) = flatten(rows)?;
        CorePattern::new(h, w, data.into_iter().map(u8::from).collect()).map(Self).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn count_ones(&self) -> usize {
        self.0.count_ones()
    }

    fn iou(&self, other: &BinaryPattern) -> PyResult<f64> {
        self.0.iou(&other.0).map_err(err)
    }

    fn to_rows(&self) -> Vec<Vec<bool>> {
        self.0.data().chunks(self.0.width()).map(|r| r.iter().map(|&b| b != 0).collect()).collect()
    }
}

#[pyclass(frozen)]
struct IdentityToken(CoreToken);

#[pymethods]
impl IdentityToken {
    #[new]
    fn new(identity_id: &str, application_id: &str, seed: u128) -> Self {
        Self(CoreToken::new(identity_id, application_id, seed))
    }

    #[getter]
    fn identity_id(&self) -> &str {
        &self.0.identity_id
    }

    #[getter]
    fn application_id(&self) -> &str {
        &self.0.application_id
    }

    #[getter]
    fn seed(&self) -> u128 {
        self.0.seed
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint().to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "IdentityToken({:?}, {:?}, fingerprint={})",
            self.0.identity_id,
            self.0.application_id,
            self.0.fingerprint()
        )
    }
}

#[pyclass(frozen)]
struct ColorVein(CoreColorVein);

#[pymethods]
impl ColorVein {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[getter]
    fn token_fingerprint(&self) -> String {
        self.0.provenance().token_fingerprint.to_string()
    }

    #[getter]
    fn offset(&self) -> (i64, i64) {
        self.0.provenance().offset
    }

    /// `[L, a, b]` as nested row lists.
    fn planes(&self) -> Vec<Vec<Vec<f64>>> {
        let w = self.0.dims().1;
        self.0.planes().iter().map(|p| rows_of(p, w)).collect()
    }

    fn save_npz(&self, path: &str) -> PyResult<()> {
        save_npz(&self.0, path).map_err(err)
    }
}

#[pyclass(frozen)]
struct FeatureVector(CoreFeature);

#[pymethods]
impl FeatureVector {
    /// Quantizes 64 raw values to the template grid.
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        colorvein::imaging::quantize_template(&values).map(Self).map_err(err)
    }

    fn components(&self) -> Vec<f64> {
        self.0.components().to_vec()
    }

    fn __len__(&self) -> usize {
        colorvein::TEMPLATE_DIM
    }
}

#[pyclass(frozen)]
struct System(CoreSystem);

#[pymethods]
impl System {
    #[staticmethod]
    #[pyo3(signature = (checkpoint, m = DEFAULT_HINT_COUNT))]
    fn load(checkpoint: &str, m: usize) -> PyResult<Self> {
        let ckpt = Checkpoint::load(checkpoint).map_err(err)?;
        Ok(Self(CoreSystem {
            model: ckpt.model,
            params: PipelineParams { m, ..PipelineParams::default() },
        }))
    }

    fn protect(&self, image: &GrayImage, token: &IdentityToken) -> PyResult<ColorVein> {
        self.0.protect_image(&image.0, &token.0).map(ColorVein).map_err(err)
    }

    fn template(&self, image: &GrayImage, token: &IdentityToken) -> PyResult<FeatureVector> {
        self.0.template(&image.0, &token.0).map(FeatureVector).map_err(err)
    }
}

#[pyfunction]
fn segment(image: &GrayImage) -> PyResult<BinaryPattern> {
    extraction::segment(&image.0).map(BinaryPattern).map_err(err)
}

/// Hints as `(x, y, chroma_a, chroma_b)` tuples.
#[pyfunction]
#[pyo3(signature = (token, pattern, m = DEFAULT_HINT_COUNT))]
fn derive_hints(token: &IdentityToken, pattern: &BinaryPattern, m: usize) -> PyResult<Vec<(usize, usize, f64, f64)>> {
    let set = hints::derive_hints(&token.0, &pattern.0, m).map_err(err)?;
    Ok(set.hints.iter().map(|h| (h.x, h.y, h.chroma_a, h.chroma_b)).collect())
}

#[pyfunction]
#[pyo3(signature = (pattern, token, m = DEFAULT_HINT_COUNT))]
fn protect(pattern: &BinaryPattern, token: &IdentityToken, m: usize) -> PyResult<ColorVein> {
    let params = PipelineParams { m, ..PipelineParams::default() };
    colorvein::pipeline::protect(&pattern.0, &token.0, &params).map(ColorVein).map_err(err)
}

#[pyfunction]
fn match_score(a: &FeatureVector, b: &FeatureVector) -> PyResult<f64> {
    matching::match_score(&a.0, &b.0).map_err(err)
}

/// `(eer, threshold)`.
#[pyfunction]
fn compute_eer(genuine: Vec<f64>, impostor: Vec<f64>) -> PyResult<(f64, f64)> {
    let e = metrics::compute_eer(&genuine, &impostor).map_err(err)?;
    Ok((e.eer, e.threshold))
}

#[pyfunction]
fn decidability(dist1: Vec<f64>, dist2: Vec<f64>) -> PyResult<f64> {
    metrics::decidability(&dist1, &dist2).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (mated, non_mated, bins = metrics::DEFAULT_SCORE_BINS, clip = false))]
fn unlinkability(mated: Vec<f64>, non_mated: Vec<f64>, bins: usize, clip: bool) -> PyResult<f64> {
    metrics::unlinkability(&mated, &non_mated, bins, clip).map(|u| u.d_sys).map_err(err)
}

/// Synthetic samples of one subject as `(images, ground_truth)`.
#[pyfunction]
#[pyo3(signature = (seed, n_samples, height = 64, width = 64))]
fn generate_subject(seed: u64, n_samples: usize, height: usize, width: usize) -> PyResult<(Vec<GrayImage>, Vec<BinaryPattern>)> {
    let s = synthetic::generate_subject(seed, n_samples, (height, width)).map_err(err)?;
    Ok((
        s.samples.into_iter().map(GrayImage).collect(),
        s.ground_truth.into_iter().map(BinaryPattern).collect(),
    ))
}

#[pymodule]
fn pycolorvein(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", colorvein::VERSION)?;
    m.add_class::<GrayImage>()?;
    m.add_class::<BinaryPattern>()?;
    m.add_class::<IdentityToken>()?;
    m.add_class::<ColorVein>()?;
    m.add_class::<FeatureVector>()?;
    m.add_class::<System>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(derive_hints, m)?)?;
    m.add_function(wrap_pyfunction!(protect, m)?)?;
    m.add_function(wrap_pyfunction!(match_score, m)?)?;
    m.add_function(wrap_pyfunction!(compute_eer, m)?)?;
    m.add_function(wrap_pyfunction!(decidability, m)?)?;
    m.add_function(wrap_pyfunction!(unlinkability, m)?)?;
    m.add_function(wrap_pyfunction!(generate_subject, m)?)?;
    Ok(())
}
