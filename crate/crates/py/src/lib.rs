//! Python bindings: the tensor type, the convolution/pyramid operations, the
//! head, and the analysis entry points. Tensors cross the boundary as flat
//! f64 lists plus an (n, c, h, w) shape.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sepc_core::analysis;
use sepc_core::config::parse_variant;
use sepc_core::pconv::{self, FeaturePyramid, HeadConfig, HeadOutputs};
use sepc_core::scale_space;
use sepc_core::sepc as sepc_ops;
use sepc_core::synth;
use sepc_core::tensor::{self, Conv2dKernel};
use sepc_core::{Error, Tensor as CoreTensor};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pyramid_from(levels: Vec<PyRef<'_, Tensor>>) -> PyResult<FeaturePyramid> {
    FeaturePyramid::new(levels.iter().map(|t| t.inner.clone()).collect()).map_err(to_py_err)
}

fn pyramid_into(p: FeaturePyramid) -> Vec<Tensor> {
    p.into_levels().into_iter().map(|inner| Tensor { inner }).collect()
}

/// Dense (n, c, h, w) tensor of doubles.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Tensor {
    inner: CoreTensor,
}

#[pymethods]
impl Tensor {
    #[new]
    fn new(dims: (usize, usize, usize, usize), data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTensor::from_vec(dims, data).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        Self {
            inner: CoreTensor::zeros(dims),
        }
    }

    #[staticmethod]
    fn filled(dims: (usize, usize, usize, usize), value: f64) -> PyResult<Self> {
        if !value.is_finite() {
            return Err(PyValueError::new_err("fill value must be finite"));
        }
        Ok(Self {
            inner: CoreTensor::filled(dims, value),
        })
    }

    /// Seeded uniform noise in [-1, 1), optionally Gaussian pre-blurred.
    #[staticmethod]
    #[pyo3(signature = (dims, seed, pre_blur = 0.0))]
    fn noise(dims: (usize, usize, usize, usize), seed: u64, pre_blur: f64) -> PyResult<Self> {
        Ok(Self {
            inner: synth::band_limited_noise(dims, seed, pre_blur).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        self.inner.dims()
    }

    /// Flat row-major data copy.
    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.inner.at(b, c, y, x)
    }

    /// Write in the SPYT binary format.
    fn save(&self, path: &str) -> PyResult<()> {
        tensor::tensor_write(&self.inner, path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: tensor::tensor_read(path).map_err(to_py_err)?,
        })
    }

    fn max_abs_diff(&self, other: &Tensor) -> PyResult<f64> {
        if self.inner.dims() != other.inner.dims() {
            return Err(PyValueError::new_err("dims mismatch"));
        }
        Ok(self.inner.max_abs_diff(&other.inner))
    }

    fn __repr__(&self) -> String {
        let (n, c, h, w) = self.inner.dims();
        format!("Tensor(dims=({n}, {c}, {h}, {w}))")
    }
}

/// Cross-correlation with zero padding.
#[pyfunction]
#[pyo3(signature = (x, weights, stride = 1, padding = 0, bias = None))]
fn conv2d(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: usize,
    bias: Option<Vec<f64>>,
) -> PyResult<Tensor> {
    let kernel =
        Conv2dKernel::new(weights.inner.clone(), bias, stride, padding).map_err(to_py_err)?;
    Ok(Tensor {
        inner: tensor::conv2d(&x.inner, &kernel).map_err(to_py_err)?,
    })
}

#[pyfunction]
fn upsample_bilinear_x2(x: &Tensor) -> Tensor {
    Tensor {
        inner: tensor::upsample_bilinear_x2(&x.inner),
    }
}

#[pyfunction]
fn gaussian_blur(x: &Tensor, t: f64) -> PyResult<Tensor> {
    Ok(Tensor {
        inner: scale_space::gaussian_blur(&x.inner, t).map_err(to_py_err)?,
    })
}

/// Blur variance paired with downsizing ratio a: t = s0/a^2 - s0.
#[pyfunction]
fn scale_for_ratio(a: f64, s0: f64) -> PyResult<f64> {
    scale_space::scale_for_ratio(a, s0).map_err(to_py_err)
}

/// The jumping action: blur for a 2^n downsize, then subsample by 2^n.
#[pyfunction]
fn jump(x: &Tensor, n: usize, s0: f64) -> PyResult<Tensor> {
    Ok(Tensor {
        inner: scale_space::jump(&x.inner, n, s0).map_err(to_py_err)?,
    })
}

/// Interior relative L2 discrepancy of S_m(S_n(x)) against S_{m+n}(x).
#[pyfunction]
fn verify_lemma1(x: &Tensor, m: usize, n: usize, s0: f64) -> PyResult<f64> {
    scale_space::verify_lemma1(&x.inner, m, n, s0).map_err(to_py_err)
}

#[pyfunction]
fn build_gaussian_pyramid(x: &Tensor, s0: f64, levels: usize) -> PyResult<Vec<Tensor>> {
    let spec = scale_space::GaussianPyramidSpec::new(s0, levels).map_err(to_py_err)?;
    let p = scale_space::build_gaussian_pyramid(&x.inner, spec).map_err(to_py_err)?;
    Ok(p.levels.into_iter().map(|inner| Tensor { inner }).collect())
}

/// Save a list of levels as a SPYR pyramid container.
#[pyfunction]
fn pyramid_save(levels: Vec<PyRef<'_, Tensor>>, path: &str) -> PyResult<()> {
    let tensors: Vec<CoreTensor> = levels.iter().map(|t| t.inner.clone()).collect();
    tensor::pyramid_write(&tensors, path).map_err(to_py_err)
}

#[pyfunction]
fn pyramid_load(path: &str) -> PyResult<Vec<Tensor>> {
    Ok(tensor::pyramid_read(path)
        .map_err(to_py_err)?
        .into_iter()
        .map(|inner| Tensor { inner })
        .collect())
}

/// The three shared kernels of a pyramid convolution.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct PConvLayer {
    inner: pconv::PConvLayer,
}

#[pymethods]
impl PConvLayer {
    /// Kaiming-initialized layer from a seeded generator.
    #[staticmethod]
    #[pyo3(signature = (c_in, c_out, kernel = 3, seed = 0, bias = false))]
    fn kaiming(c_in: usize, c_out: usize, kernel: usize, seed: u64, bias: bool) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self {
            inner: pconv::PConvLayer::kaiming(c_in, c_out, kernel, bias, &mut rng),
        }
    }

    fn forward(&self, levels: Vec<PyRef<'_, Tensor>>) -> PyResult<Vec<Tensor>> {
        let p = pyramid_from(levels)?;
        Ok(pyramid_into(
            pconv::pconv_forward(&p, &self.inner).map_err(to_py_err)?,
        ))
    }
}

/// Pyramid convolution with deformable kernels above the bottom level.
#[pyclass]
struct SepcLayer {
    inner: sepc_ops::SepcLayer,
}

#[pymethods]
impl SepcLayer {
    /// Wrap a base layer with zero-initialized offset predictors.
    #[new]
    fn new(base: PConvLayer) -> Self {
        Self {
            inner: sepc_ops::SepcLayer::new(base.inner),
        }
    }

    fn forward(&self, levels: Vec<PyRef<'_, Tensor>>) -> PyResult<Vec<Tensor>> {
        let p = pyramid_from(levels)?;
        Ok(pyramid_into(
            sepc_ops::sepc_forward(&p, &self.inner).map_err(to_py_err)?,
        ))
    }
}

/// The stacked detection head.
#[pyclass]
struct Head {
    inner: pconv::Head,
}

#[pymethods]
impl Head {
    #[new]
    #[pyo3(signature = (levels, seed = 0, stacks = 4, channels = 256, combined = true,
                        extra_conv = true, bn_mode = "integrated", sepc_variant = "none",
                        scale_extent = 3, num_classes = None, anchors = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        levels: usize,
        seed: u64,
        stacks: usize,
        channels: usize,
        combined: bool,
        extra_conv: bool,
        bn_mode: &str,
        sepc_variant: &str,
        scale_extent: usize,
        num_classes: Option<usize>,
        anchors: Option<usize>,
    ) -> PyResult<Self> {
        let bn_mode = match bn_mode {
            "off" => None,
            "single" => Some(pconv::BnMode::Single),
            "independent" => Some(pconv::BnMode::Independent),
            "integrated" => Some(pconv::BnMode::Integrated),
            other => {
                return Err(PyValueError::new_err(format!(
                    "bn_mode: expected off|single|independent|integrated, got '{other}'"
                )))
            }
        };
        let outputs = match (num_classes, anchors) {
            (Some(num_classes), Some(anchors)) => Some(HeadOutputs {
                num_classes,
                anchors,
            }),
            (None, None) => None,
            _ => {
                return Err(PyValueError::new_err(
                    "num_classes and anchors must be given together",
                ))
            }
        };
        let cfg = HeadConfig {
            stacks,
            channels,
            combined,
            extra_conv,
            bn_mode,
            sepc_variant: parse_variant(sepc_variant).map_err(to_py_err)?,
            scale_extent,
            outputs,
        };
        Ok(Self {
            inner: pconv::Head::build(&cfg, levels, seed).map_err(to_py_err)?,
        })
    }

    fn set_training(&mut self, training: bool) {
        self.inner.set_training(training);
    }

    fn forward(
        &mut self,
        levels: Vec<PyRef<'_, Tensor>>,
    ) -> PyResult<(Vec<Tensor>, Vec<Tensor>)> {
        let p = pyramid_from(levels)?;
        let (cls, loc) = self.inner.forward(&p).map_err(to_py_err)?;
        Ok((pyramid_into(cls), pyramid_into(loc)))
    }
}

/// Per-level spatial area ratios of the default cost model.
#[pyfunction]
#[pyo3(signature = (levels = 5))]
fn pyramid_area_ratios(levels: usize) -> PyResult<Vec<f64>> {
    analysis::pyramid_area_ratios(&analysis::CostModelInput::with_levels(levels))
        .map_err(to_py_err)
}

/// Relative cost of one pyramid convolution per level plus the total.
#[pyfunction]
#[pyo3(signature = (levels = 5))]
fn pconv_cost_factors(levels: usize) -> PyResult<(Vec<f64>, f64)> {
    analysis::pconv_cost_factors(&analysis::CostModelInput::with_levels(levels))
        .map_err(to_py_err)
}

/// Head-to-baseline MACs ratio for a head configuration.
#[pyfunction]
#[pyo3(signature = (stacks = 4, combined = true, extra_conv = true, sepc_variant = "none",
                    scale_extent = 3))]
fn head_flops_ratio(
    stacks: usize,
    combined: bool,
    extra_conv: bool,
    sepc_variant: &str,
    scale_extent: usize,
) -> PyResult<f64> {
    let cfg = HeadConfig {
        stacks,
        combined,
        extra_conv,
        sepc_variant: parse_variant(sepc_variant).map_err(to_py_err)?,
        scale_extent,
        ..HeadConfig::default()
    };
    analysis::head_flops_ratio(&cfg, &analysis::CostModelInput::default()).map_err(to_py_err)
}

/// The analytical FLOPs table as CSV text.
#[pyfunction]
#[pyo3(signature = (sepc_variant = "none", stacks = 4))]
fn flops_csv(sepc_variant: &str, stacks: usize) -> PyResult<String> {
    let cfg = HeadConfig {
        stacks,
        sepc_variant: parse_variant(sepc_variant).map_err(to_py_err)?,
        ..HeadConfig::default()
    };
    Ok(analysis::flops_report(&cfg, &analysis::CostModelInput::default())
        .map_err(to_py_err)?
        .to_csv())
}

/// Inter-level Pearson correlation matrix and the constant-level flags.
#[pyfunction]
fn correlation_matrix(
    levels: Vec<PyRef<'_, Tensor>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let p = pyramid_from(levels)?;
    let report = analysis::correlation_matrix(&p).map_err(to_py_err)?;
    Ok((report.matrix, report.constant_levels))
}

/// Equivariance separation check; returns (gaussian_error, control_error,
/// ratio).
#[pyfunction]
#[pyo3(signature = (size = 256, levels = 4, m = 1, s0 = 2.0, seed = 7))]
fn equivariance_separation(
    size: usize,
    levels: usize,
    m: usize,
    s0: f64,
    seed: u64,
) -> PyResult<(f64, f64, f64)> {
    let check =
        analysis::equivariance_separation(size, levels, m, s0, seed).map_err(to_py_err)?;
    Ok((check.gaussian_error, check.control_error, check.ratio))
}

#[pymodule]
fn sepc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Tensor>()?;
    m.add_class::<PConvLayer>()?;
    m.add_class::<SepcLayer>()?;
    m.add_class::<Head>()?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(upsample_bilinear_x2, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(scale_for_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(jump, m)?)?;
    m.add_function(wrap_pyfunction!(verify_lemma1, m)?)?;
    m.add_function(wrap_pyfunction!(build_gaussian_pyramid, m)?)?;
    m.add_function(wrap_pyfunction!(pyramid_save, m)?)?;
    m.add_function(wrap_pyfunction!(pyramid_load, m)?)?;
    m.add_function(wrap_pyfunction!(pyramid_area_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(pconv_cost_factors, m)?)?;
    m.add_function(wrap_pyfunction!(head_flops_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(flops_csv, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(equivariance_separation, m)?)?;
    Ok(())
}
