use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use itq3::codec::{self, QuantConfig, WeightTensor};
use itq3::compute::{self, GeneratorSpec, WeightDist};
use itq3::packing::{self, TernaryCodes, Variant};
use itq3::quantizer::{self, ScalePolicy};
use itq3::transform::{self, TransformBlock};

fn to_py(e: itq3::Error) -> PyErr {
    let msg = format!("[{}] {e}", e.code());
    match e {
        itq3::Error::Io(_) => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn config(block_n: usize, variant: &str, policy: &str, symmetric: bool) -> PyResult<QuantConfig> {
    let cfg = QuantConfig {
        block_n,
        variant: variant.parse::<Variant>().map_err(to_py)?,
        policy: policy.parse::<ScalePolicy>().map_err(to_py)?,
        symmetric,
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Normalized Walsh-Hadamard transform of one block.
#[pyfunction]
fn fwht_forward(values: Vec<f32>) -> PyResult<Vec<f32>> {
    let block = TransformBlock::new(values).map_err(to_py)?;
    Ok(transform::fwht_forward(&block).into_vec())
}

#[pyfunction]
fn fwht_inverse(values: Vec<f32>) -> PyResult<Vec<f32>> {
    let block = TransformBlock::new(values).map_err(to_py)?;
    Ok(transform::fwht_inverse(&block).into_vec())
}

/// Ternary codes in {-1, 0, 1} to three bit planes.
#[pyfunction]
fn pack_ternary<'py>(py: Python<'py>, codes: Vec<i8>) -> PyResult<Bound<'py, PyBytes>> {
    let codes = TernaryCodes::new(codes).map_err(to_py)?;
    Ok(PyBytes::new(py, &packing::pack_ternary(&codes)))
}

#[pyfunction]
fn unpack_ternary(data: &[u8], n: usize) -> PyResult<Vec<i8>> {
    Ok(packing::unpack_ternary(data, n).map_err(to_py)?.into_vec())
}

#[pyfunction]
fn encode_f16(x: f32) -> u16 {
    packing::encode_f16(x)
}

#[pyfunction]
fn decode_f16(bits: u16) -> f32 {
    packing::decode_f16(bits)
}

#[pyfunction]
fn ternary_mse(alpha: f64, sigma: f64) -> PyResult<f64> {
    quantizer::ternary_mse(alpha, sigma).map_err(to_py)
}

/// Scale-to-sigma ratio minimizing `ternary_mse`.
#[pyfunction]
fn numeric_argmin_factor() -> f64 {
    quantizer::numeric_argmin_factor()
}

#[pyfunction]
#[pyo3(signature = (dist, rows, cols, seed=0))]
fn generate(dist: &str, rows: usize, cols: usize, seed: u64) -> PyResult<Vec<f32>> {
    let dist = dist.parse::<WeightDist>().map_err(to_py)?;
    let w = GeneratorSpec { dist, rows, cols, seed }.generate().map_err(to_py)?;
    Ok(w.into_values())
}

#[pyclass(name = "QuantizedTensor", module = "pyitq3", frozen)]
struct PyQuantizedTensor {
    inner: codec::QuantizedTensor,
}

#[pymethods]
impl PyQuantizedTensor {
    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    #[getter]
    fn block_n(&self) -> usize {
        self.inner.block_n()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    #[getter]
    fn asymmetric(&self) -> bool {
        self.inner.asymmetric()
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.inner.blocks().len()
    }

    fn dequantize(&self) -> PyResult<Vec<f32>> {
        Ok(codec::dequantize_tensor(&self.inner).map_err(to_py)?.into_values())
    }

    fn matvec(&self, x: Vec<f32>) -> PyResult<Vec<f32>> {
        compute::fused_matvec(&self.inner, &x).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut out = Vec::with_capacity(self.inner.byte_len());
        codec::write_container(&self.inner, &mut out).map_err(to_py)?;
        Ok(PyBytes::new(py, &out))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: codec::parse_container(data).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantizedTensor(rows={}, cols={}, block_n={}, variant={}, blocks={})",
            self.inner.rows(),
            self.inner.cols(),
            self.inner.block_n(),
            self.inner.variant(),
            self.inner.blocks().len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (values, rows, cols, block_n=256, variant="s", policy="paper", symmetric=true))]
fn quantize(
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    block_n: usize,
    variant: &str,
    policy: &str,
    symmetric: bool,
) -> PyResult<PyQuantizedTensor> {
    let cfg = config(block_n, variant, policy, symmetric)?;
    let w = WeightTensor::new(rows, cols, values).map_err(to_py)?;
    Ok(PyQuantizedTensor {
        inner: codec::quantize_tensor(&w, &cfg).map_err(to_py)?,
    })
}

/// Quantizes and measures; returns the error report as a dict.
#[pyfunction]
#[pyo3(signature = (values, rows, cols, block_n=256, variant="s", policy="paper", symmetric=true))]
#[allow(clippy::too_many_arguments)]
fn eval_error<'py>(
    py: Python<'py>,
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    block_n: usize,
    variant: &str,
    policy: &str,
    symmetric: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(block_n, variant, policy, symmetric)?;
    let w = WeightTensor::new(rows, cols, values).map_err(to_py)?;
    let r = compute::eval_error(&w, &cfg).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("rows", r.rows)?;
    d.set_item("cols", r.cols)?;
    d.set_item("block_n", r.block_n)?;
    d.set_item("variant", r.variant)?;
    d.set_item("policy", r.policy)?;
    d.set_item("blocks", r.blocks)?;
    d.set_item("mse", r.mse)?;
    d.set_item("median_block_mse", r.median_block_mse)?;
    d.set_item("frobenius_rel", r.frobenius_rel)?;
    d.set_item("linf_in", r.linf_in)?;
    d.set_item("linf_rot", r.linf_rot)?;
    d.set_item("bound_slack", r.bound_slack)?;
    d.set_item("unclamped_blocks", r.unclamped_blocks)?;
    d.set_item("clamp_fraction", r.clamp_fraction)?;
    d.set_item("zero_fraction", r.zero_fraction)?;
    d.set_item("transfer_max_rel", r.transfer_max_rel)?;
    d.set_item("unrotated_mse", r.unrotated_mse)?;
    d.set_item("unrotated_median_block_mse", r.unrotated_median_block_mse)?;
    d.set_item("uniform3_mse", r.uniform3_mse)?;
    d.set_item("uniform3_median_block_mse", r.uniform3_median_block_mse)?;
    Ok(d)
}

#[pymodule]
fn pyitq3(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuantizedTensor>()?;
    m.add_function(wrap_pyfunction!(fwht_forward, m)?)?;
    m.add_function(wrap_pyfunction!(fwht_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(pack_ternary, m)?)?;
    m.add_function(wrap_pyfunction!(unpack_ternary, m)?)?;
    m.add_function(wrap_pyfunction!(encode_f16, m)?)?;
    m.add_function(wrap_pyfunction!(decode_f16, m)?)?;
    m.add_function(wrap_pyfunction!(ternary_mse, m)?)?;
    m.add_function(wrap_pyfunction!(numeric_argmin_factor, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(eval_error, m)?)?;
    Ok(())
}
