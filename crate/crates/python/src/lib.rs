//! Python module `pytomomar`. Images and sinograms cross the boundary as
//! nested lists of floats, row-major.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tomomar::mar::li_inpaint;
use tomomar::metrics;
use tomomar::projector::{adjoint_fan, forward_fan, metal_trace};
use tomomar::ril::{ril_backward, ril_forward};
use tomomar::simulate::make_instance;
use tomomar::verify::gradcheck as run_gradcheck;
use tomomar::{
    BinaryMask, ErrorCategory, ImageGrid, MetalMask, MetalTrace, NoiseSpec, RilPlan, ScanConfig, Sinogram, Spectrum,
    Tensor2D, TomoError,
};

type Rows = Vec<Vec<f64>>;

fn py_err(e: TomoError) -> PyErr {
    match e.category() {
        ErrorCategory::Io => PyIOError::new_err(e.to_string()),
        ErrorCategory::Validation => PyValueError::new_err(e.to_string()),
        ErrorCategory::Numerical => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Rejects ragged input; an empty list becomes a 0 x 0 tensor.
pub fn tensor_from_rows(rows: &[Vec<f64>]) -> tomomar::Result<Tensor2D<f64>> {
    let n_cols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().position(|r| r.len() != n_cols) {
        return Err(TomoError::DimMismatch(format!(
            "row {r} has {} entries, expected {n_cols}",
            rows[r].len()
        )));
    }
    Tensor2D::from_vec(rows.len(), n_cols, rows.concat())
}

pub fn tensor_to_rows(t: &Tensor2D<f64>) -> Rows {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mask_from_rows(rows: &[Vec<f64>]) -> tomomar::Result<BinaryMask> {
    BinaryMask::from_tensor(&tensor_from_rows(rows)?)
}

/// Scan geometry plus a reconstruction plan built from a JSON scan config.
#[pyclass(frozen)]
struct Scan {
    cfg: ScanConfig,
    plan: RilPlan,
}

impl Scan {
    fn image(&self, rows: &[Vec<f64>]) -> tomomar::Result<ImageGrid<f64>> {
        let t = tensor_from_rows(rows)?;
        if t.dims() != (self.cfg.side, self.cfg.side) {
            return Err(TomoError::DimMismatch(format!(
                "image is {}x{}, scan expects {}x{}",
                t.rows(),
                t.cols(),
                self.cfg.side,
                self.cfg.side
            )));
        }
        ImageGrid::new(t, self.cfg.pixel_spacing_mm)
    }

    fn sino(&self, rows: &[Vec<f64>]) -> tomomar::Result<Sinogram<f64>> {
        Sinogram::fan(*self.plan.fan(), tensor_from_rows(rows)?)
    }
}

#[pymethods]
impl Scan {
    /// `config` is a JSON scan config; `None` gives the built-in defaults.
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            Some(text) => ScanConfig::from_json(text),
            None => Ok(ScanConfig::default()),
        }
        .map_err(py_err)?;
        let plan = RilPlan::new(cfg.fan_geometry().map_err(py_err)?).map_err(py_err)?;
        Ok(Scan { cfg, plan })
    }

    #[getter]
    fn side(&self) -> usize {
        self.cfg.side
    }

    #[getter]
    fn sino_shape(&self) -> (usize, usize) {
        let g = self.plan.fan();
        (g.n_detectors, g.n_views)
    }

    fn phantom(&self) -> PyResult<Rows> {
        Ok(tensor_to_rows(self.cfg.phantom::<f64>().map_err(py_err)?.values()))
    }

    fn metal_mask(&self) -> PyResult<Rows> {
        Ok(tensor_to_rows(&self.cfg.metal_mask().map_err(py_err)?.mask().to_tensor()))
    }

    fn project(&self, image: Rows) -> PyResult<Rows> {
        let x = self.image(&image).map_err(py_err)?;
        Ok(tensor_to_rows(forward_fan(&x, self.plan.fan()).map_err(py_err)?.values()))
    }

    fn backproject(&self, sino: Rows) -> PyResult<Rows> {
        let y = self.sino(&sino).map_err(py_err)?;
        let x = adjoint_fan(&y, self.plan.fan(), self.cfg.side, self.cfg.pixel_spacing_mm).map_err(py_err)?;
        Ok(tensor_to_rows(x.values()))
    }

    fn fbp(&self, sino: Rows) -> PyResult<Rows> {
        let y = self.sino(&sino).map_err(py_err)?;
        let x = ril_forward(&y, &self.plan, self.cfg.side, self.cfg.pixel_spacing_mm).map_err(py_err)?;
        Ok(tensor_to_rows(x.values()))
    }

    /// Gradient of a scalar loss w.r.t. the sinogram, given its gradient w.r.t. the FBP image.
    fn fbp_backward(&self, grad_image: Rows) -> PyResult<Rows> {
        let g = self.image(&grad_image).map_err(py_err)?;
        Ok(tensor_to_rows(ril_backward(&g, &self.plan).map_err(py_err)?.values()))
    }

    fn metal_trace(&self, metal: Rows) -> PyResult<Rows> {
        let m = MetalMask::new(mask_from_rows(&metal).map_err(py_err)?).map_err(py_err)?;
        let t = metal_trace(&m, self.cfg.pixel_spacing_mm, self.plan.fan()).map_err(py_err)?;
        Ok(tensor_to_rows(&t.mask().to_tensor()))
    }

    fn li(&self, sino: Rows, trace: Rows) -> PyResult<Rows> {
        let y = self.sino(&sino).map_err(py_err)?;
        let m = MetalTrace::new(mask_from_rows(&trace).map_err(py_err)?);
        Ok(tensor_to_rows(li_inpaint(&y, &m).map_err(py_err)?.values()))
    }

    /// Simulated instance as a dict of nested lists. `seed=None` disables noise.
    #[pyo3(signature = (phantom, metal, seed=None))]
    fn simulate<'py>(&self, py: Python<'py>, phantom: Rows, metal: Rows, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
        let x = self.image(&phantom).map_err(py_err)?;
        let m = MetalMask::new(mask_from_rows(&metal).map_err(py_err)?).map_err(py_err)?;
        let noise = seed.map(|s| NoiseSpec::new(self.cfg.photons, s)).transpose().map_err(py_err)?;
        let inst = make_instance(
            &x,
            &m,
            &Spectrum::default(),
            noise.as_ref(),
            &self.plan,
            tomomar::simulate::DEFAULT_SUPERSAMPLE,
        )
        .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("Y", tensor_to_rows(inst.y.values()))?;
        out.set_item("Ygt", tensor_to_rows(inst.y_gt.values()))?;
        out.set_item("Mt", tensor_to_rows(&inst.trace.mask().to_tensor()))?;
        out.set_item("YLI", tensor_to_rows(inst.y_li.values()))?;
        out.set_item("XLI", tensor_to_rows(inst.x_li.values()))?;
        out.set_item("Xcorrupt", tensor_to_rows(inst.x_corrupt.values()))?;
        Ok(out)
    }
}

fn grid(rows: &[Vec<f64>]) -> tomomar::Result<ImageGrid<f64>> {
    ImageGrid::new(tensor_from_rows(rows)?, 1.0)
}

/// PSNR in dB; `inf` when the images are identical.
#[pyfunction]
#[pyo3(signature = (x, reference, peak=None, exclude=None))]
fn psnr(x: Rows, reference: Rows, peak: Option<f64>, exclude: Option<Rows>) -> PyResult<f64> {
    let mask = exclude.map(|m| mask_from_rows(&m)).transpose().map_err(py_err)?;
    let p = metrics::psnr(&grid(&x).map_err(py_err)?, &grid(&reference).map_err(py_err)?, peak, mask.as_ref())
        .map_err(py_err)?;
    Ok(if p.is_identical() { f64::INFINITY } else { p.value() })
}

#[pyfunction]
#[pyo3(signature = (x, reference, peak=None))]
fn ssim(x: Rows, reference: Rows, peak: Option<f64>) -> PyResult<f64> {
    metrics::ssim(&grid(&x).map_err(py_err)?, &grid(&reference).map_err(py_err)?, peak).map_err(py_err)
}

/// Worst relative errors of the adjoint and finite-difference checks.
#[pyfunction]
#[pyo3(signature = (side=16, double=true, seed=0))]
fn gradcheck<'py>(py: Python<'py>, side: usize, double: bool, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let (n_det, n_views) = (2 * side + 1, 2 * side);
    let r = if double {
        run_gradcheck::<f64>(side, n_det, n_views, 10, seed)
    } else {
        run_gradcheck::<f32>(side, n_det, n_views, 10, seed)
    }
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("dot_fan", r.dot_fan)?;
    out.set_item("dot_parallel", r.dot_parallel)?;
    out.set_item("dot_ril", r.dot_ril)?;
    out.set_item("finite_difference", r.finite_difference)?;
    Ok(out)
}

#[pymodule]
fn pytomomar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scan>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
