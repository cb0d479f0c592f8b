//! Numerical certificates for the linear operators: randomized adjoint
//! (dot-product) tests and finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{FanGeometry, ImageGrid, ParallelGeometry};
use crate::projector::{adjoint_fan, adjoint_parallel, forward_fan, forward_parallel, Sinogram};
use crate::ril::{ril_backward, ril_forward, RilPlan};
use crate::tensor::{Real, Tensor2D};

fn random_tensor<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D<T> {
    Tensor2D::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-1.0..1.0)))
}

/// `|<Ax, y> - <x, A^T y>| / (||Ax|| ||y||)`.
fn dot_error<T: Real>(ax: &Tensor2D<T>, y: &Tensor2D<T>, x: &Tensor2D<T>, aty: &Tensor2D<T>) -> f64 {
    let lhs = ax.dot(y);
    let rhs = x.dot(aty);
    let scale = ax.norm() * y.norm();
    if scale == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Worst normalized dot-test error of the fan projector over `pairs` random pairs.
pub fn dot_test_fan<T: Real>(g: &FanGeometry, side: usize, spacing: f64, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = ImageGrid::new(random_tensor::<T>(side, side, &mut rng), spacing)?;
        let y = Sinogram::fan(*g, random_tensor(g.n_detectors, g.n_views, &mut rng))?;
        let ax = forward_fan(&x, g)?;
        let aty = adjoint_fan(&y, g, side, spacing)?;
        worst = worst.max(dot_error(ax.values(), y.values(), x.values(), aty.values()));
    }
    Ok(worst)
}

pub fn dot_test_parallel<T: Real>(g: &ParallelGeometry, side: usize, spacing: f64, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = ImageGrid::new(random_tensor::<T>(side, side, &mut rng), spacing)?;
        let y = Sinogram::parallel(*g, random_tensor(g.n_detectors, g.n_views, &mut rng))?;
        let ax = forward_parallel(&x, g)?;
        let aty = adjoint_parallel(&y, g, side, spacing)?;
        worst = worst.max(dot_error(ax.values(), y.values(), x.values(), aty.values()));
    }
    Ok(worst)
}

/// Dot test of `f_R` against `ril_backward`.
pub fn dot_test_ril<T: Real>(plan: &RilPlan, side: usize, spacing: f64, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = plan.fan();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let y = Sinogram::fan(*g, random_tensor::<T>(g.n_detectors, g.n_views, &mut rng))?;
        let x = ImageGrid::new(random_tensor(side, side, &mut rng), spacing)?;
        let fy = ril_forward(&y, plan, side, spacing)?;
        let btx = ril_backward(&x, plan)?;
        worst = worst.max(dot_error(fy.values(), x.values(), y.values(), btx.values()));
    }
    Ok(worst)
}

/// Central differences of `J(y) = 1/2 ||f_R(y) - x0||^2` at `entries`
/// random sinogram positions against `ril_backward(f_R(y) - x0)`. Returns
/// the worst relative error; the denominator is floored at 1e-3 of the
/// largest gradient entry so near-zero components do not dominate.
pub fn fd_check_ril(plan: &RilPlan, side: usize, spacing: f64, entries: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = *plan.fan();
    let y = Sinogram::fan(g, random_tensor::<f64>(g.n_detectors, g.n_views, &mut rng))?;
    let x0 = ImageGrid::new(random_tensor::<f64>(side, side, &mut rng), spacing)?;
    let objective = |y: &Sinogram<f64>| -> Result<f64> {
        let x = ril_forward(y, plan, side, spacing)?;
        let d = x.values().zip_map(x0.values(), |a, b| a - b)?;
        Ok(0.5 * d.dot(&d))
    };
    let x = ril_forward(&y, plan, side, spacing)?;
    let residual = x.with_values(x.values().zip_map(x0.values(), |a, b| a - b)?)?;
    let grad = ril_backward(&residual, plan)?;
    let gmax = grad.values().as_slice().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    // J is quadratic, so central differences carry no truncation error and
    // a large step only reduces cancellation.
    let h = 0.25;
    let mut worst = 0.0f64;
    for _ in 0..entries {
        let (i, j) = (rng.random_range(0..g.n_detectors), rng.random_range(0..g.n_views));
        let mut plus = y.clone();
        plus.values_mut().set(i, j, y.values().get(i, j) + h);
        let mut minus = y.clone();
        minus.values_mut().set(i, j, y.values().get(i, j) - h);
        let fd = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
        let an = grad.values().get(i, j);
        let denom = an.abs().max(fd.abs()).max(1e-3 * gmax).max(f64::MIN_POSITIVE);
        worst = worst.max((fd - an).abs() / denom);
    }
    Ok(worst)
}

/// Results of the full suite, as printed by `gradcheck`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub dot_fan: f64,
    pub dot_parallel: f64,
    pub dot_ril: f64,
    pub finite_difference: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.dot_fan.max(self.dot_parallel).max(self.dot_ril).max(self.finite_difference)
    }
}

/// Dot tests on a `side`-pixel grid and the finite-difference check on the
/// same plan. Dot tests run in `T`; the finite-difference check always in f64.
pub fn gradcheck<T: Real>(side: usize, n_detectors: usize, n_views: usize, pairs: usize, seed: u64) -> Result<GradcheckReport> {
    let fan = FanGeometry::covering(side, 1.0, 2.5 * side as f64, n_detectors, n_views)?;
    let parallel = ParallelGeometry::covering(side, 1.0, n_detectors, n_views)?;
    let plan = RilPlan::new(fan)?;
    Ok(GradcheckReport {
        dot_fan: dot_test_fan::<T>(&fan, side, 1.0, pairs, seed)?,
        dot_parallel: dot_test_parallel::<T>(&parallel, side, 1.0, pairs, seed + 1)?,
        dot_ril: dot_test_ril::<T>(&plan, side, 1.0, pairs, seed + 2)?,
        finite_difference: fd_check_ril(&plan, side, 1.0, pairs, seed + 3)?,
    })
}
