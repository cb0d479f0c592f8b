//! Differentiable fan-beam filtered back-projection.
//!
//! `f_R = gain * B . F . C` where `C` rebins fan data to parallel data with
//! two 1D linear interpolations (`theta = beta + gamma` along views, then
//! `t = D sin gamma` along detectors), `F` is the `|omega|` ramp filter and `B`
//! is linear-interpolation back-projection over `theta in [0, pi)`. Every
//! stage is linear, and [`ril_backward`] applies the exact transposes in
//! reverse order.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, TomoError};
use crate::geometry::{FanGeometry, GridFrame, ImageGrid, ParallelGeometry};
use crate::projector::Sinogram;
use crate::tensor::{Real, Tensor2D};

/// Residual FBP amplitude correction, measured once on a uniform disc in
/// the reference geometry (see the `calibration` test).
pub const DEFAULT_GAIN: f64 = 1.00946;

/// Two-sample linear interpolation stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

/// Precomputed tables for one fan geometry and its parallel counterpart.
#[derive(Debug, Clone)]
pub struct RilPlan {
    fan: FanGeometry,
    parallel: ParallelGeometry,
    /// `[fan row][theta index over [0, 2pi)]` -> view stencil.
    view_taps: Vec<Tap>,
    /// Parallel detector -> fan row stencil; `None` outside the fan.
    det_taps: Vec<Option<Tap>>,
    /// Transpose of `det_taps`, per fan row: `(parallel detector, weight)`.
    det_gather: Vec<Vec<(usize, f64)>>,
    fft_len: usize,
    gain: f64,
}

impl RilPlan {
    /// Parallel grid: same detector count, `t` spanning the fan's coverage,
    /// as many angles over `[0, pi)` as the fan has views over `[0, 2pi)`.
    pub fn new(fan: FanGeometry) -> Result<Self> {
        let parallel = fan.parallel_counterpart(fan.n_views);
        Self::with_parallel(fan, parallel)
    }

    pub fn with_parallel(fan: FanGeometry, parallel: ParallelGeometry) -> Result<Self> {
        fan.validate()?;
        parallel.validate()?;
        let (h, w) = (fan.n_detectors, fan.n_views);
        let m2 = 2 * parallel.n_views;
        let dtheta = parallel.angle_spacing_rad();
        let dbeta = fan.view_spacing_rad();

        let mut view_taps = Vec::with_capacity(h * m2);
        for i in 0..h {
            let gamma = fan.gamma(i);
            for m in 0..m2 {
                let b = ((m as f64 * dtheta - gamma) / dbeta).rem_euclid(w as f64);
                let fl = b.floor();
                let lo = (fl as usize) % w;
                let w_hi = if lo as f64 == fl { b - fl } else { 0.0 };
                view_taps.push(Tap {
                    lo,
                    hi: (lo + 1) % w,
                    w_lo: 1.0 - w_hi,
                    w_hi,
                });
            }
        }

        let d = fan.source_distance_mm;
        let covered = fan.covered_radius();
        let det_taps: Vec<Option<Tap>> = (0..parallel.n_detectors)
            .map(|k| {
                let t = parallel.t(k);
                if t.abs() > covered * (1.0 + 1e-12) {
                    return None;
                }
                if h == 1 {
                    return Some(Tap { lo: 0, hi: 0, w_lo: 1.0, w_hi: 0.0 });
                }
                let gamma = (t / d).clamp(-1.0, 1.0).asin();
                // clamp to the edge samples instead of extrapolating
                let f = (gamma / fan.detector_spacing_rad + (h as f64 - 1.0) / 2.0).clamp(0.0, (h - 1) as f64);
                let lo = (f.floor() as usize).min(h - 2);
                let w_hi = f - lo as f64;
                Some(Tap { lo, hi: lo + 1, w_lo: 1.0 - w_hi, w_hi })
            })
            .collect();

        let mut det_gather = vec![Vec::new(); h];
        for (k, tap) in det_taps.iter().enumerate() {
            if let Some(tap) = tap {
                det_gather[tap.lo].push((k, tap.w_lo));
                if tap.w_hi != 0.0 {
                    det_gather[tap.hi].push((k, tap.w_hi));
                }
            }
        }

        Ok(RilPlan {
            fan,
            parallel,
            view_taps,
            det_taps,
            det_gather,
            fft_len: (2 * parallel.n_detectors).next_power_of_two(),
            gain: DEFAULT_GAIN,
        })
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn fan(&self) -> &FanGeometry {
        &self.fan
    }

    pub fn parallel(&self) -> &ParallelGeometry {
        &self.parallel
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Sum of the detector-axis interpolation weights for parallel detector `k`.
    pub fn detector_weight_sum(&self, k: usize) -> f64 {
        self.det_taps[k].map_or(0.0, |t| t.w_lo + t.w_hi)
    }

    fn check_fan<T: Real>(&self, y: &Sinogram<T>) -> Result<()> {
        if y.fan_geometry()? != &self.fan {
            return Err(TomoError::dims("fan sinogram geometry differs from the plan"));
        }
        Ok(())
    }

    fn check_parallel<T: Real>(&self, y: &Sinogram<T>) -> Result<()> {
        if y.parallel_geometry()? != &self.parallel {
            return Err(TomoError::dims("parallel sinogram geometry differs from the plan"));
        }
        Ok(())
    }

    fn check_grid(&self, side: usize, spacing: f64) -> Result<GridFrame> {
        let frame = GridFrame::new(side, spacing);
        if side == 0 || !(spacing > 0.0) {
            return Err(TomoError::InvalidGeometry("empty image grid".into()));
        }
        self.fan.check_covers(frame.fov_radius())?;
        Ok(frame)
    }
}

/// Rebins a fan sinogram onto the plan's parallel grid. Conjugate rays
/// `(t, theta)` and `(-t, theta + pi)` are averaged.
pub fn fan_to_parallel<T: Real>(y_fan: &Sinogram<T>, plan: &RilPlan) -> Result<Sinogram<T>> {
    plan.check_fan(y_fan)?;
    let (h, m) = (plan.fan.n_detectors, plan.parallel.n_views);
    let n = plan.parallel.n_detectors;
    let m2 = 2 * m;
    let src = y_fan.values();

    // view axis: z[i][mm] = Y(gamma_i, theta_mm - gamma_i)
    let z: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let row = src.row(i);
            plan.view_taps[i * m2..(i + 1) * m2]
                .iter()
                .map(|tap| tap.w_lo * row[tap.lo].f64() + tap.w_hi * row[tap.hi].f64())
                .collect()
        })
        .collect();

    // detector axis, then fold [pi, 2pi) onto [0, pi)
    let sample = |k: usize, mm: usize| -> f64 {
        plan.det_taps[k].map_or(0.0, |tap| tap.w_lo * z[tap.lo][mm] + tap.w_hi * z[tap.hi][mm])
    };
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|k| {
            (0..m)
                .map(|j| T::lit(0.5 * (sample(k, j) + sample(n - 1 - k, j + m))))
                .collect()
        })
        .collect();
    let data = Tensor2D::from_fn(n, m, |k, j| rows[k][j]);
    Sinogram::parallel(plan.parallel, data)
}

/// Transpose of [`fan_to_parallel`].
pub fn fan_to_parallel_adjoint<T: Real>(y_para: &Sinogram<T>, plan: &RilPlan) -> Result<Sinogram<T>> {
    plan.check_parallel(y_para)?;
    let (h, w) = (plan.fan.n_detectors, plan.fan.n_views);
    let (n, m) = (plan.parallel.n_detectors, plan.parallel.n_views);
    let m2 = 2 * m;
    let src = y_para.values();

    // transpose of the fold
    let pbar = |k: usize, mm: usize| -> f64 {
        if mm < m {
            0.5 * src.get(k, mm).f64()
        } else {
            0.5 * src.get(n - 1 - k, mm - m).f64()
        }
    };

    let rows: Vec<Vec<T>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let gather = &plan.det_gather[i];
            let mut out = vec![0.0f64; w];
            for mm in 0..m2 {
                let zbar: f64 = gather.iter().map(|&(k, wt)| wt * pbar(k, mm)).sum();
                if zbar == 0.0 {
                    continue;
                }
                let tap = plan.view_taps[i * m2 + mm];
                out[tap.lo] += tap.w_lo * zbar;
                out[tap.hi] += tap.w_hi * zbar;
            }
            out.into_iter().map(T::lit).collect()
        })
        .collect();
    let data = Tensor2D::from_fn(h, w, |i, j| rows[i][j]);
    Sinogram::fan(plan.fan, data)
}

/// `|omega|` multipliers for an `n`-point DFT of samples `dt` apart, in
/// cycles per unit length, DC included as 0.
pub fn ramp_response(n: usize, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|k| k.min(n - k) as f64 / (n as f64 * dt))
        .collect()
}

struct RampFilter<T: Real> {
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    response: Vec<T>,
    scratch_len: usize,
}

impl<T: Real> RampFilter<T> {
    fn new(n: usize, dt: f64) -> Self {
        let mut planner = FftPlanner::<T>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scale = 1.0 / n as f64;
        let response = ramp_response(n, dt).into_iter().map(|r| T::lit(r * scale)).collect();
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        RampFilter {
            forward,
            inverse,
            response,
            scratch_len,
        }
    }

    fn apply(&self, column: &[T], buf: &mut [Complex<T>], scratch: &mut [Complex<T>]) -> Vec<T> {
        for (b, &v) in buf.iter_mut().zip(column.iter().chain(std::iter::repeat(&T::zero()))) {
            *b = Complex::new(v, T::zero());
        }
        self.forward.process_with_scratch(buf, scratch);
        for (b, &r) in buf.iter_mut().zip(&self.response) {
            *b = *b * r;
        }
        self.inverse.process_with_scratch(buf, scratch);
        buf[..column.len()].iter().map(|c| c.re).collect()
    }
}

/// Ramp filtering of every view: zero-pad to the plan's FFT length, DFT,
/// multiply by `|omega|`, inverse DFT, crop. Real symmetric, hence
/// self-adjoint.
pub fn ramlak_filter<T: Real>(y_para: &Sinogram<T>, plan: &RilPlan) -> Result<Sinogram<T>> {
    plan.check_parallel(y_para)?;
    let filtered = filter_columns(y_para.values(), plan.fft_len, plan.parallel.detector_spacing_mm);
    y_para.with_values(filtered)
}

fn filter_columns<T: Real>(data: &Tensor2D<T>, fft_len: usize, dt: f64) -> Tensor2D<T> {
    let (n, m) = data.dims();
    let filter = RampFilter::<T>::new(fft_len, dt);
    let by_view = data.transpose();
    let cols: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![Complex::new(T::zero(), T::zero()); fft_len],
                    vec![Complex::new(T::zero(), T::zero()); filter.scratch_len],
                )
            },
            |(buf, scratch), j| filter.apply(by_view.row(j), buf, scratch),
        )
        .collect();
    Tensor2D::from_fn(n, m, |i, j| cols[j][i])
}

/// Per-view angle tables shared by back-projection and its transpose.
struct AngleTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl AngleTable {
    fn new(g: &ParallelGeometry) -> Self {
        let (sin, cos) = (0..g.n_views).map(|j| g.theta(j).sin_cos()).unzip();
        AngleTable { cos, sin }
    }
}

/// Linear-interpolation stencil of pixel `(u, v)` on view `j`, if the
/// projected offset lands on the detector.
#[inline]
fn bp_stencil(g: &ParallelGeometry, angles: &AngleTable, u: f64, v: f64, j: usize) -> Option<(usize, f64)> {
    let f = g.detector_index(u * angles.cos[j] + v * angles.sin[j]);
    if f < 0.0 || f > (g.n_detectors - 1) as f64 {
        return None;
    }
    let lo = f.floor() as usize;
    Some((lo, f - lo as f64))
}

/// `X(u, v) = dtheta * sum_j Q(u cos theta_j + v sin theta_j, theta_j)` with
/// linear interpolation in `t`; zero outside the FOV circle.
pub fn backproject<T: Real>(q: &Sinogram<T>, plan: &RilPlan, side: usize, spacing: f64) -> Result<ImageGrid<T>> {
    plan.check_parallel(q)?;
    let frame = GridFrame::new(side, spacing);
    let g = &plan.parallel;
    let angles = AngleTable::new(g);
    let dtheta = g.angle_spacing_rad();
    let by_view = q.values().transpose();
    let rows: Vec<Vec<T>> = (0..side)
        .into_par_iter()
        .map(|r| {
            (0..side)
                .map(|c| {
                    if !frame.in_fov(r, c) {
                        return T::zero();
                    }
                    let (u, v) = frame.center_of(r, c);
                    let mut acc = 0.0f64;
                    for j in 0..g.n_views {
                        if let Some((lo, w)) = bp_stencil(g, &angles, u, v, j) {
                            let col = by_view.row(j);
                            acc += (1.0 - w) * col[lo].f64();
                            if w != 0.0 {
                                acc += w * col[lo + 1].f64();
                            }
                        }
                    }
                    T::lit(dtheta * acc)
                })
                .collect()
        })
        .collect();
    ImageGrid::new(Tensor2D::from_fn(side, side, |r, c| rows[r][c]), spacing)
}

/// Transpose of [`backproject`]: scatters `dtheta`-weighted stencils of each
/// FOV pixel back onto its two detector bins, one view per task.
pub fn backproject_adjoint<T: Real>(x: &ImageGrid<T>, plan: &RilPlan) -> Result<Sinogram<T>> {
    let frame = x.frame();
    let g = &plan.parallel;
    let angles = AngleTable::new(g);
    let dtheta = g.angle_spacing_rad();
    let side = frame.side;
    let img = x.values();
    let cols: Vec<Vec<f64>> = (0..g.n_views)
        .into_par_iter()
        .map(|j| {
            let mut col = vec![0.0f64; g.n_detectors];
            for r in 0..side {
                for c in 0..side {
                    let xv = img.get(r, c).f64();
                    if xv == 0.0 || !frame.in_fov(r, c) {
                        continue;
                    }
                    let (u, v) = frame.center_of(r, c);
                    if let Some((lo, w)) = bp_stencil(g, &angles, u, v, j) {
                        col[lo] += dtheta * (1.0 - w) * xv;
                        if w != 0.0 {
                            col[lo + 1] += dtheta * w * xv;
                        }
                    }
                }
            }
            col
        })
        .collect();
    let data = Tensor2D::from_fn(g.n_detectors, g.n_views, |i, j| T::lit(cols[j][i]));
    Sinogram::parallel(*g, data)
}

/// `X_hat = f_R(Y)`.
pub fn ril_forward<T: Real>(y_fan: &Sinogram<T>, plan: &RilPlan, side: usize, spacing: f64) -> Result<ImageGrid<T>> {
    plan.check_grid(side, spacing)?;
    let para = fan_to_parallel(y_fan, plan)?;
    let q = ramlak_filter(&para, plan)?;
    let mut x = backproject(&q, plan, side, spacing)?;
    if plan.gain != 1.0 {
        let gain = T::lit(plan.gain);
        x.values_mut().as_mut_slice().iter_mut().for_each(|v| *v = *v * gain);
    }
    Ok(x)
}

/// Gradient of a scalar loss with respect to the fan sinogram, given its
/// gradient `grad_x` with respect to `f_R`'s output.
pub fn ril_backward<T: Real>(grad_x: &ImageGrid<T>, plan: &RilPlan) -> Result<Sinogram<T>> {
    plan.check_grid(grad_x.side(), grad_x.spacing())?;
    let scaled;
    let g = if plan.gain != 1.0 {
        let gain = T::lit(plan.gain);
        scaled = grad_x.with_values(grad_x.values().map(|v| v * gain))?;
        &scaled
    } else {
        grad_x
    };
    let qbar = backproject_adjoint(g, plan)?;
    let pbar = ramlak_filter(&qbar, plan)?;
    fan_to_parallel_adjoint(&pbar, plan)
}

/// Radon consistency loss: mean absolute error between `f_R(y_out)` and
/// `x_gt` over FOV pixels, with its sinogram gradient (`sign(0) = 0`).
pub fn rc_loss<T: Real>(y_out: &Sinogram<T>, x_gt: &ImageGrid<T>, plan: &RilPlan) -> Result<(f64, Sinogram<T>)> {
    let x = ril_forward(y_out, plan, x_gt.side(), x_gt.spacing())?;
    let frame = x_gt.frame();
    let fov = frame.fov_mask();
    let n = fov.count();
    if n == 0 {
        return Err(TomoError::EmptyRegion);
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let side = frame.side;
    let mut grad = Tensor2D::<T>::zeros(side, side);
    for r in 0..side {
        for c in 0..side {
            if !fov.get(r, c) {
                continue;
            }
            let d = x.values().get(r, c).f64() - x_gt.values().get(r, c).f64();
            value += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.set(r, c, T::lit(s * inv_n));
        }
    }
    let grad_sino = ril_backward(&x_gt.with_values(grad)?, plan)?;
    Ok((value * inv_n, grad_sino))
}

/// Integral of the back-projection weights over `[0, pi)`; handy for checks.
pub fn angular_measure(plan: &RilPlan) -> f64 {
    plan.parallel.angle_spacing_rad() * plan.parallel.n_views as f64 / PI
}
