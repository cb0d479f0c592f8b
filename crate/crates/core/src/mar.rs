//! Metal artifact reduction: LI inpainting, the masked combine operators,
//! dual-domain losses, TV-regularized iterative reconstruction and
//! sinogram trace refinement through the FBP gradient.

use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::{FanGeometry, ImageGrid};
use crate::io::write_text;
use crate::projector::{adjoint_fan, forward_fan, MetalTrace, Sinogram};
use crate::ril::{rc_loss, ril_backward, ril_forward, RilPlan};
use crate::tensor::{BinaryMask, Real, Tensor2D};

/// Linear interpolation across every masked run of each view, along the
/// detector axis. Untraced entries are copied bit for bit.
pub fn li_inpaint<T: Real>(y: &Sinogram<T>, m: &MetalTrace) -> Result<Sinogram<T>> {
    m.check_matches(y)?;
    if m.is_empty() {
        return Ok(y.clone());
    }
    let (rows, cols) = y.values().dims();
    if m.count() == rows * cols {
        return Err(TomoError::Unrecoverable("metal trace covers the whole sinogram".into()));
    }
    let by_view = y.values().transpose();
    let mask = m.mask();
    let mut out = by_view.clone();
    let mut dead = Vec::new();
    for j in 0..cols {
        let masked: Vec<bool> = (0..rows).map(|i| mask.get(i, j)).collect();
        if masked.iter().all(|&b| b) {
            dead.push(j);
            continue;
        }
        let src = by_view.row(j);
        let dst = &mut out.as_mut_slice()[j * rows..(j + 1) * rows];
        fill_column(src, &masked, dst);
    }
    if !dead.is_empty() {
        warn!("{} fully masked views copied from their nearest valid neighbour", dead.len());
        let valid: Vec<usize> = (0..cols).filter(|j| !dead.contains(j)).collect();
        for &j in &dead {
            let src = *valid
                .iter()
                .min_by_key(|&&v| {
                    let d = v.abs_diff(j);
                    (d.min(cols - d), v)
                })
                .expect("at least one valid view");
            let copy = out.row(src).to_vec();
            out.as_mut_slice()[j * rows..(j + 1) * rows].copy_from_slice(&copy);
        }
    }
    y.with_values(out.transpose())
}

fn fill_column<T: Real>(src: &[T], masked: &[bool], dst: &mut [T]) {
    let n = src.len();
    let mut i = 0;
    while i < n {
        if !masked[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && masked[i] {
            i += 1;
        }
        let (below, above) = (start.checked_sub(1).map(|k| src[k]), (i < n).then(|| src[i]));
        let len = i - start;
        match (below, above) {
            (Some(a), Some(b)) => {
                let denom = T::lit((len + 1) as f64);
                for (k, v) in dst[start..i].iter_mut().enumerate() {
                    *v = a + (b - a) * T::lit((k + 1) as f64) / denom;
                }
            }
            (Some(a), None) => dst[start..i].iter_mut().for_each(|v| *v = a),
            (None, Some(b)) => dst[start..i].iter_mut().for_each(|v| *v = b),
            (None, None) => unreachable!("caller skips fully masked columns"),
        }
    }
}

/// `M_t * g_out + (1 - M_t) * y_li`.
pub fn combine_sinogram<T: Real>(g_out: &Sinogram<T>, y_li: &Sinogram<T>, m: &MetalTrace) -> Result<Sinogram<T>> {
    if g_out.geometry() != y_li.geometry() {
        return Err(TomoError::dims("combined sinograms have different geometries"));
    }
    m.check_matches(y_li)?;
    let mask = m.mask().as_slice();
    let data: Vec<T> = g_out
        .values()
        .as_slice()
        .iter()
        .zip(y_li.values().as_slice())
        .zip(mask)
        .map(|((&g, &y), &inside)| if inside { g } else { y })
        .collect();
    let (r, c) = y_li.values().dims();
    y_li.with_values(Tensor2D::from_vec(r, c, data)?)
}

/// `x_li + residual`.
pub fn combine_image<T: Real>(x_li: &ImageGrid<T>, residual: &ImageGrid<T>) -> Result<ImageGrid<T>> {
    x_li.check_same_grid(residual)?;
    x_li.with_values(x_li.values().zip_map(residual.values(), |a, b| a + b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gs: f64,
    pub l_rc: f64,
    pub l_gi: f64,
    pub total: f64,
}

fn mean_abs_diff<T: Real>(a: &Tensor2D<T>, b: &Tensor2D<T>) -> Result<f64> {
    a.check_same_dims(b)?;
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x.f64() - y.f64()).abs())
        .sum();
    Ok(s / a.len() as f64)
}

/// Sinogram L1, Radon consistency and image L1 terms, unweighted.
pub fn dual_domain_loss<T: Real>(
    y_out: &Sinogram<T>,
    y_gt: &Sinogram<T>,
    x_out: &ImageGrid<T>,
    x_gt: &ImageGrid<T>,
    plan: &RilPlan,
) -> Result<LossBreakdown> {
    if y_out.geometry() != y_gt.geometry() {
        return Err(TomoError::dims("y_out and y_gt have different geometries"));
    }
    x_out.check_same_grid(x_gt)?;
    let l_gs = mean_abs_diff(y_out.values(), y_gt.values())?;
    let (l_rc, _) = rc_loss(y_out, x_gt, plan)?;
    let l_gi = mean_abs_diff(x_out.values(), x_gt.values())?;
    Ok(LossBreakdown {
        l_gs,
        l_rc,
        l_gi,
        total: l_gs + l_rc + l_gi,
    })
}

fn default_max_iters() -> usize {
    200
}

fn default_tv_eps() -> f64 {
    1e-4
}

fn default_tol() -> f64 {
    1e-6
}

/// Settings shared by [`iterative_mar`] and [`trace_refine`]. `step` and
/// `lambda` left unset are chosen automatically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_tv_eps")]
    pub tv_eps: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step: None,
            max_iters: default_max_iters(),
            lambda: None,
            tv_eps: default_tv_eps(),
            tol: default_tol(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TomoError::InvalidConfig(msg));
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("step must be positive, got {s}"));
            }
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda must be non-negative, got {l}"));
            }
        }
        if !(self.tv_eps > 0.0 && self.tv_eps.is_finite()) {
            return bad(format!("tv_eps must be positive, got {}", self.tv_eps));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SolverConfig = serde_json::from_str(text).map_err(|e| TomoError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
}

/// Solver output: the best iterate and the objective history (entry 0 is
/// the initial point).
#[derive(Debug, Clone)]
pub struct SolveResult<X> {
    pub result: X,
    pub log: Vec<IterRecord>,
}

impl<X> SolveResult<X> {
    pub fn initial_objective(&self) -> f64 {
        self.log[0].objective
    }

    pub fn final_objective(&self) -> f64 {
        self.log.last().expect("log is never empty").objective
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,objective,step\n");
        for r in &self.log {
            out.push_str(&format!("{},{:e},{:e}\n", r.iter, r.objective, r.step));
        }
        out
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.log_csv())
    }
}

/// Backtracking gradient descent on a flat parameter vector. The step is
/// halved until the objective strictly drops, and doubled after each
/// accepted step.
fn descend(
    x0: Vec<f64>,
    alpha0: f64,
    cfg: &SolverConfig,
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
    mut gradient: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<IterRecord>)> {
    let mut x = x0;
    let mut f = objective(&x)?;
    if !f.is_finite() {
        return Err(TomoError::Divergence { iteration: 0, objective: f });
    }
    let mut log = vec![IterRecord { iter: 0, objective: f, step: 0.0 }];
    if f == 0.0 {
        return Ok((x, log));
    }
    let floor = 1e-12 * alpha0;
    let mut alpha = alpha0;
    for iter in 1..=cfg.max_iters {
        let g = gradient(&x)?;
        if g.iter().all(|&v| v == 0.0) {
            break;
        }
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(&a, &b)| a - alpha * b).collect();
            let ft = objective(&trial)?;
            if !ft.is_finite() {
                return Err(TomoError::Divergence { iteration: iter, objective: ft });
            }
            if ft < f {
                break Some((trial, ft));
            }
            alpha *= 0.5;
            if alpha < floor {
                break None;
            }
        };
        let Some((trial, ft)) = accepted else {
            debug!("step fell below the floor at iteration {iter}");
            break;
        };
        let rel = (f - ft) / f.abs();
        x = trial;
        f = ft;
        log.push(IterRecord { iter, objective: f, step: alpha });
        if rel < cfg.tol || f == 0.0 {
            break;
        }
        alpha *= 2.0;
    }
    Ok((x, log))
}

/// `sum sqrt(dx^2 + dy^2 + eps^2)` with forward differences (zero across
/// the last row and column), and its gradient.
pub fn tv_smoothed(x: &[f64], side: usize, eps: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for r in 0..side {
        for c in 0..side {
            let p = r * side + c;
            let dx = if c + 1 < side { x[p + 1] - x[p] } else { 0.0 };
            let dy = if r + 1 < side { x[p + side] - x[p] } else { 0.0 };
            let s = (dx * dx + dy * dy + eps * eps).sqrt();
            total += s;
            if let Some(g) = grad.as_deref_mut() {
                if c + 1 < side {
                    g[p + 1] += dx / s;
                    g[p] -= dx / s;
                }
                if r + 1 < side {
                    g[p + side] += dy / s;
                    g[p] -= dy / s;
                }
            }
        }
    }
    total
}

/// Largest eigenvalue of `A^T A` by power iteration.
fn power_iteration(n: usize, iters: usize, mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let w = apply(&v)?;
        lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        v = w;
    }
    Ok(lambda)
}

/// Minimizes `||(1 - M_t)(P X - Y)||^2 + lambda TV_eps(X)` from `init` by
/// backtracking gradient descent and returns the best iterate.
pub fn iterative_mar<T: Real>(
    y: &Sinogram<T>,
    m: &MetalTrace,
    cfg: &SolverConfig,
    init: &ImageGrid<T>,
) -> Result<SolveResult<ImageGrid<T>>> {
    cfg.validate()?;
    m.check_matches(y)?;
    let fan = *y.fan_geometry()?;
    let (side, spacing) = (init.side(), init.spacing());
    let weights: Vec<f64> = m.mask().as_slice().iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    let y64: Vec<f64> = y.values().as_slice().iter().map(|v| v.f64()).collect();
    let (rows, cols) = (fan.n_detectors, fan.n_views);

    let image = |x: &[f64]| ImageGrid::new(Tensor2D::from_vec(side, side, x.to_vec())?, spacing);
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let p = forward_fan(&image(x)?, &fan)?;
        Ok(p.values()
            .as_slice()
            .iter()
            .zip(&y64)
            .zip(&weights)
            .map(|((&a, &b), &w)| w * (a - b))
            .collect())
    };
    let data_term = |x: &[f64]| -> Result<f64> { Ok(residual(x)?.iter().map(|r| r * r).sum()) };

    let x0: Vec<f64> = init.values().as_slice().iter().map(|v| v.f64()).collect();
    let eps = cfg.tv_eps;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            let d = data_term(&x0)?;
            let tv = tv_smoothed(&x0, side, eps, None);
            if d > 0.0 && tv > 0.0 {
                1e-3 * d / tv
            } else {
                0.0
            }
        }
    };
    debug!("iterative_mar: lambda = {lambda:e}");

    let alpha0 = match cfg.step {
        Some(s) => s,
        None => {
            let l_data = power_iteration(side * side, 12, |v| {
                let p = forward_fan(&image(v)?, &fan)?;
                let wp = p.with_values(Tensor2D::from_vec(
                    rows,
                    cols,
                    p.values().as_slice().iter().zip(&weights).map(|(&a, &w)| w * a).collect(),
                )?)?;
                Ok(adjoint_fan(&wp, &fan, side, spacing)?.into_values().into_vec())
            })?;
            1.0 / (2.0 * l_data + lambda * 8.0 / eps).max(f64::MIN_POSITIVE)
        }
    };

    let objective = |x: &[f64]| -> Result<f64> {
        let mut f = data_term(x)?;
        if lambda > 0.0 {
            f += lambda * tv_smoothed(x, side, eps, None);
        }
        Ok(f)
    };
    let gradient = |x: &[f64]| -> Result<Vec<f64>> {
        let r = residual(x)?;
        let rs = Sinogram::fan(fan, Tensor2D::from_vec(rows, cols, r)?)?;
        let mut g = adjoint_fan(&rs, &fan, side, spacing)?.into_values().into_vec();
        g.iter_mut().for_each(|v| *v *= 2.0);
        if lambda > 0.0 {
            let mut gt = vec![0.0; g.len()];
            tv_smoothed(x, side, eps, Some(&mut gt));
            g.iter_mut().zip(&gt).for_each(|(a, b)| *a += lambda * b);
        }
        Ok(g)
    };

    let (x, log) = descend(x0, alpha0, cfg, objective, gradient)?;
    let result = image(&x)?;
    Ok(SolveResult {
        result: ImageGrid::new(result.values().cast(), spacing)?,
        log,
    })
}

/// Smoothed-L1 Radon consistency objective over the FOV,
/// `mean sqrt((f_R(Y) - x_ref)^2 + eps^2)`, with its gradient restricted to
/// the trace entries.
pub struct TraceObjective<'a> {
    plan: &'a RilPlan,
    fan: FanGeometry,
    side: usize,
    spacing: f64,
    fov: BinaryMask,
    n_fov: usize,
    x_ref: Vec<f64>,
    inside: Vec<bool>,
    eps: f64,
}

impl<'a> TraceObjective<'a> {
    pub fn new<T: Real>(fan: FanGeometry, m: &MetalTrace, x_ref: &ImageGrid<T>, plan: &'a RilPlan) -> Result<Self> {
        if m.dims() != (fan.n_detectors, fan.n_views) {
            return Err(TomoError::dims("trace does not match the fan geometry"));
        }
        let fov = x_ref.frame().fov_mask();
        let n_fov = fov.count();
        if n_fov == 0 {
            return Err(TomoError::EmptyRegion);
        }
        let xr: Vec<f64> = x_ref.values().as_slice().iter().map(|v| v.f64()).collect();
        let scale = xr.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        Ok(TraceObjective {
            plan,
            fan,
            side: x_ref.side(),
            spacing: x_ref.spacing(),
            fov,
            n_fov,
            x_ref: xr,
            inside: m.mask().as_slice().to_vec(),
            eps: if scale > 0.0 { 1e-6 * scale } else { 1e-12 },
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn residual(&self, y: &[f64]) -> Result<Vec<f64>> {
        let sino = Sinogram::fan(self.fan, Tensor2D::from_vec(self.fan.n_detectors, self.fan.n_views, y.to_vec())?)?;
        let x = ril_forward(&sino, self.plan, self.side, self.spacing)?;
        Ok(x.values()
            .as_slice()
            .iter()
            .zip(&self.x_ref)
            .zip(self.fov.as_slice())
            .map(|((&a, &b), &f)| if f { a - b } else { 0.0 })
            .collect())
    }

    /// Objective at a detector-major flattened fan sinogram.
    pub fn value(&self, y: &[f64]) -> Result<f64> {
        let eps2 = self.eps * self.eps;
        let s: f64 = self
            .residual(y)?
            .iter()
            .zip(self.fov.as_slice())
            .filter(|(_, &f)| f)
            .map(|(&v, _)| (v * v + eps2).sqrt())
            .sum();
        Ok(s / self.n_fov as f64)
    }

    /// Gradient with respect to the trace entries; exactly 0 elsewhere.
    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let eps2 = self.eps * self.eps;
        let n = self.n_fov as f64;
        let w: Vec<f64> = self.residual(y)?.iter().map(|&v| v / (v * v + eps2).sqrt() / n).collect();
        let gx = ImageGrid::new(Tensor2D::from_vec(self.side, self.side, w)?, self.spacing)?;
        let g = ril_backward(&gx, self.plan)?;
        Ok(g.values()
            .as_slice()
            .iter()
            .zip(&self.inside)
            .map(|(&v, &i)| if i { v } else { 0.0 })
            .collect())
    }
}

/// Adjusts the trace entries of `y_li` so that `f_R(Y)` approaches `x_ref`
/// in smoothed L1 over the FOV; entries outside the trace never move.
pub fn trace_refine<T: Real>(
    y_li: &Sinogram<T>,
    m: &MetalTrace,
    x_ref: &ImageGrid<T>,
    cfg: &SolverConfig,
    plan: &RilPlan,
) -> Result<SolveResult<Sinogram<T>>> {
    cfg.validate()?;
    m.check_matches(y_li)?;
    let fan = *y_li.fan_geometry()?;
    let obj = TraceObjective::new(fan, m, x_ref, plan)?;
    let y0: Vec<f64> = y_li.values().as_slice().iter().map(|v| v.f64()).collect();
    let alpha0 = match cfg.step {
        Some(s) => s,
        None => {
            let g = obj.gradient(&y0)?;
            let gmax = g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let ymax = y0.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if gmax > 0.0 {
                0.01 * ymax.max(1e-12) / gmax
            } else {
                1.0
            }
        }
    };
    let (y, log) = descend(y0, alpha0, cfg, |y| obj.value(y), |y| obj.gradient(y))?;
    // entries outside the trace are restored verbatim, not round-tripped
    let inside = m.mask().as_slice();
    let mut out = y_li.values().clone();
    for ((v, &i), &refined) in out.as_mut_slice().iter_mut().zip(inside).zip(&y) {
        if i {
            *v = T::lit(refined);
        }
    }
    Ok(SolveResult { result: y_li.with_values(out)?, log })
}
