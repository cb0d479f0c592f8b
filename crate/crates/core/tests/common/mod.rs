//! Independent reference implementations used only by tests. They are
//! written from the defining formulas with dense matrices or direct sums,
//! sharing no code with the library operators.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use tomomar::geometry::{fov_radius, FanGeometry, ParallelGeometry};

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, a: vec![0.0; rows * cols] }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.a[r * self.cols + c] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.a[r * self.cols..(r + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.a[r * self.cols + c] * y[r];
            }
        }
        out
    }

    pub fn mul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let v = self.a[i * self.cols + k];
                if v == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.a[i * other.cols + j] += v * other.a[k * other.cols + j];
                }
            }
        }
        out
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Pixel centre of `(r, c)` on a `side` grid at `s` mm.
pub fn pixel_center(side: usize, s: f64, r: usize, c: usize) -> (f64, f64) {
    let h = (side as f64 - 1.0) / 2.0;
    ((c as f64 - h) * s, (h - r as f64) * s)
}

/// Row of the ray-driven system matrix: the line `u cos(th) + v sin(th) = t`
/// sampled at `tau = k * step` inside the FOV disc, each sample bilinearly
/// splatted (with weight `step`) onto its four neighbouring pixel centres.
pub fn ray_weights(side: usize, s: f64, step: f64, t: f64, th: f64) -> Vec<(usize, f64)> {
    let radius = fov_radius(side, s);
    let mut out = Vec::new();
    if t.abs() >= radius {
        return out;
    }
    let half = (radius * radius - t * t).sqrt();
    let h = (side as f64 - 1.0) / 2.0;
    let n = (half / step).floor() as i64;
    for k in -n..=n {
        let tau = k as f64 * step;
        let u = t * th.cos() - tau * th.sin();
        let v = t * th.sin() + tau * th.cos();
        // fractional (row, col) of the sample
        let fc = u / s + h;
        let fr = h - v / s;
        let (r0, c0) = (fr.floor(), fc.floor());
        let (dr, dc) = (fr - r0, fc - c0);
        for (rr, cc, w) in [
            (r0, c0, (1.0 - dr) * (1.0 - dc)),
            (r0, c0 + 1.0, (1.0 - dr) * dc),
            (r0 + 1.0, c0, dr * (1.0 - dc)),
            (r0 + 1.0, c0 + 1.0, dr * dc),
        ] {
            if w == 0.0 || rr < 0.0 || cc < 0.0 || rr >= side as f64 || cc >= side as f64 {
                continue;
            }
            out.push((rr as usize * side + cc as usize, w * step));
        }
    }
    out
}

/// Dense fan projector; rows ordered detector-major like the sinogram.
pub fn dense_fan(g: &FanGeometry, side: usize, s: f64) -> Dense {
    let mut m = Dense::zeros(g.n_detectors * g.n_views, side * side);
    let step = 0.5 * s;
    for i in 0..g.n_detectors {
        let gamma = (i as f64 - (g.n_detectors as f64 - 1.0) / 2.0) * g.detector_spacing_rad;
        for j in 0..g.n_views {
            let beta = 2.0 * PI * j as f64 / g.n_views as f64;
            for (p, w) in ray_weights(side, s, step, g.source_distance_mm * gamma.sin(), beta + gamma) {
                m.add(i * g.n_views + j, p, w);
            }
        }
    }
    m
}

pub fn dense_parallel(g: &ParallelGeometry, side: usize, s: f64) -> Dense {
    let mut m = Dense::zeros(g.n_detectors * g.n_views, side * side);
    let step = 0.5 * s;
    for i in 0..g.n_detectors {
        let t = (i as f64 - (g.n_detectors as f64 - 1.0) / 2.0) * g.detector_spacing_mm;
        for j in 0..g.n_views {
            let th = PI * j as f64 / g.n_views as f64;
            for (p, w) in ray_weights(side, s, step, t, th) {
                m.add(i * g.n_views + j, p, w);
            }
        }
    }
    m
}

/// Linear interpolation weights of a fractional index on `0..n`, clamped
/// to the end samples.
fn lerp_clamped(f: f64, n: usize) -> Vec<(usize, f64)> {
    if n == 1 {
        return vec![(0, 1.0)];
    }
    let f = f.clamp(0.0, (n - 1) as f64);
    let lo = (f.floor() as usize).min(n - 2);
    let w = f - lo as f64;
    vec![(lo, 1.0 - w), (lo + 1, w)]
}

/// Periodic linear interpolation on `0..n`.
fn lerp_periodic(f: f64, n: usize) -> Vec<(usize, f64)> {
    let f = f.rem_euclid(n as f64);
    let lo = f.floor() as usize % n;
    let w = f - f.floor();
    vec![(lo, 1.0 - w), ((lo + 1) % n, w)]
}

/// Dense fan-to-parallel rebinning: for every parallel sample and its
/// conjugate `(-t, theta + pi)`, `gamma = asin(t / D)` picks fan rows and
/// `beta = theta - gamma` picks views; the two conjugates are averaged.
pub fn dense_rebin(fan: &FanGeometry, par: &ParallelGeometry) -> Dense {
    let (h, w) = (fan.n_detectors, fan.n_views);
    let (n, m_views) = (par.n_detectors, par.n_views);
    let mut out = Dense::zeros(n * m_views, h * w);
    let covered = fan.source_distance_mm * (fan.detector_spacing_rad * (h as f64 - 1.0) / 2.0).sin();
    let dbeta = 2.0 * PI / w as f64;
    for k in 0..n {
        for m in 0..m_views {
            let theta = PI * m as f64 / m_views as f64;
            let t = (k as f64 - (n as f64 - 1.0) / 2.0) * par.detector_spacing_mm;
            for (tt, th) in [(t, theta), (-t, theta + PI)] {
                if tt.abs() > covered * (1.0 + 1e-12) {
                    continue;
                }
                let gamma_t = (tt / fan.source_distance_mm).asin();
                let fi = gamma_t / fan.detector_spacing_rad + (h as f64 - 1.0) / 2.0;
                for (i, wi) in lerp_clamped(fi, h) {
                    let gamma_i = (i as f64 - (h as f64 - 1.0) / 2.0) * fan.detector_spacing_rad;
                    for (j, wj) in lerp_periodic((th - gamma_i) / dbeta, w) {
                        out.add(k * m_views + m, i * w + j, 0.5 * wi * wj);
                    }
                }
            }
        }
    }
    out
}

/// Ramp impulse response on an `nfft`-point circle by direct inverse DFT of
/// `|f|` with `f = min(k, N - k) / (N dt)`.
pub fn ramp_kernel(nfft: usize, dt: f64) -> Vec<f64> {
    (0..nfft)
        .map(|n| {
            (0..nfft)
                .map(|k| {
                    let f = k.min(nfft - k) as f64 / (nfft as f64 * dt);
                    f * (2.0 * PI * (k * n) as f64 / nfft as f64).cos()
                })
                .sum::<f64>()
                / nfft as f64
        })
        .collect()
}

/// Dense per-view ramp filter: zero-padded circular convolution, cropped.
pub fn dense_filter(par: &ParallelGeometry, nfft: usize) -> Dense {
    let (n, m_views) = (par.n_detectors, par.n_views);
    let h = ramp_kernel(nfft, par.detector_spacing_mm);
    let mut out = Dense::zeros(n * m_views, n * m_views);
    for m in 0..m_views {
        for i in 0..n {
            for j in 0..n {
                let v = h[(i + nfft - j) % nfft];
                out.add(i * m_views + m, j * m_views + m, v);
            }
        }
    }
    out
}

/// Dense back-projection with linear interpolation in `t` and `dtheta` weight.
pub fn dense_backproject(par: &ParallelGeometry, side: usize, s: f64) -> Dense {
    let (n, m_views) = (par.n_detectors, par.n_views);
    let mut out = Dense::zeros(side * side, n * m_views);
    let radius = fov_radius(side, s);
    let dtheta = PI / m_views as f64;
    for r in 0..side {
        for c in 0..side {
            let (u, v) = pixel_center(side, s, r, c);
            if u * u + v * v > radius * radius {
                continue;
            }
            for m in 0..m_views {
                let theta = PI * m as f64 / m_views as f64;
                let f = (u * theta.cos() + v * theta.sin()) / par.detector_spacing_mm + (n as f64 - 1.0) / 2.0;
                if f < 0.0 || f > (n - 1) as f64 {
                    continue;
                }
                let lo = f.floor() as usize;
                let w = f - lo as f64;
                out.add(r * side + c, lo * m_views + m, dtheta * (1.0 - w));
                if w > 0.0 {
                    out.add(r * side + c, (lo + 1) * m_views + m, dtheta * w);
                }
            }
        }
    }
    out
}

/// Dense FBP: `gain * B F C`.
pub fn dense_fbp(fan: &FanGeometry, par: &ParallelGeometry, nfft: usize, side: usize, s: f64, gain: f64) -> Dense {
    let bf = dense_backproject(par, side, s).mul(&dense_filter(par, nfft));
    let mut m = bf.mul(&dense_rebin(fan, par));
    m.a.iter_mut().for_each(|v| *v *= gain);
    m
}

/// Matrix-free version of [`dense_fbp`] for grids too large to assemble:
/// same formulas evaluated as direct sums.
pub fn direct_fbp(fan: &FanGeometry, par: &ParallelGeometry, nfft: usize, side: usize, s: f64, gain: f64, y_fan: &[f64]) -> Vec<f64> {
    let (h, w) = (fan.n_detectors, fan.n_views);
    let (n, m_views) = (par.n_detectors, par.n_views);
    let covered = fan.source_distance_mm * (fan.detector_spacing_rad * (h as f64 - 1.0) / 2.0).sin();
    let dbeta = 2.0 * PI / w as f64;
    let fan_at = |i: usize, j: usize| y_fan[i * w + j];
    // rebin
    let mut p = vec![0.0; n * m_views];
    for k in 0..n {
        let t = (k as f64 - (n as f64 - 1.0) / 2.0) * par.detector_spacing_mm;
        for m in 0..m_views {
            let theta = PI * m as f64 / m_views as f64;
            let mut acc = 0.0;
            for (tt, th) in [(t, theta), (-t, theta + PI)] {
                if tt.abs() > covered * (1.0 + 1e-12) {
                    continue;
                }
                let fi = (tt / fan.source_distance_mm).asin() / fan.detector_spacing_rad + (h as f64 - 1.0) / 2.0;
                for (i, wi) in lerp_clamped(fi, h) {
                    let gamma_i = (i as f64 - (h as f64 - 1.0) / 2.0) * fan.detector_spacing_rad;
                    for (j, wj) in lerp_periodic((th - gamma_i) / dbeta, w) {
                        acc += 0.5 * wi * wj * fan_at(i, j);
                    }
                }
            }
            p[k * m_views + m] = acc;
        }
    }
    // filter by direct circular convolution
    let kernel = ramp_kernel(nfft, par.detector_spacing_mm);
    let mut q = vec![0.0; n * m_views];
    for m in 0..m_views {
        for i in 0..n {
            q[i * m_views + m] = (0..n).map(|j| kernel[(i + nfft - j) % nfft] * p[j * m_views + m]).sum();
        }
    }
    // back-project
    let radius = fov_radius(side, s);
    let dtheta = PI / m_views as f64;
    let trig: Vec<(f64, f64)> = (0..m_views).map(|m| (PI * m as f64 / m_views as f64).sin_cos()).collect();
    let mut x = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let (u, v) = pixel_center(side, s, r, c);
            if u * u + v * v > radius * radius {
                continue;
            }
            let mut acc = 0.0;
            for (m, &(sn, cs)) in trig.iter().enumerate() {
                let f = (u * cs + v * sn) / par.detector_spacing_mm + (n as f64 - 1.0) / 2.0;
                if f < 0.0 || f > (n - 1) as f64 {
                    continue;
                }
                let lo = f.floor() as usize;
                let wt = f - lo as f64;
                acc += (1.0 - wt) * q[lo * m_views + m];
                if wt > 0.0 {
                    acc += wt * q[(lo + 1) * m_views + m];
                }
            }
            x[r * side + c] = gain * dtheta * acc;
        }
    }
    x
}

/// Brute-force mean SSIM: every valid 11x11 window, 2D Gaussian weights
/// built directly, statistics summed pixel by pixel.
pub fn ssim_bruteforce(x: &[f64], y: &[f64], side: usize, peak: f64) -> f64 {
    let win = 11usize;
    let sigma = 1.5f64;
    let mut wts = vec![0.0; win * win];
    for a in 0..win {
        for b in 0..win {
            let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
            wts[a * win + b] = (-(da * da + db * db) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|w| *w /= total);
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r0 in 0..=side - win {
        for c0 in 0..=side - win {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let p = (r0 + a) * side + c0 + b;
                    mx += wts[a * win + b] * x[p];
                    my += wts[a * win + b] * y[p];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let p = (r0 + a) * side + c0 + b;
                    let w = wts[a * win + b];
                    vx += w * (x[p] - mx).powi(2);
                    vy += w * (y[p] - my).powi(2);
                    cxy += w * (x[p] - mx) * (y[p] - my);
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// PSNR over pixels where `keep` holds, from scratch.
pub fn psnr_ref(x: &[f64], y: &[f64], keep: &[bool], peak: f64) -> f64 {
    let (mut sse, mut n) = (0.0, 0usize);
    for ((a, b), &k) in x.iter().zip(y).zip(keep) {
        if k {
            sse += (a - b).powi(2);
            n += 1;
        }
    }
    10.0 * (peak * peak * n as f64 / sse).log10()
}
