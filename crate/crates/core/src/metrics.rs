//! Image quality metrics: PSNR with a dynamic-range peak, Gaussian-window
//! SSIM, and per-metal-size grouped reports.

use std::fmt;

use serde::Serialize;

use crate::error::{Result, TomoError};
use crate::geometry::ImageGrid;
use crate::simulate::MarInstance;
use crate::tensor::{BinaryMask, Real, Tensor2D};

/// Numeric stand-in for an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 200.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const CSV_HEADER: &str = "bucket,metal_px_min,metal_px_max,n,psnr_mean,ssim_mean";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    /// Zero mean squared error.
    Identical,
    Db(f64),
}

impl Psnr {
    /// Decibels, with [`Psnr::Identical`] mapped to [`PSNR_CAP_DB`].
    pub fn value(self) -> f64 {
        match self {
            Psnr::Identical => PSNR_CAP_DB,
            Psnr::Db(v) => v.min(PSNR_CAP_DB),
        }
    }

    pub fn is_identical(self) -> bool {
        matches!(self, Psnr::Identical)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => write!(f, "identical"),
            Psnr::Db(v) => write!(f, "{v:.3} dB"),
        }
    }
}

/// Peak convention when none is given: dynamic range of the reference.
pub fn default_peak<T: Real>(reference: &ImageGrid<T>) -> f64 {
    let (lo, hi) = reference.values().min_max();
    hi.f64() - lo.f64()
}

fn resolve_peak<T: Real>(reference: &ImageGrid<T>, peak: Option<f64>) -> Result<f64> {
    let p = peak.unwrap_or_else(|| default_peak(reference));
    if !(p > 0.0 && p.is_finite()) {
        return Err(TomoError::InvalidConfig(format!("peak must be positive, got {p}")));
    }
    Ok(p)
}

/// PSNR over the pixels where `region` is set.
pub fn psnr_in_region<T: Real>(x: &ImageGrid<T>, reference: &ImageGrid<T>, peak: Option<f64>, region: &BinaryMask) -> Result<Psnr> {
    x.check_same_grid(reference)?;
    if region.dims() != reference.values().dims() {
        return Err(TomoError::dims("region mask does not match the image"));
    }
    let peak = resolve_peak(reference, peak)?;
    let (mut sse, mut n) = (0.0, 0usize);
    for ((&a, &b), &keep) in x.values().as_slice().iter().zip(reference.values().as_slice()).zip(region.as_slice()) {
        if keep {
            let d = a.f64() - b.f64();
            sse += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(TomoError::EmptyRegion);
    }
    if sse == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / (sse / n as f64)).log10()))
}

/// `10 log10(peak^2 / MSE)` over all pixels not in `exclude`.
pub fn psnr<T: Real>(x: &ImageGrid<T>, reference: &ImageGrid<T>, peak: Option<f64>, exclude: Option<&BinaryMask>) -> Result<Psnr> {
    let (r, c) = reference.values().dims();
    let region = match exclude {
        Some(m) => {
            if m.dims() != (r, c) {
                return Err(TomoError::dims("exclusion mask does not match the image"));
            }
            BinaryMask::from_fn(r, c, |i, j| !m.get(i, j))
        }
        None => BinaryMask::full(r, c),
    };
    psnr_in_region(x, reference, peak, &region)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let h = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - h;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filtering of a `side x side` field.
fn filter_valid(a: &[f64], side: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out = side + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; side * out];
    for r in 0..side {
        for c in 0..out {
            tmp[r * out + c] = (0..SSIM_WINDOW).map(|t| k[t] * a[r * side + c + t]).sum();
        }
    }
    let mut res = vec![0.0; out * out];
    for r in 0..out {
        for c in 0..out {
            res[r * out + c] = (0..SSIM_WINDOW).map(|t| k[t] * tmp[(r + t) * out + c]).sum();
        }
    }
    res
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5),
/// `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
pub fn ssim<T: Real>(x: &ImageGrid<T>, reference: &ImageGrid<T>, peak: Option<f64>) -> Result<f64> {
    x.check_same_grid(reference)?;
    let side = x.side();
    if side < SSIM_WINDOW {
        return Err(TomoError::dims(format!("image side {side} is smaller than the {SSIM_WINDOW}px SSIM window")));
    }
    let peak = resolve_peak(reference, peak)?;
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let a: Vec<f64> = x.values().as_slice().iter().map(|v| v.f64()).collect();
    let b: Vec<f64> = reference.values().as_slice().iter().map(|v| v.f64()).collect();
    let k = gaussian_kernel();
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, side, &k);
    let mu_b = filter_valid(&b, side, &k);
    let e_aa = filter_valid(&sq(&a, &a), side, &k);
    let e_bb = filter_valid(&sq(&b, &b), side, &k);
    let e_ab = filter_valid(&sq(&a, &b), side, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub identical: bool,
    pub ssim: f64,
    pub n_pixels: usize,
    pub mask: Option<String>,
    pub peak: f64,
}

/// PSNR and SSIM with `exclude` pixels left out. For SSIM the excluded
/// pixels of `x` are replaced by the reference so they carry no error.
pub fn evaluate<T: Real>(
    x: &ImageGrid<T>,
    reference: &ImageGrid<T>,
    peak: Option<f64>,
    exclude: Option<(&BinaryMask, &str)>,
) -> Result<MetricReport> {
    let peak = resolve_peak(reference, peak)?;
    let p = psnr(x, reference, Some(peak), exclude.map(|e| e.0))?;
    let masked_x = match exclude {
        Some((m, _)) => x.with_values(Tensor2D::from_fn(x.side(), x.side(), |r, c| {
            if m.get(r, c) {
                reference.values().get(r, c)
            } else {
                x.values().get(r, c)
            }
        }))?,
        None => x.clone(),
    };
    let s = ssim(&masked_x, reference, Some(peak))?;
    let excluded = exclude.map_or(0, |e| e.0.count());
    Ok(MetricReport {
        psnr_db: p.value(),
        identical: p.is_identical(),
        ssim: s,
        n_pixels: x.values().len() - excluded,
        mask: exclude.map(|e| e.1.to_string()),
        peak,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: String,
    pub metal_px_min: usize,
    pub metal_px_max: usize,
    pub n: usize,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupedReport {
    /// Buckets from largest to smallest metal, then the overall row.
    pub rows: Vec<BucketRow>,
}

impl GroupedReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                r.bucket, r.metal_px_min, r.metal_px_max, r.n, r.psnr_mean, r.ssim_mean
            ));
        }
        out
    }
}

/// One scored case for [`group_scores`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub metal_px: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

fn summarize(label: String, items: &[Scored]) -> BucketRow {
    let n = items.len();
    BucketRow {
        bucket: label,
        metal_px_min: items.iter().map(|s| s.metal_px).min().unwrap_or(0),
        metal_px_max: items.iter().map(|s| s.metal_px).max().unwrap_or(0),
        n,
        psnr_mean: items.iter().map(|s| s.psnr_db).sum::<f64>() / n as f64,
        ssim_mean: items.iter().map(|s| s.ssim).sum::<f64>() / n as f64,
    }
}

/// Sorts by metal size (largest first), splits into up to `n_buckets`
/// groups of near-equal count, and appends an `all` row.
pub fn group_scores(scores: &[Scored], n_buckets: usize) -> Result<GroupedReport> {
    if scores.is_empty() {
        return Err(TomoError::EmptyRegion);
    }
    if n_buckets == 0 {
        return Err(TomoError::InvalidConfig("need at least one bucket".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by_key(|s| std::cmp::Reverse(s.metal_px));
    let k = n_buckets.min(sorted.len());
    let n = sorted.len();
    let mut rows = Vec::with_capacity(k + 1);
    for b in 0..k {
        let (lo, hi) = (b * n / k, (b + 1) * n / k);
        rows.push(summarize((b + 1).to_string(), &sorted[lo..hi]));
    }
    rows.push(summarize("all".into(), &sorted));
    Ok(GroupedReport { rows })
}

/// Scores each result against its instance's ground truth with metal
/// pixels excluded, then groups by metal size.
pub fn grouped_report<T: Real>(items: &[(&MarInstance<T>, &ImageGrid<T>)], n_buckets: usize) -> Result<GroupedReport> {
    let scores = items
        .iter()
        .map(|(inst, x)| {
            let r = evaluate(x, &inst.x_gt, None, Some((inst.metal.mask(), "metal")))?;
            Ok(Scored {
                metal_px: inst.metal.pixel_count(),
                psnr_db: r.psnr_db,
                ssim: r.ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    group_scores(&scores, n_buckets)
}
