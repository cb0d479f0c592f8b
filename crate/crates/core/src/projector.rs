//! Fan- and parallel-beam forward projection and its exact transpose.
//!
//! Each ray is sampled at `tau = k * step` for every integer `k` with
//! `|tau| <= sqrt(R^2 - t^2)`, where `R` is the FOV radius, and the image is
//! read with bilinear interpolation (zero outside the grid). Rays with
//! `|t| >= R` integrate to zero. The adjoint replays the same samples and
//! scatters the same weights, so it is the transpose by construction.

use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::geometry::{FanGeometry, GridFrame, ImageGrid, ParallelGeometry};
use crate::phantom::MetalMask;
use crate::tensor::{BinaryMask, Real, Tensor2D};

pub const TRACE_EPSILON: f64 = 1e-6;

/// Views handled per private accumulator in adjoint passes. Fixed so the
/// summation order does not depend on the thread count.
const ADJOINT_CHUNK_VIEWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SinoGeometry {
    Fan(FanGeometry),
    Parallel(ParallelGeometry),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinoKind {
    Fan,
    Parallel,
}

impl SinoKind {
    pub fn name(self) -> &'static str {
        match self {
            SinoKind::Fan => "fan",
            SinoKind::Parallel => "parallel",
        }
    }
}

impl SinoGeometry {
    pub fn kind(&self) -> SinoKind {
        match self {
            SinoGeometry::Fan(_) => SinoKind::Fan,
            SinoGeometry::Parallel(_) => SinoKind::Parallel,
        }
    }

    /// `(detectors, views)`
    pub fn dims(&self) -> (usize, usize) {
        match self {
            SinoGeometry::Fan(g) => (g.n_detectors, g.n_views),
            SinoGeometry::Parallel(g) => (g.n_detectors, g.n_views),
        }
    }
}

/// Line-integral data, rows = detectors, columns = views.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T> {
    geometry: SinoGeometry,
    values: Tensor2D<T>,
}

impl<T: Real> Sinogram<T> {
    pub fn new(geometry: SinoGeometry, values: Tensor2D<T>) -> Result<Self> {
        if values.dims() != geometry.dims() {
            return Err(TomoError::dims(format!(
                "sinogram data {}x{} vs geometry {}x{}",
                values.rows(),
                values.cols(),
                geometry.dims().0,
                geometry.dims().1
            )));
        }
        Ok(Sinogram { geometry, values })
    }

    pub fn fan(g: FanGeometry, values: Tensor2D<T>) -> Result<Self> {
        Self::new(SinoGeometry::Fan(g), values)
    }

    pub fn parallel(g: ParallelGeometry, values: Tensor2D<T>) -> Result<Self> {
        Self::new(SinoGeometry::Parallel(g), values)
    }

    pub fn zeros(geometry: SinoGeometry) -> Self {
        let (r, c) = geometry.dims();
        Sinogram {
            geometry,
            values: Tensor2D::zeros(r, c),
        }
    }

    pub fn geometry(&self) -> &SinoGeometry {
        &self.geometry
    }

    pub fn kind(&self) -> SinoKind {
        self.geometry.kind()
    }

    pub fn values(&self) -> &Tensor2D<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor2D<T> {
        &mut self.values
    }

    pub fn into_values(self) -> Tensor2D<T> {
        self.values
    }

    pub fn with_values(&self, values: Tensor2D<T>) -> Result<Self> {
        Self::new(self.geometry, values)
    }

    pub fn fan_geometry(&self) -> Result<&FanGeometry> {
        match &self.geometry {
            SinoGeometry::Fan(g) => Ok(g),
            SinoGeometry::Parallel(_) => Err(TomoError::KindMismatch {
                expected: "fan",
                found: "parallel",
            }),
        }
    }

    pub fn parallel_geometry(&self) -> Result<&ParallelGeometry> {
        match &self.geometry {
            SinoGeometry::Parallel(g) => Ok(g),
            SinoGeometry::Fan(_) => Err(TomoError::KindMismatch {
                expected: "parallel",
                found: "fan",
            }),
        }
    }

    pub fn cast<U: Real>(&self) -> Sinogram<U> {
        Sinogram {
            geometry: self.geometry,
            values: self.values.cast(),
        }
    }
}

/// Sinogram-domain support of rays that touch metal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetalTrace(BinaryMask);

impl MetalTrace {
    pub fn new(mask: BinaryMask) -> Self {
        MetalTrace(mask)
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        MetalTrace(BinaryMask::empty(rows, cols))
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.0.get(r, c)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn check_matches<T: Real>(&self, s: &Sinogram<T>) -> Result<()> {
        if self.dims() != s.values().dims() {
            return Err(TomoError::dims(format!(
                "trace {:?} vs sinogram {:?}",
                self.dims(),
                s.values().dims()
            )));
        }
        Ok(())
    }
}

/// Visits every `(pixel index, weight)` contribution of the ray
/// `u cos theta + v sin theta = t`. Weights include the step length.
#[inline]
pub(crate) fn march_ray(frame: &GridFrame, step: f64, t: f64, theta: f64, mut visit: impl FnMut(usize, f64)) {
    let radius = frame.fov_radius();
    if t.abs() >= radius {
        return;
    }
    let half_chord = (radius * radius - t * t).sqrt();
    let k_max = (half_chord / step).floor() as i64;
    let (sin, cos) = theta.sin_cos();
    let inv = 1.0 / frame.spacing;
    let h = (frame.side as f64 - 1.0) / 2.0;
    // point(k) = t*(cos, sin) + k*step*(-sin, cos)
    let col0 = t * cos * inv + h;
    let row0 = h - t * sin * inv;
    let dcol = -sin * step * inv;
    let drow = -cos * step * inv;
    let side = frame.side as i64;
    for k in -k_max..=k_max {
        let kf = k as f64;
        let cf = col0 + kf * dcol;
        let rf = row0 + kf * drow;
        let c0 = cf.floor();
        let r0 = rf.floor();
        let fc = cf - c0;
        let fr = rf - r0;
        let (c0, r0) = (c0 as i64, r0 as i64);
        let corners = [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c0 + 1, (1.0 - fr) * fc),
            (r0 + 1, c0, fr * (1.0 - fc)),
            (r0 + 1, c0 + 1, fr * fc),
        ];
        for (r, c, w) in corners {
            if r >= 0 && r < side && c >= 0 && c < side && w != 0.0 {
                visit((r * side + c) as usize, w * step);
            }
        }
    }
}

/// Ray-marching projector; `step_fraction` is the sample step in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projector {
    pub step_fraction: f64,
}

impl Default for Projector {
    fn default() -> Self {
        Projector { step_fraction: 0.5 }
    }
}

impl Projector {
    pub fn new(step_fraction: f64) -> Result<Self> {
        if !(step_fraction > 0.0) {
            return Err(TomoError::InvalidConfig("projector step must be > 0".into()));
        }
        Ok(Projector { step_fraction })
    }

    fn step(&self, frame: &GridFrame) -> f64 {
        self.step_fraction * frame.spacing
    }

    pub fn forward_parallel<T: Real>(&self, x: &ImageGrid<T>, g: &ParallelGeometry) -> Result<Sinogram<T>> {
        g.validate()?;
        let data = self.project(x, g.n_detectors, g.n_views, |i, j| (g.t(i), g.theta(j)));
        Sinogram::parallel(*g, data)
    }

    pub fn forward_fan<T: Real>(&self, x: &ImageGrid<T>, g: &FanGeometry) -> Result<Sinogram<T>> {
        g.validate()?;
        g.check_covers(x.fov_radius())?;
        let d = g.source_distance_mm;
        let data = self.project(x, g.n_detectors, g.n_views, |i, j| {
            let gamma = g.gamma(i);
            (d * gamma.sin(), g.beta(j) + gamma)
        });
        Sinogram::fan(*g, data)
    }

    pub fn adjoint_parallel<T: Real>(
        &self,
        y: &Sinogram<T>,
        g: &ParallelGeometry,
        side: usize,
        spacing: f64,
    ) -> Result<ImageGrid<T>> {
        let own = y.parallel_geometry()?;
        if own != g {
            return Err(TomoError::dims("sinogram geometry differs from requested parallel geometry"));
        }
        let frame = GridFrame::new(side, spacing);
        let values = self.transpose(y.values(), &frame, |i, j| (g.t(i), g.theta(j)));
        ImageGrid::new(values, spacing)
    }

    pub fn adjoint_fan<T: Real>(&self, y: &Sinogram<T>, g: &FanGeometry, side: usize, spacing: f64) -> Result<ImageGrid<T>> {
        let own = y.fan_geometry()?;
        if own != g {
            return Err(TomoError::dims("sinogram geometry differs from requested fan geometry"));
        }
        let frame = GridFrame::new(side, spacing);
        g.check_covers(frame.fov_radius())?;
        let d = g.source_distance_mm;
        let values = self.transpose(y.values(), &frame, |i, j| {
            let gamma = g.gamma(i);
            (d * gamma.sin(), g.beta(j) + gamma)
        });
        ImageGrid::new(values, spacing)
    }

    fn project<T: Real>(
        &self,
        x: &ImageGrid<T>,
        n_det: usize,
        n_views: usize,
        ray: impl Fn(usize, usize) -> (f64, f64) + Sync,
    ) -> Tensor2D<T> {
        let frame = x.frame();
        let step = self.step(&frame);
        let img = x.values().as_slice();
        let columns: Vec<Vec<T>> = (0..n_views)
            .into_par_iter()
            .map(|j| {
                (0..n_det)
                    .map(|i| {
                        let (t, theta) = ray(i, j);
                        let mut acc = 0.0f64;
                        march_ray(&frame, step, t, theta, |p, w| acc += w * img[p].f64());
                        T::lit(acc)
                    })
                    .collect()
            })
            .collect();
        Tensor2D::from_fn(n_det, n_views, |i, j| columns[j][i])
    }

    fn transpose<T: Real>(
        &self,
        y: &Tensor2D<T>,
        frame: &GridFrame,
        ray: impl Fn(usize, usize) -> (f64, f64) + Sync,
    ) -> Tensor2D<T> {
        let (n_det, n_views) = y.dims();
        let step = self.step(frame);
        let n_pix = frame.side * frame.side;
        let partials: Vec<Vec<f64>> = (0..n_views)
            .collect::<Vec<_>>()
            .par_chunks(ADJOINT_CHUNK_VIEWS)
            .map(|views| {
                let mut acc = vec![0.0f64; n_pix];
                for &j in views {
                    for i in 0..n_det {
                        let yv = y.get(i, j).f64();
                        if yv == 0.0 {
                            continue;
                        }
                        let (t, theta) = ray(i, j);
                        march_ray(frame, step, t, theta, |p, w| acc[p] += w * yv);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0f64; n_pix];
        for part in &partials {
            for (a, b) in total.iter_mut().zip(part) {
                *a += b;
            }
        }
        Tensor2D::from_vec(frame.side, frame.side, total.into_iter().map(T::lit).collect())
            .expect("side^2 accumulator")
    }
}

pub fn forward_parallel<T: Real>(x: &ImageGrid<T>, g: &ParallelGeometry) -> Result<Sinogram<T>> {
    Projector::default().forward_parallel(x, g)
}

pub fn forward_fan<T: Real>(x: &ImageGrid<T>, g: &FanGeometry) -> Result<Sinogram<T>> {
    Projector::default().forward_fan(x, g)
}

pub fn adjoint_parallel<T: Real>(y: &Sinogram<T>, g: &ParallelGeometry, side: usize, spacing: f64) -> Result<ImageGrid<T>> {
    Projector::default().adjoint_parallel(y, g, side, spacing)
}

pub fn adjoint_fan<T: Real>(y: &Sinogram<T>, g: &FanGeometry, side: usize, spacing: f64) -> Result<ImageGrid<T>> {
    Projector::default().adjoint_fan(y, g, side, spacing)
}

/// Rays whose projection of the metal indicator exceeds [`TRACE_EPSILON`].
pub fn metal_trace(m: &MetalMask, spacing: f64, g: &FanGeometry) -> Result<MetalTrace> {
    let (n_det, n_views) = (g.n_detectors, g.n_views);
    if m.is_empty() {
        return Ok(MetalTrace::empty(n_det, n_views));
    }
    let p = forward_fan(&m.to_image::<f64>(spacing), g)?;
    let v = p.values();
    Ok(MetalTrace(BinaryMask::from_fn(n_det, n_views, |i, j| v.get(i, j) > TRACE_EPSILON)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{ellipse_phantom, gaussian_phantom, EllipseSpec, GaussianBlob};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, rng: &mut ChaCha8Rng) -> ImageGrid<f64> {
        ImageGrid::new(Tensor2D::from_fn(side, side, |_, _| rng.random_range(-1.0..1.0)), 1.0).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let x = ImageGrid::<f32>::zeros(24, 1.0).unwrap();
        let pg = ParallelGeometry::covering(24, 1.0, 31, 20).unwrap();
        let fg = FanGeometry::covering(24, 1.0, 60.0, 31, 24).unwrap();
        assert!(forward_parallel(&x, &pg).unwrap().values().as_slice().iter().all(|&v| v == 0.0));
        assert!(forward_fan(&x, &fg).unwrap().values().as_slice().iter().all(|&v| v == 0.0));
        let zp = Sinogram::<f32>::zeros(SinoGeometry::Parallel(pg));
        let zf = Sinogram::<f32>::zeros(SinoGeometry::Fan(fg));
        assert_eq!(adjoint_parallel(&zp, &pg, 24, 1.0).unwrap(), x);
        assert_eq!(adjoint_fan(&zf, &fg, 24, 1.0).unwrap(), x);
    }

    /// View-averaged chords; single rays see the staircase edge of a
    /// pixel-centre disc and deviate by up to a few percent.
    #[test]
    fn disc_chords_parallel() {
        for r in [10.0, 20.0, 40.0] {
            let mu = 0.02;
            let side = (2.0 * r) as usize + 24;
            let x = ellipse_phantom::<f64>(side, 1.0, &[EllipseSpec::disc([0.0, 0.0], r, mu)]).unwrap();
            let g = ParallelGeometry::covering(side, 1.0, side + 1, 12).unwrap();
            let y = forward_parallel(&x, &g).unwrap();
            for i in 0..g.n_detectors {
                let t = g.t(i);
                if t.abs() > 0.7 * r {
                    continue;
                }
                let expect = 2.0 * mu * (r * r - t * t).sqrt();
                let row = y.values().row(i);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                assert!((mean - expect).abs() <= 0.02 * expect, "r={r} t={t} got {mean} want {expect}");
                for &v in row {
                    assert!((v - expect).abs() <= 0.06 * expect);
                }
            }
            let i_far = g.n_detectors - 3;
            assert!(g.t(i_far) > r + 2.0);
            assert_eq!(y.values().get(i_far, 0), 0.0);
        }
    }

    #[test]
    fn disc_chords_fan() {
        let (side, r, mu) = (96, 20.0, 0.02);
        let x = ellipse_phantom::<f64>(side, 1.0, &[EllipseSpec::disc([0.0, 0.0], r, mu)]).unwrap();
        let g = FanGeometry::covering(side, 1.0, 150.0, 97, 16).unwrap();
        let y = forward_fan(&x, &g).unwrap();
        for i in 0..g.n_detectors {
            let dist = g.source_distance_mm * g.gamma(i).sin();
            if dist.abs() < 0.7 * r {
                let expect = 2.0 * mu * (r * r - dist * dist).sqrt();
                let row = y.values().row(i);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                assert!((mean - expect).abs() <= 0.02 * expect);
            }
        }
    }

    #[test]
    fn symmetric_blob_fan_rows_are_constant() {
        let side = 64;
        let blob = GaussianBlob { center: [0.0, 0.0], sigma: 8.0, amplitude: 0.02 };
        let x = gaussian_phantom::<f64>(side, 1.0, &[blob]).unwrap();
        let g = FanGeometry::covering(side, 1.0, 120.0, 65, 24).unwrap();
        let y = forward_fan(&x, &g).unwrap();
        let peak = y.values().min_max().1;
        for i in 0..g.n_detectors {
            let row = y.values().row(i);
            let spread = row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread <= 1e-3 * peak, "row {i} varies by {spread}");
        }
    }

    #[test]
    fn fan_must_cover_fov() {
        let x = ImageGrid::<f32>::zeros(32, 1.0).unwrap();
        let narrow = FanGeometry::new(100.0, 11, 0.01, 8).unwrap();
        assert!(matches!(forward_fan(&x, &narrow), Err(TomoError::FovViolation { .. })));
    }

    #[test]
    fn adjoint_kind_mismatch() {
        let pg = ParallelGeometry::covering(16, 1.0, 17, 8).unwrap();
        let fg = FanGeometry::covering(16, 1.0, 40.0, 17, 8).unwrap();
        let fan = Sinogram::<f32>::zeros(SinoGeometry::Fan(fg));
        assert!(matches!(
            adjoint_parallel(&fan, &pg, 16, 1.0),
            Err(TomoError::KindMismatch { .. })
        ));
    }

    #[test]
    fn one_hot_adjoint_is_ray_footprint() {
        let side = 32;
        let g = FanGeometry::covering(side, 1.0, 80.0, 41, 12).unwrap();
        let (i0, j0) = (13, 5);
        let mut y = Sinogram::<f64>::zeros(SinoGeometry::Fan(g));
        y.values_mut().set(i0, j0, 1.0);
        let back = adjoint_fan(&y, &g, side, 1.0).unwrap();
        let mut footprint = vec![0.0; side * side];
        let gamma = g.gamma(i0);
        march_ray(
            &GridFrame::new(side, 1.0),
            0.5,
            g.source_distance_mm * gamma.sin(),
            g.beta(j0) + gamma,
            |p, w| footprint[p] += w,
        );
        for (p, (&a, &b)) in back.values().as_slice().iter().zip(&footprint).enumerate() {
            assert!((a - b).abs() < 1e-12, "pixel {p}");
            assert_eq!(a != 0.0, b != 0.0);
        }
        assert!(footprint.iter().filter(|&&w| w != 0.0).count() > side);
    }

    #[test]
    fn dot_test_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let side = 20;
        let pg = ParallelGeometry::covering(side, 1.0, 25, 14).unwrap();
        let fg = FanGeometry::covering(side, 1.0, 50.0, 25, 18).unwrap();
        for _ in 0..5 {
            let x = random_image(side, &mut rng);
            let yp = Sinogram::parallel(pg, Tensor2D::from_fn(25, 14, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let lhs = forward_parallel(&x, &pg).unwrap().values().dot(yp.values());
            let rhs = x.values().dot(adjoint_parallel(&yp, &pg, side, 1.0).unwrap().values());
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));

            let yf = Sinogram::fan(fg, Tensor2D::from_fn(25, 18, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let lhs = forward_fan(&x, &fg).unwrap().values().dot(yf.values());
            let rhs = x.values().dot(adjoint_fan(&yf, &fg, side, 1.0).unwrap().values());
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let side = 24;
        let g = FanGeometry::covering(side, 1.0, 60.0, 29, 20).unwrap();
        let x1 = random_image(side, &mut rng).cast::<f32>();
        let x2 = random_image(side, &mut rng).cast::<f32>();
        let alpha = 1.7f32;
        let combo = x1.with_values(x1.values().zip_map(x2.values(), |a, b| alpha * a + b).unwrap()).unwrap();
        let lhs = forward_fan(&combo, &g).unwrap();
        let p1 = forward_fan(&x1, &g).unwrap();
        let p2 = forward_fan(&x2, &g).unwrap();
        let rhs = p1.values().zip_map(p2.values(), |a, b| alpha * a + b).unwrap();
        let diff = lhs.values().zip_map(&rhs, |a, b| a - b).unwrap().norm();
        assert!(diff <= 1e-5 * rhs.norm());
    }

    #[test]
    fn rotating_phantom_shifts_parallel_views() {
        let side = 96;
        let blobs = [
            GaussianBlob { center: [10.0, -5.0], sigma: 6.0, amplitude: 0.02 },
            GaussianBlob { center: [-12.0, 14.0], sigma: 4.0, amplitude: 0.03 },
            GaussianBlob { center: [3.0, 20.0], sigma: 3.0, amplitude: 0.01 },
        ];
        let g = ParallelGeometry::covering(side, 1.0, 97, 36).unwrap();
        let dtheta = g.angle_spacing_rad();
        let (s, c) = dtheta.sin_cos();
        let rotated: Vec<_> = blobs
            .iter()
            .map(|b| GaussianBlob { center: [c * b.center[0] - s * b.center[1], s * b.center[0] + c * b.center[1]], ..*b })
            .collect();
        let y0 = forward_parallel(&gaussian_phantom::<f64>(side, 1.0, &blobs).unwrap(), &g).unwrap();
        let y1 = forward_parallel(&gaussian_phantom::<f64>(side, 1.0, &rotated).unwrap(), &g).unwrap();
        // rotating the object by dtheta moves view j's data to view j+1
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..g.n_detectors {
            for j in 0..g.n_views - 1 {
                let d = y1.values().get(i, j + 1) - y0.values().get(i, j);
                num += d * d;
                den += y0.values().get(i, j).powi(2);
            }
        }
        assert!((num / den).sqrt() <= 0.02, "rel L2 {}", (num / den).sqrt());
    }

    #[test]
    fn empty_mask_has_empty_trace() {
        let g = FanGeometry::covering(16, 1.0, 40.0, 21, 10).unwrap();
        let t = metal_trace(&MetalMask::empty(16), 1.0, &g).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.dims(), (21, 10));
    }

    #[test]
    fn centred_disc_trace_is_a_band() {
        let (side, r) = (64, 6.0);
        let g = FanGeometry::covering(side, 1.0, 160.0, 81, 24).unwrap();
        let m = MetalMask::disc(side, 1.0, [0.0, 0.0], r).unwrap();
        let t = metal_trace(&m, 1.0, &g).unwrap();
        for i in 0..g.n_detectors {
            let dist = (g.source_distance_mm * g.gamma(i).sin()).abs();
            for j in 0..g.n_views {
                if dist < r - 1.0 {
                    assert!(t.contains(i, j), "inner ray {i},{j} missing");
                }
                if dist > r + 1.5 {
                    assert!(!t.contains(i, j), "outer ray {i},{j} marked");
                }
            }
        }
    }

    #[test]
    fn off_centre_metal_traces_a_sinusoid() {
        let side = 64;
        let centre = [14.0, -9.0];
        let g = FanGeometry::covering(side, 1.0, 160.0, 81, 40).unwrap();
        let m = MetalMask::disc(side, 1.0, centre, 1.2).unwrap();
        let t = metal_trace(&m, 1.0, &g).unwrap();
        // brute force: distance from the metal centre to each ray's line
        for i in 0..g.n_detectors {
            let gamma = g.gamma(i);
            let s = g.source_distance_mm * gamma.sin();
            for j in 0..g.n_views {
                let theta = g.beta(j) + gamma;
                let dist = (centre[0] * theta.cos() + centre[1] * theta.sin() - s).abs();
                if dist < 0.5 {
                    assert!(t.contains(i, j));
                }
                if dist > 1.2 + 1.5 * std::f64::consts::SQRT_2 {
                    assert!(!t.contains(i, j));
                }
            }
        }
        // the band moves: not every view hits the same detectors
        let rows_of = |j: usize| (0..g.n_detectors).filter(|&i| t.contains(i, j)).collect::<Vec<_>>();
        assert_ne!(rows_of(0), rows_of(g.n_views / 4));
    }
}
