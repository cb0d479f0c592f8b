//! Acquisition geometries and the image grid they act on.
//!
//! Coordinates are in millimetres with the rotation centre at the origin.
//! Pixel `(r, c)` of a `side x side` grid has its centre at
//! `u = (c - (side-1)/2) * spacing`, `v = ((side-1)/2 - r) * spacing`.
//!
//! Fan convention ("source_on_circle_ccw_from_top"): at view angle `beta` the
//! source sits at `D * (-sin beta, cos beta)`. The ray leaving it at fan angle
//! `gamma` is then exactly the parallel ray `t = D sin gamma`,
//! `theta = beta + gamma`, where the parallel ray `(t, theta)` is the line
//! `u cos theta + v sin theta = t`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::tensor::{BinaryMask, Real, Tensor2D};

pub const SOURCE_CONVENTION: &str = "source_on_circle_ccw_from_top";

/// Source-to-isocentre distance used by the reference protocol (39.7 cm).
pub const DEFAULT_SOURCE_DISTANCE_MM: f64 = 397.0;
pub const DEFAULT_N_VIEWS: usize = 320;
pub const DEFAULT_N_DETECTORS: usize = 321;
pub const DEFAULT_IMAGE_SIDE: usize = 416;
pub const DEFAULT_PHOTONS: f64 = 2.0e7;
pub const DEFAULT_PIXEL_SPACING_MM: f64 = 1.0;

/// Linear attenuation of water near 70 keV, in mm^-1.
pub const MU_WATER_PER_MM: f64 = 0.0192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanGeometry {
    pub source_distance_mm: f64,
    pub n_detectors: usize,
    /// Angular pitch of the arc detector.
    pub detector_spacing_rad: f64,
    pub n_views: usize,
}

impl FanGeometry {
    pub fn new(
        source_distance_mm: f64,
        n_detectors: usize,
        detector_spacing_rad: f64,
        n_views: usize,
    ) -> Result<Self> {
        let g = FanGeometry {
            source_distance_mm,
            n_detectors,
            detector_spacing_rad,
            n_views,
        };
        g.validate()?;
        Ok(g)
    }

    /// Fan whose outermost rays are tangent to the FOV circle of a
    /// `side x side` grid: `gamma_max = asin(R / D)`, `R = side/2 * spacing`.
    pub fn covering(
        side: usize,
        pixel_spacing_mm: f64,
        source_distance_mm: f64,
        n_detectors: usize,
        n_views: usize,
    ) -> Result<Self> {
        let radius = fov_radius(side, pixel_spacing_mm);
        if !(source_distance_mm > radius) {
            return Err(TomoError::InvalidGeometry(format!(
                "source distance {source_distance_mm} mm must exceed FOV radius {radius} mm"
            )));
        }
        if n_detectors < 2 {
            return Err(TomoError::InvalidGeometry("need at least 2 detectors".into()));
        }
        let gamma_max = (radius / source_distance_mm).asin();
        Self::new(
            source_distance_mm,
            n_detectors,
            2.0 * gamma_max / (n_detectors - 1) as f64,
            n_views,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_distance_mm > 0.0) || !self.source_distance_mm.is_finite() {
            return Err(TomoError::InvalidGeometry("source distance must be > 0".into()));
        }
        if !(self.detector_spacing_rad > 0.0) {
            return Err(TomoError::InvalidGeometry("detector spacing must be > 0".into()));
        }
        if self.n_detectors == 0 || self.n_views == 0 {
            return Err(TomoError::InvalidGeometry("empty detector or view set".into()));
        }
        if self.gamma_max() >= PI / 2.0 {
            return Err(TomoError::InvalidGeometry("fan half-angle must be below 90 degrees".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn gamma(&self, i: usize) -> f64 {
        (i as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing_rad
    }

    #[inline]
    pub fn beta(&self, j: usize) -> f64 {
        j as f64 * self.view_spacing_rad()
    }

    pub fn view_spacing_rad(&self) -> f64 {
        2.0 * PI / self.n_views as f64
    }

    pub fn gamma_max(&self) -> f64 {
        (self.n_detectors as f64 - 1.0) / 2.0 * self.detector_spacing_rad
    }

    /// Largest distance from the origin reached by any ray, `D sin gamma_max`.
    pub fn covered_radius(&self) -> f64 {
        self.source_distance_mm * self.gamma_max().sin()
    }

    /// Errors unless the fan reaches every point of the FOV circle.
    pub fn check_covers(&self, radius: f64) -> Result<()> {
        let covered = self.covered_radius();
        if covered < radius * (1.0 - 1e-9) || self.source_distance_mm <= radius {
            return Err(TomoError::FovViolation { covered, radius });
        }
        Ok(())
    }

    /// Parallel grid spanning `[-D sin gamma_max, D sin gamma_max]` with the
    /// same detector count and `n_views` angles over `[0, pi)`.
    pub fn parallel_counterpart(&self, n_views: usize) -> ParallelGeometry {
        let n = self.n_detectors;
        let dt = if n > 1 {
            2.0 * self.covered_radius() / (n - 1) as f64
        } else {
            self.covered_radius().max(f64::MIN_POSITIVE)
        };
        ParallelGeometry {
            n_detectors: n,
            detector_spacing_mm: dt,
            n_views,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelGeometry {
    pub n_detectors: usize,
    pub detector_spacing_mm: f64,
    /// Angles are `j * pi / n_views`.
    pub n_views: usize,
}

impl ParallelGeometry {
    pub fn new(n_detectors: usize, detector_spacing_mm: f64, n_views: usize) -> Result<Self> {
        let g = ParallelGeometry {
            n_detectors,
            detector_spacing_mm,
            n_views,
        };
        g.validate()?;
        Ok(g)
    }

    /// Detector grid covering the FOV of a `side x side` grid.
    pub fn covering(side: usize, pixel_spacing_mm: f64, n_detectors: usize, n_views: usize) -> Result<Self> {
        if n_detectors < 2 {
            return Err(TomoError::InvalidGeometry("need at least 2 detectors".into()));
        }
        let radius = fov_radius(side, pixel_spacing_mm);
        Self::new(n_detectors, 2.0 * radius / (n_detectors - 1) as f64, n_views)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detector_spacing_mm > 0.0) {
            return Err(TomoError::InvalidGeometry("detector spacing must be > 0".into()));
        }
        if self.n_detectors == 0 || self.n_views == 0 {
            return Err(TomoError::InvalidGeometry("empty detector or view set".into()));
        }
        Ok(())
    }

    pub fn angle_spacing_rad(&self) -> f64 {
        PI / self.n_views as f64
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.angle_spacing_rad()
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        (i as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing_mm
    }

    /// Fractional detector index of offset `t`.
    #[inline]
    pub fn detector_index(&self, t: f64) -> f64 {
        t / self.detector_spacing_mm + (self.n_detectors as f64 - 1.0) / 2.0
    }
}

pub fn fov_radius(side: usize, pixel_spacing_mm: f64) -> f64 {
    side as f64 / 2.0 * pixel_spacing_mm
}

/// Square attenuation map (mm^-1) with physical pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    spacing: f64,
    values: Tensor2D<T>,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(values: Tensor2D<T>, pixel_spacing_mm: f64) -> Result<Self> {
        if values.rows() != values.cols() || values.rows() == 0 {
            return Err(TomoError::dims(format!(
                "image grid must be square and non-empty, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !(pixel_spacing_mm > 0.0) {
            return Err(TomoError::InvalidGeometry("pixel spacing must be > 0".into()));
        }
        Ok(ImageGrid {
            spacing: pixel_spacing_mm,
            values,
        })
    }

    pub fn zeros(side: usize, pixel_spacing_mm: f64) -> Result<Self> {
        Self::new(Tensor2D::zeros(side, side), pixel_spacing_mm)
    }

    pub fn side(&self) -> usize {
        self.values.rows()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
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

    pub fn frame(&self) -> GridFrame {
        GridFrame::new(self.side(), self.spacing)
    }

    pub fn fov_radius(&self) -> f64 {
        fov_radius(self.side(), self.spacing)
    }

    pub fn with_values(&self, values: Tensor2D<T>) -> Result<Self> {
        self.values.check_same_dims(&values)?;
        Ok(ImageGrid {
            spacing: self.spacing,
            values,
        })
    }

    pub fn check_same_grid(&self, other: &ImageGrid<T>) -> Result<()> {
        if self.side() != other.side() || self.spacing != other.spacing {
            return Err(TomoError::dims(format!(
                "grid {}@{}mm vs {}@{}mm",
                self.side(),
                self.spacing,
                other.side(),
                other.spacing
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ImageGrid<U> {
        ImageGrid {
            spacing: self.spacing,
            values: self.values.cast(),
        }
    }

    /// Pixels whose value falls below `-tolerance`; reconstruction ringing
    /// produces a few, anything beyond 10% of water is suspicious.
    pub fn count_negative(&self, tolerance: f64) -> usize {
        self.values
            .as_slice()
            .iter()
            .filter(|v| v.f64() < -tolerance)
            .count()
    }
}

/// Index/coordinate bookkeeping for a square grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub side: usize,
    pub spacing: f64,
    half: f64,
}

impl GridFrame {
    pub fn new(side: usize, spacing: f64) -> Self {
        GridFrame {
            side,
            spacing,
            half: (side as f64 - 1.0) / 2.0,
        }
    }

    #[inline]
    pub fn center_of(&self, r: usize, c: usize) -> (f64, f64) {
        (
            (c as f64 - self.half) * self.spacing,
            (self.half - r as f64) * self.spacing,
        )
    }

    /// Fractional `(row, col)` of a physical point.
    #[inline]
    pub fn index_of(&self, u: f64, v: f64) -> (f64, f64) {
        (self.half - v / self.spacing, u / self.spacing + self.half)
    }

    pub fn fov_radius(&self) -> f64 {
        fov_radius(self.side, self.spacing)
    }

    #[inline]
    pub fn in_fov(&self, r: usize, c: usize) -> bool {
        let (u, v) = self.center_of(r, c);
        let rad = self.fov_radius();
        u * u + v * v <= rad * rad
    }

    pub fn fov_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.side, self.side, |r, c| self.in_fov(r, c))
    }
}

/// The reference acquisition protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSetup {
    pub fan: FanGeometry,
    pub parallel: ParallelGeometry,
    pub side: usize,
    pub pixel_spacing_mm: f64,
    pub photons: f64,
}

/// D = 397 mm, 320 views over a full turn, 321 detectors, 416x416 images,
/// 2e7 incident photons. The arc pitch is chosen so the fan exactly covers
/// the FOV circle at 1 mm pixels.
pub fn default_geometry() -> ScanSetup {
    scaled_geometry(DEFAULT_IMAGE_SIDE, DEFAULT_PIXEL_SPACING_MM)
}

/// Reference protocol with a different image grid; the fan is re-fitted to
/// the new FOV.
pub fn scaled_geometry(side: usize, pixel_spacing_mm: f64) -> ScanSetup {
    let fan = FanGeometry::covering(
        side,
        pixel_spacing_mm,
        DEFAULT_SOURCE_DISTANCE_MM,
        DEFAULT_N_DETECTORS,
        DEFAULT_N_VIEWS,
    )
    .expect("reference geometry is valid");
    ScanSetup {
        fan,
        parallel: fan.parallel_counterpart(DEFAULT_N_VIEWS),
        side,
        pixel_spacing_mm,
        photons: DEFAULT_PHOTONS,
    }
}

pub fn hu_to_mu(hu: f64, mu_water: f64) -> f64 {
    mu_water * (1.0 + hu / 1000.0)
}

pub fn mu_to_hu(mu: f64, mu_water: f64) -> f64 {
    1000.0 * (mu - mu_water) / mu_water
}

pub fn image_to_hu<T: Real>(x: &ImageGrid<T>, mu_water: f64) -> ImageGrid<T> {
    ImageGrid {
        spacing: x.spacing,
        values: x.values.map(|v| T::lit(mu_to_hu(v.f64(), mu_water))),
    }
}

pub fn image_to_mu<T: Real>(x_hu: &ImageGrid<T>, mu_water: f64) -> ImageGrid<T> {
    ImageGrid {
        spacing: x_hu.spacing,
        values: x_hu.values.map(|v| T::lit(hu_to_mu(v.f64(), mu_water))),
    }
}
