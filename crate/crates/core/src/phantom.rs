//! Synthetic ellipse phantoms and metal masks.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::{fov_radius, GridFrame, ImageGrid, MU_WATER_PER_MM};
use crate::tensor::{BinaryMask, Real, Tensor2D};

pub const METAL_THRESHOLD_HU: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    /// `(u, v)` in mm.
    pub center: [f64; 2],
    /// Semi-axes `(a, b)` in mm.
    pub axes: [f64; 2],
    /// Counter-clockwise rotation of the `a` axis, radians.
    #[serde(default)]
    pub rotation: f64,
    /// Additive attenuation in mm^-1.
    #[serde(default)]
    pub value: f64,
}

impl EllipseSpec {
    pub fn disc(center: [f64; 2], radius: f64, value: f64) -> Self {
        EllipseSpec {
            center,
            axes: [radius, radius],
            rotation: 0.0,
            value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.axes[0] > 0.0 && self.axes[1] > 0.0) {
            return Err(TomoError::InvalidConfig(format!(
                "ellipse semi-axes must be positive, got {:?}",
                self.axes
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - self.center[0], v - self.center[1]);
        let (s, c) = self.rotation.sin_cos();
        let x = du * c + dv * s;
        let y = -du * s + dv * c;
        (x / self.axes[0]).powi(2) + (y / self.axes[1]).powi(2) <= 1.0
    }

    /// The same ellipse rotated about the origin by `angle`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let [u, v] = self.center;
        EllipseSpec {
            center: [u * c - v * s, u * s + v * c],
            rotation: self.rotation + angle,
            ..*self
        }
    }
}

/// Sum of ellipse values at each pixel centre.
pub fn ellipse_phantom<T: Real>(side: usize, spacing: f64, specs: &[EllipseSpec]) -> Result<ImageGrid<T>> {
    for s in specs {
        s.validate()?;
    }
    let frame = GridFrame::new(side, spacing);
    let values = Tensor2D::from_fn(side, side, |r, c| {
        let (u, v) = frame.center_of(r, c);
        T::lit(specs.iter().filter(|e| e.contains(u, v)).map(|e| e.value).sum())
    });
    ImageGrid::new(values, spacing)
}

/// Modified Shepp-Logan ellipses scaled to a FOV of radius `radius` mm, with
/// the outer ellipse at `mu_body` (mm^-1).
pub fn shepp_logan_specs(radius: f64, mu_body: f64) -> Vec<EllipseSpec> {
    // (value, a, b, u0, v0, phi deg) on the unit disc
    const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    // keep the body strictly inside the FOV circle
    let scale = 0.95 * radius;
    TABLE
        .iter()
        .map(|&(val, a, b, u, v, phi)| EllipseSpec {
            center: [u * scale, v * scale],
            axes: [a * scale, b * scale],
            rotation: phi.to_radians(),
            value: val * mu_body,
        })
        .collect()
}

/// A centred, isotropic Gaussian bump used for smooth test objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlob {
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
}

pub fn gaussian_phantom<T: Real>(side: usize, spacing: f64, blobs: &[GaussianBlob]) -> Result<ImageGrid<T>> {
    let frame = GridFrame::new(side, spacing);
    let values = Tensor2D::from_fn(side, side, |r, c| {
        let (u, v) = frame.center_of(r, c);
        let s: f64 = blobs
            .iter()
            .map(|b| {
                let d2 = (u - b.center[0]).powi(2) + (v - b.center[1]).powi(2);
                b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum();
        T::lit(s)
    });
    ImageGrid::new(values, spacing)
}

/// Binary implant support in image space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetalMask(BinaryMask);

impl MetalMask {
    pub fn new(mask: BinaryMask) -> Result<Self> {
        if mask.rows() != mask.cols() {
            return Err(TomoError::dims("metal mask must be square"));
        }
        Ok(MetalMask(mask))
    }

    pub fn empty(side: usize) -> Self {
        MetalMask(BinaryMask::empty(side, side))
    }

    pub fn from_ellipses(side: usize, spacing: f64, specs: &[EllipseSpec]) -> Result<Self> {
        for s in specs {
            s.validate()?;
        }
        let frame = GridFrame::new(side, spacing);
        Ok(MetalMask(BinaryMask::from_fn(side, side, |r, c| {
            let (u, v) = frame.center_of(r, c);
            specs.iter().any(|e| e.contains(u, v))
        })))
    }

    pub fn disc(side: usize, spacing: f64, center: [f64; 2], radius: f64) -> Result<Self> {
        Self::from_ellipses(side, spacing, &[EllipseSpec::disc(center, radius, 1.0)])
    }

    pub fn side(&self) -> usize {
        self.0.rows()
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn pixel_count(&self) -> usize {
        self.0.count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_image<T: Real>(&self, spacing: f64) -> ImageGrid<T> {
        ImageGrid::new(self.0.to_tensor(), spacing).expect("square mask")
    }

    /// Nearest-neighbour upsampling by `k`; the result lives on a grid of
    /// `side * k` pixels at `spacing / k` and covers the same physical area.
    pub fn supersample(&self, k: usize) -> MetalMask {
        let side = self.side();
        MetalMask(BinaryMask::from_fn(side * k, side * k, |r, c| self.0.get(r / k, c / k)))
    }
}

/// Replaces `x` by `mu_metal_ref` inside the mask.
pub fn insert_metal<T: Real>(x: &ImageGrid<T>, m: &MetalMask, mu_metal_ref: f64) -> Result<ImageGrid<T>> {
    if m.side() != x.side() {
        return Err(TomoError::dims(format!(
            "mask side {} vs image side {}",
            m.side(),
            x.side()
        )));
    }
    let mu = T::lit(mu_metal_ref);
    let mut out = x.clone();
    for (v, &inside) in out.values_mut().as_mut_slice().iter_mut().zip(m.mask().as_slice()) {
        if inside {
            *v = mu;
        }
    }
    Ok(out)
}

/// Thresholds an HU image: metal where `value >= threshold_hu`.
pub fn segment_metal<T: Real>(x_hu: &ImageGrid<T>, threshold_hu: f64) -> MetalMask {
    let t = x_hu.values();
    MetalMask(BinaryMask::from_fn(t.rows(), t.cols(), |r, c| {
        t.get(r, c).f64() >= threshold_hu
    }))
}

/// Water-filled body disc filling 90% of the FOV; a simple stand-in patient.
pub fn water_body<T: Real>(side: usize, spacing: f64) -> Result<ImageGrid<T>> {
    let r = 0.9 * fov_radius(side, spacing);
    ellipse_phantom(side, spacing, &[EllipseSpec::disc([0.0, 0.0], r, MU_WATER_PER_MM)])
}
