//! JSON scan description shared by the command-line tools and bindings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::{
    FanGeometry, ImageGrid, DEFAULT_PIXEL_SPACING_MM, DEFAULT_IMAGE_SIDE, DEFAULT_N_DETECTORS, DEFAULT_N_VIEWS,
    DEFAULT_PHOTONS, DEFAULT_SOURCE_DISTANCE_MM, SOURCE_CONVENTION,
};
use crate::phantom::{ellipse_phantom, EllipseSpec, MetalMask};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetalConfig {
    #[serde(default)]
    pub ellipses: Vec<EllipseSpec>,
}

fn d_source() -> f64 {
    DEFAULT_SOURCE_DISTANCE_MM
}
fn d_n_det() -> usize {
    DEFAULT_N_DETECTORS
}
fn d_n_views() -> usize {
    DEFAULT_N_VIEWS
}
fn d_side() -> usize {
    DEFAULT_IMAGE_SIDE
}
fn d_spacing() -> f64 {
    DEFAULT_PIXEL_SPACING_MM
}
fn d_photons() -> f64 {
    DEFAULT_PHOTONS
}
fn d_convention() -> String {
    SOURCE_CONVENTION.to_string()
}

/// Geometry plus optional phantom content. Every field has a default, so
/// `{}` describes the reference 416-pixel protocol with an empty phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "d_source")]
    pub source_distance_mm: f64,
    #[serde(default = "d_n_det")]
    pub n_detectors: usize,
    /// Derived from the FOV-covering rule when absent.
    #[serde(default)]
    pub detector_spacing_rad: Option<f64>,
    #[serde(default = "d_n_views")]
    pub n_views: usize,
    #[serde(default = "d_side")]
    pub side: usize,
    #[serde(default = "d_spacing")]
    pub pixel_spacing_mm: f64,
    #[serde(default = "d_photons")]
    pub photons: f64,
    #[serde(default = "d_convention")]
    pub convention: String,
    #[serde(default)]
    pub ellipses: Vec<EllipseSpec>,
    #[serde(default)]
    pub metal: Option<MetalConfig>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ScanConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScanConfig = serde_json::from_str(text).map_err(|e| TomoError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.convention != SOURCE_CONVENTION {
            return Err(TomoError::InvalidConfig(format!(
                "unsupported convention \"{}\", expected \"{SOURCE_CONVENTION}\"",
                self.convention
            )));
        }
        if self.side == 0 || !(self.pixel_spacing_mm > 0.0) {
            return Err(TomoError::InvalidGeometry("image side and pixel spacing must be positive".into()));
        }
        if !(self.photons > 0.0) {
            return Err(TomoError::InvalidConfig("photons must be positive".into()));
        }
        for e in self.ellipses.iter().chain(self.metal.iter().flat_map(|m| &m.ellipses)) {
            e.validate()?;
        }
        self.fan_geometry().map(|_| ())
    }

    pub fn fan_geometry(&self) -> Result<FanGeometry> {
        let g = match self.detector_spacing_rad {
            Some(dg) => FanGeometry::new(self.source_distance_mm, self.n_detectors, dg, self.n_views)?,
            None => FanGeometry::covering(
                self.side,
                self.pixel_spacing_mm,
                self.source_distance_mm,
                self.n_detectors,
                self.n_views,
            )?,
        };
        g.check_covers(crate::geometry::fov_radius(self.side, self.pixel_spacing_mm))?;
        Ok(g)
    }

    pub fn phantom<T: Real>(&self) -> Result<ImageGrid<T>> {
        ellipse_phantom(self.side, self.pixel_spacing_mm, &self.ellipses)
    }

    pub fn metal_mask(&self) -> Result<MetalMask> {
        match &self.metal {
            Some(m) => MetalMask::from_ellipses(self.side, self.pixel_spacing_mm, &m.ellipses),
            None => Ok(MetalMask::empty(self.side)),
        }
    }
}
