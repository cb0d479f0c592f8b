//! Fan-beam CT simulation, differentiable filtered back-projection and
//! metal artifact reduction.
//!
//! Images are [`ImageGrid`]s of linear attenuation in mm^-1; sinograms are
//! [`Sinogram`]s tagged with their fan or parallel geometry. Operators are
//! generic over `f32`/`f64` through [`Real`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod mar;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod ril;
pub mod simulate;
pub mod tensor;
pub mod verify;

pub use config::ScanConfig;
pub use error::{ErrorCategory, Result, TomoError};
pub use geometry::{FanGeometry, GridFrame, ImageGrid, ParallelGeometry, ScanSetup};
pub use mar::{LossBreakdown, SolveResult, SolverConfig};
pub use metrics::{MetricReport, Psnr};
pub use phantom::{EllipseSpec, MetalMask};
pub use projector::{MetalTrace, Projector, SinoGeometry, SinoKind, Sinogram};
pub use ril::RilPlan;
pub use simulate::{MarInstance, NoiseSpec, Spectrum};
pub use tensor::{BinaryMask, Real, Tensor2D};
