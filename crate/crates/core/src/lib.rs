//! Whole-slide image tiling with confidence-weighted blending, HSV value
//! mapping losses, and the supporting metrics and patch-transform plumbing.

pub mod backends;
pub mod colorspace;
pub mod error;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod patchgrid;
pub mod pipeline;
pub mod protocol;
pub mod tiling;

pub use error::{Error, Result};
pub use image::{Plane, PlanarImage};
pub use patchgrid::{GridSpec, Origin, PatchRecord};
pub use tiling::{TiledOutput, WeightMatrix};
