//! Raster images, binary masks, and the pixel operations shared by every
//! other module.

mod composite;
mod edges;
pub mod filter;
pub mod io;
mod mask;
pub mod morph;
mod raster;
mod resize;

pub use composite::composite;
pub use edges::{edge_detect, EdgeConfig};
pub use mask::{BinaryMask, BoundingBox};
pub use morph::{dilate, distort_mask};
pub use raster::RasterImage;
pub use resize::{Resize, ResizeMode};
