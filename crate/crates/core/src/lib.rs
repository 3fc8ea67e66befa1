//! Phase identification and quantification for optical micrographs of
//! cement clinker.
//!
//! The crate covers the whole chain from a micrograph to numbers and
//! meshes:
//!
//! - [`raster`]: images, per-pixel phase labels, masks and neighbourhoods.
//! - [`annotation`]: polygon/RLE conversions, labelme and COCO documents,
//!   train/test split planning.
//! - [`mow`]: the per-image window pipeline that samples a few labelled
//!   windows, builds neighbourhood features and trains a boosted-tree pixel
//!   classifier ([`gbdt`]).
//! - [`particles`]: particle extraction, size statistics, size-distribution
//!   curves and point counting.
//! - [`eval`]: pixel and instance precision/recall/F1 with IoU matching and
//!   the confidence threshold sweep.
//! - [`mesh`]: conforming Delaunay meshing of the phase map.
//! - [`synth`]: procedural microstructures for tests and demos.

pub mod annotation;
pub mod components;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod mesh;
pub mod mow;
pub mod particles;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{BBox, BinaryMask, LabelMap, PhaseLabel, RasterImage};
