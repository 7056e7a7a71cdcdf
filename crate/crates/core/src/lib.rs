//! Two-stage organ localization and organ-wise segmentation for 3D volumes.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical piece of
//! the pipeline: the volume model with resampling, normalization and ROI
//! cropping; ellipsoid phantoms; Gaussian centroid heatmaps with their L2
//! objective; a small 3D convolutional network trained with Adam; heatmap to
//! bounding-box localization; the cross-entropy + Dice segmentation objective;
//! label fusion; and Dice scoring. File formats and the CLI live in the
//! `organloc` crate.
//!
//! Voxel data is always linearized x-fastest: `index = x + y*w + z*w*h` where
//! `dims = [w, h, d]` are the voxel counts along x, y and z.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
mod math;

pub mod aggregation;
pub mod heatmap;
pub mod localization;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod rng;
pub mod segmentation;
pub mod volume;

pub use error::{Error, Result};
pub use heatmap::HeatmapStack;
pub use localization::{LocalizationResult, OrganStats};
pub use volume::{BoundingBox, Grid, LabelMap, Mask, Volume, Volume3D, VolumeKind};

/// Gaussian variance in mm² used for ground-truth centroid heatmaps.
pub const DEFAULT_SIGMA_SQ: f64 = 150.0;
/// Heatmap threshold below which an organ is considered absent.
pub const DEFAULT_TAU: f64 = 0.1;
/// Localization grid spacing in mm.
pub const LOCALIZATION_SPACING_MM: f64 = 3.0;
/// Segmentation grid spacing in mm.
pub const SEGMENTATION_SPACING_MM: f64 = 1.0;
/// Default number of voxels added to each face of a predicted box.
pub const DEFAULT_MARGIN_V: usize = 3;
/// Fill value for out-of-bounds crop voxels (air, in Hounsfield units).
pub const DEFAULT_PAD_VALUE: f64 = -1024.0;
