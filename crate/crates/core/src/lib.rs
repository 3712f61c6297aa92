//! Quantification engine for en face angiography projection images.
//!
//! The analysis chain runs load, region selection, resampling, median filtering, Frangi
//! vesselness, binarization, thinning, local thickness, network extraction and metrics.

pub mod enhance;
pub mod error;
pub mod image;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod render;
pub mod segment;
pub mod topology;

pub use error::{Error, Result};
pub use image::{Calibration, GrayImage, RoiSpec};
pub use segment::{BinaryMask, SegmentationMethod};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/enhancement.md")]
    mod enhancement {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/repeatability.md")]
    mod repeatability {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/curation.md")]
    mod curation {}
    #[doc = include_str!("../../../book/src/server.md")]
    mod server {}
}
