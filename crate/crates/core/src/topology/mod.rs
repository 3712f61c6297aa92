//! Skeletonization, local thickness, network graph extraction and curation.

mod curation;
mod network;
mod skeleton;
mod thickness;

pub use curation::{apply_curation, CurationAction, CurationEdit};
pub use network::{extract_network, prune_spurs, smoothed_length, Element, ElementClass, Mesh, Node, VesselNetwork};
pub use skeleton::{skeletonize, Skeleton};
pub use thickness::{local_thickness, ThicknessMap};
