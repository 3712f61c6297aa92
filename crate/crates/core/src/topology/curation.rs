use serde::{Deserialize, Serialize};

use super::network::VesselNetwork;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurationAction {
    Remove,
    Restore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationEdit {
    pub action: CurationAction,
    pub element_id: usize,
}

impl CurationEdit {
    pub fn remove(element_id: usize) -> Self {
        Self { action: CurationAction::Remove, element_id }
    }

    pub fn restore(element_id: usize) -> Self {
        Self { action: CurationAction::Restore, element_id }
    }
}

/// Applies edits in order and returns a new network. Unknown ids fail before anything is
/// changed.
pub fn apply_curation(net: &VesselNetwork, edits: &[CurationEdit]) -> Result<VesselNetwork> {
    if let Some(bad) = edits.iter().find(|e| e.element_id >= net.elements.len()) {
        return Err(Error::UnknownElement(bad.element_id));
    }
    let mut out = net.clone();
    for edit in edits {
        out.elements[edit.element_id].curated_out = edit.action == CurationAction::Remove;
    }
    Ok(out)
}
