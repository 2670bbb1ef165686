//! File formats: binary PLY scenes, PFM float maps, 8-bit PNGs, TUM
//! trajectories, and JSON intrinsics.

pub mod pfm;
pub mod ply;
pub mod png;
pub mod tum;

use std::path::Path;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k: CameraIntrinsics =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    k.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let text = serde_json::to_string_pretty(k).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}
