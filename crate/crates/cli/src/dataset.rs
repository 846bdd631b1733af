//! On-disk layout of a scene directory.
//!
//! A dataset directory holds one file triplet per scene plus two shared
//! files:
//!
//! ```text
//! d/
//!   manifest.json            scene ids + the exact generator config of each
//!   ssc.csv                  sediment ground truth, all scenes, scene_id column
//!   scene_0000.tile.mtile    six-band reflectance + valid mask
//!   scene_0000.masks.mtile   five label planes
//!   scene_0000.dem.mtile     terrain heights
//!   ...
//! ```
//!
//! Derived products written by other subcommands reuse the same ids with
//! their own suffixes (`.water.mtile` for baseline masks, `.good_water.mtile`
//! for fused pixels), so a prediction directory can be evaluated against the
//! truth directory by id alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sedimask_core::ssc::SscCsvRow;
use sedimask_core::{Error, Result, SceneConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SSC_FILE: &str = "ssc.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scenes: Vec<SceneEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub config: SceneConfig,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn tile_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.tile.mtile"))
}

pub fn masks_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.masks.mtile"))
}

pub fn dem_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.dem.mtile"))
}

pub fn water_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.water.mtile"))
}

pub fn good_water_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.good_water.mtile"))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn ssc_path(dir: &Path) -> PathBuf {
    dir.join(SSC_FILE)
}

/// Pretty-printed with a trailing newline; field order is fixed by the
/// struct, so identical inputs produce identical bytes.
pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::BadInput(format!("manifest serialization failed: {e}")))?;
    std::fs::write(manifest_path(dir), body + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    let body = std::fs::read_to_string(&path)?;
    let manifest: Manifest = serde_json::from_str(&body)
        .map_err(|e| Error::BadInput(format!("{}: {e}", path.display())))?;
    if manifest.scenes.is_empty() {
        return Err(Error::BadInput(format!("{}: no scenes listed", path.display())));
    }
    Ok(manifest)
}

pub fn load_ssc_rows(dir: &Path) -> Result<Vec<SscCsvRow>> {
    sedimask_core::ssc::load_ssc_csv(&ssc_path(dir))
}

/// Rows belonging to one scene, in file order.
pub fn rows_for<'a>(rows: &'a [SscCsvRow], id: &str) -> Vec<&'a SscCsvRow> {
    rows.iter().filter(|r| r.scene_id == id).collect()
}
