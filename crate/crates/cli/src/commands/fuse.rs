//! `sedimask fuse` — reduce five-plane mask sets to good-water planes.

use std::path::PathBuf;

use sedimask_core::fusion::{cloud_cover_filter, fuse_good_water};
use sedimask_core::raster::io;

use crate::commands::print_summary;
use crate::dataset;
use crate::CliResult;

#[derive(clap::Args, Debug)]
pub struct FuseArgs {
    /// Scene directory providing the valid-pixel planes (and the default
    /// mask sets)
    #[arg(long)]
    scenes: PathBuf,
    /// Read mask sets from this directory instead of the scene labels
    /// (e.g. a predict output directory)
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Output directory for good-water planes (created if missing)
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &FuseArgs) -> CliResult<()> {
    let manifest = dataset::load_manifest(&args.scenes)?;
    let masks_dir = args.masks.as_ref().unwrap_or(&args.scenes);
    std::fs::create_dir_all(&args.out)?;

    let mut fused: Vec<String> = Vec::new();
    let mut skipped_cloudy: Vec<String> = Vec::new();
    for entry in &manifest.scenes {
        let tile = io::load_tile(&dataset::tile_path(&args.scenes, &entry.id))?;
        let masks = io::load_masks(&dataset::masks_path(masks_dir, &entry.id))?;
        if !cloud_cover_filter(&masks, tile.valid())? {
            skipped_cloudy.push(entry.id.clone());
            continue;
        }
        let good = fuse_good_water(&masks, tile.valid())?;
        io::save_planes(
            &dataset::good_water_path(&args.out, &entry.id),
            tile.pixel_size(),
            &[("good_water", &good.to_f32_plane())],
        )?;
        fused.push(entry.id.clone());
    }

    print_summary(&serde_json::json!({
        "command": "fuse",
        "fused": fused,
        "skipped_cloudy": skipped_cloudy,
        "out": args.out,
    }));
    Ok(())
}
