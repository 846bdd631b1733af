//! `sedimask predict` — run a checkpoint over every scene in a directory.

use std::path::PathBuf;

use sedimask_core::net::{predict_bundle, ModelBundle};
use sedimask_core::raster::io;

use crate::commands::{check_jobs, for_each_indexed, print_summary};
use crate::dataset;
use crate::CliResult;

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    /// Scene directory with input tiles
    #[arg(long)]
    scenes: PathBuf,
    /// Trained checkpoint (multi-task, or a full set of single-task models)
    #[arg(long)]
    model: PathBuf,
    /// Output directory for predicted mask sets (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Fan scenes across this many threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

pub fn run(args: &PredictArgs) -> CliResult<()> {
    check_jobs(args.jobs)?;
    let bundle = ModelBundle::load(&args.model)?;
    let manifest = dataset::load_manifest(&args.scenes)?;
    std::fs::create_dir_all(&args.out)?;

    for_each_indexed(manifest.scenes.len(), args.jobs, |i| {
        let id = &manifest.scenes[i].id;
        let tile = io::load_tile(&dataset::tile_path(&args.scenes, id))?;
        let masks = predict_bundle(&bundle, &tile)?;
        io::save_masks(&masks, tile.pixel_size(), &dataset::masks_path(&args.out, id))?;
        Ok(())
    })?;

    print_summary(&serde_json::json!({
        "command": "predict",
        "scenes": manifest.scenes.len(),
        "out": args.out,
    }));
    Ok(())
}
