//! `sedimask baseline` — index-threshold water masks, no learning involved.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sedimask_core::baselines::{mndwi, otsu_threshold, select_threshold, ScoreMap, OTSU_DEFAULT_BINS};
use sedimask_core::raster::io;
use sedimask_core::{MaskKind, MaskPlane};

use crate::commands::print_summary;
use crate::dataset;
use crate::CliResult;

#[derive(clap::Args, Debug)]
pub struct BaselineArgs {
    /// Scene directory; "selected" also reads its water labels
    #[arg(long)]
    scenes: PathBuf,
    /// Output directory for the water masks (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// otsu: per-scene histogram threshold; selected: one threshold fitted
    /// to the water labels across all scenes
    #[arg(long, value_parser = ["otsu", "selected"], default_value = "otsu")]
    method: String,
}

pub fn run(args: &BaselineArgs) -> CliResult<()> {
    let manifest = dataset::load_manifest(&args.scenes)?;
    std::fs::create_dir_all(&args.out)?;

    let mut scores: Vec<(String, f32, ScoreMap)> = Vec::with_capacity(manifest.scenes.len());
    let mut labels: Vec<MaskPlane> = Vec::new();
    for entry in &manifest.scenes {
        let tile = io::load_tile(&dataset::tile_path(&args.scenes, &entry.id))?;
        if args.method == "selected" {
            let masks = io::load_masks(&dataset::masks_path(&args.scenes, &entry.id))?;
            labels.push(masks.get(MaskKind::Water).clone());
        }
        scores.push((entry.id.clone(), tile.pixel_size(), mndwi(&tile)));
    }

    let save = |id: &str, pixel_size: f32, mask: &MaskPlane| -> CliResult<()> {
        let plane = mask.to_f32_plane();
        io::save_planes(&dataset::water_path(&args.out, id), pixel_size, &[("water", &plane)])?;
        Ok(())
    };

    if args.method == "selected" {
        let maps: Vec<ScoreMap> = scores.iter().map(|(_, _, s)| s.clone()).collect();
        let threshold = select_threshold(&maps, &labels)?;
        for (id, pixel_size, score) in &scores {
            save(id, *pixel_size, &score.apply_threshold(threshold))?;
        }
        print_summary(&serde_json::json!({
            "command": "baseline",
            "method": "selected",
            "threshold": threshold,
            "scenes": scores.len(),
            "out": args.out,
        }));
    } else {
        let mut thresholds: BTreeMap<String, f64> = BTreeMap::new();
        for (id, pixel_size, score) in &scores {
            let threshold = otsu_threshold(score, OTSU_DEFAULT_BINS)?;
            save(id, *pixel_size, &score.apply_threshold(threshold))?;
            thresholds.insert(id.clone(), threshold);
        }
        print_summary(&serde_json::json!({
            "command": "baseline",
            "method": "otsu",
            "thresholds": thresholds,
            "scenes": scores.len(),
            "out": args.out,
        }));
    }
    Ok(())
}
