//! `sedimask gen` — write a directory of synthetic scenes.

use std::path::PathBuf;

use serde::Serialize;

use sedimask_core::raster::{io, synth};
use sedimask_core::ssc::{save_ssc_csv, SscCsvRow};
use sedimask_core::SceneConfig;

use crate::commands::{load_config_file, print_summary, section};
use crate::dataset::{self, Manifest, SceneEntry};
use crate::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct GenArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes; scene i is generated with seed --seed + i
    #[arg(long)]
    n: Option<usize>,
    /// Base seed (overrides the config file's "scene" section)
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file; the "scene" section overrides generator defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    water_fraction: Option<f64>,
    #[arg(long)]
    cloud_fraction: Option<f64>,
    #[arg(long)]
    cloud_shadow_fraction: Option<f64>,
    #[arg(long)]
    snow_fraction: Option<f64>,
    #[arg(long)]
    noise_amplitude: Option<f64>,
    #[arg(long)]
    invalid_border_fraction: Option<f64>,
    #[arg(long)]
    relief_m: Option<f64>,
    #[arg(long)]
    blob_scale_px: Option<f64>,
    /// Sediment ground-truth samples per scene
    #[arg(long)]
    ssc_samples: Option<usize>,
    #[arg(long)]
    latitude: Option<f64>,
    #[arg(long)]
    longitude: Option<f64>,
    /// Acquisition time, RFC 3339 UTC
    #[arg(long)]
    timestamp_utc: Option<String>,
    /// Print the effective configuration and exit without writing
    #[arg(long)]
    show_config: bool,
}

#[derive(Serialize)]
struct Effective<'a> {
    command: &'static str,
    n: usize,
    out: &'a PathBuf,
    scene: &'a SceneConfig,
}

fn effective_config(args: &GenArgs) -> CliResult<(SceneConfig, usize)> {
    let file = args.config.as_deref().map(load_config_file).transpose()?;
    let mut scene = section(file.as_ref(), "scene", SceneConfig::default())?;
    if let Some(v) = args.seed {
        scene.seed = v;
    }
    if let Some(v) = args.width {
        scene.width = v;
    }
    if let Some(v) = args.height {
        scene.height = v;
    }
    if let Some(v) = args.water_fraction {
        scene.water_fraction = v;
    }
    if let Some(v) = args.cloud_fraction {
        scene.cloud_fraction = v;
    }
    if let Some(v) = args.cloud_shadow_fraction {
        scene.cloud_shadow_fraction = v;
    }
    if let Some(v) = args.snow_fraction {
        scene.snow_fraction = v;
    }
    if let Some(v) = args.noise_amplitude {
        scene.noise_amplitude = v;
    }
    if let Some(v) = args.invalid_border_fraction {
        scene.invalid_border_fraction = v;
    }
    if let Some(v) = args.relief_m {
        scene.relief_m = v;
    }
    if let Some(v) = args.blob_scale_px {
        scene.blob_scale_px = v;
    }
    if let Some(v) = args.ssc_samples {
        scene.ssc_samples = v;
    }
    if let Some(v) = args.latitude {
        scene.latitude = v;
    }
    if let Some(v) = args.longitude {
        scene.longitude = v;
    }
    if let Some(v) = &args.timestamp_utc {
        scene.timestamp_utc = v.clone();
    }
    Ok((scene, args.n.unwrap_or(4)))
}

pub fn run(args: &GenArgs) -> CliResult<()> {
    let (scene, n) = effective_config(args)?;
    if args.show_config {
        let shown = Effective { command: "gen", n, out: &args.out, scene: &scene };
        println!("{}", serde_json::to_string_pretty(&shown).expect("config serializes"));
        return Ok(());
    }
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    scene.validate()?;
    std::fs::create_dir_all(&args.out)?;

    let mut manifest = Manifest { scenes: Vec::with_capacity(n) };
    let mut ssc_rows: Vec<SscCsvRow> = Vec::new();
    for i in 0..n {
        let mut config = scene.clone();
        config.seed = scene.seed.wrapping_add(i as u64);
        let id = dataset::scene_id(i);
        let (tile, masks, dem, samples) = synth::generate_scene(&config)?;
        io::save_tile(&tile, &dataset::tile_path(&args.out, &id))?;
        io::save_masks(&masks, tile.pixel_size(), &dataset::masks_path(&args.out, &id))?;
        io::save_dem(&dem, &dataset::dem_path(&args.out, &id))?;
        ssc_rows.extend(samples.iter().map(|s| SscCsvRow {
            x: s.x,
            y: s.y,
            ssc_mg_per_l: s.ssc_mg_per_l,
            scene_id: id.clone(),
        }));
        manifest.scenes.push(SceneEntry { id, config });
    }
    save_ssc_csv(&dataset::ssc_path(&args.out), &ssc_rows)?;
    dataset::save_manifest(&args.out, &manifest)?;

    print_summary(&serde_json::json!({
        "command": "gen",
        "scenes": n,
        "ssc_rows": ssc_rows.len(),
        "out": args.out,
    }));
    Ok(())
}
