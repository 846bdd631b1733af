//! `sedimask ssc fit|predict|eval` — the sediment-concentration ensemble.
//!
//! All three subcommands walk a scene directory the same way: fuse each
//! scene's masks into a good-water plane, then extract the 30-feature
//! window vector at every row of its `ssc.csv`. Rows whose window holds no
//! good pixels are skipped and counted, not fatal — a cloudy scene should
//! cost coverage, not the whole run.

use std::path::{Path, PathBuf};

use serde::Serialize;

use sedimask_core::fusion::{extract_features, fuse_good_water};
use sedimask_core::metrics::regression_metrics;
use sedimask_core::net::TrainConfig;
use sedimask_core::raster::io;
use sedimask_core::ssc::{default_fit_config, fit_ensemble, save_ssc_csv, SscCsvRow, SscEnsemble, SscRecord};
use sedimask_core::Error;

use crate::commands::{load_config_file, print_summary, section, write_json_pretty};
use crate::dataset;
use crate::CliResult;

#[derive(clap::Subcommand, Debug)]
pub enum SscCmd {
    /// Fit the two-range ensemble and its blending thresholds
    Fit(FitArgs),
    /// Predict concentrations at every ground-truth location
    Predict(PredictArgs),
    /// Score predictions against the ground truth
    Eval(EvalArgs),
}

#[derive(clap::Args, Debug)]
pub struct FitArgs {
    /// Training scene directory
    #[arg(long)]
    scenes: PathBuf,
    /// Validation scene directory (threshold search target)
    #[arg(long)]
    val_scenes: PathBuf,
    /// Mask sets for the training scenes (default: their labels)
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Mask sets for the validation scenes (default: their labels)
    #[arg(long)]
    val_masks: Option<PathBuf>,
    /// Ensemble checkpoint file to write
    #[arg(long)]
    out: PathBuf,
    /// JSON config file; the "ssc" section overrides fit defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective configuration and exit without fitting
    #[arg(long)]
    show_config: bool,
}

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    /// Scene directory whose ssc.csv provides the locations
    #[arg(long)]
    scenes: PathBuf,
    /// Mask sets to fuse (default: the scene labels)
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Fitted ensemble checkpoint
    #[arg(long)]
    ensemble: PathBuf,
    /// CSV file to write (x, y, predicted concentration, scene_id)
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Scene directory whose ssc.csv provides locations and truth
    #[arg(long)]
    scenes: PathBuf,
    /// Mask sets to fuse (default: the scene labels)
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Fitted ensemble checkpoint
    #[arg(long)]
    ensemble: PathBuf,
    /// Report file; omitted, the report prints to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: &SscCmd) -> CliResult<()> {
    match cmd {
        SscCmd::Fit(args) => fit(args),
        SscCmd::Predict(args) => predict(args),
        SscCmd::Eval(args) => eval(args),
    }
}

/// Feature records for every usable ground-truth row of a directory,
/// tagged with their scene id. Returns the skipped-row count alongside.
fn collect_records(
    scenes: &Path,
    masks_dir: Option<&Path>,
) -> CliResult<(Vec<(String, SscRecord)>, usize)> {
    let manifest = dataset::load_manifest(scenes)?;
    let rows = dataset::load_ssc_rows(scenes)?;
    let masks_dir = masks_dir.unwrap_or(scenes);
    let mut records = Vec::with_capacity(rows.len());
    let mut skipped = 0usize;
    for entry in &manifest.scenes {
        let scene_rows = dataset::rows_for(&rows, &entry.id);
        if scene_rows.is_empty() {
            continue;
        }
        let tile = io::load_tile(&dataset::tile_path(scenes, &entry.id))?;
        let masks = io::load_masks(&dataset::masks_path(masks_dir, &entry.id))?;
        let good = fuse_good_water(&masks, tile.valid())?;
        for row in scene_rows {
            match extract_features(&tile, &good, row.x, row.y) {
                Ok(features) => records.push((
                    entry.id.clone(),
                    SscRecord::new(row.x, row.y, row.ssc_mg_per_l, features.to_vec())?,
                )),
                Err(Error::Degenerate(_)) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Degenerate(format!(
            "no usable ground-truth rows in {} ({} skipped for empty windows)",
            scenes.display(),
            skipped
        ))
        .into());
    }
    Ok((records, skipped))
}

#[derive(Serialize)]
struct EffectiveFit<'a> {
    command: &'static str,
    ssc: &'a TrainConfig,
}

fn fit(args: &FitArgs) -> CliResult<()> {
    let file = args.config.as_deref().map(load_config_file).transpose()?;
    let mut cfg = section(file.as_ref(), "ssc", default_fit_config())?;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.clip_norm {
        cfg.clip_norm = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.show_config {
        let shown = EffectiveFit { command: "ssc fit", ssc: &cfg };
        println!("{}", serde_json::to_string_pretty(&shown).expect("config serializes"));
        return Ok(());
    }

    let (train_tagged, train_skipped) = collect_records(&args.scenes, args.masks.as_deref())?;
    let (val_tagged, val_skipped) = collect_records(&args.val_scenes, args.val_masks.as_deref())?;
    let train: Vec<SscRecord> = train_tagged.into_iter().map(|(_, r)| r).collect();
    let val: Vec<SscRecord> = val_tagged.into_iter().map(|(_, r)| r).collect();

    let ensemble = fit_ensemble(&train, &val, &cfg)?;
    ensemble.save(&args.out)?;

    print_summary(&serde_json::json!({
        "command": "ssc fit",
        "train_records": train.len(),
        "val_records": val.len(),
        "skipped": train_skipped + val_skipped,
        // Thresholds as strings: they may sit at the infinite grid endpoints.
        "t1": ensemble.t1.to_string(),
        "t2": ensemble.t2.to_string(),
        "out": args.out,
    }));
    Ok(())
}

fn predict(args: &PredictArgs) -> CliResult<()> {
    let ensemble = SscEnsemble::load(&args.ensemble)?;
    let (records, skipped) = collect_records(&args.scenes, args.masks.as_deref())?;
    let mut out_rows = Vec::with_capacity(records.len());
    for (scene_id, record) in &records {
        out_rows.push(SscCsvRow {
            x: record.x,
            y: record.y,
            ssc_mg_per_l: ensemble.predict(&record.features)?,
            scene_id: scene_id.clone(),
        });
    }
    save_ssc_csv(&args.out, &out_rows)?;
    print_summary(&serde_json::json!({
        "command": "ssc predict",
        "rows": out_rows.len(),
        "skipped": skipped,
        "out": args.out,
    }));
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let ensemble = SscEnsemble::load(&args.ensemble)?;
    let (records, skipped) = collect_records(&args.scenes, args.masks.as_deref())?;
    let mut truth = Vec::with_capacity(records.len());
    let mut predicted = Vec::with_capacity(records.len());
    for (_, record) in &records {
        truth.push(record.ssc_mg_per_l);
        predicted.push(ensemble.predict(&record.features)?);
    }
    let metrics = regression_metrics(&truth, &predicted)?;
    let report = serde_json::json!({
        "count": records.len(),
        "skipped": skipped,
        "t1": ensemble.t1.to_string(),
        "t2": ensemble.t2.to_string(),
        "metrics": metrics,
    });
    match &args.out {
        Some(path) => {
            write_json_pretty(path, &report)?;
            print_summary(&serde_json::json!({
                "command": "ssc eval",
                "rmse": metrics.rmse,
                "count": records.len(),
                "out": path,
            }));
        }
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    Ok(())
}
