//! `sedimask eval` — score predicted mask sets against labelled scenes.

use std::path::PathBuf;

use sedimask_core::metrics::{confusion, Confusion, EvalReport, MetricsRow};
use sedimask_core::raster::io;
use sedimask_core::MaskKind;

use crate::commands::{check_jobs, for_each_indexed, print_summary, write_json_pretty};
use crate::dataset;
use crate::CliResult;

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Labelled scene directory (tiles supply the valid planes)
    #[arg(long)]
    truth: PathBuf,
    /// Directory of predicted mask sets with matching scene ids
    #[arg(long)]
    pred: PathBuf,
    /// Report file; omitted, the report prints to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the report as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Fan scenes across this many threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    check_jobs(args.jobs)?;
    let manifest = dataset::load_manifest(&args.truth)?;

    // Confusion counts per scene and mask; metric rows are derived after the
    // parallel section so the report order never depends on thread timing.
    let counts: Vec<[Confusion; 5]> =
        for_each_indexed(manifest.scenes.len(), args.jobs, |i| {
            let id = &manifest.scenes[i].id;
            let tile = io::load_tile(&dataset::tile_path(&args.truth, id))?;
            let truth = io::load_masks(&dataset::masks_path(&args.truth, id))?;
            let pred = io::load_masks(&dataset::masks_path(&args.pred, id))?;
            let mut per_mask = [Confusion::default(); 5];
            for kind in MaskKind::ALL {
                per_mask[kind.index()] =
                    confusion(pred.get(kind), truth.get(kind), tile.valid())?;
            }
            Ok(per_mask)
        })?;

    let mut per_scene = Vec::with_capacity(counts.len() * 5);
    let mut pooled_by_mask = [Confusion::default(); 5];
    let mut pooled_all = Confusion::default();
    let mut undefined_skipped = 0usize;
    for (entry, per_mask) in manifest.scenes.iter().zip(&counts) {
        for kind in MaskKind::ALL {
            let c = &per_mask[kind.index()];
            let row = MetricsRow::new(&entry.id, kind.name(), c);
            if row.f1.is_none() {
                undefined_skipped += 1;
            }
            per_scene.push(row);
            pooled_by_mask[kind.index()] = pooled_by_mask[kind.index()] + *c;
            pooled_all = pooled_all + *c;
        }
    }
    let mut pooled: Vec<MetricsRow> = MaskKind::ALL
        .iter()
        .map(|&kind| MetricsRow::new("pooled", kind.name(), &pooled_by_mask[kind.index()]))
        .collect();
    pooled.push(MetricsRow::new("pooled", "all", &pooled_all));

    let report = EvalReport { per_scene, pooled, undefined_skipped };
    if let Some(path) = &args.csv {
        std::fs::write(path, report.to_csv_string())?;
    }
    match &args.out {
        Some(path) => {
            write_json_pretty(path, &report)?;
            let pooled_f1: serde_json::Map<String, serde_json::Value> = report
                .pooled
                .iter()
                .map(|row| (row.mask.clone(), serde_json::json!(row.f1)))
                .collect();
            print_summary(&serde_json::json!({
                "command": "eval",
                "scenes": manifest.scenes.len(),
                "pooled_f1": pooled_f1,
                "out": path,
            }));
        }
        None => println!("{}", report.to_json_string()),
    }
    Ok(())
}
