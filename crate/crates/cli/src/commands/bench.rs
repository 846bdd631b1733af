//! `sedimask bench` — time the standard and multi-task pipelines.

use std::path::PathBuf;

use sedimask_core::bench::{replicate, run_pipeline, speedup, BenchReport, BenchScene, Variant};
use sedimask_core::net::ModelBundle;
use sedimask_core::raster::{io, synth};

use crate::commands::{check_jobs, print_summary, write_json_pretty};
use crate::dataset;
use crate::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    /// Scene directory (tiles, DEMs, acquisition configs, ssc.csv locations)
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, value_parser = ["standard", "multitask", "both"], default_value = "both")]
    variant: String,
    /// Trained checkpoint; required unless --variant standard
    #[arg(long)]
    model: Option<PathBuf>,
    /// Threads per variant run. Values above 1 mark reports non-comparable
    /// because stage sums become CPU time, not wall time
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replicate the first scene this many times instead of benching the
    /// directory as-is (identical work isolates machine variance)
    #[arg(long)]
    replicate: Option<usize>,
    /// Report file; omitted, the report prints to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the reports as CSV rows
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn load_bench_scenes(args: &BenchArgs) -> CliResult<Vec<BenchScene>> {
    let manifest = dataset::load_manifest(&args.scenes)?;
    let rows = dataset::load_ssc_rows(&args.scenes)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for entry in &manifest.scenes {
        scenes.push(BenchScene {
            tile: io::load_tile(&dataset::tile_path(&args.scenes, &entry.id))?,
            dem: io::load_dem(&dataset::dem_path(&args.scenes, &entry.id))?,
            meta: synth::observation(&entry.config)?,
            locations: dataset::rows_for(&rows, &entry.id)
                .iter()
                .map(|r| (r.x, r.y))
                .collect(),
        });
    }
    if let Some(n) = args.replicate {
        if n == 0 {
            return Err(CliError::Usage("--replicate must be positive".into()));
        }
        scenes = replicate(&scenes[0], n);
    }
    Ok(scenes)
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    check_jobs(args.jobs)?;
    let want_standard = args.variant != "multitask";
    let want_multitask = args.variant != "standard";
    if want_multitask && args.model.is_none() {
        return Err(CliError::Usage(format!(
            "--variant {} needs --model <checkpoint>",
            args.variant
        )));
    }
    let bundle = args.model.as_deref().map(ModelBundle::load).transpose()?;
    let scenes = load_bench_scenes(args)?;

    let mut standard: Option<BenchReport> = None;
    let mut multitask: Option<BenchReport> = None;
    if want_standard {
        standard = Some(run_pipeline(Variant::Standard, &scenes, None, args.jobs)?);
    }
    if want_multitask {
        multitask = Some(run_pipeline(Variant::MultiTask, &scenes, bundle.as_ref(), args.jobs)?);
    }

    // Assemble the report object in a fixed key order.
    let mut report = serde_json::Map::new();
    if let Some(r) = &standard {
        report.insert("standard".into(), serde_json::to_value(r).expect("report serializes"));
    }
    if let Some(r) = &multitask {
        report.insert("multitask".into(), serde_json::to_value(r).expect("report serializes"));
    }
    if let (Some(s), Some(m)) = (&standard, &multitask) {
        let gain = speedup(s, m)?;
        report.insert("speedup".into(), serde_json::to_value(gain).expect("report serializes"));
    }
    let report = serde_json::Value::Object(report);

    if let Some(path) = &args.csv {
        let refs: Vec<&BenchReport> = standard.iter().chain(multitask.iter()).collect();
        std::fs::write(path, sedimask_core::bench::reports_to_csv(&refs)?)?;
    }
    match &args.out {
        Some(path) => {
            write_json_pretty(path, &report)?;
            let mut summary = serde_json::Map::new();
            summary.insert("command".into(), "bench".into());
            summary.insert("scenes".into(), scenes.len().into());
            if let Some(r) = &standard {
                summary.insert("standard_seconds".into(), r.total_seconds.into());
            }
            if let Some(r) = &multitask {
                summary.insert("multitask_seconds".into(), r.total_seconds.into());
            }
            summary.insert("out".into(), path.display().to_string().into());
            print_summary(&serde_json::Value::Object(summary));
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"))
        }
    }
    Ok(())
}
