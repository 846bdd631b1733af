//! `sedimask train` — fit the mask model on a scene directory.

use std::path::PathBuf;

use serde::Serialize;

use sedimask_core::net::{
    init_from, prepare_sample, prepare_single_sample, train, InitFrom, ModelBundle, MultiTaskNet,
    NetConfig, TrainConfig, TrainSample,
};
use sedimask_core::raster::io;
use sedimask_core::{Error, MaskKind};

use crate::commands::{load_config_file, print_summary, section};
use crate::dataset;
use crate::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Scene directory with tiles and label masks
    #[arg(long)]
    scenes: PathBuf,
    /// Checkpoint file to write
    #[arg(long)]
    out: PathBuf,
    /// Train one independent single-mask model instead of the shared
    /// five-head model (water, cloud, cloud_shadow, snow_ice, terrain_shadow)
    #[arg(long, value_name = "MASK")]
    single_task: Option<String>,
    /// JSON config file; sections "net" and "train" apply here
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backbone stage widths, e.g. 16,32,32
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    /// Conv kernel side length (odd)
    #[arg(long)]
    kernel: Option<usize>,
    /// Run self-attention on the coarsest feature map
    #[arg(long)]
    attention: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Seeds both parameter init and the epoch shuffle
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shuffle: Option<bool>,
    /// Warm-start from this checkpoint before training
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// What to copy from --init-from: the shared backbone or every parameter
    #[arg(long, value_parser = ["backbone", "full"], default_value = "backbone")]
    transfer: String,
    /// Print the effective configuration and exit without training
    #[arg(long)]
    show_config: bool,
}

#[derive(Serialize)]
struct Effective<'a> {
    command: &'static str,
    net: &'a NetConfig,
    train: &'a TrainConfig,
    single_task: Option<&'a str>,
}

fn effective_config(args: &TrainArgs) -> CliResult<(NetConfig, TrainConfig)> {
    let file = args.config.as_deref().map(load_config_file).transpose()?;
    let mut net = section(file.as_ref(), "net", NetConfig::default())?;
    let mut tcfg = section(file.as_ref(), "train", TrainConfig::default())?;

    if let Some(v) = &args.channels {
        if v.len() != 3 {
            return Err(CliError::Usage(format!(
                "--channels needs exactly three comma-separated widths, got {}",
                v.len()
            )));
        }
        net.channels = [v[0], v[1], v[2]];
    }
    if let Some(v) = args.kernel {
        net.kernel = v;
    }
    if let Some(v) = args.attention {
        net.attention = v;
    }
    if let Some(mask) = &args.single_task {
        let kind = MaskKind::from_name(mask).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown mask \"{mask}\"; expected one of {}",
                MaskKind::ALL.map(|k| k.name()).join(", ")
            ))
        })?;
        net.head_names = vec![kind.name().to_string()];
    }
    if let Some(v) = args.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        tcfg.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        tcfg.momentum = v;
    }
    if let Some(v) = args.clip_norm {
        tcfg.clip_norm = v;
    }
    if let Some(v) = args.seed {
        tcfg.seed = v;
    }
    if let Some(v) = args.shuffle {
        tcfg.shuffle = v;
    }
    Ok((net, tcfg))
}

/// The net a warm start copies from: the multi-task net itself, or the
/// first single-task net (all nets in a bundle share one backbone shape).
fn source_net(bundle: &ModelBundle) -> CliResult<&MultiTaskNet<f32>> {
    match bundle {
        ModelBundle::MultiTask(net) => Ok(net),
        ModelBundle::SingleTask(nets) => nets
            .first()
            .ok_or_else(|| Error::BadInput("checkpoint holds no models".into()).into()),
    }
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let (net_cfg, train_cfg) = effective_config(args)?;
    if args.show_config {
        let shown = Effective {
            command: "train",
            net: &net_cfg,
            train: &train_cfg,
            single_task: args.single_task.as_deref(),
        };
        println!("{}", serde_json::to_string_pretty(&shown).expect("config serializes"));
        return Ok(());
    }

    let manifest = dataset::load_manifest(&args.scenes)?;
    let single = args.single_task.as_deref().and_then(MaskKind::from_name);
    let mut samples: Vec<TrainSample<f32>> = Vec::with_capacity(manifest.scenes.len());
    for entry in &manifest.scenes {
        let tile = io::load_tile(&dataset::tile_path(&args.scenes, &entry.id))?;
        let masks = io::load_masks(&dataset::masks_path(&args.scenes, &entry.id))?;
        samples.push(match single {
            Some(kind) => prepare_single_sample(&tile, &masks, kind)?,
            None => prepare_sample(&tile, &masks)?,
        });
    }

    let mut net = MultiTaskNet::<f32>::init(&net_cfg, train_cfg.seed)?;
    if let Some(ckpt) = &args.init_from {
        let source = ModelBundle::load(ckpt)?;
        let mode = if args.transfer == "full" { InitFrom::Full } else { InitFrom::BackboneOnly };
        init_from(&mut net, source_net(&source)?, mode)?;
    }
    let report = train(&mut net, &samples, &train_cfg)?;

    let params = net.param_count();
    let bundle = if single.is_some() {
        ModelBundle::SingleTask(vec![net])
    } else {
        ModelBundle::MultiTask(net)
    };
    bundle.save(&args.out)?;

    print_summary(&serde_json::json!({
        "command": "train",
        "scenes": samples.len(),
        "epochs_run": report.epoch_losses.len(),
        "final_loss": report.final_loss(),
        "parameters": params,
        "out": args.out,
    }));
    Ok(())
}
