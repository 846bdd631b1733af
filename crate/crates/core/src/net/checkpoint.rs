//! Model persistence.
//!
//! A checkpoint is the same envelope as every other container in this
//! project: one UTF-8 JSON header line describing the architecture,
//! followed by raw little-endian `f32` payloads. A multi-head model writes
//! one payload holding its full flat parameter vector; the single-mask
//! bundle writes one payload per mask, all the same length. Loading is
//! strict — truncated or oversized files are errors, never warnings.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{MultiTaskNet, NetConfig};
use crate::raster::io::{
    expect_eof, read_f32_payload, read_json_line, write_f32_payload, write_json_line,
};
use crate::raster::MaskKind;
use crate::{Error, Result};

const KIND_MULTI: &str = "multitask";
const KIND_SINGLE: &str = "single_task";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    channels: [usize; 3],
    kernel: usize,
    attention: bool,
    /// Multi-head: the head names of the one stored model. Single-mask:
    /// one payload per name, in this order.
    heads: Vec<String>,
    params_per_model: u64,
}

/// A trained predictor as stored on disk: either one shared-backbone model
/// with five heads, or five independent single-head models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelBundle {
    MultiTask(MultiTaskNet<f32>),
    SingleTask(Vec<MultiTaskNet<f32>>),
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match self {
            ModelBundle::MultiTask(net) => {
                let header = CheckpointHeader {
                    kind: KIND_MULTI.into(),
                    channels: net.config().channels,
                    kernel: net.config().kernel,
                    attention: net.config().attention,
                    heads: net.config().head_names.clone(),
                    params_per_model: net.param_count() as u64,
                };
                write_json_line(&mut w, &header)?;
                write_f32_payload(&mut w, &net.flatten())?;
            }
            ModelBundle::SingleTask(nets) => {
                let first = nets.first().ok_or_else(|| {
                    Error::BadInput("single-mask bundle holds no models".into())
                })?;
                let mut heads = Vec::with_capacity(nets.len());
                for net in nets {
                    if !net.config().backbone_compatible(first.config()) {
                        return Err(Error::BadInput(
                            "single-mask bundle models must share one architecture".into(),
                        ));
                    }
                    match net.config().head_names.as_slice() {
                        [name] => heads.push(name.clone()),
                        _ => {
                            return Err(Error::BadInput(
                                "single-mask bundle models must have exactly one head".into(),
                            ))
                        }
                    }
                }
                let header = CheckpointHeader {
                    kind: KIND_SINGLE.into(),
                    channels: first.config().channels,
                    kernel: first.config().kernel,
                    attention: first.config().attention,
                    heads,
                    params_per_model: first.param_count() as u64,
                };
                write_json_line(&mut w, &header)?;
                for net in nets {
                    write_f32_payload(&mut w, &net.flatten())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let mut r = BufReader::new(File::open(path)?);
        let header: CheckpointHeader = read_json_line(&mut r)?;
        let per_model = header.params_per_model as usize;
        let bundle = match header.kind.as_str() {
            KIND_MULTI => {
                let config = NetConfig {
                    channels: header.channels,
                    kernel: header.kernel,
                    attention: header.attention,
                    head_names: header.heads,
                };
                let mut net = MultiTaskNet::zeros(&config);
                if net.param_count() != per_model {
                    return Err(Error::MalformedHeader(format!(
                        "architecture implies {} parameters, header declares {per_model}",
                        net.param_count()
                    )));
                }
                net.unflatten_from(&read_f32_payload(&mut r, per_model)?)?;
                ModelBundle::MultiTask(net)
            }
            KIND_SINGLE => {
                let mut nets = Vec::with_capacity(header.heads.len());
                for name in &header.heads {
                    let config = NetConfig {
                        channels: header.channels,
                        kernel: header.kernel,
                        attention: header.attention,
                        head_names: vec![name.clone()],
                    };
                    let mut net = MultiTaskNet::zeros(&config);
                    if net.param_count() != per_model {
                        return Err(Error::MalformedHeader(format!(
                            "architecture implies {} parameters, header declares {per_model}",
                            net.param_count()
                        )));
                    }
                    net.unflatten_from(&read_f32_payload(&mut r, per_model)?)?;
                    nets.push(net);
                }
                ModelBundle::SingleTask(nets)
            }
            other => {
                return Err(Error::MalformedHeader(format!("unknown checkpoint kind {other:?}")))
            }
        };
        expect_eof(&mut r)?;
        Ok(bundle)
    }

    /// Head names in storage order.
    pub fn head_names(&self) -> Vec<&str> {
        match self {
            ModelBundle::MultiTask(net) => {
                net.config().head_names.iter().map(String::as_str).collect()
            }
            ModelBundle::SingleTask(nets) => {
                nets.iter().map(|n| n.config().head_names[0].as_str()).collect()
            }
        }
    }

    /// Does this bundle predict exactly the standard five masks, in order?
    pub fn covers_all_masks(&self) -> bool {
        let names = self.head_names();
        names.len() == MaskKind::ALL.len()
            && names.iter().zip(MaskKind::ALL).all(|(n, k)| *n == k.name())
    }
}

/// What to take from a source model when warm-starting another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitFrom {
    /// Copy every parameter; architectures must match exactly.
    Full,
    /// Copy the shared backbone (convolutions and attention); heads keep
    /// their fresh initialization. Head layouts may differ.
    BackboneOnly,
}

pub fn init_from(
    target: &mut MultiTaskNet<f32>,
    source: &MultiTaskNet<f32>,
    mode: InitFrom,
) -> Result<()> {
    match mode {
        InitFrom::Full => {
            if target.config() != source.config() {
                return Err(Error::BadInput(
                    "full parameter transfer needs identical architectures".into(),
                ));
            }
            target.unflatten_from(&source.flatten())
        }
        InitFrom::BackboneOnly => {
            if !target.config().backbone_compatible(source.config()) {
                return Err(Error::BadInput(
                    "backbone transfer needs matching channels, kernel, and attention".into(),
                ));
            }
            let n = target.backbone_param_count();
            debug_assert_eq!(n, source.backbone_param_count());
            let mut flat = target.flatten();
            flat[..n].copy_from_slice(&source.flatten()[..n]);
            target.unflatten_from(&flat)
        }
    }
}
