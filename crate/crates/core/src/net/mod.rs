//! Multi-head mask segmentation: one shared convolutional backbone, one
//! sigmoid head per mask.
//!
//! The submodules split along natural seams — [`tensor`] holds the dense
//! containers, [`layers`] the forward/backward pairs, [`model`] the
//! assembled network, [`train`] the objective and optimizer, and
//! [`checkpoint`] persistence. This root provides the bridge between
//! raster scenes and tensors, plus prediction.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use checkpoint::{init_from, InitFrom, ModelBundle};
pub use model::{check_input_size, Forward, MultiTaskNet, NetConfig, NetGrads, INPUT_CHANNELS};
pub use tensor::{Kernel4, Mat, Tensor3};
pub use train::{loss_and_grads, loss_only, train, train_with, TrainConfig, TrainReport, TrainSample};

use num_traits::Float;

use crate::plane::MaskPlane;
use crate::raster::{Band, MaskKind, MaskSet, TileStack};
use crate::{Error, Result};

/// Reflectances live in [0, 1]; the network sees them centered and scaled
/// to [-1, 1] via `(v − 0.5) / 0.5`. Invalid pixels become exactly 0 — the
/// midpoint — so they carry no signal.
pub fn tile_to_input<F: Float>(tile: &TileStack) -> Tensor3<F> {
    let (h, w) = (tile.height(), tile.width());
    let mut x = Tensor3::zeros(h, w, INPUT_CHANNELS);
    for y in 0..h {
        for x0 in 0..w {
            if !tile.valid().get(x0, y) {
                continue; // already zero
            }
            let px = x.px_mut(y, x0);
            for (ch, &band) in Band::ALL.iter().enumerate() {
                let v = tile.band(band).get(x0, y) as f64;
                px[ch] = F::from((v - 0.5) / 0.5).unwrap();
            }
        }
    }
    x
}

/// A training sample with all five mask planes as labels, in mask order.
pub fn prepare_sample<F: Float>(tile: &TileStack, masks: &MaskSet) -> Result<TrainSample<F>> {
    check_input_size(tile.height(), tile.width())?;
    if masks.width() != tile.width() || masks.height() != tile.height() {
        return Err(Error::DimensionMismatch("masks do not match the tile grid".into()));
    }
    Ok(TrainSample {
        input: tile_to_input(tile),
        labels: MaskKind::ALL.iter().map(|&k| masks.get(k).clone()).collect(),
        valid: tile.valid().clone(),
    })
}

/// A training sample holding only one mask's label plane.
pub fn prepare_single_sample<F: Float>(
    tile: &TileStack,
    masks: &MaskSet,
    kind: MaskKind,
) -> Result<TrainSample<F>> {
    let mut s = prepare_sample(tile, masks)?;
    s.labels = vec![masks.get(kind).clone()];
    Ok(s)
}

/// Binarize one logit plane. σ(z) ≥ 0.5 is exactly z ≥ 0, so the decision
/// is made on logits; a pixel on the boundary counts as masked.
fn binarize(z: &Tensor3<f32>) -> MaskPlane {
    let mut out = MaskPlane::zeros(z.w(), z.h());
    for y in 0..z.h() {
        for x in 0..z.w() {
            out.set(x, y, z.get(y, x, 0) >= 0.0);
        }
    }
    out
}

/// Run the five-head model on a tile and binarize every head.
pub fn predict_masks(net: &MultiTaskNet<f32>, tile: &TileStack) -> Result<MaskSet> {
    check_input_size(tile.height(), tile.width())?;
    let names: Vec<&str> = net.config().head_names.iter().map(String::as_str).collect();
    let expected: Vec<&str> = MaskKind::ALL.iter().map(|k| k.name()).collect();
    if names != expected {
        return Err(Error::BadInput(format!(
            "model heads {names:?} do not cover the standard masks {expected:?}"
        )));
    }
    let logits = net.infer(&tile_to_input(tile));
    let planes: Vec<MaskPlane> = logits.iter().map(binarize).collect();
    MaskSet::from_planes(planes.try_into().expect("five heads checked above"))
}

/// Predict with whichever bundle shape a checkpoint held.
pub fn predict_bundle(bundle: &ModelBundle, tile: &TileStack) -> Result<MaskSet> {
    match bundle {
        ModelBundle::MultiTask(net) => predict_masks(net, tile),
        ModelBundle::SingleTask(nets) => {
            if !bundle.covers_all_masks() {
                return Err(Error::BadInput(
                    "single-mask bundle does not cover the standard masks".into(),
                ));
            }
            check_input_size(tile.height(), tile.width())?;
            let input = tile_to_input(tile);
            let planes: Vec<MaskPlane> =
                nets.iter().map(|net| binarize(&net.infer(&input)[0])).collect();
            MaskSet::from_planes(planes.try_into().expect("coverage checked above"))
        }
    }
}
