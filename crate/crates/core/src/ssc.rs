//! Suspended-sediment concentration regression.
//!
//! Two small fully connected regressors cover different concentration
//! ranges — one trained on records up to 20 mg/L, one on records from
//! 14 mg/L up (the ranges overlap on purpose; overlapping records feed
//! both) — and a pair of blending thresholds picks between them per
//! prediction:
//!
//! * `o1 < t1` → trust the low-range model,
//! * else `o2 > t2` → trust the high-range model,
//! * else → average the two.
//!
//! The thresholds come from an exhaustive grid search on a validation
//! split: 50 uniform steps across the validation concentration range per
//! threshold, plus −∞ and +∞ endpoints so "always low" and "always high"
//! are in the search space, constrained to `t1 ≤ t2`, minimizing
//! validation RMSE with lexicographically-smallest tie-breaking.
//!
//! Targets are trained in `log1p` space and predictions mapped back with
//! `expm1` — concentrations span several decades, and squared error on raw
//! mg/L would be dominated entirely by the high tail. Reported errors stay
//! in mg/L. Final predictions are floored at zero.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::fusion::FEATURE_DIM;
use crate::net::layers::Dense;
use crate::net::train::{TrainConfig, TrainReport};
use crate::raster::io::{
    expect_eof, read_f32_payload, read_json_line, write_f32_payload, write_json_line,
};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Records at or below this concentration train the low-range model.
pub const LOW_RANGE_MAX: f64 = 20.0;
/// Records at or above this concentration train the high-range model.
pub const HIGH_RANGE_MIN: f64 = 14.0;
/// Interior grid points per threshold in the blending search.
pub const THRESHOLD_GRID: usize = 50;

/// Hidden widths of the three-layer regressors (30 → 32 → 16 → 1).
const HIDDEN: [usize; 2] = [32, 16];

/// Training defaults for the regressors: smaller steps and many more
/// epochs than the segmentation model — the data sets are tiny.
pub fn default_fit_config() -> TrainConfig {
    TrainConfig { epochs: 400, learning_rate: 5e-3, ..TrainConfig::default() }
}

/// One ground-truth pairing: a pixel location, its concentration, and the
/// 30 window statistics extracted there.
#[derive(Debug, Clone, PartialEq)]
pub struct SscRecord {
    pub x: usize,
    pub y: usize,
    pub ssc_mg_per_l: f64,
    pub features: Vec<f64>,
}

impl SscRecord {
    pub fn new(x: usize, y: usize, ssc_mg_per_l: f64, features: Vec<f64>) -> Result<Self> {
        if !(ssc_mg_per_l >= 0.0) || !ssc_mg_per_l.is_finite() {
            return Err(Error::BadInput(format!(
                "concentration must be finite and non-negative, got {ssc_mg_per_l}"
            )));
        }
        if features.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has {} values, expected {FEATURE_DIM}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadInput("features must be finite".into()));
        }
        Ok(SscRecord { x, y, ssc_mg_per_l, features })
    }
}

// ---------------------------------------------------------------------------
// The three-layer regressor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Mlp<F> {
    l1: Dense<F>,
    l2: Dense<F>,
    l3: Dense<F>,
}

struct MlpCache<F> {
    h1: Vec<F>,
    h2: Vec<F>,
}

impl<F: Float> Mlp<F> {
    fn zeros() -> Self {
        Mlp {
            l1: Dense::zeros(FEATURE_DIM, HIDDEN[0]),
            l2: Dense::zeros(HIDDEN[0], HIDDEN[1]),
            l3: Dense::zeros(HIDDEN[1], 1),
        }
    }

    fn init(rng: &CounterRng) -> Self {
        let mut mlp = Self::zeros();
        for (name, layer) in
            [("l1", &mut mlp.l1), ("l2", &mut mlp.l2), ("l3", &mut mlp.l3)]
        {
            let fan_in = layer.n_in();
            let limit = (3.0 / fan_in as f64).sqrt();
            let mut r = rng.stream(name);
            for v in layer.w.as_mut_slice() {
                *v = F::from(r.uniform(-limit, limit)).unwrap();
            }
        }
        mlp
    }

    fn forward(&self, x: &[F]) -> (F, MlpCache<F>) {
        let mut h1 = self.l1.forward(x);
        for v in &mut h1 {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
        let mut h2 = self.l2.forward(&h1);
        for v in &mut h2 {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
        let y = self.l3.forward(&h2)[0];
        (y, MlpCache { h1, h2 })
    }

    fn backward(&self, x: &[F], cache: &MlpCache<F>, dy: F, grads: &mut Mlp<F>) {
        let mut dh2 =
            self.l3.backward(&cache.h2, &[dy], &mut grads.l3.w, &mut grads.l3.b);
        for (g, &a) in dh2.iter_mut().zip(&cache.h2) {
            if a <= F::zero() {
                *g = F::zero();
            }
        }
        let mut dh1 = self.l2.backward(&cache.h1, &dh2, &mut grads.l2.w, &mut grads.l2.b);
        for (g, &a) in dh1.iter_mut().zip(&cache.h1) {
            if a <= F::zero() {
                *g = F::zero();
            }
        }
        self.l1.backward(x, &dh1, &mut grads.l1.w, &mut grads.l1.b);
    }

    fn param_slices(&self) -> [&[F]; 6] {
        [
            self.l1.w.as_slice(),
            &self.l1.b,
            self.l2.w.as_slice(),
            &self.l2.b,
            self.l3.w.as_slice(),
            &self.l3.b,
        ]
    }

    fn param_slices_mut(&mut self) -> [&mut [F]; 6] {
        [
            self.l1.w.as_mut_slice(),
            &mut self.l1.b,
            self.l2.w.as_mut_slice(),
            &mut self.l2.b,
            self.l3.w.as_mut_slice(),
            &mut self.l3.b,
        ]
    }

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    fn unflatten_from(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "regressor expects {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }
}

/// SGD with momentum and a global L2 clip on squared error, one record per
/// step in a seeded shuffle order.
fn train_mlp<F: Float>(
    mlp: &mut Mlp<F>,
    xs: &[Vec<F>],
    targets: &[F],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    assert_eq!(xs.len(), targets.len());
    if xs.is_empty() {
        return Err(Error::BadInput("no regression samples".into()));
    }
    let shuffle_rng = CounterRng::new(cfg.seed).stream("shuffle");
    let mut velocity = vec![F::zero(); mlp.param_count()];
    let lr = F::from(cfg.learning_rate).unwrap();
    let momentum = F::from(cfg.momentum).unwrap();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        if cfg.shuffle {
            shuffle_rng.stream_u64(epoch as u64).shuffle(&mut order);
        }
        let mut epoch_loss = 0.0f64;
        for &i in &order {
            let (y, cache) = mlp.forward(&xs[i]);
            let resid = y - targets[i];
            let loss = resid.to_f64().unwrap().powi(2);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "regression loss became non-finite at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            let mut grads = Mlp::zeros();
            mlp.backward(&xs[i], &cache, resid + resid, &mut grads);
            let mut norm_sq = 0.0f64;
            for s in grads.param_slices() {
                for &g in s {
                    let g = g.to_f64().unwrap();
                    norm_sq += g * g;
                }
            }
            let norm = norm_sq.sqrt();
            let scale =
                F::from(if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 }).unwrap();
            let mut off = 0;
            let gs = grads.param_slices();
            for (ws, gsl) in mlp.param_slices_mut().into_iter().zip(gs) {
                let v = &mut velocity[off..off + ws.len()];
                for ((w, &g), vi) in ws.iter_mut().zip(gsl).zip(v) {
                    *vi = momentum * *vi - lr * scale * g;
                    *w = *w + *vi;
                }
                off += ws.len();
            }
        }
        epoch_losses.push(epoch_loss / xs.len() as f64);
    }
    // The in-loop check sees each loss before the updates it triggers; a
    // blow-up on the final steps would otherwise escape unnoticed.
    for s in mlp.param_slices() {
        if s.iter().any(|w| w.to_f64().map_or(true, |x| !x.is_finite())) {
            return Err(Error::Diverged(
                "regression weights became non-finite; lower the learning rate".into(),
            ));
        }
    }
    Ok(TrainReport { epoch_losses })
}

// ---------------------------------------------------------------------------
// Feature standardization
// ---------------------------------------------------------------------------

/// Per-dimension z-scoring fitted on the training split. The constants are
/// quantized to `f32` at fit time so a save/load round trip is exact.
#[derive(Debug, Clone, PartialEq)]
struct Scaler {
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl Scaler {
    fn fit(records: &[SscRecord]) -> Scaler {
        let n = records.len() as f64;
        let mut mean = vec![0.0f64; FEATURE_DIM];
        for r in records {
            for (m, &f) in mean.iter_mut().zip(&r.features) {
                *m += f;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0f64; FEATURE_DIM];
        for r in records {
            for ((v, &f), &m) in var.iter_mut().zip(&r.features).zip(&mean) {
                *v += (f - m) * (f - m);
            }
        }
        // A dimension with (numerically) no spread in the training split
        // carries no signal, but dividing by a vanishing std would turn
        // irrelevant future deviations into enormous inputs — the minimum
        // of a band that bottoms out at the sensor floor in every training
        // window is the classic case. Such dimensions are centered only.
        let std = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                (if s < 1e-6 { 1.0 } else { s }) as f32
            })
            .collect();
        Scaler { mean: mean.iter().map(|&m| m as f32).collect(), std }
    }

    fn apply(&self, features: &[f64]) -> Vec<f32> {
        features
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&f, &m), &s)| ((f - m as f64) / s as f64) as f32)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// The ensemble
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SscEnsemble {
    scaler: Scaler,
    model_low: Mlp<f32>,
    model_high: Mlp<f32>,
    pub t1: f64,
    pub t2: f64,
}

/// The blending rule on raw model outputs (mg/L): low output under `t1`
/// wins, else a high output over `t2` wins, else the two average. Exactly
/// one branch fires for any input.
pub fn blend_rule(o1: f64, o2: f64, t1: f64, t2: f64) -> f64 {
    if o1 < t1 {
        o1
    } else if o2 > t2 {
        o2
    } else {
        (o1 + o2) / 2.0
    }
}

impl SscEnsemble {
    /// Raw per-model predictions in mg/L (may be slightly negative — the
    /// floor applies only to the blended result).
    pub fn predict_components(&self, features: &[f64]) -> Result<(f64, f64)> {
        if features.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has {} values, expected {FEATURE_DIM}",
                features.len()
            )));
        }
        let z = self.scaler.apply(features);
        let (y1, _) = self.model_low.forward(&z);
        let (y2, _) = self.model_high.forward(&z);
        Ok(((y1 as f64).exp_m1(), (y2 as f64).exp_m1()))
    }

    /// Blended concentration estimate, floored at 0 mg/L.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let (o1, o2) = self.predict_components(features)?;
        Ok(blend_rule(o1, o2, self.t1, self.t2).max(0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = EnsembleHeader {
            kind: "ssc_ensemble".into(),
            feature_dim: FEATURE_DIM,
            hidden: HIDDEN,
            // JSON has no infinities; thresholds travel as strings.
            t1: format!("{}", self.t1),
            t2: format!("{}", self.t2),
            params_per_model: self.model_low.param_count() as u64,
        };
        write_json_line(&mut w, &header)?;
        write_f32_payload(&mut w, &self.scaler.mean)?;
        write_f32_payload(&mut w, &self.scaler.std)?;
        write_f32_payload(&mut w, &self.model_low.flatten())?;
        write_f32_payload(&mut w, &self.model_high.flatten())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SscEnsemble> {
        let mut r = BufReader::new(File::open(path)?);
        let header: EnsembleHeader = read_json_line(&mut r)?;
        if header.kind != "ssc_ensemble" {
            return Err(Error::MalformedHeader(format!(
                "expected an ensemble container, found kind {:?}",
                header.kind
            )));
        }
        if header.feature_dim != FEATURE_DIM || header.hidden != HIDDEN {
            return Err(Error::MalformedHeader(format!(
                "unsupported regressor shape {}→{:?}",
                header.feature_dim, header.hidden
            )));
        }
        let parse = |s: &str, which: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::MalformedHeader(format!("bad threshold {which}: {s:?}")))?;
            if v.is_nan() {
                return Err(Error::MalformedHeader(format!("threshold {which} is NaN")));
            }
            Ok(v)
        };
        let t1 = parse(&header.t1, "t1")?;
        let t2 = parse(&header.t2, "t2")?;
        if t1 > t2 {
            return Err(Error::MalformedHeader(format!(
                "thresholds out of order: t1 {t1} > t2 {t2}"
            )));
        }
        let mut ens = SscEnsemble {
            scaler: Scaler {
                mean: read_f32_payload(&mut r, FEATURE_DIM)?,
                std: read_f32_payload(&mut r, FEATURE_DIM)?,
            },
            model_low: Mlp::zeros(),
            model_high: Mlp::zeros(),
            t1,
            t2,
        };
        let per_model = header.params_per_model as usize;
        if per_model != ens.model_low.param_count() {
            return Err(Error::MalformedHeader(format!(
                "regressor shape implies {} parameters, header declares {per_model}",
                ens.model_low.param_count()
            )));
        }
        ens.model_low.unflatten_from(&read_f32_payload(&mut r, per_model)?)?;
        ens.model_high.unflatten_from(&read_f32_payload(&mut r, per_model)?)?;
        expect_eof(&mut r)?;
        Ok(ens)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleHeader {
    kind: String,
    feature_dim: usize,
    hidden: [usize; 2],
    t1: String,
    t2: String,
    params_per_model: u64,
}

fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt()
}

/// Fit the two range models and search the blending thresholds.
pub fn fit_ensemble(
    train: &[SscRecord],
    val: &[SscRecord],
    cfg: &TrainConfig,
) -> Result<SscEnsemble> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::BadInput("training and validation splits must be non-empty".into()));
    }
    let low: Vec<&SscRecord> =
        train.iter().filter(|r| r.ssc_mg_per_l <= LOW_RANGE_MAX).collect();
    let high: Vec<&SscRecord> =
        train.iter().filter(|r| r.ssc_mg_per_l >= HIGH_RANGE_MIN).collect();
    if low.is_empty() {
        return Err(Error::Degenerate(format!(
            "no training records at or below {LOW_RANGE_MAX} mg/L for the low-range model"
        )));
    }
    if high.is_empty() {
        return Err(Error::Degenerate(format!(
            "no training records at or above {HIGH_RANGE_MIN} mg/L for the high-range model"
        )));
    }

    let scaler = Scaler::fit(train);
    let prep = |records: &[&SscRecord]| -> (Vec<Vec<f32>>, Vec<f32>) {
        let xs = records.iter().map(|r| scaler.apply(&r.features)).collect();
        let ys = records.iter().map(|r| r.ssc_mg_per_l.ln_1p() as f32).collect();
        (xs, ys)
    };

    let rng = CounterRng::new(cfg.seed);
    let mut model_low = Mlp::init(&rng.stream("low"));
    let (xs, ys) = prep(&low);
    train_mlp(&mut model_low, &xs, &ys, &TrainConfig { seed: cfg.seed ^ 1, ..cfg.clone() })?;
    let mut model_high = Mlp::init(&rng.stream("high"));
    let (xs, ys) = prep(&high);
    train_mlp(&mut model_high, &xs, &ys, &TrainConfig { seed: cfg.seed ^ 2, ..cfg.clone() })?;

    // Threshold search over validation predictions.
    let mut ens = SscEnsemble { scaler, model_low, model_high, t1: f64::INFINITY, t2: f64::INFINITY };
    let outputs: Vec<(f64, f64)> = val
        .iter()
        .map(|r| ens.predict_components(&r.features))
        .collect::<Result<_>>()?;
    if outputs.iter().any(|&(o1, o2)| !o1.is_finite() || !o2.is_finite()) {
        return Err(Error::Diverged(
            "a range model produced non-finite validation predictions".into(),
        ));
    }
    let truth: Vec<f64> = val.iter().map(|r| r.ssc_mg_per_l).collect();

    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates = Vec::with_capacity(THRESHOLD_GRID + 2);
    candidates.push(f64::NEG_INFINITY);
    for i in 0..THRESHOLD_GRID {
        candidates.push(lo + (hi - lo) * i as f64 / (THRESHOLD_GRID - 1) as f64);
    }
    candidates.push(f64::INFINITY);

    let mut best = (f64::INFINITY, f64::INFINITY, f64::INFINITY); // (rmse, t1, t2)
    for &t1 in &candidates {
        for &t2 in &candidates {
            if t2 < t1 {
                continue;
            }
            let pred: Vec<f64> = outputs
                .iter()
                .map(|&(o1, o2)| blend_rule(o1, o2, t1, t2).max(0.0))
                .collect();
            let e = rmse(&pred, &truth);
            // Strict improvement only: ascending iteration then keeps the
            // lexicographically smallest (t1, t2) among ties.
            if e.is_finite() && e < best.0 {
                best = (e, t1, t2);
            }
        }
    }
    ens.t1 = best.1;
    ens.t2 = best.2;
    Ok(ens)
}

// ---------------------------------------------------------------------------
// Ground-truth CSV interchange
// ---------------------------------------------------------------------------

/// One row of the ground-truth table tying a pixel to a concentration and
/// the scene it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SscCsvRow {
    pub x: usize,
    pub y: usize,
    pub ssc_mg_per_l: f64,
    pub scene_id: String,
}

pub fn save_ssc_csv(path: &Path, rows: &[SscCsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row).map_err(|e| Error::BadInput(format!("csv write failed: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_ssc_csv(path: &Path) -> Result<Vec<SscCsvRow>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: SscCsvRow =
            rec.map_err(|e| Error::BadInput(format!("csv read failed: {e}")))?;
        if !(row.ssc_mg_per_l >= 0.0) || !row.ssc_mg_per_l.is_finite() {
            return Err(Error::BadInput(format!(
                "row ({}, {}, {}): concentration must be finite and non-negative",
                row.x, row.y, row.scene_id
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_rule_worked_cases() {
        // Low output under its threshold wins outright.
        assert_eq!(blend_rule(5.0, 100.0, 10.0, 200.0), 5.0);
        // Low is disqualified, high clears its threshold.
        assert_eq!(blend_rule(15.0, 30.0, 10.0, 25.0), 30.0);
        // Neither model is trusted alone: average.
        assert_eq!(blend_rule(15.0, 20.0, 10.0, 25.0), 17.5);
    }

    #[test]
    fn blend_rule_matches_a_case_analysis_oracle() {
        let mut rng = CounterRng::new(31);
        let pick = |r: &mut CounterRng| {
            let v = r.uniform(-50.0, 350.0);
            match r.below(8) {
                0 => f64::NEG_INFINITY,
                1 => f64::INFINITY,
                _ => v,
            }
        };
        for _ in 0..2000 {
            let (o1, o2) = (rng.uniform(-5.0, 300.0), rng.uniform(-5.0, 300.0));
            let a = pick(&mut rng);
            let b = pick(&mut rng);
            let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
            let got = blend_rule(o1, o2, t1, t2);
            let want = match (o1 < t1, o2 > t2) {
                (true, _) => o1,
                (false, true) => o2,
                (false, false) => (o1 + o2) / 2.0,
            };
            assert_eq!(got, want);
        }
    }

    /// Synthetic records whose truth is a smooth function of one feature:
    /// concentration rises exponentially with feature 10, spanning the low
    /// and high ranges.
    fn synthetic_records(seed: u64, n: usize) -> Vec<SscRecord> {
        let mut rng = CounterRng::new(seed);
        (0..n)
            .map(|i| {
                let mut features: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.uniform(0.0, 1.0)).collect();
                let driver = rng.uniform(0.0, 1.0);
                features[10] = driver;
                let ssc = 2.0 * (5.0 * driver).exp() * (0.05 * rng.normal()).exp();
                SscRecord::new(i % 64, i / 64, ssc, features).unwrap()
            })
            .collect()
    }

    #[test]
    fn fitted_ensemble_beats_the_mean_predictor() {
        let train = synthetic_records(1, 160);
        let val = synthetic_records(2, 60);
        let ens = fit_ensemble(&train, &val, &default_fit_config()).unwrap();
        let pred: Vec<f64> = val.iter().map(|r| ens.predict(&r.features).unwrap()).collect();
        let truth: Vec<f64> = val.iter().map(|r| r.ssc_mg_per_l).collect();
        let model_rmse = rmse(&pred, &truth);
        let train_mean =
            train.iter().map(|r| r.ssc_mg_per_l).sum::<f64>() / train.len() as f64;
        let mean_rmse = rmse(&vec![train_mean; truth.len()], &truth);
        assert!(
            model_rmse < mean_rmse,
            "ensemble rmse {model_rmse:.3} should beat mean-predictor rmse {mean_rmse:.3}"
        );
        assert!(ens.t1 <= ens.t2);
    }

    #[test]
    fn blended_rmse_never_loses_to_either_single_model() {
        // The search space contains "always low" (t1 = +∞) and "always
        // high" (t1 = t2 = −∞), so the chosen blend can only be at least
        // as good on validation.
        let train = synthetic_records(3, 140);
        let val = synthetic_records(4, 50);
        let ens = fit_ensemble(&train, &val, &default_fit_config()).unwrap();
        let truth: Vec<f64> = val.iter().map(|r| r.ssc_mg_per_l).collect();
        let fitted: Vec<f64> = val.iter().map(|r| ens.predict(&r.features).unwrap()).collect();
        let score = |t1: f64, t2: f64| -> f64 {
            let pred: Vec<f64> = val
                .iter()
                .map(|r| {
                    let (o1, o2) = ens.predict_components(&r.features).unwrap();
                    blend_rule(o1, o2, t1, t2).max(0.0)
                })
                .collect();
            rmse(&pred, &truth)
        };
        let fitted_rmse = rmse(&fitted, &truth);
        assert!(fitted_rmse <= score(f64::INFINITY, f64::INFINITY) + 1e-12);
        assert!(fitted_rmse <= score(f64::NEG_INFINITY, f64::NEG_INFINITY) + 1e-12);
    }

    #[test]
    fn chosen_thresholds_survive_a_full_grid_rescan() {
        let train = synthetic_records(5, 120);
        let val = synthetic_records(6, 40);
        let ens = fit_ensemble(&train, &val, &default_fit_config()).unwrap();
        let truth: Vec<f64> = val.iter().map(|r| r.ssc_mg_per_l).collect();
        let outputs: Vec<(f64, f64)> =
            val.iter().map(|r| ens.predict_components(&r.features).unwrap()).collect();
        let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut candidates = vec![f64::NEG_INFINITY];
        for i in 0..THRESHOLD_GRID {
            candidates.push(lo + (hi - lo) * i as f64 / (THRESHOLD_GRID - 1) as f64);
        }
        candidates.push(f64::INFINITY);
        let score = |t1: f64, t2: f64| {
            let pred: Vec<f64> = outputs
                .iter()
                .map(|&(o1, o2)| blend_rule(o1, o2, t1, t2).max(0.0))
                .collect();
            rmse(&pred, &truth)
        };
        let chosen = score(ens.t1, ens.t2);
        for &t1 in &candidates {
            for &t2 in &candidates {
                if t2 < t1 {
                    continue;
                }
                assert!(
                    chosen <= score(t1, t2) + 1e-12,
                    "grid point ({t1}, {t2}) beats the fitted thresholds"
                );
            }
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let train = synthetic_records(7, 100);
        let val = synthetic_records(8, 30);
        let a = fit_ensemble(&train, &val, &default_fit_config()).unwrap();
        let b = fit_ensemble(&train, &val, &default_fit_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_range_splits_are_rejected() {
        let all_high: Vec<SscRecord> = synthetic_records(9, 50)
            .into_iter()
            .map(|mut r| {
                r.ssc_mg_per_l += 100.0;
                r
            })
            .collect();
        let val = synthetic_records(10, 10);
        assert!(matches!(
            fit_ensemble(&all_high, &val, &default_fit_config()),
            Err(Error::Degenerate(_))
        ));
        let all_low: Vec<SscRecord> = synthetic_records(11, 50)
            .into_iter()
            .map(|mut r| {
                r.ssc_mg_per_l = r.ssc_mg_per_l.min(10.0);
                r
            })
            .collect();
        assert!(matches!(
            fit_ensemble(&all_low, &val, &default_fit_config()),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_ensemble(&[], &val, &default_fit_config()).is_err());
    }

    #[test]
    fn predictions_are_floored_at_zero() {
        let mut ens = SscEnsemble {
            scaler: Scaler { mean: vec![0.0; FEATURE_DIM], std: vec![1.0; FEATURE_DIM] },
            model_low: Mlp::zeros(),
            model_high: Mlp::zeros(),
            t1: f64::INFINITY,
            t2: f64::INFINITY,
        };
        // A negative output bias drives the low model below zero mg/L.
        ens.model_low.l3.b[0] = -1.0;
        let f = vec![0.5; FEATURE_DIM];
        let (o1, _) = ens.predict_components(&f).unwrap();
        assert!(o1 < 0.0, "raw component should be negative, got {o1}");
        assert_eq!(ens.predict(&f).unwrap(), 0.0);
    }

    #[test]
    fn ensemble_round_trips_through_disk_exactly() {
        let train = synthetic_records(12, 90);
        let val = synthetic_records(13, 30);
        let mut ens = fit_ensemble(&train, &val, &default_fit_config()).unwrap();
        ens.t2 = f64::INFINITY; // force a non-finite threshold through JSON
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.bin");
        ens.save(&path).unwrap();
        let loaded = SscEnsemble::load(&path).unwrap();
        assert_eq!(loaded, ens);
        for r in &val[..5] {
            let a = ens.predict(&r.features).unwrap();
            let b = loaded.predict(&r.features).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mis_shaped_or_negative_inputs_are_rejected() {
        assert!(SscRecord::new(0, 0, -1.0, vec![0.0; FEATURE_DIM]).is_err());
        assert!(SscRecord::new(0, 0, f64::NAN, vec![0.0; FEATURE_DIM]).is_err());
        assert!(SscRecord::new(0, 0, 5.0, vec![0.0; 29]).is_err());
        let ens = SscEnsemble {
            scaler: Scaler { mean: vec![0.0; FEATURE_DIM], std: vec![1.0; FEATURE_DIM] },
            model_low: Mlp::zeros(),
            model_high: Mlp::zeros(),
            t1: 0.0,
            t2: 0.0,
        };
        assert!(ens.predict(&[0.0; 4]).is_err());
    }

    #[test]
    fn regressor_gradients_match_finite_differences() {
        let rng = CounterRng::new(77);
        let mlp: Mlp<f64> = Mlp::init(&rng);
        let mut inp_rng = CounterRng::new(78);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|_| inp_rng.uniform(-1.0, 1.0)).collect();
        let target = 1.3f64;
        let (y, cache) = mlp.forward(&x);
        let mut grads = Mlp::zeros();
        mlp.backward(&x, &cache, 2.0 * (y - target), &mut grads);
        let flat = mlp.flatten();
        let gflat = grads.flatten();
        let h = 1e-6;
        for idx in [0usize, 31, 500, 991, 1100, 1530, flat.len() - 1] {
            let mut probe = mlp.clone();
            let mut w = flat.clone();
            w[idx] += h;
            probe.unflatten_from(&w).unwrap();
            let plus = (probe.forward(&x).0 - target).powi(2);
            w[idx] -= 2.0 * h;
            probe.unflatten_from(&w).unwrap();
            let minus = (probe.forward(&x).0 - target).powi(2);
            let num = (plus - minus) / (2.0 * h);
            let ana = gflat[idx];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-8);
            assert!(rel < 1e-5, "param {idx}: numeric {num} vs analytic {ana}");
        }
    }

    #[test]
    fn csv_round_trip_with_exact_header() {
        let rows = vec![
            SscCsvRow { x: 3, y: 7, ssc_mg_per_l: 12.25, scene_id: "scene_0001".into() },
            SscCsvRow { x: 60, y: 2, ssc_mg_per_l: 0.003, scene_id: "scene_0002".into() },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        save_ssc_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,ssc_mg_per_l,scene_id\n"), "got {text:?}");
        assert_eq!(load_ssc_csv(&path).unwrap(), rows);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "x,y,ssc_mg_per_l,scene_id\n1,2,-3.0,scene_0001\n").unwrap();
        assert!(load_ssc_csv(&bad).is_err());
    }
}
