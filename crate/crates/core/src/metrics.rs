//! Pixel-classification metrics (precision/recall/F1/IoU over confusion
//! counts) and sediment-regression metrics (RMSE/MAE/bias plus absolute
//! error percentiles).
//!
//! Convention: any 0/0 ratio yields `None` — an explicit "undefined"
//! marker — never a silent 0. A scene with no positive labels and no
//! positive predictions has nothing to score; collapsing that to 0 would
//! drag pooled averages down for masks that are legitimately absent.
//! Dataset-level metrics pool pixels into one global confusion (confusions
//! add component-wise) rather than averaging per-scene scores.

use std::ops::Add;

use serde::Serialize;

use crate::error::Error;
use crate::plane::MaskPlane;
use crate::Result;

/// Pixel confusion counts over the valid region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, other: Confusion) -> Confusion {
        Confusion {
            true_pos: self.true_pos + other.true_pos,
            false_pos: self.false_pos + other.false_pos,
            false_neg: self.false_neg + other.false_neg,
            true_neg: self.true_neg + other.true_neg,
        }
    }
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Tally prediction against label over valid pixels only.
pub fn confusion(pred: &MaskPlane, label: &MaskPlane, valid: &MaskPlane) -> Result<Confusion> {
    if !pred.same_shape(label) || !pred.same_shape(valid) {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{}, label {}x{}, valid {}x{}",
            pred.width(),
            pred.height(),
            label.width(),
            label.height(),
            valid.width(),
            valid.height()
        )));
    }
    let mut c = Confusion::default();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !valid.get(x, y) {
                continue;
            }
            match (pred.get(x, y), label.get(x, y)) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
    }
    Ok(c)
}

/// Classification ratios; `None` marks an undefined (0/0) value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PixelMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// precision = tp/(tp+fp); recall = tp/(tp+fn); f1 = harmonic mean of the
/// two; iou = tp/(tp+fp+fn). f1 is undefined when either factor is, and
/// also when both are zero (their harmonic mean is again 0/0).
pub fn pixel_metrics(c: &Confusion) -> PixelMetrics {
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let iou = ratio(c.true_pos, c.true_pos + c.false_pos + c.false_neg);
    PixelMetrics { precision, recall, f1, iou }
}

/// Regression error summary; all values in mg/L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Mean signed error, truth minus prediction.
    pub bias: f64,
    pub abs_median: f64,
    pub abs_max: f64,
    pub abs_min: f64,
    /// Population standard deviation of the absolute errors.
    pub abs_std: f64,
    pub abs_p75: f64,
    pub abs_p90: f64,
    pub abs_p95: f64,
}

/// Percentile by linear interpolation between order statistics: rank
/// p/100·(n−1), fractional ranks interpolated.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Compare truths `y` against predictions `y_hat`.
pub fn regression_metrics(y: &[f64], y_hat: &[f64]) -> Result<RegressionMetrics> {
    if y.len() != y_hat.len() {
        return Err(Error::BadInput(format!(
            "{} truths vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::BadInput("regression metrics need at least one pair".into()));
    }
    let n = y.len() as f64;
    let mut sq_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut signed_sum = 0.0;
    let mut abs: Vec<f64> = Vec::with_capacity(y.len());
    for (&t, &p) in y.iter().zip(y_hat) {
        let e = t - p;
        sq_sum += e * e;
        abs_sum += e.abs();
        signed_sum += e;
        abs.push(e.abs());
    }
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let mae = abs_sum / n;
    let abs_mean = mae;
    let abs_var = abs.iter().map(|a| (a - abs_mean) * (a - abs_mean)).sum::<f64>() / n;
    Ok(RegressionMetrics {
        rmse: (sq_sum / n).sqrt(),
        mae,
        bias: signed_sum / n,
        abs_median: percentile(&abs, 50.0),
        abs_max: abs[abs.len() - 1],
        abs_min: abs[0],
        abs_std: abs_var.sqrt(),
        abs_p75: percentile(&abs, 75.0),
        abs_p90: percentile(&abs, 90.0),
        abs_p95: percentile(&abs, 95.0),
    })
}

/// One row of an evaluation report: a scene/mask pair (or the pooled
/// total) with counts and derived metrics. Undefined metrics serialize as
/// JSON null / empty CSV cells.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub scene: String,
    pub mask: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

impl MetricsRow {
    pub fn new(scene: &str, mask: &str, c: &Confusion) -> Self {
        let m = pixel_metrics(c);
        MetricsRow {
            scene: scene.to_string(),
            mask: mask.to_string(),
            tp: c.true_pos,
            fp: c.false_pos,
            fn_: c.false_neg,
            tn: c.true_neg,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            iou: m.iou,
        }
    }
}

/// Per-scene rows plus one pooled row per mask; `undefined_skipped` counts
/// per-scene rows whose F1 was undefined (they contribute pixels to the
/// pooled confusion but no per-scene score).
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_scene: Vec<MetricsRow>,
    pub pooled: Vec<MetricsRow>,
    pub undefined_skipped: usize,
}

impl EvalReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV with the same columns as the rows; pooled rows use scene name
    /// `pooled`. Undefined metrics become empty cells.
    pub fn to_csv_string(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scene", "mask", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "iou"])
            .expect("csv header");
        for row in self.per_scene.iter().chain(&self.pooled) {
            w.write_record([
                row.scene.clone(),
                row.mask.clone(),
                row.tp.to_string(),
                row.fp.to_string(),
                row.fn_.to_string(),
                row.tn.to_string(),
                cell(row.precision),
                cell(row.recall),
                cell(row.f1),
                cell(row.iou),
            ])
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv is utf8")
    }
}
