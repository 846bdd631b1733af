//! Classical water-index baseline: MNDWI score maps, Otsu histogram
//! thresholding, and validation-sweep threshold selection.
//!
//! MNDWI (modified normalized difference water index) is
//! `(green − swir1) / (green + swir1)`; water reflects green strongly and
//! absorbs shortwave infrared, so high scores indicate water. Note snow
//! shares this signature — the index alone cannot separate the two, which
//! is exactly the weakness the learned masks address.
//!
//! Threshold convention used everywhere in this crate: a pixel is
//! classified water when `score >= t`.

use crate::error::Error;
use crate::plane::{MaskPlane, Plane};
use crate::raster::{Band, TileStack};
use crate::Result;

/// Per-pixel index values in [-1, 1] plus a validity plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    values: Plane<f32>,
    valid: MaskPlane,
}

impl ScoreMap {
    pub fn from_parts(values: Plane<f32>, valid: MaskPlane) -> Result<Self> {
        if values.width() != valid.width() || values.height() != valid.height() {
            return Err(Error::DimensionMismatch(format!(
                "score plane {}x{} vs valid plane {}x{}",
                values.width(),
                values.height(),
                valid.width(),
                valid.height()
            )));
        }
        for y in 0..values.height() {
            for x in 0..values.width() {
                let v = values.get(x, y);
                if valid.get(x, y) && !(-1.0..=1.0).contains(&v) {
                    return Err(Error::BadInput(format!(
                        "score {v} at valid pixel ({x}, {y}) outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(ScoreMap { values, valid })
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn values(&self) -> &Plane<f32> {
        &self.values
    }

    pub fn valid(&self) -> &MaskPlane {
        &self.valid
    }

    /// Binarize: water where `score >= t` and the pixel is valid.
    pub fn apply_threshold(&self, t: f64) -> MaskPlane {
        let mut mask = MaskPlane::zeros(self.width(), self.height());
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.valid.get(x, y) && self.values.get(x, y) as f64 >= t {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }
}

/// Compute the MNDWI score map of a tile. Pixels where the tile is invalid
/// or `green + swir1 <= 0` (index undefined) come out invalid.
pub fn mndwi(tile: &TileStack) -> ScoreMap {
    let green = tile.band(Band::Green);
    let swir1 = tile.band(Band::Swir1);
    let (w, h) = (tile.width(), tile.height());
    let mut values = Plane::filled(w, h, 0.0f32);
    let mut valid = MaskPlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !tile.valid().get(x, y) {
                continue;
            }
            let g = green.get(x, y);
            let s = swir1.get(x, y);
            let denom = g + s;
            if denom > 0.0 {
                values.set(x, y, (g - s) / denom);
                valid.set(x, y, true);
            }
        }
    }
    ScoreMap { values, valid }
}

/// Histogram of the valid score values: per-bin counts and value sums.
/// Bin `i` covers `[min + i·width, min + (i+1)·width)`, the last bin closed.
struct ScoreHistogram {
    counts: Vec<u64>,
    sums: Vec<f64>,
    min: f64,
    max: f64,
}

impl ScoreHistogram {
    fn build(score: &ScoreMap, bins: usize) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut n = 0u64;
        for y in 0..score.height() {
            for x in 0..score.width() {
                if score.valid.get(x, y) {
                    let v = score.values.get(x, y) as f64;
                    min = min.min(v);
                    max = max.max(v);
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Degenerate("no valid score values".into()));
        }
        if min == max {
            return Err(Error::Degenerate(format!("all {n} valid scores equal {min}")));
        }
        let mut counts = vec![0u64; bins];
        let mut sums = vec![0f64; bins];
        let scale = bins as f64 / (max - min);
        for y in 0..score.height() {
            for x in 0..score.width() {
                if score.valid.get(x, y) {
                    let v = score.values.get(x, y) as f64;
                    let i = (((v - min) * scale) as usize).min(bins - 1);
                    counts[i] += 1;
                    sums[i] += v;
                }
            }
        }
        Ok(ScoreHistogram { counts, sums, min, max })
    }

    fn boundary(&self, i: usize) -> f64 {
        let bins = self.counts.len();
        self.min + (self.max - self.min) * i as f64 / bins as f64
    }
}

/// Default histogram resolution for [`otsu_threshold`].
pub const OTSU_DEFAULT_BINS: usize = 256;

/// Otsu's method: the bin boundary that maximizes between-class variance
/// `w_lo · w_hi · (μ_lo − μ_hi)²` over the histogram of valid scores. Ties
/// go to the lowest boundary. All-equal input has no variance to split and
/// is rejected as degenerate.
pub fn otsu_threshold(score: &ScoreMap, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::BadInput(format!("otsu needs at least 2 bins, got {bins}")));
    }
    let hist = ScoreHistogram::build(score, bins)?;
    let total_count: u64 = hist.counts.iter().sum();
    let total_sum: f64 = hist.sums.iter().sum();

    let mut best_variance = f64::NEG_INFINITY;
    let mut best_boundary = hist.min;
    let mut count_lo = 0u64;
    let mut sum_lo = 0f64;
    for i in 1..bins {
        count_lo += hist.counts[i - 1];
        sum_lo += hist.sums[i - 1];
        let count_hi = total_count - count_lo;
        if count_lo == 0 || count_hi == 0 {
            continue;
        }
        let w_lo = count_lo as f64 / total_count as f64;
        let w_hi = count_hi as f64 / total_count as f64;
        let mean_lo = sum_lo / count_lo as f64;
        let mean_hi = (total_sum - sum_lo) / count_hi as f64;
        let variance = w_lo * w_hi * (mean_lo - mean_hi) * (mean_lo - mean_hi);
        if variance > best_variance {
            best_variance = variance;
            best_boundary = hist.boundary(i);
        }
    }
    if best_variance.is_infinite() {
        // Every split left one side empty — cannot happen once min < max,
        // because min and max land in different bins; keep the guard anyway.
        return Err(Error::Degenerate("no split separates the histogram".into()));
    }
    Ok(best_boundary)
}

/// The fixed threshold sweep grid: -1.00, -0.99, ..., 1.00.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..=200).map(|k| (k as f64 - 100.0) / 100.0)
}

/// Pick the threshold from [`threshold_grid`] that maximizes pooled F1 of
/// (score >= t) against the labels over valid pixels; ties go to the
/// lowest t. Pooled means one confusion over all maps, not a mean of
/// per-map F1 scores.
pub fn select_threshold(scores: &[ScoreMap], labels: &[MaskPlane]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::BadInput("select_threshold needs at least one score map".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::BadInput(format!(
            "{} score maps vs {} label planes",
            scores.len(),
            labels.len()
        )));
    }
    let mut positives = 0u64;
    for (score, label) in scores.iter().zip(labels) {
        if score.width() != label.width() || score.height() != label.height() {
            return Err(Error::DimensionMismatch(format!(
                "score map {}x{} vs label {}x{}",
                score.width(),
                score.height(),
                label.width(),
                label.height()
            )));
        }
        for y in 0..score.height() {
            for x in 0..score.width() {
                if score.valid.get(x, y) && label.get(x, y) {
                    positives += 1;
                }
            }
        }
    }
    if positives == 0 {
        return Err(Error::Degenerate("labels have no positive valid pixels; F1 undefined".into()));
    }

    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_t = -1.0;
    for t in threshold_grid() {
        let f1 = pooled_f1_at(scores, labels, t);
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// Pooled F1 of (score >= t) vs labels over valid pixels. Callers guarantee
/// at least one positive label, so 2tp+fp+fn > 0.
fn pooled_f1_at(scores: &[ScoreMap], labels: &[MaskPlane], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_count) = (0u64, 0u64, 0u64);
    for (score, label) in scores.iter().zip(labels) {
        for y in 0..score.height() {
            for x in 0..score.width() {
                if !score.valid.get(x, y) {
                    continue;
                }
                let pred = score.values.get(x, y) as f64 >= t;
                match (pred, label.get(x, y)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_count += 1,
                    (false, false) => {}
                }
            }
        }
    }
    2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::{MaskPlane, Plane};
    use crate::rng::CounterRng;

    fn score_map(values: Vec<f32>, w: usize, h: usize) -> ScoreMap {
        ScoreMap::from_parts(Plane::from_vec(w, h, values).unwrap(), MaskPlane::ones(w, h)).unwrap()
    }

    fn tile_with(green: f32, swir1: f32) -> TileStack {
        let mut bands: [Plane<f32>; 6] = std::array::from_fn(|_| Plane::filled(1, 1, 0.1f32));
        bands[Band::Green.index()] = Plane::filled(1, 1, green);
        bands[Band::Swir1.index()] = Plane::filled(1, 1, swir1);
        TileStack::from_parts(30.0, bands, MaskPlane::ones(1, 1)).unwrap()
    }

    #[test]
    fn mndwi_matches_hand_computed_values() {
        let map = mndwi(&tile_with(0.2, 0.1));
        assert!((map.values().get(0, 0) - 1.0 / 3.0).abs() < 1e-6);
        assert!(map.valid().get(0, 0));

        let map = mndwi(&tile_with(0.3, 0.3));
        assert_eq!(map.values().get(0, 0), 0.0);

        let map = mndwi(&tile_with(0.1, 0.0));
        assert_eq!(map.values().get(0, 0), 1.0);

        let map = mndwi(&tile_with(0.0, 0.0));
        assert!(!map.valid().get(0, 0), "0/0 pixel must be invalid");
    }

    #[test]
    fn mndwi_is_antisymmetric_under_band_swap() {
        let mut rng = CounterRng::new(31);
        for _ in 0..200 {
            let g = rng.next_f32();
            let s = rng.next_f32();
            if g + s <= 0.0 {
                continue;
            }
            let a = mndwi(&tile_with(g, s)).values().get(0, 0);
            let b = mndwi(&tile_with(s, g)).values().get(0, 0);
            assert_eq!(a, -b, "g={g} s={s}");
        }
    }

    /// Brute-force mirror of the production code: same histogram, but each
    /// candidate split recomputed from scratch.
    fn otsu_by_exhaustive_scan(score: &ScoreMap, bins: usize) -> f64 {
        let hist = ScoreHistogram::build(score, bins).unwrap();
        let total: u64 = hist.counts.iter().sum();
        let grand_sum: f64 = hist.sums.iter().sum();
        let mut best = (f64::NEG_INFINITY, hist.min);
        for i in 1..bins {
            let mut count_lo = 0u64;
            let mut sum_lo = 0f64;
            for j in 0..i {
                count_lo += hist.counts[j];
                sum_lo += hist.sums[j];
            }
            let count_hi = total - count_lo;
            if count_lo == 0 || count_hi == 0 {
                continue;
            }
            let w_lo = count_lo as f64 / total as f64;
            let w_hi = count_hi as f64 / total as f64;
            let d = sum_lo / count_lo as f64 - (grand_sum - sum_lo) / count_hi as f64;
            let v = w_lo * w_hi * d * d;
            if v > best.0 {
                best = (v, hist.boundary(i));
            }
        }
        best.1
    }

    #[test]
    fn otsu_separates_a_two_level_map() {
        let values = vec![0.0f32, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let t = otsu_threshold(&score_map(values, 5, 2), 2).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn otsu_two_bins_split_is_midpoint_even_when_lopsided() {
        let mut values = vec![0.0f32; 9];
        values.push(1.0);
        let t = otsu_threshold(&score_map(values, 5, 2), 2).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn otsu_rejects_constant_input() {
        let err = otsu_threshold(&score_map(vec![0.7f32; 8], 4, 2), 256).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn otsu_equals_exhaustive_scan_on_random_maps() {
        let mut rng = CounterRng::new(404);
        for round in 0..50 {
            let values: Vec<f32> = (0..256).map(|_| rng.next_f32() * 2.0 - 1.0).collect();
            let map = score_map(values, 16, 16);
            for bins in [2, 16, 256] {
                let fast = otsu_threshold(&map, bins).unwrap();
                let slow = otsu_by_exhaustive_scan(&map, bins);
                assert_eq!(fast, slow, "round {round}, bins {bins}");
            }
        }
    }

    fn labels(values: Vec<u8>, w: usize, h: usize) -> MaskPlane {
        MaskPlane::from_vec(w, h, values).unwrap()
    }

    #[test]
    fn perfectly_separating_scores_select_the_lowest_strict_grid_point() {
        let s = score_map(vec![0.0, 0.0, 1.0, 1.0], 2, 2);
        let l = labels(vec![0, 0, 1, 1], 2, 2);
        let t = select_threshold(&[s], &[l]).unwrap();
        assert_eq!(t, 0.01);
    }

    #[test]
    fn interior_gap_selects_first_grid_point_above_the_negatives() {
        let s = score_map(vec![0.1, 0.2, 0.8, 0.9], 2, 2);
        let l = labels(vec![0, 0, 1, 1], 2, 2);
        let t = select_threshold(&[s], &[l]).unwrap();
        assert_eq!(t, 0.21);
    }

    #[test]
    fn selected_threshold_beats_every_other_grid_point() {
        let mut rng = CounterRng::new(77);
        let values: Vec<f32> = (0..64).map(|_| rng.next_f32() * 2.0 - 1.0).collect();
        let lab: Vec<u8> = (0..64).map(|_| (rng.next_f64() < 0.4) as u8).collect();
        let s = score_map(values, 8, 8);
        let l = labels(lab, 8, 8);
        let t = select_threshold(&[s.clone()], &[l.clone()]).unwrap();
        let best = pooled_f1_at(&[s.clone()], &[l.clone()], t);
        for other in threshold_grid() {
            assert!(
                best >= pooled_f1_at(&[s.clone()], &[l.clone()], other),
                "t={t} beaten by {other}"
            );
        }
    }

    #[test]
    fn anti_correlated_scores_still_return_the_best_grid_point() {
        let s = score_map(vec![1.0, 1.0, 0.0, 0.0], 2, 2);
        let l = labels(vec![0, 0, 1, 1], 2, 2);
        let t = select_threshold(&[s.clone()], &[l.clone()]).unwrap();
        let best = pooled_f1_at(&[s.clone()], &[l.clone()], t);
        for other in threshold_grid() {
            assert!(best >= pooled_f1_at(&[s.clone()], &[l.clone()], other));
        }
        // Predicting everything water (t = -1) is the only way to catch the
        // positives here, so the sweep must land at the bottom of the grid.
        assert_eq!(t, -1.0);
    }

    #[test]
    fn select_threshold_rejects_empty_and_positiveless_inputs() {
        assert!(select_threshold(&[], &[]).is_err());
        let s = score_map(vec![0.5, 0.5], 2, 1);
        let l = labels(vec![0, 0], 2, 1);
        let err = select_threshold(&[s], &[l]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn apply_threshold_respects_validity() {
        let mut valid = MaskPlane::ones(2, 1);
        valid.set(1, 0, false);
        let map =
            ScoreMap::from_parts(Plane::from_vec(2, 1, vec![0.9, 0.9]).unwrap(), valid).unwrap();
        let mask = map.apply_threshold(0.5);
        assert!(mask.get(0, 0));
        assert!(!mask.get(1, 0), "invalid pixels never classify as water");
    }
}
