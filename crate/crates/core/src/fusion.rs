//! Mask fusion and per-location feature extraction for sediment estimation.
//!
//! A pixel is *good-quality water* when the scene has data there, the water
//! mask is set, and none of the artifact masks (cloud, cloud shadow,
//! snow/ice, terrain shadow) are. Sediment features summarize the six
//! reflectance bands over the good-water pixels within 300 m of a sample
//! location.

use crate::error::Error;
use crate::plane::MaskPlane;
use crate::raster::{Band, MaskKind, MaskSet, TileStack};
use crate::Result;

/// Feature window radius around a sample location, metres.
pub const WINDOW_RADIUS_M: f64 = 300.0;

/// Scenes whose cloud fraction exceeds this are unusable for fitting.
pub const MAX_CLOUD_FRACTION: f64 = 0.30;

/// good = valid ∧ water ∧ ¬cloud ∧ ¬cloud_shadow ∧ ¬snow_ice ∧ ¬terrain_shadow
pub fn fuse_good_water(masks: &MaskSet, valid: &MaskPlane) -> Result<MaskPlane> {
    if masks.width() != valid.width() || masks.height() != valid.height() {
        return Err(Error::DimensionMismatch(format!(
            "masks {}x{} vs valid {}x{}",
            masks.width(),
            masks.height(),
            valid.width(),
            valid.height()
        )));
    }
    let (w, h) = (masks.width(), masks.height());
    let mut good = MaskPlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let g = valid.get(x, y)
                && masks.get(MaskKind::Water).get(x, y)
                && !masks.get(MaskKind::Cloud).get(x, y)
                && !masks.get(MaskKind::CloudShadow).get(x, y)
                && !masks.get(MaskKind::SnowIce).get(x, y)
                && !masks.get(MaskKind::TerrainShadow).get(x, y);
            good.set(x, y, g);
        }
    }
    Ok(good)
}

/// Whether a scene is usable for fitting: cloud fraction over valid pixels
/// must not exceed [`MAX_CLOUD_FRACTION`] (exactly 30% is still usable).
pub fn cloud_cover_filter(masks: &MaskSet, valid: &MaskPlane) -> Result<bool> {
    if masks.width() != valid.width() || masks.height() != valid.height() {
        return Err(Error::DimensionMismatch(format!(
            "masks {}x{} vs valid {}x{}",
            masks.width(),
            masks.height(),
            valid.width(),
            valid.height()
        )));
    }
    let mut valid_count = 0u64;
    let mut cloud_count = 0u64;
    let cloud = masks.get(MaskKind::Cloud);
    for y in 0..valid.height() {
        for x in 0..valid.width() {
            if valid.get(x, y) {
                valid_count += 1;
                if cloud.get(x, y) {
                    cloud_count += 1;
                }
            }
        }
    }
    if valid_count == 0 {
        return Err(Error::Degenerate("scene has zero valid pixels".into()));
    }
    Ok(cloud_count as f64 / valid_count as f64 <= MAX_CLOUD_FRACTION)
}

/// Summary statistics of one band over the window's good pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-band statistics over good-water pixels near a location: 6 bands ×
/// (mean, median, std, min, max) = 30 features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub bands: [BandStats; 6],
    pub good_count: usize,
}

/// Number of regression inputs a [`FeatureVector`] flattens to.
pub const FEATURE_DIM: usize = 30;

impl FeatureVector {
    /// Flatten in band order, `[mean, median, std, min, max]` per band.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        for s in &self.bands {
            v.extend_from_slice(&[s.mean, s.median, s.std, s.min, s.max]);
        }
        v
    }
}

/// Median by averaging the two middle order statistics (even counts).
fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn stats_of(mut values: Vec<f64>) -> BandStats {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite reflectance"));
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    BandStats {
        mean,
        median: median_of_sorted(&values),
        std: var.sqrt(),
        min: values[0],
        max: values[values.len() - 1],
    }
}

/// Extract the sediment feature vector at pixel `(cx, cy)`: statistics over
/// good pixels whose centers lie within [`WINDOW_RADIUS_M`] (Euclidean) of
/// the location's center.
pub fn extract_features(
    tile: &TileStack,
    good: &MaskPlane,
    cx: usize,
    cy: usize,
) -> Result<FeatureVector> {
    if tile.width() != good.width() || tile.height() != good.height() {
        return Err(Error::DimensionMismatch(format!(
            "tile {}x{} vs good mask {}x{}",
            tile.width(),
            tile.height(),
            good.width(),
            good.height()
        )));
    }
    if cx >= tile.width() || cy >= tile.height() {
        return Err(Error::BadInput(format!(
            "location ({cx}, {cy}) outside {}x{} tile",
            tile.width(),
            tile.height()
        )));
    }
    let ps = tile.pixel_size() as f64;
    let radius_px = (WINDOW_RADIUS_M / ps).floor() as isize; // bounding box only
    let r2_m = WINDOW_RADIUS_M * WINDOW_RADIUS_M;

    let x_lo = (cx as isize - radius_px).max(0) as usize;
    let x_hi = ((cx as isize + radius_px) as usize).min(tile.width() - 1);
    let y_lo = (cy as isize - radius_px).max(0) as usize;
    let y_hi = ((cy as isize + radius_px) as usize).min(tile.height() - 1);

    let mut members: Vec<(usize, usize)> = Vec::new();
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = (x as f64 - cx as f64) * ps;
            let dy = (y as f64 - cy as f64) * ps;
            if dx * dx + dy * dy <= r2_m && good.get(x, y) {
                members.push((x, y));
            }
        }
    }
    if members.is_empty() {
        return Err(Error::Degenerate(format!(
            "no good water pixels within {WINDOW_RADIUS_M} m of ({cx}, {cy})"
        )));
    }
    let bands = std::array::from_fn(|i| {
        let plane = tile.band(Band::ALL[i]);
        stats_of(members.iter().map(|&(x, y)| plane.get(x, y) as f64).collect())
    });
    Ok(FeatureVector { bands, good_count: members.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::Plane;
    use crate::rng::CounterRng;

    fn random_masks(seed: u64, w: usize, h: usize, density: f64) -> MaskSet {
        let mut rng = CounterRng::new(seed);
        let mut set = MaskSet::zeros(w, h);
        for kind in MaskKind::ALL {
            let plane = set.get_mut(kind);
            for y in 0..h {
                for x in 0..w {
                    plane.set(x, y, rng.next_f64() < density);
                }
            }
        }
        set
    }

    #[test]
    fn clean_water_is_good_and_any_artifact_spoils_it() {
        let mut masks = MaskSet::zeros(3, 1);
        masks.get_mut(MaskKind::Water).set(0, 0, true);
        masks.get_mut(MaskKind::Water).set(1, 0, true);
        masks.get_mut(MaskKind::Cloud).set(1, 0, true);
        let good = fuse_good_water(&masks, &MaskPlane::ones(3, 1)).unwrap();
        assert!(good.get(0, 0));
        assert!(!good.get(1, 0), "cloud over water is not good");
        assert!(!good.get(2, 0), "dry land is not good water");
    }

    #[test]
    fn fusion_matches_boolean_oracle_on_random_masks() {
        let masks = random_masks(17, 12, 12, 0.35);
        let mut valid = MaskPlane::ones(12, 12);
        valid.set(3, 3, false);
        let good = fuse_good_water(&masks, &valid).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let expect = valid.get(x, y)
                    && masks.get(MaskKind::Water).get(x, y)
                    && !masks.get(MaskKind::Cloud).get(x, y)
                    && !masks.get(MaskKind::CloudShadow).get(x, y)
                    && !masks.get(MaskKind::SnowIce).get(x, y)
                    && !masks.get(MaskKind::TerrainShadow).get(x, y);
                assert_eq!(good.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn flagging_an_artifact_never_adds_good_pixels() {
        let mut masks = random_masks(5, 8, 8, 0.3);
        let valid = MaskPlane::ones(8, 8);
        let before = fuse_good_water(&masks, &valid).unwrap();
        masks.get_mut(MaskKind::TerrainShadow).set(2, 6, true);
        masks.get_mut(MaskKind::SnowIce).set(4, 1, true);
        let after = fuse_good_water(&masks, &valid).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert!(!after.get(x, y) || before.get(x, y));
            }
        }
    }

    #[test]
    fn cloud_filter_boundary_is_inclusive_at_30_percent() {
        let mut masks = MaskSet::zeros(10, 10);
        let valid = MaskPlane::ones(10, 10);
        for i in 0..30 {
            masks.get_mut(MaskKind::Cloud).set(i % 10, i / 10, true);
        }
        assert!(cloud_cover_filter(&masks, &valid).unwrap(), "exactly 30% stays usable");
        masks.get_mut(MaskKind::Cloud).set(1, 3, true); // 31st cloud pixel
        assert!(!cloud_cover_filter(&masks, &valid).unwrap(), "31% is excluded");
    }

    #[test]
    fn cloud_filter_needs_valid_pixels() {
        let masks = MaskSet::zeros(4, 4);
        let err = cloud_cover_filter(&masks, &MaskPlane::zeros(4, 4)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    fn uniform_tile(w: usize, h: usize, value: f32) -> TileStack {
        let bands: [Plane<f32>; 6] = std::array::from_fn(|_| Plane::filled(w, h, value));
        TileStack::from_parts(30.0, bands, MaskPlane::ones(w, h)).unwrap()
    }

    #[test]
    fn uniform_window_collapses_all_statistics() {
        let tile = uniform_tile(25, 25, 0.42);
        let good = MaskPlane::ones(25, 25);
        let f = extract_features(&tile, &good, 12, 12).unwrap();
        for s in &f.bands {
            assert_eq!(s.mean, 0.42f32 as f64);
            assert_eq!(s.median, 0.42f32 as f64);
            assert_eq!(s.min, s.max);
            assert_eq!(s.std, 0.0);
        }
        // Disk of radius 10 px fully inside the tile: 317 pixels.
        assert_eq!(f.good_count, 317);
    }

    #[test]
    fn clouded_window_raises_degenerate_error() {
        let tile = uniform_tile(25, 25, 0.2);
        let good = MaskPlane::zeros(25, 25);
        let err = extract_features(&tile, &good, 12, 12).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn location_outside_tile_is_rejected() {
        let tile = uniform_tile(8, 8, 0.2);
        let good = MaskPlane::ones(8, 8);
        assert!(extract_features(&tile, &good, 8, 0).is_err());
    }

    #[test]
    fn features_match_a_brute_force_disk_enumeration() {
        let mut rng = CounterRng::new(901);
        let w = 30;
        let h = 24;
        let bands: [Plane<f32>; 6] = std::array::from_fn(|_| {
            Plane::from_vec(w, h, (0..w * h).map(|_| rng.next_f32()).collect()).unwrap()
        });
        let tile = TileStack::from_parts(30.0, bands, MaskPlane::ones(w, h)).unwrap();
        let mut good = MaskPlane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                good.set(x, y, rng.next_f64() < 0.6);
            }
        }
        let (cx, cy) = (14usize, 11usize);
        let f = extract_features(&tile, &good, cx, cy).unwrap();

        // Oracle: enumerate the whole grid, keep the disk members, compute
        // the statistics from first principles.
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); 6];
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                if (dx * dx + dy * dy) * 30.0 * 30.0 <= 300.0 * 300.0 && good.get(x, y) {
                    count += 1;
                    for (i, band) in Band::ALL.iter().enumerate() {
                        values[i].push(tile.band(*band).get(x, y) as f64);
                    }
                }
            }
        }
        assert_eq!(f.good_count, count);
        for (i, vals) in values.iter().enumerate() {
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
            let var =
                sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sorted.len() as f64;
            let s = &f.bands[i];
            assert!((s.mean - mean).abs() < 1e-12, "band {i} mean");
            assert!((s.std - var.sqrt()).abs() < 1e-12, "band {i} std");
            assert_eq!(s.min, sorted[0]);
            assert_eq!(s.max, sorted[sorted.len() - 1]);
            let median = if sorted.len() % 2 == 1 {
                sorted[sorted.len() / 2]
            } else {
                0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
            };
            assert_eq!(s.median, median, "band {i} median");
        }
        assert_eq!(f.to_vec().len(), FEATURE_DIM);
    }
}
