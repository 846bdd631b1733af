//! Seeded synthetic scene generator.
//!
//! Scenes are built from smooth value-noise fields: one per label class
//! (thresholded at the quantile matching its target area fraction), one for
//! the DEM, one for land texture, and one for water turbidity. Overlapping
//! class blobs resolve by occlusion priority cloud > snow/ice >
//! cloud shadow > water — a pixel gets exactly one of those labels — while
//! terrain shadow is computed geometrically from the generated DEM and the
//! scene's solar position, so it may overlap anything.
//!
//! Band values follow per-class reflectance priors chosen so the classes
//! are spectrally plausible: water is dark in shortwave infrared and
//! brightens in red with turbidity, clouds are bright everywhere, snow is
//! bright in the visible but dark in SWIR (which is why a green/SWIR water
//! index confuses the two), and both shadow kinds multiply the underlying
//! surface down, terrain shadow less severely than cloud shadow.
//!
//! Everything is a pure function of [`SceneConfig`]; the same config yields
//! bit-identical planes and sediment samples.

use crate::fusion;
use crate::plane::{MaskPlane, Plane};
use crate::raster::{Band, Dem, MaskKind, MaskSet, SceneConfig, SscSample, TileStack};
use crate::rng::CounterRng;
use crate::solar::{solar_position, terrain_shadow, ObservationMeta, SolarPosition};
use crate::Result;

/// Land reflectance prior per band (blue, green, red, nir, swir1, swir2).
const LAND_BASE: [f64; 6] = [0.06, 0.10, 0.12, 0.30, 0.22, 0.15];
/// Land texture swing per band, scaled by a [-1, 1] noise field.
const LAND_TEXTURE: [f64; 6] = [0.02, 0.03, 0.05, 0.08, 0.06, 0.04];
/// Clear-water reflectance prior.
const WATER_BASE: [f64; 6] = [0.08, 0.10, 0.05, 0.02, 0.012, 0.008];
/// Added per unit of turbidity: sediment brightens red most, then green/nir.
const WATER_TURBIDITY: [f64; 6] = [0.01, 0.04, 0.22, 0.05, 0.0, 0.0];
/// Snow: bright visible, dark shortwave infrared.
const SNOW_BASE: [f64; 6] = [0.65, 0.60, 0.55, 0.45, 0.08, 0.06];
/// Cloud brightness floor; texture adds up to CLOUD_TEXTURE on top.
const CLOUD_FLOOR: f64 = 0.55;
const CLOUD_TEXTURE: f64 = 0.15;
/// Multiplicative darkening of the underlying surface.
const CLOUD_SHADOW_FACTOR: f64 = 0.30;
const TERRAIN_SHADOW_FACTOR: f64 = 0.55;
/// DEM valley floor in metres; relief is added on top.
const DEM_BASE_M: f64 = 500.0;

/// Sediment truth: ssc = SSC_SCALE · exp(SSC_RED_GAIN · μ_red) · exp(σ·ε),
/// where μ_red is the mean red reflectance over good-water pixels within
/// the feature window and ε is standard normal. Red reflectance is the
/// physical proxy — suspended sediment backscatters red light — and the
/// exponential keeps truth positive across three decades of concentration.
const SSC_SCALE: f64 = 2.0;
const SSC_RED_GAIN: f64 = 18.0;
const SSC_NOISE_SIGMA: f64 = 0.12;
/// A sample location must have at least this many good pixels nearby for
/// its window statistics to be meaningful.
const SSC_MIN_WINDOW_PIXELS: usize = 12;

/// Observation metadata (and hence solar geometry) of a configured scene.
pub fn observation(config: &SceneConfig) -> Result<ObservationMeta> {
    ObservationMeta::from_rfc3339(&config.timestamp_utc, config.latitude, config.longitude)
}

/// Smooth multi-octave value noise in roughly [-1, 1]: random lattice
/// values interpolated with a smoothstep kernel, halving cell size and
/// amplitude per octave.
fn value_noise(rng: &CounterRng, label: &str, w: usize, h: usize, scale_px: f64, octaves: usize) -> Plane<f32> {
    let mut field = Plane::filled(w, h, 0.0f32);
    for octave in 0..octaves {
        let cell = (scale_px / (1 << octave) as f64).max(2.0);
        let nx = (w as f64 / cell).ceil() as usize + 2;
        let ny = (h as f64 / cell).ceil() as usize + 2;
        let mut lattice_rng = rng.stream(label).stream_u64(octave as u64);
        let lattice: Vec<f64> = (0..nx * ny).map(|_| lattice_rng.uniform(-1.0, 1.0)).collect();
        let amplitude = 0.5f64.powi(octave as i32);
        for y in 0..h {
            let gy = y as f64 / cell;
            let iy = gy.floor() as usize;
            let fy = gy - iy as f64;
            let sy = fy * fy * (3.0 - 2.0 * fy);
            for x in 0..w {
                let gx = x as f64 / cell;
                let ix = gx.floor() as usize;
                let fx = gx - ix as f64;
                let sx = fx * fx * (3.0 - 2.0 * fx);
                let v00 = lattice[iy * nx + ix];
                let v10 = lattice[iy * nx + ix + 1];
                let v01 = lattice[(iy + 1) * nx + ix];
                let v11 = lattice[(iy + 1) * nx + ix + 1];
                let top = v00 * (1.0 - sx) + v10 * sx;
                let bot = v01 * (1.0 - sx) + v11 * sx;
                let v = top * (1.0 - sy) + bot * sy;
                let cur = field.get(x, y);
                field.set(x, y, cur + (v * amplitude) as f32);
            }
        }
    }
    field
}

/// Threshold a noise field at the quantile that sets `fraction` of pixels.
fn blob_mask(field: &Plane<f32>, fraction: f64) -> MaskPlane {
    let (w, h) = (field.width(), field.height());
    if fraction <= 0.0 {
        return MaskPlane::zeros(w, h);
    }
    let mut sorted: Vec<f32> = field.as_slice().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("noise is finite"));
    let idx = ((1.0 - fraction) * sorted.len() as f64).floor() as usize;
    let q = sorted[idx.min(sorted.len() - 1)];
    let mut mask = MaskPlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, field.get(x, y) >= q);
        }
    }
    mask
}

/// Generate one scene: reflectance tile, label masks, DEM, and sediment
/// ground truth samples.
pub fn generate_scene(
    config: &SceneConfig,
) -> Result<(TileStack, MaskSet, Dem, Vec<SscSample>)> {
    config.validate()?;
    let meta = observation(config)?;
    let sun = solar_position(&meta);
    let (w, h) = (config.width, config.height);
    let rng = CounterRng::new(config.seed);

    // Terrain: broad ridges at twice the blob scale.
    let dem_field = value_noise(&rng, "dem", w, h, config.blob_scale_px * 2.0, 3);
    let dem = {
        let lo = dem_field.as_slice().iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = dem_field.as_slice().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let span = (hi - lo).max(f64::EPSILON);
        let mut elevation = Plane::filled(w, h, 0.0f32);
        for y in 0..h {
            for x in 0..w {
                let t = (dem_field.get(x, y) as f64 - lo) / span;
                elevation.set(x, y, (DEM_BASE_M + config.relief_m * t) as f32);
            }
        }
        Dem::new(config.pixel_size, elevation)?
    };

    // Class blobs, then the occlusion priority.
    let water_raw = blob_mask(&value_noise(&rng, "water", w, h, config.blob_scale_px, 2), config.water_fraction);
    let cloud_raw = blob_mask(&value_noise(&rng, "cloud", w, h, config.blob_scale_px, 2), config.cloud_fraction);
    let shadow_raw = blob_mask(
        &value_noise(&rng, "cloud_shadow", w, h, config.blob_scale_px, 2),
        config.cloud_shadow_fraction,
    );
    let snow_raw = blob_mask(&value_noise(&rng, "snow", w, h, config.blob_scale_px, 2), config.snow_fraction);

    let mut masks = MaskSet::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let kind = if cloud_raw.get(x, y) {
                Some(MaskKind::Cloud)
            } else if snow_raw.get(x, y) {
                Some(MaskKind::SnowIce)
            } else if shadow_raw.get(x, y) {
                Some(MaskKind::CloudShadow)
            } else if water_raw.get(x, y) {
                Some(MaskKind::Water)
            } else {
                None
            };
            if let Some(kind) = kind {
                masks.get_mut(kind).set(x, y, true);
            }
        }
    }
    *masks.get_mut(MaskKind::TerrainShadow) = terrain_shadow(&dem, &sun);

    // Validity: a strip of no-data rows along the northern edge.
    let invalid_rows = (config.invalid_border_fraction * h as f64).floor() as usize;
    let mut valid = MaskPlane::ones(w, h);
    for y in 0..invalid_rows.min(h) {
        for x in 0..w {
            valid.set(x, y, false);
        }
    }

    // Reflectances.
    let land_texture = value_noise(&rng, "land_texture", w, h, config.blob_scale_px * 1.5, 3);
    let turbidity_field = value_noise(&rng, "turbidity", w, h, config.blob_scale_px * 1.5, 2);
    let mut noise_rng = rng.stream("noise");
    let mut bands: [Plane<f32>; 6] = std::array::from_fn(|_| Plane::filled(w, h, 0.0f32));
    for y in 0..h {
        for x in 0..w {
            let texture = land_texture.get(x, y) as f64;
            let turbidity = (turbidity_field.get(x, y) as f64 + 1.0) / 2.0;
            let underlying: [f64; 6] = if water_raw.get(x, y) {
                std::array::from_fn(|b| WATER_BASE[b] + WATER_TURBIDITY[b] * turbidity)
            } else {
                std::array::from_fn(|b| LAND_BASE[b] + LAND_TEXTURE[b] * texture)
            };
            let mut value: [f64; 6] = if masks.get(MaskKind::Cloud).get(x, y) {
                [CLOUD_FLOOR + CLOUD_TEXTURE * texture.abs(); 6]
            } else if masks.get(MaskKind::SnowIce).get(x, y) {
                std::array::from_fn(|b| SNOW_BASE[b] + if b < 3 { 0.05 * texture } else { 0.0 })
            } else if masks.get(MaskKind::CloudShadow).get(x, y) {
                std::array::from_fn(|b| underlying[b] * CLOUD_SHADOW_FACTOR)
            } else {
                underlying
            };
            // Terrain shadow dims everything below the clouds.
            if masks.get(MaskKind::TerrainShadow).get(x, y) && !masks.get(MaskKind::Cloud).get(x, y) {
                for v in &mut value {
                    *v *= TERRAIN_SHADOW_FACTOR;
                }
            }
            for (b, plane) in bands.iter_mut().enumerate() {
                let noisy = value[b] + config.noise_amplitude * noise_rng.normal();
                let stored = if valid.get(x, y) { noisy.clamp(0.0, 1.0) as f32 } else { 0.0 };
                plane.set(x, y, stored);
            }
        }
    }
    let tile = TileStack::from_parts(config.pixel_size, bands, valid)?;

    // Sediment ground truth over good water.
    let good = fusion::fuse_good_water(&masks, tile.valid())?;
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if good.get(x, y) {
                candidates.push((x, y));
            }
        }
    }
    let mut samples = Vec::new();
    let mut ssc_rng = rng.stream("ssc");
    if config.ssc_samples > 0 && !candidates.is_empty() {
        // Visit candidates at an even stride so samples spread over the
        // scene instead of clustering in the first water blob.
        let stride = (candidates.len() / (config.ssc_samples * 4 + 1)).max(1);
        for &(x, y) in candidates.iter().step_by(stride) {
            if samples.len() == config.ssc_samples {
                break;
            }
            let features = match fusion::extract_features(&tile, &good, x, y) {
                Ok(f) => f,
                Err(_) => continue,
            };
            if features.good_count < SSC_MIN_WINDOW_PIXELS {
                continue;
            }
            let mean_red = features.bands[Band::Red.index()].mean;
            let ssc = SSC_SCALE
                * (SSC_RED_GAIN * mean_red).exp()
                * (SSC_NOISE_SIGMA * ssc_rng.normal()).exp();
            samples.push(SscSample { x, y, ssc_mg_per_l: ssc });
        }
    }

    Ok((tile, masks, dem, samples))
}

/// The solar position a configured scene is generated under.
pub fn scene_sun(config: &SceneConfig) -> Result<SolarPosition> {
    Ok(solar_position(&observation(config)?))
}
