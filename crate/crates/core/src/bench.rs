//! Instrumented comparison of the two masking pipelines.
//!
//! The **standard** variant plays the role of a conventional multi-source
//! chain: it estimates the sun position, acquires four spectral-rule masks
//! independently (stand-ins for separate products — see the rules below),
//! ray-casts terrain shadow from the DEM, then pays a simulated
//! cross-source alignment cost (each mask is bilinearly resampled through
//! a one-pixel synthetic offset grid, standing in for the reprojections a
//! real pipeline performs) before fusing and extracting features. The
//! **multitask** variant runs one model forward pass for all five masks on
//! the shared grid — no alignment — then fuses and extracts.
//!
//! Stand-in mask rules (cost-realistic, *not* accuracy-comparable):
//! water by green/SWIR index at threshold 0; cloud where the six-band mean
//! exceeds 0.4; cloud shadow where it falls below 0.08; snow where green
//! is bright but SWIR1 dark (green − swir1 > 0.35 and green > 0.3).
//!
//! Every stage is timed with the monotonic clock into disjoint buckets, a
//! warm-up pass over the first scene is excluded, and peak memory comes
//! from the metered allocator when a binary installs it (the process
//! high-water mark from the OS is the labeled fallback). Parallel runs
//! exist for throughput experiments but their reports are flagged
//! non-comparable — stage sums across threads are CPU time, not wall time.

use std::time::Instant;

use serde::Serialize;

use crate::baselines::mndwi;
use crate::fusion::{extract_features, fuse_good_water};
use crate::net::{predict_bundle, ModelBundle};
use crate::plane::MaskPlane;
use crate::raster::{Band, MaskSet, SceneConfig, TileStack};
use crate::raster::{synth, Dem};
use crate::solar::{solar_position, terrain_shadow, ObservationMeta};
use crate::{Error, Result};

pub mod memory {
    //! Peak-memory accounting.
    //!
    //! [`MeteredAllocator`] wraps the system allocator and tracks live and
    //! peak bytes; a binary opts in with `#[global_allocator]`. When no
    //! binary installed it (the peak counter never moved), [`measure`]
    //! falls back to the kernel's process high-water mark, which is
    //! monotone over the whole process — the report labels which source
    //! produced the number.

    use std::alloc::{GlobalAlloc, Layout, System};
    use std::sync::atomic::{AtomicU64, Ordering};

    static CURRENT: AtomicU64 = AtomicU64::new(0);
    static PEAK: AtomicU64 = AtomicU64::new(0);

    pub struct MeteredAllocator;

    // SAFETY: delegates every operation to the system allocator; the
    // bookkeeping never touches the returned memory.
    unsafe impl GlobalAlloc for MeteredAllocator {
        unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
            let p = System.alloc(layout);
            if !p.is_null() {
                let live = CURRENT.fetch_add(layout.size() as u64, Ordering::Relaxed)
                    + layout.size() as u64;
                PEAK.fetch_max(live, Ordering::Relaxed);
            }
            p
        }

        unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
            System.dealloc(ptr, layout);
            CURRENT.fetch_sub(layout.size() as u64, Ordering::Relaxed);
        }
    }

    /// Restart peak tracking from the current live volume.
    pub fn reset_peak() {
        PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    /// Peak bytes plus the label of the source that measured them.
    pub fn measure() -> (u64, &'static str) {
        let peak = PEAK.load(Ordering::Relaxed);
        if peak > 0 {
            return (peak, "allocator");
        }
        match rss_high_water() {
            Some(bytes) => (bytes, "rss_high_water"),
            None => (0, "unavailable"),
        }
    }

    fn rss_high_water() -> Option<u64> {
        let status = std::fs::read_to_string("/proc/self/status").ok()?;
        for line in status.lines() {
            if let Some(rest) = line.strip_prefix("VmHWM:") {
                let kb: u64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
                return Some(kb * 1024);
            }
        }
        None
    }
}

/// Disjoint per-stage wall-clock buckets, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub sun_position: f64,
    pub mask_acquisition: f64,
    pub terrain_shadow: f64,
    pub mask_combination: f64,
    pub feature_extraction: f64,
}

impl StageTimings {
    pub fn sum(&self) -> f64 {
        self.sun_position
            + self.mask_acquisition
            + self.terrain_shadow
            + self.mask_combination
            + self.feature_extraction
    }

    fn merge(&mut self, other: &StageTimings) {
        self.sun_position += other.sun_position;
        self.mask_acquisition += other.mask_acquisition;
        self.terrain_shadow += other.terrain_shadow;
        self.mask_combination += other.mask_combination;
        self.feature_extraction += other.feature_extraction;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub variant: String,
    pub scene_count: usize,
    pub stages: StageTimings,
    pub total_seconds: f64,
    pub peak_memory_bytes: u64,
    pub memory_source: String,
    /// Model forward passes executed (multitask: exactly one per scene).
    pub forward_passes: u64,
    /// Independent mask computations executed (standard: five per scene).
    pub mask_computations: u64,
    /// False for parallel runs, whose stage sums are CPU time.
    pub comparable: bool,
    pub machine: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Standard,
    MultiTask,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::MultiTask => "multitask",
        }
    }
}

/// One benchmark input: imagery, terrain, acquisition metadata, and the
/// locations where features are extracted.
#[derive(Debug, Clone)]
pub struct BenchScene {
    pub tile: TileStack,
    pub dem: Dem,
    pub meta: ObservationMeta,
    pub locations: Vec<(usize, usize)>,
}

/// Build one benchmark scene from a generator config; feature locations
/// are the scene's sediment sample sites.
pub fn scene_from_config(config: &SceneConfig) -> Result<BenchScene> {
    let (tile, _, dem, samples) = synth::generate_scene(config)?;
    Ok(BenchScene {
        tile,
        dem,
        meta: synth::observation(config)?,
        locations: samples.iter().map(|s| (s.x, s.y)).collect(),
    })
}

/// `n` clones of one scene — benchmark sets deliberately repeat identical
/// work so run-to-run variance comes from the machine, not the data.
pub fn replicate(scene: &BenchScene, n: usize) -> Vec<BenchScene> {
    (0..n).map(|_| scene.clone()).collect()
}

fn brightness_mask(tile: &TileStack, above: Option<f64>, below: Option<f64>) -> MaskPlane {
    let (w, h) = (tile.width(), tile.height());
    let mut out = MaskPlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !tile.valid().get(x, y) {
                continue;
            }
            let mut mean = 0.0f64;
            for b in Band::ALL {
                mean += tile.band(b).get(x, y) as f64;
            }
            mean /= Band::ALL.len() as f64;
            let hit = above.map_or(true, |t| mean > t) && below.map_or(true, |t| mean < t);
            out.set(x, y, hit);
        }
    }
    out
}

fn snow_mask(tile: &TileStack) -> MaskPlane {
    let (w, h) = (tile.width(), tile.height());
    let mut out = MaskPlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !tile.valid().get(x, y) {
                continue;
            }
            let green = tile.band(Band::Green).get(x, y) as f64;
            let swir = tile.band(Band::Swir1).get(x, y) as f64;
            out.set(x, y, green - swir > 0.35 && green > 0.3);
        }
    }
    out
}

/// The simulated alignment: resample a mask through a smooth ±1 px offset
/// field (phase-shifted per source) and re-binarize.
fn align_mask(mask: &MaskPlane, phase: f64) -> MaskPlane {
    let plane = mask.to_f32_plane();
    let (w, h) = (mask.width(), mask.height());
    let mut out = MaskPlane::zeros(w, h);
    let tau = std::f64::consts::TAU;
    for y in 0..h {
        for x in 0..w {
            let ox = (tau * y as f64 / h as f64 + phase).sin();
            let oy = (tau * x as f64 / w as f64 + phase).cos();
            let v = plane.sample_bilinear(x as f64 - ox, y as f64 - oy);
            out.set(x, y, v >= 0.5);
        }
    }
    out
}

struct SceneOutcome {
    stages: StageTimings,
    forward_passes: u64,
    mask_computations: u64,
}

fn run_scene(
    variant: Variant,
    scene: &BenchScene,
    model: Option<&ModelBundle>,
) -> Result<SceneOutcome> {
    let mut stages = StageTimings::default();
    let mut forward_passes = 0;
    let mut mask_computations = 0;

    let masks = match variant {
        Variant::Standard => {
            let t = Instant::now();
            let sun = solar_position(&scene.meta);
            stages.sun_position += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let water = mndwi(&scene.tile).apply_threshold(0.0);
            let cloud = brightness_mask(&scene.tile, Some(0.4), None);
            let dark = brightness_mask(&scene.tile, None, Some(0.08));
            let snow = snow_mask(&scene.tile);
            mask_computations += 4;
            stages.mask_acquisition += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let shadow = terrain_shadow(&scene.dem, &sun);
            mask_computations += 1;
            stages.terrain_shadow += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let aligned: Vec<MaskPlane> = [water, cloud, dark, snow, shadow]
                .iter()
                .enumerate()
                .map(|(i, m)| align_mask(m, 0.7 * i as f64))
                .collect();
            let set = MaskSet::from_planes(aligned.try_into().expect("five masks"))?;
            let good = fuse_good_water(&set, scene.tile.valid())?;
            stages.mask_combination += t.elapsed().as_secs_f64();
            (set, good)
        }
        Variant::MultiTask => {
            let bundle = model.ok_or_else(|| {
                Error::BadInput("the multitask variant requires a model checkpoint".into())
            })?;
            let t = Instant::now();
            let set = predict_bundle(bundle, &scene.tile)?;
            forward_passes += 1;
            stages.mask_acquisition += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let good = fuse_good_water(&set, scene.tile.valid())?;
            stages.mask_combination += t.elapsed().as_secs_f64();
            (set, good)
        }
    };

    let (_, good) = masks;
    let t = Instant::now();
    for &(x, y) in &scene.locations {
        // Locations with no good water under the computed masks are a
        // legitimate outcome here, not a failure.
        if let Ok(f) = extract_features(&scene.tile, &good, x, y) {
            std::hint::black_box(f.good_count);
        }
    }
    stages.feature_extraction += t.elapsed().as_secs_f64();

    Ok(SceneOutcome { stages, forward_passes, mask_computations })
}

fn machine_descriptor() -> String {
    let threads =
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{}-{}, {} hardware threads",
        std::env::consts::OS,
        std::env::consts::ARCH,
        threads
    )
}

/// Execute one variant over a scene set and report per-stage timings,
/// counters, and peak memory. `jobs > 1` fans scenes across threads and
/// marks the report non-comparable.
pub fn run_pipeline(
    variant: Variant,
    scenes: &[BenchScene],
    model: Option<&ModelBundle>,
    jobs: usize,
) -> Result<BenchReport> {
    if scenes.is_empty() {
        return Err(Error::BadInput("benchmark needs at least one scene".into()));
    }
    if variant == Variant::MultiTask && model.is_none() {
        return Err(Error::BadInput("the multitask variant requires a model checkpoint".into()));
    }
    let jobs = jobs.max(1);

    // Warm-up pass: touches code paths and caches, excluded from timing.
    run_scene(variant, &scenes[0], model)?;

    memory::reset_peak();
    let wall = Instant::now();
    let mut stages = StageTimings::default();
    let mut forward_passes = 0;
    let mut mask_computations = 0;
    if jobs == 1 {
        for scene in scenes {
            let out = run_scene(variant, scene, model)?;
            stages.merge(&out.stages);
            forward_passes += out.forward_passes;
            mask_computations += out.mask_computations;
        }
    } else {
        let chunk = scenes.len().div_ceil(jobs);
        let results: Vec<Result<Vec<SceneOutcome>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = scenes
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || part.iter().map(|s| run_scene(variant, s, model)).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
        });
        for chunk in results {
            for out in chunk? {
                stages.merge(&out.stages);
                forward_passes += out.forward_passes;
                mask_computations += out.mask_computations;
            }
        }
    }
    let total_seconds = wall.elapsed().as_secs_f64();
    let (peak_memory_bytes, memory_source) = memory::measure();

    Ok(BenchReport {
        variant: variant.name().into(),
        scene_count: scenes.len(),
        stages,
        total_seconds,
        peak_memory_bytes,
        memory_source: memory_source.into(),
        forward_passes,
        mask_computations,
        comparable: jobs == 1,
        machine: machine_descriptor(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Speedup {
    /// standard total / multitask total.
    pub ratio: f64,
    /// (1 − multitask/standard) · 100.
    pub improvement_percent: f64,
}

pub fn speedup(standard: &BenchReport, multitask: &BenchReport) -> Result<Speedup> {
    if standard.scene_count != multitask.scene_count {
        return Err(Error::BadInput(format!(
            "scene sets differ: {} vs {} scenes",
            standard.scene_count, multitask.scene_count
        )));
    }
    if standard.total_seconds <= 0.0 || multitask.total_seconds <= 0.0 {
        return Err(Error::BadInput("totals must be positive to compare".into()));
    }
    Ok(Speedup {
        ratio: standard.total_seconds / multitask.total_seconds,
        improvement_percent: (1.0 - multitask.total_seconds / standard.total_seconds) * 100.0,
    })
}

/// Flat CSV with one row per report; columns follow the stage order.
pub fn reports_to_csv(reports: &[&BenchReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "scenes",
        "sun_position_s",
        "mask_acquisition_s",
        "terrain_shadow_s",
        "mask_combination_s",
        "feature_extraction_s",
        "total_s",
        "peak_memory_bytes",
        "memory_source",
        "forward_passes",
        "mask_computations",
        "comparable",
        "machine",
    ])
    .map_err(|e| Error::BadInput(format!("csv write failed: {e}")))?;
    for r in reports {
        w.write_record([
            r.variant.clone(),
            r.scene_count.to_string(),
            format!("{:.6}", r.stages.sun_position),
            format!("{:.6}", r.stages.mask_acquisition),
            format!("{:.6}", r.stages.terrain_shadow),
            format!("{:.6}", r.stages.mask_combination),
            format!("{:.6}", r.stages.feature_extraction),
            format!("{:.6}", r.total_seconds),
            r.peak_memory_bytes.to_string(),
            r.memory_source.clone(),
            r.forward_passes.to_string(),
            r.mask_computations.to_string(),
            r.comparable.to_string(),
            r.machine.clone(),
        ])
        .map_err(|e| Error::BadInput(format!("csv write failed: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::BadInput(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::BadInput(format!("csv not utf-8: {e}")))
}
