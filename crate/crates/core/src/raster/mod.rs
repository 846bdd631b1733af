//! Scene data model: reflectance tile stacks, binary mask sets, DEMs, and
//! the synthetic scene generator configuration.
//!
//! A scene is a `width`×`height` grid at `pixel_size` metres per pixel
//! holding six reflectance bands in the fixed order blue, green, red, nir,
//! swir1, swir2 plus a validity plane. Labels come as five binary masks
//! (water, cloud, cloud shadow, snow/ice, terrain shadow).

pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::plane::{MaskPlane, Plane};
use crate::Result;

/// Nominal grid resolution in metres per pixel.
pub const DEFAULT_PIXEL_SIZE: f32 = 30.0;

/// The six reflectance bands, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Blue,
    Green,
    Red,
    Nir,
    Swir1,
    Swir2,
}

impl Band {
    pub const ALL: [Band; 6] = [Band::Blue, Band::Green, Band::Red, Band::Nir, Band::Swir1, Band::Swir2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Blue => "blue",
            Band::Green => "green",
            Band::Red => "red",
            Band::Nir => "nir",
            Band::Swir1 => "swir1",
            Band::Swir2 => "swir2",
        }
    }

    pub fn from_name(name: &str) -> Option<Band> {
        Band::ALL.into_iter().find(|b| b.name() == name)
    }
}

/// One scene's six reflectance bands plus validity plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TileStack {
    pixel_size: f32,
    bands: [Plane<f32>; 6],
    valid: MaskPlane,
}

impl TileStack {
    /// Assemble from parts, checking that every plane shares one shape and
    /// that band values are finite wherever the scene is valid.
    pub fn from_parts(pixel_size: f32, bands: [Plane<f32>; 6], valid: MaskPlane) -> Result<Self> {
        if pixel_size <= 0.0 || !pixel_size.is_finite() {
            return Err(Error::BadInput(format!("pixel_size {pixel_size} must be positive")));
        }
        for (band, plane) in Band::ALL.iter().zip(&bands) {
            if plane.width() != valid.width() || plane.height() != valid.height() {
                return Err(Error::DimensionMismatch(format!(
                    "band {} is {}x{}, valid plane is {}x{}",
                    band.name(),
                    plane.width(),
                    plane.height(),
                    valid.width(),
                    valid.height()
                )));
            }
        }
        let tile = TileStack { pixel_size, bands, valid };
        for y in 0..tile.height() {
            for x in 0..tile.width() {
                if tile.valid.get(x, y) {
                    for band in Band::ALL {
                        if !tile.band(band).get(x, y).is_finite() {
                            return Err(Error::BadInput(format!(
                                "band {} has non-finite value at valid pixel ({x}, {y})",
                                band.name()
                            )));
                        }
                    }
                }
            }
        }
        Ok(tile)
    }

    pub fn width(&self) -> usize {
        self.valid.width()
    }

    pub fn height(&self) -> usize {
        self.valid.height()
    }

    pub fn pixel_size(&self) -> f32 {
        self.pixel_size
    }

    pub fn band(&self, band: Band) -> &Plane<f32> {
        &self.bands[band.index()]
    }

    pub fn bands(&self) -> &[Plane<f32>; 6] {
        &self.bands
    }

    pub fn valid(&self) -> &MaskPlane {
        &self.valid
    }
}

/// The five mask classes, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Water,
    Cloud,
    CloudShadow,
    SnowIce,
    TerrainShadow,
}

impl MaskKind {
    pub const ALL: [MaskKind; 5] = [
        MaskKind::Water,
        MaskKind::Cloud,
        MaskKind::CloudShadow,
        MaskKind::SnowIce,
        MaskKind::TerrainShadow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Water => "water",
            MaskKind::Cloud => "cloud",
            MaskKind::CloudShadow => "cloud_shadow",
            MaskKind::SnowIce => "snow_ice",
            MaskKind::TerrainShadow => "terrain_shadow",
        }
    }

    pub fn from_name(name: &str) -> Option<MaskKind> {
        MaskKind::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// The five binary mask planes of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    planes: [MaskPlane; 5],
}

impl MaskSet {
    pub fn from_planes(planes: [MaskPlane; 5]) -> Result<Self> {
        let (w, h) = (planes[0].width(), planes[0].height());
        for (kind, plane) in MaskKind::ALL.iter().zip(&planes) {
            if plane.width() != w || plane.height() != h {
                return Err(Error::DimensionMismatch(format!(
                    "mask {} is {}x{}, expected {}x{}",
                    kind.name(),
                    plane.width(),
                    plane.height(),
                    w,
                    h
                )));
            }
        }
        Ok(MaskSet { planes })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        MaskSet { planes: std::array::from_fn(|_| MaskPlane::zeros(width, height)) }
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn get(&self, kind: MaskKind) -> &MaskPlane {
        &self.planes[kind.index()]
    }

    pub fn get_mut(&mut self, kind: MaskKind) -> &mut MaskPlane {
        &mut self.planes[kind.index()]
    }

    pub fn planes(&self) -> &[MaskPlane; 5] {
        &self.planes
    }
}

/// Gridded terrain heights in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct Dem {
    pixel_size: f32,
    elevation: Plane<f32>,
}

impl Dem {
    pub fn new(pixel_size: f32, elevation: Plane<f32>) -> Result<Self> {
        if pixel_size <= 0.0 || !pixel_size.is_finite() {
            return Err(Error::BadInput(format!("pixel_size {pixel_size} must be positive")));
        }
        if elevation.is_empty() {
            return Err(Error::BadInput("DEM has zero pixels".into()));
        }
        if elevation.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::BadInput("DEM contains non-finite elevation".into()));
        }
        Ok(Dem { pixel_size, elevation })
    }

    pub fn width(&self) -> usize {
        self.elevation.width()
    }

    pub fn height(&self) -> usize {
        self.elevation.height()
    }

    pub fn pixel_size(&self) -> f32 {
        self.pixel_size
    }

    pub fn elevation(&self) -> &Plane<f32> {
        &self.elevation
    }
}

/// Ground-truth sediment concentration at one sampled water pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SscSample {
    pub x: usize,
    pub y: usize,
    pub ssc_mg_per_l: f64,
}

/// Everything the synthetic generator controls. All fields have defaults;
/// `seed` alone changes scene content, the rest shape its statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub pixel_size: f32,
    /// Target area fraction of each label class before occlusion by
    /// higher-priority classes.
    pub water_fraction: f64,
    pub cloud_fraction: f64,
    pub cloud_shadow_fraction: f64,
    pub snow_fraction: f64,
    /// Standard deviation of per-pixel reflectance noise added to every band.
    pub noise_amplitude: f64,
    /// Fraction of rows at the northern edge marked invalid (no data).
    pub invalid_border_fraction: f64,
    /// DEM peak-to-valley height range in metres.
    pub relief_m: f64,
    /// Characteristic blob diameter of the class noise fields, in pixels.
    pub blob_scale_px: f64,
    /// Number of sediment ground-truth samples to draw over water.
    pub ssc_samples: usize,
    pub latitude: f64,
    pub longitude: f64,
    /// Acquisition time, RFC 3339 UTC; fixes the solar geometry.
    pub timestamp_utc: String,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            width: 64,
            height: 64,
            pixel_size: DEFAULT_PIXEL_SIZE,
            water_fraction: 0.20,
            cloud_fraction: 0.15,
            cloud_shadow_fraction: 0.10,
            snow_fraction: 0.08,
            noise_amplitude: 0.02,
            invalid_border_fraction: 0.05,
            relief_m: 600.0,
            blob_scale_px: 24.0,
            ssc_samples: 12,
            latitude: 46.2,
            longitude: 8.9,
            timestamp_utc: "2024-10-05T10:15:00Z".to_string(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::BadInput("scene dimensions must be positive".into()));
        }
        if self.pixel_size <= 0.0 || !self.pixel_size.is_finite() {
            return Err(Error::BadInput("pixel_size must be positive".into()));
        }
        let fractions = [
            ("water_fraction", self.water_fraction),
            ("cloud_fraction", self.cloud_fraction),
            ("cloud_shadow_fraction", self.cloud_shadow_fraction),
            ("snow_fraction", self.snow_fraction),
            ("invalid_border_fraction", self.invalid_border_fraction),
        ];
        for (name, f) in fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::BadInput(format!("{name} = {f} is outside [0, 1]")));
            }
        }
        let class_sum =
            self.water_fraction + self.cloud_fraction + self.cloud_shadow_fraction + self.snow_fraction;
        if class_sum > 1.0 {
            return Err(Error::BadInput(format!(
                "infeasible class fractions: sum {class_sum:.3} exceeds 1"
            )));
        }
        if self.noise_amplitude < 0.0 || self.relief_m < 0.0 {
            return Err(Error::BadInput("noise_amplitude and relief_m must be non-negative".into()));
        }
        if self.blob_scale_px < 2.0 {
            return Err(Error::BadInput("blob_scale_px must be at least 2".into()));
        }
        Ok(())
    }
}
