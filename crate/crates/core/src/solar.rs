//! Solar geometry and DEM cast-shadow masking.
//!
//! [`solar_position`] implements the closed-form model used throughout NOAA's
//! solar calculator: Spencer's Fourier-series declination and equation of
//! time, hour angle from longitude-corrected true solar time, and the
//! spherical-triangle elevation/azimuth. Accuracy is about ±0.5° — plenty
//! for deciding where mountains block the sun, which is all this crate
//! does with it (no refraction correction).
//!
//! [`terrain_shadow`] casts shadows by marching each pixel's sight line
//! toward the sun over the DEM in one-pixel steps with bilinear height
//! sampling.

use chrono::{DateTime, Datelike, Timelike, Utc};

use crate::error::Error;
use crate::plane::MaskPlane;
use crate::raster::Dem;
use crate::Result;

/// When, and from where on the globe, a scene was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMeta {
    pub timestamp: DateTime<Utc>,
    pub latitude: f64,
    pub longitude: f64,
}

impl ObservationMeta {
    pub fn new(timestamp: DateTime<Utc>, latitude: f64, longitude: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::BadInput(format!("latitude {latitude} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::BadInput(format!("longitude {longitude} outside [-180, 180]")));
        }
        Ok(ObservationMeta { timestamp, latitude, longitude })
    }

    /// Parse an RFC 3339 timestamp (e.g. `2024-10-05T10:15:00Z`).
    pub fn from_rfc3339(timestamp: &str, latitude: f64, longitude: f64) -> Result<Self> {
        let ts = DateTime::parse_from_rfc3339(timestamp)
            .map_err(|e| Error::BadInput(format!("bad timestamp {timestamp:?}: {e}")))?
            .with_timezone(&Utc);
        ObservationMeta::new(ts, latitude, longitude)
    }
}

/// Sun direction: elevation above the horizon, azimuth clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPosition {
    /// Degrees above the horizon, in [-90, 90].
    pub elevation_deg: f64,
    /// Compass degrees clockwise from north, in [0, 360).
    pub azimuth_deg: f64,
}

/// Compute the sun's elevation and azimuth for a timestamp and location.
pub fn solar_position(meta: &ObservationMeta) -> SolarPosition {
    let day_of_year = meta.timestamp.ordinal() as f64;
    let hour = meta.timestamp.hour() as f64
        + meta.timestamp.minute() as f64 / 60.0
        + meta.timestamp.second() as f64 / 3600.0;

    // Fractional year in radians (Spencer's parameterization).
    let g = std::f64::consts::TAU / 365.0 * (day_of_year - 1.0 + (hour - 12.0) / 24.0);

    // Solar declination, radians.
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();

    // Equation of time, minutes.
    let eqtime = 229.18
        * (0.000075 + 0.001868 * g.cos() - 0.032077 * g.sin() - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());

    // True solar time in minutes; 4 minutes per degree of longitude.
    let tst = hour * 60.0 + eqtime + 4.0 * meta.longitude;
    // Hour angle: 0 at solar noon, +15°/hour afterwards.
    let ha = (tst / 4.0 - 180.0).to_radians();

    let lat = meta.latitude.to_radians();
    let sin_el = lat.sin() * decl.sin() + lat.cos() * decl.cos() * ha.cos();
    let elevation = sin_el.clamp(-1.0, 1.0).asin();

    // Azimuth measured westward from south, then shifted onto the compass.
    let az_south = (ha.sin()).atan2(ha.cos() * lat.sin() - decl.tan() * lat.cos());
    let azimuth = (az_south.to_degrees() + 180.0).rem_euclid(360.0);

    SolarPosition { elevation_deg: elevation.to_degrees(), azimuth_deg: azimuth }
}

/// Direction components snap to the axes below this size, so axis-aligned
/// azimuths march exactly along rows/columns instead of bleeding a few
/// ulps of bilinear weight into the neighboring line.
const AXIS_SNAP: f64 = 1e-9;

/// Cast terrain shadows: a pixel is shadowed when the DEM rises to or above
/// its sight line toward the sun (a grazing ray counts as blocked). The
/// sight line climbs at tan(elevation); the march steps one pixel at a time
/// with bilinear height sampling and stops once the line passes the DEM's
/// global maximum or leaves the grid (terrain outside the tile is assumed
/// not to block). A sun at or below the horizon shadows everything.
pub fn terrain_shadow(dem: &Dem, sun: &SolarPosition) -> MaskPlane {
    let (w, h) = (dem.width(), dem.height());
    if sun.elevation_deg <= 0.0 {
        return MaskPlane::ones(w, h);
    }

    let tan_el = sun.elevation_deg.to_radians().tan();
    let step_m = dem.pixel_size() as f64;
    let az = sun.azimuth_deg.to_radians();
    // Grid axes: x grows east, y grows south (row 0 is the northern edge).
    let mut dx = az.sin();
    let mut dy = -az.cos();
    if dx.abs() < AXIS_SNAP {
        dx = 0.0;
    }
    if dy.abs() < AXIS_SNAP {
        dy = 0.0;
    }

    let elev = dem.elevation();
    let max_height = elev.as_slice().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;

    let mut shadow = MaskPlane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let z0 = elev.get(x, y) as f64;
            // Beyond this distance the sight line tops the whole DEM.
            let t_max = (max_height - z0) / (tan_el * step_m);
            let mut t = 1.0;
            while t <= t_max {
                let fx = x as f64 + t * dx;
                let fy = y as f64 + t * dy;
                if fx < 0.0 || fy < 0.0 || fx > (w - 1) as f64 || fy > (h - 1) as f64 {
                    break;
                }
                let line_of_sight = z0 + t * step_m * tan_el;
                if elev.sample_bilinear(fx, fy) >= line_of_sight {
                    shadow.set(x, y, true);
                    break;
                }
                t += 1.0;
            }
        }
    }
    shadow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::Plane;

    fn meta(ts: &str, lat: f64, lon: f64) -> ObservationMeta {
        ObservationMeta::from_rfc3339(ts, lat, lon).unwrap()
    }

    // Expected values below come from an independent implementation of the
    // Astronomical Almanac low-precision algorithm (Michalsky 1988), a
    // different formulation than the one implemented here. Both models are
    // good to a fraction of a degree, so agreement within 1° is the bar.

    #[test]
    fn equator_equinox_noon_is_overhead() {
        let pos = solar_position(&meta("2024-03-20T12:08:00Z", 0.0, 0.0));
        assert!(
            (pos.elevation_deg - 89.773).abs() < 1.0,
            "elevation {} should be ~89.8",
            pos.elevation_deg
        );
    }

    #[test]
    fn midsummer_midnight_is_below_horizon() {
        let pos = solar_position(&meta("2024-06-21T00:00:00Z", 45.0, 0.0));
        assert!(pos.elevation_deg < 0.0, "elevation {}", pos.elevation_deg);
        assert!(
            (pos.elevation_deg - -21.563).abs() < 1.0,
            "elevation {} should be ~-21.6",
            pos.elevation_deg
        );
    }

    #[test]
    fn midlatitude_noon_sun_is_due_south() {
        let pos = solar_position(&meta("2024-03-20T12:08:00Z", 45.0, 0.0));
        assert!((pos.elevation_deg - 45.150).abs() < 1.0, "elevation {}", pos.elevation_deg);
        assert!((pos.azimuth_deg - 180.242).abs() < 2.0, "azimuth {}", pos.azimuth_deg);
    }

    #[test]
    fn autumn_morning_alps_cross_check() {
        let pos = solar_position(&meta("2024-10-05T10:15:00Z", 46.2, 8.9));
        assert!((pos.elevation_deg - 37.217).abs() < 1.0, "elevation {}", pos.elevation_deg);
        assert!((pos.azimuth_deg - 161.850).abs() < 2.0, "azimuth {}", pos.azimuth_deg);
    }

    #[test]
    fn ranges_hold_over_a_broad_sweep() {
        for day in [1, 80, 172, 266, 355] {
            for hour in 0..24 {
                for &(lat, lon) in &[(-60.0, 100.0), (0.0, 0.0), (46.2, 8.9), (70.0, -150.0)] {
                    let ts = format!("2024-01-01T{hour:02}:30:00Z");
                    let mut m = meta(&ts, lat, lon);
                    m.timestamp = m.timestamp + chrono::Duration::days(day - 1);
                    let pos = solar_position(&m);
                    assert!((-90.0..=90.0).contains(&pos.elevation_deg));
                    assert!((0.0..360.0).contains(&pos.azimuth_deg));
                }
            }
        }
    }

    #[test]
    fn meta_rejects_out_of_range_coordinates() {
        assert!(ObservationMeta::from_rfc3339("2024-01-01T00:00:00Z", 91.0, 0.0).is_err());
        assert!(ObservationMeta::from_rfc3339("2024-01-01T00:00:00Z", 0.0, -181.0).is_err());
        assert!(ObservationMeta::from_rfc3339("not a time", 0.0, 0.0).is_err());
    }

    fn flat_dem(w: usize, h: usize, z: f32) -> Dem {
        Dem::new(30.0, Plane::filled(w, h, z)).unwrap()
    }

    fn spike_dem(w: usize, h: usize, x: usize, y: usize, height: f32) -> Dem {
        let mut p = Plane::filled(w, h, 0.0f32);
        p.set(x, y, height);
        Dem::new(30.0, p).unwrap()
    }

    fn sun(elevation_deg: f64, azimuth_deg: f64) -> SolarPosition {
        SolarPosition { elevation_deg, azimuth_deg }
    }

    #[test]
    fn flat_ground_casts_no_shadow() {
        let shadow = terrain_shadow(&flat_dem(16, 16, 250.0), &sun(45.0, 270.0));
        assert_eq!(shadow.count_ones(), 0);
    }

    #[test]
    fn sun_below_horizon_shadows_everything() {
        let shadow = terrain_shadow(&spike_dem(8, 8, 4, 4, 100.0), &sun(-5.0, 120.0));
        assert_eq!(shadow.count_ones(), 8 * 8);
        let shadow = terrain_shadow(&flat_dem(4, 4, 0.0), &sun(0.0, 0.0));
        assert_eq!(shadow.count_ones(), 16);
    }

    #[test]
    fn spike_under_western_sun_shades_one_pixel_east() {
        // 30 m spike, 45° sun: the shadow runs tan(45°)·30 m = one pixel.
        let dem = spike_dem(9, 9, 4, 4, 30.0);
        let shadow = terrain_shadow(&dem, &sun(45.0, 270.0));
        assert!(shadow.get(5, 4), "pixel one step east of the spike must be shadowed");
        assert_eq!(shadow.count_ones(), 1, "and nothing else");
    }

    #[test]
    fn shadow_length_tracks_the_analytic_run() {
        // height / tan(elevation), in pixels, against the marched length
        // east of a spike under a western sun.
        let height = 90.0f32;
        let dem = spike_dem(32, 9, 4, 4, height);
        for elevation in [15.0, 30.0, 45.0, 60.0] {
            let shadow = terrain_shadow(&dem, &sun(elevation, 270.0));
            let marched = (5..32).take_while(|&x| shadow.get(x, 4)).count() as f64;
            let analytic = height as f64 / (elevation as f64).to_radians().tan() / 30.0;
            assert!(
                (marched - analytic).abs() <= 1.0,
                "elevation {elevation}: marched {marched}, analytic {analytic:.2}"
            );
        }
    }

    #[test]
    fn lowering_the_sun_never_unshadows() {
        // Rolling synthetic ridge, two sun heights.
        let mut p = Plane::filled(24, 24, 0.0f32);
        for y in 0..24 {
            for x in 0..24 {
                let v = 120.0 * ((x as f32 / 5.0).sin() + (y as f32 / 7.0).cos() + 2.0);
                p.set(x, y, v);
            }
        }
        let dem = Dem::new(30.0, p).unwrap();
        let high = terrain_shadow(&dem, &sun(50.0, 135.0));
        let low = terrain_shadow(&dem, &sun(20.0, 135.0));
        for y in 0..24 {
            for x in 0..24 {
                assert!(
                    !high.get(x, y) || low.get(x, y),
                    "pixel ({x},{y}) shadowed at 50° but not at 20°"
                );
            }
        }
        assert!(low.count_ones() > high.count_ones(), "lower sun should lengthen shadows");
    }

    #[test]
    fn shadow_ignores_constant_elevation_offset() {
        let mut p = Plane::filled(16, 16, 0.0f32);
        for y in 0..16 {
            for x in 0..16 {
                p.set(x, y, ((x * 7 + y * 13) % 11) as f32 * 20.0);
            }
        }
        let a = terrain_shadow(&Dem::new(30.0, p.clone()).unwrap(), &sun(25.0, 310.0));
        let mut q = p.clone();
        q.as_mut_slice().iter_mut().for_each(|v| *v += 5000.0);
        let b = terrain_shadow(&Dem::new(30.0, q).unwrap(), &sun(25.0, 310.0));
        assert_eq!(a, b);
    }
}
