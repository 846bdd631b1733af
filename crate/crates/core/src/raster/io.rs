//! `.mtile` container I/O.
//!
//! Layout: one UTF-8 JSON header line
//! `{"w":W,"h":H,"pixel_size":P,"planes":["blue",...]}` terminated by
//! `\n`, followed by the declared planes as raw little-endian f32, row
//! major, in declared order, with nothing after the last plane. The same
//! envelope (JSON line + LE f32 payload) carries model checkpoints and
//! fitted ensembles; the helpers here are shared by those writers.
//!
//! Writes are byte-deterministic: identical data produces identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::plane::{MaskPlane, Plane};
use crate::raster::{Band, Dem, MaskKind, MaskSet, TileStack};
use crate::Result;

/// Longest accepted header line; anything bigger is malformed.
const MAX_HEADER_BYTES: usize = 1 << 16;

/// Floats per chunk when streaming payloads (64 KiB buffers).
const CHUNK_FLOATS: usize = 16 * 1024;

#[derive(Debug, Serialize, Deserialize)]
struct PlaneHeader {
    w: usize,
    h: usize,
    pixel_size: f32,
    planes: Vec<String>,
}

/// Serialize `header` as a single JSON line into `w`.
pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, header: &T) -> Result<()> {
    let line = serde_json::to_string(header)
        .map_err(|e| Error::BadInput(format!("header serialization failed: {e}")))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Read bytes up to the first `\n` and parse them as JSON.
pub fn read_json_line<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<T> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte)? {
            0 => return Err(Error::MalformedHeader("file ends inside header line".into())),
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
                if line.len() > MAX_HEADER_BYTES {
                    return Err(Error::MalformedHeader("header line exceeds 64 KiB".into()));
                }
            }
        }
    }
    serde_json::from_slice(&line).map_err(|e| Error::MalformedHeader(e.to_string()))
}

/// Append `values` to `w` as little-endian f32.
pub fn write_f32_payload<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(CHUNK_FLOATS.min(values.len()) * 4);
    for chunk in values.chunks(CHUNK_FLOATS) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Read exactly `count` little-endian f32 values.
pub fn read_f32_payload<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut values = Vec::with_capacity(count);
    let mut buf = vec![0u8; CHUNK_FLOATS * 4];
    let mut remaining = count;
    while remaining > 0 {
        let take = remaining.min(CHUNK_FLOATS);
        let bytes = &mut buf[..take * 4];
        let mut filled = 0;
        while filled < bytes.len() {
            let n = r.read(&mut bytes[filled..])?;
            if n == 0 {
                return Err(Error::TruncatedPayload {
                    expected: count as u64 * 4,
                    found: (count - remaining) as u64 * 4 + filled as u64,
                });
            }
            filled += n;
        }
        for quad in bytes.chunks_exact(4) {
            values.push(f32::from_le_bytes([quad[0], quad[1], quad[2], quad[3]]));
        }
        remaining -= take;
    }
    Ok(values)
}

/// Error if `r` still has bytes; containers declare their exact content.
pub fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::BadInput("trailing bytes after declared planes".into()));
    }
    Ok(())
}

/// Write named f32 planes to `path` in the `.mtile` envelope.
pub fn save_planes(path: &Path, pixel_size: f32, planes: &[(&str, &Plane<f32>)]) -> Result<()> {
    if planes.is_empty() {
        return Err(Error::BadInput("cannot save a container with zero planes".into()));
    }
    let (w, h) = (planes[0].1.width(), planes[0].1.height());
    for (name, plane) in planes {
        if plane.width() != w || plane.height() != h {
            return Err(Error::DimensionMismatch(format!(
                "plane {name} is {}x{}, expected {w}x{h}",
                plane.width(),
                plane.height()
            )));
        }
    }
    let header = PlaneHeader {
        w,
        h,
        pixel_size,
        planes: planes.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    write_json_line(&mut out, &header)?;
    for (_, plane) in planes {
        write_f32_payload(&mut out, plane.as_slice())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a `.mtile` container: returns pixel size and the named planes in
/// file order.
pub fn load_planes(path: &Path) -> Result<(f32, Vec<(String, Plane<f32>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let header: PlaneHeader = read_json_line(&mut r)?;
    if header.w == 0 || header.h == 0 {
        return Err(Error::MalformedHeader(format!(
            "declared dimensions {}x{} are not positive",
            header.w, header.h
        )));
    }
    if header.planes.is_empty() {
        return Err(Error::MalformedHeader("header declares zero planes".into()));
    }
    for (i, name) in header.planes.iter().enumerate() {
        if header.planes[..i].contains(name) {
            return Err(Error::MalformedHeader(format!("duplicate plane name {name:?}")));
        }
    }
    if !(header.pixel_size.is_finite() && header.pixel_size > 0.0) {
        return Err(Error::MalformedHeader(format!(
            "pixel_size {} is not positive",
            header.pixel_size
        )));
    }
    let mut planes = Vec::with_capacity(header.planes.len());
    for name in &header.planes {
        let data = read_f32_payload(&mut r, header.w * header.h)?;
        planes.push((name.clone(), Plane::from_vec(header.w, header.h, data)?));
    }
    expect_eof(&mut r)?;
    Ok((header.pixel_size, planes))
}

/// Save a tile: the six bands in fixed order plus the `valid` plane.
pub fn save_tile(tile: &TileStack, path: &Path) -> Result<()> {
    let valid_plane = tile.valid().to_f32_plane();
    let mut planes: Vec<(&str, &Plane<f32>)> =
        Band::ALL.iter().map(|&b| (b.name(), tile.band(b))).collect();
    planes.push(("valid", &valid_plane));
    save_planes(path, tile.pixel_size(), &planes)
}

pub fn load_tile(path: &Path) -> Result<TileStack> {
    let (pixel_size, mut named) = load_planes(path)?;
    let expected: Vec<&str> = Band::ALL.iter().map(|b| b.name()).chain(["valid"]).collect();
    let found: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
    if found != expected {
        return Err(Error::MalformedHeader(format!(
            "tile container must declare planes {expected:?}, found {found:?}"
        )));
    }
    let valid = MaskPlane::from_f32_plane(&named.pop().expect("seven planes present").1)?;
    let bands: Vec<Plane<f32>> = named.into_iter().map(|(_, p)| p).collect();
    let bands: [Plane<f32>; 6] = bands.try_into().expect("six band planes present");
    TileStack::from_parts(pixel_size, bands, valid)
}

/// Save the five masks as 0.0/1.0 planes named after their classes.
pub fn save_masks(masks: &MaskSet, pixel_size: f32, path: &Path) -> Result<()> {
    let as_f32: Vec<(&str, Plane<f32>)> = MaskKind::ALL
        .iter()
        .map(|&k| (k.name(), masks.get(k).to_f32_plane()))
        .collect();
    let refs: Vec<(&str, &Plane<f32>)> = as_f32.iter().map(|(n, p)| (*n, p)).collect();
    save_planes(path, pixel_size, &refs)
}

pub fn load_masks(path: &Path) -> Result<MaskSet> {
    let (_, named) = load_planes(path)?;
    let expected: Vec<&str> = MaskKind::ALL.iter().map(|k| k.name()).collect();
    let found: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
    if found != expected {
        return Err(Error::MalformedHeader(format!(
            "mask container must declare planes {expected:?}, found {found:?}"
        )));
    }
    let mut planes = Vec::with_capacity(5);
    for (_, plane) in named {
        planes.push(MaskPlane::from_f32_plane(&plane)?);
    }
    let planes: [MaskPlane; 5] = planes.try_into().expect("five planes present");
    MaskSet::from_planes(planes)
}

pub fn save_dem(dem: &Dem, path: &Path) -> Result<()> {
    save_planes(path, dem.pixel_size(), &[("elevation", dem.elevation())])
}

pub fn load_dem(path: &Path) -> Result<Dem> {
    let (pixel_size, named) = load_planes(path)?;
    match named.as_slice() {
        [(name, _)] if name == "elevation" => {}
        _ => {
            let found: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
            return Err(Error::MalformedHeader(format!(
                "DEM container must declare exactly [\"elevation\"], found {found:?}"
            )));
        }
    }
    let plane = named.into_iter().next().expect("one plane present").1;
    Dem::new(pixel_size, plane)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_tile(seed: u64, w: usize, h: usize) -> TileStack {
        let mut rng = CounterRng::new(seed);
        let bands: [Plane<f32>; 6] = std::array::from_fn(|_| {
            let data: Vec<f32> = (0..w * h).map(|_| rng.next_f32()).collect();
            Plane::from_vec(w, h, data).unwrap()
        });
        let mut valid = MaskPlane::ones(w, h);
        valid.set(0, 0, false);
        TileStack::from_parts(30.0, bands, valid).unwrap()
    }

    #[test]
    fn tile_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.tile.mtile");
        let tile = random_tile(7, 13, 9);
        save_tile(&tile, &path).unwrap();
        let back = load_tile(&path).unwrap();
        assert_eq!(tile, back);
        for band in Band::ALL {
            // PartialEq would treat -0.0 == 0.0; compare the raw bits too.
            let a: Vec<u32> = tile.band(band).as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.band(band).as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "band {} bits differ", band.name());
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.mtile");
        let b = dir.path().join("b.mtile");
        let tile = random_tile(3, 8, 8);
        save_tile(&tile, &a).unwrap();
        save_tile(&tile, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn one_pixel_tile_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.mtile");
        let bands: [Plane<f32>; 6] = std::array::from_fn(|_| Plane::filled(1, 1, 0.5f32));
        let tile = TileStack::from_parts(30.0, bands, MaskPlane::ones(1, 1)).unwrap();
        save_tile(&tile, &path).unwrap();
        let back = load_tile(&path).unwrap();
        for band in Band::ALL {
            assert_eq!(back.band(band).get(0, 0), 0.5);
        }
    }

    #[test]
    fn missing_plane_payload_is_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.mtile");
        // Header declares six planes; write only five planes' worth of bytes.
        let mut f = File::create(&path).unwrap();
        let names: Vec<String> = Band::ALL.iter().map(|b| b.name().to_string()).collect();
        write_json_line(
            &mut f,
            &PlaneHeader { w: 4, h: 4, pixel_size: 30.0, planes: names },
        )
        .unwrap();
        write_f32_payload(&mut f, &vec![0.25f32; 4 * 4 * 5]).unwrap();
        drop(f);
        match load_planes(&path) {
            Err(Error::TruncatedPayload { expected, found }) => {
                assert_eq!(expected, 4 * 4 * 4);
                assert_eq!(found, 0);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("long.mtile");
        let mut f = File::create(&path).unwrap();
        write_json_line(
            &mut f,
            &PlaneHeader { w: 2, h: 2, pixel_size: 30.0, planes: vec!["elevation".into()] },
        )
        .unwrap();
        write_f32_payload(&mut f, &[1.0; 5]).unwrap(); // one float too many
        drop(f);
        assert!(load_planes(&path).is_err());
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtile");
        std::fs::write(&path, b"not json at all\n\x00\x00\x80\x3f").unwrap();
        match load_planes(&path) {
            Err(Error::MalformedHeader(_)) => {}
            other => panic!("expected malformed header, got {other:?}"),
        }
    }

    #[test]
    fn mask_and_dem_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut masks = MaskSet::zeros(6, 5);
        masks.get_mut(MaskKind::Water).set(2, 2, true);
        masks.get_mut(MaskKind::TerrainShadow).set(5, 4, true);
        let mpath = dir.path().join("labels.masks.mtile");
        save_masks(&masks, 30.0, &mpath).unwrap();
        assert_eq!(load_masks(&mpath).unwrap(), masks);

        let dem = Dem::new(
            30.0,
            Plane::from_vec(3, 2, vec![0.0, 10.0, 20.0, 5.0, 15.0, 25.0]).unwrap(),
        )
        .unwrap();
        let dpath = dir.path().join("terrain.dem.mtile");
        save_dem(&dem, &dpath).unwrap();
        assert_eq!(load_dem(&dpath).unwrap(), dem);
    }

    #[test]
    fn tile_with_wrong_plane_names_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("odd.mtile");
        let p = Plane::filled(2, 2, 0.1f32);
        save_planes(&path, 30.0, &[("albedo", &p)]).unwrap();
        assert!(load_tile(&path).is_err());
    }
}
