//! Sinogram files.
//!
//! Layout (little-endian): magic `SINO1`, `u32` views, `u32` detectors,
//! `f32` detector spacing, `f32` angles (radians), then row-major `f32` data.
//! The image side is not stored and must be supplied on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::image::io_util::{read_exact, read_u32};
use crate::image::Image;

use super::{Geometry, Sinogram};

const MAGIC: &[u8; 5] = b"SINO1";

fn read_f32s<R: Read>(input: &mut R, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 4 * count];
    read_exact(input, &mut buf, what)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_sinogram<W: Write>(sino: &Sinogram, mut out: W) -> Result<()> {
    let g = sino.geometry();
    if let Geometry::Identity { .. } = g {
        return Err(invalid("identity geometry has no sinogram file representation"));
    }
    out.write_all(MAGIC)?;
    out.write_all(&(g.num_views() as u32).to_le_bytes())?;
    out.write_all(&(g.num_detectors() as u32).to_le_bytes())?;
    out.write_all(&(g.detector_spacing() as f32).to_le_bytes())?;
    for a in g.angles() {
        out.write_all(&(*a as f32).to_le_bytes())?;
    }
    for v in sino.data() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sinogram<R: Read>(mut input: R, image_side: usize) -> Result<Sinogram> {
    let mut magic = [0u8; 5];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad sinogram magic {magic:?}")));
    }
    let views = read_u32(&mut input)? as usize;
    let dets = read_u32(&mut input)? as usize;
    let spacing = read_f32s(&mut input, 1, "detector spacing")?[0];
    let angles = read_f32s(&mut input, views, "angles")?;
    let data = read_f32s(&mut input, views * dets, "sinogram samples")?;
    let geometry = Geometry::parallel_with(angles, dets, spacing, image_side)?;
    Sinogram::new(Image::new(views, dets, data)?, geometry)
}

pub fn save_sinogram(sino: &Sinogram, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_sinogram(sino, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_sinogram(path: &Path, image_side: usize) -> Result<Sinogram> {
    read_sinogram(BufReader::new(File::open(path)?), image_side)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let g = Geometry::parallel_with(vec![0.0, 1.0, 2.5], 5, 0.5, 3).unwrap();
        let vals = Image::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.25);
        let s = Sinogram::new(vals, g).unwrap();
        let mut bytes = Vec::new();
        write_sinogram(&s, &mut bytes).unwrap();
        let back = read_sinogram(bytes.as_slice(), 3).unwrap();
        assert_eq!(back.data(), s.data());
        assert_eq!(back.geometry().detector_spacing(), 0.5);
        assert!((back.geometry().angles()[2] - 2.5).abs() < 1e-6);
        assert!(matches!(read_sinogram(&bytes[..bytes.len() - 2], 3), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(read_sinogram(bytes.as_slice(), 3), Err(Error::Format(_))));
        let id = Sinogram::zeros(Geometry::identity(2).unwrap());
        assert!(write_sinogram(&id, Vec::new()).is_err());
    }
}
