//! Image files: 16-bit binary PGM and the raw `IMGF1` float format.
//!
//! `IMGF1` layout (little-endian): magic `IMGF1`, `u32` height, `u32` width,
//! then `height * width` `f32` samples in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const IMGF_MAGIC: &[u8; 5] = b"IMGF1";

pub fn write_imgf<W: Write>(img: &Image, mut out: W) -> Result<()> {
    out.write_all(IMGF_MAGIC)?;
    out.write_all(&(img.height() as u32).to_le_bytes())?;
    out.write_all(&(img.width() as u32).to_le_bytes())?;
    for &v in img.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_imgf<R: Read>(mut input: R) -> Result<Image> {
    let mut magic = [0u8; 5];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != IMGF_MAGIC {
        return Err(Error::Format(format!("bad IMGF magic {magic:?}")));
    }
    let height = read_u32(&mut input)? as usize;
    let width = read_u32(&mut input)? as usize;
    let mut buf = vec![0u8; 4 * height * width];
    read_exact(&mut input, &mut buf, "image samples")?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(height, width, data)
}

/// Writes a 16-bit binary (P5) PGM, mapping `[0, 1]` to `[0, 65535]` with clamping.
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n65535\n", img.width(), img.height())?;
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.write_all(&q.to_be_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an 8- or 16-bit binary PGM, normalizing samples by `maxval`.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("not a binary PGM (magic {:?})", tokens[0])));
    }
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {t:?}")))
    };
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(pos..pos + width * height * bps)
        .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    let data = if bps == 1 {
        raster.iter().map(|&v| v as f64 / maxval as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    Image::new(height, width, data)
}

/// Reads by extension: `.pgm` as PGM, anything else as `IMGF1`.
pub fn read_image(path: &Path) -> Result<Image> {
    if is_pgm(path) {
        read_pgm(path)
    } else {
        read_imgf(BufReader::new(File::open(path)?))
    }
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    if is_pgm(path) {
        write_pgm(img, path)
    } else {
        let mut out = BufWriter::new(File::create(path)?);
        write_imgf(img, &mut out)?;
        out.flush()?;
        Ok(())
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, "u32 field")?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imgf_round_trip_is_bit_exact_on_f32() {
        let img = Image::from_fn(3, 5, |i, j| (i as f64 * 0.3 + j as f64).sin());
        let mut bytes = Vec::new();
        write_imgf(&img, &mut bytes).unwrap();
        assert_eq!(&bytes[..5], b"IMGF1");
        assert_eq!(bytes.len(), 5 + 8 + 4 * 15);
        let back = read_imgf(bytes.as_slice()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
        }
        let mut again = Vec::new();
        write_imgf(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn imgf_rejects_bad_magic_and_truncation() {
        let img = Image::zeros(2, 2);
        let mut bytes = Vec::new();
        write_imgf(&img, &mut bytes).unwrap();
        assert!(matches!(read_imgf(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(read_imgf(bytes.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn parses_8_bit_pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend([0u8, 51, 255]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.shape(), (1, 3));
        assert_eq!(img.data(), &[0.0, 0.2, 1.0]);
        assert!(parse_pgm(&bytes[..bytes.len() - 1]).is_err());
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn pgm_round_trip_quantizes_to_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = Image::from_fn(4, 6, |i, j| (i * 6 + j) as f64 / 23.0);
        write_image(&img, &path).unwrap();
        let head = std::fs::read(&path).unwrap();
        assert_eq!(&head[..2], b"P5");
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), (4, 6));
        assert!((&back - &img).max_abs() <= 0.5 / 65535.0 + 1e-12);
    }
}
