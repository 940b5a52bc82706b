//! Dictionary files.
//!
//! Layout (little-endian): magic `CDICT1`; `u32` filter count; per filter
//! `u32` height, `u32` width and `height * width` `f32` samples (row-major);
//! then a `u32` byte length followed by a UTF-8 `key=value` provenance block,
//! one entry per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::csc::Dictionary;
use crate::error::{Error, Result};
use crate::image::io_util::{read_exact, read_u32};
use crate::image::Image;

const MAGIC: &[u8; 6] = b"CDICT1";

/// Norm tolerance applied on load; filters are stored as `f32`.
pub const LOAD_NORM_TOL: f64 = 1e-6;

/// Free-form `key=value` metadata stored with a dictionary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_dictionary<W: Write>(dict: &Dictionary, provenance: &Provenance, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(dict.len() as u32).to_le_bytes())?;
    for f in dict.filters() {
        out.write_all(&(f.height() as u32).to_le_bytes())?;
        out.write_all(&(f.width() as u32).to_le_bytes())?;
        for &v in f.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let mut trailer = String::new();
    for (k, v) in &provenance.entries {
        trailer.push_str(k);
        trailer.push('=');
        trailer.push_str(v);
        trailer.push('\n');
    }
    out.write_all(&(trailer.len() as u32).to_le_bytes())?;
    out.write_all(trailer.as_bytes())?;
    Ok(())
}

pub fn read_dictionary<R: Read>(mut input: R) -> Result<(Dictionary, Provenance)> {
    let mut magic = [0u8; 6];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad dictionary magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let count = read_u32(&mut input)? as usize;
    let mut filters = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let h = read_u32(&mut input)? as usize;
        let w = read_u32(&mut input)? as usize;
        let mut buf = vec![0u8; 4 * h * w];
        read_exact(&mut input, &mut buf, "filter samples")?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        filters.push(Image::new(h, w, data)?);
    }
    let len = read_u32(&mut input)? as usize;
    let mut text = vec![0u8; len];
    read_exact(&mut input, &mut text, "provenance trailer")?;
    let text = String::from_utf8(text)
        .map_err(|_| Error::Format("provenance trailer is not UTF-8".into()))?;
    let entries = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| match l.split_once('=') {
            Some((k, v)) => Ok((k.to_string(), v.to_string())),
            None => Err(Error::Format(format!("bad provenance line {l:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let dict = Dictionary::with_tolerance(filters, LOAD_NORM_TOL)?;
    Ok((dict, Provenance { entries }))
}

pub fn save_dictionary(dict: &Dictionary, provenance: &Provenance, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dictionary(dict, provenance, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_dictionary(path: &Path) -> Result<(Dictionary, Provenance)> {
    read_dictionary(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dictionary {
        Dictionary::normalized(vec![
            Image::from_fn(2, 2, |i, j| (i + 2 * j) as f64 + 0.3),
            Image::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).cos()),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dict = sample();
        let prov = Provenance::default().with("lambda", 0.05).with("seed", 7);
        let mut bytes = Vec::new();
        write_dictionary(&dict, &prov, &mut bytes).unwrap();
        let (back, p) = read_dictionary(bytes.as_slice()).unwrap();
        assert_eq!(p, prov);
        assert_eq!(p.get("seed"), Some("7"));
        for (a, b) in dict.filters().iter().zip(back.filters()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        let mut again = Vec::new();
        write_dictionary(&back, &p, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_norm() {
        let dict = sample();
        let mut bytes = Vec::new();
        write_dictionary(&dict, &Provenance::default(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[..5].copy_from_slice(b"XXXXX");
        assert!(matches!(read_dictionary(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(
            read_dictionary(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        // one 1x1 filter with value 0.5
        let mut half = Vec::new();
        half.extend_from_slice(b"CDICT1");
        half.extend_from_slice(&1u32.to_le_bytes());
        half.extend_from_slice(&1u32.to_le_bytes());
        half.extend_from_slice(&1u32.to_le_bytes());
        half.extend_from_slice(&0.5f32.to_le_bytes());
        half.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_dictionary(half.as_slice()), Err(Error::Invariant(_))));
    }
}
