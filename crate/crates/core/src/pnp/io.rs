//! Patch dictionary files.
//!
//! Layout (little-endian): magic `PDICT1`, `u32` patch size, `u32` atom
//! count, then every atom as `patch_size²` `f64` samples in row-major patch
//! order. Samples are stored at full precision so the unit-norm check on
//! load stays exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::io_util::{read_exact, read_u32};

use super::PatchDictionary;

const MAGIC: &[u8; 6] = b"PDICT1";

pub fn write_patch_dictionary<W: Write>(dict: &PatchDictionary, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(dict.patch_size() as u32).to_le_bytes())?;
    out.write_all(&(dict.len() as u32).to_le_bytes())?;
    for &v in dict.atoms().as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_patch_dictionary<R: Read>(mut input: R) -> Result<PatchDictionary> {
    let mut magic = [0u8; 6];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad patch dictionary magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let p = read_u32(&mut input)? as usize;
    let m = read_u32(&mut input)? as usize;
    let mut buf = vec![0u8; 8 * p * p * m];
    read_exact(&mut input, &mut buf, "atom samples")?;
    let data: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    PatchDictionary::new(p, DMatrix::from_vec(p * p, m, data))
}

pub fn save_patch_dictionary(dict: &PatchDictionary, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_patch_dictionary(dict, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_patch_dictionary(path: &Path) -> Result<PatchDictionary> {
    read_patch_dictionary(BufReader::new(File::open(path)?))
}
