//! Binary matrix container shared by feature archives, transforms and
//! model files.
//!
//! Layout: magic `VLF1`, then per record: id length (u32 LE), id bytes
//! (UTF-8), T (u32 LE), D (u32 LE), T*D float64 LE row-major.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VLF1";

/// Writes records in the iteration order of the map, so output bytes are
/// deterministic for a given map.
pub fn write_archive(path: &Path, records: &BTreeMap<String, Array2<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (id, mat) in records {
        write_record(&mut w, id, mat)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<BTreeMap<String, Array2<f64>>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedArchive("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedArchive("bad magic".into()));
    }
    let mut out = BTreeMap::new();
    loop {
        match read_record(&mut r)? {
            Some((id, mat)) => {
                if out.insert(id.clone(), mat).is_some() {
                    return Err(Error::MalformedArchive(format!("duplicate id {id}")));
                }
            }
            None => break,
        }
    }
    Ok(out)
}

pub fn write_record<W: Write>(w: &mut W, id: &str, mat: &Array2<f64>) -> Result<()> {
    let bytes = id.as_bytes();
    w.write_u32::<LittleEndian>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    w.write_u32::<LittleEndian>(mat.nrows() as u32)?;
    w.write_u32::<LittleEndian>(mat.ncols() as u32)?;
    for row in mat.rows() {
        for &v in row {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

/// Returns `None` at a clean end of stream; a partial record is an error.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<(String, Array2<f64>)>> {
    let id_len = match r.read_u32::<LittleEndian>() {
        Ok(n) => n,
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut id_bytes = vec![0u8; id_len as usize];
    r.read_exact(&mut id_bytes)
        .map_err(|_| Error::MalformedArchive("truncated id".into()))?;
    let id = String::from_utf8(id_bytes)
        .map_err(|_| Error::MalformedArchive("id is not UTF-8".into()))?;
    let t = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedArchive("truncated header".into()))? as usize;
    let d = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedArchive("truncated header".into()))? as usize;
    let mut data = Vec::with_capacity(t * d);
    for _ in 0..t * d {
        let v = r
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::MalformedArchive("truncated data".into()))?;
        data.push(v);
    }
    let mat = Array2::from_shape_vec((t, d), data)
        .map_err(|_| Error::MalformedArchive("dimension mismatch".into()))?;
    Ok(Some((id, mat)))
}

/// Writes a single-matrix file with a 2-integer H,W header before the
/// record, used by the ROI container.
pub fn write_roi_file(path: &Path, id: &str, h: usize, w_px: usize, mat: &Array2<f64>) -> Result<()> {
    if mat.ncols() != h * w_px {
        return Err(Error::dims(format!(
            "ROI record cols {} != H*W {}",
            mat.ncols(),
            h * w_px
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(h as u32)?;
    w.write_u32::<LittleEndian>(w_px as u32)?;
    write_record(&mut w, id, mat)?;
    w.flush()?;
    Ok(())
}

pub fn read_roi_file(path: &Path) -> Result<(String, usize, usize, Array2<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedArchive("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedArchive("bad magic".into()));
    }
    let h = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedArchive("truncated header".into()))? as usize;
    let w_px = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedArchive("truncated header".into()))? as usize;
    let (id, mat) = read_record(&mut r)?
        .ok_or_else(|| Error::MalformedArchive("missing ROI record".into()))?;
    if mat.ncols() != h * w_px {
        return Err(Error::MalformedArchive("ROI dimension mismatch".into()));
    }
    Ok((id, h, w_px, mat))
}
