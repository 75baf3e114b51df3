//! Bit-exact binary tensor files.
//!
//! Layout: magic bytes `TNSR`, a little-endian `u32` format version (1), a
//! `u8` mode count `D`, then `D` little-endian `u64` dimensions, then the
//! values as little-endian IEEE-754 `f64` in last-index-fastest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Leading magic bytes of a tensor file.
pub const TNSR_MAGIC: [u8; 4] = *b"TNSR";

/// The single supported format version.
pub const TNSR_VERSION: u32 = 1;

/// Serializes `t` to `w` in the TNSR layout.
pub fn write_tensor<W: Write>(t: &DenseTensor, w: &mut W) -> Result<()> {
    let d = t.ndim();
    if d > u8::MAX as usize {
        return Err(Error::Format(format!(
            "{d} modes exceed the format's limit of 255"
        )));
    }
    w.write_all(&TNSR_MAGIC)?;
    w.write_all(&TNSR_VERSION.to_le_bytes())?;
    w.write_all(&[d as u8])?;
    for &m in t.dims() {
        w.write_all(&(m as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one tensor from `r`, validating the header and exact payload size.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    read_fully(r, &mut magic, "magic bytes")?;
    if magic != TNSR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {magic:02x?}, expected \"TNSR\""
        )));
    }
    let mut version = [0u8; 4];
    read_fully(r, &mut version, "version field")?;
    let version = u32::from_le_bytes(version);
    if version != TNSR_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {TNSR_VERSION}"
        )));
    }
    let mut d = [0u8; 1];
    read_fully(r, &mut d, "mode count")?;
    let d = d[0] as usize;
    if d < 2 {
        return Err(Error::Format(format!(
            "tensors need at least 2 modes, file declares {d}"
        )));
    }
    let mut dims = Vec::with_capacity(d);
    let mut len: usize = 1;
    for k in 0..d {
        let mut raw = [0u8; 8];
        read_fully(r, &mut raw, "dimension list")?;
        let m = u64::from_le_bytes(raw);
        if m == 0 {
            return Err(Error::Format(format!("dimension {k} is zero")));
        }
        let m: usize = m
            .try_into()
            .map_err(|_| Error::Format(format!("dimension {k} = {m} overflows")))?;
        len = len
            .checked_mul(m)
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        dims.push(m);
    }
    len.checked_mul(8)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut data = Vec::with_capacity(len);
    let mut raw = [0u8; 8];
    for _ in 0..len {
        read_fully(r, &mut raw, "value payload")?;
        data.push(f64::from_le_bytes(raw));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format(
            "trailing bytes after the declared payload".into(),
        ));
    }
    DenseTensor::new(dims, data)
}

/// `read_exact` with truncation reported as a format error.
fn read_fully<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("file truncated in {what}"))
        } else {
            Error::Io(e)
        }
    })
}

/// Writes `t` to a file at `path`, buffered.
pub fn save_tensor<P: AsRef<Path>>(t: &DenseTensor, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(t, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads a tensor from the file at `path`.
pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}
