//! Flat parameter container.
//!
//! Layout: magic "SWG1", then per-tensor records
//!   name length (u64 LE) | name bytes (UTF-8) | rank (u64 LE)
//!   | extents (u64 LE each) | payload (f32 LE each, bit-exact).
//! Records run to end of file. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::GridTensor;

pub const MAGIC: &[u8; 4] = b"SWG1";

pub fn write_tensors<W: Write>(mut w: W, entries: &[(String, GridTensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, GridTensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Container(format!("bad magic {magic:?}")));
    }
    let mut entries = Vec::new();
    loop {
        let mut len_buf = [0u8; 8];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u64::from_le_bytes(len_buf) as usize;
        if name_len > 1 << 16 {
            return Err(TensorError::Container(format!(
                "implausible name length {name_len}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| TensorError::Container(format!("name is not UTF-8: {e}")))?;

        r.read_exact(&mut len_buf)?;
        let rank = u64::from_le_bytes(len_buf) as usize;
        if rank > 8 {
            return Err(TensorError::Container(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut len_buf)?;
            shape.push(u64::from_le_bytes(len_buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        r.read_exact(&mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        entries.push((name, GridTensor::from_vec(shape, data)));
    }
    Ok(entries)
}

pub fn save_tensors(path: &Path, entries: &[(String, GridTensor)]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_tensors(f, entries)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, GridTensor)>> {
    let f = BufReader::new(File::open(path)?);
    read_tensors(f)
}
