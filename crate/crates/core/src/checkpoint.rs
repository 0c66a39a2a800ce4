//! Parameter checkpoint file: named tensors in a flat binary layout.
//!
//! Layout: the magic string `ADEPT-CKPT\0`, one format version byte, then a
//! sequence of records until end of file. Each record is
//! `u16 name_len | name bytes | u8 rank | u64 dims[rank] | f64 data` with all
//! integers and floats little-endian. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8] = b"ADEPT-CKPT\0";
pub const CKPT_VERSION: u8 = 1;

pub fn save_checkpoint(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&[CKPT_VERSION])?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::contract(format!("tensor name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::contract("tensor rank exceeds format limit"));
        }
        w.write_all(&[shape.len() as u8])?;
        for d in shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 11];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            expected: "ADEPT-CKPT\\0",
        });
    }
    let mut version = [0u8; 1];
    read_exact_or(&mut r, &mut version, "version byte")?;
    if version[0] != CKPT_VERSION {
        return Err(Error::Version {
            expected: CKPT_VERSION,
            found: version[0],
        });
    }
    let mut out = Vec::new();
    loop {
        let mut len_buf = [0u8; 2];
        match r.read(&mut len_buf[..1])? {
            0 => break, // clean end of file
            _ => read_exact_or(&mut r, &mut len_buf[1..], "record name length")?,
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name_bytes, "record name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Truncated("record name is not utf-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact_or(&mut r, &mut rank, "tensor rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 8];
            read_exact_or(&mut r, &mut d, "tensor dims")?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            read_exact_or(&mut r, &mut buf, "tensor data")?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("file ended inside {what}"))
        } else {
            Error::Io(e)
        }
    })
}

/// Looks up a tensor by exact name in loaded checkpoint entries.
pub fn find_tensor<'a>(entries: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Truncated(format!("checkpoint is missing tensor {name:?}")))
}
