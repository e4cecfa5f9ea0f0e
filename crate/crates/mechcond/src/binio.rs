//! Framing shared by the binary artifact formats: a 16-byte magic, a
//! little-endian `u32` header length, a JSON header, then little-endian
//! `f64` payload values to the end of the stream.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Magic = [u8; 16];

pub const TRACE_MAGIC: Magic = *b"MECHCOND-TRACE\0\0";
pub const BUNDLE_MAGIC: Magic = *b"MECHCOND-BUNDLE\0";
pub const FILTER_MAGIC: Magic = *b"MECHCOND-FILTER\0";

pub fn write_framed<W: Write, H: Serialize>(mut w: W, magic: &Magic, header: &H, payload: &[f64]) -> Result<()> {
    let h = serde_json::to_vec(header)?;
    let len = u32::try_from(h.len()).map_err(|_| Error::Format("header exceeds 4 GiB".into()))?;
    w.write_all(magic)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&h)?;
    let mut buf = Vec::with_capacity(8 * payload.len().min(1 << 16));
    for chunk in payload.chunks(1 << 16) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_framed<R: Read, H: DeserializeOwned>(mut r: R, magic: &Magic) -> Result<(H, Vec<f64>)> {
    let mut m = [0u8; 16];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut l = [0u8; 4];
    r.read_exact(&mut l)?;
    let mut h = vec![0u8; u32::from_le_bytes(l) as usize];
    r.read_exact(&mut h)?;
    let header = serde_json::from_slice(&h)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(Error::Format(format!("payload of {} bytes is not a whole number of f64", rest.len())));
    }
    let payload = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, payload))
}

/// Does the stream start with `magic`?
pub fn has_magic(bytes: &[u8], magic: &Magic) -> bool {
    bytes.len() >= 16 && &bytes[..16] == magic
}
