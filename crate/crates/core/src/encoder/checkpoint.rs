//! Single-file checkpoint archive.
//!
//! ```text
//! magic    8 bytes  "MDBCKPT1"
//! meta     u32 length + UTF-8 JSON (configuration)
//! count    u32
//! tensor*  u16 name length + name, u8 rank, rank x u32 dims,
//!          prod(dims) x f32 values
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{ParamSet, ParamView};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MDBCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<StoredTensor>,
}

pub fn write_archive<W: Write>(mut w: W, meta: &serde_json::Value, params: &[ParamView<'_>]) -> Result<()> {
    w.write_all(MAGIC)?;
    let json = serde_json::to_vec(meta)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", p.name)))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.shape.len() as u8])?;
        for &d in &p.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.data.len() * 4);
        for &x in p.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated archive: {e}")))?;
    Ok(b)
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Archive> {
    if &read_exact::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint archive".into()));
    }
    let json_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)
        .map_err(|e| Error::Checkpoint(format!("truncated metadata: {e}")))?;
    let meta = serde_json::from_slice(&json)?;
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_exact::<1, _>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor {name}: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(StoredTensor { name, shape, data });
    }
    Ok(Archive { meta, tensors })
}

/// Copies stored tensors into `target`. Every parameter of `target` must be
/// present with exactly the expected shape, and nothing else may be stored.
pub fn load_into<P: ParamSet>(tensors: &[StoredTensor], target: &mut P) -> Result<()> {
    let mut views = target.views_mut();
    if views.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "archive holds {} tensors, model expects {}",
            tensors.len(),
            views.len()
        )));
    }
    for (view, stored) in views.iter_mut().zip(tensors) {
        if view.name != stored.name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {}, found {}",
                view.name, stored.name
            )));
        }
        if view.shape != stored.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, configuration implies {:?}",
                stored.name, stored.shape, view.shape
            )));
        }
        for (dst, &src) in view.data.iter_mut().zip(&stored.data) {
            *dst = src as f64;
        }
    }
    Ok(())
}

pub fn save_file(path: impl AsRef<Path>, meta: &serde_json::Value, params: &[ParamView<'_>]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_archive(std::io::BufWriter::new(f), meta, params)
}

pub fn load_file(path: impl AsRef<Path>) -> Result<Archive> {
    let f = std::fs::File::open(path)?;
    read_archive(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, EncoderConfig};

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 2,
            hidden: 4,
            ff_dim: 8,
            max_len: 8,
            vocab_size: 12,
            dropout_rate: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let model = init_model(&cfg()).unwrap();
        let meta = serde_json::json!({ "encoder": cfg() });
        let mut buf = Vec::new();
        write_archive(&mut buf, &meta, &model.views()).unwrap();
        let archive = read_archive(buf.as_slice()).unwrap();
        assert_eq!(archive.meta, meta);
        let mut loaded = model.zeros_like();
        load_into(&archive.tensors, &mut loaded).unwrap();
        for (a, b) in model.views().iter().zip(loaded.views()) {
            for (x, y) in a.data.iter().zip(b.data) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = init_model(&cfg()).unwrap();
        let mut buf = Vec::new();
        write_archive(&mut buf, &serde_json::Value::Null, &model.views()).unwrap();
        let archive = read_archive(buf.as_slice()).unwrap();
        let mut other = init_model(&EncoderConfig { hidden: 8, ..cfg() }).unwrap();
        assert!(matches!(load_into(&archive.tensors, &mut other), Err(Error::Checkpoint(_))));
        assert!(read_archive(&buf[..buf.len() - 3]).is_err());
        assert!(read_archive(&b"garbage!"[..]).is_err());
    }
}
