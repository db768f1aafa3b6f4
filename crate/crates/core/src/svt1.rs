//! The `SVT1` tensor container and the plain-text weight manifest.
//!
//! Layout: magic `SVT1`, one dtype byte (`0` = f64, `1` = bit-packed), one
//! rank byte, `rank` little-endian `u64` extents, then the payload: f64
//! values little-endian, or the packed `u64` words (little-endian, padding
//! bits zero).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{RealTensor, Shape, SpikeTensor};

pub const MAGIC: &[u8; 4] = b"SVT1";
const DTYPE_F64: u8 = 0;
const DTYPE_BITS: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    Real(RealTensor),
    Spike(SpikeTensor),
}

impl From<RealTensor> for StoredTensor {
    fn from(t: RealTensor) -> Self {
        Self::Real(t)
    }
}

impl From<SpikeTensor> for StoredTensor {
    fn from(t: SpikeTensor) -> Self {
        Self::Spike(t)
    }
}

fn write_header(out: &mut Vec<u8>, dtype: u8, shape: &Shape) -> Result<()> {
    let rank = u8::try_from(shape.rank())
        .map_err(|_| Error::Format(format!("rank {} exceeds 255", shape.rank())))?;
    out.extend_from_slice(MAGIC);
    out.push(dtype);
    out.push(rank);
    for &d in shape.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

pub fn encode(t: &StoredTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match t {
        StoredTensor::Real(r) => {
            write_header(&mut out, DTYPE_F64, r.shape())?;
            for v in r.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        StoredTensor::Spike(s) => {
            write_header(&mut out, DTYPE_BITS, s.shape())?;
            for w in s.words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<StoredTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = cur.take(1)?[0];
    let rank = cur.take(1)?[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = usize::try_from(cur.u64()?).map_err(|_| Error::Format("extent overflow".into()))?;
        dims.push(d);
    }
    let shape = Shape::new(dims).map_err(|e| Error::Format(e.to_string()))?;
    let tensor = match dtype {
        DTYPE_F64 => {
            let n = shape.numel();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(cur.u64()?));
            }
            StoredTensor::Real(RealTensor::from_shape(shape, data)?)
        }
        DTYPE_BITS => {
            let n = shape.last().div_ceil(64) * shape.rows();
            let mut words = Vec::with_capacity(n);
            for _ in 0..n {
                words.push(cur.u64()?);
            }
            StoredTensor::Spike(SpikeTensor::from_words(shape, words)?)
        }
        other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
    };
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(tensor)
}

pub fn write_file(path: impl AsRef<Path>, t: &StoredTensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t)?)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<StoredTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn read_real(path: impl AsRef<Path>) -> Result<RealTensor> {
    match read_file(path)? {
        StoredTensor::Real(t) => Ok(t),
        StoredTensor::Spike(s) => Ok(s.unpack()),
    }
}

/// Named real tensors, saved as one `SVT1` file each plus a `key=path`
/// manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, RealTensor>,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: RealTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&RealTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}` in weight store")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RealTensor)> {
        self.tensors.iter()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(RealTensor::numel).sum()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (name, t) in &self.tensors {
            let file = format!("{}.svt1", name.replace(['/', '.'], "_"));
            write_file(dir.join(&file), &StoredTensor::Real(t.clone()))?;
            manifest.push_str(&format!("{name}={file}\n"));
        }
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, manifest)?;
        Ok(path)
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let mut store = Self::new();
        for (lineno, line) in fs::read_to_string(manifest)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rel) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("manifest line {}: expected key=path", lineno + 1))
            })?;
            store.insert(key.trim(), read_real(dir.join(rel.trim()))?);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = RealTensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t.into()).unwrap();
        assert_eq!(&bytes[..4], b"SVT1");
        assert_eq!(bytes[4], 0);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 16);
    }

    #[test]
    fn spike_round_trip_bit_exact() {
        let s = SpikeTensor::from_fn(vec![3, 67], |i| i % 5 == 0).unwrap();
        let bytes = encode(&s.clone().into()).unwrap();
        assert_eq!(bytes.len(), 6 + 16 + 3 * 2 * 8);
        assert_eq!(decode(&bytes).unwrap(), StoredTensor::Spike(s));
        assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let bytes = encode(&RealTensor::zeros(vec![4]).unwrap().into()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"SVT2\0\x01").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn weight_store_manifest_round_trip() {
        let dir = std::env::temp_dir().join(format!("svt1-store-{}", std::process::id()));
        let mut store = WeightStore::new();
        store.insert(
            "attn.q",
            RealTensor::from_fn(vec![2, 2], |i| i as f64).unwrap(),
        );
        store.insert("attn.out", RealTensor::filled(vec![3], 0.5).unwrap());
        let manifest = store.save(&dir).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.contains("attn.q=attn_q.svt1"));
        assert_eq!(WeightStore::load(&manifest).unwrap(), store);
        fs::remove_dir_all(dir).unwrap();
    }
}
