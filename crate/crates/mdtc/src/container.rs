//! MDTC1 container: checkpoint and dataset files.
//!
//! Layout on disk: the magic bytes `MDTC1`, a little-endian u64 byte length,
//! a JSON metadata block (version, config, named tensor shapes), then the raw
//! tensor payloads in metadata order. Floats are little-endian IEEE-754
//! doubles; token arrays are little-endian u32. Round-trips are bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"MDTC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> Dtype {
        match self {
            TensorData::F64(_) => Dtype::F64,
            TensorData::U32(_) => Dtype::U32,
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match self {
            TensorData::F64(v) => Ok(v),
            TensorData::U32(_) => Err(Error::Format("expected f64 tensor".into())),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match self {
            TensorData::U32(v) => Ok(v),
            TensorData::F64(_) => Err(Error::Format("expected u32 tensor".into())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

/// An in-memory MDTC1 file: a kind tag, free-form JSON config, and named
/// tensors in a fixed order.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    tensors: Vec<(TensorMeta, TensorData)>,
    index: HashMap<String, usize>,
}

impl Container {
    pub fn new(kind: &str, config: serde_json::Value) -> Container {
        Container {
            kind: kind.to_string(),
            config,
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Format(format!(
                "tensor {name}: shape {shape:?} does not match {} elements",
                data.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.tensors.push((
            TensorMeta { name: name.to_string(), dtype: data.dtype(), shape },
            data,
        ));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TensorData> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i].1)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&TensorMeta, &TensorData)> {
        self.tensors.iter().map(|(m, d)| (m, d))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = Header {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(m, _)| m.clone()).collect(),
        };
        let meta = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        for (_, data) in &self.tensors {
            match data {
                TensorData::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::U32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Container> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{}: bad magic", path.display())));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let meta_len = u64::from_le_bytes(len_bytes) as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let header: Header = serde_json::from_slice(&meta)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported container version {}", header.version)));
        }
        let mut out = Container::new(&header.kind, header.config);
        for meta in header.tensors {
            let numel: usize = meta.shape.iter().product();
            let data = match meta.dtype {
                Dtype::F64 => {
                    let mut buf = vec![0u8; numel * 8];
                    r.read_exact(&mut buf)?;
                    TensorData::F64(
                        buf.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                Dtype::U32 => {
                    let mut buf = vec![0u8; numel * 4];
                    r.read_exact(&mut buf)?;
                    TensorData::U32(
                        buf.chunks_exact(4)
                            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
            };
            out.push(&meta.name, meta.shape, data)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("mdtc-container-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.mdtc");

        let mut c = Container::new("checkpoint", serde_json::json!({"d_model": 8}));
        let floats = vec![0.1, -2.5e-300, f64::MIN_POSITIVE, 1.0 / 3.0, -0.0];
        c.push("w", vec![5], TensorData::F64(floats.clone())).unwrap();
        c.push("ids", vec![2, 2], TensorData::U32(vec![0, 1, u32::MAX, 7])).unwrap();
        c.write(&path).unwrap();

        let back = Container::read(&path).unwrap();
        assert_eq!(back.kind, "checkpoint");
        assert_eq!(back.config["d_model"], 8);
        let w = back.get("w").unwrap().as_f64().unwrap();
        for (a, b) in w.iter().zip(&floats) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.get("ids").unwrap().as_u32().unwrap(), &[0, 1, u32::MAX, 7]);
    }

    #[test]
    fn empty_tensor_allowed() {
        let dir = std::env::temp_dir().join("mdtc-container-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.mdtc");
        let mut c = Container::new("dataset", serde_json::json!({}));
        c.push("prompt", vec![0], TensorData::U32(vec![])).unwrap();
        c.write(&path).unwrap();
        let back = Container::read(&path).unwrap();
        assert!(back.get("prompt").unwrap().is_empty());
    }

    #[test]
    fn shape_mismatch_and_bad_magic_rejected() {
        let mut c = Container::new("x", serde_json::json!({}));
        assert!(c.push("w", vec![3], TensorData::F64(vec![1.0])).is_err());

        let dir = std::env::temp_dir().join("mdtc-container-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.mdtc");
        std::fs::write(&path, b"NOTMD____").unwrap();
        assert!(Container::read(&path).is_err());
    }
}
