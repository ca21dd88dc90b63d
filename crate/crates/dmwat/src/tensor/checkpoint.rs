//! Checkpoint file format.
//!
//! One file: a single-line JSON header (names, shapes, arbitrary config)
//! terminated by `\n`, followed by the raw little-endian `f64` blocks of each
//! tensor in header order.

use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &str = "dmwat-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    config: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// A loaded checkpoint: config plus named tensors in file order.
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidData(format!("checkpoint has no tensor `{name}`")))
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &serde_json::Value,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let header = Header {
        magic: MAGIC.to_string(),
        version: VERSION,
        config: config.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(io_err)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(io_err)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&line)?;
    if header.magic != MAGIC {
        return Err(Error::InvalidData(format!(
            "not a checkpoint file: bad magic in {}",
            path.display()
        )));
    }
    if header.version != VERSION {
        return Err(Error::InvalidData(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let numel: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf).map_err(io_err)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((meta.name, Tensor::new(&meta.shape, data)?));
    }
    Ok(Checkpoint {
        config: header.config,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn roundtrip_preserves_bits_and_order() {
        let dir = std::env::temp_dir().join(format!("dmwat-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");

        let a = Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, -0.125]).unwrap();
        let b = Tensor::new(&[4], vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        let cfg = json!({"embed_dim": 64, "note": "test"});
        save_checkpoint(
            &path,
            &cfg,
            &[("a".to_string(), &a), ("b".to_string(), &b)],
        )
        .unwrap();

        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.config, cfg);
        assert_eq!(ckpt.tensors.len(), 2);
        assert_eq!(ckpt.tensors[0].0, "a");
        assert_eq!(ckpt.tensor("a").unwrap(), &a);
        assert_eq!(ckpt.tensor("b").unwrap(), &b);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_non_checkpoint_file() {
        let dir = std::env::temp_dir().join(format!("dmwat-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.ckpt");
        std::fs::write(&path, b"{\"magic\":\"nope\",\"version\":1,\"config\":{},\"tensors\":[]}\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
