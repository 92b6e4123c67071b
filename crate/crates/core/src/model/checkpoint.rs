//! Binary checkpoint: 8-byte magic, `u64` little-endian header length, a JSON
//! header, then every parameter as `f64` little-endian in declared order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CcrGnnConfig, CcrGnnParams};
use crate::autodiff::Matrix;
use crate::data::FeatureSchema;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CCRGNN\x00\x01";
const MAX_HEADER_BYTES: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: CcrGnnConfig,
    pub feature_dim: usize,
    /// Preprocessing fitted on the training data, when it came from raw CSV.
    pub schema: Option<FeatureSchema>,
    pub seed: u64,
    pub epoch: usize,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: CcrGnnParams,
}

impl Checkpoint {
    pub fn new(
        model: CcrGnnConfig,
        params: CcrGnnParams,
        schema: Option<FeatureSchema>,
        seed: u64,
        epoch: usize,
    ) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                model,
                feature_dim: params.feature_dim,
                schema,
                seed,
                epoch,
                param_count: params.num_scalars(),
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_checkpoint(self, &mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(std::io::BufReader::new(file))
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, mut writer: impl Write) -> Result<()> {
    let header = serde_json::to_vec(&ckpt.header)?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    writer.write_all(MAGIC).map_err(io)?;
    writer.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    writer.write_all(&header).map_err(io)?;
    for t in ckpt.params.tensors() {
        for v in t.as_slice() {
            writer.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    writer.flush().map_err(io)
}

fn truncated(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| Error::Checkpoint(format!("truncated {what}: {e}"))
}

pub fn read_checkpoint(mut reader: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a ccr-gnn checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    reader.read_exact(&mut len).map_err(truncated("header length"))?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(Error::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut header = vec![0u8; len as usize];
    reader.read_exact(&mut header).map_err(truncated("header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&header)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.model.validate()?;

    let shapes = header.model.param_shapes(header.feature_dim);
    let expected: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if expected != header.param_count {
        return Err(Error::Checkpoint(format!(
            "header declares {} parameters but the architecture has {expected}",
            header.param_count
        )));
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    let mut buf = [0u8; 8];
    for (r, c) in shapes {
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            reader.read_exact(&mut buf).map_err(truncated("payload"))?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Matrix::from_vec(r, c, data));
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(truncated("payload"))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    let params = CcrGnnParams::from_tensors(&header.model, header.feature_dim, tensors)?;
    Ok(Checkpoint { header, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{init_params, InitKind};

    fn sample() -> Checkpoint {
        let cfg = CcrGnnConfig {
            channels: vec![2, 3],
            pooling: vec![crate::gat::PoolKind::Mean, crate::gat::PoolKind::Max],
            mlp_hidden: vec![4],
            num_classes: 3,
            ..Default::default()
        };
        let params = init_params(&cfg, 5, 9, InitKind::XavierUniform).unwrap();
        Checkpoint::new(cfg, params, None, 9, 4)
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_checkpoint(bad_magic.as_slice()), Err(Error::Checkpoint(_))));
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(read_checkpoint(longer.as_slice()), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&bytes[..4]).is_err());
    }
}
