//! Checkpoint file format: magic `CSC1`, a u32 format version, a
//! length-prefixed JSON header (config + vocabularies), then every tensor in
//! declaration order with an explicit shape header and little-endian 64-bit
//! float payload.

use super::config::ModelConfig;
use super::net::ModelParams;
use super::vocab::Vocab;
use super::ModelError;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CSC1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

/// A trained model plus everything needed to run it.
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

impl Checkpoint {
    /// Rejects use of a model trained under a different bin layout.
    pub fn ensure_bins(&self, expected: &crate::crbin::BinConfig) -> Result<(), ModelError> {
        if self.config.bin_config != *expected {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint bins delta={} ({} bins) incompatible with requested delta={} ({} bins)",
                self.config.bin_config.delta(),
                self.config.bin_config.num_bins(),
                expected.delta(),
                expected.num_bins()
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(
    params: &ModelParams,
    config: &ModelConfig,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    path: &Path,
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = Header {
        config: config.clone(),
        src_vocab: src_vocab.clone(),
        tgt_vocab: tgt_vocab.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ModelError::ConfigMismatch(format!("unserializable header: {e}")))?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, tensor) in params.flat() {
        w.write_all(&2u32.to_le_bytes())?; // rank
        w.write_all(&(tensor.nrows() as u64).to_le_bytes())?;
        w.write_all(&(tensor.ncols() as u64).to_le_bytes())?;
        for &v in tensor.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::DimensionMismatch("file truncated".into())
        } else {
            ModelError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::VersionMismatch(version));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or_truncated(&mut r, &mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelError::DimensionMismatch(format!("bad header: {e}")))?;
    header.config.validate()?;
    let mut src_vocab = header.src_vocab;
    let mut tgt_vocab = header.tgt_vocab;
    src_vocab.rebuild_index();
    tgt_vocab.rebuild_index();

    let mut params = ModelParams::zeros(&header.config);
    for (name, tensor) in params.flat_mut() {
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(ModelError::DimensionMismatch(format!(
                "tensor {name}: rank {rank}, expected 2"
            )));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if (rows, cols) != tensor.dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "tensor {name}: stored {rows}x{cols}, expected {}x{}",
                tensor.nrows(),
                tensor.ncols()
            )));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        read_exact_or_truncated(&mut r, &mut buf)?;
        for (slot, chunk) in tensor.iter_mut().zip(buf.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::DimensionMismatch("trailing bytes after tensors".into()));
    }
    if !params.all_finite() {
        return Err(ModelError::DimensionMismatch("non-finite tensor values".into()));
    }
    Ok(Checkpoint { params, config: header.config, src_vocab, tgt_vocab })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crbin::BinConfig;
    use rand::SeedableRng;

    fn sample() -> (ModelConfig, ModelParams, Vocab, Vocab) {
        let mut config = ModelConfig::tiny(BinConfig::new(0.2).unwrap());
        let src = Vocab::build(["x".into(), "y".into()], 0);
        let tgt = Vocab::build(["u".into(), "v".into(), "w".into()], 0);
        config.src_vocab = src.len();
        config.tgt_vocab = tgt.len();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let params = ModelParams::init(&config, &mut rng);
        (config, params, src, tgt)
    }

    #[test]
    fn round_trip_is_identity() {
        let (config, params, src, tgt) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &config, &src, &tgt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.src_vocab.id("x"), src.id("x"));
        assert_eq!(loaded.tgt_vocab.len(), tgt.len());
    }

    #[test]
    fn truncated_file_never_partially_loads() {
        let (config, params, src, tgt) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &config, &src, &tgt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [2usize, 6, 20, bytes.len() / 2, bytes.len() - 5] {
            let short = dir.path().join("short.ckpt");
            std::fs::write(&short, &bytes[..cut]).unwrap();
            match load_checkpoint(&short) {
                Err(ModelError::BadMagic) | Err(ModelError::DimensionMismatch(_)) => {}
                other => panic!("cut at {cut}: expected BadMagic/DimensionMismatch, got {other:?}",
                    other = other.err()),
            }
        }
    }

    #[test]
    fn bin_layout_mismatch_rejected() {
        let (config, params, src, tgt) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &config, &src, &tgt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        loaded.ensure_bins(&BinConfig::new(0.2).unwrap()).unwrap();
        assert!(matches!(
            loaded.ensure_bins(&BinConfig::new(0.05).unwrap()),
            Err(ModelError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOPE00000000").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::BadMagic)));
    }

    #[test]
    fn unsupported_version_rejected() {
        let (config, params, src, tgt) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&params, &config, &src, &tgt, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::VersionMismatch(99))));
    }
}
