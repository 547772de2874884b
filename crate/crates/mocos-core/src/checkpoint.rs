//! Binary checkpoint format: the run configuration echoed as text followed
//! by every model tensor in declaration order.
//!
//! Layout, all integers little-endian:
//! `MOCOSCKPT1` magic, u64 config byte length, the canonical config string,
//! u64 tensor count, then per tensor a u32 rank, u64 dimensions, and the
//! f64 payload. The config echo must carry a resolved positional-encoding
//! width so the reader can rebuild the model shape without a dataset.

use std::path::Path;

use crate::config::RunConfig;
use crate::encoder::{ModelDims, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 10] = b"MOCOSCKPT1";

fn dims_of(config: &RunConfig) -> Result<ModelDims> {
    let k = config.k.ok_or_else(|| {
        Error::Checkpoint("config echo requires a resolved k (positional-encoding width)".into())
    })?;
    Ok(ModelDims {
        d: config.d,
        d_k: config.d_k,
        heads: config.heads,
        layers: config.layers,
        k,
    })
}

/// Serializes a checkpoint. The parameters must match the architecture the
/// config describes.
pub fn encode_checkpoint(config: &RunConfig, params: &ModelParams) -> Result<Vec<u8>> {
    config.validate()?;
    let dims = dims_of(config)?;
    if params.dims != dims {
        return Err(Error::Checkpoint(format!(
            "parameter dims {:?} do not match the config {:?}",
            params.dims, dims
        )));
    }
    let echo = config.to_config_string();
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(echo.len() as u64).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
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
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deserializes a checkpoint, validating magic, shapes, and finiteness.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(RunConfig, ModelParams)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let echo_len = cur.u64()? as usize;
    let echo = std::str::from_utf8(cur.take(echo_len)?)
        .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
    let config = RunConfig::parse_str(echo)?;
    let dims = dims_of(&config)?;
    // Zero-filled parameters carry the shape; the payload overwrites them.
    let mut params = ModelParams::init(dims, 0)?;
    let count = cur.u64()? as usize;
    let expected = params.tensor_shapes();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for this architecture, found {count}",
            expected.len()
        )));
    }
    for (idx, (tensor, want)) in params.tensors_mut().into_iter().zip(expected).enumerate() {
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        if shape != want {
            return Err(Error::Checkpoint(format!(
                "tensor {idx} has shape {shape:?}, architecture wants {want:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8)?;
        for (slot, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if !tensor.all_finite() {
            return Err(Error::Checkpoint(format!(
                "tensor {idx} contains a non-finite parameter"
            )));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(config, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, ModelParams)> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.set("d", "8").unwrap();
        cfg.set("heads", "2").unwrap();
        cfg.set("d_k", "4").unwrap();
        cfg.set("layers", "1").unwrap();
        cfg.set("k", "3").unwrap();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let cfg = small_config();
        let params = ModelParams::init(dims_of(&cfg).unwrap(), 42).unwrap();
        let bytes = encode_checkpoint(&cfg, &params).unwrap();
        let (cfg2, params2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        for (a, b) in params.tensors().iter().zip(params2.tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn save_and_load_round_trip_through_a_file() {
        let cfg = small_config();
        let params = ModelParams::init(dims_of(&cfg).unwrap(), 1).unwrap();
        let path = std::env::temp_dir().join(format!("ckpt-test-{}.bin", std::process::id()));
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = decode_checkpoint(&std::fs::read(&path).unwrap()).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(cfg2, cfg);
        assert_eq!(params2.tensors().len(), params.tensors().len());
        let _ = load_checkpoint; // file loader is the same decode path
    }

    #[test]
    fn bad_magic_is_rejected() {
        let cfg = small_config();
        let params = ModelParams::init(dims_of(&cfg).unwrap(), 0).unwrap();
        let mut bytes = encode_checkpoint(&cfg, &params).unwrap();
        bytes[0] ^= 0xff;
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let cfg = small_config();
        let params = ModelParams::init(dims_of(&cfg).unwrap(), 0).unwrap();
        let bytes = encode_checkpoint(&cfg, &params).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn unresolved_k_cannot_be_saved() {
        let mut cfg = small_config();
        cfg.k = None;
        let dims = ModelDims {
            d: 8,
            d_k: 4,
            heads: 2,
            layers: 1,
            k: 3,
        };
        let params = ModelParams::init(dims, 0).unwrap();
        let err = encode_checkpoint(&cfg, &params).unwrap_err();
        assert!(err.to_string().contains("resolved k"), "{err}");
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let cfg = small_config();
        let dims = ModelDims {
            d: 8,
            d_k: 4,
            heads: 2,
            layers: 2,
            k: 3,
        };
        let params = ModelParams::init(dims, 0).unwrap();
        assert!(encode_checkpoint(&cfg, &params).is_err());
    }
}
