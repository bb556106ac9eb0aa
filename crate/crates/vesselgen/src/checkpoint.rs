//! Self-describing checkpoint files.
//!
//! Layout: an 8-byte magic string, a little-endian u32 format version, a
//! length-prefixed JSON metadata block (run config, epoch, loss history,
//! optimizer step), then named tensors as little-endian f32 with explicit
//! shapes. Parameters and optimizer moments round-trip bit for bit, and
//! loading needs no external configuration.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::denoiser::{DenoiserParams, UNetDenoiser};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerState};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"VGENCKPT";
const VERSION: u32 = 1;

const MOMENT1_PREFIX: &str = "opt.m.";
const MOMENT2_PREFIX: &str = "opt.v.";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    config: RunConfig,
    epoch: usize,
    loss_history: Vec<f64>,
    adam: AdamConfig,
    adam_step: u64,
}

/// Everything needed to resume or sample: the run config, the model, the
/// optimizer, and the loss history so far.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: UNetDenoiser,
    pub optimizer: OptimizerState,
    pub loss_history: Vec<f64>,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Metadata {
            config: self.config.clone(),
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
            adam: self.optimizer.cfg,
            adam_step: self.optimizer.step,
        };
        let meta_bytes = serde_json::to_vec(&meta)
            .map_err(|e| Error::format(path, format!("metadata serialize: {e}")))?;

        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        for (name, t) in self.model.params().iter() {
            tensors.push((name.clone(), t));
        }
        for (name, t) in &self.optimizer.first_moment {
            tensors.push((format!("{MOMENT1_PREFIX}{name}"), t));
        }
        for (name, t) in &self.optimizer.second_moment {
            tensors.push((format!("{MOMENT2_PREFIX}{name}"), t));
        }

        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&meta_bytes).map_err(io_err)?;
        w.write_all(&(tensors.len() as u64).to_le_bytes()).map_err(io_err)?;
        for (name, tensor) in tensors {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
            w.write_all(name_bytes).map_err(io_err)?;
            w.write_all(&(tensor.shape().len() as u64).to_le_bytes()).map_err(io_err)?;
            for &dim in tensor.shape() {
                w.write_all(&(dim as u64).to_le_bytes()).map_err(io_err)?;
            }
            for &v in tensor.values() {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Load and validate a checkpoint. The magic and version are checked
    /// before anything else is read.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::format(path, "bad magic: not a checkpoint file"));
        }
        let version = read_u32(&mut r, path)?;
        if version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}, expected {VERSION}"),
            ));
        }
        let meta_len = read_u64(&mut r, path)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes).map_err(io_err)?;
        let meta: Metadata = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::format(path, format!("metadata parse: {e}")))?;

        let tensor_count = read_u64(&mut r, path)? as usize;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..tensor_count {
            let name_len = read_u64(&mut r, path)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(io_err)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
            let ndim = read_u64(&mut r, path)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r, path)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0u8; numel * 4];
            r.read_exact(&mut data).map_err(io_err)?;
            let values: Vec<f32> = data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if tensors.insert(name.clone(), Tensor::from_vec(shape, values)?).is_some() {
                return Err(Error::format(path, format!("duplicate tensor {name}")));
            }
        }

        let mut params = DenoiserParams::default();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, tensor) in tensors {
            if let Some(base) = name.strip_prefix(MOMENT1_PREFIX) {
                first.insert(base.to_string(), tensor);
            } else if let Some(base) = name.strip_prefix(MOMENT2_PREFIX) {
                second.insert(base.to_string(), tensor);
            } else {
                params.insert(name, tensor);
            }
        }
        if !params.all_finite() {
            return Err(Error::Numerical(format!(
                "checkpoint {} holds non-finite parameters",
                path.display()
            )));
        }
        let model = UNetDenoiser::from_params(meta.config.denoiser, params)?;
        let optimizer = OptimizerState {
            cfg: meta.adam,
            step: meta.adam_step,
            first_moment: first,
            second_moment: second,
        };
        Ok(Checkpoint {
            config: meta.config,
            model,
            optimizer,
            loss_history: meta.loss_history,
            epoch: meta.epoch,
        })
    }
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;

    fn sample_checkpoint() -> Checkpoint {
        let denoiser = DenoiserConfig { base_channels: 4, depth: 1, time_embed_dim: 8 };
        let config = RunConfig { resolution: 8, denoiser, ..RunConfig::default() };
        let model = UNetDenoiser::init(denoiser, 3).unwrap();
        let optimizer = OptimizerState::new(AdamConfig::with_learning_rate(1e-3), model.params());
        Checkpoint {
            config,
            model,
            optimizer,
            loss_history: vec![1.25, 0.75, 0.5],
            epoch: 3,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.loss_history, ckpt.loss_history);
        assert_eq!(back.config, ckpt.config);
        for ((na, ta), (nb, tb)) in ckpt.model.params().iter().zip(back.model.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let a: Vec<u32> = ta.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = tb.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{na}");
        }
        assert_eq!(back.optimizer.step, ckpt.optimizer.step);
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample_checkpoint();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        ckpt.save(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.ckpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
