//! Run configuration: the single document that pins a training or sampling
//! run, with a canonical JSON form for digesting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserConfig;
use crate::diffusion::LossConfig;
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Mask height and width in pixels.
    pub resolution: usize,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Directory of training mask PNGs; optional for commands that only
    /// sample or synthesize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: 32,
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            loss: LossConfig::vessel(2.0),
            train: TrainConfig::default(),
            dataset_dir: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::InvalidParameter("resolution must be positive".into()));
        }
        let div = 1usize << self.denoiser.depth;
        if self.resolution % div != 0 {
            return Err(Error::InvalidParameter(format!(
                "resolution {} not divisible by 2^depth = {div}",
                self.resolution
            )));
        }
        self.denoiser.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.schedule.build().map(|_| ())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("config parse: {e}")))?;
        cfg.validate()?;
        if let Some(dir) = &cfg.dataset_dir {
            if !dir.is_dir() {
                return Err(Error::InvalidParameter(format!(
                    "dataset_dir {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, format!("config serialize: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Canonical JSON: sorted keys, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

/// Render a JSON value with object keys sorted and no extra whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json object maps are BTreeMaps, so `to_string` already walks
    // keys in sorted order
    serde_json::to_string(&sorted(value)).expect("value serializes")
}

fn sorted(value: &serde_json::Value) -> serde_json::Value {
    match value {
        serde_json::Value::Object(map) => serde_json::Value::Object(
            map.iter().map(|(k, v)| (k.clone(), sorted(v))).collect(),
        ),
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.iter().map(sorted).collect())
        }
        other => other.clone(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig { resolution: 64, ..RunConfig::default() };
        assert_ne!(a.digest(), c.digest());
        let d = RunConfig {
            loss: LossConfig::vessel(2.5),
            ..RunConfig::default()
        };
        assert_ne!(a.digest(), d.digest());
    }

    #[test]
    fn canonical_form_has_sorted_keys_no_whitespace() {
        let cfg = RunConfig::default();
        let canon = cfg.canonical_json();
        assert!(!canon.contains("\n"));
        assert!(!canon.contains(": "));
        let denoiser_pos = canon.find("\"denoiser\"").unwrap();
        let train_pos = canon.find("\"train\"").unwrap();
        assert!(denoiser_pos < train_pos);
    }

    #[test]
    fn round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = RunConfig { resolution: 64, ..RunConfig::default() };
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn missing_dataset_dir_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = RunConfig {
            dataset_dir: Some(PathBuf::from("/definitely/not/here")),
            ..RunConfig::default()
        };
        cfg.save(&path).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let cfg = RunConfig { resolution: 30, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
