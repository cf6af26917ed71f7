//! Experiment configuration: one TOML file plus `--set key=value` overrides.
//!
//! Every section is optional and falls back to the defaults below. Unknown
//! keys are rejected.
//!
//! ```toml
//! seed = 0                    # model init, shuffling; also data.seed unless set
//!
//! [paths]
//! data = "/some/dataset"      # optional input root with {train,test}/{images,masks};
//!                             # defaults to <out>/data as written by gen-data
//!
//! [data]                      # synthetic generator (gen-data)
//! count = 320
//! image_size = 64
//! shapes = "ellipses"         # or "blobs"
//! contrast = 0.15
//! noise = 0.2
//! texture = true
//! train_fraction = 0.8
//!
//! [segnet]
//! depth = 3
//! base_channels = 8
//! num_classes = 2
//! input_channels = 1
//!
//! [seg_training]
//! epochs = 20
//! batch_size = 8
//!
//! [optimizer]                 # Adadelta, shared by every training stage
//! rho = 0.95
//! epsilon = 1e-6
//!
//! [perturb]
//! gamma = 1.0
//! max_iters = 100
//! dice_tolerance = 0.995
//!
//! [translator]
//! blocks = 2
//! growth_channels = 8
//! layers_per_block = 3
//! input_channels = 1
//!
//! [translator_training]
//! epochs = 20
//! batch_size = 8
//!
//! [loss]
//! lambda = 1.0
//! ssim_window = 8
//! ssim_k1 = 0.01
//! ssim_k2 = 0.03
//! dynamic_range = 1.0
//!
//! [mode]
//! split = "test"              # split used by perturb and infer
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Split, SynthConfig};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::losses::TranslationLossConfig;
use crate::optim::AdadeltaConfig;
use crate::perturb::PerturbConfig;
use crate::segnet::SegNetConfig;
use crate::train::Schedule;
use crate::translator::TranslatorConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConfig {
    pub split: Split,
}

impl Default for ModeConfig {
    fn default() -> Self {
        ModeConfig { split: Split::Test }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: SynthConfig,
    pub segnet: SegNetConfig,
    pub seg_training: Schedule,
    pub optimizer: AdadeltaConfig,
    pub perturb: PerturbConfig,
    pub translator: TranslatorConfig,
    pub translator_training: Schedule,
    pub loss: TranslationLossConfig,
    pub mode: ModeConfig,
}


impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.segnet.validate()?;
        self.perturb.validate()?;
        self.translator.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        for (name, s) in [
            ("seg_training", &self.seg_training),
            ("translator_training", &self.translator_training),
        ] {
            if s.batch_size == 0 {
                return Err(Error::Config(format!("{name}.batch_size must be at least 1")));
            }
        }
        if self.translator.input_channels != self.segnet.input_channels {
            return Err(Error::Config(format!(
                "translator.input_channels {} differs from segnet.input_channels {}",
                self.translator.input_channels, self.segnet.input_channels
            )));
        }
        Ok(())
    }

    /// Seed for one pipeline stage, derived from the global seed.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stage.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    /// Parses TOML text, applies `key=value` overrides, fills defaults.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let global_seed = value.get("seed").cloned().unwrap_or(toml::Value::Integer(0));
        let data = value
            .entry("data")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = data {
            t.entry("seed").or_insert(global_seed);
        }
        let cfg: ExperimentConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// `a.b.c=value`; the value is parsed as a TOML literal, or taken as a bare
/// string when that fails.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{assignment}`: `{p}` is not a table"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = ExperimentConfig::from_toml_str(
            "[perturb]\ngamma = 0.5\n",
            &["perturb.max_iters=7".into(), "data.shapes=blobs".into(), "mode.split=train".into()],
        )
        .unwrap();
        assert_eq!(cfg.perturb.gamma, 0.5);
        assert_eq!(cfg.perturb.max_iters, 7);
        assert_eq!(cfg.data.shapes, crate::data::ShapeFamily::Blobs);
        assert_eq!(cfg.mode.split, Split::Train);
    }

    #[test]
    fn global_seed_flows_into_data_unless_set() {
        let cfg = ExperimentConfig::from_toml_str("seed = 9", &[]).unwrap();
        assert_eq!(cfg.data.seed, 9);
        let cfg = ExperimentConfig::from_toml_str("seed = 9\n[data]\nseed = 2", &[]).unwrap();
        assert_eq!(cfg.data.seed, 2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::from_toml_str("[segnet]\ndepht = 2", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("depht"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected_before_use() {
        let err = ExperimentConfig::from_toml_str("", &["perturb.gamma=0".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(ExperimentConfig::from_toml_str("", &["nokey".into()]).is_err());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let cfg = ExperimentConfig::from_toml_str("seed = 4", &["loss.lambda=10".into()]).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
