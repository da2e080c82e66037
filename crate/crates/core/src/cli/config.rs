//! Declarative experiment configuration.
//!
//! A config is a TOML (or, for snapshots written by `train`, JSON) document:
//!
//! ```toml
//! [data]
//! preset = "clean"          # or "weak-link"; alternatively a full [data.synth] table
//! seed = 7
//! replicate = { modality = 0, copies = 2 }   # optional
//!
//! [train]
//! strategy = "unicat"       # fusion-avg | fusion-concat | unicat
//! epochs = 200
//! seed = 0
//!
//! [eval]                    # optional; defaults depend on the strategy
//! normalize_first = true
//! exclude_same_view = false
//! max_rank = 50
//!
//! [grid]                    # optional; switches `train` to grid search
//! batch_sizes = [32, 64, 128]
//! learning_rates = [0.01, 0.02, 0.05]
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{FusionFlags, Replication};
use crate::pipeline::{config_hash, GridSpec, TrainConfig};
use crate::synthdata::{generate, replicate_modality, MultimodalDataset, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "clean")]
    Clean,
    #[serde(rename = "weak-link")]
    WeakLink,
}

impl Preset {
    pub fn config(self, seed: u64) -> SynthConfig {
        match self {
            Preset::Clean => SynthConfig::clean(seed),
            Preset::WeakLink => SynthConfig::weak_link(seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Overrides the seed of a preset; ignored for `synth`, which carries its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<Replication>,
}

impl DataConfig {
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let cfg = match (&self.preset, &self.synth) {
            (Some(p), None) => p.config(self.seed.unwrap_or(0)),
            (None, Some(s)) => {
                if self.seed.is_some() {
                    return Err(Error::Config(
                        "data.seed only applies to presets; set data.synth.seed instead".into(),
                    ));
                }
                s.clone()
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data: give either `preset` or a `synth` table, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "data: one of `preset` or a `synth` table is required".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the optional replication to an already generated or loaded set.
    pub fn finish(&self, ds: MultimodalDataset) -> Result<MultimodalDataset> {
        match self.replicate {
            Some(r) => replicate_modality(&ds, r.modality, r.copies),
            None => Ok(ds),
        }
    }

    pub fn build(&self) -> Result<MultimodalDataset> {
        self.finish(generate(&self.synth_config()?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<FusionFlags>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl ExperimentConfig {
    pub fn parse_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::parse_json(&text)
        } else {
            Self::parse_toml(&text)
        };
        parsed.map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth_config()?;
        self.train.validate()?;
        if let Some(g) = &self.grid {
            if g.batch_sizes.is_empty() || g.learning_rates.is_empty() {
                return Err(Error::Config(
                    "grid needs batch_sizes and learning_rates".into(),
                ));
            }
        }
        if let Some(f) = &self.eval {
            if f.max_rank == 0 {
                return Err(Error::Config("eval.max_rank must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn flags(&self) -> FusionFlags {
        self.eval
            .unwrap_or_else(|| FusionFlags::for_strategy(self.train.strategy))
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Strategy;

    const MINIMAL: &str = r#"
[data]
preset = "weak-link"
seed = 3

[train]
strategy = "fusion-concat"
epochs = 20
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::parse_toml(MINIMAL).unwrap();
        assert_eq!(c.train.strategy, Strategy::FusionConcat);
        assert_eq!(c.train.p, 16);
        assert_eq!(c.data.synth_config().unwrap(), SynthConfig::weak_link(3));
        assert!(!c.flags().normalize_first);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in [
            format!("{MINIMAL}\nbogus = 1\n"),
            MINIMAL.replace("epochs = 20", "epochs = 20\nlearning_rate = 0.1"),
            MINIMAL.replace("seed = 3", "seed = 3\ncolour = \"red\""),
        ] {
            assert!(matches!(
                ExperimentConfig::parse_toml(&text),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn data_source_must_be_unique() {
        let none = "[data]\n[train]\nstrategy = \"unicat\"\n";
        assert!(matches!(
            ExperimentConfig::parse_toml(none),
            Err(Error::Config(_))
        ));
        let c = ExperimentConfig::parse_toml(MINIMAL).unwrap();
        let mut both = c.clone();
        both.data.synth = Some(SynthConfig::clean(0));
        assert!(both.validate().is_err());
    }

    #[test]
    fn json_snapshot_reparses_to_same_hash() {
        let c = ExperimentConfig::parse_toml(MINIMAL).unwrap();
        let back = ExperimentConfig::parse_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}
