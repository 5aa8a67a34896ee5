//! Run configuration: a strict JSON document. Unknown keys are rejected, and
//! every defaulted field is echoed back into the resolved config written to
//! the output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ilvae_core::diagnostics::EvalOptions;
use ilvae_core::model::ModelConfig;
use ilvae_core::train::{AnnealConfig, TrainConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub anneal: Option<AnnealSection>,
}

impl Default for TrainSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_epochs() -> usize {
    100
}

fn default_batch_size() -> usize {
    128
}

fn default_learning_rate() -> f64 {
    0.01
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSection {
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_trigger_ratio")]
    pub trigger_ratio: f64,
    #[serde(rename = "min_L", default)]
    pub min_l: f64,
}

fn default_decay() -> f64 {
    0.85
}

fn default_trigger_ratio() -> f64 {
    1.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub sigma: f64,
    /// Samples per class.
    #[serde(default = "default_toy_n")]
    pub n: usize,
}

fn default_toy_n() -> usize {
    2000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub images: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_n_eval_points")]
    pub n_eval_points: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_n_mc() -> usize {
    1024
}

fn default_n_eval_points() -> usize {
    256
}

impl RunConfig {
    /// Parse strictly; errors carry the JSON pointer path of the offending
    /// key or value.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("config error at `{}`: {}", e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| anyhow::anyhow!("config error at `model`: {e}"))?;
        match (&self.data.toy, &self.data.idx) {
            (Some(_), Some(_)) => bail!("config error at `data`: give either `toy` or `idx`, not both"),
            (None, None) => bail!("config error at `data`: one of `toy` or `idx` is required"),
            _ => {}
        }
        if let Some(toy) = &self.data.toy {
            if !(toy.sigma > 0.0) {
                bail!("config error at `data.toy.sigma`: must be > 0, got {}", toy.sigma);
            }
        }
        self.train_config(None)
            .validate()
            .map_err(|e| anyhow::anyhow!("config error at `train`: {e}"))?;
        Ok(())
    }

    /// The resolved document with every default filled in.
    pub fn resolved(&self) -> Result<String> {
        let mut cfg = self.clone();
        cfg.model.l2 = Some(cfg.model.resolved_l2());
        Ok(serde_json::to_string_pretty(&cfg)?)
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            eval_every: self.train.eval_every,
            seed: self.train.seed,
            anneal: self.train.anneal.as_ref().map(|a| AnnealConfig {
                decay: a.decay,
                trigger_ratio: a.trigger_ratio,
                min_l: a.min_l,
            }),
            checkpoint_dir,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            n_z: self.eval.n_mc,
            n_eval_points: self.eval.n_eval_points,
            ..EvalOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"kind": "il-lidmvae", "latent_dim": 2, "data_dim": 2, "c": 2,
                  "L1": 1.5, "icnn": {"layers": 2, "width": 10}},
        "data": {"toy": {"sigma": 7.5}}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.eval.n_mc, 1024);
        assert_eq!(cfg.model.resolved_l2(), 1.5);
        assert_eq!(cfg.data.toy.unwrap().n, 2000);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let bad = MINIMAL.replace(r#""data""#, r#""typo_key": 1, "data""#);
        let err = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("typo_key"), "{err}");

        let nested = MINIMAL.replace(r#""sigma": 7.5"#, r#""sigma": 7.5, "oops": 2"#);
        let err = RunConfig::from_json(&nested).unwrap_err().to_string();
        assert!(err.contains("data.toy"), "{err}");
    }

    #[test]
    fn resolved_config_echoes_every_default() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let resolved = cfg.resolved().unwrap();
        for key in ["epochs", "batch_size", "learning_rate", "n_mc", "L2", "sigma_dec"] {
            assert!(resolved.contains(key), "missing {key} in resolved config");
        }
        // the resolved document parses under the same strict rules
        RunConfig::from_json(&resolved).unwrap();
    }

    #[test]
    fn data_section_must_be_exactly_one_source() {
        let none = MINIMAL.replace(r#"{"toy": {"sigma": 7.5}}"#, "{}");
        assert!(RunConfig::from_json(&none).is_err());
    }
}
