//! TOML experiment config. Every field has a default; command-line flags
//! override whatever the file sets.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::audio_io::{DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD};
use crate::augment::AugmentSpec;
use crate::interchange::TagRegistry;
use crate::model::{Family, Pooling, DEFAULT_DROPOUT, HEAD_HIDDEN_SIZES};
use crate::training::TrainConfig;

use super::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub feature: String,
    pub pooling: Pooling,
    pub k: usize,
    pub dropout_p: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: Family::Head,
            feature: "fbank".into(),
            pooling: Pooling::Sap,
            k: 256,
            dropout_p: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthSection {
    pub cutoff_hz: f64,
    pub threshold: f64,
}

impl Default for BandwidthSection {
    fn default() -> Self {
        Self {
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            threshold: DEFAULT_NARROWBAND_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub features: Vec<String>,
    pub poolings: Vec<Pooling>,
    pub ks: Vec<usize>,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            features: vec!["cpc".into(), "pase+".into(), "tera".into(), "mockingjay".into()],
            poolings: vec![Pooling::Mean, Pooling::Sap],
            ks: HEAD_HIDDEN_SIZES.to_vec(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    /// Apply the narrow-band filter before training.
    pub bandwidth_filter: bool,
    /// Train on the augmented (doubled) manifest.
    pub augmentation: bool,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub bandwidth: BandwidthSection,
    pub augment: AugmentSpec,
    pub sweep: SweepSection,
    /// Extra interchange tags: `name = dim`.
    pub tags: BTreeMap<String, usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| ValidationError(format!("config {}: {e}", path.display())).into())
    }

    pub fn registry(&self) -> TagRegistry {
        let mut r = TagRegistry::default();
        for (tag, dim) in &self.tags {
            r.register(tag, *dim);
        }
        r
    }

    /// Seed from the file, falling back to 0.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Head models sweep a fixed set of hidden sizes.
pub fn check_k(family: Family, k: usize) -> Result<(), ValidationError> {
    if family == Family::Head && !HEAD_HIDDEN_SIZES.contains(&k) {
        return Err(ValidationError(format!(
            "k = {k} is not one of {HEAD_HIDDEN_SIZES:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.train.total_steps, 10_000);
        assert_eq!(c.model.k, 256);
    }

    #[test]
    fn sections_and_tags() {
        let c: ExperimentConfig = toml::from_str(
            r#"
seed = 7
bandwidth_filter = true
[model]
family = "cnn"
feature = "spectrogram"
[train]
total_steps = 400
eval_every = 100
[augment]
pitch_cents_range = [-100.0, 100.0]
[tags]
wav2vec = 512
"#,
        )
        .unwrap();
        assert_eq!(c.seed(), 7);
        assert_eq!(c.model.family, Family::Cnn);
        assert_eq!(c.train.total_steps, 400);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.augment.pitch_cents_range, (-100.0, 100.0));
        assert_eq!(c.registry().dim_of("wav2vec"), Some(512));
        assert_eq!(c.registry().dim_of("cpc"), Some(256));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[model]\nwidth = 3").is_err());
    }

    #[test]
    fn k_membership() {
        assert!(check_k(Family::Head, 256).is_ok());
        assert!(check_k(Family::Head, 100).is_err());
        assert!(check_k(Family::Cnn, 160).is_ok());
    }
}
