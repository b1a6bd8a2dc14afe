use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cross_modal::ClassPolicy;
use crate::error::{Error, Result};

/// Every tunable of a training/inference run. Defaults are the reference
/// hyperparameters where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Weight of the vision-language segmentation loss.
    pub lambda1: f64,
    /// Weight of the prototype contrastive loss (1e-4 Caltech, 1e-3 CityPersons).
    pub lambda2: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Temperature of the class-score softmax feeding prototype aggregation.
    pub tau_prime: f64,
    /// Output stride of the detection feature map.
    pub stride: usize,
    pub aspect_ratio: f64,
    pub class_policy: ClassPolicy,
    pub prompt_template: String,
    /// Width of the projected visual features and linguistic vectors.
    pub embed_dim: usize,
    /// Channels each deconvolved stage contributes to the detection features.
    pub stage_channels: usize,
    pub head_channels: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Per-channel standardization applied to `[0, 1]` RGB input.
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub hflip: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 1e-4,
            tau: 7e-2,
            tau_prime: 1e-3,
            stride: 4,
            aspect_ratio: 0.41,
            class_policy: ClassPolicy::default(),
            prompt_template: "A picture of [CLS]".to_string(),
            embed_dim: 64,
            stage_channels: 8,
            head_channels: 16,
            learning_rate: 1e-4,
            batch_size: 4,
            iterations: 2000,
            seed: 0,
            pixel_mean: [0.485, 0.456, 0.406],
            pixel_std: [0.229, 0.224, 0.225],
            score_threshold: 0.01,
            nms_iou: 0.5,
            hflip: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.tau > 0.0, "tau must be > 0")?;
        check(self.tau_prime > 0.0, "tau_prime must be > 0")?;
        check(
            self.lambda1 >= 0.0 && self.lambda2 >= 0.0,
            "loss weights must be >= 0",
        )?;
        check(
            self.stride == 4,
            "the toy network produces stride-4 detection features",
        )?;
        check(self.aspect_ratio > 0.0, "aspect_ratio must be > 0")?;
        check(
            self.embed_dim > 0 && self.stage_channels > 0 && self.head_channels > 0,
            "layer widths must be > 0",
        )?;
        check(self.batch_size > 0, "batch_size must be > 0")?;
        check(self.learning_rate > 0.0, "learning_rate must be > 0")?;
        check(
            self.pixel_std.iter().all(|&s| s > 0.0),
            "pixel_std must be > 0",
        )?;
        check(
            self.score_threshold > 0.0 && self.score_threshold < 1.0,
            "score_threshold must lie in (0, 1)",
        )?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.lambda1, 100.0);
        assert_eq!(c.lambda2, 1e-4);
        assert_eq!(c.tau, 0.07);
        assert_eq!(c.tau_prime, 1e-3);
        assert_eq!(c.aspect_ratio, 0.41);
        assert_eq!(c.learning_rate, 1e-4);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_override() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = RunConfig::from_toml_str("lambda2 = 0.001\nseed = 9\n").unwrap();
        assert_eq!(partial.lambda2, 1e-3);
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.lambda1, 100.0);
    }

    #[test]
    fn rejects_nonpositive_temperature() {
        assert!(RunConfig::from_toml_str("tau = 0.0").is_err());
        assert!(RunConfig::from_toml_str("unknown_field = 1").is_err());
    }
}
