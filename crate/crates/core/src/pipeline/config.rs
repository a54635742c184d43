use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{MrcConfig, SynthConfig};
use crate::disentangler::{DisentanglerConfig, LossSet, Variant, ZPooling};
use crate::encoder::EncoderConfig;
use crate::{Error, Result};

/// Every knob of a run, stored as one flat TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub sts_per_level: usize,
    pub adjective_prob: f64,
    pub mrc_train_examples: usize,
    pub mrc_test_examples: usize,
    pub constituent_fraction: f64,

    pub encoder_dim: usize,
    pub encoder_blocks: usize,
    pub max_len: usize,
    pub warm_start_steps: usize,
    pub warm_start_lr: f64,

    pub latent_dim: usize,
    pub hidden: usize,
    pub margin: f64,
    /// Constant vMF concentration; learned per token when absent.
    pub fixed_kappa: Option<f64>,
    pub variant: Variant,
    pub siamese: bool,
    /// Enabled loss terms; the variant's full set when absent.
    pub losses: Option<LossSet>,
    pub z_pooling: ZPooling,

    pub stage1_lr: f64,
    pub stage1_steps: usize,
    pub stage1_batch: usize,

    pub stage2_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_batch: usize,
    pub freeze_encoder: bool,

    pub probe_steps: usize,
    pub probe_sentences: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            train_pairs: 2000,
            heldout_pairs: 200,
            sts_per_level: 60,
            adjective_prob: 0.3,
            mrc_train_examples: 500,
            mrc_test_examples: 200,
            constituent_fraction: 0.9,
            encoder_dim: 64,
            encoder_blocks: 2,
            max_len: 48,
            warm_start_steps: 0,
            warm_start_lr: 1e-3,
            latent_dim: 200,
            hidden: 256,
            margin: 0.4,
            fixed_kappa: None,
            variant: Variant::Sp,
            siamese: true,
            losses: None,
            z_pooling: ZPooling::AfterSampling,
            stage1_lr: 5e-5,
            stage1_steps: 500,
            stage1_batch: 16,
            stage2_lr: 2e-5,
            stage2_epochs: 3,
            stage2_batch: 8,
            freeze_encoder: false,
            probe_steps: 200,
            probe_sentences: 400,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn loss_set(&self) -> LossSet {
        self.losses
            .clone()
            .unwrap_or_else(|| LossSet::full(self.variant, self.siamese))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stage1_lr", self.stage1_lr),
            ("stage2_lr", self.stage2_lr),
            ("warm_start_lr", self.warm_start_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.stage1_batch == 0 || self.stage2_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if self.probe_sentences < 2 {
            return Err(Error::config("probe_sentences must be at least 2"));
        }
        self.synth_config().validate()?;
        self.mrc_config(self.mrc_train_examples).validate()?;
        self.loss_set().validate(self.variant, self.siamese)?;
        self.disentangler_config(self.encoder_dim, 1).validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            train_pairs: self.train_pairs,
            heldout_pairs: self.heldout_pairs,
            sts_per_level: self.sts_per_level,
            adjective_prob: self.adjective_prob,
            ..SynthConfig::default()
        }
    }

    pub fn mrc_config(&self, examples: usize) -> MrcConfig {
        MrcConfig {
            examples,
            max_passage_tokens: self.max_len.saturating_sub(6),
            constituent_fraction: self.constituent_fraction,
            ..MrcConfig::default()
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            dim: self.encoder_dim,
            blocks: self.encoder_blocks,
            max_len: self.max_len,
        }
    }

    pub fn disentangler_config(&self, input_dim: usize, vocab_size: usize) -> DisentanglerConfig {
        DisentanglerConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            max_len: self.max_len,
            margin: self.margin,
            fixed_kappa: self.fixed_kappa,
            z_pooling: self.z_pooling,
            variant: self.variant,
            siamese: self.siamese,
            ..DisentanglerConfig::new(input_dim, vocab_size)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disentangler::LossKind;

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut cfg = RunConfig {
            seed: 17,
            margin: 0.1 + 0.2,
            stage1_lr: 1.0 / 3.0,
            variant: Variant::Pos,
            losses: Some(LossSet::only(&[LossKind::Rl, LossKind::Pos])),
            z_pooling: ZPooling::PerToken,
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        cfg.losses = None;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig::from_toml("stage1_lr = 0.0").is_err());
        assert!(RunConfig::from_toml("no_such_key = 1").is_err());
        let e = RunConfig::from_toml("siamese = false\nlosses = \"rl+kl+sdl+crl\"").unwrap_err();
        let msg = e.to_string();
        assert!(
            msg.contains("crl requires siamese") && msg.contains("sdl requires siamese"),
            "{msg}"
        );
        assert!(RunConfig::from_toml("variant = \"pos\"")
            .unwrap()
            .loss_set()
            .contains(LossKind::Pos));
    }
}
