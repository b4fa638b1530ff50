use serde::{Deserialize, Serialize};

use crate::emotion_led::LedOptions;
use crate::error::{Error, Result};
use crate::mood_model::BnnTrainConfig;
use crate::numerics::OptimizerKind;

/// Switches for the four heterogeneity-aware components. `true` keeps the
/// component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Emotion heterogeneity across users: posterior LEDs anchored to the
    /// user's prior LED rather than `N(0, 1)`.
    pub ehau: bool,
    /// Emotion heterogeneity within a user: sampled per-event latents rather
    /// than the fixed tag vector.
    pub ehwu: bool,
    /// Mood preference heterogeneity across users: per-group mood networks
    /// rather than the global one.
    pub phau: bool,
    /// Mood preference heterogeneity within a user: sampled network weights
    /// rather than their means.
    pub phwu: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        ehau: true,
        ehwu: true,
        phau: true,
        phwu: true,
    };

    /// The full model followed by each single-component removal.
    pub const VARIANTS: [(&'static str, Ablation); 5] = [
        ("HDBN", Ablation::FULL),
        ("w/o EHAU", Ablation { ehau: false, ..Ablation::FULL }),
        ("w/o EHWU", Ablation { ehwu: false, ..Ablation::FULL }),
        ("w/o PHAU", Ablation { phau: false, ..Ablation::FULL }),
        ("w/o PHWU", Ablation { phwu: false, ..Ablation::FULL }),
    ];

    pub fn led_options(self) -> LedOptions {
        LedOptions {
            across_users: self.ehau,
            within_user: self.ehwu,
        }
    }

    /// Parse a comma-separated list of components to switch off, e.g.
    /// `"phau,ehwu"`. The empty string is the full model.
    pub fn parse_disabled(s: &str) -> Result<Self> {
        let mut a = Ablation::FULL;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "ehau" => a.ehau = false,
                "ehwu" => a.ehwu = false,
                "phau" => a.phau = false,
                "phwu" => a.phwu = false,
                other => return Err(Error::Config(format!("unknown ablation component '{other}'"))),
            }
        }
        Ok(a)
    }

    pub fn disabled_list(self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [(self.ehau, "ehau"), (self.ehwu, "ehwu"), (self.phau, "phau"), (self.phwu, "phwu")] {
            if !on {
                parts.push(name);
            }
        }
        parts.join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub latent_dim: usize,
    pub emb_dim: usize,
    /// Number of user groups.
    pub groups: usize,
    pub neg_k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    /// Epochs without validation HR@10 improvement before stopping.
    pub patience: usize,
    /// Half-width of the uniform embedding initialization.
    pub emb_init: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    /// Keep updating the mood networks during end-to-end training.
    pub joint_bnn: bool,
    pub alpha: f64,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub pretrain_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_batch: usize,
    pub finetune_epochs: usize,
    pub mood_optimizer: OptimizerKind,
    pub ablation: Ablation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    EmoMusicLj,
    EmoMusicLjSmall,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "emomusiclj" => Ok(Preset::EmoMusicLj),
            "emomusiclj-small" => Ok(Preset::EmoMusicLjSmall),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected emomusiclj or emomusiclj-small)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::EmoMusicLj => "emomusiclj",
            Preset::EmoMusicLjSmall => "emomusiclj-small",
        }
    }

    pub fn hyper_params(self) -> HyperParams {
        match self {
            Preset::EmoMusicLj => HyperParams::emomusiclj(),
            Preset::EmoMusicLjSmall => HyperParams::emomusiclj_small(),
        }
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::emomusiclj()
    }
}

impl HyperParams {
    /// Settings for the full dataset.
    pub fn emomusiclj() -> Self {
        Self {
            latent_dim: 16,
            emb_dim: 64,
            groups: 50,
            neg_k: 10,
            batch_size: 512,
            lr: 0.05,
            optimizer: OptimizerKind::adam(),
            epochs: 100,
            patience: 5,
            emb_init: 0.05,
            lambda1: 0.01,
            lambda2: 0.05,
            lambda3: 1e-6,
            lambda4: 1e-4,
            lambda5: 0.0,
            lambda6: 0.0,
            joint_bnn: false,
            alpha: 1e-5,
            pretrain_lr: 0.01,
            pretrain_batch: 1024,
            pretrain_epochs: 50,
            finetune_lr: 0.001,
            finetune_batch: 64,
            finetune_epochs: 20,
            mood_optimizer: OptimizerKind::Sgd,
            ablation: Ablation::FULL,
        }
    }

    /// Settings for the reduced dataset.
    pub fn emomusiclj_small() -> Self {
        Self {
            groups: 10,
            neg_k: 7,
            pretrain_batch: 512,
            alpha: 1e-6,
            lambda1: 0.005,
            lambda2: 0.005,
            lambda3: 5e-6,
            lambda4: 5e-5,
            ..Self::emomusiclj()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("emb_dim", self.emb_dim),
            ("groups", self.groups),
            ("neg_k", self.neg_k),
            ("batch_size", self.batch_size),
            ("pretrain_batch", self.pretrain_batch),
            ("finetune_batch", self.finetune_batch),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lr", self.lr), ("pretrain_lr", self.pretrain_lr), ("finetune_lr", self.finetune_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda6", self.lambda6),
            ("emb_init", self.emb_init),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.joint_bnn && (self.lambda5 != 0.0 || self.lambda6 != 0.0) {
            return bad("lambda5 and lambda6 must be 0 unless joint_bnn is set".into());
        }
        Ok(())
    }

    pub fn pretrain_config(&self) -> BnnTrainConfig {
        BnnTrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch,
            lr: self.pretrain_lr,
            alpha: self.alpha,
            optimizer: self.mood_optimizer,
            stochastic: self.ablation.phwu,
        }
    }

    pub fn finetune_config(&self) -> BnnTrainConfig {
        BnnTrainConfig {
            epochs: self.finetune_epochs,
            batch_size: self.finetune_batch,
            lr: self.finetune_lr,
            alpha: self.alpha,
            optimizer: self.mood_optimizer,
            stochastic: self.ablation.phwu,
        }
    }
}
