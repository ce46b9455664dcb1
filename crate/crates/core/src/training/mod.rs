//! The two-stage objective: masked-LM plus orthographic-position pre-training,
//! then cross-entropy plus KL-consistency fine-tuning of the projection and
//! heads. Also masks, AdamW, the warmup schedule and the metrics log.

mod finetune;
mod losses;
mod masks;
mod metrics;
mod optim;
mod pretrain;

use crate::data::DataError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

pub use finetune::{
    finetune, finetune_objective, translit_seed, EarlyStopping, FinetuneExample, FinetuneReport,
    StopDecision,
};
pub use losses::{loss_ce, loss_finetune, loss_kl, loss_pretrain, KL_CLAMP};
pub use masks::{make_masks, mask_count, MaskPlan};
pub use metrics::{MetricsLog, MetricsRow, METRICS_HEADER};
pub use optim::{lr_schedule, AdamW};
pub use pretrain::{pretrain, pretrain_objective, Objective, PretrainReport};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("non-finite gradient for `{0}`, step rejected")]
    NonFiniteGradient(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NumericsError> for TrainingError {
    fn from(e: NumericsError) -> Self {
        TrainingError::Model(ModelError::Numerics(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainingError>;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainingError::Config(format!("{key}: cannot parse `{value}`")))
}

/// Pre-training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Weight of the orthographic-position loss.
    pub beta: f64,
    pub mask_rate: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub linear_decay: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            mask_rate: 0.15,
            lr: 1e-4,
            batch_size: 16,
            epochs: 5,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            linear_decay: false,
            seed: 42,
        }
    }
}

impl PretrainConfig {
    /// Settings that move a width-64 encoder within a few CPU minutes.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            epochs: 15,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(TrainingError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(TrainingError::Config(format!("mask_rate must be in (0,1), got {}", self.mask_rate)));
        }
        check_common(self.lr, self.batch_size, self.weight_decay, self.warmup_fraction)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "beta" => self.beta = parse(key, value)?,
            "mask_rate" => self.mask_rate = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, value)?,
            "linear_decay" => self.linear_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(TrainingError::Config(format!("unknown pretrain key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("beta".into(), self.beta.to_string()),
            ("mask_rate".into(), self.mask_rate.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("warmup_fraction".into(), self.warmup_fraction.to_string()),
            ("linear_decay".into(), self.linear_decay.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    /// Weight of the KL consistency term.
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    /// Heads train at `lr * head_lr_mult`.
    pub head_lr_mult: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub weight_decay: f64,
    pub linear_decay: bool,
    /// Train the backbone too instead of keeping it frozen.
    pub unfreeze: bool,
    /// Let gradients flow through the transliterated branch as well.
    pub symmetric_kl: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lr: 2e-5,
            batch_size: 16,
            max_len: 256,
            epochs: 3,
            warmup_fraction: 0.1,
            head_lr_mult: 2.0,
            val_fraction: 0.1,
            patience: 2,
            weight_decay: 0.01,
            linear_decay: false,
            unfreeze: false,
            symmetric_kl: false,
            seed: 42,
        }
    }
}

impl FinetuneConfig {
    /// Desk budget. A few CPU minutes of pre-training leave the CLS vector
    /// nearly constant across documents, so the backbone is trained too and
    /// the transliterated branch takes part in the gradient.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 30,
            patience: 5,
            unfreeze: true,
            symmetric_kl: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(TrainingError::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(TrainingError::Config(format!(
                "val_fraction must be in [0,1), got {}",
                self.val_fraction
            )));
        }
        if !(self.head_lr_mult > 0.0) {
            return Err(TrainingError::Config("head_lr_mult must be positive".into()));
        }
        if self.max_len < 2 {
            return Err(TrainingError::Config("max_len must be at least 2".into()));
        }
        check_common(self.lr, self.batch_size, self.weight_decay, self.warmup_fraction)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "gamma" => self.gamma = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, value)?,
            "head_lr_mult" => self.head_lr_mult = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "linear_decay" => self.linear_decay = parse(key, value)?,
            "unfreeze" => self.unfreeze = parse(key, value)?,
            "symmetric_kl" => self.symmetric_kl = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(TrainingError::Config(format!("unknown finetune key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("gamma".into(), self.gamma.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("warmup_fraction".into(), self.warmup_fraction.to_string()),
            ("head_lr_mult".into(), self.head_lr_mult.to_string()),
            ("val_fraction".into(), self.val_fraction.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("linear_decay".into(), self.linear_decay.to_string()),
            ("unfreeze".into(), self.unfreeze.to_string()),
            ("symmetric_kl".into(), self.symmetric_kl.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

fn check_common(lr: f64, batch_size: usize, wd: f64, warmup: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TrainingError::Config(format!("lr must be positive, got {lr}")));
    }
    if batch_size == 0 {
        return Err(TrainingError::Config("batch_size must be positive".into()));
    }
    if !(wd >= 0.0) {
        return Err(TrainingError::Config(format!("weight_decay must be >= 0, got {wd}")));
    }
    if !(warmup >= 0.0 && warmup < 1.0) {
        return Err(TrainingError::Config(format!("warmup_fraction must be in [0,1), got {warmup}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_tables() {
        let p = PretrainConfig::default();
        assert_eq!((p.beta, p.lr, p.mask_rate), (0.5, 1e-4, 0.15));
        let f = FinetuneConfig::default();
        assert_eq!((f.gamma, f.lr, f.batch_size, f.max_len, f.epochs), (1.0, 2e-5, 16, 256, 3));
        assert_eq!((f.warmup_fraction, f.head_lr_mult, f.val_fraction), (0.1, 2.0, 0.1));
        p.validate().unwrap();
        f.validate().unwrap();
    }

    #[test]
    fn set_round_trips_and_rejects() {
        let mut f = FinetuneConfig::desk();
        let mut back = FinetuneConfig::default();
        for (k, v) in f.to_pairs() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, f);
        assert!(f.set("gama", "1").is_err());
        f.set("gamma", "-1").unwrap();
        assert!(f.validate().is_err());
        let mut p = PretrainConfig::default();
        assert!(p.set("mask_rate", "x").is_err());
        p.set("mask_rate", "1.0").unwrap();
        assert!(p.validate().is_err());
    }
}
