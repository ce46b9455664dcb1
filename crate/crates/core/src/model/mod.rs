//! The encoder: fused BPE/WordPiece embeddings, post-LN transformer layers
//! each followed by an orthographic consistency adapter, a domain-adaptive
//! projection of the CLS vector and one classifier head per language.

mod checkpoint;
mod forward;
mod params;
mod predict;

use std::fmt;

use crate::numerics::NumericsError;
use crate::orthography::{LanguageId, OrthographyError};
use crate::tokenization::TokenizerError;

pub use checkpoint::{git_blob_sha1, Checkpoint};
pub use forward::{Graph, Packed};
pub use params::{head_names, init_params, is_backbone, is_head, param_shapes, reinit_task_layers};
pub use predict::{argmax, Model, Prediction};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite activations after layer {layer}")]
    NonFinite { layer: usize },
    #[error("no classifier head for language `{0}`")]
    UnknownHead(LanguageId),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Orthography(#[from] OrthographyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Size of the domain-adaptive projection (`m`).
    pub proj: usize,
    /// Adapter bottleneck (`r`).
    pub adapter: usize,
    pub bpe_vocab: usize,
    pub wp_vocab: usize,
    /// Class count per language, in `LanguageId::ALL` order.
    pub classes: [usize; 4],
    pub max_len: usize,
    /// Average BPE and WordPiece embeddings; off means BPE only.
    pub dual_tokenizer: bool,
    /// Insert adapters after every layer.
    pub adapters: bool,
}

impl Default for ModelConfig {
    /// Desk scale: 2 layers, width 64.
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            proj: 32,
            adapter: 16,
            bpe_vocab: 4000,
            wp_vocab: 4000,
            classes: [5, 5, 5, 4],
            max_len: 64,
            dual_tokenizer: true,
            adapters: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.proj == 0 || self.proj >= self.hidden {
            return fail(format!("projection size {} must be in 1..{}", self.proj, self.hidden));
        }
        if self.adapters && self.adapter == 0 {
            return fail("adapter bottleneck must be positive".into());
        }
        if self.ffn == 0 {
            return fail("ffn size must be positive".into());
        }
        if let Some(l) = LanguageId::ALL.iter().find(|l| self.classes[l.index()] < 2) {
            return fail(format!("{l} needs at least 2 classes"));
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        if self.bpe_vocab < 5 || self.wp_vocab < 5 {
            return fail("vocabularies must extend past the special tokens".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn num_classes(&self, lang: LanguageId) -> usize {
        self.classes[lang.index()]
    }

    /// `key = value` lines, the inverse of [`ModelConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let c = &self.classes;
        vec![
            ("layers".into(), self.layers.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("ffn".into(), self.ffn.to_string()),
            ("proj".into(), self.proj.to_string()),
            ("adapter".into(), self.adapter.to_string()),
            ("bpe_vocab".into(), self.bpe_vocab.to_string()),
            ("wp_vocab".into(), self.wp_vocab.to_string()),
            ("classes".into(), format!("{},{},{},{}", c[0], c[1], c[2], c[3])),
            ("max_len".into(), self.max_len.to_string()),
            ("dual_tokenizer".into(), self.dual_tokenizer.to_string()),
            ("adapters".into(), self.adapters.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(k: &str, v: &str) -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("{k}: expected an integer, got `{v}`")))
        }
        fn flag(k: &str, v: &str) -> Result<bool> {
            v.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("{k}: expected true/false, got `{v}`")))
        }
        match key {
            "layers" => self.layers = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ffn" => self.ffn = num(key, value)?,
            "proj" => self.proj = num(key, value)?,
            "adapter" => self.adapter = num(key, value)?,
            "bpe_vocab" => self.bpe_vocab = num(key, value)?,
            "wp_vocab" => self.wp_vocab = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "dual_tokenizer" => self.dual_tokenizer = flag(key, value)?,
            "adapters" => self.adapters = flag(key, value)?,
            "classes" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 4 {
                    return Err(ModelError::Config(format!(
                        "classes: expected 4 comma-separated counts, got `{value}`"
                    )));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.classes[i] = num(key, p)?;
                }
            }
            _ => return Err(ModelError::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L={} d={} heads={} ffn={} m={} r={} V_bpe={} V_wp={} max_len={}",
            self.layers,
            self.hidden,
            self.heads,
            self.ffn,
            self.proj,
            self.adapter,
            self.bpe_vocab,
            self.wp_vocab,
            self.max_len
        )
    }
}
