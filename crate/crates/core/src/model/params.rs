use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::orthography::LanguageId;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Backbone tensors: embeddings, encoder layers, adapters and the MLM bias.
pub fn is_backbone(name: &str) -> bool {
    name.starts_with("emb.") || name.starts_with("layer") || name.starts_with("mlm.")
}

/// Classifier head tensors (not the shared projection).
pub fn is_head(name: &str) -> bool {
    name.starts_with("head.")
}

/// `(weight, bias)` names of a language's head.
pub fn head_names(lang: LanguageId) -> (String, String) {
    (format!("head.{}.w", lang.code()), format!("head.{}.b", lang.code()))
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f, r, m) = (cfg.hidden, cfg.ffn, cfg.adapter, cfg.proj);
    let mut v = vec![
        ("emb.bpe".to_string(), vec![cfg.bpe_vocab, d], Init::Normal),
        ("emb.pos".to_string(), vec![cfg.max_len, d], Init::Normal),
        ("mlm.bias".to_string(), vec![1, cfg.bpe_vocab], Init::Zeros),
        ("da.w".to_string(), vec![d, m], Init::Normal),
        ("da.b".to_string(), vec![1, m], Init::Zeros),
    ];
    if cfg.dual_tokenizer {
        v.push(("emb.wp".into(), vec![cfg.wp_vocab, d], Init::Normal));
    }
    for i in 0..cfg.layers {
        let p = |s: &str| format!("layer{i}.{s}");
        for proj in ["q", "k", "v", "o"] {
            v.push((p(&format!("attn.{proj}.w")), vec![d, d], Init::Normal));
            v.push((p(&format!("attn.{proj}.b")), vec![1, d], Init::Zeros));
        }
        v.push((p("ln1.g"), vec![1, d], Init::Ones));
        v.push((p("ln1.b"), vec![1, d], Init::Zeros));
        v.push((p("ffn.w1"), vec![d, f], Init::Normal));
        v.push((p("ffn.b1"), vec![1, f], Init::Zeros));
        v.push((p("ffn.w2"), vec![f, d], Init::Normal));
        v.push((p("ffn.b2"), vec![1, d], Init::Zeros));
        v.push((p("ln2.g"), vec![1, d], Init::Ones));
        v.push((p("ln2.b"), vec![1, d], Init::Zeros));
        if cfg.adapters {
            v.push((p("oca.down"), vec![d, r], Init::Normal));
            // zero up-projection: the adapter starts as the identity
            v.push((p("oca.up"), vec![r, d], Init::Zeros));
        }
    }
    for lang in LanguageId::ALL {
        let (w, b) = head_names(lang);
        let c = cfg.num_classes(lang);
        v.push((w, vec![m, c], Init::Normal));
        v.push((b, vec![1, c], Init::Zeros));
    }
    v
}

/// Every parameter name with its shape.
///
/// Matrices are stored input-major (`in × out`) so rows multiply on the left:
/// the projection is `h · da.w`, a head is `h_da · head.<lang>.w`.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// FNV-1a, so each tensor's stream depends only on the seed and its name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn truncated_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, INIT_STD).expect("positive std");
    (0..n)
        .map(|_| loop {
            let x: f64 = dist.sample(rng);
            if x.abs() <= 2.0 * INIT_STD {
                break x;
            }
        })
        .collect()
}

/// Truncated-normal weights (std 0.02, cut at two deviations), zero biases,
/// unit layer-norm gains, zero adapter up-projections. Each tensor draws from
/// its own stream keyed by name, so adding or removing a tensor (adapters,
/// the WordPiece table) leaves every other tensor unchanged.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    for (name, shape, init) in layout(cfg) {
        let n: usize = shape.iter().product();
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::filled(&shape, 1.0),
            Init::Normal => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&name));
                Tensor::new(shape, truncated_normal(n, &mut rng))?
            }
        };
        params.insert(name, t);
    }
    Ok(params)
}

/// Re-draws the projection and all heads, keeping the backbone.
pub fn reinit_task_layers(cfg: &ModelConfig, params: &mut ParamSet, seed: u64) -> Result<()> {
    let fresh = init_params(cfg, seed)?;
    for (name, t) in fresh.iter() {
        if !is_backbone(name) {
            params.insert(name.clone(), t.clone());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            bpe_vocab: 30,
            wp_vocab: 40,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_init_values() {
        let cfg = small();
        let p = init_params(&cfg, 7).unwrap();
        assert_eq!(p.get("emb.bpe").unwrap().shape(), &[30, 64]);
        assert_eq!(p.get("head.ur.w").unwrap().shape(), &[32, 4]);
        assert!(p.get("layer1.oca.up").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("layer0.ln2.g").unwrap().data().iter().all(|&v| v == 1.0));
        let w = p.get("layer0.attn.q.w").unwrap().data();
        assert!(w.iter().all(|v| v.abs() <= 0.04));
        let std = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!((0.012..0.022).contains(&std), "{std}");
    }

    #[test]
    fn tensors_are_independent_of_layout() {
        let a = init_params(&small(), 3).unwrap();
        let b = init_params(
            &ModelConfig {
                adapters: false,
                dual_tokenizer: false,
                ..small()
            },
            3,
        )
        .unwrap();
        assert!(!b.contains("layer0.oca.down") && !b.contains("emb.wp"));
        for (name, t) in b.iter() {
            assert_eq!(a.get(name).unwrap(), t, "{name}");
        }
        assert_ne!(init_params(&small(), 4).unwrap(), a);
    }

    #[test]
    fn backbone_partition() {
        let p = init_params(&small(), 0).unwrap();
        let backbone = p.names().filter(|n| is_backbone(n)).count();
        let heads = p.names().filter(|n| is_head(n)).count();
        assert_eq!(heads, 8);
        assert_eq!(backbone + heads + 2, p.len());
    }
}
