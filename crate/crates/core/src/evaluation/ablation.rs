use std::collections::BTreeMap;

use super::{consistency_kl, evaluate_routed, paired_ttest, score_documents, ConfusionMatrix, EvalError, Metrics, Result, TTest};
use crate::data::Document;
use crate::model::{init_params, Model, ModelConfig};
use crate::orthography::{LanguageId, VariantTable};
use crate::tokenization::{BpeModel, WordPieceModel};
use crate::training::{finetune, pretrain, FinetuneConfig, MetricsLog, PretrainConfig};

/// One arm of an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub name: String,
    /// Pre-train before fine-tuning; off means fine-tuning from random init.
    pub pretrain: bool,
    pub beta: f64,
    pub gamma: f64,
    pub dual_tokenizer: bool,
}

impl VariantSpec {
    fn make(name: &str, pretrain: bool, beta: f64, gamma: f64, dual_tokenizer: bool) -> Self {
        Self {
            name: name.into(),
            pretrain,
            beta,
            gamma,
            dual_tokenizer,
        }
    }

    /// Pre-trained with both losses, fine-tuned with both losses.
    pub fn full() -> Self {
        Self::make("full", true, 0.5, 1.0, true)
    }

    pub fn scratch() -> Self {
        Self::make("scratch", false, 0.5, 1.0, true)
    }

    pub fn single_tokenizer() -> Self {
        Self::make("single-tokenizer", true, 0.5, 1.0, false)
    }

    pub fn no_orth() -> Self {
        Self::make("beta0", true, 0.0, 1.0, true)
    }

    pub fn no_kl() -> Self {
        Self::make("gamma0", true, 0.5, 0.0, true)
    }

    pub fn no_orth_no_kl() -> Self {
        Self::make("beta0-gamma0", true, 0.0, 0.0, true)
    }

    pub fn all() -> Vec<Self> {
        vec![
            Self::scratch(),
            Self::full(),
            Self::single_tokenizer(),
            Self::no_orth(),
            Self::no_kl(),
            Self::no_orth_no_kl(),
        ]
    }

    /// Looks a preset up by name; `pretrained` is an alias of `full`.
    pub fn preset(name: &str) -> Option<Self> {
        if name == "pretrained" {
            let mut v = Self::full();
            v.name = "pretrained".into();
            return Some(v);
        }
        Self::all().into_iter().find(|v| v.name == name)
    }
}

/// Everything the variants share: corpora, tokenizers and base settings.
#[derive(Debug, Clone)]
pub struct AblationData {
    /// Normalized unlabeled text for pre-training.
    pub pretrain_texts: Vec<String>,
    /// Labeled documents for fine-tuning (validation is carved out of these).
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub bpe: BpeModel,
    pub wp: WordPieceModel,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub table: VariantTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub matrices: Vec<(LanguageId, ConfusionMatrix)>,
    pub test_ids: Vec<String>,
    pub correct: Vec<bool>,
    /// Mean KL between predictions on test documents and on their transliterations.
    pub consistency_kl: f64,
    pub log: MetricsLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub spec: VariantSpec,
    pub seeds: Vec<SeedResult>,
    pub mean: Metrics,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variants: Vec<VariantResult>,
    /// Paired tests on per-document correctness, pooled over seeds, for every
    /// pair of variants in input order.
    pub ttests: Vec<(String, String, TTest)>,
}

impl EvalReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.spec.name == name)
    }
}

/// Trains and evaluates each variant under every seed on identical data.
///
/// A seed fixes initialization, masking, batching and the validation split,
/// so the arms differ only in their spec. Pre-trained backbones are shared
/// between variants with the same `(beta, dual_tokenizer)` under one seed.
pub fn ablation_run(variants: &[VariantSpec], data: &AblationData, seeds: &[u64]) -> Result<EvalReport> {
    if variants.is_empty() || seeds.is_empty() || data.test.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut results: Vec<VariantResult> = variants
        .iter()
        .map(|v| VariantResult {
            spec: v.clone(),
            seeds: Vec::new(),
            mean: Metrics::default(),
            mean_kl: 0.0,
        })
        .collect();
    for &seed in seeds {
        let mut backbones: BTreeMap<(u64, bool), Model> = BTreeMap::new();
        for (k, spec) in variants.iter().enumerate() {
            log::info!("ablation: variant {} seed {seed}", spec.name);
            let mut log = MetricsLog::default();
            let cfg = ModelConfig {
                dual_tokenizer: spec.dual_tokenizer,
                ..data.model.clone()
            };
            let key = (spec.beta.to_bits(), spec.dual_tokenizer);
            let mut model = match (spec.pretrain, backbones.get(&key)) {
                (true, Some(m)) => m.clone(),
                _ => {
                    let params = init_params(&cfg, seed)?;
                    let mut m = Model::new(cfg.clone(), params, data.bpe.clone(), data.wp.clone())?;
                    if spec.pretrain {
                        let pc = PretrainConfig {
                            beta: spec.beta,
                            seed,
                            ..data.pretrain.clone()
                        };
                        pretrain(&mut m, &data.pretrain_texts, &pc, &data.table, &mut log, None)?;
                        backbones.insert(key, m.clone());
                    }
                    m
                }
            };
            let fc = FinetuneConfig {
                gamma: spec.gamma,
                seed,
                ..data.finetune.clone()
            };
            finetune(&mut model, &data.train, &fc, &data.table, &mut log, None)?;
            let scored = score_documents(&model, &data.test)?;
            let (matrices, metrics) = evaluate_routed(&scored)?;
            results[k].seeds.push(SeedResult {
                seed,
                metrics,
                matrices,
                test_ids: scored.iter().map(|s| s.id.clone()).collect(),
                correct: scored.iter().map(|s| s.correct()).collect(),
                consistency_kl: consistency_kl(&model, &data.test, &data.table, seed)?,
                log,
            });
        }
    }
    for r in &mut results {
        let ms: Vec<Metrics> = r.seeds.iter().map(|s| s.metrics).collect();
        r.mean = Metrics::mean(&ms);
        r.mean_kl = r.seeds.iter().map(|s| s.consistency_kl).sum::<f64>() / r.seeds.len() as f64;
    }
    let ttests = pairwise(&results)?;
    Ok(EvalReport {
        variants: results,
        ttests,
    })
}

fn pooled(r: &VariantResult) -> (Vec<String>, Vec<f64>) {
    let mut ids = Vec::new();
    let mut correct = Vec::new();
    for s in &r.seeds {
        ids.extend(s.test_ids.iter().map(|id| format!("{}/{id}", s.seed)));
        correct.extend(s.correct.iter().map(|&c| f64::from(u8::from(c))));
    }
    (ids, correct)
}

fn pairwise(results: &[VariantResult]) -> Result<Vec<(String, String, TTest)>> {
    let mut out = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let (ids_a, a) = pooled(&results[i]);
            let (ids_b, b) = pooled(&results[j]);
            if ids_a != ids_b {
                return Err(EvalError::Unpaired(format!(
                    "{} and {} were scored on different documents",
                    results[i].spec.name, results[j].spec.name
                )));
            }
            if a.len() < 2 {
                continue;
            }
            out.push((
                results[i].spec.name.clone(),
                results[j].spec.name.clone(),
                paired_ttest(&a, &b)?,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(VariantSpec::preset("beta0-gamma0").unwrap().gamma, 0.0);
        assert!(VariantSpec::preset("pretrained").unwrap().pretrain);
        assert!(!VariantSpec::preset("scratch").unwrap().pretrain);
        assert!(!VariantSpec::preset("single-tokenizer").unwrap().dual_tokenizer);
        assert!(VariantSpec::preset("nope").is_none());
    }

    #[test]
    fn unpaired_results_are_rejected() {
        let seed = |ids: &[&str]| SeedResult {
            seed: 0,
            metrics: Metrics::default(),
            matrices: Vec::new(),
            test_ids: ids.iter().map(|s| s.to_string()).collect(),
            correct: vec![true; ids.len()],
            consistency_kl: 0.0,
            log: MetricsLog::default(),
        };
        let v = |name: &str, ids: &[&str]| VariantResult {
            spec: VariantSpec::preset(name).unwrap(),
            seeds: vec![seed(ids)],
            mean: Metrics::default(),
            mean_kl: 0.0,
        };
        assert!(matches!(
            pairwise(&[v("full", &["a", "b"]), v("scratch", &["a", "c"])]),
            Err(EvalError::Unpaired(_))
        ));
        let ok = pairwise(&[v("full", &["a", "b"]), v("scratch", &["a", "b"])]).unwrap();
        assert_eq!(ok[0].2, TTest::Degenerate { mean_diff: 0.0 });
    }
}
