use super::{param_shapes, Graph, ModelConfig, ModelError, Packed, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::orthography::{LanguageId, Orthography};
use crate::tokenization::{encode_aligned, AlignedTokens, BpeModel, SubwordModel, WordPieceModel};

const INFERENCE_BATCH: usize = 32;

/// Parameters together with the tokenizers they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub bpe: BpeModel,
    pub wp: WordPieceModel,
}

/// Output of [`Model::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub language: LanguageId,
    /// Detection confidence, not class confidence.
    pub confidence: f64,
    pub class: usize,
    pub probs: Vec<f64>,
}

impl Model {
    /// Checks every tensor against the config and both vocabularies.
    pub fn new(config: ModelConfig, params: ParamSet, bpe: BpeModel, wp: WordPieceModel) -> Result<Self> {
        config.validate()?;
        if config.bpe_vocab != bpe.vocab_size() || config.wp_vocab != wp.vocab_size() {
            return Err(ModelError::Config(format!(
                "vocab sizes {}/{} do not match tokenizers {}/{}",
                config.bpe_vocab,
                config.wp_vocab,
                bpe.vocab_size(),
                wp.vocab_size()
            )));
        }
        let shapes = param_shapes(&config);
        if shapes.len() != params.len() {
            return Err(ModelError::Config(format!(
                "{} tensors given, config needs {}",
                params.len(),
                shapes.len()
            )));
        }
        for (name, shape) in shapes {
            let t = params.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            params,
            bpe,
            wp,
        })
    }

    /// Aligned tokens for already-normalized text, truncated to `max_len`.
    pub fn encode(&self, text: &str) -> AlignedTokens {
        let mut t = encode_aligned(text, &self.bpe, &self.wp);
        if t.truncate(self.config.max_len) {
            log::warn!("input truncated to {} positions", self.config.max_len);
        }
        t
    }

    /// Final-layer CLS vector of each sequence.
    pub fn cls_vectors(&self, seqs: &[AlignedTokens]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_BATCH) {
            let batch = Packed::new(chunk, self.config.max_len);
            let mut g = Graph::inference(&self.config, &self.params);
            let h = g.forward(&batch)?;
            let cls = g.cls(h, &batch)?;
            let t = g.value(cls);
            out.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
        }
        Ok(out)
    }

    /// Projects one CLS vector and applies `lang`'s head.
    pub fn head_probs(&self, cls: &[f64], lang: LanguageId) -> Result<Vec<f64>> {
        let mut g = Graph::inference(&self.config, &self.params);
        let x = g.tape.constant(Tensor::row(cls.to_vec()));
        let h = g.project(x)?;
        let lp = g.head_log_probs(h, lang)?;
        Ok(g.value(lp).data().iter().map(|v| v.exp()).collect())
    }

    /// Class distributions for normalized texts, each routed to the given head.
    pub fn class_probs(&self, texts: &[&str], langs: &[LanguageId]) -> Result<Vec<Vec<f64>>> {
        let seqs: Vec<AlignedTokens> = texts.iter().map(|t| self.encode(t)).collect();
        self.cls_vectors(&seqs)?
            .iter()
            .zip(langs)
            .map(|(c, &l)| self.head_probs(c, l))
            .collect()
    }

    /// Detects the script, normalizes for that language and classifies with
    /// the matching head. The head choice depends only on detection.
    pub fn predict(&self, text: &str, orth: &Orthography) -> Result<Prediction> {
        let det = orth.detect(text)?;
        let norm = orth.normalize(text, det.language);
        let probs = self
            .class_probs(&[norm.as_str()], &[det.language])?
            .pop()
            .expect("one input, one output");
        let class = argmax(&probs);
        Ok(Prediction {
            language: det.language,
            confidence: det.confidence,
            class,
            probs,
        })
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{head_names, init_params, Checkpoint};
    use crate::orthography::OrthographyError;

    fn model() -> Model {
        let corpus = [
            "سڵاو لە هەموو لایەک",
            "مرحبا بكم في كل مكان",
            "سلام به همه دوستان",
            "آپ کیسے ہیں ٹھیک",
        ];
        let bpe = BpeModel::train(corpus, 90, 0).unwrap();
        let wp = WordPieceModel::train(corpus, 120, 0).unwrap();
        let config = ModelConfig {
            hidden: 16,
            heads: 2,
            ffn: 32,
            proj: 8,
            adapter: 4,
            bpe_vocab: bpe.vocab_size(),
            wp_vocab: wp.vocab_size(),
            max_len: 16,
            ..Default::default()
        };
        let params = init_params(&config, 11).unwrap();
        Model::new(config, params, bpe, wp).unwrap()
    }

    #[test]
    fn routes_by_script_and_is_deterministic() {
        let m = model();
        let orth = Orthography::builtin();
        let p = m.predict("سڵاو لە هەموو", &orth).unwrap();
        assert_eq!(p.language, LanguageId::Kurdish);
        assert_eq!(p.probs.len(), 5);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert_eq!(m.predict("سڵاو لە هەموو", &orth).unwrap(), p);
        let u = m.predict("آپ کیسے ہیں ٹھیک", &orth).unwrap();
        assert_eq!((u.language, u.probs.len()), (LanguageId::Urdu, 4));
        assert!(matches!(
            m.predict("hello world", &orth),
            Err(ModelError::Orthography(OrthographyError::UnknownScript))
        ));
    }

    #[test]
    fn perturbing_one_head_leaves_others_alone() {
        let m = model();
        let orth = Orthography::builtin();
        let mut other = m.clone();
        let (w, _) = head_names(LanguageId::Arabic);
        other.params.get_mut(&w).unwrap().data_mut()[0] += 1.0;
        let text = "سڵاو لە هەموو";
        assert_eq!(m.predict(text, &orth).unwrap(), other.predict(text, &orth).unwrap());
        let arabic = "مرحبا بكم في كل مكان";
        assert_ne!(m.predict(arabic, &orth).unwrap(), other.predict(arabic, &orth).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::new(model());
        ck.meta.insert("seed".into(), "11".into());
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);

        let tensor = dir.path().join("tensors").join("da.b.f64");
        let mut bytes = std::fs::read(&tensor).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&tensor, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(ModelError::Checkpoint { .. })));
        assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let m = model();
        let mut params = m.params.clone();
        params.insert("da.b", Tensor::zeros(&[1, 3]));
        assert!(Model::new(m.config.clone(), params, m.bpe.clone(), m.wp.clone()).is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
    }
}
