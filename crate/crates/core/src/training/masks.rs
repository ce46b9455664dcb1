use std::collections::BTreeMap;

use rand::Rng;

use crate::orthography::{orth_variant_positions, VariantTable};
use crate::tokenization::{AlignedTokens, MASK_ID};

/// Which positions of one sequence were hidden, and what was there.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskPlan {
    /// Random positions, ascending.
    pub mlm: Vec<usize>,
    /// Positions whose surface holds a variant codepoint, ascending.
    pub orth: Vec<usize>,
    /// Original BPE id at every position in either set.
    pub targets: BTreeMap<usize, usize>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.mlm.is_empty() && self.orth.is_empty()
    }
}

/// `round(rate · (n − 1))` for a sequence of `n` real positions (CLS included).
pub fn mask_count(n: usize, rate: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n - 1) as f64 * rate).round() as usize
}

/// Samples the random set, collects the orthographic set and returns the
/// corrupted copy: every position in either set becomes MASK on both the BPE
/// and WordPiece side. Position 0 (CLS) and padding are never touched.
pub fn make_masks<R: Rng>(
    tokens: &AlignedTokens,
    mask_rate: f64,
    table: &VariantTable,
    rng: &mut R,
) -> (AlignedTokens, MaskPlan) {
    let n = tokens.len();
    let mut corrupted = tokens.clone();
    if n < 2 {
        return (corrupted, MaskPlan::default());
    }
    let k = mask_count(n, mask_rate).min(n - 1);
    let mut mlm: Vec<usize> = rand::seq::index::sample(rng, n - 1, k)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    mlm.sort_unstable();
    let orth: Vec<usize> = orth_variant_positions(&tokens.surfaces(), table)
        .into_iter()
        .filter(|&i| i >= 1)
        .collect();
    let mut targets = BTreeMap::new();
    for &i in mlm.iter().chain(&orth) {
        targets.insert(i, tokens.positions[i].bpe_id as usize);
    }
    for &i in targets.keys() {
        let p = &mut corrupted.positions[i];
        p.bpe_id = MASK_ID;
        p.wp_ids = vec![MASK_ID];
    }
    (corrupted, MaskPlan { mlm, orth, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenization::{encode_aligned, BpeModel, WordPieceModel, CLS_ID};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models() -> (BpeModel, WordPieceModel) {
        // ڕۆژ and تۆ avoid every variant class; the rest carry alef, waw, yeh or kaf
        let corpus = ["سڵاو لە تۆ", "ڕۆژ باش", "سڵاو تۆ ڕۆژ", "ی ک"];
        (
            BpeModel::train(corpus, 40, 0).unwrap(),
            WordPieceModel::train(corpus, 50, 0).unwrap(),
        )
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(mask_count(12, 0.15), 2);
        assert_eq!(mask_count(4, 0.15), 0);
        assert_eq!(mask_count(1, 0.5), 0);
        assert_eq!(mask_count(21, 0.15), 3);
    }

    #[test]
    fn variant_positions_are_masked_regardless_of_rng() {
        let (b, w) = models();
        let toks = encode_aligned("سڵاو ی تۆ ک", &b, &w);
        let table = VariantTable::builtin();
        let surfaces = toks.surfaces();
        let expected: Vec<usize> = (1..toks.len())
            .filter(|&i| surfaces[i].chars().any(|c| table.class_of(c).is_some()))
            .collect();
        assert!(!expected.is_empty() && expected.len() < toks.len() - 1);
        for seed in 0..5 {
            let (c, plan) = make_masks(&toks, 0.15, &table, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(plan.orth, expected);
            assert_eq!(plan.mlm.len(), mask_count(toks.len(), 0.15));
            assert_eq!(c.positions[0].bpe_id, CLS_ID);
            for (&i, &t) in &plan.targets {
                assert_eq!(t, toks.positions[i].bpe_id as usize);
                assert_eq!(c.positions[i].bpe_id, MASK_ID);
                assert_eq!(c.positions[i].wp_ids, vec![MASK_ID]);
            }
            let untouched = (0..toks.len()).filter(|i| !plan.targets.contains_key(i));
            for i in untouched {
                assert_eq!(c.positions[i], toks.positions[i]);
            }
        }
    }

    #[test]
    fn nothing_to_mask() {
        let (b, w) = models();
        let toks = encode_aligned("ڕۆژ", &b, &w);
        let (c, plan) = make_masks(&toks, 0.15, &VariantTable::builtin(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(plan.is_empty());
        assert_eq!(c, toks);
        let cls_only = encode_aligned("", &b, &w);
        assert!(make_masks(&cls_only, 0.5, &VariantTable::builtin(), &mut ChaCha8Rng::seed_from_u64(0)).1.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let (b, w) = models();
        let toks = encode_aligned("سڵاو لە تۆ ڕۆژ باش سڵاو لە تۆ ڕۆژ باش", &b, &w);
        let table = VariantTable::builtin();
        let a = make_masks(&toks, 0.3, &table, &mut ChaCha8Rng::seed_from_u64(9));
        let again = make_masks(&toks, 0.3, &table, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, again);
        assert!(a.1.mlm.iter().all(|&i| i >= 1 && i < toks.len()));
    }
}
