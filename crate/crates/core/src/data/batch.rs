use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Document;
use crate::orthography::LanguageId;

/// Index batches over `n` items for one epoch. The order is a seeded shuffle
/// that depends on `(seed, epoch)`; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Repeats documents of under-represented languages until each language has
/// roughly as many whitespace tokens as the largest one. Repetition picks
/// whole documents in a seeded order. Returns the per-language ratio
/// `final / original` token counts.
pub fn upsample(docs: &[Document], seed: u64) -> (Vec<Document>, BTreeMap<LanguageId, f64>) {
    let mut by_lang: BTreeMap<LanguageId, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        by_lang.entry(d.language).or_default().push(d);
    }
    let tokens = |d: &Document| d.text.split_whitespace().count();
    let target = by_lang
        .values()
        .map(|ds| ds.iter().map(|d| tokens(d)).sum::<usize>())
        .max()
        .unwrap_or(0);
    let mut out: Vec<Document> = docs.to_vec();
    let mut ratios = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (lang, ds) in by_lang {
        let have: usize = ds.iter().map(|d| tokens(d)).sum();
        let mut total = have;
        let mut round = 0;
        while total < target && have > 0 {
            let mut order = ds.clone();
            order.shuffle(&mut rng);
            for d in order {
                if total >= target {
                    break;
                }
                let mut copy = d.clone();
                copy.id = format!("{}#{round}", d.id);
                total += tokens(d);
                out.push(copy);
            }
            round += 1;
        }
        let ratio = if have == 0 { 1.0 } else { total as f64 / have as f64 };
        log::info!("upsampling {lang}: {have} -> {total} tokens (x{ratio:.3})");
        ratios.insert(lang, ratio);
    }
    (out, ratios)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cover_each_item_once() {
        for (n, bs) in [(10, 3), (7, 7), (5, 100), (0, 4)] {
            let b = batches(n, bs, 1, 0);
            let mut all: Vec<usize> = b.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            if bs >= n && n > 0 {
                assert_eq!(b.len(), 1);
            }
        }
    }

    #[test]
    fn order_depends_on_seed_and_epoch() {
        assert_eq!(batches(50, 8, 3, 1), batches(50, 8, 3, 1));
        assert_ne!(batches(50, 8, 3, 1), batches(50, 8, 3, 2));
        assert_ne!(batches(50, 8, 3, 1), batches(50, 8, 4, 1));
    }

    #[test]
    fn upsampling_balances_tokens() {
        let d = |id: &str, lang, words: usize| Document {
            id: id.into(),
            text: vec!["و"; words].join(" "),
            label: None,
            language: lang,
        };
        let docs = vec![
            d("a", LanguageId::Kurdish, 10),
            d("b", LanguageId::Kurdish, 10),
            d("c", LanguageId::Urdu, 3),
        ];
        let (out, ratios) = upsample(&docs, 0);
        let urdu: usize = out
            .iter()
            .filter(|d| d.language == LanguageId::Urdu)
            .map(|d| d.text.split_whitespace().count())
            .sum();
        assert_eq!(urdu, 21);
        assert_eq!(ratios[&LanguageId::Kurdish], 1.0);
        assert_eq!(ratios[&LanguageId::Urdu], 7.0);
        let ids: std::collections::HashSet<_> = out.iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), out.len());
    }
}
