use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::VariantTable;

/// Indices of tokens whose surface contains at least one codepoint from a
/// multi-member variant class. Indices refer to positions in `tokens`.
pub fn orth_variant_positions<S: AsRef<str>>(tokens: &[S], table: &VariantTable) -> BTreeSet<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.as_ref().chars().any(|c| table.is_variant(c)))
        .map(|(i, _)| i)
        .collect()
}

/// Replaces every variant-class codepoint by a uniformly drawn co-variant
/// (another member of its class). Other codepoints pass through, so the
/// output has the same codepoint length as the input.
pub fn transliterate(text: &str, table: &VariantTable, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    text.chars()
        .map(|c| match table.class_of(c) {
            Some(class) if class.members.len() >= 2 => {
                let others: Vec<char> = class.members.iter().copied().filter(|&m| m != c).collect();
                others[rng.gen_range(0..others.len())]
            }
            _ => c,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> VariantTable {
        VariantTable::builtin()
    }

    #[test]
    fn no_variants_no_positions() {
        let toks = ["بر", "▁سڵ", "ت"];
        assert!(orth_variant_positions(&toks, &table()).is_empty());
        assert!(orth_variant_positions::<&str>(&[], &table()).is_empty());
    }

    #[test]
    fn alef_madda_marks_its_token() {
        let toks = ["بر", "▁سڵ", "آب", "ت"];
        let got = orth_variant_positions(&toks, &table());
        assert_eq!(got, BTreeSet::from([2]));
    }

    #[test]
    fn every_token_with_farsi_yeh() {
        let toks = ["ی", "بی", "▁یک", "سی"];
        let got = orth_variant_positions(&toks, &table());
        assert_eq!(got, (0..4).collect());
    }

    #[test]
    fn untouched_without_variants() {
        assert_eq!(transliterate("سڵ بر", &table(), 7), "سڵ بر");
    }

    #[test]
    fn seeded_and_class_consistent() {
        let t = table();
        let out = transliterate("ای", &t, 42);
        assert_eq!(out, transliterate("ای", &t, 42));
        let chars: Vec<char> = out.chars().collect();
        assert_eq!(chars.len(), 2);
        // enumerate the admissible outputs
        let alef = &t.class_of('ا').unwrap().members;
        let yeh = &t.class_of('ی').unwrap().members;
        assert!(alef.contains(&chars[0]) && chars[0] != 'ا');
        assert!(yeh.contains(&chars[1]) && chars[1] != 'ی');
    }

    #[test]
    fn different_seeds_eventually_differ() {
        let t = table();
        let text = "اااااااااا";
        let a = transliterate(text, &t, 1);
        assert!((2..50).any(|s| transliterate(text, &t, s) != a));
    }

    proptest! {
        #[test]
        fn class_closure(text in "[اآأإیيىکكهةوؤبتسڵ ]{0,30}", s1 in any::<u64>(), s2 in any::<u64>()) {
            let t = table();
            let twice = transliterate(&transliterate(&text, &t, s1), &t, s2);
            prop_assert_eq!(twice.chars().count(), text.chars().count());
            for (a, b) in text.chars().zip(twice.chars()) {
                match t.class_of(a) {
                    Some(class) => prop_assert!(class.members.contains(&b)),
                    None => prop_assert_eq!(a, b),
                }
            }
        }

        #[test]
        fn positions_are_sound(tokens in proptest::collection::vec("[اآبتسیڵکة]{0,4}", 0..12)) {
            let t = table();
            let got = orth_variant_positions(&tokens, &t);
            for (i, tok) in tokens.iter().enumerate() {
                let has = tok.chars().any(|c| t.class_of(c).is_some_and(|k| k.members.len() >= 2));
                prop_assert_eq!(got.contains(&i), has);
            }
        }
    }
}
