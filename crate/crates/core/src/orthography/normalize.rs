use super::{LanguageId, OrthographyError, Result, VariantTable};

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic() || (('\u{00C0}'..='\u{024F}').contains(&c) && c.is_alphabetic())
}

/// Orthographic normalization for `lang`.
///
/// Removes control characters (whitespace controls are kept), strips the
/// diacritic set, applies the language's codepoint map, collapses punctuation
/// variants and lowercases Latin letters. Idempotent.
pub fn normalize(text: &str, lang: LanguageId, table: &VariantTable) -> String {
    let map = table.language_map(lang);
    let mut out = String::with_capacity(text.len());
    let mut dropped = 0usize;
    for c in text.chars() {
        if c.is_control() && !matches!(c, '\t' | '\n' | '\r') {
            dropped += 1;
            continue;
        }
        if table.is_diacritic(c) {
            continue;
        }
        let c = map.get(&c).copied().unwrap_or(c);
        let c = match table.punctuation(c) {
            Some(None) => continue,
            Some(Some(p)) => p,
            None => c,
        };
        if is_latin_letter(c) {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    if dropped > 0 {
        log::debug!("normalize: removed {dropped} control character(s)");
    }
    out
}

/// Decodes UTF-8 then normalizes; invalid input is rejected.
pub fn normalize_bytes(bytes: &[u8], lang: LanguageId, table: &VariantTable) -> Result<String> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| OrthographyError::Decode(e.valid_up_to()))?;
    Ok(normalize(text, lang, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> VariantTable {
        VariantTable::builtin()
    }

    #[test]
    fn empty_stays_empty() {
        for l in LanguageId::ALL {
            assert_eq!(normalize("", l, &table()), "");
        }
    }

    #[test]
    fn kurdish_maps_arabic_yeh_and_kaf() {
        // "کتێبی" typed with Arabic kaf and Arabic yeh
        let input = "\u{0643}\u{062A}\u{06CE}\u{0628}\u{064A}";
        let out = normalize(input, LanguageId::Kurdish, &table());
        let expected = "\u{06A9}\u{062A}\u{06CE}\u{0628}\u{06CC}";
        assert_eq!(out, expected);
        // entry by entry against the shipped map
        let map = table().language_map(LanguageId::Kurdish).clone();
        assert_eq!(map[&'\u{064A}'], '\u{06CC}');
        assert_eq!(map[&'\u{0643}'], '\u{06A9}');
        for (a, b) in input.chars().zip(out.chars()) {
            assert_eq!(map.get(&a).copied().unwrap_or(a), b);
        }
    }

    #[test]
    fn arabic_diacritics_removed() {
        // كَتَبَ with fatha, kasra and damma marks sprinkled in
        let input = "\u{0643}\u{064E}\u{062A}\u{0650}\u{0628}\u{064F}";
        let out = normalize(input, LanguageId::Arabic, &table());
        let t = table();
        let oracle: String = input.chars().filter(|c| !t.diacritics().contains(c)).collect();
        assert_eq!(out, oracle);
        assert_eq!(out, "\u{0643}\u{062A}\u{0628}");
    }

    #[test]
    fn punctuation_and_latin_case() {
        let out = normalize("Hello, «world»\u{0640}?", LanguageId::Persian, &table());
        assert_eq!(out, "hello\u{060C} \"world\"\u{061F}");
    }

    #[test]
    fn control_characters_removed_whitespace_kept() {
        let out = normalize("a\u{0007}b\tc\nd", LanguageId::Urdu, &table());
        assert_eq!(out, "ab\tc\nd");
    }

    #[test]
    fn invalid_utf8_rejected() {
        let err = normalize_bytes(&[0x61, 0xFF, 0x62], LanguageId::Arabic, &table()).unwrap_err();
        assert!(matches!(err, OrthographyError::Decode(1)));
        assert_eq!(
            normalize_bytes("ب".as_bytes(), LanguageId::Arabic, &table()).unwrap(),
            "ب"
        );
    }

    fn arabic_script_text() -> impl Strategy<Value = String> {
        let chars = prop_oneof![
            8 => (0x0600u32..0x0700).prop_filter_map("valid", char::from_u32),
            1 => Just(' '),
            1 => proptest::char::range('A', 'z'),
            1 => proptest::sample::select(vec![',', '?', '«', '\u{0640}', '\u{0007}', '–']),
        ];
        proptest::collection::vec(chars, 0..40).prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn idempotent(text in arabic_script_text(), li in 0usize..4) {
            let lang = LanguageId::ALL[li];
            let t = table();
            let once = normalize(&text, lang, &t);
            prop_assert_eq!(normalize(&once, lang, &t), once.clone());
            prop_assert!(once.chars().all(|c| !t.is_diacritic(c)));
            prop_assert!(once.chars().all(|c| !t.language_map(lang).contains_key(&c)));
        }
    }
}
