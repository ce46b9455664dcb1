use super::{LanguageId, OrthographyError, Result, ScriptProfile};

/// Arabic, Arabic Supplement, Arabic Extended-A and the presentation-form blocks.
pub fn is_arabic_script(c: char) -> bool {
    matches!(c as u32,
        0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub language: LanguageId,
    /// Exclusive hits of the winning language over all Arabic-script codepoints.
    pub confidence: f64,
    pub hits: [usize; 4],
}

/// Picks the language whose exclusive codepoints occur most often, breaking
/// ties by the profile's priority order.
pub fn detect_script(text: &str, profile: &ScriptProfile) -> Result<Detection> {
    if text.trim().is_empty() {
        return Err(OrthographyError::EmptyInput);
    }
    let mut hits = [0usize; 4];
    let mut total = 0usize;
    for c in text.chars().filter(|&c| is_arabic_script(c)) {
        total += 1;
        if let Some(lang) = profile.exclusive_language(c) {
            hits[lang.index()] += 1;
        }
    }
    if total == 0 {
        return Err(OrthographyError::UnknownScript);
    }
    let language = profile
        .priority()
        .iter()
        .copied()
        // max_by_key keeps the last maximum, so walk lowest priority first
        .rev()
        .max_by_key(|l| hits[l.index()])
        .expect("four languages");
    Ok(Detection {
        language,
        confidence: hits[language.index()] as f64 / total as f64,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthography::{normalize, VariantTable};
    use proptest::prelude::*;

    fn profile() -> ScriptProfile {
        ScriptProfile::builtin()
    }

    /// Manual count of exclusive hits per language.
    fn oracle(text: &str, p: &ScriptProfile) -> [usize; 4] {
        let mut h = [0; 4];
        for l in LanguageId::ALL {
            h[l.index()] = text.chars().filter(|c| p.exclusive(l).contains(c)).count();
        }
        h
    }

    #[test]
    fn kurdish_exclusive_letters() {
        // "سڵاو" and "دێ": lam with v and yeh with v are Kurdish-only
        let text = "سڵاو دێت";
        let d = detect_script(text, &profile()).unwrap();
        assert_eq!(d.language, LanguageId::Kurdish);
        assert_eq!(d.hits, oracle(text, &profile()));
        assert_eq!(d.hits[0], 2);
        // 7 Arabic-script codepoints, 2 exclusive
        assert!((d.confidence - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn urdu_exclusive_letters() {
        let text = "ٹیم بڑے";
        let d = detect_script(text, &profile()).unwrap();
        assert_eq!(d.language, LanguageId::Urdu);
        assert_eq!(d.hits, oracle(text, &profile()));
    }

    #[test]
    fn ascii_is_unknown_script() {
        assert!(matches!(
            detect_script("hello world", &profile()),
            Err(OrthographyError::UnknownScript)
        ));
        assert!(matches!(
            detect_script("   ", &profile()),
            Err(OrthographyError::EmptyInput)
        ));
    }

    #[test]
    fn ties_follow_priority() {
        // one Kurdish (ڵ) and one Arabic (ة) hit: Kurdish outranks Arabic
        let d = detect_script("ڵة", &profile()).unwrap();
        assert_eq!(d.language, LanguageId::Kurdish);
        // one Persian (ۀ) and one Arabic (ي) hit
        let d = detect_script("ۀي", &profile()).unwrap();
        assert_eq!(d.language, LanguageId::Persian);
        // no exclusive hits at all: highest priority, zero confidence
        let d = detect_script("سلام", &profile()).unwrap();
        assert_eq!(d.language, LanguageId::Kurdish);
        assert_eq!(d.confidence, 0.0);
    }

    fn letter_soup() -> impl Strategy<Value = String> {
        let p = profile();
        let mut pool: Vec<char> = p.shared().iter().copied().collect();
        for l in LanguageId::ALL {
            pool.extend(p.exclusive(l));
        }
        pool.extend(['ی', 'ک', 'آ', 'ؤ', '\u{064E}', ' ', 'ھ']);
        proptest::collection::vec(proptest::sample::select(pool), 1..30)
            .prop_map(|v| v.into_iter().collect())
            .prop_filter("non-blank", |s: &String| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn detection_survives_same_language_normalization(text in letter_soup()) {
            let p = profile();
            let t = VariantTable::builtin();
            if let Ok(d) = detect_script(&text, &p) {
                let normalized = normalize(&text, d.language, &t);
                if !normalized.trim().is_empty() {
                    let again = detect_script(&normalized, &p).unwrap();
                    prop_assert_eq!(again.language, d.language);
                }
            }
        }

        #[test]
        fn confidence_is_a_fraction(text in letter_soup()) {
            let d = detect_script(&text, &profile()).unwrap();
            prop_assert!((0.0..=1.0).contains(&d.confidence));
            prop_assert_eq!(d.hits, oracle(&text, &profile()));
        }
    }
}
