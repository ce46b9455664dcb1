use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Document, Result};
use crate::orthography::{LanguageId, Orthography};

/// Generator settings. Every document gets at least one class keyword and
/// one word carrying a letter exclusive to its language.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub languages: Vec<LanguageId>,
    /// Classes per language, in `LanguageId::ALL` order.
    pub classes: [usize; 4],
    pub docs_per_class: usize,
    pub keywords_per_class: usize,
    /// Class-neutral words per language.
    pub filler_words: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a word slot is filled with a class keyword.
    pub keyword_rate: f64,
    /// Probability that a lexicon letter is drawn from the variant classes.
    pub variant_rate: f64,
    /// Emit documents without labels.
    pub unlabeled: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            languages: LanguageId::ALL.to_vec(),
            classes: [5, 5, 5, 4],
            docs_per_class: 40,
            keywords_per_class: 8,
            filler_words: 60,
            min_words: 6,
            max_words: 14,
            keyword_rate: 0.3,
            variant_rate: 0.15,
            unlabeled: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| DataError::Spec(format!("{key}: expected {what}, got `{value}`"));
        let v = value.trim();
        match key {
            "languages" => {
                self.languages = v
                    .split(',')
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("language codes"))?;
            }
            "classes" => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("4 counts"))?;
                self.classes = parts.try_into().map_err(|_| bad("4 counts"))?;
            }
            "docs_per_class" => self.docs_per_class = v.parse().map_err(|_| bad("an integer"))?,
            "keywords_per_class" => self.keywords_per_class = v.parse().map_err(|_| bad("an integer"))?,
            "filler_words" => self.filler_words = v.parse().map_err(|_| bad("an integer"))?,
            "min_words" => self.min_words = v.parse().map_err(|_| bad("an integer"))?,
            "max_words" => self.max_words = v.parse().map_err(|_| bad("an integer"))?,
            "keyword_rate" => self.keyword_rate = v.parse().map_err(|_| bad("a number"))?,
            "variant_rate" => self.variant_rate = v.parse().map_err(|_| bad("a number"))?,
            "unlabeled" => self.unlabeled = v.parse().map_err(|_| bad("true/false"))?,
            "seed" => self.seed = v.parse().map_err(|_| bad("an integer"))?,
            _ => return Err(DataError::Spec(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let langs: Vec<&str> = self.languages.iter().map(|l| l.code()).collect();
        let c = &self.classes;
        vec![
            ("languages".into(), langs.join(",")),
            ("classes".into(), format!("{},{},{},{}", c[0], c[1], c[2], c[3])),
            ("docs_per_class".into(), self.docs_per_class.to_string()),
            ("keywords_per_class".into(), self.keywords_per_class.to_string()),
            ("filler_words".into(), self.filler_words.to_string()),
            ("min_words".into(), self.min_words.to_string()),
            ("max_words".into(), self.max_words.to_string()),
            ("keyword_rate".into(), self.keyword_rate.to_string()),
            ("variant_rate".into(), self.variant_rate.to_string()),
            ("unlabeled".into(), self.unlabeled.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DataError::Spec(m.to_string()));
        if self.keywords_per_class == 0 {
            return fail("empty keyword pool");
        }
        if self.languages.is_empty() {
            return fail("no languages");
        }
        if self.min_words < 2 || self.max_words < self.min_words {
            return fail("need 2 <= min_words <= max_words");
        }
        if !(0.0..=1.0).contains(&self.keyword_rate) || !(0.0..=1.0).contains(&self.variant_rate) {
            return fail("rates must be in [0, 1]");
        }
        if self.filler_words < 2 {
            return fail("need at least 2 filler words");
        }
        if self.classes.iter().any(|&c| c < 2) {
            return fail("every language needs at least 2 classes");
        }
        Ok(())
    }
}

struct Letters {
    base: Vec<char>,
    markers: Vec<char>,
    variants: Vec<char>,
}

/// Base letters are shared letters outside every variant class; markers are
/// the language's exclusive letters outside every class; variants are class
/// members that survive the language's normalization and are not exclusive
/// to another language.
fn letters(lang: LanguageId, orth: &Orthography) -> Result<Letters> {
    let (table, profile) = (&orth.table, &orth.profile);
    let base: Vec<char> = profile.shared().iter().copied().filter(|&c| !table.is_variant(c)).collect();
    let markers: Vec<char> = profile
        .exclusive(lang)
        .iter()
        .copied()
        .filter(|&c| !table.is_variant(c) && orth.normalize(&c.to_string(), lang) == c.to_string())
        .collect();
    let variants: Vec<char> = table
        .classes()
        .iter()
        .filter(|cl| cl.members.len() >= 2)
        .flat_map(|cl| cl.members.iter().copied())
        .filter(|&c| {
            profile.exclusive_language(c).map_or(true, |l| l == lang)
                && orth.normalize(&c.to_string(), lang) == c.to_string()
        })
        .collect();
    if base.len() < 4 || markers.is_empty() {
        return Err(DataError::Spec(format!("tables leave too few letters for {lang}")));
    }
    Ok(Letters { base, markers, variants })
}

fn make_word(l: &Letters, marker: bool, variant_rate: f64, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=6);
    let marker_at = marker.then(|| rng.gen_range(0..len));
    (0..len)
        .map(|i| {
            if Some(i) == marker_at {
                *l.markers.choose(rng).expect("non-empty")
            } else if !l.variants.is_empty() && rng.gen_bool(variant_rate) {
                *l.variants.choose(rng).expect("non-empty")
            } else {
                *l.base.choose(rng).expect("non-empty")
            }
        })
        .collect()
}

/// Canonical class form: each variant letter replaced by its class's canonical letter.
fn canonical(word: &str, orth: &Orthography) -> String {
    word.chars()
        .map(|c| orth.table.class_of(c).map_or(c, |cl| cl.canonical))
        .collect()
}

struct Lexicon {
    keywords: Vec<Vec<String>>,
    filler: Vec<String>,
    /// Filler words carrying a marker letter.
    marked: Vec<String>,
}

fn lexicon(lang: LanguageId, classes: usize, spec: &SynthSpec, orth: &Orthography, rng: &mut ChaCha8Rng) -> Result<Lexicon> {
    let l = letters(lang, orth)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut fresh = |marker: bool, rng: &mut ChaCha8Rng| -> Result<String> {
        for _ in 0..10_000 {
            let w = make_word(&l, marker, spec.variant_rate, rng);
            if seen.insert(canonical(&w, orth)) {
                return Ok(w);
            }
        }
        Err(DataError::Spec(format!("cannot find enough distinct words for {lang}")))
    };
    let mut keywords = Vec::with_capacity(classes);
    for _ in 0..classes {
        keywords.push((0..spec.keywords_per_class).map(|_| fresh(false, rng)).collect::<Result<Vec<_>>>()?);
    }
    let n_marked = (spec.filler_words / 4).max(1);
    let marked = (0..n_marked).map(|_| fresh(true, rng)).collect::<Result<Vec<_>>>()?;
    let filler = (0..spec.filler_words - n_marked).map(|_| fresh(false, rng)).collect::<Result<Vec<_>>>()?;
    Ok(Lexicon { keywords, filler, marked })
}

/// Deterministic labeled (or unlabeled) corpus whose classes are recoverable
/// from keyword counts. Documents come out already normalized for their
/// language. Lexicon words are distinct even after collapsing variant
/// letters, so normalization and transliteration never merge two words.
pub fn synth_corpus(spec: &SynthSpec, orth: &Orthography) -> Result<Vec<Document>> {
    generate(spec, orth).map(|(docs, _)| docs)
}

/// The canonical keyword pools behind [`synth_corpus`], per language and class.
pub fn synth_keywords(spec: &SynthSpec, orth: &Orthography) -> Result<Vec<KeywordPools>> {
    generate(spec, orth).map(|(_, pools)| pools)
}

pub type KeywordPools = (LanguageId, Vec<BTreeSet<String>>);

fn generate(spec: &SynthSpec, orth: &Orthography) -> Result<(Vec<Document>, Vec<KeywordPools>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::new();
    let mut pools = Vec::new();
    for &lang in &spec.languages {
        let classes = spec.classes[lang.index()];
        let lex = lexicon(lang, classes, spec, orth, &mut rng)?;
        pools.push((
            lang,
            lex.keywords
                .iter()
                .map(|ws| ws.iter().map(|w| canonical(&orth.normalize(w, lang), orth)).collect())
                .collect(),
        ));
        for class in 0..classes {
            for k in 0..spec.docs_per_class {
                let n = rng.gen_range(spec.min_words..=spec.max_words);
                let mut words: Vec<&str> = (0..n)
                    .map(|_| {
                        if rng.gen_bool(spec.keyword_rate) {
                            lex.keywords[class].choose(&mut rng).expect("non-empty").as_str()
                        } else if rng.gen_bool(0.25) {
                            lex.marked.choose(&mut rng).expect("non-empty").as_str()
                        } else {
                            lex.filler.choose(&mut rng).expect("non-empty").as_str()
                        }
                    })
                    .collect();
                // guarantee one keyword and one marker at distinct slots
                let kw_at = rng.gen_range(0..n);
                let mut mk_at = rng.gen_range(0..n - 1);
                if mk_at >= kw_at {
                    mk_at += 1;
                }
                words[kw_at] = lex.keywords[class].choose(&mut rng).expect("non-empty");
                if !words.iter().any(|w| lex.marked.iter().any(|m| m == w)) {
                    words[mk_at] = lex.marked.choose(&mut rng).expect("non-empty");
                }
                let text = orth.normalize(&words.join(" "), lang);
                docs.push(Document {
                    id: format!("synth-{}-{class}-{k}", lang.code()),
                    text,
                    label: (!spec.unlabeled).then_some(class),
                    language: lang,
                });
            }
        }
    }
    Ok((docs, pools))
}

/// Bag-of-words reference classifier: the class whose keyword pool occurs
/// most often in the text (lowest index on ties), matching words by their
/// canonical class form.
pub fn keyword_oracle(text: &str, keywords: &[BTreeSet<String>], orth: &Orthography) -> usize {
    let words: Vec<String> = text.split_whitespace().map(|w| canonical(w, orth)).collect();
    let mut best = (0, 0);
    for (c, pool) in keywords.iter().enumerate() {
        let hits = words.iter().filter(|w| pool.contains(*w)).count();
        if hits > best.1 {
            best = (c, hits);
        }
    }
    best.0
}
