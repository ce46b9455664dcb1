use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use super::{LanguageId, OrthographyError, Result};
use crate::orthography::detect::is_arabic_script;

const BUILTIN_VARIANTS: &str = include_str!("../../data/variants.tsv");
const BUILTIN_DIACRITICS: &str = include_str!("../../data/diacritics.txt");
const BUILTIN_PUNCTUATION: &str = include_str!("../../data/punctuation.tsv");
const BUILTIN_PROFILE: &str = include_str!("../../data/script_profile.tsv");

/// Parses `U+XXXX` (or a bare hex number) into a char.
pub fn parse_codepoint(s: &str) -> Option<char> {
    let s = s.trim();
    let hex = s
        .strip_prefix("U+")
        .or_else(|| s.strip_prefix("u+"))
        .unwrap_or(s);
    u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
}

fn codepoint_list(s: &str, line: usize) -> Result<Vec<char>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            parse_codepoint(t).ok_or_else(|| OrthographyError::Parse {
                line,
                msg: format!("bad codepoint `{}`", t.trim()),
            })
        })
        .collect()
}

/// Data lines with their 1-based line numbers; `#` comments and blanks skipped.
fn data_lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantClass {
    pub canonical: char,
    /// Sorted; always contains `canonical`.
    pub members: Vec<char>,
}

/// Orthographic equivalence classes plus the per-language normalization maps.
#[derive(Debug, Clone)]
pub struct VariantTable {
    classes: Vec<VariantClass>,
    class_of: HashMap<char, usize>,
    per_language: [BTreeMap<char, char>; 4],
    diacritics: BTreeSet<char>,
    punctuation: BTreeMap<char, Option<char>>,
}

impl VariantTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_VARIANTS, BUILTIN_DIACRITICS, BUILTIN_PUNCTUATION)
            .expect("shipped variant table parses")
    }

    /// Loads `variants.tsv`, `diacritics.txt` and (if present) `punctuation.tsv` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let variants = std::fs::read_to_string(dir.join("variants.tsv"))?;
        let diacritics = std::fs::read_to_string(dir.join("diacritics.txt"))?;
        let punct_path = dir.join("punctuation.tsv");
        let punctuation = if punct_path.exists() {
            std::fs::read_to_string(punct_path)?
        } else {
            String::new()
        };
        Self::parse(&variants, &diacritics, &punctuation)
    }

    pub fn parse(variants: &str, diacritics: &str, punctuation: &str) -> Result<Self> {
        let mut classes = Vec::new();
        let mut class_of = HashMap::new();
        let mut per_language: [BTreeMap<char, char>; 4] = Default::default();

        for (line, row) in data_lines(variants) {
            let cols: Vec<&str> = row.split('\t').collect();
            if cols.len() < 2 {
                return Err(OrthographyError::Parse {
                    line,
                    msg: "expected at least 2 tab-separated columns".into(),
                });
            }
            let canonical = parse_codepoint(cols[0]).ok_or_else(|| OrthographyError::Parse {
                line,
                msg: format!("bad canonical codepoint `{}`", cols[0]),
            })?;
            let mut members = codepoint_list(cols[1], line)?;
            members.sort_unstable();
            members.dedup();
            if !members.contains(&canonical) {
                return Err(OrthographyError::InvalidTable(format!(
                    "class U+{:04X} does not contain its canonical codepoint",
                    canonical as u32
                )));
            }
            let idx = classes.len();
            for &m in &members {
                if class_of.insert(m, idx).is_some() {
                    return Err(OrthographyError::InvalidTable(format!(
                        "U+{:04X} appears in more than one class",
                        m as u32
                    )));
                }
            }
            classes.push(VariantClass { canonical, members });

            if let Some(overrides) = cols.get(2).filter(|c| !c.trim().is_empty()) {
                for group in overrides.split(';').filter(|g| !g.trim().is_empty()) {
                    let (lang, pairs) = group.split_once(':').ok_or_else(|| OrthographyError::Parse {
                        line,
                        msg: format!("override group `{group}` lacks `lang:`"),
                    })?;
                    let lang: LanguageId = lang.parse()?;
                    for pair in pairs.split(',').filter(|p| !p.trim().is_empty()) {
                        let (from, to) = pair.split_once('>').ok_or_else(|| OrthographyError::Parse {
                            line,
                            msg: format!("override `{pair}` lacks `>`"),
                        })?;
                        let bad = |s: &str| OrthographyError::Parse {
                            line,
                            msg: format!("bad codepoint `{s}`"),
                        };
                        let from = parse_codepoint(from).ok_or_else(|| bad(from))?;
                        let to = parse_codepoint(to).ok_or_else(|| bad(to))?;
                        per_language[lang.index()].insert(from, to);
                    }
                }
            }
        }

        let mut diacritic_set = BTreeSet::new();
        for (line, row) in data_lines(diacritics) {
            let c = parse_codepoint(row).ok_or_else(|| OrthographyError::Parse {
                line,
                msg: format!("bad diacritic `{row}`"),
            })?;
            diacritic_set.insert(c);
        }

        let mut punct = BTreeMap::new();
        for (line, row) in data_lines(punctuation) {
            let (from, to) = row.split_once('\t').ok_or_else(|| OrthographyError::Parse {
                line,
                msg: "expected 2 tab-separated columns".into(),
            })?;
            let from = parse_codepoint(from).ok_or_else(|| OrthographyError::Parse {
                line,
                msg: format!("bad codepoint `{from}`"),
            })?;
            let to = match to.trim() {
                "-" => None,
                t => Some(parse_codepoint(t).ok_or_else(|| OrthographyError::Parse {
                    line,
                    msg: format!("bad codepoint `{t}`"),
                })?),
            };
            punct.insert(from, to);
        }

        let table = Self {
            classes,
            class_of,
            per_language,
            diacritics: diacritic_set,
            punctuation: punct,
        };
        table.check_idempotent_maps()?;
        Ok(table)
    }

    /// Map targets must never be map sources, otherwise normalization is not idempotent.
    fn check_idempotent_maps(&self) -> Result<()> {
        for lang in LanguageId::ALL {
            let map = &self.per_language[lang.index()];
            for (&from, &to) in map {
                if map.contains_key(&to)
                    || self.diacritics.contains(&to)
                    || self.punctuation.contains_key(&to)
                {
                    return Err(OrthographyError::InvalidTable(format!(
                        "{lang}: target U+{:04X} of U+{:04X} is itself rewritten",
                        to as u32, from as u32
                    )));
                }
            }
        }
        for (&from, to) in &self.punctuation {
            if let Some(to) = to {
                if self.punctuation.contains_key(to) || self.diacritics.contains(to) {
                    return Err(OrthographyError::InvalidTable(format!(
                        "punctuation target U+{:04X} of U+{:04X} is itself rewritten",
                        *to as u32, from as u32
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-language map targets must be Arabic-script codepoints that are not
    /// exclusive to a different language.
    pub fn validate_against(&self, profile: &ScriptProfile) -> Result<()> {
        for lang in LanguageId::ALL {
            for (&from, &to) in &self.per_language[lang.index()] {
                let foreign = profile.exclusive_language(to).filter(|&l| l != lang);
                if !is_arabic_script(to) || foreign.is_some() {
                    return Err(OrthographyError::InvalidTable(format!(
                        "{lang}: target U+{:04X} (from U+{:04X}) is not in the language's alphabet",
                        to as u32, from as u32
                    )));
                }
                if let Some(own) = profile.exclusive_language(from) {
                    if own == lang {
                        return Err(OrthographyError::InvalidTable(format!(
                            "{lang}: map rewrites the language's own exclusive codepoint U+{:04X}",
                            from as u32
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> &[VariantClass] {
        &self.classes
    }

    pub fn class_of(&self, c: char) -> Option<&VariantClass> {
        self.class_of.get(&c).map(|&i| &self.classes[i])
    }

    /// True when `c` belongs to a class with at least two members.
    pub fn is_variant(&self, c: char) -> bool {
        self.class_of(c).is_some_and(|k| k.members.len() >= 2)
    }

    pub fn language_map(&self, lang: LanguageId) -> &BTreeMap<char, char> {
        &self.per_language[lang.index()]
    }

    pub fn diacritics(&self) -> &BTreeSet<char> {
        &self.diacritics
    }

    pub fn is_diacritic(&self, c: char) -> bool {
        self.diacritics.contains(&c)
    }

    /// `Some(None)` means delete, `Some(Some(x))` rewrite, `None` leave alone.
    pub fn punctuation(&self, c: char) -> Option<Option<char>> {
        self.punctuation.get(&c).copied()
    }
}

/// Exclusive codepoints per language, the shared core alphabet and a tie-break order.
#[derive(Debug, Clone)]
pub struct ScriptProfile {
    exclusive: [BTreeSet<char>; 4],
    shared: BTreeSet<char>,
    priority: [LanguageId; 4],
}

impl ScriptProfile {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PROFILE).expect("shipped script profile parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut exclusive: [BTreeSet<char>; 4] = Default::default();
        let mut shared = BTreeSet::new();
        let mut priority = None;
        for (line, row) in data_lines(src) {
            let cols: Vec<&str> = row.split('\t').collect();
            if cols.len() != 3 {
                return Err(OrthographyError::Parse {
                    line,
                    msg: "expected 3 tab-separated columns".into(),
                });
            }
            match cols[0].trim() {
                "exclusive" => {
                    let lang: LanguageId = cols[1].parse()?;
                    exclusive[lang.index()].extend(codepoint_list(cols[2], line)?);
                }
                "shared" => shared.extend(codepoint_list(cols[2], line)?),
                "priority" => {
                    let langs = cols[2]
                        .split(',')
                        .map(str::parse)
                        .collect::<Result<Vec<LanguageId>>>()?;
                    let distinct: BTreeSet<_> = langs.iter().collect();
                    if langs.len() != 4 || distinct.len() != 4 {
                        return Err(OrthographyError::InvalidTable(
                            "priority must list all four languages once".into(),
                        ));
                    }
                    priority = Some([langs[0], langs[1], langs[2], langs[3]]);
                }
                other => {
                    return Err(OrthographyError::Parse {
                        line,
                        msg: format!("unknown row kind `{other}`"),
                    })
                }
            }
        }
        let priority = priority
            .ok_or_else(|| OrthographyError::InvalidTable("missing priority row".into()))?;
        for a in 0..4 {
            if !exclusive[a].is_disjoint(&shared) {
                return Err(OrthographyError::InvalidTable(format!(
                    "{} exclusive set overlaps the shared set",
                    LanguageId::ALL[a]
                )));
            }
            for b in a + 1..4 {
                if !exclusive[a].is_disjoint(&exclusive[b]) {
                    return Err(OrthographyError::InvalidTable(format!(
                        "exclusive sets of {} and {} overlap",
                        LanguageId::ALL[a],
                        LanguageId::ALL[b]
                    )));
                }
            }
        }
        Ok(Self {
            exclusive,
            shared,
            priority,
        })
    }

    pub fn exclusive(&self, lang: LanguageId) -> &BTreeSet<char> {
        &self.exclusive[lang.index()]
    }

    pub fn exclusive_language(&self, c: char) -> Option<LanguageId> {
        LanguageId::ALL
            .into_iter()
            .find(|l| self.exclusive[l.index()].contains(&c))
    }

    pub fn shared(&self) -> &BTreeSet<char> {
        &self.shared
    }

    /// Highest priority first.
    pub fn priority(&self) -> &[LanguageId; 4] {
        &self.priority
    }

    pub fn rank(&self, lang: LanguageId) -> usize {
        self.priority
            .iter()
            .position(|&l| l == lang)
            .expect("priority covers all languages")
    }
}
