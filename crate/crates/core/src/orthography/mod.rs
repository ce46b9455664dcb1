//! Unicode services for Arabic-script text.
//!
//! Everything here is a pure function over immutable tables: normalization,
//! script-based language detection, orthographic-variant position marking and
//! seeded intra-script transliteration.

mod detect;
mod normalize;
mod tables;
mod translit;

use std::fmt;
use std::str::FromStr;

pub use detect::{detect_script, is_arabic_script, Detection};
pub use normalize::{normalize, normalize_bytes};
pub use tables::{parse_codepoint, ScriptProfile, VariantClass, VariantTable};
pub use translit::{orth_variant_positions, transliterate};

#[derive(Debug, thiserror::Error)]
pub enum OrthographyError {
    #[error("invalid UTF-8 input at byte {0}")]
    Decode(usize),
    #[error("no Arabic-script codepoints in input")]
    UnknownScript,
    #[error("empty input")]
    EmptyInput,
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("table parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OrthographyError>;

/// One of the four target languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LanguageId {
    Kurdish,
    Arabic,
    Persian,
    Urdu,
}

impl LanguageId {
    pub const ALL: [LanguageId; 4] = [
        LanguageId::Kurdish,
        LanguageId::Arabic,
        LanguageId::Persian,
        LanguageId::Urdu,
    ];

    /// Dense index in `ALL` order; used for per-language head storage.
    pub fn index(self) -> usize {
        match self {
            LanguageId::Kurdish => 0,
            LanguageId::Arabic => 1,
            LanguageId::Persian => 2,
            LanguageId::Urdu => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// ISO 639 code used in data files.
    pub fn code(self) -> &'static str {
        match self {
            LanguageId::Kurdish => "ckb",
            LanguageId::Arabic => "ar",
            LanguageId::Persian => "fa",
            LanguageId::Urdu => "ur",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LanguageId::Kurdish => "kurdish",
            LanguageId::Arabic => "arabic",
            LanguageId::Persian => "persian",
            LanguageId::Urdu => "urdu",
        }
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LanguageId {
    type Err = OrthographyError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        LanguageId::ALL
            .into_iter()
            .find(|l| l.code() == lower || l.name() == lower)
            .or(match lower.as_str() {
                "ku" | "sorani" => Some(LanguageId::Kurdish),
                "fas" | "farsi" => Some(LanguageId::Persian),
                _ => None,
            })
            .ok_or(OrthographyError::UnknownLanguage(s.to_string()))
    }
}

/// Shipped tables bundled together; what most callers need.
#[derive(Debug, Clone)]
pub struct Orthography {
    pub table: VariantTable,
    pub profile: ScriptProfile,
}

impl Orthography {
    pub fn new(table: VariantTable, profile: ScriptProfile) -> Result<Self> {
        table.validate_against(&profile)?;
        Ok(Self { table, profile })
    }

    /// The tables compiled into the crate.
    pub fn builtin() -> Self {
        Self::new(VariantTable::builtin(), ScriptProfile::builtin())
            .expect("shipped orthography tables are valid")
    }

    pub fn normalize(&self, text: &str, lang: LanguageId) -> String {
        normalize(text, lang, &self.table)
    }

    pub fn detect(&self, text: &str) -> Result<Detection> {
        detect_script(text, &self.profile)
    }
}
