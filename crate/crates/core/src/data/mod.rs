//! Documents, cleaning, stratified splits, batching and the synthetic corpus
//! generator used for desk-scale experiments.

mod batch;
mod clean;
mod split;
mod synth;

use std::fmt::Write as _;
use std::path::Path;

use crate::orthography::{LanguageId, Orthography, OrthographyError};

pub use batch::{batches, upsample};
pub use clean::{clean, convert_digits, strip_markup};
pub use split::{split, Split, SplitSpec};
pub use synth::{keyword_oracle, synth_corpus, synth_keywords, KeywordPools, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("{0}")]
    Split(String),
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("label {label} out of range for {language} ({classes} classes)")]
    Label {
        label: usize,
        language: LanguageId,
        classes: usize,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Orthography(#[from] OrthographyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Option<usize>,
    pub language: LanguageId,
}

/// Parses one document per line.
///
/// Accepted forms: `label<TAB>language<TAB>text` (label `-` for none),
/// `language<TAB>text`, or bare text whose language is detected. Blank lines
/// are skipped. Ids are `<prefix><line number>`.
pub fn parse_documents(src: &str, prefix: &str, orth: &Orthography) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fmt_err = |msg: String| DataError::Format { line: line_no, msg };
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        let (label, language, text) = match cols.as_slice() {
            [label, lang, text] => {
                let label = match label.trim() {
                    "-" | "" => None,
                    l => Some(l.parse().map_err(|_| fmt_err(format!("bad label `{l}`")))?),
                };
                let lang = lang.parse().map_err(|e: OrthographyError| fmt_err(e.to_string()))?;
                (label, lang, *text)
            }
            [lang, text] => {
                let lang = lang.parse().map_err(|e: OrthographyError| fmt_err(e.to_string()))?;
                (None, lang, *text)
            }
            [text] => {
                let det = orth.detect(text).map_err(|e| fmt_err(e.to_string()))?;
                (None, det.language, *text)
            }
            _ => unreachable!("splitn yields 1..=3 columns"),
        };
        docs.push(Document {
            id: format!("{prefix}{line_no}"),
            text: text.to_string(),
            label,
            language,
        });
    }
    Ok(docs)
}

pub fn read_documents(path: &Path, orth: &Orthography) -> Result<Vec<Document>> {
    let src = std::fs::read_to_string(path)?;
    let prefix = path
        .file_stem()
        .map(|s| format!("{}:", s.to_string_lossy()))
        .unwrap_or_default();
    parse_documents(&src, &prefix, orth)
}

/// Inverse of [`parse_documents`] for the three-column form. Tabs and
/// newlines inside text become spaces.
pub fn format_documents(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        let label = d.label.map_or("-".to_string(), |l| l.to_string());
        let text = d.text.replace(['\t', '\n', '\r'], " ");
        let _ = writeln!(out, "{label}\t{}\t{text}", d.language.code());
    }
    out
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    std::fs::write(path, format_documents(docs))?;
    Ok(())
}

/// Checks labels against per-language class counts and id uniqueness.
pub fn validate_documents(docs: &[Document], classes: &[usize; 4]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(DataError::DuplicateId(d.id.clone()));
        }
        if let Some(label) = d.label {
            let c = classes[d.language.index()];
            if label >= c {
                return Err(DataError::Label {
                    label,
                    language: d.language,
                    classes: c,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_line_forms() {
        let orth = Orthography::builtin();
        let src = "2\tckb\tسڵاو لە\n\nfa\tسلام\nآپ کیسے ہیں\n-\tar\tمرحبا\n";
        let docs = parse_documents(src, "t:", &orth).unwrap();
        assert_eq!(docs.len(), 4);
        assert_eq!((docs[0].label, docs[0].language), (Some(2), LanguageId::Kurdish));
        assert_eq!((docs[1].label, docs[1].language), (None, LanguageId::Persian));
        assert_eq!(docs[2].language, LanguageId::Urdu);
        assert_eq!(docs[3].id, "t:5");
        let again = parse_documents(&format_documents(&docs), "t:", &orth).unwrap();
        assert_eq!(
            again.iter().map(|d| (&d.text, d.label, d.language)).collect::<Vec<_>>(),
            docs.iter().map(|d| (&d.text, d.label, d.language)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bad_lines_report_their_number() {
        let orth = Orthography::builtin();
        match parse_documents("x\tckb\tسڵاو\n", "", &orth) {
            Err(DataError::Format { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_documents("1\tzz\tسڵاو\n", "", &orth).is_err());
        assert!(parse_documents("hello\n", "", &orth).is_err());
    }

    #[test]
    fn validation_checks_labels_and_ids() {
        let d = |id: &str, label| Document {
            id: id.into(),
            text: String::new(),
            label: Some(label),
            language: LanguageId::Urdu,
        };
        assert!(validate_documents(&[d("a", 3)], &[5, 5, 5, 4]).is_ok());
        assert!(matches!(
            validate_documents(&[d("a", 4)], &[5, 5, 5, 4]),
            Err(DataError::Label { .. })
        ));
        assert!(matches!(
            validate_documents(&[d("a", 0), d("a", 1)], &[5, 5, 5, 4]),
            Err(DataError::DuplicateId(_))
        ));
    }
}
