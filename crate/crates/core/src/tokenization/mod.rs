//! BPE and WordPiece subword tokenizers, trained from scratch, plus the
//! position-aligned encoding that lets the two embedding tables be averaged.
//!
//! Both tokenizers share the same pre-tokenization: text is cut before every
//! space, and the space itself becomes the word-boundary marker `▁` attached
//! to the following word. The surfaces of a segmentation therefore concatenate
//! back to the input once `▁` is read as a space.

mod aligned;
mod bpe;
mod wordpiece;

pub use aligned::{encode_aligned, AlignedPosition, AlignedTokens};
pub use bpe::BpeModel;
pub use wordpiece::WordPieceModel;

pub const WORD_MARKER: char = '\u{2581}';
pub const CONTINUATION: &str = "##";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const MASK_ID: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<cls>", "<mask>"];

/// Minimum pair frequency for a merge to be learned.
const MIN_PAIR_FREQUENCY: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocab size {requested} leaves no merge budget (alphabet + specials = {base})")]
    VocabTooSmall { requested: usize, base: usize },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("model file error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

/// Common read-only surface of the two tokenizer models.
pub trait SubwordModel {
    fn vocab_size(&self) -> usize;
    fn piece(&self, id: u32) -> Option<&str>;
    fn encode(&self, text: &str) -> Vec<u32>;
    /// Text contributed by a non-special piece when decoding.
    fn piece_text<'a>(&self, piece: &'a str) -> &'a str {
        piece
    }
}

/// Splits text into word chunks, replacing each space by `▁` on the next chunk.
pub fn pretokenize(text: &str) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c == ' ' {
            if !cur.is_empty() {
                chunks.push(std::mem::take(&mut cur));
            }
            cur.push(WORD_MARKER);
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

/// Maps ids back to text. Padding, CLS and MASK decode to nothing; UNK to U+FFFD.
pub fn decode<M: SubwordModel + ?Sized>(ids: &[u32], model: &M) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let piece = model.piece(id).ok_or(TokenizerError::IdOutOfRange {
            id,
            size: model.vocab_size(),
        })?;
        match id {
            PAD_ID | CLS_ID | MASK_ID => {}
            UNK_ID => out.push('\u{FFFD}'),
            _ => out.push_str(model.piece_text(piece)),
        }
    }
    Ok(out.replace(WORD_MARKER, " "))
}

/// Word chunk frequencies in first-seen order; ordering ties are resolved by
/// the chunk string so training never depends on hash iteration order.
pub(crate) fn count_words<I, S>(corpus: I) -> std::collections::BTreeMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = std::collections::BTreeMap::new();
    for doc in corpus {
        for chunk in pretokenize(doc.as_ref()) {
            *counts.entry(chunk).or_insert(0) += 1;
        }
    }
    counts
}

pub(crate) fn write_vocab(path: &std::path::Path, vocab: &[String]) -> Result<()> {
    let mut s = String::new();
    for (i, p) in vocab.iter().enumerate() {
        s.push_str(&format!("{i}\t{p}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub(crate) fn read_vocab(path: &std::path::Path) -> Result<Vec<String>> {
    let src = std::fs::read_to_string(path)?;
    let mut vocab = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let (id, piece) = line.split_once('\t').ok_or(TokenizerError::Format {
            line: i + 1,
            msg: "expected `id<TAB>piece`".into(),
        })?;
        let id: usize = id.parse().map_err(|_| TokenizerError::Format {
            line: i + 1,
            msg: format!("bad id `{id}`"),
        })?;
        if id != vocab.len() {
            return Err(TokenizerError::Format {
                line: i + 1,
                msg: format!("ids must be dense; expected {}, found {id}", vocab.len()),
            });
        }
        vocab.push(piece.to_string());
    }
    if vocab.len() < SPECIAL_TOKENS.len()
        || vocab[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(String::from)
    {
        return Err(TokenizerError::Format {
            line: 1,
            msg: "vocabulary must start with the special tokens".into(),
        });
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretokenize_marks_spaces() {
        assert_eq!(pretokenize("ab cd"), vec!["ab", "▁cd"]);
        assert_eq!(pretokenize(" a"), vec!["▁a"]);
        assert_eq!(pretokenize("a  b"), vec!["a", "▁", "▁b"]);
        assert!(pretokenize("").is_empty());
        let text = "سڵاو لە  هەموو ";
        let joined: String = pretokenize(text).concat().replace(WORD_MARKER, " ");
        assert_eq!(joined, text);
    }
}
