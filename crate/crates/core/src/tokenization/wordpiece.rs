use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{
    count_words, pretokenize, read_vocab, write_vocab, Result, SubwordModel, TokenizerError,
    CONTINUATION, MIN_PAIR_FREQUENCY, SPECIAL_TOKENS, UNK_ID,
};

/// WordPiece vocabulary with `##`-marked continuation pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPieceModel {
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    max_piece_chars: usize,
}

fn continuation(c: char) -> String {
    format!("{CONTINUATION}{c}")
}

impl WordPieceModel {
    /// Likelihood-scored merging: a pair scores `freq(pair) / (freq(left) * freq(right))`,
    /// the best score wins and ties go to the lexicographically smaller pair.
    /// Every alphabet codepoint is seeded in both word-initial and `##` form,
    /// so in-alphabet text never needs UNK.
    pub fn train<I, S>(corpus: I, vocab_size: usize, _seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let counts = count_words(corpus);
        if counts.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
        let base = SPECIAL_TOKENS.len() + 2 * alphabet.len();
        if vocab_size <= base {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                base,
            });
        }

        let mut model = Self {
            vocab: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
            max_piece_chars: 1,
        };
        for &c in &alphabet {
            model.intern(c.to_string());
        }
        for &c in &alphabet {
            model.intern(continuation(c));
        }

        let mut words: Vec<(Vec<u32>, u64)> = counts
            .iter()
            .map(|(w, &n)| {
                let ids = w
                    .chars()
                    .enumerate()
                    .map(|(i, c)| {
                        let p = if i == 0 { c.to_string() } else { continuation(c) };
                        model.ids[&p]
                    })
                    .collect();
                (ids, n)
            })
            .collect();

        while model.vocab.len() < vocab_size {
            let mut unit: HashMap<u32, u64> = HashMap::new();
            let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
            for (syms, n) in &words {
                for &s in syms {
                    *unit.entry(s).or_insert(0) += n;
                }
                for w in syms.windows(2) {
                    *pairs.entry((w[0], w[1])).or_insert(0) += n;
                }
            }
            let best = pairs
                .into_iter()
                .filter(|&(_, f)| f >= MIN_PAIR_FREQUENCY)
                .max_by(|&(pa, fa), &(pb, fb)| {
                    // fa / (la ra) vs fb / (lb rb), compared exactly
                    let lhs = fa as u128 * unit[&pb.0] as u128 * unit[&pb.1] as u128;
                    let rhs = fb as u128 * unit[&pa.0] as u128 * unit[&pa.1] as u128;
                    lhs.cmp(&rhs).then_with(|| {
                        let sa = (&model.vocab[pa.0 as usize], &model.vocab[pa.1 as usize]);
                        let sb = (&model.vocab[pb.0 as usize], &model.vocab[pb.1 as usize]);
                        sb.cmp(&sa)
                    })
                });
            let Some(((left, right), _)) = best else { break };
            let tail = model.vocab[right as usize]
                .strip_prefix(CONTINUATION)
                .unwrap_or(&model.vocab[right as usize])
                .to_string();
            let merged_piece = format!("{}{}", model.vocab[left as usize], tail);
            let merged = model.intern(merged_piece);
            for (syms, _) in &mut words {
                let mut out = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                        out.push(merged);
                        i += 2;
                    } else {
                        out.push(syms[i]);
                        i += 1;
                    }
                }
                *syms = out;
            }
        }
        Ok(model)
    }

    fn intern(&mut self, piece: String) -> u32 {
        if let Some(&id) = self.ids.get(&piece) {
            return id;
        }
        let id = self.vocab.len() as u32;
        let chars = piece.strip_prefix(CONTINUATION).unwrap_or(&piece).chars().count();
        self.max_piece_chars = self.max_piece_chars.max(chars);
        self.ids.insert(piece.clone(), id);
        self.vocab.push(piece);
        id
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    /// Greedy longest-match segmentation of a single word. An unmatched
    /// codepoint becomes one UNK piece and matching resumes after it.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let longest = (start + 1..=chars.len().min(start + self.max_piece_chars))
                .rev()
                .find_map(|end| {
                    let body: String = chars[start..end].iter().collect();
                    let piece = if start == 0 {
                        body
                    } else {
                        format!("{CONTINUATION}{body}")
                    };
                    self.ids.get(&piece).map(|&id| (id, end))
                });
            match longest {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK_ID);
                    start += 1;
                }
            }
        }
        out
    }

    pub fn save(&self, vocab_path: &Path) -> Result<()> {
        write_vocab(vocab_path, &self.vocab)
    }

    pub fn load(vocab_path: &Path) -> Result<Self> {
        let vocab = read_vocab(vocab_path)?;
        let mut model = Self {
            vocab: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
            max_piece_chars: 1,
        };
        for piece in &vocab[SPECIAL_TOKENS.len()..] {
            let before = model.vocab.len();
            model.intern(piece.clone());
            if model.vocab.len() == before {
                return Err(TokenizerError::Format {
                    line: before + 1,
                    msg: format!("duplicate piece `{piece}`"),
                });
            }
        }
        Ok(model)
    }
}

impl SubwordModel for WordPieceModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn piece(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        pretokenize(text)
            .iter()
            .flat_map(|w| self.encode_word(w))
            .collect()
    }

    fn piece_text<'a>(&self, piece: &'a str) -> &'a str {
        piece.strip_prefix(CONTINUATION).unwrap_or(piece)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenization::decode;

    #[test]
    fn single_candidate_pair_forms_piece() {
        // alphabet {a, b}: 4 specials + 4 seeded pieces, budget 1
        let m = WordPieceModel::train(["ab", "ab", "ab"], 9, 0).unwrap();
        assert_eq!(m.vocab().last().unwrap(), "ab");
        assert_eq!(m.encode("ab"), vec![m.token_id("ab").unwrap()]);
    }

    #[test]
    fn empty_corpus_and_small_vocab_are_errors() {
        assert!(matches!(
            WordPieceModel::train(Vec::<&str>::new(), 50, 0),
            Err(TokenizerError::EmptyCorpus)
        ));
        assert!(matches!(
            WordPieceModel::train(["ab ab"], 10, 0),
            Err(TokenizerError::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn in_alphabet_text_never_needs_unk() {
        let m = WordPieceModel::train(["سڵاو لە", "هەموو تۆ"], 200, 0).unwrap();
        // chars seen only word-internally still tokenize word-initially
        for text in ["ڵسا", "وو ەل", "تۆسڵاو"] {
            assert!(!m.encode(text).contains(&UNK_ID), "{text}");
            assert_eq!(decode(&m.encode(text), &m).unwrap(), text);
        }
        assert_eq!(m.encode("x"), vec![UNK_ID]);
    }

    #[test]
    fn scoring_prefers_rare_units_that_always_co_occur() {
        // (x,##y) scores 2/(2*2); (a,##b) is more frequent but scores 3/(3*6)
        let corpus = ["xy", "xy", "ab a b", "ab a b", "ab a b"];
        let m = WordPieceModel::train(corpus, 4 + 2 * 5 + 1, 0).unwrap();
        assert_eq!(m.vocab().last().unwrap(), "xy");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = WordPieceModel::train(["سڵاو لە", "هەموو تۆ", "سڵاو تۆ"], 60, 0).unwrap();
        let p = dir.path().join("wp.vocab");
        m.save(&p).unwrap();
        assert_eq!(WordPieceModel::load(&p).unwrap(), m);
    }
}
