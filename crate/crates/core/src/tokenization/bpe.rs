use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{
    count_words, pretokenize, read_vocab, write_vocab, Result, SubwordModel, TokenizerError,
    MIN_PAIR_FREQUENCY, SPECIAL_TOKENS, UNK_ID,
};

/// Byte-pair-encoding model over codepoints.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    vocab: Vec<String>,
    /// Non-special pieces only, so a merge can never produce a special id.
    ids: HashMap<String, u32>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl BpeModel {
    /// Learns merges by descending pair frequency, ties broken by the
    /// lexicographic order of the pair's strings.
    ///
    /// Training is fully deterministic; `seed` is accepted for interface
    /// symmetry with the other trainers and recorded by callers.
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
        let base = SPECIAL_TOKENS.len() + alphabet.len();
        if vocab_size <= base {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                base,
            });
        }

        let mut model = Self::with_alphabet(&alphabet);
        let mut words: Vec<(Vec<u32>, u64)> = counts
            .iter()
            .map(|(w, &n)| (w.chars().map(|c| model.ids[&c.to_string()]).collect(), n))
            .collect();

        while model.vocab.len() < vocab_size {
            let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (syms, n) in &words {
                for w in syms.windows(2) {
                    *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
                }
            }
            let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // lexicographically smaller pair wins, so it must compare greater
                    let sa = (&model.vocab[pa.0 as usize], &model.vocab[pa.1 as usize]);
                    let sb = (&model.vocab[pb.0 as usize], &model.vocab[pb.1 as usize]);
                    sb.cmp(&sa)
                })
            });
            let Some(((left, right), count)) = best else { break };
            if count < MIN_PAIR_FREQUENCY {
                break;
            }
            let merged = model.push_merge(left, right);
            for (syms, _) in &mut words {
                merge_pair(syms, left, right, merged);
            }
        }
        Ok(model)
    }

    fn with_alphabet(alphabet: &BTreeSet<char>) -> Self {
        let mut model = Self {
            vocab: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
            merges: Vec::new(),
            ranks: HashMap::new(),
        };
        for c in alphabet {
            model.intern(c.to_string());
        }
        model
    }

    fn intern(&mut self, piece: String) -> u32 {
        if let Some(&id) = self.ids.get(&piece) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.ids.insert(piece.clone(), id);
        self.vocab.push(piece);
        id
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let merged = format!("{}{}", self.vocab[left as usize], self.vocab[right as usize]);
        let id = self.intern(merged);
        self.ranks.insert((left, right), (self.merges.len(), id));
        self.merges.push((left, right));
        id
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Merge list as piece strings, in learned order.
    pub fn merge_strings(&self) -> Vec<(&str, &str)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.vocab[l as usize].as_str(), self.vocab[r as usize].as_str()))
            .collect()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    pub fn contains_char(&self, c: char) -> bool {
        let mut buf = [0u8; 4];
        self.ids.contains_key(c.encode_utf8(&mut buf) as &str)
    }

    /// Segments one pre-tokenized chunk into `(id, surface)` pairs.
    fn encode_chunk(&self, chunk: &str) -> Vec<(u32, String)> {
        let mut syms: Vec<(u32, String)> = chunk
            .chars()
            .map(|c| {
                let s = c.to_string();
                (self.ids.get(&s).copied().unwrap_or(UNK_ID), s)
            })
            .collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].0, w[1].0)).map(|&(r, _)| (r, (w[0].0, w[1].0))))
                .min_by_key(|&(r, _)| r);
            let Some((_, (left, right))) = best else { break };
            let merged = self.ranks[&(left, right)].1;
            let mut out = Vec::with_capacity(syms.len());
            let mut it = syms.into_iter().peekable();
            while let Some((id, s)) = it.next() {
                if id == left && it.peek().is_some_and(|(n, _)| *n == right) {
                    let (_, rs) = it.next().expect("peeked");
                    out.push((merged, s + &rs));
                } else {
                    out.push((id, s));
                }
            }
            syms = out;
        }
        syms
    }

    /// Canonical segmentation of `text` with each token's surface string.
    pub fn encode_with_surfaces(&self, text: &str) -> Vec<(u32, String)> {
        pretokenize(text)
            .iter()
            .flat_map(|chunk| self.encode_chunk(chunk))
            .collect()
    }

    pub fn save(&self, vocab_path: &Path, merges_path: &Path) -> Result<()> {
        write_vocab(vocab_path, &self.vocab)?;
        let mut s = String::new();
        for (l, r) in self.merge_strings() {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        std::fs::write(merges_path, s)?;
        Ok(())
    }

    pub fn load(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab = read_vocab(vocab_path)?;
        let mut model = Self {
            vocab: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
            merges: Vec::new(),
            ranks: HashMap::new(),
        };
        for piece in &vocab[SPECIAL_TOKENS.len()..] {
            let id = model.vocab.len() as u32;
            model.ids.entry(piece.clone()).or_insert(id);
            model.vocab.push(piece.clone());
        }
        let src = std::fs::read_to_string(merges_path)?;
        for (i, line) in src.lines().enumerate() {
            let err = |msg: String| TokenizerError::Format { line: i + 1, msg };
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| err("expected `left right`".into()))?;
            let left = model.token_id(l).ok_or_else(|| err(format!("unknown piece `{l}`")))?;
            let right = model.token_id(r).ok_or_else(|| err(format!("unknown piece `{r}`")))?;
            let merged = model
                .token_id(&format!("{l}{r}"))
                .ok_or_else(|| err(format!("merge result `{l}{r}` missing from vocab")))?;
            model.ranks.insert((left, right), (model.merges.len(), merged));
            model.merges.push((left, right));
        }
        Ok(model)
    }
}

fn merge_pair(syms: &mut Vec<u32>, left: u32, right: u32, merged: u32) {
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

impl SubwordModel for BpeModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn piece(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_with_surfaces(text).into_iter().map(|(id, _)| id).collect()
    }
}
