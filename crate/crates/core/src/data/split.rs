use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Document, Result};
use crate::orthography::LanguageId;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    /// Fraction of the non-test part held out for validation.
    pub val_fraction: f64,
    pub stratify: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            val_fraction: 0.1,
            stratify: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

/// Distributes `total` over strata proportionally to `sizes`: floors first,
/// then one extra each to the largest fractional parts (earlier strata win
/// ties). Sums to `total` exactly.
fn allocate(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut rem: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| ((total * s) % n, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - out.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(missing) {
        out[i] += 1;
    }
    out
}

/// Stratified three-way split.
///
/// Global test and validation sizes are `round(test·N)` and
/// `round(val·(N − test))`; each is spread over the (language, label) strata
/// by largest remainder, so every stratum keeps its share within one
/// document. Within a stratum documents are shuffled by a seeded RNG. Each
/// partition keeps the input order.
pub fn split(docs: &[Document], spec: &SplitSpec) -> Result<Split> {
    let valid = |f: f64| (0.0..1.0).contains(&f);
    if !valid(spec.test_fraction) || !valid(spec.val_fraction) {
        return Err(DataError::Split(format!(
            "fractions must be in [0, 1): test {}, val {}",
            spec.test_fraction, spec.val_fraction
        )));
    }
    let mut strata: BTreeMap<(LanguageId, Option<usize>), Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        let key = if spec.stratify {
            (d.language, d.label)
        } else {
            (LanguageId::Kurdish, None)
        };
        strata.entry(key).or_default().push(i);
    }
    let parts = 1 + usize::from(spec.test_fraction > 0.0) + usize::from(spec.val_fraction > 0.0);
    if let Some(((lang, label), members)) = strata.iter().find(|(_, m)| m.len() < parts) {
        return Err(DataError::Split(format!(
            "stratum {lang}/{label:?} has {} document(s), fewer than {parts} partitions",
            members.len()
        )));
    }
    let n = docs.len();
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let n_val = (spec.val_fraction * (n - n_test) as f64).round() as usize;
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let test_alloc = allocate(n_test, &sizes);
    let rest: Vec<usize> = sizes.iter().zip(&test_alloc).map(|(s, t)| s - t).collect();
    let val_alloc = allocate(n_val, &rest);

    let mut role = vec![0u8; n];
    for (k, (_, members)) in strata.iter().enumerate() {
        let mut shuffled = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(k as u64));
        shuffled.shuffle(&mut rng);
        for (j, &i) in shuffled.iter().enumerate() {
            role[i] = if j < test_alloc[k] {
                2
            } else if j < test_alloc[k] + val_alloc[k] {
                1
            } else {
                0
            };
        }
    }
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (d, r) in docs.iter().zip(role) {
        match r {
            2 => out.test.push(d.clone()),
            1 => out.val.push(d.clone()),
            _ => out.train.push(d.clone()),
        }
    }
    Ok(out)
}
