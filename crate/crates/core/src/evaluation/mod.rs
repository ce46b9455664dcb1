//! Confusion matrices, accuracy/precision/recall/F1/log-loss, paired t-tests,
//! the ablation harness and report files.

mod ablation;
mod report;
mod stats;

use std::fmt::Write as _;

use crate::data::Document;
use crate::model::{argmax, Model, ModelError};
use crate::orthography::{transliterate, LanguageId, VariantTable};
use crate::training::{loss_kl, translit_seed, TrainingError};

pub use ablation::{ablation_run, AblationData, EvalReport, SeedResult, VariantResult, VariantSpec};
pub use report::{heatmap_svg, report, shade};
pub use stats::{paired_ttest, student_t_sf, TTest};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("prediction {index}: probabilities sum to {sum}")]
    NotDistribution { index: usize, sum: f64 },
    #[error("prediction {index}: {msg}")]
    Class { index: usize, msg: String },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("comparisons must be paired: {0}")]
    Unpaired(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub names: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            names: (0..classes).map(|c| c.to_string()).collect(),
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.classes())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(EvalError::Length(self.classes(), other.classes()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Header `true\pred,<names>`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", self.names.join(","));
        for (name, row) in self.names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(src: &str) -> Result<Self> {
        let mut lines = src.lines().enumerate();
        let bad = |line: usize, msg: &str| EvalError::Csv {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty"))?;
        let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut counts = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != names.len() + 1 || names.get(counts.len()).map(String::as_str) != Some(cells[0]) {
                return Err(bad(i, "row does not match header"));
            }
            let row = cells[1..]
                .iter()
                .map(|c| c.parse().map_err(|_| bad(i, "bad count")))
                .collect::<Result<Vec<usize>>>()?;
            counts.push(row);
        }
        if counts.len() != names.len() {
            return Err(bad(names.len(), "matrix is not square"));
        }
        Ok(Self { names, counts })
    }
}

/// Fractions and nats.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub log_loss: f64,
}

impl Metrics {
    /// Field-wise mean.
    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len().max(1) as f64;
        let s = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: s(|m| m.accuracy),
            precision: s(|m| m.precision),
            recall: s(|m| m.recall),
            f1: s(|m| m.f1),
            log_loss: s(|m| m.log_loss),
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class (precision, recall, F1); 0/0 counts as 0.
fn per_class(m: &ConfusionMatrix) -> Vec<(f64, f64, f64)> {
    let (rows, cols) = (m.row_sums(), m.col_sums());
    (0..m.classes())
        .map(|c| {
            let p = ratio(m.counts[c][c], cols[c]);
            let r = ratio(m.counts[c][c], rows[c]);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f)
        })
        .collect()
}

fn check_prediction(index: usize, probs: &[f64], truth: usize) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(EvalError::NotDistribution { index, sum });
    }
    if truth >= probs.len() {
        return Err(EvalError::Class {
            index,
            msg: format!("class {truth} out of range for {} outputs", probs.len()),
        });
    }
    Ok(())
}

/// Confusion matrix and macro metrics of `(ŷ, true class)` pairs over one
/// class space. Predictions are the argmax; log loss is the mean `−ln ŷ[y]`.
pub fn evaluate(preds: &[(Vec<f64>, usize)]) -> Result<(ConfusionMatrix, Metrics)> {
    let (first, _) = preds.first().ok_or(EvalError::Empty)?;
    let c = first.len();
    let mut m = ConfusionMatrix::new(c);
    let mut nll = 0.0;
    for (i, (probs, y)) in preds.iter().enumerate() {
        if probs.len() != c {
            return Err(EvalError::Class {
                index: i,
                msg: format!("{} outputs, expected {c}", probs.len()),
            });
        }
        check_prediction(i, probs, *y)?;
        m.add(*y, argmax(probs));
        nll -= probs[*y].max(1e-300).ln();
    }
    let pc = per_class(&m);
    let k = c as f64;
    let metrics = Metrics {
        accuracy: ratio(m.trace(), m.total()),
        precision: pc.iter().map(|x| x.0).sum::<f64>() / k,
        recall: pc.iter().map(|x| x.1).sum::<f64>() / k,
        f1: pc.iter().map(|x| x.2).sum::<f64>() / k,
        log_loss: nll / preds.len() as f64,
    };
    Ok((m, metrics))
}

/// A classified test document.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub id: String,
    pub language: LanguageId,
    pub label: usize,
    pub probs: Vec<f64>,
}

impl Scored {
    pub fn correct(&self) -> bool {
        argmax(&self.probs) == self.label
    }
}

/// Runs labeled documents through their language's head.
pub fn score_documents(model: &Model, docs: &[Document]) -> Result<Vec<Scored>> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let langs: Vec<LanguageId> = docs.iter().map(|d| d.language).collect();
    let probs = model.class_probs(&texts, &langs)?;
    docs.iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (d, probs))| {
            let label = d.label.ok_or_else(|| EvalError::Class {
                index: i,
                msg: format!("document `{}` has no label", d.id),
            })?;
            Ok(Scored {
                id: d.id.clone(),
                language: d.language,
                label,
                probs,
            })
        })
        .collect()
}

/// Per-language matrices plus pooled metrics: accuracy and log loss over all
/// documents, macro scores averaged over every (language, class) cell.
pub fn evaluate_routed(scored: &[Scored]) -> Result<(Vec<(LanguageId, ConfusionMatrix)>, Metrics)> {
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut out = Vec::new();
    let mut cells = Vec::new();
    let (mut correct, mut nll) = (0usize, 0.0);
    for lang in LanguageId::ALL {
        let preds: Vec<(Vec<f64>, usize)> = scored
            .iter()
            .filter(|s| s.language == lang)
            .map(|s| (s.probs.clone(), s.label))
            .collect();
        if preds.is_empty() {
            continue;
        }
        let (m, met) = evaluate(&preds)?;
        correct += m.trace();
        nll += met.log_loss * preds.len() as f64;
        cells.extend(per_class(&m));
        out.push((lang, m));
    }
    let k = cells.len() as f64;
    let n = scored.len() as f64;
    let metrics = Metrics {
        accuracy: correct as f64 / n,
        precision: cells.iter().map(|x| x.0).sum::<f64>() / k,
        recall: cells.iter().map(|x| x.1).sum::<f64>() / k,
        f1: cells.iter().map(|x| x.2).sum::<f64>() / k,
        log_loss: nll / n,
    };
    Ok((out, metrics))
}

/// Mean `KL(ŷ(x) ‖ ŷ(transliterate(x)))` over documents, each routed by its
/// own language. Transliteration seeds come from `seed` and the document id.
pub fn consistency_kl(model: &Model, docs: &[Document], table: &VariantTable, seed: u64) -> Result<f64> {
    if docs.is_empty() {
        return Err(EvalError::Empty);
    }
    let langs: Vec<LanguageId> = docs.iter().map(|d| d.language).collect();
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let primes: Vec<String> = docs
        .iter()
        .map(|d| transliterate(&d.text, table, translit_seed(seed, &d.id)))
        .collect();
    let prime_refs: Vec<&str> = primes.iter().map(String::as_str).collect();
    let p = model.class_probs(&texts, &langs)?;
    let q = model.class_probs(&prime_refs, &langs)?;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(&q) {
        total += loss_kl(a, b)?;
    }
    Ok(total / docs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(c: usize, k: usize) -> Vec<f64> {
        (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn perfect_predictions() {
        let preds: Vec<_> = (0..6).map(|i| (one_hot(i % 3, 3), i % 3)).collect();
        let (m, met) = evaluate(&preds).unwrap();
        assert_eq!(met, Metrics { accuracy: 1.0, precision: 1.0, recall: 1.0, f1: 1.0, log_loss: 0.0 });
        assert_eq!(m.trace(), 6);
        assert_eq!(m.counts[0], vec![2, 0, 0]);
    }

    #[test]
    fn uniform_predictor() {
        let preds: Vec<_> = (0..8).map(|i| (vec![0.25; 4], i % 4)).collect();
        let (m, met) = evaluate(&preds).unwrap();
        assert!((met.log_loss - 4f64.ln()).abs() <= 1e-12);
        // argmax of a tie is the first class
        assert_eq!(m.col_sums(), vec![8, 0, 0, 0]);
        assert_eq!(met.accuracy, 0.25);
    }

    #[test]
    fn six_prediction_fixture() {
        // truth 0,0,1,1,2,2 ; predicted 0,1,1,1,2,0
        let p = |c: usize, conf: f64| {
            let mut v = vec![(1.0 - conf) / 2.0; 3];
            v[c] = conf;
            v
        };
        let preds = vec![
            (p(0, 0.8), 0),
            (p(1, 0.6), 0),
            (p(1, 0.7), 1),
            (p(1, 0.9), 1),
            (p(2, 0.5), 2),
            (p(0, 0.4), 2),
        ];
        let (m, met) = evaluate(&preds).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        assert_eq!(m.row_sums(), vec![2, 2, 2]);
        // hand counts: P = (1/2, 2/3, 1), R = (1/2, 1, 1/2)
        let (ps, rs) = ([0.5, 2.0 / 3.0, 1.0], [0.5, 1.0, 0.5]);
        let f1: Vec<f64> = ps.iter().zip(&rs).map(|(p, r)| 2.0 * p * r / (p + r)).collect();
        assert!((met.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!((met.precision - ps.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert!((met.recall - rs.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert!((met.f1 - f1.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        let ll = -(0.8f64.ln() + 0.2f64.ln() + 0.7f64.ln() + 0.9f64.ln() + 0.5f64.ln() + 0.3f64.ln()) / 6.0;
        assert!((met.log_loss - ll).abs() < 1e-12);
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let preds = vec![(vec![1.0, 0.0], 0), (vec![1.0, 0.0], 1)];
        let (_, met) = evaluate(&preds).unwrap();
        // class 1 is never predicted: its precision is 0/0
        assert_eq!(met.precision, 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(evaluate(&[]), Err(EvalError::Empty)));
        assert!(matches!(evaluate(&[(vec![0.5, 0.6], 0)]), Err(EvalError::NotDistribution { .. })));
        assert!(evaluate(&[(vec![0.5, 0.5], 2)]).is_err());
        assert!(evaluate(&[(vec![0.5, 0.5], 0), (vec![1.0], 0)]).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let preds = vec![(vec![0.7, 0.3], 0), (vec![0.4, 0.6], 0), (vec![0.1, 0.9], 1)];
        let mut rev = preds.clone();
        rev.reverse();
        let (a, ma) = evaluate(&preds).unwrap();
        let (b, mb) = evaluate(&rev).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma.accuracy, mb.accuracy);
        assert!((ma.log_loss - mb.log_loss).abs() < 1e-15);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let mut m = ConfusionMatrix::new(3);
        for (t, p) in [(0, 0), (0, 2), (1, 1), (2, 2), (2, 2)] {
            m.add(t, p);
        }
        assert_eq!(ConfusionMatrix::from_csv(&m.to_csv()).unwrap(), m);
        assert!(ConfusionMatrix::from_csv("true\\pred,0,1\n0,1\n").is_err());
    }

    #[test]
    fn routed_metrics_pool_languages() {
        let s = |language, label, probs: Vec<f64>| Scored {
            id: String::new(),
            language,
            label,
            probs,
        };
        let scored = vec![
            s(LanguageId::Kurdish, 0, vec![0.9, 0.1]),
            s(LanguageId::Kurdish, 1, vec![0.9, 0.1]),
            s(LanguageId::Urdu, 2, vec![0.1, 0.1, 0.8]),
        ];
        let (ms, met) = evaluate_routed(&scored).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[1].1.classes(), 3);
        assert!((met.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }
}
