use std::collections::BTreeMap;
use std::path::Path;

use super::{loss_finetune, lr_schedule, AdamW, FinetuneConfig, MetricsLog, MetricsRow, Objective, Result, TrainingError, KL_CLAMP};
use crate::data::{batches, split, validate_documents, Document, SplitSpec};
use crate::model::{argmax, is_backbone, is_head, reinit_task_layers, Checkpoint, Graph, Model, ModelConfig, Packed};
use crate::numerics::{ParamSet, Tensor, Var};
use crate::orthography::{transliterate, LanguageId, VariantTable};
use crate::tokenization::AlignedTokens;

/// A labeled sequence and its transliterated twin.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneExample {
    pub tokens: AlignedTokens,
    pub prime: AlignedTokens,
    pub label: usize,
    pub language: LanguageId,
}

/// Seed of a document's transliteration: fixed per document id, so the
/// perturbed copy does not change between epochs.
pub fn translit_seed(seed: u64, id: &str) -> u64 {
    id.bytes()
        .fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// The transliterated branch: a constant target or a live part of the graph.
enum Prime {
    /// Clamped log-probabilities, one row per example.
    Fixed(Vec<Vec<f64>>),
    Live(Var),
}

fn not_backbone(name: &str) -> bool {
    !is_backbone(name)
}

fn all_params(_: &str) -> bool {
    true
}

/// Rows of each language, in `LanguageId::ALL` order.
fn by_language(langs: &[LanguageId]) -> Vec<(LanguageId, Vec<usize>)> {
    let mut m: BTreeMap<LanguageId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in langs.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m.into_iter().collect()
}

fn check_labels(cfg: &ModelConfig, labels: &[usize], langs: &[LanguageId]) -> Result<()> {
    if labels.len() != langs.len() {
        return Err(TrainingError::Length(labels.len(), langs.len()));
    }
    for (&y, &l) in labels.iter().zip(langs) {
        if y >= cfg.num_classes(l) {
            return Err(TrainingError::Config(format!(
                "label {y} out of range for {l} ({} classes)",
                cfg.num_classes(l)
            )));
        }
    }
    Ok(())
}

/// Clamped class log-probabilities of fixed CLS vectors, no gradients.
fn fixed_log_probs(cfg: &ModelConfig, params: &ParamSet, cls: &[Vec<f64>], langs: &[LanguageId]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); cls.len()];
    let mut g = Graph::inference(cfg, params);
    let x = g.tape.constant(Tensor::from_rows(cls)?);
    let h = g.project(x)?;
    for (lang, rows) in by_language(langs) {
        let sel = g.tape.select_rows(h, &rows)?;
        let lp = g.head_log_probs(sel, lang)?;
        let t = g.value(lp);
        for (k, &r) in rows.iter().enumerate() {
            out[r] = t.row_slice(k).iter().map(|v| v.exp().max(KL_CLAMP).ln()).collect();
        }
    }
    Ok(out)
}

/// Batch-mean CE and KL on top of CLS rows already in the graph.
fn task_objective(
    g: &mut Graph,
    cls: Var,
    prime: Option<Prime>,
    labels: &[usize],
    langs: &[LanguageId],
    gamma: f64,
    with_grads: bool,
) -> Result<Objective> {
    let b = labels.len() as f64;
    let h = g.project(cls)?;
    let h_prime = match &prime {
        Some(Prime::Live(c)) => Some(g.project(*c)?),
        _ => None,
    };
    let mut ce_sum: Option<Var> = None;
    let mut kl_sum: Option<Var> = None;
    let acc = |g: &mut Graph, s: &mut Option<Var>, v: Var| -> Result<()> {
        *s = Some(match *s {
            Some(prev) => g.tape.add(prev, v)?,
            None => v,
        });
        Ok(())
    };
    for (lang, rows) in by_language(langs) {
        let sel = g.tape.select_rows(h, &rows)?;
        let logits = g.head_logits(sel, lang)?;
        let lp = g.tape.log_softmax_rows(logits);
        let ys: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        let picked = g.tape.pick(lp, &ys)?;
        let s = g.tape.sum(picked);
        acc(g, &mut ce_sum, s)?;
        let log_q = match (&prime, h_prime) {
            (Some(Prime::Fixed(rowsq)), _) => {
                let t = Tensor::from_rows(&rows.iter().map(|&r| rowsq[r].clone()).collect::<Vec<_>>())?;
                Some(g.tape.constant(t))
            }
            (Some(Prime::Live(_)), Some(hp)) => {
                let sel = g.tape.select_rows(hp, &rows)?;
                let lq = g.head_logits(sel, lang)?;
                Some(g.tape.log_softmax_rows(lq))
            }
            _ => None,
        };
        if let Some(log_q) = log_q {
            let p = g.tape.softmax_rows(logits);
            let neg = g.tape.scale(log_q, -1.0);
            let diff = g.tape.add(lp, neg)?;
            let terms = g.tape.mul(p, diff)?;
            let s = g.tape.sum(terms);
            acc(g, &mut kl_sum, s)?;
        }
    }
    let ce = g.tape.scale(ce_sum.expect("non-empty batch"), -1.0 / b);
    let kl = kl_sum.map(|s| g.tape.scale(s, 1.0 / b));
    let ce_v = g.value(ce).item();
    let kl_v = kl.map_or(0.0, |k| g.value(k).item());
    let total = match kl {
        Some(k) if gamma != 0.0 => {
            let w = g.tape.scale(k, gamma);
            g.tape.add(ce, w)?
        }
        _ => ce,
    };
    Ok(Objective {
        loss: loss_finetune(ce_v, kl_v, gamma),
        main: ce_v,
        aux: kl_v,
        main_terms: labels.len(),
        aux_terms: if kl.is_some() { labels.len() } else { 0 },
        grads: if with_grads { Some(g.gradients(total)?) } else { None },
    })
}

/// Batch-mean `𝓛_CE + γ·𝓛_KL` through the full encoder.
///
/// The KL target comes from the transliterated copies. It is a constant
/// unless `symmetric` is set. It is skipped entirely when `gamma` is zero.
/// With `unfreeze` the backbone receives gradients too.
pub fn finetune_objective(
    cfg: &ModelConfig,
    params: &ParamSet,
    batch: &[&FinetuneExample],
    gamma: f64,
    symmetric: bool,
    unfreeze: bool,
    with_grads: bool,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let langs: Vec<LanguageId> = batch.iter().map(|e| e.language).collect();
    check_labels(cfg, &labels, &langs)?;
    let mut g = Graph::new(cfg, params, if unfreeze { all_params } else { not_backbone });
    let packed = Packed::new(batch.iter().map(|e| &e.tokens), cfg.max_len);
    let h = g.forward(&packed)?;
    let cls = g.cls(h, &packed)?;
    let prime_packed = Packed::new(batch.iter().map(|e| &e.prime), cfg.max_len);
    let prime = match (gamma != 0.0, symmetric) {
        (false, _) => None,
        (true, true) => {
            let hp = g.forward(&prime_packed)?;
            Some(Prime::Live(g.cls(hp, &prime_packed)?))
        }
        (true, false) => {
            let mut inf = Graph::inference(cfg, params);
            let hp = inf.forward(&prime_packed)?;
            let c = inf.cls(hp, &prime_packed)?;
            let t = inf.value(c);
            let rows: Vec<Vec<f64>> = (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect();
            Some(Prime::Fixed(fixed_log_probs(cfg, params, &rows, &langs)?))
        }
    };
    task_objective(&mut g, cls, prime, &labels, &langs, gamma, with_grads)
}

/// The same objective on precomputed (frozen) CLS vectors.
fn cached_objective(
    cfg: &ModelConfig,
    params: &ParamSet,
    cls: &[&Vec<f64>],
    prime: Option<&[&Vec<f64>]>,
    labels: &[usize],
    langs: &[LanguageId],
    gamma: f64,
    symmetric: bool,
) -> Result<Objective> {
    let mut g = Graph::new(cfg, params, not_backbone);
    let own: Vec<Vec<f64>> = cls.iter().map(|c| (*c).clone()).collect();
    let x = g.tape.constant(Tensor::from_rows(&own)?);
    let prime = match prime {
        Some(p) if gamma != 0.0 => {
            let rows: Vec<Vec<f64>> = p.iter().map(|c| (*c).clone()).collect();
            if symmetric {
                Some(Prime::Live(g.tape.constant(Tensor::from_rows(&rows)?)))
            } else {
                Some(Prime::Fixed(fixed_log_probs(cfg, params, &rows, langs)?))
            }
        }
        _ => None,
    };
    task_objective(&mut g, x, prime, labels, langs, gamma, true)
}

/// Mean CE and accuracy of fixed CLS vectors.
fn score(cfg: &ModelConfig, params: &ParamSet, cls: &[Vec<f64>], labels: &[usize], langs: &[LanguageId]) -> Result<(f64, f64)> {
    if cls.is_empty() {
        return Ok((0.0, 0.0));
    }
    let lp = fixed_log_probs(cfg, params, cls, langs)?;
    let ce = lp.iter().zip(labels).map(|(r, &y)| -r[y]).sum::<f64>() / cls.len() as f64;
    let correct = lp.iter().zip(labels).filter(|(r, &y)| argmax(r) == y).count();
    Ok((ce, correct as f64 / cls.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has failed to improve for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<(usize, f64)>,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if self.best.is_none_or(|(_, b)| loss < b) {
            self.best = Some((epoch, loss));
            self.bad = 0;
            return StopDecision::Improved;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneEpoch {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinetuneReport {
    pub epochs: Vec<FinetuneEpoch>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

struct Prepared {
    examples: Vec<FinetuneExample>,
    labels: Vec<usize>,
    langs: Vec<LanguageId>,
}

fn prepare(model: &Model, docs: &[Document], cfg: &FinetuneConfig, table: &VariantTable) -> Result<Prepared> {
    let max_len = cfg.max_len.min(model.config.max_len);
    let mut examples = Vec::with_capacity(docs.len());
    for d in docs {
        let label = d
            .label
            .ok_or_else(|| TrainingError::Config(format!("document `{}` has no label", d.id)))?;
        let mut tokens = model.encode(&d.text);
        tokens.truncate(max_len);
        let mut prime = model.encode(&transliterate(&d.text, table, translit_seed(cfg.seed, &d.id)));
        prime.truncate(max_len);
        examples.push(FinetuneExample {
            tokens,
            prime,
            label,
            language: d.language,
        });
    }
    Ok(Prepared {
        labels: examples.iter().map(|e| e.label).collect(),
        langs: examples.iter().map(|e| e.language).collect(),
        examples,
    })
}

fn cls_of(model: &Model, ex: &[FinetuneExample], prime: bool) -> Result<Vec<Vec<f64>>> {
    let seqs: Vec<AlignedTokens> = ex
        .iter()
        .map(|e| if prime { e.prime.clone() } else { e.tokens.clone() })
        .collect();
    Ok(model.cls_vectors(&seqs)?)
}

/// Fine-tunes the projection and heads on labeled, normalized documents.
///
/// The projection and heads are re-drawn from `cfg.seed` and
/// `cfg.val_fraction` of the documents is held out (stratified) for early
/// stopping on validation cross-entropy. The best epoch's parameters are
/// restored at the end. The backbone stays frozen unless `cfg.unfreeze`.
pub fn finetune(
    model: &mut Model,
    docs: &[Document],
    cfg: &FinetuneConfig,
    table: &VariantTable,
    log: &mut MetricsLog,
    checkpoints: Option<&Path>,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    validate_documents(docs, &model.config.classes)?;
    let parts = split(
        docs,
        &SplitSpec {
            test_fraction: 0.0,
            val_fraction: cfg.val_fraction,
            stratify: true,
            seed: cfg.seed,
        },
    )?;
    reinit_task_layers(&model.config, &mut model.params, cfg.seed)?;
    let train = prepare(model, &parts.train, cfg, table)?;
    let val = prepare(model, &parts.val, cfg, table)?;
    check_labels(&model.config, &train.labels, &train.langs)?;

    // frozen backbone: CLS vectors never change, compute them once
    let frozen = !cfg.unfreeze;
    let need_prime = cfg.gamma != 0.0;
    let (mut tr_cls, mut tr_prime, mut va_cls) = (Vec::new(), Vec::new(), Vec::new());
    if frozen {
        tr_cls = cls_of(model, &train.examples, false)?;
        if need_prime {
            tr_prime = cls_of(model, &train.examples, true)?;
        }
        va_cls = cls_of(model, &val.examples, false)?;
    }

    let n = train.examples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut best_params = model.params.clone();
    let mut report = FinetuneReport {
        train_ids: parts.train.iter().map(|d| d.id.clone()).collect(),
        val_ids: parts.val.iter().map(|d| d.id.clone()).collect(),
        ..Default::default()
    };
    let save = |model: &Model, name: &str, epoch: usize| -> Result<()> {
        if let Some(dir) = checkpoints {
            let mut ck = Checkpoint::new(model.clone());
            ck.meta.insert("stage".into(), "finetune".into());
            ck.meta.insert("epoch".into(), epoch.to_string());
            for (k, v) in cfg.to_pairs() {
                ck.meta.insert(format!("finetune.{k}"), v);
            }
            ck.save(&dir.join(name))?;
        }
        Ok(())
    };

    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let (mut sum, mut sum_ce, mut sum_kl) = (0.0, 0.0, 0.0);
        for idx in batches(n, cfg.batch_size, cfg.seed, epoch) {
            step += 1;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let langs: Vec<LanguageId> = idx.iter().map(|&i| train.langs[i]).collect();
            let obj = if frozen {
                let cls: Vec<&Vec<f64>> = idx.iter().map(|&i| &tr_cls[i]).collect();
                let prime: Vec<&Vec<f64>> = if need_prime { idx.iter().map(|&i| &tr_prime[i]).collect() } else { Vec::new() };
                cached_objective(
                    &model.config,
                    &model.params,
                    &cls,
                    need_prime.then_some(prime.as_slice()),
                    &labels,
                    &langs,
                    cfg.gamma,
                    cfg.symmetric_kl,
                )?
            } else {
                let batch: Vec<&FinetuneExample> = idx.iter().map(|&i| &train.examples[i]).collect();
                finetune_objective(&model.config, &model.params, &batch, cfg.gamma, cfg.symmetric_kl, true, true)?
            };
            let lr = lr_schedule(step, total, cfg.lr, cfg.warmup_fraction, cfg.linear_decay);
            let mult = cfg.head_lr_mult;
            opt.update(&mut model.params, obj.grads.as_ref().expect("requested"), |name| {
                if is_head(name) {
                    lr * mult
                } else {
                    lr
                }
            })?;
            let b = idx.len() as f64;
            sum += obj.loss * b;
            sum_ce += obj.main * b;
            sum_kl += obj.aux * b;
        }
        if !frozen {
            tr_cls = cls_of(model, &train.examples, false)?;
            va_cls = cls_of(model, &val.examples, false)?;
        }
        let (_, train_acc) = score(&model.config, &model.params, &tr_cls, &train.labels, &train.langs)?;
        let (val_loss, val_acc) = if va_cls.is_empty() {
            score(&model.config, &model.params, &tr_cls, &train.labels, &train.langs)?
        } else {
            score(&model.config, &model.params, &va_cls, &val.labels, &val.langs)?
        };
        let e = FinetuneEpoch {
            loss: sum / n as f64,
            ce: sum_ce / n as f64,
            kl: sum_kl / n as f64,
            train_accuracy: train_acc,
            val_loss,
            val_accuracy: val_acc,
        };
        log.push(MetricsRow {
            stage: "finetune".into(),
            epoch,
            split: "train".into(),
            loss: Some(e.loss),
            ce: Some(e.ce),
            kl: need_prime.then_some(e.kl),
            accuracy: Some(e.train_accuracy),
            ..Default::default()
        });
        log.push(MetricsRow {
            stage: "finetune".into(),
            epoch,
            split: "val".into(),
            loss: Some(e.val_loss),
            ce: Some(e.val_loss),
            accuracy: Some(e.val_accuracy),
            ..Default::default()
        });
        report.epochs.push(e);
        save(model, &format!("epoch-{epoch}"), epoch)?;
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => {
                best_params = model.params.clone();
                report.best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                report.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    model.params = best_params;
    save(model, "best", report.best_epoch)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_on_a_crafted_schedule() {
        let mut s = EarlyStopping::new(2);
        let losses = [1.0, 0.8, 0.9, 0.95, 0.5];
        let mut decisions = Vec::new();
        for (e, &l) in losses.iter().enumerate() {
            let d = s.observe(e + 1, l);
            decisions.push(d);
            if d == StopDecision::Stop {
                break;
            }
        }
        use StopDecision::*;
        assert_eq!(decisions, vec![Improved, Improved, Continue, Stop]);
        assert_eq!(s.best, Some((2, 0.8)));
    }

    #[test]
    fn translit_seed_depends_on_id_and_seed() {
        assert_eq!(translit_seed(1, "a"), translit_seed(1, "a"));
        assert_ne!(translit_seed(1, "a"), translit_seed(1, "b"));
        assert_ne!(translit_seed(1, "a"), translit_seed(2, "a"));
    }
}
