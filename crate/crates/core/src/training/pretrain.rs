use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_pretrain, lr_schedule, make_masks, AdamW, MaskPlan, MetricsLog, MetricsRow, PretrainConfig, Result, TrainingError};
use crate::data::batches;
use crate::model::{is_backbone, Checkpoint, Graph, Model, ModelConfig, Packed};
use crate::numerics::{ParamSet, Var};
use crate::orthography::VariantTable;
use crate::tokenization::AlignedTokens;

/// One batch's loss and its parts. For pre-training `main` is the masked-LM
/// loss and `aux` the orthographic loss; for fine-tuning they are CE and KL.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub main: f64,
    pub aux: f64,
    /// Number of log-probability terms behind `main` and `aux`.
    pub main_terms: usize,
    pub aux_terms: usize,
    pub grads: Option<ParamSet>,
}

/// Per-epoch means of the pre-training losses.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpoch {
    pub loss: f64,
    pub mlm: f64,
    pub orth: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainReport {
    pub epochs: Vec<PretrainEpoch>,
    /// Batches without a single masked position.
    pub skipped: usize,
}

/// Sum of `−ln p(target)` over the given `(row, target)` pairs.
fn masked_nll(g: &mut Graph, h: Var, picks: &[(usize, usize)]) -> Result<Option<Var>> {
    let rows: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let targets: Vec<usize> = picks.iter().map(|p| p.1).collect();
    let Some(lp) = g.mlm_log_probs(h, &rows)? else {
        return Ok(None);
    };
    let picked = g.tape.pick(lp, &targets)?;
    let s = g.tape.sum(picked);
    Ok(Some(g.tape.scale(s, -1.0)))
}

/// Batch-mean `𝓛_MLM + β·𝓛_orth` over corrupted sequences and their plans.
///
/// Returns `None` when no sequence has a masked position. Gradients cover
/// backbone tensors only.
pub fn pretrain_objective(
    cfg: &ModelConfig,
    params: &ParamSet,
    batch: &[(AlignedTokens, MaskPlan)],
    beta: f64,
    with_grads: bool,
) -> Result<Option<Objective>> {
    if batch.iter().all(|(_, p)| p.is_empty()) {
        return Ok(None);
    }
    let packed = Packed::new(batch.iter().map(|(t, _)| t), cfg.max_len);
    let mut mlm_picks = Vec::new();
    let mut orth_picks = Vec::new();
    for ((start, len), (_, plan)) in packed.seqs.iter().zip(batch) {
        for (set, picks) in [(&plan.mlm, &mut mlm_picks), (&plan.orth, &mut orth_picks)] {
            for &i in set.iter().filter(|&&i| i < *len) {
                picks.push((start + i, plan.targets[&i]));
            }
        }
    }
    let mut g = Graph::new(cfg, params, is_backbone);
    let h = g.forward(&packed)?;
    let inv_b = 1.0 / batch.len() as f64;
    let mlm = masked_nll(&mut g, h, &mlm_picks)?.map(|v| g.tape.scale(v, inv_b));
    let orth = masked_nll(&mut g, h, &orth_picks)?.map(|v| g.tape.scale(v, inv_b));
    let val = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let (mlm_v, orth_v) = (val(&g, mlm), val(&g, orth));
    let total = match (mlm, orth) {
        (Some(m), Some(o)) if beta != 0.0 => {
            let w = g.tape.scale(o, beta);
            Some(g.tape.add(m, w)?)
        }
        (Some(m), _) => Some(m),
        (None, Some(o)) if beta != 0.0 => Some(g.tape.scale(o, beta)),
        _ => None,
    };
    let grads = match (with_grads, total) {
        (true, Some(t)) => Some(g.gradients(t)?),
        (true, None) => Some(ParamSet::new()),
        _ => None,
    };
    Ok(Some(Objective {
        loss: loss_pretrain(mlm_v, orth_v, beta),
        main: mlm_v,
        aux: orth_v,
        main_terms: mlm_picks.len(),
        aux_terms: orth_picks.len(),
        grads,
    }))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5851_F42D_4C95_7F2D_u64.wrapping_mul(epoch as u64 + 1)))
}

/// Masked-LM pre-training of the backbone on normalized texts.
///
/// Each epoch shuffles the corpus, masks every sequence afresh and takes one
/// AdamW step per batch. With `checkpoints` set, the model is saved to
/// `epoch-<k>` after every epoch (`epoch-0` when there are no epochs).
pub fn pretrain(
    model: &mut Model,
    texts: &[String],
    cfg: &PretrainConfig,
    table: &VariantTable,
    log: &mut MetricsLog,
    checkpoints: Option<&Path>,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    let seqs: Vec<AlignedTokens> = texts.iter().map(|t| model.encode(t)).collect();
    let steps_per_epoch = texts.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut report = PretrainReport::default();
    let save = |model: &Model, epoch: usize| -> Result<()> {
        if let Some(dir) = checkpoints {
            let mut ck = Checkpoint::new(model.clone());
            ck.meta.insert("stage".into(), "pretrain".into());
            ck.meta.insert("epoch".into(), epoch.to_string());
            for (k, v) in cfg.to_pairs() {
                ck.meta.insert(format!("pretrain.{k}"), v);
            }
            ck.save(&dir.join(format!("epoch-{epoch}")))?;
        }
        Ok(())
    };
    if cfg.epochs == 0 {
        save(model, 0)?;
    }
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let (mut sum, mut sum_mlm, mut sum_orth, mut weight, mut steps) = (0.0, 0.0, 0.0, 0usize, 0);
        for idx in batches(seqs.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch: Vec<(AlignedTokens, MaskPlan)> = idx
                .iter()
                .map(|&i| make_masks(&seqs[i], cfg.mask_rate, table, &mut rng))
                .collect();
            step += 1;
            let Some(obj) = pretrain_objective(&model.config, &model.params, &batch, cfg.beta, true)? else {
                report.skipped += 1;
                continue;
            };
            let lr = lr_schedule(step, total, cfg.lr, cfg.warmup_fraction, cfg.linear_decay);
            opt.update(&mut model.params, obj.grads.as_ref().expect("requested"), |_| lr)?;
            let b = batch.len();
            sum += obj.loss * b as f64;
            sum_mlm += obj.main * b as f64;
            sum_orth += obj.aux * b as f64;
            weight += b;
            steps += 1;
        }
        let w = weight.max(1) as f64;
        let e = PretrainEpoch {
            loss: sum / w,
            mlm: sum_mlm / w,
            orth: sum_orth / w,
            steps,
        };
        log.push(MetricsRow {
            stage: "pretrain".into(),
            epoch,
            split: "train".into(),
            loss: Some(e.loss),
            mlm: Some(e.mlm),
            orth: Some(e.orth),
            ..Default::default()
        });
        report.epochs.push(e);
        save(model, epoch)?;
    }
    Ok(report)
}
