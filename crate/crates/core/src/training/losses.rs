use super::{Result, TrainingError};

/// Floor applied to probabilities before taking logs in [`loss_kl`].
pub const KL_CLAMP: f64 = 1e-12;

/// `𝓛_MLM + β·𝓛_orth`.
pub fn loss_pretrain(mlm: f64, orth: f64, beta: f64) -> f64 {
    mlm + beta * orth
}

/// `𝓛_CE + γ·𝓛_KL`.
pub fn loss_finetune(ce: f64, kl: f64, gamma: f64) -> f64 {
    ce + gamma * kl
}

/// `−ln ŷ[y]`.
pub fn loss_ce(probs: &[f64], y: usize) -> Result<f64> {
    match probs.get(y) {
        Some(&p) => Ok(-p.max(KL_CLAMP).ln()),
        None => Err(TrainingError::Length(y, probs.len())),
    }
}

/// `Σ_c ŷ_c ln(ŷ_c / ŷ′_c)` with `ŷ` as the reference distribution.
pub fn loss_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(TrainingError::Length(p.len(), q.len()));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(KL_CLAMP), b.max(KL_CLAMP));
            a * (a.ln() - b.ln())
        })
        .sum())
}
