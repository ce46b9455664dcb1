use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, ParamSet, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares `analytic` gradients with central differences of `f` at `params`.
///
/// Half of the `samples` coordinates are drawn uniformly over all parameters;
/// the other half from coordinates with a nonzero analytic gradient, so sparse
/// gradients (embedding rows, routed heads) are actually exercised. Each
/// coordinate's error is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(
    mut f: F,
    params: &ParamSet,
    analytic: &ParamSet,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::InvalidStep(eps));
    }
    let mut all = Vec::new();
    let mut nonzero = Vec::new();
    for (name, t) in params.iter() {
        let g = analytic.get(name)?;
        for i in 0..t.numel() {
            all.push((name.clone(), i));
            if g.data()[i] != 0.0 {
                nonzero.push((name.clone(), i));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<(String, usize)> = Vec::with_capacity(samples);
    let from_nonzero = if nonzero.is_empty() { 0 } else { samples / 2 };
    nonzero.shuffle(&mut rng);
    coords.extend(nonzero.into_iter().take(from_nonzero));
    while coords.len() < samples && !all.is_empty() {
        coords.push(all[rng.gen_range(0..all.len())].clone());
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for (name, i) in coords {
        let orig = params.get(&name)?.data()[i];
        work.get_mut(&name)?.data_mut()[i] = orig + eps;
        let plus = f(&work)?;
        work.get_mut(&name)?.data_mut()[i] = orig - eps;
        let minus = f(&work)?;
        work.get_mut(&name)?.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFinite(format!("objective near {name}[{i}]")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(&name)?.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        report.coords_checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name, i));
        }
    }
    Ok(report)
}
