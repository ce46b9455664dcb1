use std::collections::BTreeMap;

use super::{Result, TrainingError};
use crate::numerics::ParamSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Linear warmup over the first `ceil(warmup_fraction · total_steps)` steps,
/// then constant (or linear decay to zero at `total_steps`).
pub fn lr_schedule(step: usize, total_steps: usize, base: f64, warmup_fraction: f64, linear_decay: bool) -> f64 {
    let w = (warmup_fraction * total_steps as f64).ceil() as usize;
    if step < w {
        return base * step as f64 / w as f64;
    }
    if linear_decay && total_steps > w {
        let left = total_steps.saturating_sub(step) as f64 / (total_steps - w) as f64;
        return base * left.clamp(0.0, 1.0);
    }
    base
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// AdamW (β1 0.9, β2 0.999) with bias correction and decoupled weight decay.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub weight_decay: f64,
    /// Completed steps.
    pub step: u64,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Default::default()
        }
    }

    /// One update of every parameter that has a gradient, at the learning rate
    /// `lr(name)`. Parameters without a gradient are left alone, decay
    /// included. Nothing changes if any gradient is non-finite.
    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: impl Fn(&str) -> f64) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.all_finite() {
                return Err(TrainingError::NonFiniteGradient(name.clone()));
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(TrainingError::Length(p.numel(), g.numel()));
            }
        }
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.numel()],
                v: vec![0.0; g.numel()],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - BETA1.powi(st.t as i32);
            let bc2 = 1.0 - BETA2.powi(st.t as i32);
            let lr = lr(name);
            let decay = 1.0 - lr * self.weight_decay;
            for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = BETA1 * *m + (1.0 - BETA1) * gi;
                *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn one(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    #[test]
    fn schedule_shape() {
        // W = ceil(0.1 * 100) = 10
        assert_eq!(lr_schedule(0, 100, 1e-3, 0.1, false), 0.0);
        assert_eq!(lr_schedule(5, 100, 1e-3, 0.1, false), 5e-4);
        assert_eq!(lr_schedule(10, 100, 1e-3, 0.1, false), 1e-3);
        assert_eq!(lr_schedule(90, 100, 1e-3, 0.1, false), 1e-3);
        assert_eq!(lr_schedule(55, 100, 1e-3, 0.1, true), 5e-4);
        assert_eq!(lr_schedule(100, 100, 1e-3, 0.1, true), 0.0);
        assert_eq!(lr_schedule(0, 100, 1e-3, 0.0, false), 1e-3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one("w", 1.0);
        let mut opt = AdamW::new(0.0);
        opt.update(&mut p, &one("w", 1.0), |_| 0.1).unwrap();
        // m̂ = v̂ = 1, so the step is 0.1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_gradients_and_decay() {
        let mut p = one("w", 2.0);
        AdamW::new(0.0).update(&mut p, &one("w", 0.0), |_| 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 2.0);
        AdamW::new(0.01).update(&mut p, &one("w", 0.0), |_| 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 2.0 * (1.0 - 0.1 * 0.01));
    }

    #[test]
    fn rejects_non_finite_without_touching_anything() {
        let mut p = one("a", 1.0);
        p.insert("b", Tensor::scalar(1.0));
        let mut g = one("a", 1.0);
        g.insert("b", Tensor::scalar(f64::NAN));
        let mut opt = AdamW::new(0.0);
        assert!(matches!(opt.update(&mut p, &g, |_| 0.1), Err(TrainingError::NonFiniteGradient(n)) if n == "b"));
        assert_eq!(p.get("a").unwrap().item(), 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn parameters_without_gradients_are_skipped() {
        let mut p = one("a", 1.0);
        p.insert("b", Tensor::scalar(1.0));
        AdamW::new(0.5).update(&mut p, &one("a", 1.0), |_| 0.1).unwrap();
        assert_eq!(p.get("b").unwrap().item(), 1.0);
        assert!(p.get("a").unwrap().item() < 1.0);
    }
}
