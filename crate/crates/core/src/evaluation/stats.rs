use super::{EvalError, Result};

const SIMPSON_INTERVALS: usize = 4000;

/// Outcome of a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TTest {
    Value { t: f64, df: usize, p: f64, mean_diff: f64 },
    /// The differences have zero variance: every pair differs by `mean_diff`
    /// (zero when the inputs are identical), so no t value exists.
    Degenerate { mean_diff: f64 },
}

fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = libm::lgamma((df + 1.0) / 2.0) - libm::lgamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
///
/// Integrates the density over `[t, ∞)` with Simpson's rule after the
/// substitution `x = t/u`, which maps the tail onto `(0, 1]`.
pub fn student_t_sf(t: f64, df: usize) -> f64 {
    if t < 0.0 {
        return 1.0 - student_t_sf(-t, df);
    }
    if t == 0.0 {
        return 0.5;
    }
    let df = df as f64;
    let f = |u: f64| {
        if u == 0.0 {
            // x^-(df+1) · t/u² ~ u^(df-1): finite limit only at df = 1
            if df == 1.0 {
                1.0 / (std::f64::consts::PI * t)
            } else {
                0.0
            }
        } else {
            let x = t / u;
            t_density(x, df) * t / (u * u)
        }
    };
    let n = SIMPSON_INTERVALS;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Paired t-test on `a − b` with `n − 1` degrees of freedom and a two-sided
/// p value.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::Empty);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(TTest::Degenerate { mean_diff: mean });
    }
    let t = mean / (var / n as f64).sqrt();
    let df = n - 1;
    let p = (2.0 * student_t_sf(t.abs(), df)).min(1.0);
    Ok(TTest::Value {
        t,
        df,
        p,
        mean_diff: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(r: TTest) -> (f64, usize, f64) {
        match r {
            TTest::Value { t, df, p, .. } => (t, df, p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn textbook_fixture() {
        let (t, df, p) = value(paired_ttest(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &[0.0; 6]).unwrap());
        assert!((t - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(df, 5);
        // scipy.stats.ttest_1samp
        assert!((p - 0.075_586_818_421_612_4).abs() < 1e-6, "{p}");
    }

    #[test]
    fn tail_probabilities_match_reference() {
        // scipy.stats.t.sf
        for (t, df, want) in [
            (2.0, 3, 0.139_325_968_558_843_1 / 2.0),
            (10.0, 1, 0.063_451_034_861_107_12 / 2.0),
            (1.5, 30, 0.144_065_929_128_646_05 / 2.0),
        ] {
            assert!((student_t_sf(t, df) - want).abs() < 1e-8, "t={t} df={df}");
        }
    }

    #[test]
    fn paired_reference_and_symmetry() {
        let a = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let (t, df, p) = value(paired_ttest(&a, &b).unwrap());
        // scipy.stats.ttest_rel
        assert!((t - 1.0).abs() < 1e-12);
        assert_eq!(df, 7);
        assert!((p - 0.350_616_662_820_207_5).abs() < 1e-6);
        let (t2, _, p2) = value(paired_ttest(&b, &a).unwrap());
        assert_eq!(t2, -t);
        assert_eq!(p2, p);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let a = [1.0, 0.0, 1.0];
        assert_eq!(paired_ttest(&a, &a).unwrap(), TTest::Degenerate { mean_diff: 0.0 });
        assert_eq!(
            paired_ttest(&[1.0; 4], &[0.0; 4]).unwrap(),
            TTest::Degenerate { mean_diff: 1.0 }
        );
        assert!(paired_ttest(&[1.0], &[0.0, 1.0]).is_err());
    }
}
