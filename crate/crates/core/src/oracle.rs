//! Slow, independent reference computations for checking the fast paths.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a rectifier or pooling kink.
    pub skipped: usize,
}

/// Relative error with a floor on the denominator so that vanishing
/// gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare reverse-mode gradients of `loss` against central differences
/// with step `h` for every parameter value.
pub fn check_gradients<F>(store: &ParamStore, h: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let base_sig = tape.branch_signature();
    let analytic = tape.backward(l, store)?.flatten();

    let eval = |values: &[f64]| -> Result<(f64, u64)> {
        let mut s = store.clone();
        s.assign_flat(values)?;
        let mut tape = Tape::new();
        let l = loss(&mut tape, &s)?;
        Ok((tape.value(l).data()[0], tape.branch_signature()))
    };

    let base = store.flatten();
    let mut report = GradCheck::default();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let (fp, sp) = eval(&plus)?;
        let (fm, sm) = eval(&minus)?;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic[i], numeric));
        report.checked += 1;
    }
    Ok(report)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties worth ½.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
