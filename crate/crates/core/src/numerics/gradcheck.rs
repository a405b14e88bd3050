use serde::Serialize;

use super::{forward_backward, Matrix, ParamStore, Tape, Var};
use crate::error::Result;

/// Per-parameter outcome of a finite-difference comparison.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over the entries.
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    /// Flat indices whose error exceeds the tolerance or is not finite.
    pub failed: Vec<usize>,
}

impl ParamCheck {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(ParamCheck::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Gradients of `build`'s loss for every parameter, via the tape.
pub fn analytic_gradients<F>(build: &F, store: &ParamStore) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    forward_backward(&mut work, |t, s| build(t, s))?;
    Ok(work.iter().map(|p| p.gradient()).collect())
}

fn loss_at<F>(build: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    Ok(tape.scalar(loss))
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every parameter entry.
/// A forward pass that fails (for instance by diverging) yields NaN for that
/// entry instead of aborting the sweep.
pub fn numeric_gradients<F>(build: &F, store: &ParamStore, step: f64) -> Vec<Matrix>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    ids.into_iter()
        .map(|id| {
            let (r, c) = store.value(id).shape();
            let mut g = Matrix::zeros(r, c);
            for k in 0..r * c {
                let orig = store.value(id).as_slice()[k];
                work.get_mut(id).value.as_mut_slice()[k] = orig + step;
                let plus = loss_at(build, &work).unwrap_or(f64::NAN);
                work.get_mut(id).value.as_mut_slice()[k] = orig - step;
                let minus = loss_at(build, &work).unwrap_or(f64::NAN);
                work.get_mut(id).value.as_mut_slice()[k] = orig;
                g.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
            }
            g
        })
        .collect()
}

/// Compares two gradient sets entry by entry.
pub fn compare_gradients(
    store: &ParamStore,
    analytic: &[Matrix],
    numeric: &[Matrix],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let params = store
        .iter()
        .zip(analytic.iter().zip(numeric))
        .map(|(p, (a, n))| {
            let mut check = ParamCheck {
                name: p.name.clone(),
                entries: a.len(),
                max_rel_error: 0.0,
                worst_index: 0,
                failed: Vec::new(),
            };
            for (k, (&av, &nv)) in a.as_slice().iter().zip(n.as_slice()).enumerate() {
                let err = (av - nv).abs() / nv.abs().max(1.0);
                if !err.is_finite() {
                    check.max_rel_error = f64::INFINITY;
                    check.worst_index = k;
                    check.failed.push(k);
                    continue;
                }
                if err > check.max_rel_error {
                    check.max_rel_error = err;
                    check.worst_index = k;
                }
                if err > tolerance {
                    check.failed.push(k);
                }
            }
            check
        })
        .collect();
    GradCheckReport {
        step,
        tolerance,
        params,
    }
}

/// Finite-difference check of every parameter gradient of `build`.
///
/// `build` must be a pure function of the parameter values: any randomness
/// inside it has to be re-seeded identically on every call.
pub fn grad_check<F>(build: F, store: &ParamStore, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let analytic = analytic_gradients(&build, store)?;
    let numeric = numeric_gradients(&build, store, step);
    Ok(compare_gradients(store, &analytic, &numeric, step, tolerance))
}
