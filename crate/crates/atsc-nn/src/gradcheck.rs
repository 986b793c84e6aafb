//! Finite-difference gradient checking.
//!
//! A loss is expressed as a closure from a parameter store to a scalar. We
//! perturb one coordinate at a time and compare the central difference
//! `(f(x+h) - f(x-h)) / 2h` against the analytic gradient produced by the
//! tape. These helpers run in the f64 profile only, where the difference
//! quotient itself is accurate to ~1e-10.

use crate::params::{ParamId, ParamStore};

/// Central finite difference of `loss` along coordinate `idx` of `pid`.
///
/// The store is restored to its original values before returning. The step
/// size scales with the coordinate magnitude so both tiny and large weights
/// are probed at sensible resolution.
pub fn fd_partial<F>(store: &mut ParamStore<f64>, pid: ParamId, idx: usize, loss: &mut F) -> f64
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let orig = store.get(pid).values[idx];
    let h = 1e-5 * (1.0 + orig.abs());
    store.get_mut(pid).values[idx] = orig + h;
    let up = loss(store);
    store.get_mut(pid).values[idx] = orig - h;
    let down = loss(store);
    store.get_mut(pid).values[idx] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error between an analytic and a numeric derivative.
///
/// Uses `|a - n| / max(|a| + |n|, 1e-6)` so coordinates where both values
/// vanish compare as zero instead of 0/0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (analytic.abs() + numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks every coordinate of every parameter in the store.
///
/// `analytic` maps (param index in store order, coordinate) to the gradient
/// the tape produced; typically a closure over `store.get(pid).grad`. Returns
/// the worst relative error observed.
pub fn max_relative_error<F, G>(
    store: &mut ParamStore<f64>,
    loss: &mut F,
    analytic: &mut G,
) -> f64
where
    F: FnMut(&ParamStore<f64>) -> f64,
    G: FnMut(ParamId, usize) -> f64,
{
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for pid in ids {
        let n = store.get(pid).values.len();
        for idx in 0..n {
            let numeric = fd_partial(store, pid, idx, loss);
            let err = relative_error(analytic(pid, idx), numeric);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
