//! Central finite-difference gradients, used as an oracle for the tape.

use super::{Gradients, ParamId, ParamStore};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// `(f(theta + h) - f(theta - h)) / 2h` for one scalar entry of a parameter.
pub fn central_difference<F>(store: &mut ParamStore, id: ParamId, index: usize, step: f64, mut loss: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let original = store.value(id).data()[index];
    store.get_mut(id).value.data_mut()[index] = original + step;
    let plus = loss(store);
    store.get_mut(id).value.data_mut()[index] = original - step;
    let minus = loss(store);
    store.get_mut(id).value.data_mut()[index] = original;
    (plus - minus) / (2.0 * step)
}

/// Numeric gradient for every entry of `id`.
pub fn numeric_gradient<F>(store: &mut ParamStore, id: ParamId, step: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    (0..store.value(id).len())
        .map(|i| central_difference(store, id, i, step, &mut loss))
        .collect()
}

/// Worst elementwise relative error per parameter between `analytic` and
/// central differences of `loss`, in store order.
pub fn compare_all<F>(store: &mut ParamStore, analytic: &Gradients, step: f64, mut loss: F) -> Vec<(String, f64)>
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = store.ids().collect();
    ids.into_iter()
        .map(|id| {
            let shape = store.value(id).shape().to_vec();
            let a = analytic.to_dense(id, &shape);
            let n = numeric_gradient(store, id, step, &mut loss);
            let worst = a
                .data()
                .iter()
                .zip(&n)
                .map(|(av, nv)| relative_error(*av, *nv))
                .fold(0.0, f64::max);
            (store.get(id).name.clone(), worst)
        })
        .collect()
}
