//! Central finite-difference checks against tape gradients.
//!
//! Errors are relative, `|a - n| / max(|a|, |n|, 1e-3)`, so entries with
//! tiny gradients are compared absolutely.

use ndarray::Array2;

use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};

/// Step used by every check here.
pub const STEP: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Worst error over every entry of every input of `f`.
pub fn max_rel_error(inputs: &[Array2<f64>], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Array2<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vars);
        t.scalar_value(l)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let l = f(&mut t, &vars);
    let g = t.backward(l).expect("finite loss");

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = g.get(vars[i]).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = inputs.to_vec();
            plus[i][[r, c]] += STEP;
            let mut minus = inputs.to_vec();
            minus[i][[r, c]] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[[r, c]], numeric));
        }
    }
    worst
}

/// Worst error over the first `per_param` entries of each parameter (all
/// entries when `None`), given precomputed analytic `grads`.
pub fn param_error(
    store: &ParamStore,
    grads: &[Array2<f64>],
    per_param: Option<usize>,
    f: impl Fn(&ParamStore) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.get(id).len();
        let cols = store.get(id).ncols();
        for idx in 0..per_param.map_or(n, |k| k.min(n)) {
            let (r, c) = (idx / cols, idx % cols);
            let mut plus = store.clone();
            plus.get_mut(id)[[r, c]] += STEP;
            let mut minus = store.clone();
            minus.get_mut(id)[[r, c]] -= STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(grads[id.index()][[r, c]], numeric));
        }
    }
    worst
}

/// Parameter check for a loss built directly from bound parameters.
pub fn max_rel_error_params(store: &ParamStore, f: impl Fn(&mut Tape, &Bound) -> Var) -> f64 {
    let mut t = Tape::new();
    let b = store.bind(&mut t, true);
    let l = f(&mut t, &b);
    let g = t.backward(l).expect("finite loss");
    let grads = store.collect_grads(&b, &g);
    param_error(store, &grads, None, |s| {
        let mut t = Tape::new();
        let b = s.bind(&mut t, false);
        let l = f(&mut t, &b);
        t.scalar_value(l)
    })
}
