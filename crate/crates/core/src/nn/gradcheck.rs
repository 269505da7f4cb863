//! Central finite-difference check of tape gradients (64-bit).

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;

/// Elements checked per tensor; larger tensors are sampled with the given rng.
pub const SAMPLE_LIMIT: usize = 64;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    /// Analytic and numeric gradient at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Denominator floor for [`relative_error`]. A 64-bit central difference
/// at ε = 1e-5 carries about 1e-11 of absolute roundoff, so relative error
/// on gradients much smaller than this is noise.
pub const NOISE_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, NOISE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(NOISE_FLOOR)
}

/// Compares the tape gradient of every trainable tensor in `store` against
/// `(L(p + ε) − L(p − ε)) / 2ε`. `loss` must rebuild the forward pass from
/// the store on every call.
pub fn grad_check<F>(store: &mut ParamStore<f64>, rng: &mut Rng, eps: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore<f64>) -> Result<(Tape<f64>, Var)>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (tape, l) = loss(store)?;
    let grads = tape.backward(l)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params()
        .filter(|(n, _)| store.is_trainable(n))
        .map(|(n, g)| (n.to_string(), g.data().to_vec()))
        .collect();
    drop(tape);

    let mut eval = |store: &mut ParamStore<f64>| -> Result<f64> {
        let (t, v) = loss(store)?;
        Ok(t.value(v).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (name, g) in analytic {
        let indices: Vec<usize> = if g.len() <= SAMPLE_LIMIT {
            (0..g.len()).collect()
        } else {
            let mut all: Vec<usize> = (0..g.len()).collect();
            rng.shuffle(&mut all);
            all.truncate(SAMPLE_LIMIT);
            all.sort_unstable();
            all
        };
        for i in indices {
            let orig = store.get(&name)?.data()[i];
            store.get_mut(&name)?.data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(&name)?.data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(g[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
                report.worst_values = (g[i], numeric);
            }
        }
    }
    Ok(report)
}
