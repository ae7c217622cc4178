//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates the forward loss; it never looks at the
//! backward rules it is checking.

use super::ParamStore;
use crate::error::Result;

/// Absolute floor on the denominator of the relative error, so that
/// coordinates whose true gradient is numerically zero are compared on an
/// absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients with central differences.
///
/// `loss(stores, accumulate)` must return the scalar loss; when
/// `accumulate` is true it must also back-propagate and add the gradients
/// into each store's `grad` buffers. At most `per_param` evenly spaced
/// coordinates are probed per parameter tensor.
pub fn check<F>(stores: &mut [ParamStore], eps: f64, per_param: usize, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut [ParamStore], bool) -> Result<f64>,
{
    for s in stores.iter_mut() {
        s.zero_grad();
    }
    loss(stores, true)?;
    let analytic: Vec<Vec<Vec<f64>>> = stores
        .iter()
        .map(|s| s.iter().map(|p| p.grad.data().to_vec()).collect())
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for si in 0..stores.len() {
        let names: Vec<(String, usize, bool)> = stores[si]
            .iter()
            .map(|p| (p.name.clone(), p.value.len(), p.requires_grad))
            .collect();
        for (pi, (name, len, rg)) in names.into_iter().enumerate() {
            if !rg || len == 0 {
                continue;
            }
            let probes = per_param.min(len);
            for k in 0..probes {
                let idx = k * len / probes;
                let orig = value_at(&stores[si], pi, idx);
                set_value(&mut stores[si], pi, idx, orig + eps);
                let plus = loss(stores, false)?;
                set_value(&mut stores[si], pi, idx, orig - eps);
                let minus = loss(stores, false)?;
                set_value(&mut stores[si], pi, idx, orig);
                let numeric = (plus - minus) / (2.0 * eps);
                let err = rel_error(analytic[si][pi][idx], numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_empty() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = format!(
                        "{name}[{idx}]: analytic {} numeric {numeric}",
                        analytic[si][pi][idx]
                    );
                }
            }
        }
    }
    Ok(report)
}

fn value_at(store: &ParamStore, pi: usize, idx: usize) -> f64 {
    store.iter().nth(pi).expect("param index").value.data()[idx]
}

fn set_value(store: &mut ParamStore, pi: usize, idx: usize, v: f64) {
    store.iter_mut().nth(pi).expect("param index").value.data_mut()[idx] = v;
}
