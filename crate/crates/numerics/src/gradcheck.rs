use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_err: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// `(name, max relative error)` per checked parameter.
    pub per_param: Vec<(String, f64)>,
    pub entries_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences for each entry of `params`. `max_entries` caps the number of
/// entries probed per parameter (evenly strided) to bound runtime.
///
/// `corrupt` multiplies the analytic gradient before comparison; pass `1.0`
/// for a real check.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    epsilon: f64,
    tol: f64,
    max_entries: Option<usize>,
    corrupt: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_params()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        per_param: Vec::new(),
        entries_checked: 0,
        tol,
    };
    for &id in params {
        let name = store.get(id).name.clone();
        let n = store.get(id).value.len();
        let stride = match max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut param_max: f64 = 0.0;
        for i in (0..n).step_by(stride) {
            let a = analytic.get(id).map_or(0.0, |g| g[i]) * corrupt;
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + epsilon;
            let fp = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - epsilon;
            let fm = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let num = (fp? - fm?) / (2.0 * epsilon);
            if !a.is_finite() || !num.is_finite() {
                return Err(NumericsError::NonFinite(format!("gradient of `{name}`[{i}]")));
            }
            let e = rel_err(a, num);
            report.entries_checked += 1;
            param_max = param_max.max(e);
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                if e >= report.max_rel_err {
                    report.worst = Some((name.clone(), i));
                    report.worst_analytic = a;
                    report.worst_numeric = num;
                }
            }
        }
        report.per_param.push((name, param_max));
    }
    Ok(report)
}
