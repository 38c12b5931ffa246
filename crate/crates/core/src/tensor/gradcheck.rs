use super::{Graph, ParamSet, Var};
use crate::error::Result;

/// Denominator floor of the relative error, so that gradients that are zero
/// up to round-off do not blow up the ratio.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    /// Set when the loss could not be evaluated or was non-finite.
    pub numerical_error: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.numerical_error.is_none() && self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error > self.tolerance)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval<F>(params: &ParamSet, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let l = loss_fn(&mut g)?;
    Ok(g.scalar(l))
}

/// Compares reverse-mode gradients of `loss_fn` with central differences of
/// step `step` on every parameter entry.
pub fn finite_diff_check<F>(params: &ParamSet, loss_fn: F, step: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let outcome = loss_fn(&mut g).and_then(|l| {
            let v = g.scalar(l);
            if !v.is_finite() {
                return Ok(Err(format!("loss is {v}")));
            }
            g.backward(l).map(Ok)
        });
        match outcome {
            Ok(Ok(grads)) => grads,
            Ok(Err(msg)) => return failed(tolerance, msg),
            Err(e) => return failed(tolerance, e.to_string()),
        }
    };
    compare_gradients(params, &analytic, loss_fn, step, tolerance)
}

/// Like [`finite_diff_check`] but against caller-supplied analytic gradients.
pub fn compare_gradients<F>(
    params: &ParamSet,
    analytic: &[Option<Vec<f64>>],
    loss_fn: F,
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut work = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..params.value(id).len() {
            let orig = params.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(&work, &loss_fn);
            work.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(&work, &loss_fn);
            work.value_mut(id).data_mut()[k] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                (Err(e), _) | (_, Err(e)) => return failed(tolerance, e.to_string()),
                (Ok(p), Ok(m)) => {
                    return failed(
                        tolerance,
                        format!("non-finite loss perturbing {}[{k}]: {p}, {m}", check.name),
                    )
                }
            };
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id.index()).and_then(|g| g.as_ref()).map_or(0.0, |g| g[k]);
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || k == 0 {
                check.max_rel_error = err;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }
    GradCheckReport {
        params: checks,
        tolerance,
        numerical_error: None,
    }
}

fn failed(tolerance: f64, msg: String) -> GradCheckReport {
    GradCheckReport {
        params: Vec::new(),
        tolerance,
        numerical_error: Some(msg),
    }
}
