use super::Params;
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
    pub max_relative_error: f64,
    /// Entry attaining the maximum, as `name[index]`.
    pub worst_entry: Option<String>,
    pub entries_checked: usize,
}

/// Compares analytic gradients against central finite differences
/// (`h = 1e-5`) over every parameter entry.
///
/// `analytic` must list the same parameters as `model`; `loss` is evaluated
/// on perturbed copies of `model`.
pub fn gradient_check<M, L>(model: &M, analytic: &impl Params, loss: L) -> Result<GradCheckReport>
where
    M: Params + Clone,
    L: Fn(&M) -> Result<f64>,
{
    gradient_check_filtered(model, analytic, loss, |_| true)
}

/// As [`gradient_check`], restricted to parameters whose name passes `include`.
pub fn gradient_check_filtered<M, L, F>(model: &M, analytic: &impl Params, loss: L, include: F) -> Result<GradCheckReport>
where
    M: Params + Clone,
    L: Fn(&M) -> Result<f64>,
    F: Fn(&str) -> bool,
{
    let grads = analytic.params();
    let shapes: Vec<(String, usize)> = model.params().iter().map(|(n, m)| (n.clone(), m.len())).collect();
    if shapes.len() != grads.len() {
        return Err(Error::invalid("gradient listing does not match the model"));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_entry: None,
        entries_checked: 0,
    };
    let mut probe = model.clone();
    for (idx, ((name, len), (gname, g))) in shapes.iter().zip(&grads).enumerate() {
        if name != gname || *len != g.len() {
            return Err(Error::invalid(format!("gradient `{gname}` does not match parameter `{name}`")));
        }
        if !include(name) {
            continue;
        }
        for k in 0..*len {
            let original = probe.params()[idx].1.data()[k];
            probe.params_mut()[idx].1.data_mut()[k] = original + STEP;
            let up = loss(&probe)?;
            probe.params_mut()[idx].1.data_mut()[k] = original - STEP;
            let down = loss(&probe)?;
            probe.params_mut()[idx].1.data_mut()[k] = original;

            let numeric = (up - down) / (2.0 * STEP);
            let a = g.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.entries_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_entry = Some(format!("{name}[{k}]"));
            }
        }
    }
    Ok(report)
}
