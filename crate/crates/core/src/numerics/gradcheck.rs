use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub num_params: usize,
}

/// Relative error used by the checker: `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-8)
}

/// Compares `analytic_grad` against `(f(p + h·e_k) − f(p − h·e_k)) / 2h`
/// coordinate by coordinate.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[f64],
    analytic_grad: &[f64],
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic_grad.len() {
        return Err(Error::Shape(format!(
            "{} params but {} gradient entries",
            params.len(),
            analytic_grad.len()
        )));
    }
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        num_params: params.len(),
    };
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let plus = f(&p);
        p[k] = orig - h;
        let minus = f(&p);
        p[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective not finite around coordinate {k}"
            )));
        }
        let fd = (plus - minus) / (2.0 * h);
        let rel = relative_error(fd, analytic_grad[k]);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = k;
        }
    }
    Ok(report)
}
