use crate::error::{Error, Result};

/// Result of a finite-difference sweep over a parameter vector.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `loss` at
/// `params` and returns the worst relative error,
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// The closure must be deterministic: any stochastic choices (Gumbel noise,
/// detached labels) have to be frozen before calling. Two evaluations at the
/// base point are compared bitwise to detect unfrozen noise.
pub fn finite_diff_check(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport> {
    finite_diff_check_with_floor(loss, params, analytic, eps, 1e-12)
}

/// [`finite_diff_check`] with a custom denominator floor. Central
/// differences at double precision carry an absolute noise of roughly
/// `ulp(loss) / eps`; a floor above that keeps near-zero gradients from
/// drowning the report in quantization noise while real errors on them
/// still register.
pub fn finite_diff_check_with_floor(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    denom_floor: f64,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} params vs {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidConfig("step must be positive".into()));
    }
    let base_a = loss(params);
    let base_b = loss(params);
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::NonDeterministicClosure(base_a, base_b));
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = loss(&work);
        work[i] = orig - eps;
        let minus = loss(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(denom_floor);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
