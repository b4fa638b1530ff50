/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Entries whose gradients are both below this magnitude are compared on an
/// absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare the gradient returned by `loss` at `params` against central
/// finite differences `(f(p + eps) − f(p − eps)) / 2eps` for every entry.
///
/// `loss` must be deterministic: any sampling noise has to be frozen by the
/// caller. The relative error of entry `i` is
/// `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(loss: F, params: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_at(loss, params, eps, &all)
}

/// [`grad_check`] restricted to the entries listed in `indices`.
pub fn grad_check_at<F>(mut loss: F, params: &[f64], eps: f64, indices: &[usize]) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
    };
    for &i in indices {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p).0;
        p[i] = orig - eps;
        let down = loss(&p).0;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
