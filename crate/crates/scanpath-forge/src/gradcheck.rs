//! Central finite-difference gradient checking.
//!
//! This is the independent oracle for every differentiable operation in the
//! crate: it only evaluates the forward function, never the tape's backward
//! pass, so agreement between the two is meaningful evidence.

/// Worst disagreement between an analytic and a numeric gradient.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Central-difference gradient of a scalar function at `x`.
pub fn central_diff_gradient<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + step;
        let plus = f(&point);
        point[i] = orig - step;
        let minus = f(&point);
        point[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Relative error `|a - n| / max(|a|, |n|, 1)`, elementwise maximum.
///
/// The floor of one in the denominator turns the comparison into an absolute
/// one for gradients below unit scale, which is the conventional behavior
/// for loss-scale checks in double precision.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = n;
        }
    }
    report
}

/// Convenience wrapper: numeric gradient of `f` at `x` against the provided
/// analytic gradient.
pub fn check_gradient<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_diff_gradient(f, x, step);
    compare_gradients(analytic, &numeric)
}
