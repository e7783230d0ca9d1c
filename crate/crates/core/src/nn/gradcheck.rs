/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink there.
    pub skipped: usize,
}

/// Checks the gradient returned by `f` at `point` coordinate by coordinate.
///
/// Relative error is |a - n| / max(1e-8, |a| + |n|). A coordinate whose
/// one-sided slopes disagree is treated as a kink and not counted.
pub fn grad_check<F>(mut f: F, point: &[f64], eps: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (f0, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let mut max_rel_error = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x).0;
        x[i] = orig - eps;
        let fm = f(&x).0;
        x[i] = orig;
        let fwd = (fp - f0) / eps;
        let bwd = (f0 - fm) / eps;
        if (fwd - bwd).abs() > 1e-3f64.max(1e-2 * (fwd.abs() + bwd.abs())) {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1e-8f64.max(a.abs() + numeric.abs());
        max_rel_error = max_rel_error.max(rel);
        checked += 1;
    }
    GradCheck {
        max_rel_error,
        checked,
        skipped,
    }
}
