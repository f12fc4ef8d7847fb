//! Central finite-difference check of analytic gradients.

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Components whose magnitudes are both below this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `f` at `x` against central differences over every
/// coordinate. `f` returns `(value, gradient)`; only the value is used at perturbed points.
///
/// The relative error of one coordinate is `|g - fd| / max(|g|, |fd|, GRAD_FLOOR)`.
pub fn grad_check<F>(f: F, x: &[f64]) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length does not match parameters");
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: x.len(),
    };
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + FD_STEP;
        let up = f(&probe).0;
        probe[k] = orig - FD_STEP;
        let down = f(&probe).0;
        probe[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[k], fd);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst_index = Some(k);
        }
    }
    report
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(GRAD_FLOOR);
    (a - b).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_cubic() {
        let f = |x: &[f64]| {
            let v = x.iter().map(|a| a * a * a).sum();
            (v, x.iter().map(|a| 3.0 * a * a).collect())
        };
        let r = grad_check(f, &[0.5, -1.2, 2.0]);
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| (x[0] * x[0], vec![x[0]]);
        assert!(grad_check(f, &[1.0]).max_rel_error > 0.4);
    }

    #[test]
    fn constant_function_is_zero_error() {
        let f = |x: &[f64]| (4.0, vec![0.0; x.len()]);
        assert_eq!(grad_check(f, &[1.0, 2.0]).max_rel_error, 0.0);
    }
}
