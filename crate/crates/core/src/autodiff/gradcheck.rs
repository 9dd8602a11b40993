use super::AutodiffError;
use crate::Scalar;

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_difference_gradient<S, F>(mut f: F, params: &[S], step: S) -> Result<Vec<S>, AutodiffError>
where
    S: Scalar,
    F: FnMut(&[S]) -> S,
{
    if !(step > S::zero()) || !step.is_finite() {
        return Err(AutodiffError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut x = params.to_vec();
    let two = S::lit(2.0);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        for v in [up, down] {
            if !v.is_finite() {
                return Err(AutodiffError::NonFinite {
                    coordinate: i,
                    value: v.to_f64_lossy(),
                });
            }
        }
        out.push((up - down) / (two * step));
    }
    Ok(out)
}

/// Worst-case agreement between an analytic and a numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradComparison {
    pub max_abs_error: f64,
    /// Largest `|a - n| / max(|a|, |n|)` over coordinates whose magnitude
    /// exceeds the absolute floor.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub passed: bool,
}

/// A coordinate passes when `|a - n| <= max(rtol * max(|a|, |n|), atol)`.
pub fn compare_gradients<S: Scalar>(analytic: &[S], numeric: &[S], rtol: f64, atol: f64) -> GradComparison {
    let mut cmp = GradComparison {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_index: None,
        passed: analytic.len() == numeric.len(),
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let (a, n) = (a.to_f64_lossy(), n.to_f64_lossy());
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale <= atol && abs <= atol { 0.0 } else { abs / scale.max(f64::MIN_POSITIVE) };
        if abs > cmp.max_abs_error || abs.is_nan() {
            cmp.max_abs_error = abs;
        }
        if rel > cmp.max_rel_error || rel.is_nan() {
            cmp.max_rel_error = rel;
            cmp.worst_index = Some(i);
        }
        if !(abs <= (rtol * scale).max(atol)) {
            cmp.passed = false;
        }
    }
    cmp
}
