use crate::autodiff::mlp::MlpParams;

/// Parameter count above which only a deterministic subsample is checked.
pub const FULL_CHECK_LIMIT: usize = 4096;

/// Relative error with a floor on the denominator so near-zero gradients are
/// compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Fourth-order central difference from samples at `±eps` and `±2 eps`.
fn stencil(at: &mut impl FnMut(f64) -> f64, eps: f64) -> f64 {
    let (p1, m1) = (at(eps), at(-eps));
    let (p2, m2) = (at(2.0 * eps), at(-2.0 * eps));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps)
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn gradient_check<F>(mut f: F, params: &MlpParams, analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&MlpParams) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let base = params.flat();
    assert_eq!(analytic.len(), base.len(), "gradient length mismatch");
    let indices: Vec<usize> = if base.len() <= FULL_CHECK_LIMIT {
        (0..base.len()).collect()
    } else {
        let stride = base.len() / FULL_CHECK_LIMIT + 1;
        (0..base.len()).step_by(stride).collect()
    };
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut theta = base.clone();
    for i in indices {
        let mut at = |offset: f64| {
            theta[i] = base[i] + offset;
            probe.set_flat(&theta).expect("same length");
            f(&probe)
        };
        let numeric = stencil(&mut at, eps);
        theta[i] = base[i];
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Central-difference check for a function of a plain vector.
pub fn gradient_check_vec<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0);
    let mut xs = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut at = |offset: f64| {
            xs[i] = x[i] + offset;
            f(&xs)
        };
        let numeric = stencil(&mut at, eps);
        xs[i] = x[i];
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
