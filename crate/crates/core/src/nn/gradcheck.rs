/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` around
/// `params` and returns the largest relative error. `params` is restored
/// before returning.
pub fn grad_check<F>(mut loss: F, params: &mut [f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "grad_check: gradient length");
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let x = params[i];
        params[i] = x + eps;
        let up = loss(params);
        params[i] = x - eps;
        let down = loss(params);
        params[i] = x;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(numeric, analytic[i]));
    }
    worst
}
