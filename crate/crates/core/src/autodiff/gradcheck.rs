//! Central finite differences, used to cross-check reverse-mode gradients.

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`. `x` is restored before returning.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, step: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + step;
    let plus = f(x);
    x[i] = orig - step;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * step)
}

/// `|a − b| / max(|a|, |b|)`, with the denominator floored at `1e-8`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
