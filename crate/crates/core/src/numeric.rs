//! Small numerical kernels shared by the samplers and the risk evaluator.

/// Adaptive Simpson quadrature of `f` over `[a, b]` with relative tolerance `rel_tol`.
///
/// The tolerance is applied against the magnitude of the running estimate, with an
/// absolute floor of `rel_tol * 1e-3` so that integrals near zero terminate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = (rel_tol * whole.abs()).max(rel_tol * 1e-3);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (m - a) <= f64::EPSILON * m.abs() {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Composite Simpson rule over equispaced samples `values` covering `[a, b]`.
///
/// `values.len()` must be odd and at least 3; the caller checks this.
pub fn composite_simpson(values: &[f64], a: f64, b: f64) -> f64 {
    let intervals = values.len() - 1;
    debug_assert!(intervals >= 2 && intervals.is_multiple_of(2));
    let h = (b - a) / intervals as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, v) in values.iter().enumerate().take(intervals).skip(1) {
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (values[0] + 4.0 * odd + 2.0 * even + values[intervals])
}

/// Bisection on a non-decreasing function: returns `x` in `[lo, hi]` with `g(x) ≈ 0`,
/// assuming `g(lo) <= 0 <= g(hi)`. Stops when the bracket is below `rel_tol` relative
/// width.
pub fn bisect_increasing<G: FnMut(f64) -> f64>(mut g: G, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= rel_tol * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_simpson_polynomial_and_exp() {
        let v = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x, 0.0, 3.0, 1e-12);
        assert!((v - (81.0 / 4.0 - 9.0)).abs() < 1e-10);
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
        assert_eq!(adaptive_simpson(&|x: f64| x, 2.0, 2.0, 1e-10), 0.0);
    }

    #[test]
    fn composite_simpson_is_exact_on_cubics() {
        let n = 9;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let x = 1.0 + 2.0 * i as f64 / (n - 1) as f64;
                x * x * x
            })
            .collect();
        let v = composite_simpson(&vals, 1.0, 3.0);
        assert!((v - 20.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect_increasing(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn slope_of_line() {
        let s = ols_slope(&[1.0, 2.0, 3.0], &[3.0, 1.0, -1.0]);
        assert!((s + 2.0).abs() < 1e-15);
    }
}
