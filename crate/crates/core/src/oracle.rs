//! Independent reference computations used by the self-check suite and tests.
//! Nothing here shares code with the implementations it is compared against.

/// KL(p ‖ q) for 1-D Laplace laws by composite Simpson quadrature of
/// ∫ p ln(p/q). The domain `mu_p ± 60·b_p` is split at both locations so each
/// panel integrates a smooth function.
pub fn laplace_kl_by_quadrature(p: (f64, f64), q: (f64, f64)) -> f64 {
    let (m1, b1) = p;
    let (m2, b2) = q;
    let log_ratio = |x: f64| (b2 / b1).ln() - (x - m1).abs() / b1 + (x - m2).abs() / b2;
    let integrand = |x: f64| {
        let dens = (-(x - m1).abs() / b1).exp() / (2.0 * b1);
        dens * log_ratio(x)
    };
    let lo = m1 - 60.0 * b1;
    let hi = m1 + 60.0 * b1;
    let mut cuts = vec![lo, hi, m1];
    if m2 > lo && m2 < hi {
        cuts.push(m2);
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    let h_target = b1 * 2e-3;
    cuts.windows(2)
        .map(|w| simpson(&integrand, w[0], w[1], h_target))
        .sum()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, h_target: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut n = ((b - a) / h_target).ceil() as usize;
    n += n % 2;
    let n = n.max(2);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Central differences at steps `eps` and `eps / 2` combined by one
/// Richardson step, cancelling the second-order truncation term.
pub fn richardson_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let coarse = central_difference(f, x, eps);
    let fine = central_difference(f, x, 0.5 * eps);
    coarse.iter().zip(&fine).map(|(c, h)| (4.0 * h - c) / 3.0).collect()
}

/// Relative error used by the gradient checks: |a − n| / max(1e-8, |a| + |n|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_reproduces_known_values() {
        assert!(laplace_kl_by_quadrature((0.0, 1.0), (0.0, 1.0)).abs() < 1e-12);
        let v = laplace_kl_by_quadrature((0.0, 1.0), (1.0, 1.0));
        assert!((v - (-1.0f64).exp()).abs() < 1e-10, "{v}");
        let v = laplace_kl_by_quadrature((0.0, 1.0), (0.0, 2.0));
        assert!((v - (std::f64::consts::LN_2 - 0.5)).abs() < 1e-10, "{v}");
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&mut |x: &[f64]| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn richardson_cancels_the_cubic_term() {
        let x = [0.7];
        let plain = central_difference(&mut |x: &[f64]| x[0].powi(3), &x, 1e-2)[0];
        let rich = richardson_difference(&mut |x: &[f64]| x[0].powi(3), &x, 1e-2)[0];
        let exact = 3.0 * 0.49;
        assert!((plain - exact).abs() > 1e-5);
        assert!((rich - exact).abs() < 1e-12, "{rich}");
    }
}
