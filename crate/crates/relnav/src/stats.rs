//! Small statistics utilities: sample quantiles and the chi-square
//! distribution (CDF and quantile) used by the consistency checks.

/// Linear-interpolation sample quantile (`q` in [0, 1]) of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Sorts a copy of `values` and returns the requested quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile"));
    quantile_sorted(&v, q)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// ln Gamma via the Lanczos approximation (g = 7, 9 coefficients).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    let mut sum = 0.999_999_999_999_809_9;
    for (i, c) in COEF.iter().enumerate() {
        sum += c / (x + i as f64);
    }
    let t = x + 6.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + sum.ln()
}

/// Regularized lower incomplete gamma P(a, x): series for x < a + 1,
/// Lentz continued fraction for the complement otherwise.
fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    let ln_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series representation
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (ln_prefactor.exp() * sum).min(1.0)
    } else {
        // continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (ln_prefactor.exp() * h).min(1.0)
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u32, x: f64) -> f64 {
    assert!(dof > 0);
    regularized_gamma_p(dof as f64 / 2.0, x.max(0.0) / 2.0)
}

/// Chi-square quantile by bisection on the CDF.
pub fn chi2_quantile(dof: u32, p: f64) -> f64 {
    assert!(dof > 0);
    assert!((0.0..1.0).contains(&p) && p > 0.0, "p must be in (0, 1)");
    let mut lo = 0.0;
    let mut hi = dof as f64;
    while chi2_cdf(dof, hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Closed-form chi-square CDF for even dof:
    /// 1 - exp(-x/2) * sum_{k<dof/2} (x/2)^k / k!
    fn chi2_cdf_even_oracle(dof: u32, x: f64) -> f64 {
        assert!(dof.is_multiple_of(2));
        let half = x / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..(dof / 2) {
            term *= half / k as f64;
            sum += term;
        }
        1.0 - (-half).exp() * sum
    }

    #[test]
    fn cdf_matches_even_dof_closed_form() {
        for &dof in &[2u32, 4, 6, 10, 450] {
            for i in 1..60 {
                let x = dof as f64 * i as f64 / 20.0;
                let got = chi2_cdf(dof, x);
                let want = chi2_cdf_even_oracle(dof, x);
                assert!(
                    (got - want).abs() < 1e-12,
                    "dof {dof} x {x}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &dof in &[1u32, 6, 9, 450] {
            for &p in &[0.025, 0.5, 0.975, 0.999] {
                let x = chi2_quantile(dof, p);
                assert_relative_eq!(chi2_cdf(dof, x), p, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn known_quantiles() {
        // Solved from the even-dof closed form by Newton iteration.
        assert_relative_eq!(chi2_quantile(6, 0.999), 22.457744484825323, epsilon = 1e-9);
        // Mean of chi-square is dof; median slightly below.
        assert!(chi2_quantile(9, 0.5) < 9.0);
        let lo = chi2_quantile(450, 0.025);
        let hi = chi2_quantile(450, 0.975);
        assert!(lo > 390.0 && lo < 395.0, "lo = {lo}");
        assert!(hi > 507.0 && hi < 512.0, "hi = {hi}");
    }

    #[test]
    fn quantiles_of_samples() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_relative_eq!(quantile(&v, 0.25), 2.0);
    }
}
