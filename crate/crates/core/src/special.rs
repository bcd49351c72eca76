//! Regularized confluent hypergeometric function and positive-term series.

use crate::error::{Error, Result};

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Tail of Stirling's series: ln Γ(z) − [(z − ½) ln z − z + ½ ln 2π].
fn stirling_correction(z: f64) -> f64 {
    let z2 = z * z;
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z
}

/// ln Γ(y + α) − ln Γ(y) for `y > 0`, `y + α > 0`, without the cancellation of
/// two large log-gammas.
pub fn ln_gamma_ratio(y: f64, alpha: f64) -> f64 {
    if y < 30.0 || y + alpha < 30.0 {
        return ln_gamma(y + alpha) - ln_gamma(y);
    }
    let z = y + alpha;
    (y - 0.5) * (alpha / y).ln_1p() + alpha * z.ln() - alpha + stirling_correction(z) - stirling_correction(y)
}

/// ln of the Poisson probability `e^{−m} m^k / k!`.
pub fn ln_poisson_pmf(k: usize, m: f64) -> f64 {
    if m == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if k < 30 {
        let kf = k as f64;
        return kf * m.ln() - m - ln_gamma(kf + 1.0);
    }
    // k ln(m/k) − (m − k) − ½ ln(2πk) − stirling(k), with the first two
    // combined as k (ln(1 + δ) − δ), δ = (m − k)/k.
    let kf = k as f64;
    let delta = (m - kf) / kf;
    kf * (delta.ln_1p() - delta) - 0.5 * (std::f64::consts::TAU * kf).ln() - stirling_correction(kf)
}

/// Sums a series of positive terms `t_k`, `k ≥ 0`, given the log of the term
/// at `k` and the ratio `t_{k+1}/t_k`. Summation starts at the largest term and
/// walks outwards, so long series with a distant mode stay accurate.
/// Returns `(ln t_mode, Σ t_k / t_mode)`.
pub fn sum_positive_series<L, R>(ln_term: L, ratio: R, mode: usize) -> Result<(f64, f64)>
where
    L: Fn(usize) -> f64,
    R: Fn(usize) -> f64,
{
    const REL: f64 = 1e-17;
    const MAX_TERMS: usize = 50_000_000;
    let ln_mode = ln_term(mode);
    if !ln_mode.is_finite() {
        return Err(Error::Numeric(format!("series term at k = {mode} is not finite")));
    }
    let mut sum = 1.0;
    let mut t = 1.0;
    let mut k = mode;
    let mut n = 0usize;
    loop {
        t *= ratio(k);
        k += 1;
        sum += t;
        n += 1;
        if t < REL * sum && ratio(k) < 1.0 {
            break;
        }
        if n > MAX_TERMS || !t.is_finite() {
            return Err(Error::Numeric("positive series failed to converge".into()));
        }
    }
    let mut t = 1.0;
    let mut k = mode;
    while k > 0 {
        t /= ratio(k - 1);
        k -= 1;
        sum += t;
        if t < REL * sum {
            break;
        }
    }
    Ok((ln_mode, sum))
}

/// Index of the largest term when `t_{k+1}/t_k = (p + k) x / ((b + k)(k + 1))`.
fn hypergeometric_mode(p: f64, b: f64, x: f64) -> usize {
    // (p + k) x = (b + k)(k + 1)  <=>  k² + (b + 1 − x) k + b − p x = 0
    let bb = b + 1.0 - x;
    let disc = bb * bb - 4.0 * (b - p * x);
    if disc <= 0.0 {
        return 0;
    }
    let k = 0.5 * (-bb + disc.sqrt());
    if k > 0.0 {
        k.floor() as usize
    } else {
        0
    }
}

/// ln of `e^{−x} M(p, b, x)/Γ(b)` for `p, b > 0`, `x ≥ 0`, i.e. of
/// `Σ_k Poisson(k; x) · Γ(p+k)/(Γ(p) Γ(b+k))`.
fn ln_kummer_positive_damped(p: f64, b: f64, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(-ln_gamma(b));
    }
    let lgp = ln_gamma(p);
    let ln_term = |k: usize| {
        let kf = k as f64;
        ln_poisson_pmf(k, x) - ln_gamma_ratio(p + kf, b - p) - lgp
    };
    let ratio = |k: usize| {
        let kf = k as f64;
        (p + kf) * x / ((b + kf) * (kf + 1.0))
    };
    let (ln_mode, sum) = sum_positive_series(ln_term, ratio, hypergeometric_mode(p, b, x))?;
    Ok(ln_mode + sum.ln())
}

/// Large-argument expansion of F̃(a, b, −x):
/// `x^{−a}/Γ(b−a) Σ (a)_k (1+a−b)_k / (k! x^k)`, as `(sign, ln|value|)`.
/// `None` if the terms stop shrinking before reaching double precision.
fn ln_kummer_negative_asymptotic(a: f64, b: f64, x: f64) -> Option<(f64, f64)> {
    let bma = b - a;
    if bma <= 0.0 {
        return None;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..200 {
        let kf = k as f64;
        let next = term * (a + kf) * (1.0 + a - b + kf) / ((kf + 1.0) * x);
        if next.abs() > term.abs() {
            return None;
        }
        sum += next;
        term = next;
        if term.abs() < 1e-16 * sum.abs() {
            return Some((sum.signum(), -a * x.ln() - ln_gamma(bma) + sum.abs().ln()));
        }
    }
    None
}

/// `e^{ln_scale} · F̃(a, b, z)`, where F̃(a, b, z) = M(a, b, z)/Γ(b) is the
/// regularized Kummer function and `b > 0`.
///
/// Everything is carried in log space, so huge `b` (where 1/Γ(b) underflows)
/// is fine as long as the scaled result is representable. For `z < 0` the
/// Kummer transformation `M(a,b,z) = e^z M(b−a, b, −z)` turns the alternating
/// series into a positive one whenever `b ≥ a`; very large `|z|` uses the
/// asymptotic expansion instead.
pub fn hyp1f1_regularized_scaled(a: f64, b: f64, z: f64, ln_scale: f64) -> Result<f64> {
    if !(b > 0.0) || !a.is_finite() || !z.is_finite() {
        return Err(Error::Domain(format!("F~({a}, {b}, {z}) needs b > 0 and finite arguments")));
    }
    let (sign, ln_abs) = if z == 0.0 {
        (1.0, -ln_gamma(b))
    } else if z < 0.0 && b - a >= 0.0 {
        let x = -z;
        let asym = if x > 1e4 && x > 100.0 * (a.abs() + 1.0) * ((1.0 + a - b).abs() + 1.0) {
            ln_kummer_negative_asymptotic(a, b, x)
        } else {
            None
        };
        match asym {
            Some(v) => v,
            None if b == a => (1.0, z - ln_gamma(b)),
            None => (1.0, ln_kummer_positive_damped(b - a, b, x)?),
        }
    } else if z > 0.0 && a > 0.0 {
        (1.0, z + ln_kummer_positive_damped(a, b, z)?)
    } else {
        let v = direct_series(a, b, z)?;
        (v.signum(), v.abs().ln() - ln_gamma(b))
    };
    Ok(sign * (ln_abs + ln_scale).exp())
}

/// Regularized Kummer function F̃(a, b, z) = M(a, b, z)/Γ(b) for `b > 0`.
pub fn hyp1f1_regularized(a: f64, b: f64, z: f64) -> Result<f64> {
    hyp1f1_regularized_scaled(a, b, z, 0.0)
}

/// Plain term-by-term series for M(a, b, z); only used where the others do not apply.
fn direct_series(a: f64, b: f64, z: f64) -> Result<f64> {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut largest: f64 = 1.0;
    for k in 0..100_000 {
        let kf = k as f64;
        term *= (a + kf) * z / ((b + kf) * (kf + 1.0));
        sum += term;
        largest = largest.max(term.abs());
        if term == 0.0 || (term.abs() < 1e-17 * sum.abs() && kf > z.abs()) {
            if largest > 1e8 * sum.abs() {
                return Err(Error::Numeric(format!("cancellation in F~({a}, {b}, {z})")));
            }
            return Ok(sum);
        }
    }
    Err(Error::Numeric(format!("F~({a}, {b}, {z}) series did not converge")))
}

/// `e^{ln_scale} · d/dz F̃(a, b, z)`, using d/dz F̃(a, b, z) = a F̃(a + 1, b + 1, z).
pub fn hyp1f1_regularized_dz_scaled(a: f64, b: f64, z: f64, ln_scale: f64) -> Result<f64> {
    Ok(a * hyp1f1_regularized_scaled(a + 1.0, b + 1.0, z, ln_scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma(x: f64) -> f64 {
        libm::tgamma(x)
    }

    #[test]
    fn elementary_special_cases() {
        // M(a, a, z) = e^z
        for &z in &[-30.0, -2.5, 0.0, 1.5, 20.0] {
            let v = hyp1f1_regularized(2.5, 2.5, z).unwrap() * gamma(2.5);
            assert!((v / z.exp() - 1.0).abs() < 1e-13, "z = {z}: {v}");
        }
        // M(1, 2, z) = (e^z − 1)/z
        for &z in &[-50.0, -1.0, 0.5, 10.0] {
            let v = hyp1f1_regularized(1.0, 2.0, z).unwrap();
            let exact = z.exp_m1() / z;
            assert!((v / exact - 1.0).abs() < 1e-13, "z = {z}");
        }
    }

    #[test]
    fn half_integer_against_error_function_form() {
        // M(−1/2, 1/2, −x) = e^{−x} + √(πx) erf(√x)
        for &x in &[0.01, 1.0, 7.5, 40.0, 3e3, 5e5] {
            let v = hyp1f1_regularized(-0.5, 0.5, -x).unwrap() * gamma(0.5);
            let s = x.sqrt();
            let exact = (-x).exp() + (std::f64::consts::PI * x).sqrt() * libm::erf(s);
            assert!((v / exact - 1.0).abs() < 1e-12, "x = {x}: {v} vs {exact}");
        }
    }

    #[test]
    fn series_and_asymptotic_branches_agree() {
        for &(a, b) in &[(-0.5f64, 0.96f64), (0.5, 1.96), (-0.5, 2800.0), (0.5, 2801.0)] {
            let x = 2e4 * (b + 1.0).powi(2);
            let (sign, asym) = ln_kummer_negative_asymptotic(a, b, x).unwrap();
            let series = ln_kummer_positive_damped(b - a, b, x).unwrap();
            assert_eq!(sign, 1.0);
            assert!((asym - series).abs() < 1e-10, "a = {a}, b = {b}: {asym} vs {series}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for &(a, b, z) in &[(-0.5f64, 0.96f64, -3.0f64), (0.5, 1.96, -120.0), (-0.5, 2800.0, -9000.0)] {
            let h = 1e-4 * z.abs().max(1.0);
            let scale = ln_gamma(b);
            let f = |z| hyp1f1_regularized_scaled(a, b, z, scale).unwrap();
            let fd = (f(z + h) - f(z - h)) / (2.0 * h);
            let an = hyp1f1_regularized_dz_scaled(a, b, z, scale).unwrap();
            assert!((fd / an - 1.0).abs() < 1e-6, "({a}, {b}, {z}): {fd} vs {an}");
        }
    }

    #[test]
    fn stable_log_helpers() {
        for &(y, a) in &[(0.5, 0.5), (31.0, -0.5), (1e3, 2.25), (1e9, 0.5)] {
            let direct = ln_gamma(y + a) - ln_gamma(y);
            let tol = 1e-13 * (1.0 + ln_gamma(y).abs());
            assert!((ln_gamma_ratio(y, a) - direct).abs() < tol, "y = {y}");
        }
        assert!((ln_gamma_ratio(1e12, 0.5) - 0.5 * 1e12f64.ln()).abs() < 1e-12);
        for &(k, m) in &[(0usize, 2.0), (5, 2.0), (40, 37.5), (10_000, 9_876.5)] {
            let direct = k as f64 * f64::ln(m) - m - ln_gamma(k as f64 + 1.0);
            assert!((ln_poisson_pmf(k, m) - direct).abs() < 1e-10, "k = {k}");
        }
        let total: f64 = (0..200).map(|k| ln_poisson_pmf(k, 60.0).exp()).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn regularization_at_zero() {
        for &(a, b) in &[(-0.5, 0.5), (0.5, 2.0), (3.0, 7.25)] {
            let v = hyp1f1_regularized(a, b, 0.0).unwrap();
            assert!((v * gamma(b) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_survives_huge_b() {
        // Γ(b) F̃(a, b, z) = M(a, b, z) ≈ 1 + a z / b for |z| ≪ b
        let b = 2800.0;
        let v = hyp1f1_regularized_scaled(-0.5, b, -1.0, ln_gamma(b)).unwrap();
        assert!((v - (1.0 + 0.5 / b)).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_b() {
        assert!(matches!(hyp1f1_regularized(0.5, 0.0, -1.0), Err(Error::Domain(_))));
    }
}
