//! Digamma, trigamma, their inverse and log-gamma, generic over the float type.
//!
//! The polygamma functions shift the argument upward with the recurrence
//! `psi(x) = psi(x + 1) - 1/x` until the asymptotic series is accurate, which
//! keeps them well below 1e-12 absolute error for `f64`.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpecialError {
    #[error("argument {0} is outside the domain (x > 0 required)")]
    Domain(f64),
    #[error("inverse digamma did not converge for y = {0}")]
    NoConvergence(f64),
}

/// Euler–Mascheroni constant, `-digamma(1)`.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments below this are shifted up before applying the asymptotic series.
const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

#[inline]
fn c<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

fn check_domain<F: Float>(x: F) -> Result<(), SpecialError> {
    if x > F::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(SpecialError::Domain(x.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Digamma function `d/dx ln Gamma(x)` for `x > 0`.
pub fn digamma<F: Float>(x: F) -> Result<F, SpecialError> {
    check_domain(x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked<F: Float>(mut x: F) -> F {
    let threshold = c::<F>(ASYMPTOTIC_THRESHOLD);
    let mut acc = F::zero();
    while x < threshold {
        acc = acc - x.recip();
        x = x + F::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // ln x - 1/(2x) - sum B_2k / (2k x^2k)
    let series = inv2
        * (c::<F>(1.0 / 12.0)
            - inv2
                * (c::<F>(1.0 / 120.0)
                    - inv2
                        * (c::<F>(1.0 / 252.0)
                            - inv2 * (c::<F>(1.0 / 240.0) - inv2 * c::<F>(1.0 / 132.0)))));
    acc + x.ln() - c::<F>(0.5) * inv - series
}

/// Trigamma function `d^2/dx^2 ln Gamma(x)` for `x > 0`.
pub fn trigamma<F: Float>(x: F) -> Result<F, SpecialError> {
    check_domain(x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked<F: Float>(mut x: F) -> F {
    let threshold = c::<F>(ASYMPTOTIC_THRESHOLD);
    let mut acc = F::zero();
    while x < threshold {
        acc = acc + (x * x).recip();
        x = x + F::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
    let series = inv
        * inv2
        * (c::<F>(1.0 / 6.0)
            - inv2
                * (c::<F>(1.0 / 30.0)
                    - inv2
                        * (c::<F>(1.0 / 42.0)
                            - inv2 * (c::<F>(1.0 / 30.0) - inv2 * c::<F>(5.0 / 66.0)))));
    acc + inv + c::<F>(0.5) * inv2 + series
}

/// Inverse of the digamma function on `(0, inf)`.
///
/// Newton iteration from Minka's initializer, stopped once
/// `|digamma(x) - y|` is below `1e-12` (or a few ulps of `y` for narrower
/// float types).
pub fn inv_digamma<F: Float>(y: F) -> Result<F, SpecialError> {
    if !y.is_finite() {
        return Err(SpecialError::NoConvergence(y.to_f64().unwrap_or(f64::NAN)));
    }
    let tol = c::<F>(1e-12).max(F::epsilon() * c::<F>(16.0) * (F::one() + y.abs()));
    let mut x = if y >= c::<F>(-2.22) {
        y.exp() + c::<F>(0.5)
    } else {
        -(y + c::<F>(EULER_GAMMA)).recip()
    };
    for _ in 0..100 {
        let residual = digamma_unchecked(x) - y;
        if residual.abs() < tol {
            return Ok(x);
        }
        let mut next = x - residual / trigamma_unchecked(x);
        // Newton can overshoot below zero for very negative y.
        if next <= F::zero() {
            next = x * c::<F>(0.5);
        }
        x = next;
    }
    if (digamma_unchecked(x) - y).abs() < tol * c::<F>(1e3) {
        Ok(x)
    } else {
        Err(SpecialError::NoConvergence(y.to_f64().unwrap_or(f64::NAN)))
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<F: Float>(x: F) -> Result<F, SpecialError> {
    check_domain(x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked<F: Float>(x: F) -> F {
    if x < c::<F>(0.5) {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        let pi = c::<F>(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma_unchecked(F::one() - x);
    }
    let x = x - F::one();
    let mut sum = c::<F>(LANCZOS_COEF[0]);
    for (i, &coef) in LANCZOS_COEF.iter().enumerate().skip(1) {
        sum = sum + c::<F>(coef) / (x + c::<F>(i as f64));
    }
    let t = x + c::<F>(LANCZOS_G + 0.5);
    c::<F>(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + c::<F>(0.5)) * t.ln() - t + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn digamma_at_one_is_minus_euler_gamma() {
        assert_abs_diff_eq!(digamma(1.0_f64).unwrap(), -0.577_215_664_90, epsilon = 1e-10);
    }

    #[test]
    fn digamma_known_values() {
        // psi(1/2) = -gamma - 2 ln 2
        let expected = -EULER_GAMMA - 2.0 * 2.0_f64.ln();
        assert_abs_diff_eq!(digamma(0.5_f64).unwrap(), expected, epsilon = 1e-12);
        // psi(10) = H_9 - gamma
        let h9: f64 = (1..10).map(|k| 1.0 / k as f64).sum();
        assert_abs_diff_eq!(digamma(10.0_f64).unwrap(), h9 - EULER_GAMMA, epsilon = 1e-12);
    }

    #[test]
    fn recurrence_holds() {
        for x in [0.1_f64, 1.0, 10.0, 100.0] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert_abs_diff_eq!(lhs, 1.0 / x, epsilon = 1e-10);
            let lhs = trigamma(x).unwrap() - trigamma(x + 1.0).unwrap();
            assert_abs_diff_eq!(lhs, 1.0 / (x * x), epsilon = 1e-10);
        }
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert_abs_diff_eq!(trigamma(1.0_f64).unwrap(), pi2_6, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(0.5_f64).unwrap(), 3.0 * pi2_6, epsilon = 1e-11);
    }

    #[test]
    fn trigamma_matches_derivative_of_digamma() {
        for x in [0.3_f64, 2.5, 40.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(trigamma(x).unwrap(), fd, epsilon = 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn inverse_round_trip() {
        for x in [0.05_f64, 0.5, 5.0, 50.0] {
            let y = digamma(x).unwrap();
            assert_abs_diff_eq!(inv_digamma(y).unwrap(), x, epsilon = 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(digamma(0.0_f64), Err(SpecialError::Domain(_))));
        assert!(matches!(trigamma(-1.0_f64), Err(SpecialError::Domain(_))));
        assert!(ln_gamma(f64::NAN).is_err());
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..15 {
            assert_abs_diff_eq!(ln_gamma(n as f64).unwrap(), fact.ln(), epsilon = 1e-11);
            fact *= n as f64;
        }
        assert_abs_diff_eq!(
            ln_gamma(0.5_f64).unwrap(),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_precision_is_usable() {
        assert!((digamma(1.0_f32).unwrap() + 0.577_215_7).abs() < 1e-5);
        let x = inv_digamma(digamma(3.0_f32).unwrap()).unwrap();
        assert!((x - 3.0).abs() < 1e-4);
    }
}
