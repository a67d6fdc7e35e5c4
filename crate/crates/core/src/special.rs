//! Log-Gamma and digamma for positive real arguments.
//!
//! Both use upward recurrence to move the argument past [`SHIFT`] and then the
//! Stirling / asymptotic series, which at that point is accurate to a few ulps.

const SHIFT: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of the Gamma function, `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma domain: {x}");
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut z = x;
    let mut prod = 1.0;
    while z < SHIFT {
        prod *= z;
        z += 1.0;
    }
    let shift = if prod == 1.0 { 0.0 } else { prod.ln() };
    stirling_ln_gamma(z) - shift
}

fn stirling_ln_gamma(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    // Bernoulli-number coefficients B_{2k} / (2k (2k-1)).
    let series = r
        * (1.0 / 12.0
            + r2 * (-1.0 / 360.0
                + r2 * (1.0 / 1260.0
                    + r2 * (-1.0 / 1680.0
                        + r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360_360.0 + r2 * (1.0 / 156.0)))))));
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series
}

/// Digamma function `Γ'(x)/Γ(x)`, `x > 0`.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma domain: {x}");
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut z = x;
    let mut acc = 0.0;
    while z < SHIFT {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    let series = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0
                        - r2 * (1.0 / 132.0 - r2 * (691.0 / 32_760.0 - r2 * (1.0 / 12.0)))))));
    acc + z.ln() - 0.5 * r - series
}

/// `ln Γ(x + n) - ln Γ(x)` for a non-negative integer count `n`.
#[inline]
pub fn ln_rising(x: f64, n: u32) -> f64 {
    match n {
        0 => 0.0,
        1 => x.ln(),
        2 => (x * (x + 1.0)).ln(),
        _ => ln_gamma(x + n as f64) - ln_gamma(x),
    }
}

/// `ψ(x + n) - ψ(x)` for a non-negative integer count `n`.
#[inline]
pub fn digamma_diff(x: f64, n: u32) -> f64 {
    match n {
        0 => 0.0,
        1 => 1.0 / x,
        2 => 1.0 / x + 1.0 / (x + 1.0),
        _ => digamma(x + n as f64) - digamma(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Γ(x)Γ(1-x) = π / sin(πx)
    fn gamma_reflection_check(x: f64) -> f64 {
        (PI / (PI * x).sin()).ln()
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(101.0) - (1..=100).map(|k| (k as f64).ln()).sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn ln_gamma_reflection() {
        for &x in &[0.1, 0.25, 0.3, 0.7] {
            let lhs = ln_gamma(x) + ln_gamma(1.0 - x);
            assert!((lhs - gamma_reflection_check(x)).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-14);
        assert!((digamma(0.5) + euler + 2.0 * 2f64.ln()).abs() < 1e-14);
        // ψ(x+1) = ψ(x) + 1/x
        for &x in &[1e-4, 0.03, 0.9, 3.3, 17.0, 1234.5] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12 * (1.0 + 1.0 / x));
        }
    }

    #[test]
    fn small_count_shortcuts_agree() {
        for &x in &[1e-3, 0.2, 1.7, 40.0] {
            for n in 0..6u32 {
                let direct = ln_gamma(x + n as f64) - ln_gamma(x);
                assert!((ln_rising(x, n) - direct).abs() < 1e-12 * (1.0 + direct.abs()));
                let dd = digamma(x + n as f64) - digamma(x);
                assert!((digamma_diff(x, n) - dd).abs() < 1e-10 * (1.0 + dd.abs()));
            }
        }
    }

    #[test]
    fn agrees_with_statrs() {
        let mut x = 1e-3;
        while x < 500.0 {
            let a = ln_gamma(x);
            let b = statrs::function::gamma::ln_gamma(x);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "ln_gamma({x}) {a} vs {b}");
            let a = digamma(x);
            let b = statrs::function::gamma::digamma(x);
            assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "digamma({x}) {a} vs {b}");
            x *= 1.37;
        }
    }
}
