//! Special functions not provided by `statrs`: the modified Bessel
//! functions of the first kind of order 0 and 1, evaluated in log or ratio
//! form so that large concentrations never overflow.

use std::f64::consts::PI;

/// Power series and asymptotic expansion meet here. Below it every series term
/// is positive and the sum stays far from overflow; above it the asymptotic
/// expansion's smallest term is below `exp(-2 * SWITCH)`.
const SWITCH: f64 = 20.0;

/// Returns `(e^{-x} I0(x), e^{-x} I1(x))` for `x >= 0`.
fn scaled_i0_i1(x: f64) -> (f64, f64) {
    debug_assert!(x >= 0.0);
    if x < SWITCH {
        let q = 0.25 * x * x;
        let mut t0 = 1.0;
        let mut t1 = 0.5 * x;
        let (mut s0, mut s1) = (t0, t1);
        let mut k = 1.0;
        loop {
            t0 *= q / (k * k);
            t1 *= q / (k * (k + 1.0));
            s0 += t0;
            s1 += t1;
            if t0 <= f64::EPSILON * 1e-2 * s0 && t1 <= f64::EPSILON * 1e-2 * s1.max(f64::MIN_POSITIVE) {
                break;
            }
            k += 1.0;
        }
        let scale = (-x).exp();
        (s0 * scale, s1 * scale)
    } else {
        // Hankel expansion: I_v(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(v) / x^k
        let pref = 1.0 / (2.0 * PI * x).sqrt();
        let mut a0 = 1.0;
        let mut a1 = 1.0;
        let (mut s0, mut s1) = (1.0, 1.0);
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let kf = k as f64;
            let odd = (2.0 * kf - 1.0) * (2.0 * kf - 1.0);
            a0 *= -(0.0 - odd) / (kf * 8.0 * x);
            a1 *= -(4.0 - odd) / (kf * 8.0 * x);
            let size = a0.abs().max(a1.abs());
            if size > prev {
                break;
            }
            s0 += a0;
            s1 += a1;
            if size < f64::EPSILON * 1e-2 {
                break;
            }
            prev = size;
        }
        (pref * s0, pref * s1)
    }
}

/// Natural log of the modified Bessel function `I0(x)`.
pub fn ln_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    let (i0e, _) = scaled_i0_i1(x);
    x + i0e.ln()
}

/// The ratio `I1(x) / I0(x)`, the mean resultant length of a von Mises
/// distribution with concentration `x`.
pub fn bessel_i1_over_i0(x: f64) -> f64 {
    let (i0e, i1e) = scaled_i0_i1(x.abs());
    (i1e / i0e).copysign(x)
}
