//! Fresnel integrals C(x) and S(x).
//!
//! Convention: C(x) = integral of cos(pi t^2 / 2) from 0 to x,
//! S(x) = integral of sin(pi t^2 / 2) from 0 to x.
//!
//! Power series on |x| <= 1.6; Chebyshev fits of the auxiliary functions
//! f, g on |x| > 1.6, where
//!
//! ```text
//! C(x) = 0.5 + f(x) sin(w) - g(x) cos(w),   w = pi x^2 / 2
//! S(x) = 0.5 - f(x) cos(w) - g(x) sin(w)
//! ```
//!
//! The fits approximate pi*x*f and pi^2*x^3*g as functions of
//! v = 1/(pi x^2)^2 on [0, VMAX]. Absolute error is below 1e-11 over the
//! whole real line, comfortably inside the 1e-9 contract.

use std::f64::consts::{FRAC_PI_2, PI};

/// Values of the Fresnel cosine and sine integrals at one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FresnelPair {
    pub c: f64,
    pub s: f64,
}

const XSWITCH: f64 = 1.6;
/// 1 / (pi * 1.6^2)^2, the upper end of the fit variable v.
const VMAX: f64 = 0.015460385687612575;

/// Chebyshev coefficients of pi*x*f(x) in t = 2 v / VMAX - 1.
const AUX_F: [f64; 18] = [
    0.981897388025641044,
    -0.0168157617388844748,
    0.00111111011319290063,
    -0.000141948458683155849,
    2.57338846193554953e-5,
    -5.82518218775098251e-6,
    1.54076034570112604e-6,
    -4.57874845530189383e-7,
    1.49054882723343543e-7,
    -5.223612475654056e-8,
    1.94611192072042765e-8,
    -7.63573518325699464e-9,
    3.13214066392660501e-9,
    -1.33505441021608636e-9,
    5.87697721643410068e-10,
    -2.64465457737054941e-10,
    1.17984025195580586e-10,
    -4.54062895083564059e-11,
];

/// Chebyshev coefficients of pi^2*x^3*g(x) in t = 2 v / VMAX - 1.
const AUX_G: [f64; 18] = [
    0.922142671602018546,
    -0.0690621476304565538,
    0.00723889027144425935,
    -0.00119966770152240394,
    0.000259653991657103217,
    -6.71435846145231514e-5,
    1.97477521944363159e-5,
    -6.40863356350704547e-6,
    2.24903197844466562e-6,
    -8.41508357450260202e-7,
    3.3223304450148825e-7,
    -1.37315166289060171e-7,
    5.90434431998117917e-8,
    -2.62709825797799005e-8,
    1.20255498309836891e-8,
    -5.60371844608687413e-9,
    2.57397976061572874e-9,
    -1.01089716104790178e-9,
];

fn clenshaw(coeffs: &[f64], t: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs[1..].iter().rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + coeffs[0]
}

/// Power series, valid and fast for |x| <= 1.6.
fn fresnel_series(x: f64) -> FresnelPair {
    let t = FRAC_PI_2 * x * x;
    let t2 = t * t;

    // C(x) = x * sum_n (-1)^n t^(2n) / ((2n)! (4n+1))
    let mut c = 1.0;
    let mut pow_c = 1.0; // (-1)^n t^(2n) / (2n)!
    for n in 1..40 {
        let n2 = (2 * n) as f64;
        pow_c *= -t2 / ((n2 - 1.0) * n2);
        let add = pow_c / ((4 * n + 1) as f64);
        c += add;
        if add.abs() < 1e-17 {
            break;
        }
    }

    // S(x) = x * sum_n (-1)^n t^(2n+1) / ((2n+1)! (4n+3))
    let mut s = t / 3.0;
    let mut pow_s = t; // (-1)^n t^(2n+1) / (2n+1)!
    for n in 1..40 {
        let n2 = (2 * n) as f64;
        pow_s *= -t2 / (n2 * (n2 + 1.0));
        let add = pow_s / ((4 * n + 3) as f64);
        s += add;
        if add.abs() < 1e-17 {
            break;
        }
    }

    FresnelPair { c: x * c, s: x * s }
}

/// Auxiliary-function evaluation for |x| > 1.6 (x passed positive).
fn fresnel_aux(x: f64) -> FresnelPair {
    if x > 1e60 {
        // f, g < 1e-61; the limit value is exact at this precision.
        return FresnelPair { c: 0.5, s: 0.5 };
    }
    let pix2 = PI * x * x;
    let v = 1.0 / (pix2 * pix2);
    let t = 2.0 * v / VMAX - 1.0;
    let f = clenshaw(&AUX_F, t) / (PI * x);
    let g = clenshaw(&AUX_G, t) / (PI * PI * x * x * x);

    // Phase w = pi x^2 / 2 reduced modulo 2*pi before sin/cos. x^2 is split
    // into hi + lo exactly with fused multiply-add so the reduction stays
    // accurate for large arguments.
    let hi = x * x;
    let lo = x.mul_add(x, -hi);
    let r = (hi % 4.0) + lo;
    let w = r * FRAC_PI_2;
    let (sw, cw) = w.sin_cos();

    FresnelPair {
        c: 0.5 + f * sw - g * cw,
        s: 0.5 - f * cw - g * sw,
    }
}

/// Fresnel integrals C(x), S(x). Total on finite reals; odd in x.
pub fn fresnel_integrals(x: f64) -> FresnelPair {
    let ax = x.abs();
    let pair = if ax <= XSWITCH {
        fresnel_series(ax)
    } else {
        fresnel_aux(ax)
    };
    if x < 0.0 {
        FresnelPair { c: -pair.c, s: -pair.s }
    } else {
        pair
    }
}
