//! Normal-distribution special functions: `erf`, `erfc`, Φ, and Φ⁻¹.
//!
//! `erf`/`erfc` follow Cody's rational Chebyshev approximations (three
//! branches at 0.46875 and 4.0), accurate to about 1e-15 relative error.
//! The inverse CDF uses Acklam's rational approximation refined with one
//! Halley step against the forward CDF, accurate to about 1e-12 absolute
//! over (0, 1). Both were checked against a 50-digit arbitrary-precision
//! reference before the coefficients were frozen here.

use crate::num::Real;

const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERFC_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERFC_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERFC_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERFC_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const ONE_OVER_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

pub fn erf<T: Real>(x: T) -> T {
    let ax = x.abs();
    if ax <= T::of(0.46875) {
        let z = x * x;
        let mut num = T::of(ERF_A[4]) * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + T::of(ERF_A[i])) * z;
            den = (den + T::of(ERF_B[i])) * z;
        }
        x * (num + T::of(ERF_A[3])) / (den + T::of(ERF_B[3]))
    } else {
        let tail = T::one() - erfc_large(ax);
        if x.is_sign_negative() {
            -tail
        } else {
            tail
        }
    }
}

pub fn erfc<T: Real>(x: T) -> T {
    if x < T::zero() {
        T::of(2.0) - erfc(-x)
    } else if x <= T::of(0.46875) {
        T::one() - erf(x)
    } else {
        erfc_large(x)
    }
}

/// `erfc` for x > 0.46875, where the complement is evaluated directly.
fn erfc_large<T: Real>(x: T) -> T {
    if x <= T::of(4.0) {
        let mut num = T::of(ERFC_C[8]) * x;
        let mut den = x;
        for i in 0..7 {
            num = (num + T::of(ERFC_C[i])) * x;
            den = (den + T::of(ERFC_D[i])) * x;
        }
        (-x * x).exp() * (num + T::of(ERFC_C[7])) / (den + T::of(ERFC_D[7]))
    } else if x >= T::of(26.6) {
        T::zero()
    } else {
        let r = (x * x).recip();
        let mut num = T::of(ERFC_P[5]) * r;
        let mut den = r;
        for i in 0..4 {
            num = (num + T::of(ERFC_P[i])) * r;
            den = (den + T::of(ERFC_Q[i])) * r;
        }
        let ratio = (num + T::of(ERFC_P[4])) / (den + T::of(ERFC_Q[4]));
        (-x * x).exp() / x * (T::of(ONE_OVER_SQRT_PI) - r * ratio)
    }
}

/// Standard normal CDF Φ.
pub fn norm_cdf<T: Real>(x: T) -> T {
    T::of(0.5) * erfc(-x / T::of(std::f64::consts::SQRT_2))
}

const PPF_A: [f64; 6] = [
    -3.969683028665376e1,
    2.209460984245205e2,
    -2.759285104469687e2,
    1.383577518672690e2,
    -3.066479806614716e1,
    2.506628277459239e0,
];
const PPF_B: [f64; 5] = [
    -5.447609879822406e1,
    1.615858368580409e2,
    -1.556989798598866e2,
    6.680131188771972e1,
    -1.328068155288572e1,
];
const PPF_C: [f64; 6] = [
    -7.784894002430293e-3,
    -3.223964580411365e-1,
    -2.400758277161838e0,
    -2.549732539343734e0,
    4.374664141464968e0,
    2.938163982698783e0,
];
const PPF_D: [f64; 4] = [
    7.784695709041462e-3,
    3.224671290700398e-1,
    2.445134137142996e0,
    3.754408661907416e0,
];

/// Standard normal quantile function Φ⁻¹.
///
/// Returns −∞ at 0 and ∞ at 1; NaN outside [0, 1].
pub fn norm_ppf<T: Real>(p: T) -> T {
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    let p_low = T::of(0.02425);
    let p_high = T::one() - p_low;
    let x = if p < p_low {
        let q = (-(T::of(2.0)) * p.ln()).sqrt();
        ppf_tail(q)
    } else if p <= p_high {
        let q = p - T::of(0.5);
        let r = q * q;
        let mut num = T::of(PPF_A[0]) * r;
        let mut den = T::of(PPF_B[0]) * r;
        for i in 1..5 {
            num = (num + T::of(PPF_A[i])) * r;
            den = (den + T::of(PPF_B[i])) * r;
        }
        (num + T::of(PPF_A[5])) * q / (den + T::one())
    } else {
        let q = (-(T::of(2.0)) * (T::one() - p).ln()).sqrt();
        -ppf_tail(q)
    };
    halley_refine(x, p)
}

fn ppf_tail<T: Real>(q: T) -> T {
    let mut num = T::of(PPF_C[0]) * q;
    let mut den = T::of(PPF_D[0]) * q;
    for i in 1..4 {
        num = (num + T::of(PPF_C[i])) * q;
        den = (den + T::of(PPF_D[i])) * q;
    }
    num = (num + T::of(PPF_C[4])) * q;
    (num + T::of(PPF_C[5])) / (den + T::one())
}

/// One Halley iteration of Φ(x) = p, which lifts Acklam's ~1e-9 raw
/// accuracy to ~1e-12 without extra branches.
fn halley_refine<T: Real>(x: T, p: T) -> T {
    let e = norm_cdf(x) - p;
    let sqrt_two_pi = T::of((2.0 * std::f64::consts::PI).sqrt());
    let u = e * sqrt_two_pi * (x * x / T::of(2.0)).exp();
    x - u / (T::one() + x * u / T::of(2.0))
}
