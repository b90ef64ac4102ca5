//! Scalar special functions and quadrature used by the pricers.
//!
//! The normal CDF is computed as `0.5 * erfc(-x / sqrt(2))` with W. J. Cody's
//! rational approximations for the (complementary) error function, accurate
//! to a handful of ulps in double precision — far tighter than the 1e-7
//! budget the pricing benchmarks need. The platform provides no `erf`
//! primitive, so the approximation is carried here.

use crate::scalar::{r64, to_f64, Real};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Cody region-1 numerator/denominator (|x| <= 0.46875), for erf.
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

/// Cody region-2 coefficients (0.46875 < |x| <= 4), for erfc.
const ERF_C: [f64; 9] = [
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
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];

/// Cody region-3 coefficients (|x| > 4), for erfc.
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

const SQRT_PI_INV: f64 = 5.641_895_835_477_562_9e-1;

/// exp(-x*x) split to keep the argument reduction exact (Cody's trick).
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Complementary error function, double precision.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        return 1.0 - erf(x);
    } else if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        exp_neg_sq(y) * (num + ERF_C[7]) / (den + ERF_D[7])
    } else if y < 26.543 {
        let ysq = 1.0 / (y * y);
        let mut num = ERF_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERF_P[i]) * ysq;
            den = (den + ERF_Q[i]) * ysq;
        }
        let r = ysq * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_neg_sq(y) * (SQRT_PI_INV - r) / y
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Error function, double precision.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let ysq = y * y;
        let mut num = ERF_A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + ERF_A[i]) * ysq;
            den = (den + ERF_B[i]) * ysq;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        sign * (1.0 - erfc(y))
    }
}

/// Standard normal CDF.
pub fn normal_cdf<R: Real>(x: R) -> R {
    r64(0.5 * erfc(-to_f64(x) * FRAC_1_SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf<R: Real>(x: R) -> R {
    let x = to_f64(x);
    r64((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Adaptive Simpson quadrature over `[a, b]`.
///
/// `tol` is an absolute tolerance on the whole interval; it is split in half
/// on each subdivision, with the usual Richardson `err/15` acceptance test.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    adapt(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
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
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        left + right + err / 15.0
    } else {
        let half = 0.5 * tol;
        adapt(f, a, m, fa, flm, fm, left, half, depth - 1)
            + adapt(f, m, b, fm, frm, fb, right, half, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: f64, want: f64, rel: f64) {
        let scale = want.abs().max(1e-300);
        assert!(
            (got - want).abs() / scale <= rel,
            "got {got:e}, want {want:e}"
        );
    }

    #[test]
    fn erf_reference_values() {
        // Reference values from standard tables.
        assert_eq!(erf(0.0), 0.0);
        assert_close(erf(0.25), 0.2763263901682369, 1e-14);
        assert_close(erf(0.5), 0.5204998778130465, 1e-14);
        assert_close(erfc(1.0), 0.15729920705028513, 1e-14);
        assert_close(erfc(2.0), 0.004677734981047266, 1e-14);
        assert_close(erfc(5.0), 1.5374597944280351e-12, 1e-13);
        assert_close(erfc(10.0), 2.0884875837625446e-45, 1e-12);
        assert_close(erfc(-1.0), 2.0 - 0.15729920705028513, 1e-14);
        assert_eq!(erfc(30.0), 0.0);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0f64), 0.5);
        assert_close(normal_cdf(1.96f64), 0.9750021048517795, 1e-14);
        assert_close(normal_cdf(-1.0f64), 0.15865525393145707, 1e-14);
        assert_close(normal_cdf(0.5f64), 0.6914624612740131, 1e-14);
        assert_close(normal_cdf(3.0f64), 0.9986501019683699, 1e-14);
        assert_close(normal_cdf(-8.0f64), 6.22096057427178e-16, 1e-12);
    }

    #[test]
    fn normal_cdf_symmetry() {
        for &x in &[0.1, 0.7, 1.3, 2.9, 4.2] {
            let lo: f64 = normal_cdf(-x);
            let hi: f64 = normal_cdf(x);
            assert_close(lo + hi, 1.0, 1e-14);
        }
    }

    #[test]
    fn normal_cdf_f32_tracks_f64() {
        for &x in &[-2.0f32, -0.3, 0.0, 0.8, 2.5] {
            let got = normal_cdf(x) as f64;
            let want: f64 = normal_cdf(x as f64);
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn quadrature_polynomial_and_gaussian() {
        let cube = integrate_adaptive(&|x| x * x * x, 0.0, 2.0, 1e-12);
        assert_close(cube, 4.0, 1e-12);

        let gauss = integrate_adaptive(&|x| normal_pdf(x), -6.0, 6.0, 1e-12);
        assert_close(gauss, erf(6.0 / std::f64::consts::SQRT_2), 1e-10);
    }
}
