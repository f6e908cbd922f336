//! Pointwise nonlinearities and their derivatives.

use crate::scalar::Scalar;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf based) GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    half * x * (S::one() + (x * S::from_f64(FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let cdf = half * (S::one() + (x * S::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = S::from_f64(INV_SQRT_2PI) * (-half * x * x).exp();
    cdf + x * pdf
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    let e = (-x.abs()).exp_fast();
    let r = S::one() / (S::one() + e);
    if x >= S::zero() {
        r
    } else {
        e * r
    }
}

#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

pub fn silu_grad<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

/// `ln(1 + e^x)`, overflow safe.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::from_f64(20.0) {
        x
    } else {
        x.exp_fast().ln_1p()
    }
}

/// Derivative of [`softplus`], i.e. the logistic function.
pub fn softplus_grad<S: Scalar>(x: S) -> S {
    sigmoid(x)
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &x in &[-6.0, -2.5, -0.3, 0.0, 0.7, 3.1, 25.0] {
            assert!((gelu_grad(x) - central(gelu::<f64>, x)).abs() < 1e-7, "gelu at {x}");
            assert!((silu_grad(x) - central(silu::<f64>, x)).abs() < 1e-7, "silu at {x}");
            assert!((softplus_grad(x) - central(softplus::<f64>, x)).abs() < 1e-7, "softplus at {x}");
        }
    }

    #[test]
    fn fixed_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(silu(0.0f32), 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(softplus_inv(0.01)) - 0.01f64).abs() < 1e-14);
        assert_eq!(gelu(10.0f32), 10.0);
    }
}
