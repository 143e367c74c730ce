//! Scalar nonlinearities shared by the autodiff ops and the inference paths.
//!
//! Training-time graph evaluation and inference-time forward passes must
//! produce bit-identical f32 values, so both sides call these exact
//! functions.

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable ln(1 + e^x).
#[inline]
pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`]: x such that softplus(x) = y, for y > 0.
#[inline]
pub fn softplus_inv(y: f32) -> f32 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y as f64).exp()).ln_1p() as f32
}

#[inline]
pub fn relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-3f32, 0.1, 0.5623413, 1.0, 7.5] {
            let x = softplus_inv(y);
            assert!((softplus(x) - y).abs() < 1e-6 * y.max(1.0), "y={y}");
        }
    }

    #[test]
    fn sigmoid_bounds() {
        assert!(sigmoid(-100.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-7);
        assert!(sigmoid(100.0) <= 1.0);
    }
}
