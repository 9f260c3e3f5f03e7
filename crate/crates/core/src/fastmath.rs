//! Branch-free natural logarithm for the weight-derivation hot loop.
//!
//! `std`'s `ln` is a scalar libm call; deriving half a million weights per
//! training sample needs something the compiler can vectorize. The result is
//! accurate to a few ulp in f64, far below the f32 precision weights are
//! stored at.

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
const LN_2: f64 = std::f64::consts::LN_2;

/// `ln(x)` for positive, finite, normal `x`. Other inputs give unspecified
/// (but non-panicking) results.
#[inline(always)]
pub fn ln_pos(x: f64) -> f64 {
    let bits = x.to_bits();
    // Split into 2^e * m with m in [sqrt(1/2), sqrt(2)).
    let k = (bits.wrapping_sub(SQRT_HALF.to_bits()) as i64) >> 52;
    let m = f64::from_bits(bits.wrapping_sub((k as u64) << 52));
    let e = k as f64;
    // ln(m) = 2 atanh(f), |f| <= 0.1716
    let f = (m - 1.0) / (m + 1.0);
    let s = f * f;
    let poly = 1.0
        + s * (1.0 / 3.0
            + s * (1.0 / 5.0
                + s * (1.0 / 7.0
                    + s * (1.0 / 9.0
                        + s * (1.0 / 11.0 + s * (1.0 / 13.0 + s * (1.0 / 15.0 + s / 17.0)))))));
    e * LN_2 + 2.0 * f * poly
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_std_over_trace_range() {
        let mut x = 1e-12f64;
        while x < 4.0 {
            let got = ln_pos(x);
            let want = x.ln();
            assert!(
                (got - want).abs() <= 4.0 * f64::EPSILON * want.abs().max(1.0),
                "x={x} got={got} want={want}"
            );
            x *= 1.0009765625;
        }
    }

    #[test]
    fn exact_points() {
        assert_eq!(ln_pos(1.0), 0.0);
        assert!((ln_pos(2.0) - LN_2).abs() < 1e-16);
        assert!((ln_pos(0.5) + LN_2).abs() < 1e-16);
    }

    #[test]
    fn range_boundaries() {
        for x in [SQRT_HALF, f64::from_bits(SQRT_HALF.to_bits() + 1), f64::from_bits(SQRT_HALF.to_bits() - 1), 1.0e-8, 1.0 + 1e-8] {
            assert!((ln_pos(x) - x.ln()).abs() < 1e-15, "{x}");
        }
    }
}
