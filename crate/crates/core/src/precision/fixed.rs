//! Q3.12 fixed point: 1 sign bit, 3 integer bits, 12 fraction bits.

use std::fmt;

const SCALE: f64 = 4096.0;

/// 16-bit two's-complement fixed-point value with an implied scale of 2^-12.
///
/// The representable range is `[-8, 8 - 2^-12]`. Conversions saturate at
/// the ends of the range and never wrap.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(transparent)]
pub struct Fixed16(i16);

impl Fixed16 {
    pub const MIN: Fixed16 = Fixed16(i16::MIN);
    pub const MAX: Fixed16 = Fixed16(i16::MAX);
    pub const ZERO: Fixed16 = Fixed16(0);
    /// The grid step, 2^-12.
    pub const STEP: f64 = 1.0 / SCALE;

    #[inline]
    pub const fn from_raw(raw: i16) -> Fixed16 {
        Fixed16(raw)
    }

    #[inline]
    pub const fn raw(self) -> i16 {
        self.0
    }

    /// Converts with round-to-nearest-even, reporting whether the value had
    /// to be clamped. NaN maps to zero and counts as saturated.
    pub fn from_f64_checked(x: f64) -> (Fixed16, bool) {
        if x.is_nan() {
            return (Fixed16::ZERO, true);
        }
        let scaled = (x * SCALE).round_ties_even();
        if scaled > i16::MAX as f64 {
            (Fixed16::MAX, true)
        } else if scaled < i16::MIN as f64 {
            (Fixed16::MIN, true)
        } else {
            (Fixed16(scaled as i16), false)
        }
    }

    #[inline]
    pub fn from_f64(x: f64) -> Fixed16 {
        Fixed16::from_f64_checked(x).0
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    /// Exact: every Q3.12 value has at most 15 significant bits.
    #[inline]
    pub fn to_f32(self) -> f32 {
        self.0 as f32 / SCALE as f32
    }
}

/// Rounds `x` onto the Q3.12 grid (saturating) and widens the result back.
#[inline]
pub fn round_to_q312(x: f64) -> f32 {
    Fixed16::from_f64(x).to_f32()
}

impl fmt::Debug for Fixed16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed16({} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fixed16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values() {
        assert_eq!(Fixed16::from_f64(1.5).raw(), 6144);
        assert_eq!(Fixed16::from_f64(1.5).to_f64(), 1.5);
        assert_eq!(Fixed16::from_f64(-8.0).raw(), -32768);
        assert_eq!(Fixed16::from_f64(-8.0).to_f64(), -8.0);
    }

    #[test]
    fn saturates_instead_of_wrapping() {
        let (f, sat) = Fixed16::from_f64_checked(10.0);
        assert!(sat);
        assert_eq!(f.raw(), 32767);
        assert!((f.to_f64() - 7.999756).abs() < 1e-6);
        let (f, sat) = Fixed16::from_f64_checked(-1e9);
        assert!(sat);
        assert_eq!(f, Fixed16::MIN);
        // 8 - 2^-13 is the tie between MAX and an out-of-range value.
        let (_, sat) = Fixed16::from_f64_checked(8.0 - 2f64.powi(-13));
        assert!(sat);
        let (f, sat) = Fixed16::from_f64_checked(8.0 - 2f64.powi(-12));
        assert!(!sat);
        assert_eq!(f, Fixed16::MAX);
    }

    #[test]
    fn rounding_is_nearest_even() {
        assert_eq!(Fixed16::from_f64(0.69312).raw(), 2839);
        assert_eq!(Fixed16::from_f64(0.5 / SCALE).raw(), 0);
        assert_eq!(Fixed16::from_f64(1.5 / SCALE).raw(), 2);
        assert_eq!(Fixed16::from_f64(-0.5 / SCALE).raw(), 0);
    }

    #[test]
    fn nan_is_saturated_zero() {
        assert_eq!(Fixed16::from_f64_checked(f64::NAN), (Fixed16::ZERO, true));
    }
}
