//! Software IEEE-754 binary16.
//!
//! Conversions round to nearest, ties to even, straight from the 64-bit
//! source so no double rounding is introduced. Arithmetic is performed
//! exactly in `f64` and rounded once: products of two halves need 22
//! significant bits and sums of two halves at most 51, both of which `f64`
//! represents exactly, so every operation below is correctly rounded.

use std::fmt;

/// A binary16 value stored as its raw bit pattern.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    pub const NAN: Half = Half(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: Half = Half(0x0001);
    /// Distance between 1.0 and the next larger value, 2^-10.
    pub const EPSILON: Half = Half(0x1400);

    #[inline]
    pub const fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn from_f64(x: f64) -> Half {
        let bits = x.to_bits();
        let sign = ((bits >> 48) & 0x8000) as u16;
        let exp = ((bits >> 52) & 0x7FF) as i32;
        let man = bits & 0x000F_FFFF_FFFF_FFFF;

        if exp == 0x7FF {
            if man == 0 {
                return Half(sign | 0x7C00);
            }
            // Keep the top payload bits and force the quiet bit.
            return Half(sign | 0x7E00 | ((man >> 42) as u16 & 0x03FF));
        }

        let e = exp - 1023;
        if e > 15 {
            return Half(sign | 0x7C00);
        }
        if e >= -14 {
            let m = (man >> 42) as u16;
            let rem = man & ((1u64 << 42) - 1);
            let halfway = 1u64 << 41;
            let mut h = (((e + 15) as u16) << 10) | m;
            if rem > halfway || (rem == halfway && (h & 1) == 1) {
                // A carry out of the mantissa correctly bumps the exponent,
                // all the way to infinity for values >= 65520.
                h += 1;
            }
            return Half(sign | h);
        }

        // Subnormal or zero result. f64 subnormals are far below 2^-25.
        if exp == 0 {
            return Half(sign);
        }
        let full = man | (1u64 << 52);
        let shift = (28 - e) as u32;
        if shift >= 64 {
            return Half(sign);
        }
        let q = (full >> shift) as u16;
        let rem = full & ((1u64 << shift) - 1);
        let halfway = 1u64 << (shift - 1);
        let mut h = q;
        if rem > halfway || (rem == halfway && (h & 1) == 1) {
            h += 1;
        }
        Half(sign | h)
    }

    #[inline]
    pub fn from_f32(x: f32) -> Half {
        Half::from_f64(x as f64)
    }

    pub fn to_f32(self) -> f32 {
        let sign = ((self.0 & 0x8000) as u32) << 16;
        let exp = ((self.0 >> 10) & 0x1F) as u32;
        let man = (self.0 & 0x03FF) as u32;
        let bits = match exp {
            0 => {
                if man == 0 {
                    sign
                } else {
                    // Subnormal: value = man * 2^-24, exactly representable.
                    let v = man as f32 * f32::from_bits(0x3380_0000);
                    sign | v.to_bits()
                }
            }
            0x1F => sign | 0x7F80_0000 | (man << 13),
            _ => sign | ((exp + 112) << 23) | (man << 13),
        };
        f32::from_bits(bits)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f32() as f64
    }

    pub fn is_nan(self) -> bool {
        (self.0 & 0x7C00) == 0x7C00 && (self.0 & 0x03FF) != 0
    }

    pub fn is_infinite(self) -> bool {
        (self.0 & 0x7FFF) == 0x7C00
    }

    pub fn is_finite(self) -> bool {
        (self.0 & 0x7C00) != 0x7C00
    }
}

impl std::ops::Add for Half {
    type Output = Half;

    #[inline]
    fn add(self, rhs: Half) -> Half {
        Half::from_f64(self.to_f64() + rhs.to_f64())
    }
}

impl std::ops::Mul for Half {
    type Output = Half;

    #[inline]
    fn mul(self, rhs: Half) -> Half {
        Half::from_f64(self.to_f64() * rhs.to_f64())
    }
}

/// Smallest positive normal binary16 value, 2^-14.
const MIN_NORMAL: f64 = 6.103515625e-05;
/// Values at or above this magnitude round to infinity.
const OVERFLOW: f64 = 65520.0;
const SUB_SCALE: f64 = 16777216.0;

/// Rounds `x` to the nearest binary16 value and returns it widened to `f32`.
///
/// Branch-free equivalent of `Half::from_f64(x).to_f32()`, written so the
/// compiler can vectorize loops over it.
#[inline(always)]
pub fn round_to_half(x: f64) -> f32 {
    let b = x.to_bits();
    // Keep 11 significant bits, ties to even, directly on the bit pattern.
    let normal = f64::from_bits((b + ((1 << 41) - 1) + ((b >> 42) & 1)) & !((1u64 << 42) - 1));
    // Below 2^-14 the grid is a fixed 2^-24.
    let sub = (x * SUB_SCALE).round_ties_even() / SUB_SCALE;
    let a = x.abs();
    let r = if a < MIN_NORMAL { sub } else { normal };
    let r = if a >= OVERFLOW { f64::INFINITY.copysign(x) } else { r };
    if x.is_nan() {
        f32::NAN
    } else {
        r as f32
    }
}

/// [`round_to_half`] for an `f32` input.
///
/// Exact for sums and products of two binary16 values: single precision
/// carries at least `2 * 11 + 2` significant bits, so rounding there first
/// and then to binary16 gives the same result as rounding the exact value.
#[inline(always)]
pub fn round_to_half_f32(x: f32) -> f32 {
    let b = x.to_bits();
    let normal = f32::from_bits((b + 0x0FFF + ((b >> 13) & 1)) & !0x1FFF);
    let sub = (x * SUB_SCALE as f32).round_ties_even() / SUB_SCALE as f32;
    let a = x.abs();
    let r = if a < MIN_NORMAL as f32 { sub } else { normal };
    let r = if a >= OVERFLOW as f32 { f32::INFINITY.copysign(x) } else { r };
    if x.is_nan() {
        f32::NAN
    } else {
        r
    }
}

impl From<Half> for f32 {
    fn from(h: Half) -> f32 {
        h.to_f32()
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({:#06x} = {})", self.0, self.to_f32())
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}
