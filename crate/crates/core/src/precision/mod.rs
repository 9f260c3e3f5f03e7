//! Numeric regimes for the inference path.
//!
//! Three storage precisions are modelled: native `f32`, IEEE binary16, and
//! Q3.12 fixed point with binary16 accumulation. Values at a reduced
//! precision are carried around as `f32` holding an exactly representable
//! grid value, so the rest of the engine needs only one element type.
//!
//! A support is always accumulated in the same order whatever the mode:
//! bias first, then `w * x` terms in connection order. Under `Strict` every
//! product and every running sum is rounded to binary16; under
//! `StorageOnly` only the final value is.

mod fixed;
mod half;

use std::fmt;
use std::str::FromStr;

pub use fixed::{round_to_q312, Fixed16};
pub use half::{round_to_half, round_to_half_f32, Half};

use crate::error::{Error, Result};
use crate::network::{NetworkState, Projection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    Fp32,
    Fp16,
    MixedQ312,
}

impl Precision {
    /// On-disk tag.
    pub fn tag(self) -> u8 {
        match self {
            Precision::Fp32 => 0,
            Precision::Fp16 => 1,
            Precision::MixedQ312 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Precision> {
        match tag {
            0 => Some(Precision::Fp32),
            1 => Some(Precision::Fp16),
            2 => Some(Precision::MixedQ312),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::MixedQ312 => "mixed",
        }
    }

    /// Bytes per stored parameter.
    pub fn element_bytes(self) -> usize {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 | Precision::MixedQ312 => 2,
        }
    }

    /// Default support-accumulation lane width (values per step).
    pub fn default_parallel_factor(self) -> usize {
        match self {
            Precision::Fp32 => 8,
            Precision::Fp16 | Precision::MixedQ312 => 16,
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "float" => Ok(Precision::Fp32),
            "fp16" | "half" => Ok(Precision::Fp16),
            "mixed" | "mixedq312" | "q312" => Ok(Precision::MixedQ312),
            _ => Err(format!("unknown precision {s:?} (expected fp32, fp16 or mixed)")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Strictness {
    /// Round after every arithmetic operation.
    #[default]
    Strict,
    /// Round on load and store only; arithmetic runs in `f32`.
    StorageOnly,
}

impl Strictness {
    pub fn tag(self) -> u8 {
        match self {
            Strictness::Strict => 0,
            Strictness::StorageOnly => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Strictness> {
        match tag {
            0 => Some(Strictness::Strict),
            1 => Some(Strictness::StorageOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strictness::Strict => "strict",
            Strictness::StorageOnly => "storage",
        }
    }
}

impl FromStr for Strictness {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Strictness::Strict),
            "storage" | "storage-only" => Ok(Strictness::StorageOnly),
            _ => Err(format!("unknown strictness {s:?} (expected strict or storage)")),
        }
    }
}

/// A precision together with its rounding discipline. `Fp32` ignores strictness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrecisionMode {
    pub precision: Precision,
    pub strictness: Strictness,
}

impl PrecisionMode {
    pub const FP32: PrecisionMode = PrecisionMode {
        precision: Precision::Fp32,
        strictness: Strictness::Strict,
    };
    pub const FP16: PrecisionMode = PrecisionMode {
        precision: Precision::Fp16,
        strictness: Strictness::Strict,
    };
    pub const MIXED: PrecisionMode = PrecisionMode {
        precision: Precision::MixedQ312,
        strictness: Strictness::Strict,
    };

    pub fn new(precision: Precision, strictness: Strictness) -> PrecisionMode {
        PrecisionMode {
            precision,
            strictness,
        }
    }

    pub fn with_strictness(self, strictness: Strictness) -> PrecisionMode {
        PrecisionMode { strictness, ..self }
    }

    pub fn is_reduced(self) -> bool {
        self.precision != Precision::Fp32
    }

    pub(crate) fn rounds_every_op(self) -> bool {
        self.is_reduced() && self.strictness == Strictness::Strict
    }

    /// Rounds a value onto the storage grid of this mode.
    #[inline]
    pub fn store(self, x: f64) -> f32 {
        match self.precision {
            Precision::Fp32 => x as f32,
            Precision::Fp16 => round_to_half(x),
            Precision::MixedQ312 => round_to_q312(x),
        }
    }

    /// Rounds the result of an accumulation or transcendental. Mixed mode
    /// computes in binary16, so only `Fp32` differs from [`round_to_half`].
    #[inline]
    pub fn compute(self, x: f64) -> f32 {
        match self.precision {
            Precision::Fp32 => x as f32,
            Precision::Fp16 | Precision::MixedQ312 => round_to_half(x),
        }
    }

    /// Starts an accumulator from a bias term (`bias * 1`).
    #[inline]
    pub(crate) fn acc_init(self, bias: f32) -> f32 {
        if self.rounds_every_op() {
            round_to_half(bias as f64)
        } else {
            bias
        }
    }

    /// `acc[j] += w[j] * x` for every lane, under this mode's rounding rules.
    #[inline(always)]
    pub(crate) fn axpy(self, acc: &mut [f32], w: &[f32], x: f32) {
        debug_assert_eq!(acc.len(), w.len());
        if self.rounds_every_op() {
            if self.precision == Precision::Fp16 {
                // Both operands sit on the binary16 grid, so single precision
                // is wide enough for every intermediate.
                for (a, &w) in acc.iter_mut().zip(w) {
                    let p = round_to_half_f32(w * x);
                    *a = round_to_half_f32(*a + p);
                }
            } else {
                // Q3.12 operands carry up to 15 significant bits each.
                let x = x as f64;
                for (a, &w) in acc.iter_mut().zip(w) {
                    let p = round_to_half(w as f64 * x);
                    *a = round_to_half_f32(*a + p);
                }
            }
        } else {
            for (a, &w) in acc.iter_mut().zip(w) {
                *a += w * x;
            }
        }
    }

    /// Finishes an accumulator into a stored support value.
    #[inline]
    pub(crate) fn acc_finish(self, acc: f32) -> f32 {
        match (self.precision, self.strictness) {
            (Precision::Fp32, _) | (_, Strictness::Strict) => acc,
            (_, Strictness::StorageOnly) => round_to_half(acc as f64),
        }
    }
}

impl Default for PrecisionMode {
    fn default() -> Self {
        PrecisionMode::FP32
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.precision, self.strictness) {
            (Precision::Fp32, _) | (_, Strictness::Strict) => f.write_str(self.precision.name()),
            (p, s) => write!(f, "{}:{}", p.name(), s.name()),
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = String;

    /// Accepts `fp32`, `fp16`, `mixed`, optionally suffixed with `:strict` or `:storage`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (p, st) = match s.split_once(':') {
            Some((p, st)) => (p, st.parse()?),
            None => (s, Strictness::Strict),
        };
        Ok(PrecisionMode::new(p.trim().parse()?, st))
    }
}

/// Dot product of two stored-precision vectors under `mode`.
///
/// Operands are first brought onto the mode's storage grid (a no-op for
/// values that already live there).
pub fn reduced_dot(weights: &[f32], activations: &[f32], mode: PrecisionMode) -> Result<f64> {
    if weights.len() != activations.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: activations.len(),
        });
    }
    let mut acc = [mode.acc_init(0.0)];
    for (&w, &a) in weights.iter().zip(activations) {
        let w = mode.store(w as f64);
        let a = mode.store(a as f64);
        mode.axpy(&mut acc, &[w], a);
    }
    Ok(mode.acc_finish(acc[0]) as f64)
}

/// Counts of parameters that had to be clamped when quantizing to Q3.12.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuantizationStats {
    pub saturated: usize,
    pub total: usize,
}

impl QuantizationStats {
    fn merge(&mut self, other: QuantizationStats) {
        self.saturated += other.saturated;
        self.total += other.total;
    }
}

fn quantize_slice(values: &mut [f32], precision: Precision) -> QuantizationStats {
    let mut stats = QuantizationStats {
        saturated: 0,
        total: values.len(),
    };
    match precision {
        Precision::Fp32 => {}
        Precision::Fp16 => values
            .iter_mut()
            .for_each(|v| *v = round_to_half(*v as f64)),
        Precision::MixedQ312 => {
            for v in values.iter_mut() {
                let (q, sat) = Fixed16::from_f64_checked(*v as f64);
                stats.saturated += sat as usize;
                *v = q.to_f32();
            }
        }
    }
    stats
}

fn quantize_projection(p: &mut Projection, precision: Precision) -> QuantizationStats {
    let mut stats = quantize_slice(&mut p.weights, precision);
    stats.merge(quantize_slice(&mut p.biases, precision));
    stats
}

/// Returns a copy of `net` whose weights and biases sit on the storage grid
/// of `mode`. `Fp32` is the identity.
pub fn cast_model(net: &NetworkState, mode: PrecisionMode) -> (NetworkState, QuantizationStats) {
    let mut out = net.clone();
    let mut stats = QuantizationStats::default();
    if mode.precision != Precision::Fp32 && out.stored_precision != mode.precision {
        stats.merge(quantize_projection(&mut out.input_hidden, mode.precision));
        stats.merge(quantize_projection(&mut out.hidden_output, mode.precision));
        out.stored_precision = mode.precision;
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        assert_eq!("fp16".parse::<PrecisionMode>().unwrap(), PrecisionMode::FP16);
        let m: PrecisionMode = "mixed:storage".parse().unwrap();
        assert_eq!(m.precision, Precision::MixedQ312);
        assert_eq!(m.strictness, Strictness::StorageOnly);
        assert_eq!(m.to_string(), "mixed:storage");
        assert!("fp8".parse::<PrecisionMode>().is_err());
    }

    #[test]
    fn zero_vectors() {
        for mode in [PrecisionMode::FP32, PrecisionMode::FP16, PrecisionMode::MIXED] {
            assert_eq!(reduced_dot(&[0.0; 7], &[0.0; 7], mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn quarter_sum_is_exact() {
        let d = reduced_dot(&[1.0; 4], &[0.25; 4], PrecisionMode::FP16).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn half_accumulation_stalls_past_2048() {
        let ones = vec![1.0f32; 2048];
        assert_eq!(reduced_dot(&ones, &ones, PrecisionMode::FP16).unwrap(), 2048.0);
        let ones = vec![1.0f32; 2100];
        // 2048 + 1 is a tie that rounds back to the even 2048.
        assert_eq!(reduced_dot(&ones, &ones, PrecisionMode::FP16).unwrap(), 2048.0);
        // f32 accumulates them all.
        assert_eq!(reduced_dot(&ones, &ones, PrecisionMode::FP32).unwrap(), 2100.0);
        // Storage-only accumulates in f32 and rounds once at the end.
        let storage = PrecisionMode::FP16.with_strictness(Strictness::StorageOnly);
        assert_eq!(reduced_dot(&ones, &ones, storage).unwrap(), 2100.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            reduced_dot(&[1.0], &[1.0, 2.0], PrecisionMode::FP32),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn mixed_quantizes_operands() {
        // 10.0 saturates to 8 - 2^-12 before multiplying.
        let d = reduced_dot(&[10.0], &[1.0], PrecisionMode::MIXED).unwrap();
        assert_eq!(d, round_to_half(8.0 - 1.0 / 4096.0) as f64);
    }
}
