//! Scalar codecs for FP16 / FP8 and the shared-exponent alignment transform
//! that turns a block of FP16 activations into signed integers plus one
//! common exponent.
//!
//! Every FP16 and FP8 value is exactly representable as an `f64`, so the
//! decoders return `f64` and are exact. Encoders round to nearest, ties to
//! even.

use thiserror::Error;

/// Exponent bias of IEEE half precision.
pub const FP16_BIAS: i32 = 15;
/// Mantissa (fraction) width of IEEE half precision.
pub const FP16_MANTISSA_BITS: u32 = 10;
/// Largest magnitude an aligned integer value can take (`{1, mantissa}` is 11 bits).
pub const ALIGNED_MAX_MAGNITUDE: i32 = 2047;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("bit pattern {0:#06x} encodes NaN or infinity")]
    NonFinitePattern(u16),
    #[error("input value is NaN or infinite")]
    NonFiniteInput,
    #[error("value {0} overflows FP16 (max finite 65504)")]
    Overflow(f64),
    #[error("alignment block must contain at least one element")]
    EmptyBlock,
}

/// Raw IEEE-754 binary16 pattern: 1 sign, 5 exponent, 10 mantissa bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Fp16Bits(pub u16);

impl Fp16Bits {
    pub const ZERO: Fp16Bits = Fp16Bits(0);
    pub const ONE: Fp16Bits = Fp16Bits(0x3C00);
    pub const MAX: Fp16Bits = Fp16Bits(0x7BFF);

    pub fn sign(self) -> bool {
        self.0 & 0x8000 != 0
    }

    /// Raw 5-bit exponent field (0 for zero and denormals).
    pub fn exponent_field(self) -> u8 {
        ((self.0 >> 10) & 0x1F) as u8
    }

    pub fn mantissa(self) -> u16 {
        self.0 & 0x03FF
    }

    pub fn is_finite(self) -> bool {
        self.exponent_field() != 0x1F
    }

    pub fn is_zero(self) -> bool {
        self.0 & 0x7FFF == 0
    }

    /// Decode to the exact real value.
    pub fn to_f64(self) -> Result<f64, NumericsError> {
        decode_fp16(self)
    }

    /// Round-to-nearest-even conversion; errors on overflow or non-finite input.
    pub fn from_f64(x: f64) -> Result<Self, NumericsError> {
        encode_fp16(x)
    }
}

/// FP8 storage layout. E4M3 follows the OCP "fn" convention (no infinities,
/// a single NaN mantissa pattern, max finite 448); E5M2 is IEEE-like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Fp8Format {
    #[default]
    E4M3,
    E5M2,
}

impl Fp8Format {
    fn layout(self) -> Layout {
        match self {
            Fp8Format::E4M3 => Layout::E4M3,
            Fp8Format::E5M2 => Layout::E5M2,
        }
    }

    /// On-disk code used by the LoRA container.
    pub fn code(self) -> u8 {
        match self {
            Fp8Format::E4M3 => 0,
            Fp8Format::E5M2 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Fp8Format::E4M3),
            1 => Some(Fp8Format::E5M2),
            _ => None,
        }
    }

    /// Largest finite magnitude.
    pub fn max_finite(self) -> f64 {
        let l = self.layout();
        l.decode(l.max_finite()).expect("max finite code is finite")
    }
}

/// Raw FP8 pattern; its interpretation depends on the accompanying [`Fp8Format`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp8Bits(pub u8);

/// Result of an FP8 encode: the bit pattern plus a flag telling whether the
/// input magnitude was clamped to the largest finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp8Encoded {
    pub bits: Fp8Bits,
    pub saturated: bool,
}

/// Binary floating-point layout with an implicit leading one.
#[derive(Debug, Clone, Copy)]
struct Layout {
    exp_bits: u32,
    man_bits: u32,
    bias: i32,
    /// All-ones exponent reserved for Inf/NaN (IEEE). When false, only the
    /// all-ones exponent with all-ones mantissa is NaN.
    ieee_specials: bool,
}

impl Layout {
    const FP16: Layout = Layout { exp_bits: 5, man_bits: 10, bias: 15, ieee_specials: true };
    const E4M3: Layout = Layout { exp_bits: 4, man_bits: 3, bias: 7, ieee_specials: false };
    const E5M2: Layout = Layout { exp_bits: 5, man_bits: 2, bias: 15, ieee_specials: true };

    fn exp_mask(&self) -> u32 {
        (1 << self.exp_bits) - 1
    }

    fn man_mask(&self) -> u32 {
        (1 << self.man_bits) - 1
    }

    fn sign_bit(&self) -> u32 {
        1 << (self.exp_bits + self.man_bits)
    }

    fn is_special(&self, raw: u32) -> bool {
        let e = (raw >> self.man_bits) & self.exp_mask();
        let m = raw & self.man_mask();
        if self.ieee_specials {
            e == self.exp_mask()
        } else {
            e == self.exp_mask() && m == self.man_mask()
        }
    }

    /// Magnitude code of the largest finite value.
    fn max_finite(&self) -> u32 {
        if self.ieee_specials {
            ((self.exp_mask() - 1) << self.man_bits) | self.man_mask()
        } else {
            (self.exp_mask() << self.man_bits) | (self.man_mask() - 1)
        }
    }

    fn decode(&self, raw: u32) -> Option<f64> {
        if self.is_special(raw) {
            return None;
        }
        let e = ((raw >> self.man_bits) & self.exp_mask()) as i32;
        let m = raw & self.man_mask();
        let mag = if e == 0 {
            m as f64 * pow2(1 - self.bias - self.man_bits as i32)
        } else {
            (m | (1 << self.man_bits)) as f64 * pow2(e - self.bias - self.man_bits as i32)
        };
        Some(if raw & self.sign_bit() != 0 { -mag } else { mag })
    }

    /// Returns `(code, overflowed)`; on overflow the code is the max finite
    /// magnitude with the input's sign.
    fn encode(&self, x: f64) -> (u32, bool) {
        let sign = if x.is_sign_negative() { self.sign_bit() } else { 0 };
        let a = x.abs();
        let bits = a.to_bits();
        let f64_exp = ((bits >> 52) & 0x7FF) as i32;
        if f64_exp == 0 {
            // zero or an f64 denormal, far below every format's smallest step
            return (sign, false);
        }
        let e = f64_exp - 1023;
        let emin = 1 - self.bias;
        let step_exp = e.max(emin) - self.man_bits as i32;
        let scaled = a * pow2(-step_exp);
        // scaled < 2^(man_bits + 1), so the rounded significand fits a u32
        let m = scaled.round_ties_even() as u32;
        let code = if e < emin { m } else { (((e + self.bias) as u32) << self.man_bits) + (m - (1 << self.man_bits)) };
        if code > self.max_finite() {
            (sign | self.max_finite(), true)
        } else {
            (sign | code, false)
        }
    }
}

/// Exact power of two for exponents in the normal f64 range.
pub(crate) fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

pub fn decode_fp16(bits: Fp16Bits) -> Result<f64, NumericsError> {
    Layout::FP16.decode(bits.0 as u32).ok_or(NumericsError::NonFinitePattern(bits.0))
}

pub fn encode_fp16(x: f64) -> Result<Fp16Bits, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::NonFiniteInput);
    }
    match Layout::FP16.encode(x) {
        (_, true) => Err(NumericsError::Overflow(x)),
        (code, false) => Ok(Fp16Bits(code as u16)),
    }
}

pub fn decode_fp8(bits: Fp8Bits, format: Fp8Format) -> Result<f64, NumericsError> {
    format.layout().decode(bits.0 as u32).ok_or(NumericsError::NonFinitePattern(bits.0 as u16))
}

/// Saturating encode: out-of-range magnitudes clamp to the max finite value
/// and set [`Fp8Encoded::saturated`].
pub fn encode_fp8(x: f64, format: Fp8Format) -> Result<Fp8Encoded, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::NonFiniteInput);
    }
    let (code, saturated) = format.layout().encode(x);
    Ok(Fp8Encoded { bits: Fp8Bits(code as u8), saturated })
}

/// How the alignment shift treats the bits it drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    /// Plain right shift of the magnitude (truncation toward zero).
    #[default]
    Truncate,
    /// Add half an output step before shifting (round half away from zero).
    RoundHalfAway,
}

/// Shared-exponent integer view of a block of FP16 activations.
///
/// Element `k` represents `values[k] * 2^(max_exp - 25)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedBlock {
    pub values: Vec<i32>,
    /// Raw FP16 exponent field of the largest nonzero input, 0 if all are zero.
    pub max_exp: u8,
    pub vsum: i64,
}

impl AlignedBlock {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Exponent `e` such that element `k` equals `values[k] * 2^e`.
    pub fn scale_exponent(&self) -> i32 {
        self.max_exp as i32 - FP16_BIAS - FP16_MANTISSA_BITS as i32
    }

    /// Real value represented by element `k`.
    pub fn reconstruct(&self, k: usize) -> f64 {
        self.values[k] as f64 * pow2(self.scale_exponent())
    }
}

/// Signed fixed-point significand of one FP16 value: `{1, mantissa}` for
/// normals, `{mantissa, 0}` for denormals.
fn fixed_significand(x: Fp16Bits) -> u32 {
    let m = x.mantissa() as u32;
    if x.exponent_field() == 0 {
        m << 1
    } else {
        (1 << FP16_MANTISSA_BITS) | m
    }
}

pub fn align_block(acts: &[Fp16Bits]) -> Result<AlignedBlock, NumericsError> {
    align_block_with(acts, AlignMode::Truncate)
}

pub fn align_block_with(acts: &[Fp16Bits], mode: AlignMode) -> Result<AlignedBlock, NumericsError> {
    if acts.is_empty() {
        return Err(NumericsError::EmptyBlock);
    }
    if let Some(bad) = acts.iter().find(|a| !a.is_finite()) {
        return Err(NumericsError::NonFinitePattern(bad.0));
    }
    let max_exp = acts.iter().filter(|a| !a.is_zero()).map(|a| a.exponent_field()).max().unwrap_or(0);

    let mut vsum = 0i64;
    let values = acts
        .iter()
        .map(|&a| {
            let shift = (max_exp - a.exponent_field()) as u32;
            let vconv = fixed_significand(a);
            let mag = match mode {
                AlignMode::Truncate => vconv >> shift,
                AlignMode::RoundHalfAway if shift > 0 => (vconv + (1 << (shift - 1))) >> shift,
                AlignMode::RoundHalfAway => vconv,
            } as i32;
            let v = if a.sign() { -mag } else { mag };
            vsum += v as i64;
            v
        })
        .collect();
    Ok(AlignedBlock { values, max_exp, vsum })
}
