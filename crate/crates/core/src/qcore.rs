//! Group-quantized weight storage and the two matrix-unit compute paths.
//!
//! The low-precision path ([`lunit_matvec`]) never dequantizes a weight: it
//! aligns the activation block to a shared exponent, takes an integer dot
//! product against the raw codes, removes the zero point with a single
//! `vsum * z` correction and applies the group scale once:
//!
//! ```text
//! res = (Σ value_k · w_k − vsum · z) · s · 2^(max_exp − 15 − 10)
//! ```
//!
//! The `− 10` accounts for the 10 fractional bits of the aligned `{1, mantissa}`
//! significands. The high-precision path ([`hunit_lora_matvec`]) runs the
//! FP8 adapter pair `B · (A · x)` in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    align_block, decode_fp16, decode_fp8, encode_fp16, encode_fp8, pow2, AlignedBlock, Fp16Bits, Fp8Bits, Fp8Format,
    NumericsError,
};

/// Number of weights sharing one scale and zero point.
pub const GROUP_SIZE: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcoreError {
    #[error("non-finite weight value")]
    NonFinite,
    #[error("a group holds 1..={GROUP_SIZE} values, got {0}")]
    GroupLength(usize),
    #[error("group scale {0} is not representable in FP16")]
    ScaleOverflow(f64),
    #[error("code {code} does not fit in {bits} bits")]
    CodeOutOfRange { code: u8, bits: u32 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("mixed bit widths inside one matrix")]
    MixedBitWidth,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Storage width of base-model weight codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitWidth {
    Int2,
    Int4,
}

impl BitWidth {
    pub fn bits(self) -> u32 {
        match self {
            BitWidth::Int2 => 2,
            BitWidth::Int4 => 4,
        }
    }

    pub fn max_code(self) -> u8 {
        ((1u32 << self.bits()) - 1) as u8
    }

    /// Bytes taken by the packed codes of one group.
    pub fn packed_group_bytes(self) -> usize {
        (GROUP_SIZE * self.bits() as usize).div_ceil(8)
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            2 => Ok(BitWidth::Int2),
            4 => Ok(BitWidth::Int4),
            other => Err(format!("unsupported bit width {other} (expected 2 or 4)")),
        }
    }
}

impl From<BitWidth> for u8 {
    fn from(b: BitWidth) -> u8 {
        b.bits() as u8
    }
}

/// One quantization group: FP16 scale `s`, zero point `z` and 128 codes `w`.
/// The real weight is `(w − z) · s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantGroup {
    pub scale: Fp16Bits,
    pub zero: u8,
    pub weights: [u8; GROUP_SIZE],
    pub bits: BitWidth,
}

impl QuantGroup {
    pub fn new(scale: Fp16Bits, zero: u8, weights: [u8; GROUP_SIZE], bits: BitWidth) -> Result<Self, QcoreError> {
        decode_fp16(scale)?;
        let max = bits.max_code();
        if let Some(&code) = weights.iter().chain(std::iter::once(&zero)).find(|&&c| c > max) {
            return Err(QcoreError::CodeOutOfRange { code, bits: bits.bits() });
        }
        Ok(Self { scale, zero, weights, bits })
    }

    pub fn scale_value(&self) -> f64 {
        decode_fp16(self.scale).expect("validated at construction")
    }

    pub fn dequantize(&self) -> [f64; GROUP_SIZE] {
        let s = self.scale_value();
        let z = self.zero as i32;
        self.weights.map(|w| (w as i32 - z) as f64 * s)
    }
}

/// Asymmetric min-max quantization of up to 128 values.
///
/// The range is widened to include zero, so `z` always lands inside the code
/// range. A partial group is padded with `w = z`, which dequantizes to 0.
pub fn quantize_group(values: &[f64], bits: BitWidth) -> Result<QuantGroup, QcoreError> {
    if values.is_empty() || values.len() > GROUP_SIZE {
        return Err(QcoreError::GroupLength(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(QcoreError::NonFinite);
    }
    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let hi = values.iter().copied().fold(0.0f64, f64::max);
    let qmax = bits.max_code() as f64;

    let scale = if hi == lo {
        Fp16Bits::ONE
    } else {
        let raw = (hi - lo) / qmax;
        match encode_fp16(raw) {
            Ok(s) if s.is_zero() => Fp16Bits(0x0001),
            Ok(s) => s,
            Err(_) => return Err(QcoreError::ScaleOverflow(raw)),
        }
    };
    let s = decode_fp16(scale)?;
    let zero = (-lo / s).round().clamp(0.0, qmax) as u8;
    let mut weights = [zero; GROUP_SIZE];
    for (w, &x) in weights.iter_mut().zip(values) {
        *w = ((x / s).round() + zero as f64).clamp(0.0, qmax) as u8;
    }
    Ok(QuantGroup { scale, zero, weights, bits })
}

/// Row-major matrix of quantization groups, `⌈cols / 128⌉` groups per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantMatrix {
    rows: usize,
    cols: usize,
    bits: BitWidth,
    groups: Vec<QuantGroup>,
}

impl QuantMatrix {
    pub fn groups_per_row_for(cols: usize) -> usize {
        cols.div_ceil(GROUP_SIZE)
    }

    /// Quantize a row-major `rows × cols` matrix.
    pub fn quantize(rows: usize, cols: usize, data: &[f64], bits: BitWidth) -> Result<Self, QcoreError> {
        if data.len() != rows * cols {
            return Err(QcoreError::Shape { expected: rows * cols, got: data.len() });
        }
        let mut groups = Vec::with_capacity(rows * Self::groups_per_row_for(cols));
        for row in data.chunks(cols.max(1)).take(rows) {
            for chunk in row.chunks(GROUP_SIZE) {
                groups.push(quantize_group(chunk, bits)?);
            }
        }
        Self::from_groups(rows, cols, bits, groups)
    }

    pub fn from_groups(rows: usize, cols: usize, bits: BitWidth, groups: Vec<QuantGroup>) -> Result<Self, QcoreError> {
        let expected = rows * Self::groups_per_row_for(cols);
        if groups.len() != expected {
            return Err(QcoreError::Shape { expected, got: groups.len() });
        }
        if groups.iter().any(|g| g.bits != bits) {
            return Err(QcoreError::MixedBitWidth);
        }
        Ok(Self { rows, cols, bits, groups })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> BitWidth {
        self.bits
    }

    pub fn groups_per_row(&self) -> usize {
        Self::groups_per_row_for(self.cols)
    }

    pub fn groups(&self) -> &[QuantGroup] {
        &self.groups
    }

    pub fn group(&self, row: usize, g: usize) -> &QuantGroup {
        &self.groups[row * self.groups_per_row() + g]
    }

    /// Dequantized values of one row (padding dropped).
    pub fn dequantize_row(&self, row: usize) -> Vec<f64> {
        let gpr = self.groups_per_row();
        let mut out: Vec<f64> = self.groups[row * gpr..(row + 1) * gpr].iter().flat_map(|g| g.dequantize()).collect();
        out.truncate(self.cols);
        out
    }

    /// Dequantized row-major matrix.
    pub fn dequantize(&self) -> Vec<f64> {
        (0..self.rows).flat_map(|r| self.dequantize_row(r)).collect()
    }
}

/// Exact integer part of the group dot product, `Σ value·w − vsum·z`.
///
/// With 11-bit activations and codes of at most 4 bits the magnitude stays
/// below `2 · 128 · 2047 · 15 < 2^23`, so `i32` cannot overflow.
pub fn lunit_group_int(aligned: &AlignedBlock, group: &QuantGroup) -> Result<i32, QcoreError> {
    if aligned.len() != GROUP_SIZE {
        return Err(QcoreError::Shape { expected: GROUP_SIZE, got: aligned.len() });
    }
    let dot: i32 = aligned.values.iter().zip(group.weights.iter()).map(|(&v, &w)| v * w as i32).sum();
    Ok(dot - aligned.vsum as i32 * group.zero as i32)
}

/// One L-Unit group result: integer dot product, zero-point correction, then
/// the group scale and the block's shared exponent.
pub fn lunit_group_dot(aligned: &AlignedBlock, group: &QuantGroup) -> Result<f64, QcoreError> {
    let int = lunit_group_int(aligned, group)?;
    Ok(int as f64 * group.scale_value() * pow2(aligned.scale_exponent()))
}

/// Align `acts` in 128-wide blocks, zero-padding the tail block.
pub fn align_columns(acts: &[Fp16Bits]) -> Result<Vec<AlignedBlock>, QcoreError> {
    acts.chunks(GROUP_SIZE)
        .map(|chunk| {
            let mut block = [Fp16Bits::ZERO; GROUP_SIZE];
            block[..chunk.len()].copy_from_slice(chunk);
            Ok(align_block(&block)?)
        })
        .collect()
}

/// Quantized matrix-vector product on the L-Unit path. Each 128-column block
/// of activations is aligned once and shared by every row; per-row partials
/// accumulate in `f64` in group order.
pub fn lunit_matvec(m: &QuantMatrix, acts: &[Fp16Bits]) -> Result<Vec<f64>, QcoreError> {
    if acts.len() != m.cols {
        return Err(QcoreError::Shape { expected: m.cols, got: acts.len() });
    }
    let blocks = align_columns(acts)?;
    let gpr = m.groups_per_row();
    (0..m.rows)
        .map(|r| {
            let row = &m.groups[r * gpr..(r + 1) * gpr];
            row.iter().zip(&blocks).try_fold(0.0f64, |acc, (g, b)| Ok(acc + lunit_group_dot(b, g)?))
        })
        .collect()
}

/// FP8 LoRA adapter: `A` is `rank × cols`, `B` is `rows × rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    rows: usize,
    cols: usize,
    rank: usize,
    format: Fp8Format,
    a: Vec<Fp8Bits>,
    b: Vec<Fp8Bits>,
    a_val: Vec<f64>,
    b_val: Vec<f64>,
}

impl LoraPair {
    pub fn new(
        rows: usize,
        cols: usize,
        rank: usize,
        format: Fp8Format,
        a: Vec<Fp8Bits>,
        b: Vec<Fp8Bits>,
    ) -> Result<Self, QcoreError> {
        if a.len() != rank * cols {
            return Err(QcoreError::Shape { expected: rank * cols, got: a.len() });
        }
        if b.len() != rows * rank {
            return Err(QcoreError::Shape { expected: rows * rank, got: b.len() });
        }
        let a_val = a.iter().map(|&x| decode_fp8(x, format)).collect::<Result<_, _>>()?;
        let b_val = b.iter().map(|&x| decode_fp8(x, format)).collect::<Result<_, _>>()?;
        Ok(Self { rows, cols, rank, format, a, b, a_val, b_val })
    }

    /// Encode real-valued factors to FP8 (saturating).
    pub fn from_f64(
        rows: usize,
        cols: usize,
        rank: usize,
        format: Fp8Format,
        a: &[f64],
        b: &[f64],
    ) -> Result<Self, QcoreError> {
        let enc = |xs: &[f64]| -> Result<Vec<Fp8Bits>, QcoreError> {
            xs.iter().map(|&x| Ok(encode_fp8(x, format)?.bits)).collect()
        };
        Self::new(rows, cols, rank, format, enc(a)?, enc(b)?)
    }

    /// Rank-0 adapter contributing nothing.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, 0, Fp8Format::E4M3, Vec::new(), Vec::new()).expect("empty pair")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn format(&self) -> Fp8Format {
        self.format
    }

    pub fn a_bits(&self) -> &[Fp8Bits] {
        &self.a
    }

    pub fn b_bits(&self) -> &[Fp8Bits] {
        &self.b
    }

    /// Decoded `A`, row-major `rank × cols`.
    pub fn a_values(&self) -> &[f64] {
        &self.a_val
    }

    /// Decoded `B`, row-major `rows × rank`.
    pub fn b_values(&self) -> &[f64] {
        &self.b_val
    }

    /// Bytes the pair occupies in SRAM (one byte per FP8 element).
    pub fn sram_bytes(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// H-Unit adapter product `B · (A · x)`, accumulated left to right in `f64`.
pub fn hunit_lora_matvec(lora: &LoraPair, acts: &[Fp16Bits]) -> Result<Vec<f64>, QcoreError> {
    if acts.len() != lora.cols {
        return Err(QcoreError::Shape { expected: lora.cols, got: acts.len() });
    }
    let x: Vec<f64> = acts.iter().map(|&a| decode_fp16(a)).collect::<Result<_, _>>()?;
    let h: Vec<f64> = lora
        .a_val
        .chunks(lora.cols.max(1))
        .take(lora.rank)
        .map(|row| row.iter().zip(&x).fold(0.0, |acc, (w, v)| acc + w * v))
        .collect();
    Ok((0..lora.rows)
        .map(|o| lora.b_val[o * lora.rank..(o + 1) * lora.rank].iter().zip(&h).fold(0.0, |acc, (w, v)| acc + w * v))
        .collect())
}
