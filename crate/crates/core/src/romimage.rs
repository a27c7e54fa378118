//! On-disk images: the quantized base model destined for ROM and the FP8
//! LoRA adapters destined for SRAM.
//!
//! Both share one little-endian framing:
//!
//! ```text
//! offset  size  field
//!  0      4     magic "ROMA"
//!  4      2     format version (1)
//!  6      1     kind (0 = base ROM, 1 = LoRA)
//!  7      1     bit width (2 or 4 for base, 8 for LoRA)
//!  8      2     group size (128)
//! 10      1     FP8 format code (LoRA only, else 0)
//! 11      1     reserved (0)
//! 12      4     tensor count
//! 16      8     payload length
//! 24      4     CRC32 of the payload
//! 28      4     CRC32 of header bytes 0..28 followed by the directory
//! 32      ...   directory: per tensor
//!                 u16 name length, name (UTF-8), u32 rows, u32 cols,
//!                 u64 payload offset, u64 byte length
//! ...     ...   payload
//! ```
//!
//! A base tensor's payload is `rows · ⌈cols/128⌉` group records, row-major:
//! FP16 scale (2 bytes), zero point (1 byte), then `128·B/8` bytes of codes
//! with weight `i` at bit offset `i·B` of the little-endian byte stream.
//! A LoRA tensor is its FP8 bytes, row-major.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::config::{Attachment, ModelConfig};
use crate::numerics::{Fp16Bits, Fp8Bits, Fp8Format};
use crate::qcore::{BitWidth, LoraPair, QcoreError, QuantGroup, QuantMatrix, GROUP_SIZE};

pub const MAGIC: [u8; 4] = *b"ROMA";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

const KIND_BASE: u8 = 0;
const KIND_LORA: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("bad magic: not a ROMA image")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated directory")]
    TruncatedDirectory,
    #[error("header or directory checksum mismatch")]
    HeaderChecksum,
    #[error("invalid header field: {0}")]
    BadHeaderField(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("directory entries {0:?} and {1:?} overlap")]
    DirectoryOverlap(String, String),
    #[error("directory entry {0:?} lies outside the payload")]
    DirectoryOutOfRange(String),
    #[error("payload checksum mismatch")]
    PayloadChecksum,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("invalid tensor {name:?}: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("image does not match model config: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Quant(#[from] QcoreError),
}

impl ImageError {
    /// Stable machine-readable identifier of the error class.
    pub fn code(&self) -> &'static str {
        match self {
            ImageError::BadMagic => "bad_magic",
            ImageError::UnsupportedVersion(_) => "unsupported_version",
            ImageError::TruncatedHeader => "truncated_header",
            ImageError::TruncatedDirectory => "truncated_directory",
            ImageError::HeaderChecksum => "header_checksum",
            ImageError::BadHeaderField(_) => "bad_header_field",
            ImageError::TruncatedPayload { .. } => "truncated_payload",
            ImageError::TrailingBytes(_) => "trailing_bytes",
            ImageError::DirectoryOverlap(..) => "directory_overlap",
            ImageError::DirectoryOutOfRange(_) => "directory_out_of_range",
            ImageError::PayloadChecksum => "payload_checksum",
            ImageError::DuplicateName(_) => "duplicate_name",
            ImageError::InvalidTensor { .. } => "invalid_tensor",
            ImageError::ConfigMismatch(_) => "config_mismatch",
            ImageError::Quant(_) => "quantization",
        }
    }
}

/// Directory record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub rows: u32,
    pub cols: u32,
    pub offset: u64,
    pub length: u64,
}

impl TensorEntry {
    fn encoded_len(&self) -> usize {
        2 + self.name.len() + 4 + 4 + 8 + 8
    }
}

/// Raw framing shared by both image kinds.
#[derive(Debug, Clone, PartialEq)]
struct Container {
    kind: u8,
    bit_width: u8,
    group_size: u16,
    fp8_code: u8,
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Container {
    fn new(kind: u8, bit_width: u8, group_size: u16, fp8_code: u8) -> Self {
        Self { kind, bit_width, group_size, fp8_code, entries: Vec::new(), payload: Vec::new() }
    }

    fn push(&mut self, name: &str, rows: usize, cols: usize, bytes: &[u8]) -> Result<(), ImageError> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(ImageError::DuplicateName(name.to_string()));
        }
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(ImageError::InvalidTensor { name: name.into(), reason: "bad name length".into() });
        }
        let offset = self.payload.len() as u64;
        self.payload.extend_from_slice(bytes);
        self.entries.push(TensorEntry {
            name: name.to_string(),
            rows: rows as u32,
            cols: cols as u32,
            offset,
            length: bytes.len() as u64,
        });
        Ok(())
    }

    fn directory_len(&self) -> usize {
        self.entries.iter().map(TensorEntry::encoded_len).sum()
    }

    fn encoded_len(&self) -> usize {
        HEADER_LEN + self.directory_len() + self.payload.len()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind);
        out.push(self.bit_width);
        out.extend_from_slice(&self.group_size.to_le_bytes());
        out.push(self.fp8_code);
        out.push(0);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&self.payload).to_le_bytes());
        let mut dir = Vec::with_capacity(self.directory_len());
        for e in &self.entries {
            dir.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            dir.extend_from_slice(e.name.as_bytes());
            dir.extend_from_slice(&e.rows.to_le_bytes());
            dir.extend_from_slice(&e.cols.to_le_bytes());
            dir.extend_from_slice(&e.offset.to_le_bytes());
            dir.extend_from_slice(&e.length.to_le_bytes());
        }
        let mut h = crc32fast::Hasher::new();
        h.update(&out);
        h.update(&dir);
        out.extend_from_slice(&h.finalize().to_le_bytes());
        out.extend_from_slice(&dir);
        out.extend_from_slice(&self.payload);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() < MAGIC.len() {
            return Err(ImageError::TruncatedHeader);
        }
        if bytes[..4] != MAGIC {
            return Err(ImageError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(ImageError::TruncatedHeader);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u16().expect("header length checked");
        if version != FORMAT_VERSION {
            return Err(ImageError::UnsupportedVersion(version));
        }
        let kind = r.u8().unwrap();
        let bit_width = r.u8().unwrap();
        let group_size = r.u16().unwrap();
        let fp8_code = r.u8().unwrap();
        let reserved = r.u8().unwrap();
        let count = r.u32().unwrap() as usize;
        let payload_len = r.u64().unwrap();
        let payload_crc = r.u32().unwrap();
        let header_crc = r.u32().unwrap();

        let mut entries = Vec::new();
        for _ in 0..count {
            let entry = (|| {
                let name_len = r.u16()? as usize;
                let name = r.take(name_len)?.to_vec();
                Some((name, r.u32()?, r.u32()?, r.u64()?, r.u64()?))
            })()
            .ok_or(ImageError::TruncatedDirectory)?;
            let (name, rows, cols, offset, length) = entry;
            // checksum is verified before the name is trusted
            let name = String::from_utf8_lossy(&name).into_owned();
            entries.push(TensorEntry { name, rows, cols, offset, length });
        }
        let dir_end = r.pos;
        let mut h = crc32fast::Hasher::new();
        h.update(&bytes[..28]);
        h.update(&bytes[HEADER_LEN..dir_end]);
        if h.finalize() != header_crc {
            return Err(ImageError::HeaderChecksum);
        }
        if reserved != 0 || !matches!(kind, KIND_BASE | KIND_LORA) {
            return Err(ImageError::BadHeaderField(format!("kind {kind}, reserved {reserved}")));
        }

        let found = (bytes.len() - dir_end) as u64;
        if found < payload_len {
            return Err(ImageError::TruncatedPayload { expected: payload_len, found });
        }
        if found > payload_len {
            return Err(ImageError::TrailingBytes(found - payload_len));
        }

        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(ImageError::DuplicateName(e.name.clone()));
            }
            if e.offset.checked_add(e.length).is_none_or(|end| end > payload_len) {
                return Err(ImageError::DirectoryOutOfRange(e.name.clone()));
            }
        }
        let mut by_offset: Vec<&TensorEntry> = entries.iter().filter(|e| e.length > 0).collect();
        by_offset.sort_by_key(|e| e.offset);
        for pair in by_offset.windows(2) {
            if pair[0].offset + pair[0].length > pair[1].offset {
                return Err(ImageError::DirectoryOverlap(pair[0].name.clone(), pair[1].name.clone()));
            }
        }

        let payload = bytes[dir_end..].to_vec();
        if crc32fast::hash(&payload) != payload_crc {
            return Err(ImageError::PayloadChecksum);
        }
        Ok(Self { kind, bit_width, group_size, fp8_code, entries, payload })
    }

    fn tensor_bytes(&self, e: &TensorEntry) -> &[u8] {
        &self.payload[e.offset as usize..(e.offset + e.length) as usize]
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Serialized size of one group record.
pub fn group_record_bytes(bits: BitWidth) -> usize {
    3 + bits.packed_group_bytes()
}

fn encode_group(g: &QuantGroup, out: &mut Vec<u8>) {
    out.extend_from_slice(&g.scale.0.to_le_bytes());
    out.push(g.zero);
    let b = g.bits.bits() as usize;
    let start = out.len();
    out.resize(start + g.bits.packed_group_bytes(), 0);
    for (i, &w) in g.weights.iter().enumerate() {
        let bit = i * b;
        out[start + bit / 8] |= w << (bit % 8);
    }
}

fn decode_group(bytes: &[u8], bits: BitWidth) -> Result<QuantGroup, QcoreError> {
    let scale = Fp16Bits(u16::from_le_bytes([bytes[0], bytes[1]]));
    let zero = bytes[2];
    let b = bits.bits() as usize;
    let packed = &bytes[3..];
    let weights = std::array::from_fn(|i| (packed[i * b / 8] >> (i * b % 8)) & bits.max_code());
    QuantGroup::new(scale, zero, weights, bits)
}

/// A real-valued row-major matrix to be packed.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self { name: name.into(), rows, cols, data }
    }
}

/// The quantized base model as laid out in ROM.
#[derive(Debug, Clone, PartialEq)]
pub struct RomImage {
    bits: BitWidth,
    tensors: Vec<(String, QuantMatrix)>,
}

impl RomImage {
    pub fn new(bits: BitWidth) -> Self {
        Self { bits, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, m: QuantMatrix) -> Result<(), ImageError> {
        let name = name.into();
        if self.tensors.iter().any(|(n, _)| *n == name) {
            return Err(ImageError::DuplicateName(name));
        }
        if m.bits() != self.bits {
            return Err(ImageError::InvalidTensor { name, reason: "bit width differs from image".into() });
        }
        self.tensors.push((name, m));
        Ok(())
    }

    pub fn bits(&self) -> BitWidth {
        self.bits
    }

    /// Tensors in directory order.
    pub fn tensors(&self) -> &[(String, QuantMatrix)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&QuantMatrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Total number of stored weights (padding excluded).
    pub fn parameter_count(&self) -> u64 {
        self.tensors.iter().map(|(_, m)| (m.rows() * m.cols()) as u64).sum()
    }

    fn container(&self) -> Container {
        let mut c = Container::new(KIND_BASE, self.bits.bits() as u8, GROUP_SIZE as u16, 0);
        for (name, m) in &self.tensors {
            let mut bytes = Vec::with_capacity(m.groups().len() * group_record_bytes(self.bits));
            for g in m.groups() {
                encode_group(g, &mut bytes);
            }
            c.push(name, m.rows(), m.cols(), &bytes).expect("names unique by construction");
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.container().to_bytes()
    }

    /// Exact serialized size in bytes.
    pub fn footprint(&self) -> u64 {
        let dir: usize = self.tensors.iter().map(|(n, _)| 2 + n.len() + 24).sum();
        let payload: usize =
            self.tensors.iter().map(|(_, m)| m.groups().len()).sum::<usize>() * group_record_bytes(self.bits);
        (HEADER_LEN + dir + payload) as u64
    }
}

/// Quantize every matrix in 128-wide row groups. Output bytes depend only
/// on the inputs and their order.
pub fn pack_model(weights: &[NamedMatrix], bits: BitWidth) -> Result<RomImage, ImageError> {
    let mut image = RomImage::new(bits);
    for w in weights {
        if w.rows == 0 || w.cols == 0 || w.rows > u32::MAX as usize || w.cols > u32::MAX as usize {
            return Err(ImageError::InvalidTensor { name: w.name.clone(), reason: "bad shape".into() });
        }
        if image.tensor(&w.name).is_some() {
            return Err(ImageError::DuplicateName(w.name.clone()));
        }
        let m = QuantMatrix::quantize(w.rows, w.cols, &w.data, bits)
            .map_err(|e| ImageError::InvalidTensor { name: w.name.clone(), reason: e.to_string() })?;
        image.push(w.name.clone(), m)?;
    }
    Ok(image)
}

pub fn load_image(bytes: &[u8]) -> Result<RomImage, ImageError> {
    let c = Container::from_bytes(bytes)?;
    if c.kind != KIND_BASE {
        return Err(ImageError::BadHeaderField("expected a base-model image".into()));
    }
    let bits = BitWidth::try_from(c.bit_width).map_err(ImageError::BadHeaderField)?;
    if c.group_size as usize != GROUP_SIZE {
        return Err(ImageError::BadHeaderField(format!("group size {}", c.group_size)));
    }
    let record = group_record_bytes(bits);
    let mut image = RomImage::new(bits);
    for e in &c.entries {
        let (rows, cols) = (e.rows as usize, e.cols as usize);
        let groups = rows * QuantMatrix::groups_per_row_for(cols);
        if rows == 0 || cols == 0 || e.length != (groups * record) as u64 {
            return Err(ImageError::InvalidTensor {
                name: e.name.clone(),
                reason: format!("{} bytes do not hold {rows}x{cols} groups", e.length),
            });
        }
        let groups = c
            .tensor_bytes(e)
            .chunks(record)
            .map(|rec| decode_group(rec, bits))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|err| ImageError::InvalidTensor { name: e.name.clone(), reason: err.to_string() })?;
        image.push(e.name.clone(), QuantMatrix::from_groups(rows, cols, bits, groups)?)?;
    }
    Ok(image)
}

pub fn image_footprint(image: &RomImage) -> u64 {
    image.footprint()
}

pub fn fits_rom(image: &RomImage, rom_capacity_bytes: u64) -> bool {
    image.footprint() <= rom_capacity_bytes
}

/// Which tensors count against the ROM budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accounting {
    /// Every base tensor, embedding and head included.
    AllParams,
    /// Transformer blocks only; embedding, head and final norm live elsewhere.
    BlocksOnly,
}

/// Analytic payload size of a full-scale model, without materializing it.
pub fn model_rom_bytes(cfg: &ModelConfig, mode: Accounting) -> u64 {
    use crate::config::TensorRole;
    let record = group_record_bytes(cfg.bit_width) as u64;
    cfg.tensor_specs()
        .iter()
        .filter(|t| mode == Accounting::AllParams || t.role == TensorRole::Block)
        .map(|t| (t.rows * QuantMatrix::groups_per_row_for(t.cols)) as u64 * record)
        .sum()
}

/// FP8 adapters and their attachment points.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraImage {
    format: Fp8Format,
    adapters: BTreeMap<Attachment, LoraPair>,
}

impl LoraImage {
    pub fn new(format: Fp8Format) -> Self {
        Self { format, adapters: BTreeMap::new() }
    }

    pub fn insert(&mut self, at: Attachment, pair: LoraPair) -> Result<(), ImageError> {
        if pair.format() != self.format {
            return Err(ImageError::InvalidTensor { name: at.a_name(), reason: "FP8 format differs".into() });
        }
        if self.adapters.contains_key(&at) {
            return Err(ImageError::DuplicateName(at.a_name()));
        }
        self.adapters.insert(at, pair);
        Ok(())
    }

    pub fn format(&self) -> Fp8Format {
        self.format
    }

    pub fn adapters(&self) -> &BTreeMap<Attachment, LoraPair> {
        &self.adapters
    }

    pub fn get(&self, at: &Attachment) -> Option<&LoraPair> {
        self.adapters.get(at)
    }

    /// Largest adapter rank (0 when empty).
    pub fn rank(&self) -> usize {
        self.adapters.values().map(LoraPair::rank).max().unwrap_or(0)
    }

    /// SRAM bytes taken by all adapter weights.
    pub fn sram_bytes(&self) -> u64 {
        self.adapters.values().map(|p| p.sram_bytes() as u64).sum()
    }

    fn container(&self) -> Container {
        let mut c = Container::new(KIND_LORA, 8, GROUP_SIZE as u16, self.format.code());
        for (at, pair) in &self.adapters {
            let a: Vec<u8> = pair.a_bits().iter().map(|b| b.0).collect();
            let b: Vec<u8> = pair.b_bits().iter().map(|b| b.0).collect();
            c.push(&at.a_name(), pair.rank(), pair.cols(), &a).expect("unique");
            c.push(&at.b_name(), pair.rows(), pair.rank(), &b).expect("unique");
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.container().to_bytes()
    }

    pub fn footprint(&self) -> u64 {
        self.container().encoded_len() as u64
    }

    /// Every adapter must sit on an existing projection with matching shape
    /// and the configured rank.
    pub fn validate_against(&self, cfg: &ModelConfig) -> Result<(), ImageError> {
        for (at, pair) in &self.adapters {
            if at.layer >= cfg.layers {
                return Err(ImageError::ConfigMismatch(format!("{} targets missing layer", at.a_name())));
            }
            if !cfg.lora_targets.contains(&at.projection) {
                return Err(ImageError::ConfigMismatch(format!("{} is not a configured target", at.a_name())));
            }
            let (rows, cols) = cfg.projection_shape(at.projection);
            if (pair.rows(), pair.cols()) != (rows, cols) {
                return Err(ImageError::ConfigMismatch(format!(
                    "{}: adapter is {}x{}, projection is {rows}x{cols}",
                    at.a_name(),
                    pair.rows(),
                    pair.cols()
                )));
            }
            if pair.rank() != cfg.lora_rank {
                return Err(ImageError::ConfigMismatch(format!(
                    "{}: rank {} but config says {}",
                    at.a_name(),
                    pair.rank(),
                    cfg.lora_rank
                )));
            }
        }
        Ok(())
    }
}

pub fn load_lora_image(bytes: &[u8]) -> Result<LoraImage, ImageError> {
    let c = Container::from_bytes(bytes)?;
    if c.kind != KIND_LORA || c.bit_width != 8 {
        return Err(ImageError::BadHeaderField("expected an FP8 LoRA image".into()));
    }
    let format = Fp8Format::from_code(c.fp8_code)
        .ok_or_else(|| ImageError::BadHeaderField(format!("FP8 format code {}", c.fp8_code)))?;
    let mut halves: BTreeMap<Attachment, [Option<&TensorEntry>; 2]> = BTreeMap::new();
    for e in &c.entries {
        let (at, is_a) = Attachment::parse_name(&e.name).ok_or_else(|| ImageError::InvalidTensor {
            name: e.name.clone(),
            reason: "not a layers.<l>.<proj>.lora_a|lora_b name".into(),
        })?;
        if e.length != e.rows as u64 * e.cols as u64 {
            return Err(ImageError::InvalidTensor { name: e.name.clone(), reason: "length != rows x cols".into() });
        }
        halves.entry(at).or_default()[usize::from(!is_a)] = Some(e);
    }
    let mut image = LoraImage::new(format);
    for (at, pair) in halves {
        let [Some(a), Some(b)] = pair else {
            return Err(ImageError::InvalidTensor { name: at.a_name(), reason: "unpaired adapter half".into() });
        };
        let rank = a.rows as usize;
        if b.cols as usize != rank {
            return Err(ImageError::InvalidTensor { name: at.b_name(), reason: "rank mismatch".into() });
        }
        let bits = |e: &TensorEntry| c.tensor_bytes(e).iter().map(|&x| Fp8Bits(x)).collect::<Vec<_>>();
        let lp = LoraPair::new(b.rows as usize, a.cols as usize, rank, format, bits(a), bits(b))
            .map_err(|err| ImageError::InvalidTensor { name: at.a_name(), reason: err.to_string() })?;
        image.insert(at, lp)?;
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Projection;

    fn ramp(rows: usize, cols: usize, k: f64) -> Vec<f64> {
        (0..rows * cols).map(|i| (i as f64 * k).sin()).collect()
    }

    #[test]
    fn empty_model_is_header_only() {
        let img = pack_model(&[], BitWidth::Int4).unwrap();
        let bytes = img.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(image_footprint(&img), HEADER_LEN as u64);
        assert_eq!(load_image(&bytes).unwrap(), img);
    }

    #[test]
    fn single_group_record_layout() {
        let img = pack_model(&[NamedMatrix::new("w", 1, 128, ramp(1, 128, 0.3))], BitWidth::Int4).unwrap();
        let bytes = img.to_bytes();
        let dir = 2 + 1 + 24;
        assert_eq!(bytes.len(), HEADER_LEN + dir + 67);
        let g = &img.tensor("w").unwrap().groups()[0];
        let rec = &bytes[HEADER_LEN + dir..];
        assert_eq!(u16::from_le_bytes([rec[0], rec[1]]), g.scale.0);
        assert_eq!(rec[2], g.zero);
        // weight 1 sits in the high nibble of the first code byte
        assert_eq!(rec[3] & 0xF, g.weights[0]);
        assert_eq!(rec[3] >> 4, g.weights[1]);
    }

    #[test]
    fn int2_packing_positions() {
        let mut weights = [0u8; GROUP_SIZE];
        weights[0] = 1;
        weights[3] = 3;
        weights[5] = 2;
        let g = QuantGroup::new(Fp16Bits::ONE, 2, weights, BitWidth::Int2).unwrap();
        let mut out = Vec::new();
        encode_group(&g, &mut out);
        assert_eq!(out.len(), 35);
        assert_eq!(out[3], 0b1100_0001);
        assert_eq!(out[4], 0b0000_1000);
        assert_eq!(decode_group(&out, BitWidth::Int2).unwrap(), g);
    }

    #[test]
    fn pack_load_round_trip() {
        let ws = vec![NamedMatrix::new("a", 3, 200, ramp(3, 200, 0.7)), NamedMatrix::new("b", 1, 5, ramp(1, 5, 1.3))];
        for bits in [BitWidth::Int2, BitWidth::Int4] {
            let img = pack_model(&ws, bits).unwrap();
            let bytes = img.to_bytes();
            assert_eq!(bytes.len() as u64, img.footprint());
            let back = load_image(&bytes).unwrap();
            assert_eq!(back, img);
            assert_eq!(back.to_bytes(), bytes);
            let direct = QuantMatrix::quantize(3, 200, &ws[0].data, bits).unwrap();
            assert_eq!(back.tensor("a").unwrap().dequantize(), direct.dequantize());
        }
    }

    #[test]
    fn pack_errors() {
        let m = NamedMatrix::new("a", 1, 2, vec![0.0, 1.0]);
        assert_eq!(
            pack_model(&[m.clone(), m.clone()], BitWidth::Int2).unwrap_err(),
            ImageError::DuplicateName("a".into())
        );
        let nan = NamedMatrix::new("n", 1, 2, vec![0.0, f64::NAN]);
        assert_eq!(pack_model(&[nan], BitWidth::Int2).unwrap_err().code(), "invalid_tensor");
    }

    fn sample() -> Vec<u8> {
        pack_model(
            &[NamedMatrix::new("x", 2, 130, ramp(2, 130, 0.1)), NamedMatrix::new("y", 1, 128, ramp(1, 128, 0.2))],
            BitWidth::Int4,
        )
        .unwrap()
        .to_bytes()
    }

    #[test]
    fn corruption_classes() {
        let good = sample();
        let mut bad = good.clone();
        bad[0] ^= 0x20;
        assert_eq!(load_image(&bad).unwrap_err().code(), "bad_magic");

        let truncated = &good[..good.len() - 1];
        assert_eq!(load_image(truncated).unwrap_err().code(), "truncated_payload");

        assert_eq!(load_image(&good[..20]).unwrap_err().code(), "truncated_header");
        assert_eq!(load_image(&good[..HEADER_LEN + 3]).unwrap_err().code(), "truncated_directory");

        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(load_image(&bad).unwrap_err().code(), "unsupported_version");

        let mut bad = good.clone();
        *bad.last_mut().unwrap() ^= 1;
        assert_eq!(load_image(&bad).unwrap_err().code(), "payload_checksum");

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(load_image(&bad).unwrap_err().code(), "trailing_bytes");
    }

    #[test]
    fn overlapping_directory_detected() {
        let img = pack_model(
            &[NamedMatrix::new("x", 1, 8, ramp(1, 8, 0.1)), NamedMatrix::new("y", 1, 8, ramp(1, 8, 0.2))],
            BitWidth::Int4,
        )
        .unwrap();
        let mut c = img.container();
        c.entries[1].offset = 10;
        c.payload.truncate(10 + 67);
        assert_eq!(load_image(&c.to_bytes()).unwrap_err().code(), "directory_overlap");

        let mut c = img.container();
        c.entries[1].offset = 1000;
        assert_eq!(load_image(&c.to_bytes()).unwrap_err().code(), "directory_out_of_range");
    }

    #[test]
    fn every_header_and_directory_bit_flip_is_caught() {
        let good = sample();
        let dir_end = HEADER_LEN + 2 * (2 + 1 + 24);
        for byte in 0..dir_end {
            for bit in 0..8 {
                let mut bad = good.clone();
                bad[byte] ^= 1 << bit;
                assert!(load_image(&bad).is_err(), "flip at byte {byte} bit {bit} went unnoticed");
            }
        }
    }

    #[test]
    fn analytic_footprints() {
        let gib = (1u64 << 30) as f64;
        let b3 = model_rom_bytes(&ModelConfig::llama32_3b(), Accounting::AllParams) as f64;
        assert!((b3 / gib - 1.565).abs() < 0.01, "{}", b3 / gib);
        let b8 = model_rom_bytes(&ModelConfig::llama3_8b(), Accounting::BlocksOnly) as f64;
        assert!((b8 / 1e9 - 1.908).abs() < 0.01, "{}", b8 / 1e9);
    }

    fn toy_lora() -> LoraImage {
        let cfg = ModelConfig { lora_rank: 2, ..ModelConfig::toy() };
        let mut img = LoraImage::new(Fp8Format::E4M3);
        for at in cfg.attachments() {
            let (rows, cols) = cfg.projection_shape(at.projection);
            let a = ramp(2, cols, 0.05);
            let b = ramp(rows, 2, 0.11);
            img.insert(at, LoraPair::from_f64(rows, cols, 2, Fp8Format::E4M3, &a, &b).unwrap()).unwrap();
        }
        img
    }

    #[test]
    fn lora_round_trip_and_validation() {
        let img = toy_lora();
        let bytes = img.to_bytes();
        assert_eq!(bytes.len() as u64, img.footprint());
        let back = load_lora_image(&bytes).unwrap();
        assert_eq!(back, img);
        let cfg = ModelConfig { lora_rank: 2, ..ModelConfig::toy() };
        back.validate_against(&cfg).unwrap();
        assert_eq!(back.rank(), 2);

        let wrong_rank = ModelConfig { lora_rank: 3, ..cfg.clone() };
        assert_eq!(back.validate_against(&wrong_rank).unwrap_err().code(), "config_mismatch");
        let fewer = ModelConfig { lora_targets: vec![Projection::Q], ..cfg.clone() };
        assert!(back.validate_against(&fewer).is_err());
        let shallow = ModelConfig { layers: 1, ..cfg };
        assert!(back.validate_against(&shallow).is_err());

        // a base image is not a LoRA image and vice versa
        assert!(load_lora_image(&sample()).is_err());
        assert!(load_image(&bytes).is_err());
    }
}
