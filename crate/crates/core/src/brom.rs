//! Logic and cost models for constant storage.
//!
//! A standard ROM decodes the address to one-hot lines `A_0..A_{D-1}` and
//! forms every output bit as `R_j = OR_i (A_i & M_ij)`, one transistor per
//! set bit position, `D·W` in total. The block ROM groups the one-hot lines
//! in fours. Per block a candidate generator (CGen) produces all 16 possible
//! OR results `C_k = OR_i (A_{4b+i} & bit_i(k))`, and column `j` of block `b`
//! is hard-wired to the candidate selected by the 4-bit code
//! `k_j(b) = M_{4b..4b+3, j}`. The array then costs `(D/4)·(W + NUM_CGEN)`
//! transistors.
//!
//! The fused-cell model treats area as the larger of two independent
//! demands, base layer (transistors) and metal layer (routing).

use rand::Rng;
use thiserror::Error;

/// Address lines per block.
pub const BLOCK_SIZE: usize = 4;
/// Candidates produced per block.
pub const NUM_CANDIDATES: usize = 1 << BLOCK_SIZE;

/// One transistor per OR input over all 16 candidates: `Σ_k popcount(k)`.
pub const DEFAULT_NUM_CGEN: u64 = {
    let mut sum = 0u64;
    let mut k = 0u32;
    while k < NUM_CANDIDATES as u32 {
        sum += k.count_ones() as u64;
        k += 1;
    }
    sum
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BromError {
    #[error("depth and width must be at least 1 (got {depth}x{width})")]
    EmptyArray { depth: usize, width: usize },
    #[error("expected {expected} bits, got {got}")]
    BitCount { expected: usize, got: usize },
    #[error("address {addr} out of range for depth {depth}")]
    AddressOutOfRange { addr: usize, depth: usize },
}

/// Contents `M_ij` of a `D × W` ROM, stored row-major as 64-bit limbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RomContents {
    depth: usize,
    width: usize,
    limbs_per_word: usize,
    limbs: Vec<u64>,
}

/// One `W`-bit output word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RomWord {
    width: usize,
    limbs: Vec<u64>,
}

impl RomWord {
    fn zeros(width: usize) -> Self {
        Self { width, limbs: vec![0; width.div_ceil(64)] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit(&self, j: usize) -> bool {
        self.limbs[j / 64] >> (j % 64) & 1 == 1
    }

    fn set(&mut self, j: usize) {
        self.limbs[j / 64] |= 1 << (j % 64);
    }

    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    /// Low 64 bits of the word.
    pub fn as_u64(&self) -> u64 {
        self.limbs[0]
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|&l| l == 0)
    }
}

impl RomContents {
    pub fn zeros(depth: usize, width: usize) -> Result<Self, BromError> {
        if depth == 0 || width == 0 {
            return Err(BromError::EmptyArray { depth, width });
        }
        let limbs_per_word = width.div_ceil(64);
        Ok(Self { depth, width, limbs_per_word, limbs: vec![0; depth * limbs_per_word] })
    }

    /// Row-major `depth × width` bit matrix.
    pub fn from_bits(depth: usize, width: usize, bits: &[bool]) -> Result<Self, BromError> {
        let mut rom = Self::zeros(depth, width)?;
        if bits.len() != depth * width {
            return Err(BromError::BitCount { expected: depth * width, got: bits.len() });
        }
        for (idx, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            rom.set(idx / width, idx % width, true);
        }
        Ok(rom)
    }

    /// Words of at most 64 bits; higher bits beyond `width` are ignored.
    pub fn from_words(width: usize, words: &[u64]) -> Result<Self, BromError> {
        let mut rom = Self::zeros(words.len(), width.min(64))?;
        let mask = if width >= 64 { u64::MAX } else { (1u64 << width) - 1 };
        for (i, &w) in words.iter().enumerate() {
            rom.limbs[i] = w & mask;
        }
        Ok(rom)
    }

    pub fn random<R: Rng + ?Sized>(depth: usize, width: usize, rng: &mut R) -> Result<Self, BromError> {
        let mut rom = Self::zeros(depth, width)?;
        let tail = width % 64;
        for (i, limb) in rom.limbs.iter_mut().enumerate() {
            *limb = rng.gen();
            if tail != 0 && i % rom.limbs_per_word == rom.limbs_per_word - 1 {
                *limb &= (1u64 << tail) - 1;
            }
        }
        Ok(rom)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.limbs[i * self.limbs_per_word + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let limb = &mut self.limbs[i * self.limbs_per_word + j / 64];
        if value {
            *limb |= 1 << (j % 64);
        } else {
            *limb &= !(1 << (j % 64));
        }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.limbs[i * self.limbs_per_word..(i + 1) * self.limbs_per_word]
    }

    /// Plain table lookup, the reference both read paths are checked against.
    pub fn word(&self, addr: usize) -> Result<RomWord, BromError> {
        self.check(addr)?;
        Ok(RomWord { width: self.width, limbs: self.row(addr).to_vec() })
    }

    /// Copy padded with zero words up to a multiple of [`BLOCK_SIZE`].
    pub fn padded_to_blocks(&self) -> RomContents {
        let depth = self.depth.div_ceil(BLOCK_SIZE) * BLOCK_SIZE;
        let mut limbs = self.limbs.clone();
        limbs.resize(depth * self.limbs_per_word, 0);
        RomContents { depth, width: self.width, limbs_per_word: self.limbs_per_word, limbs }
    }

    fn check(&self, addr: usize) -> Result<(), BromError> {
        if addr >= self.depth {
            Err(BromError::AddressOutOfRange { addr, depth: self.depth })
        } else {
            Ok(())
        }
    }
}

/// Address decoder: one-hot lines `A_0..A_{depth-1}`.
pub fn decode_address(addr: usize, depth: usize) -> Vec<bool> {
    (0..depth).map(|i| i == addr).collect()
}

/// Standard ROM read through the one-hot/OR array, 64 columns at a time.
pub fn rom_read_standard(rom: &RomContents, addr: usize) -> Result<RomWord, BromError> {
    rom.check(addr)?;
    let lines = decode_address(addr, rom.depth);
    let mut out = RomWord::zeros(rom.width);
    for (i, &a) in lines.iter().enumerate() {
        let gate = (a as u64).wrapping_neg();
        for (acc, &m) in out.limbs.iter_mut().zip(rom.row(i)) {
            *acc |= gate & m;
        }
    }
    Ok(out)
}

/// CGen: the 16 candidate outputs of one block given its four one-hot lines.
pub fn cgen_candidates(lines: [bool; BLOCK_SIZE]) -> [bool; NUM_CANDIDATES] {
    debug_assert!(lines.iter().filter(|&&a| a).count() <= 1, "multiple hot lines in a block");
    std::array::from_fn(|k| (0..BLOCK_SIZE).any(|i| lines[i] && (k >> i) & 1 == 1))
}

/// Block ROM: contents plus the per-block, per-column candidate selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BRomArray {
    contents: RomContents,
    logical_depth: usize,
    num_cgen: u64,
    codes: Vec<u8>,
}

impl BRomArray {
    pub fn new(rom: &RomContents) -> Self {
        Self::with_cgen_cost(rom, DEFAULT_NUM_CGEN)
    }

    pub fn with_cgen_cost(rom: &RomContents, num_cgen: u64) -> Self {
        let contents = rom.padded_to_blocks();
        let blocks = contents.depth / BLOCK_SIZE;
        let width = contents.width;
        let mut codes = vec![0u8; blocks * width];
        for b in 0..blocks {
            for j in 0..width {
                codes[b * width + j] =
                    (0..BLOCK_SIZE).filter(|&i| contents.get(BLOCK_SIZE * b + i, j)).fold(0u8, |k, i| k | 1 << i);
            }
        }
        Self { contents, logical_depth: rom.depth, num_cgen, codes }
    }

    /// Depth before block padding.
    pub fn depth(&self) -> usize {
        self.logical_depth
    }

    pub fn padded_depth(&self) -> usize {
        self.contents.depth
    }

    pub fn width(&self) -> usize {
        self.contents.width
    }

    pub fn blocks(&self) -> usize {
        self.contents.depth / BLOCK_SIZE
    }

    pub fn num_cgen(&self) -> u64 {
        self.num_cgen
    }

    /// Candidate index `k_j(b)` wired to column `j` of block `b`.
    pub fn column_code(&self, block: usize, column: usize) -> u8 {
        self.codes[block * self.width() + column]
    }

    pub fn transistors(&self) -> u64 {
        transistor_count(RomKind::Block, self.padded_depth(), self.width(), self.num_cgen)
    }

    fn check(&self, addr: usize) -> Result<(), BromError> {
        if addr >= self.logical_depth {
            Err(BromError::AddressOutOfRange { addr, depth: self.logical_depth })
        } else {
            Ok(())
        }
    }

    fn block_lines(lines: &[bool], b: usize) -> [bool; BLOCK_SIZE] {
        std::array::from_fn(|i| lines[BLOCK_SIZE * b + i])
    }
}

/// B-ROM read: the addressed block's CGen output, column `j` taking candidate
/// `k_j(b)`. Blocks without a hot line produce all-false candidates and drop
/// out of the final OR.
pub fn rom_read_brom(brom: &BRomArray, addr: usize) -> Result<RomWord, BromError> {
    brom.check(addr)?;
    let b = addr / BLOCK_SIZE;
    let candidates = cgen_candidates(std::array::from_fn(|i| BLOCK_SIZE * b + i == addr));
    let mut out = RomWord::zeros(brom.width());
    for j in 0..brom.width() {
        if candidates[brom.column_code(b, j) as usize] {
            out.set(j);
        }
    }
    Ok(out)
}

/// B-ROM read evaluating every block's CGen and OR-ing all selected
/// candidates, as the wired array does. `O(D·W)` per read.
pub fn rom_read_brom_wired(brom: &BRomArray, addr: usize) -> Result<RomWord, BromError> {
    brom.check(addr)?;
    let lines = decode_address(addr, brom.padded_depth());
    let mut out = RomWord::zeros(brom.width());
    for b in 0..brom.blocks() {
        let candidates = cgen_candidates(BRomArray::block_lines(&lines, b));
        for j in 0..brom.width() {
            if candidates[brom.column_code(b, j) as usize] {
                out.set(j);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomKind {
    Standard,
    Block,
}

/// Array transistor count, decoder excluded. Block depth is rounded up to
/// whole blocks.
pub fn transistor_count(kind: RomKind, depth: usize, width: usize, num_cgen: u64) -> u64 {
    match kind {
        RomKind::Standard => depth as u64 * width as u64,
        RomKind::Block => depth.div_ceil(BLOCK_SIZE) as u64 * (width as u64 + num_cgen),
    }
}

/// Block-to-standard transistor ratio `(W + NUM_CGEN) / (4W)`.
pub fn transistor_ratio(width: usize, num_cgen: u64) -> f64 {
    (width as f64 + num_cgen as f64) / (BLOCK_SIZE as f64 * width as f64)
}

/// Per-layer resource demand of one cell, in area units at full utilization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDemand {
    pub base: f64,
    pub metal: f64,
}

impl CellDemand {
    pub const fn new(base: f64, metal: f64) -> Self {
        Self { base, metal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    SramBit,
    RomBit,
    BRomBit,
    /// Compute logic, normalized per weight bit it serves.
    Compute,
}

/// Two-resource area model for L-Unit cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAreaModel {
    pub sram_bit: CellDemand,
    pub rom_bit: CellDemand,
    pub brom_bit: CellDemand,
    pub compute: CellDemand,
    /// Achievable utilization of the base (transistor) layer.
    pub base_utilization: f64,
    /// Achievable utilization of the metal (routing) layer.
    pub metal_utilization: f64,
}

impl Default for CellAreaModel {
    /// SRAM bitcell 3× a ROM bitcell; B-ROM bitcell 0.6× a ROM bitcell and
    /// metal-bound (base:metal 1:4); compute base-bound (4:1).
    fn default() -> Self {
        Self {
            sram_bit: CellDemand::new(3.0, 1.5),
            rom_bit: CellDemand::new(1.0, 0.5),
            brom_bit: CellDemand::new(0.15, 0.6),
            compute: CellDemand::new(0.4, 0.1),
            base_utilization: 1.0,
            metal_utilization: 1.0,
        }
    }
}

impl CellAreaModel {
    pub fn demand(&self, kind: CellKind) -> CellDemand {
        match kind {
            CellKind::SramBit => self.sram_bit,
            CellKind::RomBit => self.rom_bit,
            CellKind::BRomBit => self.brom_bit,
            CellKind::Compute => self.compute,
        }
    }

    /// Standalone macro area of one cell.
    pub fn cell_area(&self, kind: CellKind) -> f64 {
        let d = self.demand(kind);
        (d.base / self.base_utilization).max(d.metal / self.metal_utilization)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedArea {
    /// Each kind laid out as its own macro.
    pub separate: f64,
    /// All kinds sharing one footprint.
    pub fused: f64,
    /// Fraction of the fused footprint's base layer in use.
    pub base_utilization: f64,
    /// Fraction of the fused footprint's metal layer in use.
    pub metal_utilization: f64,
}

/// Area of a set of total demands laid out separately vs. fused.
pub fn fused_area_of(demands: &[CellDemand], base_util: f64, metal_util: f64) -> FusedArea {
    let separate = demands.iter().map(|d| (d.base / base_util).max(d.metal / metal_util)).sum();
    let base: f64 = demands.iter().map(|d| d.base).sum();
    let metal: f64 = demands.iter().map(|d| d.metal).sum();
    let fused = (base / base_util).max(metal / metal_util);
    let (base_utilization, metal_utilization) = if fused > 0.0 { (base / fused, metal / fused) } else { (0.0, 0.0) };
    FusedArea { separate, fused, base_utilization, metal_utilization }
}

/// True when one layer binds every demand, the only case in which fusing
/// saves nothing.
pub fn single_layer_bound(demands: &[CellDemand], base_util: f64, metal_util: f64) -> bool {
    let base_bound = |d: &CellDemand| d.base / base_util >= d.metal / metal_util;
    let metal_bound = |d: &CellDemand| d.metal / metal_util >= d.base / base_util;
    demands.iter().all(base_bound) || demands.iter().all(metal_bound)
}

/// Fused vs. separate area for `count` cells of each listed kind.
pub fn fused_area(model: &CellAreaModel, cells: &[(CellKind, f64)]) -> FusedArea {
    let demands: Vec<CellDemand> = cells
        .iter()
        .map(|&(kind, n)| {
            let d = model.demand(kind);
            CellDemand::new(d.base * n, d.metal * n)
        })
        .collect();
    fused_area_of(&demands, model.base_utilization, model.metal_utilization)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LUnitDesign {
    SramCompute,
    RomCompute,
    BRomCompute,
    Fused,
}

impl LUnitDesign {
    pub const ALL: [LUnitDesign; 4] =
        [LUnitDesign::SramCompute, LUnitDesign::RomCompute, LUnitDesign::BRomCompute, LUnitDesign::Fused];

    pub fn label(self) -> &'static str {
        match self {
            LUnitDesign::SramCompute => "sram+compute",
            LUnitDesign::RomCompute => "rom+compute",
            LUnitDesign::BRomCompute => "brom+compute",
            LUnitDesign::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LUnitAreaReport {
    /// Area per design, in the order of [`LUnitDesign::ALL`].
    pub designs: Vec<(LUnitDesign, f64)>,
    pub standard_transistors: u64,
    pub brom_transistors: u64,
}

impl LUnitAreaReport {
    pub fn area(&self, design: LUnitDesign) -> f64 {
        self.designs.iter().find(|(d, _)| *d == design).map(|&(_, a)| a).unwrap_or(f64::NAN)
    }
}

/// L-Unit area for one `depth × width` weight store under each design.
pub fn lunit_area_comparison(model: &CellAreaModel, depth: usize, width: usize) -> LUnitAreaReport {
    let bits = (depth * width) as f64;
    let brom_bits = (depth.div_ceil(BLOCK_SIZE) * BLOCK_SIZE * width) as f64;
    let with_compute = |store: CellKind, n: f64| fused_area(model, &[(store, n), (CellKind::Compute, bits)]);
    let brom = with_compute(CellKind::BRomBit, brom_bits);
    LUnitAreaReport {
        designs: vec![
            (LUnitDesign::SramCompute, with_compute(CellKind::SramBit, bits).separate),
            (LUnitDesign::RomCompute, with_compute(CellKind::RomBit, bits).separate),
            (LUnitDesign::BRomCompute, brom.separate),
            (LUnitDesign::Fused, brom.fused),
        ],
        standard_transistors: transistor_count(RomKind::Standard, depth, width, DEFAULT_NUM_CGEN),
        brom_transistors: transistor_count(RomKind::Block, depth, width, DEFAULT_NUM_CGEN),
    }
}
