//! Analytical capacity, latency and PPA models.
//!
//! Every latency or capacity constant is either fitted from published
//! measurement points (recorded as [`Anchor`]s on the parameter record) or
//! derived from one by a stated architectural ratio. Megabytes are decimal
//! (10^6 bytes) throughout this module: it is the convention under which a
//! single linear capacity law hits both published buffer sizes exactly.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::brom::{lunit_area_comparison, CellAreaModel, CellKind, LUnitAreaReport, LUnitDesign};
use crate::config::{ModelConfig, TensorRole};
use crate::engine::ChipTopology;
use crate::qcore::QuantMatrix;
use crate::romimage::group_record_bytes;

/// Decimal megabyte.
pub const MB: u64 = 1_000_000;

/// Rank at which the published latency points were measured.
pub const ANCHOR_RANK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("anchors {0:?} and {1:?} do not determine a fit")]
    Degenerate(String, String),
    #[error("capacity anchors have no exact integer solution")]
    InexactFit,
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Published chip-level totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChipTotals {
    pub frequency_hz: f64,
    pub area_mm2: f64,
    pub power_w: f64,
    /// 1.86 GB of B-ROM, read as binary gigabytes (see [`ChipTotals::ROMA`]).
    pub rom_bytes: u64,
    /// SRAM for LoRA weights and KV cache.
    pub lora_kv_sram_bytes: u64,
    /// SRAM for intermediate activations.
    pub scratch_sram_bytes: u64,
}

impl ChipTotals {
    /// The ROM capacity is taken as 1.86 GiB: with decimal gigabytes neither
    /// the 4-bit 3B nor the 2-bit 8B block weights would leave headroom.
    pub const ROMA: ChipTotals = ChipTotals {
        frequency_hz: 500e6,
        area_mm2: 503.7,
        power_w: 33.1,
        rom_bytes: 1_997_159_792,
        lora_kv_sram_bytes: 288 * MB,
        scratch_sram_bytes: 16 * MB,
    };

    pub fn sram_bytes(&self) -> u64 {
        self.lora_kv_sram_bytes + self.scratch_sram_bytes
    }
}

/// The two evaluated model deployments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerfModel {
    /// Llama 3.2 3B, 4-bit base weights.
    Llama32_3bInt4,
    /// Llama 3 8B, 2-bit base weights.
    Llama3_8bInt2,
}

impl PerfModel {
    pub const ALL: [PerfModel; 2] = [PerfModel::Llama32_3bInt4, PerfModel::Llama3_8bInt2];

    pub fn config(self) -> ModelConfig {
        match self {
            PerfModel::Llama32_3bInt4 => ModelConfig::llama32_3b(),
            PerfModel::Llama3_8bInt2 => ModelConfig::llama3_8b(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PerfModel::Llama32_3bInt4 => "3b4",
            PerfModel::Llama3_8bInt2 => "8b2",
        }
    }

    pub fn bit_width(self) -> u32 {
        self.config().bit_width.bits()
    }
}

impl fmt::Display for PerfModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PerfModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerfModel::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown model {s:?} (expected 3b4 or 8b2)"))
    }
}

/// One published measurement used to fit a parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anchor {
    pub quantity: &'static str,
    pub x: f64,
    pub value: f64,
}

// ---------------------------------------------------------------------------
// capacity

/// A published buffer-size point: `tokens` fit in `sram_bytes` at `rank`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityAnchor {
    pub sram_bytes: u64,
    pub rank: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityParams {
    pub kv_bytes_per_token: u64,
    pub lora_bytes_per_rank: u64,
    pub sram_budget_bytes: u64,
    pub anchors: Vec<CapacityAnchor>,
}

/// 3B, rank 16: 736 tokens in 64 MB, 3,808 tokens in 256 MB.
pub const CAPACITY_ANCHORS_3B: [CapacityAnchor; 2] = [
    CapacityAnchor { sram_bytes: 64 * MB, rank: 16, tokens: 736 },
    CapacityAnchor { sram_bytes: 256 * MB, rank: 16, tokens: 3808 },
];

/// Solve `sram = rank·lora + tokens·kv` through two same-rank anchors.
pub fn fit_capacity(a: CapacityAnchor, b: CapacityAnchor) -> Result<(u64, u64), PerfError> {
    if a.rank != b.rank || a.tokens == b.tokens || a.rank == 0 {
        return Err(PerfError::Degenerate(format!("{a:?}"), format!("{b:?}")));
    }
    let (lo, hi) = if a.tokens < b.tokens { (a, b) } else { (b, a) };
    let dbytes = hi.sram_bytes.checked_sub(lo.sram_bytes).ok_or(PerfError::InexactFit)?;
    let dtokens = hi.tokens - lo.tokens;
    if dbytes % dtokens != 0 {
        return Err(PerfError::InexactFit);
    }
    let kv = dbytes / dtokens;
    let lora_total = lo.sram_bytes.checked_sub(lo.tokens * kv).ok_or(PerfError::InexactFit)?;
    if lora_total % lo.rank != 0 {
        return Err(PerfError::InexactFit);
    }
    Ok((kv, lora_total / lo.rank))
}

impl CapacityParams {
    /// Constants fitted to the 3B buffer-size anchors.
    pub fn llama32_3b(sram_budget_bytes: u64) -> Self {
        let (kv, lora) = fit_capacity(CAPACITY_ANCHORS_3B[0], CAPACITY_ANCHORS_3B[1]).expect("anchors fit exactly");
        Self {
            kv_bytes_per_token: kv,
            lora_bytes_per_rank: lora,
            sram_budget_bytes,
            anchors: CAPACITY_ANCHORS_3B.to_vec(),
        }
    }

    /// 3B constants scaled by the analytic KV and LoRA size ratios.
    pub fn for_model(model: PerfModel, sram_budget_bytes: u64) -> Self {
        let base = Self::llama32_3b(sram_budget_bytes);
        if model == PerfModel::Llama32_3bInt4 {
            return base;
        }
        let (c3, c) = (ModelConfig::llama32_3b(), model.config());
        let scale = |v: u64, num: u64, den: u64| (v as u128 * num as u128 / den as u128) as u64;
        Self {
            kv_bytes_per_token: scale(base.kv_bytes_per_token, c.kv_bytes_per_token(), c3.kv_bytes_per_token()),
            lora_bytes_per_rank: scale(base.lora_bytes_per_rank, c.lora_params_per_rank(), c3.lora_params_per_rank()),
            ..base
        }
    }

    pub fn with_budget(&self, sram_budget_bytes: u64) -> Self {
        Self { sram_budget_bytes, ..self.clone() }
    }
}

/// Tokens of KV cache that fit beside a rank-`rank` adapter set.
pub fn max_tokens(params: &CapacityParams, rank: u64) -> u64 {
    let lora = params.lora_bytes_per_rank.saturating_mul(rank);
    params.sram_budget_bytes.saturating_sub(lora) / params.kv_bytes_per_token.max(1)
}

/// Warning text when the fitted per-rank LoRA size is more than 2× away
/// from the analytic size of `cfg`'s attachment set.
pub fn lora_capacity_mismatch(params: &CapacityParams, cfg: &ModelConfig) -> Option<String> {
    let analytic = cfg.lora_params_per_rank() as f64;
    let fitted = params.lora_bytes_per_rank as f64;
    let ratio = fitted / analytic;
    (!(0.5..=2.0).contains(&ratio)).then(|| {
        format!("model mismatch: fitted LoRA size {fitted} B/rank vs analytic {analytic} B/rank (ratio {ratio:.3})")
    })
}

// ---------------------------------------------------------------------------
// latency

/// Fitted latency laws:
/// decode `t(kv, r) = t0 + (r − 16)·t_lora + kv·t_kv`,
/// prefill `T(L, r) = (a + r·c)·L + b·L²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyParams {
    pub model: PerfModel,
    /// Per-token decode time at rank 16 and empty cache, seconds.
    pub decode_base_s: f64,
    /// Added decode time per cached token, seconds.
    pub decode_kv_s: f64,
    /// Added decode time per unit of LoRA rank, seconds.
    pub decode_lora_s: f64,
    /// Rank-free linear prefill coefficient, ms per token.
    pub prefill_linear_ms: f64,
    /// Quadratic prefill coefficient, ms per token².
    pub prefill_quad_ms: f64,
    /// Linear prefill coefficient per unit of rank, ms per token.
    pub prefill_lora_ms: f64,
    pub anchors: Vec<Anchor>,
}

/// Two-point affine fit of per-token time through `(kv, tokens/s)` anchors.
pub fn fit_decode(p0: (f64, f64), p1: (f64, f64)) -> Result<(f64, f64), PerfError> {
    if p0.0 == p1.0 {
        return Err(PerfError::Degenerate(format!("{p0:?}"), format!("{p1:?}")));
    }
    let (t0, t1) = (1.0 / p0.1, 1.0 / p1.1);
    let slope = (t1 - t0) / (p1.0 - p0.0);
    Ok((t0 - slope * p0.0, slope))
}

/// Fit `T = a·L + b·L²` through two `(L, ms)` anchors.
pub fn fit_prefill(p0: (f64, f64), p1: (f64, f64)) -> Result<(f64, f64), PerfError> {
    let (l0, t0, l1, t1) = (p0.0, p0.1, p1.0, p1.1);
    let det = l0 * l1 * (l1 - l0);
    if det == 0.0 {
        return Err(PerfError::Degenerate(format!("{p0:?}"), format!("{p1:?}")));
    }
    Ok(((t0 * l1 * l1 - t1 * l0 * l0) / det, (l0 * t1 - l1 * t0) / det))
}

/// LoRA work per rank unit relative to the base projections.
pub fn lora_fraction_per_rank(cfg: &ModelConfig) -> f64 {
    cfg.lora_params_per_rank() as f64 / cfg.linear_params_per_token() as f64
}

/// Quantized bytes read per token: block weights plus the output head.
pub fn streamed_weight_bytes(cfg: &ModelConfig) -> u64 {
    let record = group_record_bytes(cfg.bit_width) as u64;
    cfg.tensor_specs()
        .iter()
        .filter(|t| t.role == TensorRole::Block || t.name == cfg.head_tensor())
        .map(|t| (t.rows * QuantMatrix::groups_per_row_for(t.cols)) as u64 * record)
        .sum()
}

/// Attention work per (query, key) pair, in layer·width units.
fn attention_width(cfg: &ModelConfig) -> f64 {
    (cfg.layers * cfg.heads * cfg.head_dim) as f64
}

pub const DECODE_ANCHORS_3B: [(f64, f64); 2] = [(0.0, 31_800.0), (1024.0, 24_600.0)];
pub const DECODE_PEAK_8B: f64 = 24_100.0;
pub const PREFILL_ANCHORS_3B: [(f64, f64); 2] = [(256.0, 5.6), (4096.0, 140.2)];

impl LatencyParams {
    /// Fitted directly to the 3B decode and time-to-first-token anchors.
    pub fn llama32_3b() -> Self {
        let cfg = ModelConfig::llama32_3b();
        let rho = lora_fraction_per_rank(&cfg);
        let (t0, tkv) = fit_decode(DECODE_ANCHORS_3B[0], DECODE_ANCHORS_3B[1]).expect("distinct anchors");
        let (a16, b) = fit_prefill(PREFILL_ANCHORS_3B[0], PREFILL_ANCHORS_3B[1]).expect("distinct anchors");
        let mut anchors: Vec<Anchor> =
            DECODE_ANCHORS_3B.iter().map(|&(x, value)| Anchor { quantity: "decode_tok_s", x, value }).collect();
        anchors.extend(PREFILL_ANCHORS_3B.iter().map(|&(x, value)| Anchor { quantity: "prefill_ms", x, value }));
        Self::split_lora(PerfModel::Llama32_3bInt4, t0, tkv, a16, b, rho, anchors)
    }

    /// 8B: peak decode anchored; KV slope scaled by KV bytes per token;
    /// prefill linear term scaled by streamed weight bytes and quadratic
    /// term by attention width, both relative to the 3B fit.
    pub fn llama3_8b() -> Self {
        let p3 = Self::llama32_3b();
        let (c3, c8) = (ModelConfig::llama32_3b(), ModelConfig::llama3_8b());
        let rho3 = lora_fraction_per_rank(&c3);
        let rho8 = lora_fraction_per_rank(&c8);
        let tkv = p3.decode_kv_s * c8.kv_bytes_per_token() as f64 / c3.kv_bytes_per_token() as f64;
        let a16_3 = p3.prefill_linear_ms * (1.0 + ANCHOR_RANK as f64 * rho3);
        let a16 = a16_3 * streamed_weight_bytes(&c8) as f64 / streamed_weight_bytes(&c3) as f64;
        let b = p3.prefill_quad_ms * attention_width(&c8) / attention_width(&c3);
        let anchors = vec![Anchor { quantity: "decode_tok_s", x: 0.0, value: DECODE_PEAK_8B }];
        Self::split_lora(PerfModel::Llama3_8bInt2, 1.0 / DECODE_PEAK_8B, tkv, a16, b, rho8, anchors)
    }

    pub fn for_model(model: PerfModel) -> Self {
        match model {
            PerfModel::Llama32_3bInt4 => Self::llama32_3b(),
            PerfModel::Llama3_8bInt2 => Self::llama3_8b(),
        }
    }

    /// Separate the rank-dependent share out of coefficients measured at rank 16.
    fn split_lora(model: PerfModel, t0: f64, tkv: f64, a16: f64, b: f64, rho: f64, anchors: Vec<Anchor>) -> Self {
        let share = 1.0 + ANCHOR_RANK as f64 * rho;
        let a_base = a16 / share;
        let t_base = t0 / share;
        Self {
            model,
            decode_base_s: t0,
            decode_kv_s: tkv,
            decode_lora_s: t_base * rho,
            prefill_linear_ms: a_base,
            prefill_quad_ms: b,
            prefill_lora_ms: a_base * rho,
            anchors,
        }
    }

    fn is_anchor(&self, quantity: &str, x: f64) -> bool {
        self.anchors.iter().any(|a| a.quantity == quantity && a.x == x)
    }
}

/// Decode throughput at rank 16 with `kv_len` cached tokens.
pub fn decode_rate(params: &LatencyParams, kv_len: u64) -> f64 {
    decode_rate_at(params, kv_len, ANCHOR_RANK)
}

pub fn decode_rate_at(params: &LatencyParams, kv_len: u64, rank: usize) -> f64 {
    let dr = rank as f64 - ANCHOR_RANK as f64;
    1.0 / (params.decode_base_s + dr * params.decode_lora_s + kv_len as f64 * params.decode_kv_s)
}

/// Time to first token in milliseconds.
pub fn prefill_time(params: &LatencyParams, seq_len: u64, rank: usize) -> f64 {
    let l = seq_len as f64;
    (params.prefill_linear_ms + rank as f64 * params.prefill_lora_ms) * l + params.prefill_quad_ms * l * l
}

/// Relative prefill slowdown going from rank `r1` to `r2`.
pub fn rank_sensitivity(params: &LatencyParams, seq_len: u64, r1: usize, r2: usize) -> f64 {
    let t1 = prefill_time(params, seq_len, r1);
    (prefill_time(params, seq_len, r2) - t1) / t1
}

// ---------------------------------------------------------------------------
// PPA

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitClass {
    LUnit,
    HUnit,
    VectorUnit,
    Router,
    Control,
}

impl UnitClass {
    pub const ALL: [UnitClass; 5] =
        [UnitClass::LUnit, UnitClass::HUnit, UnitClass::VectorUnit, UnitClass::Router, UnitClass::Control];

    pub fn label(self) -> &'static str {
        match self {
            UnitClass::LUnit => "l_unit",
            UnitClass::HUnit => "h_unit",
            UnitClass::VectorUnit => "vector_unit",
            UnitClass::Router => "router",
            UnitClass::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaParams {
    pub totals: ChipTotals,
    pub cells: CellAreaModel,
    /// `(class, area fraction, power fraction)`; each column sums to 1.
    pub breakdown: Vec<(UnitClass, f64, f64)>,
}

/// Fixed overhead shares of the die outside the storage-bearing units.
const ROUTER_AREA: f64 = 0.04;
const CONTROL_AREA: f64 = 0.03;
/// Compute logic on top of H-Unit SRAM, as a fraction of the SRAM area.
const HUNIT_LOGIC: f64 = 0.10;
/// Vector lanes on top of the scratch SRAM.
const VECTOR_LOGIC: f64 = 0.50;
/// Power split; only the ordering is grounded, the values are assumptions.
const POWER_SPLIT: [(UnitClass, f64); 5] = [
    (UnitClass::LUnit, 0.40),
    (UnitClass::HUnit, 0.35),
    (UnitClass::VectorUnit, 0.12),
    (UnitClass::Router, 0.08),
    (UnitClass::Control, 0.05),
];

impl PpaParams {
    /// Area split from the cell model: fused B-ROM cells for every ROM bit,
    /// SRAM bitcells (plus logic) for the H-Units and vector units.
    pub fn derived(totals: ChipTotals, cells: CellAreaModel) -> Self {
        let fused_per_bit = lunit_area_comparison(&cells, 1024, 512).area(LUnitDesign::Fused) / (1024.0 * 512.0);
        let sram = cells.cell_area(CellKind::SramBit);
        let l = totals.rom_bytes as f64 * 8.0 * fused_per_bit;
        let h = totals.lora_kv_sram_bytes as f64 * 8.0 * sram * (1.0 + HUNIT_LOGIC);
        let v = totals.scratch_sram_bytes as f64 * 8.0 * sram * (1.0 + VECTOR_LOGIC);
        let rest = 1.0 - ROUTER_AREA - CONTROL_AREA;
        let sum = l + h + v;
        let area = [
            (UnitClass::LUnit, rest * l / sum),
            (UnitClass::HUnit, rest * h / sum),
            (UnitClass::VectorUnit, rest * v / sum),
            (UnitClass::Router, ROUTER_AREA),
            (UnitClass::Control, CONTROL_AREA),
        ];
        let breakdown = area.iter().zip(POWER_SPLIT).map(|(&(c, a), (_, p))| (c, a, p)).collect();
        Self { totals, cells, breakdown }
    }
}

impl Default for PpaParams {
    fn default() -> Self {
        Self::derived(ChipTotals::ROMA, CellAreaModel::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaRow {
    pub class: UnitClass,
    pub units: usize,
    pub area_mm2: f64,
    pub power_w: f64,
    pub area_fraction: f64,
    pub power_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaReport {
    pub rows: Vec<PpaRow>,
    pub total_area_mm2: f64,
    pub total_power_w: f64,
    pub lunit_designs: LUnitAreaReport,
}

pub fn ppa_report(params: &PpaParams, topo: &ChipTopology) -> PpaReport {
    let units = |c: UnitClass| match c {
        UnitClass::LUnit | UnitClass::HUnit => topo.matrix_units(),
        UnitClass::VectorUnit => topo.vector_units(),
        UnitClass::Router => topo.rows * topo.cols,
        UnitClass::Control => 1,
    };
    let rows: Vec<PpaRow> = params
        .breakdown
        .iter()
        .map(|&(class, af, pf)| PpaRow {
            class,
            units: units(class),
            area_mm2: af * params.totals.area_mm2,
            power_w: pf * params.totals.power_w,
            area_fraction: af,
            power_fraction: pf,
        })
        .collect();
    PpaReport {
        total_area_mm2: rows.iter().map(|r| r.area_mm2).sum(),
        total_power_w: rows.iter().map(|r| r.power_w).sum(),
        rows,
        lunit_designs: lunit_area_comparison(&params.cells, 1024, 512),
    }
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Prefill,
    Decode,
    Capacity,
    Rank,
    Ppa,
}

impl FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prefill" => Ok(SweepKind::Prefill),
            "decode" => Ok(SweepKind::Decode),
            "capacity" => Ok(SweepKind::Capacity),
            "rank" => Ok(SweepKind::Rank),
            "ppa" => Ok(SweepKind::Ppa),
            other => Err(format!("unknown sweep {other:?}")),
        }
    }
}

/// One CSV row. For capacity sweeps `seq_len_or_kv` carries the SRAM size in
/// decimal MB; for PPA rows it is 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub model: String,
    pub bit_width: u32,
    pub rank: usize,
    pub seq_len_or_kv: u64,
    pub metric: String,
    pub value: String,
    pub provenance: &'static str,
}

pub const PREFILL_LENGTHS: [u64; 6] = [128, 256, 512, 1024, 2048, 4096];
pub const DECODE_KV_LENGTHS: [u64; 7] = [0, 256, 512, 1024, 2048, 3072, 4096];
pub const CAPACITY_SRAM_MB: [u64; 6] = [32, 64, 128, 256, 288, 512];
pub const SWEEP_RANKS: [usize; 4] = [8, 16, 32, 64];

/// Fixed-point rendering with trailing zeros removed.
pub fn format_value(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn provenance(anchor: bool) -> &'static str {
    if anchor {
        "anchor"
    } else {
        "derived"
    }
}

pub fn sweep(model: PerfModel, kind: SweepKind) -> Vec<SweepRow> {
    let lat = LatencyParams::for_model(model);
    let row = |rank, x, metric: &str, value: f64, anchor: bool| SweepRow {
        model: model.label().into(),
        bit_width: model.bit_width(),
        rank,
        seq_len_or_kv: x,
        metric: metric.into(),
        value: format_value(value),
        provenance: provenance(anchor),
    };
    match kind {
        SweepKind::Prefill => PREFILL_LENGTHS
            .iter()
            .map(|&l| {
                let anchor = lat.is_anchor("prefill_ms", l as f64);
                row(ANCHOR_RANK, l, "prefill_ms", prefill_time(&lat, l, ANCHOR_RANK), anchor)
            })
            .collect(),
        SweepKind::Decode => DECODE_KV_LENGTHS
            .iter()
            .map(|&kv| {
                let anchor = lat.is_anchor("decode_tok_s", kv as f64);
                row(ANCHOR_RANK, kv, "decode_tok_s", decode_rate(&lat, kv), anchor)
            })
            .collect(),
        SweepKind::Capacity => {
            let cap = CapacityParams::for_model(model, 0);
            let mut rows = Vec::new();
            for &mb in &CAPACITY_SRAM_MB {
                for &r in &SWEEP_RANKS {
                    let p = cap.with_budget(mb * MB);
                    let anchor = model == PerfModel::Llama32_3bInt4
                        && cap.anchors.iter().any(|a| a.sram_bytes == mb * MB && a.rank == r as u64);
                    rows.push(row(r, mb, "max_tokens", max_tokens(&p, r as u64) as f64, anchor));
                }
            }
            rows
        }
        SweepKind::Rank => {
            let mut rows = Vec::new();
            for &r in &SWEEP_RANKS {
                rows.push(row(r, 1024, "prefill_ms", prefill_time(&lat, 1024, r), false));
                rows.push(row(r, 1024, "prefill_delta_vs_r16", rank_sensitivity(&lat, 1024, ANCHOR_RANK, r), false));
                let anchor = r == ANCHOR_RANK && lat.is_anchor("decode_tok_s", 1024.0);
                rows.push(row(r, 1024, "decode_tok_s", decode_rate_at(&lat, 1024, r), anchor));
            }
            rows
        }
        SweepKind::Ppa => ppa_rows(&ppa_report(&PpaParams::default(), &ChipTopology::roma())),
    }
}

fn ppa_rows(report: &PpaReport) -> Vec<SweepRow> {
    let row = |metric: String, value: f64, anchor: bool| SweepRow {
        model: "chip".into(),
        bit_width: 0,
        rank: 0,
        seq_len_or_kv: 0,
        metric,
        value: format_value(value),
        provenance: provenance(anchor),
    };
    let mut rows = vec![
        row("total_area_mm2".into(), report.total_area_mm2, true),
        row("total_power_w".into(), report.total_power_w, true),
    ];
    for r in &report.rows {
        let c = r.class.label();
        rows.push(row(format!("{c}.area_mm2"), r.area_mm2, false));
        rows.push(row(format!("{c}.power_w"), r.power_w, false));
        rows.push(row(format!("{c}.area_fraction"), r.area_fraction, false));
        rows.push(row(format!("{c}.power_fraction"), r.power_fraction, false));
    }
    let sram = report.lunit_designs.area(LUnitDesign::SramCompute);
    for &(d, a) in &report.lunit_designs.designs {
        rows.push(row(format!("lunit.{}.relative_area", d.label()), a / sram, false));
    }
    rows
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), PerfError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| PerfError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| PerfError::Csv(e.to_string()))
}
