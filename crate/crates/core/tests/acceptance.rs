//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every tolerance is a named constant below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use roma_sim::brom::{
    fused_area_of, lunit_area_comparison, rom_read_brom, rom_read_standard, transistor_count, transistor_ratio,
    BRomArray, CellAreaModel, CellDemand, LUnitDesign, RomContents, RomKind, DEFAULT_NUM_CGEN,
};
use roma_sim::config::ModelConfig;
use roma_sim::engine::{compare_with_shadow, load_runtime, ChipTopology, ShadowModel, Token};
use roma_sim::numerics::{align_block, decode_fp16, decode_fp8, encode_fp16, encode_fp8, Fp16Bits, Fp8Bits, Fp8Format};
use roma_sim::perf::{
    decode_rate, fit_capacity, max_tokens, prefill_time, rank_sensitivity, CapacityParams, LatencyParams,
    CAPACITY_ANCHORS_3B, MB,
};
use roma_sim::qcore::{lunit_group_dot, lunit_matvec, BitWidth, QuantGroup, QuantMatrix, GROUP_SIZE};
use roma_sim::romimage::{load_image, load_lora_image, ImageError, RomImage, HEADER_LEN};
use roma_sim::toy::toy_checkpoint;

/// Criteria 1, 3 and 9 must each finish within this budget.
const TIME_BUDGET: Duration = Duration::from_secs(60);
/// Transistor ratio ceiling for W ≥ 160.
const RATIO_CEILING: f64 = 0.30;
/// Criterion 3 sample count.
const DOT_PAIRS: usize = 100_000;
/// Criterion 4 relative error bound, 2^-7.
const MATVEC_REL_TOL: f64 = 1.0 / 128.0;
const DECODE_FLOOR: f64 = 10_000.0;
const PREFILL_1K_BOUND_MS: f64 = 30.0;
const RANK_DELTA_BOUND: f64 = 0.05;
/// Criterion 8: random demand vectors, and the slack used to call two
/// floating-point areas equal.
const FUSED_TRIALS: usize = 10_000;
const AREA_EQ_TOL: f64 = 1e-12;
const SPLITS: usize = 50;
/// Criterion 10 per-layer relative error bound, 2^-5.
const SHADOW_REL_TOL: f64 = 1.0 / 32.0;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < TIME_BUDGET, || format!("took {:.1} s, budget {} s", t.as_secs_f64(), TIME_BUDGET.as_secs()))
}

// 1 ------------------------------------------------------------------------

fn brom_equivalence() -> Outcome {
    let start = Instant::now();
    let cases: Vec<(usize, usize, u64)> = [4usize, 64, 1024, 4096]
        .iter()
        .flat_map(|&d| [1usize, 8, 64].into_iter().map(move |w| (d, w)))
        .flat_map(|(d, w)| (0..100u64).map(move |t| (d, w, t)))
        .collect();
    let failures: Vec<String> = cases
        .par_iter()
        .filter_map(|&(d, w, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64((d as u64) << 32 | (w as u64) << 16 | t);
            let rom = RomContents::random(d, w, &mut rng).unwrap();
            let brom = BRomArray::new(&rom);
            (0..d)
                .find(|&a| {
                    let direct = rom.word(a).unwrap();
                    rom_read_standard(&rom, a).unwrap() != direct || rom_read_brom(&brom, a).unwrap() != direct
                })
                .map(|a| format!("D={d} W={w} trial {t} address {a}"))
        })
        .collect();
    ensure(failures.is_empty(), || format!("mismatch at {}", failures[0]))?;
    within_budget(start)?;
    Ok(format!("{} contents, every address equal ({:.1} s)", cases.len(), start.elapsed().as_secs_f64()))
}

// 2 ------------------------------------------------------------------------

fn transistor_claim() -> Outcome {
    ensure(DEFAULT_NUM_CGEN == 32, || format!("NUM_CGEN = {DEFAULT_NUM_CGEN}"))?;
    let mut prev = f64::INFINITY;
    for w in 1..=1 << 16 {
        let r = transistor_ratio(w, DEFAULT_NUM_CGEN);
        let exact = (w as f64 + 32.0) / (4.0 * w as f64);
        ensure(r == exact, || format!("W={w}: {r} != (W+32)/(4W) = {exact}"))?;
        ensure(r < prev && r > 0.25, || format!("not strictly decreasing towards 1/4 at W={w}"))?;
        ensure(w < 160 || r <= RATIO_CEILING, || format!("W={w}: ratio {r} > {RATIO_CEILING}"))?;
        prev = r;
    }
    ensure(transistor_ratio(159, 32) > RATIO_CEILING, || "W=159 already under the ceiling".into())?;
    let counts = transistor_count(RomKind::Block, 1024, 64, 32) as f64
        / transistor_count(RomKind::Standard, 1024, 64, 32) as f64;
    ensure(counts == transistor_ratio(64, 32), || "count ratio differs from formula".into())?;
    Ok(format!(
        "ratio(160) = {:.4}, ratio(512) = {:.4}, ratio(65536) = {:.6}",
        transistor_ratio(160, 32),
        transistor_ratio(512, 32),
        prev
    ))
}

// 3 ------------------------------------------------------------------------

/// Steps 1-2 and the group equation straight from the bit fields, with
/// `i64` division for the truncating shift.
fn oracle_group_dot(acts: &[u16], scale: u16, zero: u8, w: &[u8]) -> f64 {
    let field = |b: u16| ((b >> 15) as i64, ((b >> 10) & 0x1F) as i64, (b & 0x3FF) as i64);
    let nonzero = |b: u16| b & 0x7FFF != 0;
    let max_exp = acts.iter().filter(|&&b| nonzero(b)).map(|&b| field(b).1).max().unwrap_or(0);
    let mut dot = 0i64;
    let mut vsum = 0i64;
    for (&a, &wk) in acts.iter().zip(w) {
        let (s, e, m) = field(a);
        let mag = if e == 0 { m * 2 } else { 1024 + m };
        let vconv = if s == 1 { -mag } else { mag };
        let value = vconv / (1i64 << (max_exp - e));
        dot += value * wk as i64;
        vsum += value;
    }
    let int = dot - vsum * zero as i64;
    let (_, se, sm) = field(scale);
    let s = if se == 0 { sm as f64 * 2f64.powi(-24) } else { (1024 + sm) as f64 * 2f64.powi(se as i32 - 25) };
    let s = if scale >> 15 == 1 { -s } else { s };
    int as f64 * s * 2f64.powi(max_exp as i32 - 25)
}

fn random_fp16(rng: &mut ChaCha8Rng, mode: u32, center: u16) -> u16 {
    let sign = (rng.gen::<u16>() & 1) << 15;
    match mode {
        // any finite pattern
        0 => loop {
            let b: u16 = rng.gen();
            if (b >> 10) & 0x1F != 0x1F {
                return b;
            }
        },
        // exponents within 12 of a common center
        1 => sign | (center.saturating_sub(rng.gen_range(0..12)).max(1) << 10) | rng.gen_range(0..1024),
        // denormals and zeros
        _ => {
            if rng.gen_bool(0.3) {
                0
            } else {
                sign | rng.gen_range(0..1024)
            }
        }
    }
}

fn group_dot_bit_exact() -> Outcome {
    let start = Instant::now();
    let mismatches: Vec<String> = (0..DOT_PAIRS as u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xE01 ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let bits = if i % 2 == 0 { BitWidth::Int2 } else { BitWidth::Int4 };
            let mode = rng.gen_range(0..3);
            let center = rng.gen_range(1..31);
            let acts: Vec<u16> = (0..GROUP_SIZE).map(|_| random_fp16(&mut rng, mode, center)).collect();
            let max = bits.max_code();
            let weights: [u8; GROUP_SIZE] = std::array::from_fn(|_| rng.gen_range(0..=max));
            let zero = rng.gen_range(0..=max);
            let scale: u16 = rng.gen_range(1..0x7C00);
            let group = QuantGroup::new(Fp16Bits(scale), zero, weights, bits).unwrap();
            let act_bits: Vec<Fp16Bits> = acts.iter().map(|&b| Fp16Bits(b)).collect();
            let got = lunit_group_dot(&align_block(&act_bits).unwrap(), &group).unwrap();
            let want = oracle_group_dot(&acts, scale, zero, &weights);
            (got.to_bits() != want.to_bits()).then(|| format!("pair {i}: {got} vs oracle {want}"))
        })
        .collect();
    ensure(mismatches.is_empty(), || format!("{} mismatches, first {}", mismatches.len(), mismatches[0]))?;
    within_budget(start)?;
    Ok(format!("{DOT_PAIRS} pairs at B=2 and B=4 bit-identical ({:.1} s)", start.elapsed().as_secs_f64()))
}

// 4 ------------------------------------------------------------------------

fn matvec_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for bits in [BitWidth::Int2, BitWidth::Int4] {
        for _ in 0..100 {
            let rows = rng.gen_range(8..=64);
            let cols = rng.gen_range(128..=1024);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = QuantMatrix::quantize(rows, cols, &data, bits).unwrap();
            let acts: Vec<Fp16Bits> = (0..cols).map(|_| encode_fp16(rng.gen_range(-1.0..1.0)).unwrap()).collect();
            let x: Vec<f64> = acts.iter().map(|&a| decode_fp16(a).unwrap()).collect();
            let w = m.dequantize();
            let got = lunit_matvec(&m, &acts).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for (r, g) in got.iter().enumerate() {
                let want: f64 = w[r * cols..(r + 1) * cols].iter().zip(&x).map(|(a, b)| a * b).sum();
                num += (g - want) * (g - want);
                den += want * want;
            }
            worst = worst.max((num / den).sqrt());
            count += 1;
        }
    }
    ensure(worst <= MATVEC_REL_TOL, || format!("relative error {worst:.3e} > {MATVEC_REL_TOL:.3e}"))?;
    Ok(format!("{count} matrices, worst relative error {worst:.3e} (bound {MATVEC_REL_TOL:.3e})"))
}

// 5 ------------------------------------------------------------------------

fn capacity_anchors() -> Outcome {
    let (kv, lora) = fit_capacity(CAPACITY_ANCHORS_3B[0], CAPACITY_ANCHORS_3B[1]).map_err(|e| e.to_string())?;
    ensure((kv, lora) == (62_500, 1_125_000), || format!("fitted kv={kv}, lora={lora}"))?;
    let p = CapacityParams::llama32_3b(64 * MB);
    let cases = [(64 * MB, 16, 736), (256 * MB, 16, 3808), (64 * MB, 64, 0)];
    for (budget, rank, want) in cases {
        let got = max_tokens(&p.with_budget(budget), rank);
        ensure(got == want, || format!("{} MB rank {rank}: {got} tokens, expected {want}", budget / MB))?;
    }
    Ok("kv=62500 B/token, lora=1125000 B/rank; 736, 3808, 0 tokens".into())
}

// 6 ------------------------------------------------------------------------

fn latency_anchors() -> Outcome {
    let p = LatencyParams::llama32_3b();
    for (kv, want) in [(0, 31_800.0), (1024, 24_600.0)] {
        let got = decode_rate(&p, kv);
        ensure(got == want, || format!("decode_rate({kv}) = {got}, expected {want}"))?;
    }
    let d4k = decode_rate(&p, 4096);
    ensure(d4k > DECODE_FLOOR, || format!("decode_rate(4096) = {d4k}"))?;
    for (l, want) in [(256, 5.6), (4096, 140.2)] {
        let got = prefill_time(&p, l, 16);
        ensure(got == want, || format!("prefill_time({l}) = {got}, expected {want}"))?;
    }
    let p1k = prefill_time(&p, 1024, 16);
    ensure(p1k < PREFILL_1K_BOUND_MS, || format!("prefill_time(1024) = {p1k} ms"))?;
    Ok(format!("anchors reproduced; decode(4096) = {d4k:.1} tok/s, prefill(1024) = {p1k:.3} ms"))
}

// 7 ------------------------------------------------------------------------

fn rank_robustness() -> Outcome {
    let p = LatencyParams::llama32_3b();
    let d = rank_sensitivity(&p, 1024, 16, 64);
    ensure((0.0..=RANK_DELTA_BOUND).contains(&d), || format!("delta {d}"))?;
    Ok(format!("rank 16 -> 64 at L=1024: +{:.2}%", d * 100.0))
}

// 8 ------------------------------------------------------------------------

fn fused_cell() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut strict, mut equal) = (0, 0);
    for t in 0..FUSED_TRIALS {
        let n = rng.gen_range(1..=6);
        let demands: Vec<CellDemand> =
            (0..n).map(|_| CellDemand::new(rng.gen_range(0.01..10.0), rng.gen_range(0.01..10.0))).collect();
        let (ub, um) = (rng.gen_range(0.3..=1.0), rng.gen_range(0.3..=1.0));
        let a = fused_area_of(&demands, ub, um);
        let slack = AREA_EQ_TOL * a.separate;
        ensure(a.fused <= a.separate + slack, || format!("trial {t}: fused {} > separate {}", a.fused, a.separate))?;
        let base_bound = demands.iter().all(|d| d.base / ub >= d.metal / um);
        let metal_bound = demands.iter().all(|d| d.metal / um >= d.base / ub);
        let degenerate = base_bound || metal_bound;
        let is_equal = (a.separate - a.fused).abs() <= slack;
        ensure(is_equal == degenerate, || format!("trial {t}: equal={is_equal} but single-layer-bound={degenerate}"))?;
        if is_equal {
            equal += 1
        } else {
            strict += 1
        }
    }
    let report = lunit_area_comparison(&CellAreaModel::default(), 1024, 512);
    let areas: Vec<f64> = LUnitDesign::ALL.iter().map(|&d| report.area(d)).collect();
    ensure(areas.windows(2).all(|w| w[0] > w[1]), || format!("design areas not ordered: {areas:?}"))?;
    Ok(format!(
        "{strict} strict, {equal} equal (all single-layer-bound); SRAM {:.3} > ROM {:.3} > B-ROM {:.3} > fused {:.3}",
        1.0,
        areas[1] / areas[0],
        areas[2] / areas[0],
        areas[3] / areas[0]
    ))
}

// 9 ------------------------------------------------------------------------

fn kv_consistency() -> Outcome {
    let start = Instant::now();
    let ck = toy_checkpoint(&ModelConfig::toy(), 9).map_err(|e| e.to_string())?;
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..SPLITS {
        let n = rng.gen_range(2..=40);
        let seq: Vec<Token> = (0..n).map(|_| rng.gen_range(0..ck.config.vocab as Token)).collect();
        let cut = rng.gen_range(1..n);
        let (whole_logits, whole_cache) = rt.prefill(&seq).map_err(|e| e.to_string())?;
        let (mut logits, mut cache) = rt.prefill(&seq[..cut]).map_err(|e| e.to_string())?;
        for &t in &seq[cut..] {
            logits = rt.decode_step(t, &mut cache).map_err(|e| e.to_string())?;
        }
        let same_logits = logits.iter().map(|x| x.to_bits()).eq(whole_logits.iter().map(|x| x.to_bits()));
        ensure(same_logits && cache == whole_cache, || format!("split {i} (len {n}, cut {cut}) differs"))?;
    }
    within_budget(start)?;
    Ok(format!("{SPLITS} random splits bit-identical ({:.1} s)", start.elapsed().as_secs_f64()))
}

// 10 -----------------------------------------------------------------------

fn golden() -> (Vec<Token>, Vec<Token>) {
    let text = include_str!("golden/toy_seed0.txt");
    let field = |key: &str| -> Vec<Token> {
        let line = text.lines().find_map(|l| l.strip_prefix(key)).expect("golden field");
        line.split_whitespace().map(|t| t.parse().unwrap()).collect()
    };
    (field("prompt:"), field("tokens:"))
}

fn shadow_agreement() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut matches, mut steps) = (0, 0);
    for bits in [BitWidth::Int4, BitWidth::Int2] {
        for seed in 0..4 {
            let cfg = ModelConfig { bit_width: bits, ..ModelConfig::toy() };
            let ck = toy_checkpoint(&cfg, seed).map_err(|e| e.to_string())?;
            let rt = load_runtime(&ck.rom, &ck.lora, &cfg, &ChipTopology::roma()).map_err(|e| e.to_string())?;
            let sh = ShadowModel::new(&ck.rom, &ck.lora, &cfg).map_err(|e| e.to_string())?;
            let prompt: Vec<Token> = vec![3, 14, 15, 92, 65];
            let mut seq = prompt.clone();
            seq.extend(rt.generate(&prompt, 63).map_err(|e| e.to_string())?);
            let r = compare_with_shadow(&rt, &sh, &seq, prompt.len()).map_err(|e| e.to_string())?;
            worst = worst.max(r.max_rel_error());
            matches += r.greedy_matches;
            steps += r.steps;
        }
    }
    ensure(worst <= SHADOW_REL_TOL, || format!("per-layer relative error {worst:.3e} > {SHADOW_REL_TOL}"))?;

    let (prompt, want) = golden();
    let ck = toy_checkpoint(&ModelConfig::toy(), 0).map_err(|e| e.to_string())?;
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).map_err(|e| e.to_string())?;
    let got = rt.generate(&prompt, want.len()).map_err(|e| e.to_string())?;
    ensure(got == want, || format!("golden mismatch: got {got:?}"))?;
    Ok(format!(
        "worst layer error {worst:.3e} (bound {SHADOW_REL_TOL}); greedy agreement {matches}/{steps}; golden {} tokens reproduced",
        want.len()
    ))
}

// 11 -----------------------------------------------------------------------

fn reseal_header(bytes: &mut [u8]) {
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut pos = HEADER_LEN;
    for _ in 0..count {
        let n = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2 + n + 4 + 4 + 8 + 8;
    }
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes[..28]);
    h.update(&bytes[HEADER_LEN..pos]);
    let crc = h.finalize();
    bytes[28..32].copy_from_slice(&crc.to_le_bytes());
}

/// Byte offset of the `index`-th directory entry's payload offset field.
fn offset_field(bytes: &[u8], index: usize) -> usize {
    let mut pos = HEADER_LEN;
    for i in 0.. {
        let n = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        if i == index {
            return pos + 2 + n + 8;
        }
        pos += 2 + n + 4 + 4 + 8 + 8;
    }
    unreachable!()
}

fn round_trips() -> Outcome {
    let ck = toy_checkpoint(&ModelConfig::toy(), 11).map_err(|e| e.to_string())?;
    let bytes = ck.rom.to_bytes();
    let loaded = load_image(&bytes).map_err(|e| e.to_string())?;
    ensure(loaded == ck.rom, || "ROM image differs after load".into())?;
    let lora = load_lora_image(&ck.lora.to_bytes()).map_err(|e| e.to_string())?;
    ensure(lora == ck.lora, || "LoRA image differs after load".into())?;
    ensure(load_image(&RomImage::new(BitWidth::Int4).to_bytes()).is_ok(), || "empty image".into())?;

    let mut fp8 = 0;
    for fmt in [Fp8Format::E4M3, Fp8Format::E5M2] {
        for b in 0..=255u8 {
            let Ok(x) = decode_fp8(Fp8Bits(b), fmt) else { continue };
            let e = encode_fp8(x, fmt).map_err(|e| e.to_string())?;
            // both zeros decode to 0.0 or -0.0 and re-encode to themselves
            ensure(e.bits == Fp8Bits(b) && !e.saturated, || format!("{fmt:?} pattern {b:#04x}"))?;
            fp8 += 1;
        }
    }

    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = bytes.clone();
        f(&mut b);
        load_image(&b).err().map(|e| e.code())
    };
    let cases: Vec<(&str, Option<&str>)> = vec![
        ("bad_magic", corrupt(&|b| b[0] ^= 0xFF)),
        ("unsupported_version", corrupt(&|b| b[4] = 9)),
        ("truncated_header", corrupt(&|b| b.truncate(20))),
        ("truncated_directory", corrupt(&|b| b.truncate(HEADER_LEN + 5))),
        ("header_checksum", corrupt(&|b| b[HEADER_LEN + 3] ^= 1)),
        (
            "truncated_payload",
            corrupt(&|b| {
                b.pop();
            }),
        ),
        ("trailing_bytes", corrupt(&|b| b.push(0))),
        (
            "payload_checksum",
            corrupt(&|b| {
                let n = b.len();
                b[n - 1] ^= 0x10
            }),
        ),
        (
            "directory_overlap",
            corrupt(&|b| {
                let f = offset_field(b, 1);
                b[f..f + 8].copy_from_slice(&0u64.to_le_bytes());
                reseal_header(b);
            }),
        ),
        (
            "directory_out_of_range",
            corrupt(&|b| {
                let f = offset_field(b, 1);
                b[f..f + 8].copy_from_slice(&u64::MAX.to_le_bytes());
                reseal_header(b);
            }),
        ),
    ];
    for (want, got) in &cases {
        ensure(got == &Some(*want), || format!("expected {want}, got {got:?}"))?;
    }
    ensure(matches!(load_lora_image(&bytes), Err(ImageError::BadHeaderField(_))), || "kind check".into())?;
    Ok(format!(
        "ROM and LoRA images identical after reload; {fp8} FP8 patterns round-trip; {} corruption classes detected",
        cases.len()
    ))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "B-ROM equivalence", brom_equivalence),
        (2, "transistor ratio", transistor_claim),
        (3, "group dot bit-exactness", group_dot_bit_exact),
        (4, "matvec fidelity", matvec_fidelity),
        (5, "capacity anchors", capacity_anchors),
        (6, "latency anchors", latency_anchors),
        (7, "rank robustness", rank_robustness),
        (8, "fused-cell area", fused_cell),
        (9, "KV-cache consistency", kv_consistency),
        (10, "shadow agreement and golden sequence", shadow_agreement),
        (11, "round-trips and corruption detection", round_trips),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{id:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
