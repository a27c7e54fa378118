use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use roma_sim::brom::{
    fused_area_of, rom_read_brom, rom_read_brom_wired, rom_read_standard, BRomArray, CellDemand, RomContents,
};
use roma_sim::numerics::{align_block, decode_fp16, encode_fp16, Fp16Bits};
use roma_sim::perf::{decode_rate, max_tokens, prefill_time, CapacityParams, LatencyParams, PerfModel, MB};
use roma_sim::qcore::{lunit_group_dot, lunit_matvec, quantize_group, BitWidth, QuantGroup, QuantMatrix, GROUP_SIZE};
use roma_sim::romimage::{load_image, pack_model, NamedMatrix};

fn finite_fp16() -> impl Strategy<Value = Fp16Bits> {
    any::<u16>().prop_filter("finite", |b| (b >> 10) & 0x1F != 0x1F).prop_map(Fp16Bits)
}

fn bit_width() -> impl Strategy<Value = BitWidth> {
    prop_oneof![Just(BitWidth::Int2), Just(BitWidth::Int4)]
}

fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

proptest! {
    #[test]
    fn fp16_round_trip(b in finite_fp16()) {
        let x = decode_fp16(b).unwrap();
        let back = encode_fp16(x).unwrap();
        prop_assert_eq!(decode_fp16(back).unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn alignment_bounds(acts in prop::collection::vec(finite_fp16(), 1..200)) {
        let a = align_block(&acts).unwrap();
        prop_assert_eq!(a.vsum, a.values.iter().map(|&v| v as i64).sum::<i64>());
        prop_assert!(a.values.iter().all(|v| v.abs() <= 2047));
        let unit = pow2(a.max_exp as i32 - 25);
        for (x, &v) in acts.iter().zip(&a.values) {
            let err = (decode_fp16(*x).unwrap() - v as f64 * unit).abs();
            prop_assert!(err < unit);
        }
    }

    #[test]
    fn alignment_exact_when_homogeneous(exp in 1u16..31, mants in prop::collection::vec((any::<bool>(), 0u16..1024), 1..64)) {
        let acts: Vec<Fp16Bits> = mants.iter().map(|&(s, m)| Fp16Bits((s as u16) << 15 | exp << 10 | m)).collect();
        let a = align_block(&acts).unwrap();
        for (x, &v) in acts.iter().zip(&a.values) {
            prop_assert_eq!(decode_fp16(*x).unwrap(), v as f64 * pow2(a.max_exp as i32 - 25));
        }
    }

    #[test]
    fn alignment_permutation_equivariant(acts in prop::collection::vec(finite_fp16(), 1..64), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..acts.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<Fp16Bits> = idx.iter().map(|&i| acts[i]).collect();
        let a = align_block(&acts).unwrap();
        let b = align_block(&permuted).unwrap();
        prop_assert_eq!(a.max_exp, b.max_exp);
        prop_assert_eq!(a.vsum, b.vsum);
        let want: Vec<i32> = idx.iter().map(|&i| a.values[i]).collect();
        prop_assert_eq!(b.values, want);
    }

    #[test]
    fn quantization_error_bound(values in prop::collection::vec(-8.0f64..8.0, 1..=GROUP_SIZE), bits in bit_width()) {
        let g = quantize_group(&values, bits).unwrap();
        let levels = bits.max_code() as f64;
        let lo = values.iter().copied().fold(0.0, f64::min);
        let hi = values.iter().copied().fold(0.0, f64::max);
        let s_real = (hi - lo) / levels;
        let s = g.scale_value();
        let bound = s / 2.0 + levels * (s - s_real).abs() + 1e-12;
        for (x, y) in values.iter().zip(g.dequantize()) {
            prop_assert!((x - y).abs() <= bound, "{} -> {} (bound {})", x, y, bound);
        }
        for y in &g.dequantize()[values.len()..] {
            prop_assert_eq!(*y, 0.0);
        }
    }

    #[test]
    fn group_dot_linear_in_scale(acts in prop::collection::vec(finite_fp16(), GROUP_SIZE), codes in prop::collection::vec(0u8..16, GROUP_SIZE), zero in 0u8..16, exp in 1u16..30, mant in 0u16..1024) {
        let weights: [u8; GROUP_SIZE] = codes.try_into().unwrap();
        let g1 = QuantGroup::new(Fp16Bits(exp << 10 | mant), zero, weights, BitWidth::Int4).unwrap();
        let g2 = QuantGroup::new(Fp16Bits((exp + 1) << 10 | mant), zero, weights, BitWidth::Int4).unwrap();
        let a = align_block(&acts).unwrap();
        prop_assert_eq!(lunit_group_dot(&a, &g2).unwrap(), 2.0 * lunit_group_dot(&a, &g1).unwrap());
    }

    #[test]
    fn padded_groups_are_neutral(rows in 1usize..6, groups in 1usize..4, seed in any::<u64>(), pad_acts in prop::collection::vec(finite_fp16(), GROUP_SIZE), bits in bit_width()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = groups * GROUP_SIZE;
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let acts: Vec<Fp16Bits> = (0..cols).map(|_| encode_fp16(rng.gen_range(-2.0..2.0)).unwrap()).collect();
        let m = QuantMatrix::quantize(rows, cols, &data, bits).unwrap();
        let mut extended = Vec::new();
        for r in 0..rows {
            for g in 0..groups {
                extended.push(m.group(r, g).clone());
            }
            let z = rng.gen_range(0..=bits.max_code());
            extended.push(QuantGroup::new(Fp16Bits(rng.gen_range(1..0x7C00)), z, [z; GROUP_SIZE], bits).unwrap());
        }
        let wide = QuantMatrix::from_groups(rows, cols + GROUP_SIZE, bits, extended).unwrap();
        let mut wide_acts = acts.clone();
        wide_acts.extend(pad_acts);
        let a: Vec<u64> = lunit_matvec(&m, &acts).unwrap().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = lunit_matvec(&wide, &wide_acts).unwrap().iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn brom_reads_agree(depth in 1usize..80, width in 1usize..150, seed in any::<u64>()) {
        let rom = RomContents::random(depth, width, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let brom = BRomArray::new(&rom);
        prop_assert_eq!(brom.padded_depth() % 4, 0);
        for addr in 0..depth {
            let direct = rom.word(addr).unwrap();
            prop_assert_eq!(&rom_read_standard(&rom, addr).unwrap(), &direct);
            prop_assert_eq!(&rom_read_brom(&brom, addr).unwrap(), &direct);
            prop_assert_eq!(&rom_read_brom_wired(&brom, addr).unwrap(), &direct);
        }
    }

    #[test]
    fn fused_never_exceeds_separate(d in prop::collection::vec((0.001f64..100.0, 0.001f64..100.0), 1..8), ub in 0.1f64..=1.0, um in 0.1f64..=1.0) {
        let demands: Vec<CellDemand> = d.iter().map(|&(b, m)| CellDemand::new(b, m)).collect();
        let a = fused_area_of(&demands, ub, um);
        prop_assert!(a.fused <= a.separate * (1.0 + 1e-12));
        let alone = demands.iter().map(|x| fused_area_of(&[*x], ub, um).fused).fold(0.0, f64::max);
        prop_assert!(a.fused >= alone * (1.0 - 1e-12));
    }

    #[test]
    fn capacity_monotone(budget_mb in 0u64..1024, r1 in 0u64..128, r2 in 0u64..128, extra_mb in 0u64..256) {
        let p = CapacityParams::llama32_3b(budget_mb * MB);
        let (lo, hi) = (r1.min(r2), r1.max(r2));
        prop_assert!(max_tokens(&p, hi) <= max_tokens(&p, lo));
        let bigger = p.with_budget((budget_mb + extra_mb) * MB);
        prop_assert!(max_tokens(&bigger, r1) >= max_tokens(&p, r1));
    }

    #[test]
    fn latency_shapes(l in 1u64..8192, model in prop_oneof![Just(PerfModel::Llama32_3bInt4), Just(PerfModel::Llama3_8bInt2)]) {
        let p = LatencyParams::for_model(model);
        prop_assert!(decode_rate(&p, l) < decode_rate(&p, l - 1));
        let (t0, t1, t2) = (prefill_time(&p, l, 16), prefill_time(&p, l + 1, 16), prefill_time(&p, l + 2, 16));
        prop_assert!(t1 > t0);
        prop_assert!(t2 - t1 >= t1 - t0 - 1e-9 * t2);
    }

    #[test]
    fn pack_is_deterministic_and_round_trips(rows in 1usize..5, cols in 1usize..300, seed in any::<u64>(), bits in bit_width()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w = vec![NamedMatrix::new("w", rows, cols, data)];
        let a = pack_model(&w, bits).unwrap();
        let b = pack_model(&w, bits).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        prop_assert_eq!(load_image(&a.to_bytes()).unwrap(), a);
    }
}
