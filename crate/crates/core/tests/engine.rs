use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use roma_sim::config::ModelConfig;
use roma_sim::engine::{compare_with_shadow, load_runtime, ChipTopology, EngineError, ShadowModel, Token};
use roma_sim::numerics::Fp16Bits;
use roma_sim::romimage::{load_image, pack_model, RomImage};
use roma_sim::toy::{toy_checkpoint, ToyCheckpoint};

fn toy(seed: u64) -> ToyCheckpoint {
    toy_checkpoint(&ModelConfig::toy(), seed).unwrap()
}

fn golden() -> (Vec<Token>, Vec<Token>) {
    let text = include_str!("golden/toy_seed0.txt");
    let field = |key: &str| -> Vec<Token> {
        let line = text.lines().find_map(|l| l.strip_prefix(key)).unwrap();
        line.split_whitespace().map(|t| t.parse().unwrap()).collect()
    };
    (field("prompt:"), field("tokens:"))
}

#[test]
fn golden_sequence_from_engine_and_shadow() {
    let ck = toy(0);
    let (prompt, want) = golden();
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).unwrap();
    assert_eq!(rt.generate(&prompt, want.len()).unwrap(), want);
    let shadow = ShadowModel::new(&ck.rom, &ck.lora, &ck.config).unwrap();
    assert_eq!(shadow.generate(&prompt, want.len()).unwrap(), want);
}

#[test]
fn runs_are_bit_identical() {
    let ck = toy(1);
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).unwrap();
    let a = rt.prefill(&[4, 8, 15, 16, 23, 42]).unwrap();
    let b = rt.prefill(&[4, 8, 15, 16, 23, 42]).unwrap();
    assert_eq!(
        a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.1, b.1);
}

#[test]
fn shuffled_directory_order_changes_nothing() {
    let ck = toy(2);
    let mut tensors: Vec<_> = ck.rom.tensors().to_vec();
    tensors.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let mut shuffled = RomImage::new(ck.rom.bits());
    for (name, m) in tensors {
        shuffled.push(name, m).unwrap();
    }
    let shuffled = load_image(&shuffled.to_bytes()).unwrap();
    assert_ne!(shuffled.to_bytes(), ck.rom.to_bytes());
    let topo = ChipTopology::roma();
    let a = load_runtime(&ck.rom, &ck.lora, &ck.config, &topo).unwrap();
    let b = load_runtime(&shuffled, &ck.lora, &ck.config, &topo).unwrap();
    let prompt = [9, 8, 7];
    assert_eq!(a.prefill(&prompt).unwrap(), b.prefill(&prompt).unwrap());
    assert_eq!(a.generate(&prompt, 12).unwrap(), b.generate(&prompt, 12).unwrap());
}

#[test]
fn relabeling_vocab_rows_permutes_logits() {
    let ck = toy(3);
    let cfg = &ck.config;
    let mut perm: Vec<usize> = (0..cfg.vocab).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let mut weights = ck.weights.clone();
    let head = weights.iter_mut().find(|w| w.name == "output").unwrap();
    let h = cfg.hidden;
    let old = head.data.clone();
    for (i, &p) in perm.iter().enumerate() {
        head.data[i * h..(i + 1) * h].copy_from_slice(&old[p * h..(p + 1) * h]);
    }
    let permuted = pack_model(&weights, cfg.bit_width).unwrap();
    let topo = ChipTopology::roma();
    let a = load_runtime(&ck.rom, &ck.lora, cfg, &topo).unwrap();
    let b = load_runtime(&permuted, &ck.lora, cfg, &topo).unwrap();
    let (la, _) = a.prefill(&[1, 2, 3, 4]).unwrap();
    let (lb, _) = b.prefill(&[1, 2, 3, 4]).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(lb[i].to_bits(), la[p].to_bits());
    }
}

#[test]
fn cache_is_append_only() {
    let ck = toy(4);
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).unwrap();
    let (_, mut cache) = rt.prefill(&[10, 20, 30]).unwrap();
    let snapshot: Vec<(Vec<Fp16Bits>, Vec<Fp16Bits>)> =
        (0..ck.config.layers).map(|l| (cache.keys(l).to_vec(), cache.values(l).to_vec())).collect();
    rt.decode_step(40, &mut cache).unwrap();
    rt.decode_step(50, &mut cache).unwrap();
    assert_eq!(cache.len(), 5);
    for (l, (k, v)) in snapshot.iter().enumerate() {
        assert_eq!(&cache.keys(l)[..k.len()], &k[..]);
        assert_eq!(&cache.values(l)[..v.len()], &v[..]);
    }
}

#[test]
fn shadow_divergence_is_bounded() {
    let ck = toy(5);
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).unwrap();
    let shadow = ShadowModel::new(&ck.rom, &ck.lora, &ck.config).unwrap();
    let prompt = vec![2, 7, 1, 8];
    let mut seq = prompt.clone();
    seq.extend(rt.generate(&prompt, 31).unwrap());
    let r = compare_with_shadow(&rt, &shadow, &seq, prompt.len()).unwrap();
    assert_eq!(r.layer_rel_error.len(), 2);
    assert!(r.max_rel_error() <= 1.0 / 32.0, "{r:?}");
    assert_eq!(r.steps, 32);
}

#[test]
fn oversized_adapters_do_not_load() {
    let cfg = ModelConfig { lora_rank: 64, ..ModelConfig::toy() };
    let ck = toy_checkpoint(&cfg, 6).unwrap();
    let tiny = ModelConfig { sram_budget_bytes: Some(64 * 1024), ..cfg };
    let err = load_runtime(&ck.rom, &ck.lora, &tiny, &ChipTopology::roma()).unwrap_err();
    assert!(matches!(err, EngineError::Capacity { .. }));
    assert!(err.to_string().contains("drops to zero"));
}

#[test]
fn streams_share_one_runtime() {
    let ck = toy(7);
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &ChipTopology::roma()).unwrap();
    let solo: Vec<Vec<Token>> = [[1, 2], [3, 4]].iter().map(|p| rt.generate(p, 8).unwrap()).collect();
    let threaded: Vec<Vec<Token>> = std::thread::scope(|s| {
        let handles: Vec<_> = [[1, 2], [3, 4]].iter().map(|p| s.spawn(|| rt.generate(p, 8).unwrap())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(solo, threaded);
}
