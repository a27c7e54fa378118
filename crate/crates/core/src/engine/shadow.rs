//! FP64 reference: the same network on dequantized weights and decoded
//! adapters, with no activation alignment and no FP16 casts.

use std::collections::BTreeMap;

use crate::config::{Attachment, ModelConfig, Projection};
use crate::numerics::decode_fp16;
use crate::romimage::{ImageError, LoraImage, RomImage};

use super::{argmax, rms_norm, rope, silu, softmax, EngineError, Runtime, Token};

#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    /// `(rank, A, B)` decoded adapter.
    lora: Option<(usize, Vec<f64>, Vec<f64>)>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.w.chunks(self.cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        if let Some((rank, a, b)) = &self.lora {
            let h: Vec<f64> = a.chunks(self.cols).map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect();
            for (o, yo) in y.iter_mut().enumerate() {
                *yo += b[o * rank..(o + 1) * rank].iter().zip(&h).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        debug_assert_eq!(y.len(), self.rows);
        y
    }
}

#[derive(Debug, Clone)]
struct ShadowLayer {
    attn_norm: Vec<f64>,
    ffn_norm: Vec<f64>,
    proj: BTreeMap<Projection, Dense>,
}

#[derive(Debug, Clone)]
pub struct ShadowModel {
    cfg: ModelConfig,
    embed: Vec<f64>,
    final_norm: Vec<f64>,
    head: Dense,
    layers: Vec<ShadowLayer>,
}

/// Unquantized per-layer keys and values.
#[derive(Debug, Clone, Default)]
pub struct ShadowCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl ShadowCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl ShadowModel {
    pub fn new(rom: &RomImage, lora: &LoraImage, cfg: &ModelConfig) -> Result<Self, EngineError> {
        let get = |name: &str| {
            rom.tensor(name)
                .map(|m| m.dequantize())
                .ok_or_else(|| EngineError::from(ImageError::ConfigMismatch(format!("missing tensor {name}"))))
        };
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut proj = BTreeMap::new();
                for p in Projection::ALL {
                    let (rows, cols) = cfg.projection_shape(p);
                    let adapter = lora
                        .get(&Attachment { layer: l, projection: p })
                        .map(|pair| (pair.rank(), pair.a_values().to_vec(), pair.b_values().to_vec()));
                    proj.insert(p, Dense { rows, cols, w: get(&p.tensor_name(l))?, lora: adapter });
                }
                Ok(ShadowLayer {
                    attn_norm: get(&format!("layers.{l}.attention_norm"))?,
                    ffn_norm: get(&format!("layers.{l}.ffn_norm"))?,
                    proj,
                })
            })
            .collect::<Result<_, EngineError>>()?;
        let embed = get("tok_embeddings")?;
        let head = Dense { rows: cfg.vocab, cols: cfg.hidden, w: get(cfg.head_tensor())?, lora: None };
        Ok(Self { cfg: cfg.clone(), embed, final_norm: get("norm")?, head, layers })
    }

    pub fn new_cache(&self) -> ShadowCache {
        ShadowCache { k: vec![Vec::new(); self.cfg.layers], v: vec![Vec::new(); self.cfg.layers], len: 0 }
    }

    /// One token; returns logits and every layer's output.
    pub fn step(&self, token: Token, cache: &mut ShadowCache) -> Result<(Vec<f64>, Vec<Vec<f64>>), EngineError> {
        let cfg = &self.cfg;
        let (h, d, kv_dim) = (cfg.hidden, cfg.head_dim, cfg.kv_dim());
        let t = token as usize;
        if t >= cfg.vocab {
            return Err(EngineError::TokenOutOfRange { token, vocab: cfg.vocab });
        }
        let pos = cache.len;
        let mut x = self.embed[t * h..(t + 1) * h].to_vec();
        let mut trace = Vec::with_capacity(cfg.layers);
        for (l, w) in self.layers.iter().enumerate() {
            let hn = rms_norm(&x, &w.attn_norm, cfg.norm_eps);
            let mut q = w.proj[&Projection::Q].apply(&hn);
            let mut k = w.proj[&Projection::K].apply(&hn);
            let v = w.proj[&Projection::V].apply(&hn);
            rope(&mut q, pos, d, cfg.rope_base);
            rope(&mut k, pos, d, cfg.rope_base);
            cache.k[l].extend(k);
            cache.v[l].extend(v);

            let n = pos + 1;
            let group = cfg.heads / cfg.kv_heads;
            let mut attn = vec![0.0; h];
            for head in 0..cfg.heads {
                let off = (head / group) * d;
                let qh = &q[head * d..(head + 1) * d];
                let mut s: Vec<f64> = (0..n)
                    .map(|j| {
                        let kj = &cache.k[l][j * kv_dim + off..j * kv_dim + off + d];
                        qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
                    })
                    .collect();
                softmax(&mut s);
                for (j, p) in s.iter().enumerate() {
                    let vj = &cache.v[l][j * kv_dim + off..j * kv_dim + off + d];
                    for (o, vv) in attn[head * d..(head + 1) * d].iter_mut().zip(vj) {
                        *o += p * vv;
                    }
                }
            }
            let o = w.proj[&Projection::O].apply(&attn);
            for (xi, oi) in x.iter_mut().zip(o) {
                *xi += oi;
            }
            let hn = rms_norm(&x, &w.ffn_norm, cfg.norm_eps);
            let g = w.proj[&Projection::Gate].apply(&hn);
            let u = w.proj[&Projection::Up].apply(&hn);
            let act: Vec<f64> = g.iter().zip(&u).map(|(&a, &b)| silu(a) * b).collect();
            for (xi, di) in x.iter_mut().zip(w.proj[&Projection::Down].apply(&act)) {
                *xi += di;
            }
            trace.push(x.clone());
        }
        cache.len += 1;
        let logits = self.head.apply(&rms_norm(&x, &self.final_norm, cfg.norm_eps));
        Ok((logits, trace))
    }

    pub fn generate(&self, prompt: &[Token], max_new: usize) -> Result<Vec<Token>, EngineError> {
        if prompt.is_empty() {
            return Err(EngineError::EmptyPrompt);
        }
        let mut cache = self.new_cache();
        let mut logits = Vec::new();
        for &t in prompt {
            logits = self.step(t, &mut cache)?.0;
        }
        let mut out = Vec::with_capacity(max_new);
        while out.len() < max_new {
            let next = argmax(&logits);
            out.push(next);
            if out.len() < max_new {
                logits = self.step(next, &mut cache)?.0;
            }
        }
        Ok(out)
    }
}

/// Engine-vs-shadow divergence over one teacher-forced token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowReport {
    /// Positions whose next-token prediction was compared.
    pub steps: usize,
    /// Positions where both picked the same next token.
    pub greedy_matches: usize,
    /// Largest `‖engine − shadow‖₂ / ‖shadow‖₂` per layer over all positions.
    pub layer_rel_error: Vec<f64>,
}

impl ShadowReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layer_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn agreement(&self) -> f64 {
        if self.steps == 0 {
            1.0
        } else {
            self.greedy_matches as f64 / self.steps as f64
        }
    }
}

/// Feed `tokens` through both models and compare every layer output; the
/// next-token choice is compared from position `prompt_len − 1` on.
pub fn compare_with_shadow(
    runtime: &Runtime,
    shadow: &ShadowModel,
    tokens: &[Token],
    prompt_len: usize,
) -> Result<ShadowReport, EngineError> {
    if tokens.is_empty() {
        return Err(EngineError::EmptyPrompt);
    }
    let mut cache = runtime.new_cache();
    let mut scache = shadow.new_cache();
    let mut report = ShadowReport { steps: 0, greedy_matches: 0, layer_rel_error: vec![0.0; runtime.config().layers] };
    for (pos, &t) in tokens.iter().enumerate() {
        let (logits, trace) = runtime.decode_step_traced(t, &mut cache)?;
        let (slogits, strace) = shadow.step(t, &mut scache)?;
        for (l, (e, s)) in trace.iter().zip(&strace).enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, b) in e.iter().zip(s) {
                let a = decode_fp16(*a)?;
                num += (a - b) * (a - b);
                den += b * b;
            }
            let rel = if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };
            report.layer_rel_error[l] = report.layer_rel_error[l].max(rel);
        }
        if pos + 1 >= prompt_len {
            report.steps += 1;
            report.greedy_matches += usize::from(argmax(&logits) == argmax(&slogits));
        }
    }
    Ok(report)
}
