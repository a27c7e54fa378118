//! Toy-scale QLoRA decoder executed through the L-Unit and H-Unit paths.
//!
//! Base projections run on [`lunit_matvec`] over the quantized ROM image and
//! adapters on [`hunit_lora_matvec`]; their sum is cast to FP16. Norms,
//! rotary embeddings, softmax and the MLP gate run in `f64` and are cast to
//! FP16 at each operator boundary. Transcendentals come from `libm` so that
//! results do not depend on the platform's math library.

mod cache;
mod shadow;
mod topology;

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

pub use cache::KvCache;
pub use shadow::{compare_with_shadow, ShadowCache, ShadowModel, ShadowReport};
pub use topology::{ChipTopology, UnitKind};

use crate::config::{Attachment, ModelConfig, Projection};
use crate::numerics::{decode_fp16, encode_fp16, Fp16Bits, NumericsError};
use crate::perf::{max_tokens, CapacityParams};
use crate::qcore::{hunit_lora_matvec, lunit_matvec, LoraPair, QcoreError, QuantMatrix};
use crate::romimage::{ImageError, LoraImage, RomImage};

pub type Token = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Qcore(#[from] QcoreError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(
        "SRAM budget of {budget} bytes leaves no room for tokens: LoRA weights take {lora_bytes} bytes \
         and each cached token needs {kv_bytes_per_token} bytes. KV cache and LoRA weights share the \
         on-chip SRAM, so token capacity drops to zero once the adapters fill it"
    )]
    Capacity { budget: u64, lora_bytes: u64, kv_bytes_per_token: u64 },
    #[error("buffer full: the KV cache holds at most {capacity} tokens in the SRAM left over after LoRA weights")]
    BufferFull { capacity: usize },
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: Token, vocab: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("shape error: {0}")]
    Shape(String),
}

fn fp16(x: f64) -> Result<Fp16Bits, EngineError> {
    Ok(encode_fp16(x)?)
}

fn to_fp16(xs: &[f64]) -> Result<Vec<Fp16Bits>, EngineError> {
    xs.iter().map(|&x| fp16(x)).collect()
}

fn widen(xs: &[Fp16Bits]) -> Result<Vec<f64>, EngineError> {
    Ok(xs.iter().map(|&x| decode_fp16(x)).collect::<Result<_, _>>()?)
}

pub(crate) fn rms_norm(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

/// Rotate consecutive pairs `(x[2i], x[2i+1])` of every head by
/// `pos · base^(−2i/head_dim)`.
pub(crate) fn rope(x: &mut [f64], pos: usize, head_dim: usize, base: f64) {
    for head in x.chunks_mut(head_dim) {
        for (i, pair) in head.chunks_mut(2).enumerate() {
            let theta = pos as f64 * libm::pow(base, -2.0 * i as f64 / head_dim as f64);
            let (s, c) = (libm::sin(theta), libm::cos(theta));
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c - b * s;
            pair[1] = a * s + b * c;
        }
    }
}

pub(crate) fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = libm::exp(*s - max);
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> Token {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as Token
}

/// A base projection split by output rows over the matrix-unit columns,
/// with its optional adapter.
#[derive(Debug, Clone)]
struct Projector {
    cols: usize,
    slices: Vec<(Range<usize>, QuantMatrix)>,
    lora: Option<LoraPair>,
}

impl Projector {
    fn new(m: &QuantMatrix, topo: &ChipTopology, lora: Option<LoraPair>) -> Result<Self, EngineError> {
        let gpr = m.groups_per_row();
        let slices = topo
            .partition_rows(m.rows())
            .into_iter()
            .filter(|r| !r.is_empty())
            .map(|r| {
                let groups = m.groups()[r.start * gpr..r.end * gpr].to_vec();
                Ok((r.clone(), QuantMatrix::from_groups(r.len(), m.cols(), m.bits(), groups)?))
            })
            .collect::<Result<_, EngineError>>()?;
        Ok(Self { cols: m.cols(), slices, lora })
    }

    /// Base plus adapter output before the FP16 cast.
    fn apply_wide(&self, x: &[Fp16Bits]) -> Result<Vec<f64>, EngineError> {
        if x.len() != self.cols {
            return Err(EngineError::Shape(format!("projection expects {} inputs, got {}", self.cols, x.len())));
        }
        let mut y = Vec::new();
        for (_, m) in &self.slices {
            y.extend(lunit_matvec(m, x)?);
        }
        if let Some(lora) = &self.lora {
            for (yi, d) in y.iter_mut().zip(hunit_lora_matvec(lora, x)?) {
                *yi += d;
            }
        }
        Ok(y)
    }

    fn apply(&self, x: &[Fp16Bits]) -> Result<Vec<Fp16Bits>, EngineError> {
        to_fp16(&self.apply_wide(x)?)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    attn_norm: Vec<f64>,
    ffn_norm: Vec<f64>,
    proj: BTreeMap<Projection, Projector>,
}

impl Layer {
    fn p(&self, p: Projection) -> &Projector {
        &self.proj[&p]
    }
}

/// Rows of one base tensor held by each matrix-unit column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightShare {
    pub tensor: String,
    pub rows_per_column: Vec<usize>,
}

/// Immutable, loaded model. One runtime can serve several streams, each
/// with its own [`KvCache`].
#[derive(Debug, Clone)]
pub struct Runtime {
    cfg: ModelConfig,
    topo: ChipTopology,
    embed: QuantMatrix,
    final_norm: Vec<f64>,
    head: Projector,
    layers: Vec<Layer>,
    shares: Vec<WeightShare>,
    lora_bytes: u64,
    max_tokens: usize,
}

fn check_shape(name: &str, m: &QuantMatrix, rows: usize, cols: usize) -> Result<(), EngineError> {
    if (m.rows(), m.cols()) != (rows, cols) {
        return Err(ImageError::ConfigMismatch(format!(
            "{name} is {}x{}, config expects {rows}x{cols}",
            m.rows(),
            m.cols()
        ))
        .into());
    }
    Ok(())
}

/// Bind images to a config and topology, partition the base weights over
/// the matrix-unit columns and charge adapters plus KV cache to SRAM.
pub fn load_runtime(
    rom: &RomImage,
    lora: &LoraImage,
    cfg: &ModelConfig,
    topo: &ChipTopology,
) -> Result<Runtime, EngineError> {
    cfg.validate().map_err(|e| EngineError::Config(e.to_string()))?;
    if rom.bits() != cfg.bit_width {
        return Err(ImageError::ConfigMismatch(format!(
            "image holds {}-bit weights, config says {}-bit",
            rom.bits().bits(),
            cfg.bit_width.bits()
        ))
        .into());
    }
    let specs = cfg.tensor_specs();
    for (name, _) in rom.tensors() {
        if !specs.iter().any(|s| &s.name == name) {
            return Err(ImageError::ConfigMismatch(format!("unexpected tensor {name}")).into());
        }
    }
    let mut shares = Vec::new();
    let mut get = |name: &str, rows: usize, cols: usize| -> Result<&QuantMatrix, EngineError> {
        let m = rom.tensor(name).ok_or_else(|| ImageError::ConfigMismatch(format!("missing tensor {name}")))?;
        check_shape(name, m, rows, cols)?;
        if rows > 1 {
            shares.push(WeightShare {
                tensor: name.to_string(),
                rows_per_column: topo.partition_rows(rows).iter().map(|r| r.len()).collect(),
            });
        }
        Ok(m)
    };
    let gains = |m: &QuantMatrix| m.dequantize();

    lora.validate_against(cfg)?;
    let h = cfg.hidden;
    let embed = get("tok_embeddings", cfg.vocab, h)?.clone();
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let attn_norm = gains(get(&format!("layers.{l}.attention_norm"), 1, h)?);
        let ffn_norm = gains(get(&format!("layers.{l}.ffn_norm"), 1, h)?);
        let mut proj = BTreeMap::new();
        for p in Projection::ALL {
            let (rows, cols) = cfg.projection_shape(p);
            let m = get(&p.tensor_name(l), rows, cols)?;
            let adapter = lora.get(&Attachment { layer: l, projection: p }).cloned();
            proj.insert(p, Projector::new(m, topo, adapter)?);
        }
        layers.push(Layer { attn_norm, ffn_norm, proj });
    }
    let final_norm = gains(get("norm", 1, h)?);
    let head = if cfg.tie_embeddings {
        Projector::new(&embed, topo, None)?
    } else {
        Projector::new(get("output", cfg.vocab, h)?, topo, None)?
    };

    let lora_bytes = lora.sram_bytes();
    let kv = cfg.kv_bytes_per_token();
    let max_tokens = match cfg.sram_budget_bytes {
        None => usize::MAX,
        Some(budget) => {
            let rank = lora.rank().max(1) as u64;
            let params = CapacityParams {
                kv_bytes_per_token: kv,
                lora_bytes_per_rank: lora_bytes.div_ceil(rank),
                sram_budget_bytes: budget,
                anchors: Vec::new(),
            };
            let tokens = if lora_bytes > budget { 0 } else { max_tokens(&params, rank) };
            if tokens == 0 {
                return Err(EngineError::Capacity { budget, lora_bytes, kv_bytes_per_token: kv });
            }
            usize::try_from(tokens).unwrap_or(usize::MAX)
        }
    };

    Ok(Runtime { cfg: cfg.clone(), topo: *topo, embed, final_norm, head, layers, shares, lora_bytes, max_tokens })
}

impl Runtime {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &ChipTopology {
        &self.topo
    }

    /// Tokens of KV cache that fit in SRAM beside the adapters.
    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn lora_bytes(&self) -> u64 {
        self.lora_bytes
    }

    /// Row partition of every multi-row base tensor.
    pub fn weight_shares(&self) -> &[WeightShare] {
        &self.shares
    }

    pub fn weight_share(&self, tensor: &str) -> Option<&WeightShare> {
        self.shares.iter().find(|s| s.tensor == tensor)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.cfg.layers, self.cfg.kv_dim(), self.max_tokens)
    }

    /// FP16 embedding of `token`.
    pub fn embed(&self, token: Token) -> Result<Vec<Fp16Bits>, EngineError> {
        if token as usize >= self.cfg.vocab {
            return Err(EngineError::TokenOutOfRange { token, vocab: self.cfg.vocab });
        }
        to_fp16(&self.embed.dequantize_row(token as usize))
    }

    /// One transformer block for the token at position `cache.len()`. The
    /// token's key and value are staged in `cache`; call
    /// [`KvCache::commit`] once every layer has run.
    pub fn forward_layer(
        &self,
        layer: usize,
        x: &[Fp16Bits],
        cache: &mut KvCache,
    ) -> Result<Vec<Fp16Bits>, EngineError> {
        let cfg = &self.cfg;
        let w = self.layers.get(layer).ok_or_else(|| EngineError::Shape(format!("layer {layer} of {}", cfg.layers)))?;
        if x.len() != cfg.hidden {
            return Err(EngineError::Shape(format!("hidden state of {}, expected {}", x.len(), cfg.hidden)));
        }
        let pos = cache.len();
        let xw = widen(x)?;

        let hn = to_fp16(&rms_norm(&xw, &w.attn_norm, cfg.norm_eps))?;
        let mut q = widen(&w.p(Projection::Q).apply(&hn)?)?;
        let mut k = widen(&w.p(Projection::K).apply(&hn)?)?;
        let v = w.p(Projection::V).apply(&hn)?;
        rope(&mut q, pos, cfg.head_dim, cfg.rope_base);
        rope(&mut k, pos, cfg.head_dim, cfg.rope_base);
        let q = widen(&to_fp16(&q)?)?;
        cache.push(layer, &to_fp16(&k)?, &v)?;

        let attn = to_fp16(&self.attention(layer, &q, cache)?)?;
        let o = w.p(Projection::O).apply_wide(&attn)?;
        let h1: Vec<f64> = widen(&to_fp16(&xw.iter().zip(&o).map(|(a, b)| a + b).collect::<Vec<_>>())?)?;

        let hn = to_fp16(&rms_norm(&h1, &w.ffn_norm, cfg.norm_eps))?;
        let gate = widen(&w.p(Projection::Gate).apply(&hn)?)?;
        let up = widen(&w.p(Projection::Up).apply(&hn)?)?;
        let act = to_fp16(&gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect::<Vec<_>>())?;
        let down = w.p(Projection::Down).apply_wide(&act)?;
        to_fp16(&h1.iter().zip(&down).map(|(a, b)| a + b).collect::<Vec<_>>())
    }

    /// Grouped-query attention of `q` over every cached position of `layer`,
    /// including the staged one.
    fn attention(&self, layer: usize, q: &[f64], cache: &KvCache) -> Result<Vec<f64>, EngineError> {
        let cfg = &self.cfg;
        let (d, kv_dim) = (cfg.head_dim, cfg.kv_dim());
        let group = cfg.heads / cfg.kv_heads;
        let keys = widen(cache.keys(layer))?;
        let values = widen(cache.values(layer))?;
        let n = keys.len() / kv_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = vec![0.0; cfg.hidden];
        for h in 0..cfg.heads {
            let kvh = h / group;
            let qh = &q[h * d..(h + 1) * d];
            let mut scores: Vec<f64> = (0..n)
                .map(|t| {
                    let kt = &keys[t * kv_dim + kvh * d..t * kv_dim + (kvh + 1) * d];
                    qh.iter().zip(kt).map(|(a, b)| a * b).sum::<f64>() * scale
                })
                .collect();
            softmax(&mut scores);
            let oh = &mut out[h * d..(h + 1) * d];
            for (t, p) in scores.iter().enumerate() {
                let vt = &values[t * kv_dim + kvh * d..t * kv_dim + (kvh + 1) * d];
                for (o, v) in oh.iter_mut().zip(vt) {
                    *o += p * v;
                }
            }
        }
        Ok(out)
    }

    /// Final norm and output head.
    pub fn logits(&self, x: &[Fp16Bits]) -> Result<Vec<f64>, EngineError> {
        let xn = to_fp16(&rms_norm(&widen(x)?, &self.final_norm, self.cfg.norm_eps))?;
        self.head.apply_wide(&xn)
    }

    /// Single-token forward; appends to `cache` and returns the logits.
    pub fn decode_step(&self, token: Token, cache: &mut KvCache) -> Result<Vec<f64>, EngineError> {
        self.decode_step_traced(token, cache).map(|(logits, _)| logits)
    }

    /// As [`Runtime::decode_step`], also returning every layer's output.
    pub fn decode_step_traced(
        &self,
        token: Token,
        cache: &mut KvCache,
    ) -> Result<(Vec<f64>, Vec<Vec<Fp16Bits>>), EngineError> {
        if cache.is_full() {
            return Err(EngineError::BufferFull { capacity: cache.max_len() });
        }
        if cache.layers() != self.cfg.layers || cache.kv_dim() != self.cfg.kv_dim() {
            return Err(EngineError::Shape("cache built for a different model".into()));
        }
        let run = |cache: &mut KvCache| -> Result<(Vec<f64>, Vec<Vec<Fp16Bits>>), EngineError> {
            let mut x = self.embed(token)?;
            let mut trace = Vec::with_capacity(self.cfg.layers);
            for l in 0..self.cfg.layers {
                x = self.forward_layer(l, &x, cache)?;
                trace.push(x.clone());
            }
            let logits = self.logits(&x)?;
            cache.commit()?;
            Ok((logits, trace))
        };
        run(cache).inspect_err(|_| cache.rollback())
    }

    /// Sequential prefill; returns the last position's logits and the cache.
    pub fn prefill(&self, tokens: &[Token]) -> Result<(Vec<f64>, KvCache), EngineError> {
        let mut cache = self.new_cache();
        let logits = self.extend(tokens, &mut cache)?;
        Ok((logits, cache))
    }

    /// Feed `tokens` into an existing cache.
    pub fn extend(&self, tokens: &[Token], cache: &mut KvCache) -> Result<Vec<f64>, EngineError> {
        if tokens.is_empty() {
            return Err(EngineError::EmptyPrompt);
        }
        if cache.len() + tokens.len() > cache.max_len() {
            return Err(EngineError::BufferFull { capacity: cache.max_len() });
        }
        let mut logits = Vec::new();
        for &t in tokens {
            logits = self.decode_step(t, cache)?;
        }
        Ok(logits)
    }

    /// Greedy generation of `max_new` tokens after `prompt`.
    pub fn generate(&self, prompt: &[Token], max_new: usize) -> Result<Vec<Token>, EngineError> {
        let (mut logits, mut cache) = self.prefill(prompt)?;
        let mut out = Vec::with_capacity(max_new);
        while out.len() < max_new {
            let next = argmax(&logits);
            out.push(next);
            if out.len() < max_new {
                logits = self.decode_step(next, &mut cache)?;
            }
        }
        Ok(out)
    }
}
