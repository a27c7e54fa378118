//! Decoder-only transformer shapes, LoRA attachment points and the tensor
//! naming scheme shared by the image packer and the runtime.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::BitWidth;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid model config: {0}")]
    Invalid(String),
    #[error("cannot parse model config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read model config: {0}")]
    Io(#[from] std::io::Error),
}

/// The seven linear projections of a Llama block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl Projection {
    pub const ALL: [Projection; 7] = [
        Projection::Q,
        Projection::K,
        Projection::V,
        Projection::O,
        Projection::Gate,
        Projection::Up,
        Projection::Down,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Q => "q",
            Projection::K => "k",
            Projection::V => "v",
            Projection::O => "o",
            Projection::Gate => "gate",
            Projection::Up => "up",
            Projection::Down => "down",
        }
    }

    /// Base tensor name of this projection in `layer`.
    pub fn tensor_name(self, layer: usize) -> String {
        let suffix = match self {
            Projection::Q => "attention.wq",
            Projection::K => "attention.wk",
            Projection::V => "attention.wv",
            Projection::O => "attention.wo",
            Projection::Gate => "feed_forward.w1",
            Projection::Up => "feed_forward.w3",
            Projection::Down => "feed_forward.w2",
        };
        format!("layers.{layer}.{suffix}")
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Projection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Projection::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown projection {s:?}"))
    }
}

/// Where a LoRA pair plugs into the base model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attachment {
    pub layer: usize,
    pub projection: Projection,
}

impl Attachment {
    pub fn a_name(&self) -> String {
        format!("layers.{}.{}.lora_a", self.layer, self.projection)
    }

    pub fn b_name(&self) -> String {
        format!("layers.{}.{}.lora_b", self.layer, self.projection)
    }

    /// Parse `layers.{l}.{proj}.lora_a|lora_b`; the flag is true for `A`.
    pub fn parse_name(name: &str) -> Option<(Attachment, bool)> {
        let rest = name.strip_prefix("layers.")?;
        let mut parts = rest.split('.');
        let layer = parts.next()?.parse().ok()?;
        let projection = parts.next()?.parse().ok()?;
        let is_a = match parts.next()? {
            "lora_a" => true,
            "lora_b" => false,
            _ => return None,
        };
        parts.next().is_none().then_some((Attachment { layer, projection }, is_a))
    }
}

/// Role of a base tensor, used to tell transformer-block weights from the
/// embedding and output tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Embedding,
    Block,
    FinalNorm,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub role: TensorRole,
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-5
}

fn default_targets() -> Vec<Projection> {
    Projection::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub mlp: usize,
    pub vocab: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    pub bit_width: BitWidth,
    #[serde(default)]
    pub lora_rank: usize,
    #[serde(default = "default_targets")]
    pub lora_targets: Vec<Projection>,
    /// Output head shares the embedding table.
    #[serde(default)]
    pub tie_embeddings: bool,
    /// SRAM available for LoRA weights plus KV cache; unlimited when absent.
    #[serde(default)]
    pub sram_budget_bytes: Option<u64>,
}

impl ModelConfig {
    /// Two-layer model used throughout the tests and examples.
    pub fn toy() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            kv_heads: 2,
            head_dim: 16,
            mlp: 160,
            vocab: 96,
            rope_base: default_rope_base(),
            norm_eps: default_norm_eps(),
            bit_width: BitWidth::Int4,
            lora_rank: 4,
            lora_targets: default_targets(),
            tie_embeddings: false,
            sram_budget_bytes: None,
        }
    }

    /// Llama 3.2 3B shapes with 4-bit base weights.
    pub fn llama32_3b() -> Self {
        Self {
            layers: 28,
            hidden: 3072,
            heads: 24,
            kv_heads: 8,
            head_dim: 128,
            mlp: 8192,
            vocab: 128_256,
            rope_base: 500_000.0,
            norm_eps: default_norm_eps(),
            bit_width: BitWidth::Int4,
            lora_rank: 16,
            lora_targets: default_targets(),
            tie_embeddings: true,
            sram_budget_bytes: None,
        }
    }

    /// Llama 3 8B shapes with 2-bit base weights.
    pub fn llama3_8b() -> Self {
        Self {
            layers: 32,
            hidden: 4096,
            heads: 32,
            kv_heads: 8,
            head_dim: 128,
            mlp: 14_336,
            vocab: 128_256,
            rope_base: 500_000.0,
            norm_eps: default_norm_eps(),
            bit_width: BitWidth::Int2,
            lora_rank: 16,
            lora_targets: default_targets(),
            tie_embeddings: false,
            sram_budget_bytes: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ModelConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if [self.layers, self.hidden, self.heads, self.kv_heads, self.head_dim, self.mlp, self.vocab].contains(&0) {
            return bad("all dimensions must be positive".into());
        }
        if self.hidden != self.heads * self.head_dim {
            return bad(format!(
                "hidden ({}) must equal heads ({}) x head_dim ({})",
                self.hidden, self.heads, self.head_dim
            ));
        }
        if !self.heads.is_multiple_of(self.kv_heads) {
            return bad(format!("kv_heads ({}) must divide heads ({})", self.kv_heads, self.heads));
        }
        if !self.head_dim.is_multiple_of(2) {
            return bad("head_dim must be even for rotary embeddings".into());
        }
        if !(self.rope_base > 0.0 && self.norm_eps > 0.0) {
            return bad("rope_base and norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn kv_dim(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    /// `(rows, cols)` of a projection's weight matrix (`rows` outputs).
    pub fn projection_shape(&self, p: Projection) -> (usize, usize) {
        match p {
            Projection::Q => (self.hidden, self.hidden),
            Projection::K | Projection::V => (self.kv_dim(), self.hidden),
            Projection::O => (self.hidden, self.hidden),
            Projection::Gate | Projection::Up => (self.mlp, self.hidden),
            Projection::Down => (self.hidden, self.mlp),
        }
    }

    /// Every base tensor the runtime expects, in canonical order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = vec![TensorSpec {
            name: "tok_embeddings".into(),
            rows: self.vocab,
            cols: self.hidden,
            role: TensorRole::Embedding,
        }];
        for l in 0..self.layers {
            let norm = |n: &str| TensorSpec {
                name: format!("layers.{l}.{n}"),
                rows: 1,
                cols: self.hidden,
                role: TensorRole::Block,
            };
            specs.push(norm("attention_norm"));
            for p in [Projection::Q, Projection::K, Projection::V, Projection::O] {
                let (rows, cols) = self.projection_shape(p);
                specs.push(TensorSpec { name: p.tensor_name(l), rows, cols, role: TensorRole::Block });
            }
            specs.push(norm("ffn_norm"));
            for p in [Projection::Gate, Projection::Up, Projection::Down] {
                let (rows, cols) = self.projection_shape(p);
                specs.push(TensorSpec { name: p.tensor_name(l), rows, cols, role: TensorRole::Block });
            }
        }
        specs.push(TensorSpec { name: "norm".into(), rows: 1, cols: self.hidden, role: TensorRole::FinalNorm });
        if !self.tie_embeddings {
            specs.push(TensorSpec {
                name: "output".into(),
                rows: self.vocab,
                cols: self.hidden,
                role: TensorRole::Head,
            });
        }
        specs
    }

    /// Name of the matrix used as the output head.
    pub fn head_tensor(&self) -> &'static str {
        if self.tie_embeddings {
            "tok_embeddings"
        } else {
            "output"
        }
    }

    /// Attachments implied by `lora_rank` and `lora_targets`.
    pub fn attachments(&self) -> Vec<Attachment> {
        if self.lora_rank == 0 {
            return Vec::new();
        }
        (0..self.layers)
            .flat_map(|layer| {
                Projection::ALL
                    .into_iter()
                    .filter(|p| self.lora_targets.contains(p))
                    .map(move |projection| Attachment { layer, projection })
            })
            .collect()
    }

    /// LoRA parameters added per unit of rank: `Σ (rows + cols)` over all attachments.
    pub fn lora_params_per_rank(&self) -> u64 {
        Projection::ALL
            .into_iter()
            .filter(|p| self.lora_targets.contains(p))
            .map(|p| {
                let (r, c) = self.projection_shape(p);
                (r + c) as u64
            })
            .sum::<u64>()
            * self.layers as u64
    }

    /// Weights touched by linear projections per token (blocks plus head).
    pub fn linear_params_per_token(&self) -> u64 {
        let block: u64 = Projection::ALL
            .into_iter()
            .map(|p| {
                let (r, c) = self.projection_shape(p);
                (r * c) as u64
            })
            .sum();
        block * self.layers as u64 + (self.vocab * self.hidden) as u64
    }

    /// FP16 K and V bytes stored per cached token.
    pub fn kv_bytes_per_token(&self) -> u64 {
        (self.layers * 2 * self.kv_dim() * 2) as u64
    }
}
