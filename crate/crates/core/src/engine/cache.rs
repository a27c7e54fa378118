use crate::numerics::Fp16Bits;

use super::EngineError;

/// Per-layer FP16 keys and values, `[tokens × kv_heads × head_dim]`.
///
/// Entries for the token in flight are staged layer by layer and become
/// visible to `len()` only on [`KvCache::commit`].
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    kv_dim: usize,
    max_len: usize,
    len: usize,
    k: Vec<Vec<Fp16Bits>>,
    v: Vec<Vec<Fp16Bits>>,
}

impl KvCache {
    pub fn new(layers: usize, kv_dim: usize, max_len: usize) -> Self {
        Self { kv_dim, max_len, len: 0, k: vec![Vec::new(); layers], v: vec![Vec::new(); layers] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.max_len
    }

    pub fn layers(&self) -> usize {
        self.k.len()
    }

    pub fn kv_dim(&self) -> usize {
        self.kv_dim
    }

    /// Keys of `layer`, including a staged entry if present.
    pub fn keys(&self, layer: usize) -> &[Fp16Bits] {
        &self.k[layer]
    }

    pub fn values(&self, layer: usize) -> &[Fp16Bits] {
        &self.v[layer]
    }

    /// Key vector of `token` in `layer`.
    pub fn key(&self, layer: usize, token: usize) -> &[Fp16Bits] {
        &self.k[layer][token * self.kv_dim..(token + 1) * self.kv_dim]
    }

    pub fn value(&self, layer: usize, token: usize) -> &[Fp16Bits] {
        &self.v[layer][token * self.kv_dim..(token + 1) * self.kv_dim]
    }

    /// Stage the in-flight token's key and value for `layer`.
    pub fn push(&mut self, layer: usize, k: &[Fp16Bits], v: &[Fp16Bits]) -> Result<(), EngineError> {
        if self.is_full() {
            return Err(EngineError::BufferFull { capacity: self.max_len });
        }
        if k.len() != self.kv_dim || v.len() != self.kv_dim {
            return Err(EngineError::Shape(format!("kv entry of {} values, expected {}", k.len(), self.kv_dim)));
        }
        if self.k[layer].len() != self.len * self.kv_dim {
            return Err(EngineError::Shape(format!("layer {layer} already holds the in-flight token")));
        }
        self.k[layer].extend_from_slice(k);
        self.v[layer].extend_from_slice(v);
        Ok(())
    }

    /// Make the staged token visible; every layer must have staged it.
    pub fn commit(&mut self) -> Result<(), EngineError> {
        let want = (self.len + 1) * self.kv_dim;
        if let Some(l) = self.k.iter().position(|k| k.len() != want) {
            return Err(EngineError::Shape(format!("layer {l} has no staged kv entry")));
        }
        self.len += 1;
        Ok(())
    }

    /// Drop staged, uncommitted entries.
    pub fn rollback(&mut self) {
        let keep = self.len * self.kv_dim;
        for (k, v) in self.k.iter_mut().zip(&mut self.v) {
            k.truncate(keep);
            v.truncate(keep);
        }
    }

    /// Bytes held by committed entries (FP16).
    pub fn bytes(&self) -> usize {
        self.layers() * 2 * self.len * self.kv_dim * 2
    }
}
