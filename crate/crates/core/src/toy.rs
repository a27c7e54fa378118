//! Deterministic random checkpoints for the toy configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, TensorRole};
use crate::numerics::Fp8Format;
use crate::qcore::LoraPair;
use crate::romimage::{pack_model, ImageError, LoraImage, NamedMatrix, RomImage};

/// Real-valued weights plus their packed images.
#[derive(Debug, Clone)]
pub struct ToyCheckpoint {
    pub config: ModelConfig,
    pub weights: Vec<NamedMatrix>,
    pub lora_weights: Vec<NamedMatrix>,
    pub rom: RomImage,
    pub lora: LoraImage,
}

/// Values are drawn as `f32` so a weights file round-trips exactly.
fn uniform(rng: &mut ChaCha8Rng, n: usize, center: f64, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| (center + rng.gen_range(-half_width..=half_width)) as f32 as f64).collect()
}

/// Base weights `U(±√(3/cols))` (unit output variance for unit inputs),
/// embeddings `U(±1)`, norm gains `1 ± 0.1`; adapter `A` like the base and
/// `B` at half that scale over the rank.
pub fn toy_checkpoint(cfg: &ModelConfig, seed: u64) -> Result<ToyCheckpoint, ImageError> {
    cfg.validate().map_err(|e| ImageError::ConfigMismatch(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<NamedMatrix> = cfg
        .tensor_specs()
        .into_iter()
        .map(|t| {
            let n = t.rows * t.cols;
            let data = match t.role {
                TensorRole::Embedding => uniform(&mut rng, n, 0.0, 1.0),
                _ if t.rows == 1 => uniform(&mut rng, n, 1.0, 0.1),
                _ => uniform(&mut rng, n, 0.0, (3.0 / t.cols as f64).sqrt()),
            };
            NamedMatrix::new(t.name, t.rows, t.cols, data)
        })
        .collect();
    let rom = pack_model(&weights, cfg.bit_width)?;

    let format = Fp8Format::default();
    let r = cfg.lora_rank;
    let mut lora = LoraImage::new(format);
    let mut lora_weights = Vec::new();
    for at in cfg.attachments() {
        let (rows, cols) = cfg.projection_shape(at.projection);
        let a = uniform(&mut rng, r * cols, 0.0, (3.0 / cols as f64).sqrt());
        let b = uniform(&mut rng, rows * r, 0.0, 0.5 * (3.0 / r as f64).sqrt());
        lora.insert(at, LoraPair::from_f64(rows, cols, r, format, &a, &b)?)?;
        lora_weights.push(NamedMatrix::new(at.a_name(), r, cols, a));
        lora_weights.push(NamedMatrix::new(at.b_name(), rows, r, b));
    }
    Ok(ToyCheckpoint { config: cfg.clone(), weights, lora_weights, rom, lora })
}
