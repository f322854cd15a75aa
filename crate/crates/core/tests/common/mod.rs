//! Oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

pub mod codec_oracle;
pub mod state_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_core::model::linalg::log_sum_exp;
use tactile_core::model::{HybridConfig, LstmConfig, Model, ModelConfig};

/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-4;

/// Downsized hybrid for finite-difference checks.
pub fn tiny_hybrid() -> ModelConfig {
    ModelConfig::Hybrid(HybridConfig {
        seq_len: 5,
        grid: 10,
        conv1: 3,
        conv2: 4,
        d_model: 8,
        heads: 2,
        ffn: 16,
        layers: 2,
        head_hidden: 8,
        classes: 15,
    })
}

pub fn tiny_lstm() -> ModelConfig {
    ModelConfig::Lstm(LstmConfig {
        seq_len: 5,
        input: 16,
        hidden: 6,
        classes: 15,
    })
}

pub fn random_input(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-0.25..1.25)).collect()
}

/// Cross-entropy computed straight from the forward pass.
fn loss_at(model: &Model<f64>, input: &[f64], label: usize) -> f64 {
    let logits = model.logits(input).unwrap();
    log_sum_exp(&logits) - logits[label]
}

/// Per-tensor relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// between the model's gradient and central differences. Tensors whose
/// gradients are both below 1e-12 in norm report 0.
pub fn gradient_errors(model: &Model<f64>, input: &[f64], label: usize) -> Vec<(String, f64)> {
    let (_, analytic) = model.loss_and_grad(input, label, 1.0).unwrap();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for spec in model.layout().tensors.clone() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for i in spec.range.clone() {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + FD_STEP;
            let up = loss_at(&probe, input, label);
            probe.params_mut()[i] = orig - FD_STEP;
            let down = loss_at(&probe, input, label);
            probe.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let scale = na.sqrt().max(nn.sqrt());
        let err = if scale < 1e-12 { 0.0 } else { diff.sqrt() / scale };
        out.push((spec.name.clone(), err));
    }
    out
}
