//! Helpers shared by the training loops.

use choreo_autograd::{Adam, AdamConfig, GradMap, ParamStore, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Generator for one training step, derived from the run seed and step index
/// so that a resumed run draws the same batches as an uninterrupted one.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

/// Draws `k` distinct indices from `0..n` (all of them, in order, when `k >= n`).
pub fn sample_indices<R: rand::Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, k).into_vec()
}

pub(crate) fn check_loss(stage: &str, step: u64, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Numerical(format!("{stage}: loss is {loss} at step {step}")))
    }
}

/// Adam update that reports non-finite gradients as a numerical abort.
pub(crate) fn apply(
    stage: &str,
    step: u64,
    opt: &mut Adam<f32>,
    params: &mut ParamStore<f32>,
    grads: &GradMap<f32>,
) -> Result<()> {
    opt.step(params, grads).map_err(|e| match e {
        TensorError::NonFiniteGradient { name, index, value, .. } => CoreError::Numerical(format!(
            "{stage}: gradient of `{name}`[{index}] is {value} at step {step}"
        )),
        other => other.into(),
    })
}

pub(crate) fn adam(lr: f64, beta1: f64, beta2: f64) -> Adam<f32> {
    Adam::new(AdamConfig {
        lr,
        beta1,
        beta2,
        ..AdamConfig::default()
    })
}
