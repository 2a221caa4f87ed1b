//! Server-side adaptive updates for the aggregated gradients.
//!
//! The same recurrence drives both the shared user model and the item
//! encoder: the first moment accumulates the aggregated gradient, the second
//! moment accumulates the squared first moment, and the step divides by
//! sqrt(v + eps). The printed update direction in the source method ascends
//! the loss; descent is the default here, with `strict_paper_sign` available
//! to reproduce the printed sign for audits.

use crate::error::ModelError;
use crate::model::{NewsEncoderParams, Pooling, UserModelParams};

/// Optimizer and round-shape hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added inside the square root of the denominator.
    pub epsilon: f64,
    /// Clients sampled per round.
    pub group_size: usize,
    /// Negatives per positive.
    pub neg_ratio: usize,
    /// Apply the printed ascending sign instead of descent.
    pub strict_paper_sign: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            group_size: 50,
            neg_ratio: 4,
            strict_paper_sign: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let good = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if good {
            Ok(())
        } else {
            Err(ModelError::NonFinite("optimizer config out of range"))
        }
    }
}

/// First and second moments, laid out exactly like the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub delta: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            delta: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One update step on a flat parameter vector. A non-finite gradient leaves
/// parameters and moments untouched.
pub fn adam_step(
    params: &mut [f64],
    state: &mut AdamState,
    grad: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(), ModelError> {
    if grad.len() != params.len() || state.delta.len() != params.len() {
        return Err(ModelError::DimMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite("aggregated gradient"));
    }
    let sign = if cfg.strict_paper_sign { 1.0 } else { -1.0 };
    for i in 0..params.len() {
        let d = cfg.beta1 * state.delta[i] + (1.0 - cfg.beta1) * grad[i];
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * d * d;
        state.delta[i] = d;
        state.v[i] = v;
        params[i] += sign * cfg.learning_rate * d / (v + cfg.epsilon).sqrt();
    }
    Ok(())
}

/// Update the shared user model with the aggregated user gradient.
pub fn fedadam_step(
    model: &mut UserModelParams,
    state: &mut AdamState,
    grad: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(), ModelError> {
    let dims = model.dims;
    let mut flat = model.flatten();
    adam_step(&mut flat, state, grad, cfg)?;
    *model = UserModelParams::from_flat(&dims, &flat)?;
    Ok(())
}

/// Update the item encoder with the chained representation gradient.
pub fn adam_news_step(
    encoder: &mut NewsEncoderParams,
    dims: &crate::model::ModelDims,
    state: &mut AdamState,
    grad: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(), ModelError> {
    let pooling: Pooling = encoder.pooling;
    let mut flat = encoder.flatten();
    adam_step(&mut flat, state, grad, cfg)?;
    *encoder = NewsEncoderParams::from_flat(dims, pooling, &flat)?;
    Ok(())
}
