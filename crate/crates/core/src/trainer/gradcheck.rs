//! Finite-difference check of the analytic gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BatchFeatures, Direction, Objective};
use crate::encoder::{Activation, Encoder};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::views::ViewPair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub coordinates: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are compared absolutely.
    pub floor: f64,
    pub seed: u64,
    pub temperature: f64,
    pub direction: Direction,
    pub activation: Activation,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            coordinates: 200,
            floor: 1e-6,
            seed: 0,
            temperature: 0.05,
            direction: Direction::OneWay,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Of those, how many had a non-zero analytic gradient.
    pub nonzero: usize,
}

/// Compares analytic and central-difference gradients of the batch loss on
/// `coordinates` randomly chosen parameters.
pub fn gradient_check_with(
    encoder: &Encoder,
    batch: &[ViewPair],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::Dimension(
            "gradient check needs a non-empty batch".into(),
        ));
    }
    let exec = Execution::Sequential;
    let feats = BatchFeatures::new(encoder.config(), batch, exec);
    let obj = Objective {
        layout: encoder.layout(),
        temperature: opts.temperature,
        direction: opts.direction,
        activation: opts.activation,
        exec,
    };
    let mut params = encoder.params().to_vec();
    let mut grad = vec![0.0; params.len()];
    obj.loss_and_grad(&params, &feats, &mut grad);

    let n = opts.coordinates.min(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let coords = rand::seq::index::sample(&mut rng, params.len(), n);

    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for k in coords.iter() {
        let orig = params[k];
        params[k] = orig + opts.epsilon;
        let up = obj.loss(&params, &feats);
        params[k] = orig - opts.epsilon;
        let down = obj.loss(&params, &feats);
        params[k] = orig;
        let numeric = (up - down) / (2.0 * opts.epsilon);
        let analytic = grad[k];
        if analytic != 0.0 {
            nonzero += 1;
        }
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked: n,
        nonzero,
    })
}

/// Maximum relative error over `coordinates` sampled parameters.
pub fn gradient_check(
    encoder: &Encoder,
    batch: &[ViewPair],
    temperature: f64,
    epsilon: f64,
    coordinates: usize,
    seed: u64,
) -> Result<f64> {
    let opts = GradCheckOptions {
        epsilon,
        coordinates,
        seed,
        temperature,
        ..GradCheckOptions::default()
    };
    Ok(gradient_check_with(encoder, batch, &opts)?.max_rel_error)
}
