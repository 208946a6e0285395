//! The shared Siamese encoder.
//!
//! Text is hashed into a sparse bag of n-grams, passed through one tanh hidden
//! layer and a linear projection, and ℓ2-normalized:
//!
//! ```text
//! z = normalize(W2 · tanh(W1ᵀ x + b1) + b2)
//! ```
//!
//! Parameters are held as one flat `f64` vector (W1, b1, W2, b2 in that order)
//! whose values are always representable in `f32`, so checkpoints round-trip
//! exactly. Backbones that are not built here plug in through [`TextEncoder`].

mod checkpoint;
mod featurize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_encoder, read_encoder, save_encoder, write_encoder, FORMAT_VERSION, MAGIC,
};
pub use featurize::{bucket, featurize, tokenize, SparseVector};

use crate::error::{Error, Result};
use crate::par::Execution;

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding { values }
    }

    /// Scales `values` to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let n = l2_norm(&values);
        if n > 0.0 {
            values.iter_mut().for_each(|v| *v /= n);
        }
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Anything that maps texts to embeddings of a declared dimension.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub hash_seed: u64,
    pub ngram_orders: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feature_dim: 4096,
            hidden_dim: 128,
            embed_dim: 128,
            hash_seed: 0x5eed_0001,
            ngram_orders: vec![1, 2],
        }
    }
}

/// Largest n-gram order representable in a checkpoint header.
pub const MAX_NGRAM_ORDER: usize = 31;

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 || self.feature_dim < self.embed_dim {
            return Err(Error::Config(format!(
                "need feature_dim >= embed_dim >= 2, got F={} d={}",
                self.feature_dim, self.embed_dim
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if self.feature_dim > u32::MAX as usize {
            return Err(Error::Config("feature_dim exceeds u32".into()));
        }
        if self.ngram_orders.is_empty()
            || self
                .ngram_orders
                .iter()
                .any(|&n| n == 0 || n > MAX_NGRAM_ORDER)
        {
            return Err(Error::Config(format!(
                "ngram orders must be in 1..={MAX_NGRAM_ORDER}"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            features: self.feature_dim,
            hidden: self.hidden_dim,
            embed: self.embed_dim,
        }
    }

    pub(crate) fn ngram_mask(&self) -> u32 {
        self.ngram_orders.iter().fold(0u32, |m, &n| m | (1 << n))
    }

    pub(crate) fn orders_from_mask(mask: u32) -> Vec<usize> {
        (1..=MAX_NGRAM_ORDER)
            .filter(|n| mask & (1 << n) != 0)
            .collect()
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        featurize(text, self.feature_dim, self.hash_seed, &self.ngram_orders)
    }
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub features: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl Layout {
    /// W1 is stored feature-major: row `f` holds the `hidden` weights of
    /// feature `f`.
    pub fn w1(&self) -> std::ops::Range<usize> {
        0..self.features * self.hidden
    }

    pub fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }

    /// W2 is output-major: row `o` holds the `hidden` weights of output `o`.
    pub fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.embed * self.hidden
    }

    pub fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.embed
    }

    pub fn len(&self) -> usize {
        self.b2().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Hidden nonlinearity. Only tanh is used by trained encoders; identity exists
/// to check gradients of the affine path in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Identity => a,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub norm: f64,
    pub z: Vec<f64>,
}

pub fn forward(params: &[f64], layout: Layout, x: &SparseVector, act: Activation) -> Forward {
    let h = layout.hidden;
    let mut pre = params[layout.b1()].to_vec();
    let w1 = &params[layout.w1()];
    for (f, v) in x.iter() {
        let row = &w1[f * h..(f + 1) * h];
        pre.iter_mut().zip(row).for_each(|(p, w)| *p += v * w);
    }
    let hidden: Vec<f64> = pre.into_iter().map(|a| act.apply(a)).collect();
    let w2 = &params[layout.w2()];
    let b2 = &params[layout.b2()];
    let u: Vec<f64> = (0..layout.embed)
        .map(|o| b2[o] + dot(&w2[o * h..(o + 1) * h], &hidden))
        .collect();
    let norm = l2_norm(&u);
    let z = if norm > 0.0 {
        u.iter().map(|v| v / norm).collect()
    } else {
        u
    };
    Forward { hidden, norm, z }
}

/// Per-sample backprop signals: gradient w.r.t. the pre-normalization output
/// `u` and w.r.t. the hidden pre-activation.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub d_out: Vec<f64>,
    pub d_pre: Vec<f64>,
}

/// Backpropagates `dz` (gradient w.r.t. the normalized embedding).
pub fn backward(
    params: &[f64],
    layout: Layout,
    fwd: &Forward,
    dz: &[f64],
    act: Activation,
) -> SampleGrad {
    let h = layout.hidden;
    let d_out: Vec<f64> = if fwd.norm > 0.0 {
        let zg = dot(&fwd.z, dz);
        dz.iter()
            .zip(&fwd.z)
            .map(|(g, z)| (g - z * zg) / fwd.norm)
            .collect()
    } else {
        vec![0.0; layout.embed]
    };
    let w2 = &params[layout.w2()];
    let mut d_hidden = vec![0.0; h];
    for (o, g) in d_out.iter().enumerate() {
        let row = &w2[o * h..(o + 1) * h];
        d_hidden.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
    }
    let d_pre = d_hidden
        .iter()
        .zip(&fwd.hidden)
        .map(|(d, &hv)| d * act.derivative(hv))
        .collect();
    SampleGrad { d_out, d_pre }
}

/// Adds one sample's parameter gradient into `grad`.
pub fn accumulate(
    grad: &mut [f64],
    layout: Layout,
    x: &SparseVector,
    fwd: &Forward,
    g: &SampleGrad,
) {
    let h = layout.hidden;
    let w1 = layout.w1().start;
    for (f, v) in x.iter() {
        let row = &mut grad[w1 + f * h..w1 + (f + 1) * h];
        row.iter_mut().zip(&g.d_pre).for_each(|(r, d)| *r += v * d);
    }
    grad[layout.b1()]
        .iter_mut()
        .zip(&g.d_pre)
        .for_each(|(r, d)| *r += d);
    let w2 = layout.w2().start;
    for (o, d) in g.d_out.iter().enumerate() {
        let row = &mut grad[w2 + o * h..w2 + (o + 1) * h];
        row.iter_mut()
            .zip(&fwd.hidden)
            .for_each(|(r, hv)| *r += d * hv);
    }
    grad[layout.b2()]
        .iter_mut()
        .zip(&g.d_out)
        .for_each(|(r, d)| *r += d);
}

/// Rounds every value to the nearest `f32`.
pub(crate) fn round_to_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// The desk-scale encoder: config plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    params: Vec<f64>,
    exec: Execution,
}

impl Encoder {
    /// Random initialization from `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len()];
        let w1_scale = 3f64.sqrt();
        let w2_scale = (6.0 / (layout.hidden + layout.embed) as f64).sqrt();
        for v in &mut params[layout.w1()] {
            *v = rng.random_range(-w1_scale..w1_scale);
        }
        for v in &mut params[layout.b1()] {
            *v = rng.random_range(-0.1..0.1);
        }
        for v in &mut params[layout.w2()] {
            *v = rng.random_range(-w2_scale..w2_scale);
        }
        for v in &mut params[layout.b2()] {
            *v = rng.random_range(-0.1..0.1);
        }
        round_to_f32(&mut params);
        Ok(Encoder {
            config,
            params,
            exec: Execution::default(),
        })
    }

    /// Wraps existing parameters, checking their count against `config`.
    pub fn from_parts(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.layout().len();
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "config needs {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite parameter".into()));
        }
        Ok(Encoder {
            config,
            params,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// SHA-256 over the f32 parameter bytes.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.params {
            hasher.update((*v as f32).to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn encode_one(&self, text: &str) -> Embedding {
        let x = self.config.featurize(text);
        Embedding::new(forward(&self.params, self.layout(), &x, Activation::Tanh).z)
    }

    /// Encodes each text; output order matches input order.
    pub fn encode<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<Embedding> {
        self.exec.map(texts, |t| self.encode_one(t.as_ref()))
    }
}

impl TextEncoder for Encoder {
    fn dim(&self) -> usize {
        self.config.embed_dim
    }

    fn encode(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(Encoder::encode(self, texts))
    }
}
