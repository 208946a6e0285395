//! Contrastive training of the encoder.
//!
//! Each step samples B view pairs with distinct value ids, encodes both views
//! with the same parameters, and takes an AdamW step on the InfoNCE loss. The
//! learning rate ramps linearly from zero over the warmup and then stays at
//! its base value.

mod gradcheck;
mod loss;
mod optim;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport};
pub use loss::{
    cosine_similarity, info_nce_from_logits, info_nce_loss, info_nce_loss_directed,
    info_nce_with_grad, logits, mi_lower_bound, Direction,
};
pub use optim::{AdamW, AdamWParams};

use crate::corpus::{Corpus, QaPair, ValueId};
use crate::encoder::{
    self, accumulate, backward, forward, load_encoder, round_to_f32, save_encoder, Activation,
    Encoder, EncoderConfig, Layout, SparseVector,
};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::views::{SamplerConfig, ViewPair, ViewSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    /// Overrides the epoch-derived step count.
    pub max_steps: Option<usize>,
    pub temperature: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub direction: Direction,
    /// Fraction of each value id's pairs held out for validation loss.
    pub validation_fraction: f64,
    pub validation_batches: usize,
    /// Emit a checkpoint every this many steps (the final one is always emitted).
    pub checkpoint_every: Option<usize>,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            warmup_steps: 1000,
            epochs: 1,
            max_steps: None,
            temperature: 0.05,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            direction: Direction::OneWay,
            validation_fraction: 0.1,
            validation_batches: 4,
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("temperature", self.temperature),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.warmup_steps == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "warmup_steps and epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "validation_fraction in [0,1), weight_decay >= 0".into(),
            ));
        }
        if self.max_steps == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::Config(
                "max_steps and checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Linear warmup from 0 to the base rate, constant afterwards.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let ramp = (step as f64 / config.warmup_steps as f64).min(1.0);
    config.learning_rate * ramp
}

/// Featurized views of a batch.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    pub first: Vec<SparseVector>,
    pub second: Vec<SparseVector>,
}

impl BatchFeatures {
    pub fn new(config: &EncoderConfig, batch: &[ViewPair], exec: Execution) -> Self {
        BatchFeatures {
            first: exec.map(batch, |p| config.featurize(&p.x1.text)),
            second: exec.map(batch, |p| config.featurize(&p.x2.text)),
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// The differentiable objective: encoder forward on both views followed by
/// InfoNCE.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub layout: Layout,
    pub temperature: f64,
    pub direction: Direction,
    pub activation: Activation,
    pub exec: Execution,
}

impl Objective {
    fn logit_matrix(&self, z1: &[Vec<f64>], z2: &[Vec<f64>]) -> Vec<f64> {
        let a: Vec<&[f64]> = z1.iter().map(Vec::as_slice).collect();
        let c: Vec<&[f64]> = z2.iter().map(Vec::as_slice).collect();
        logits(&a, &c, self.temperature)
    }

    pub fn loss(&self, params: &[f64], feats: &BatchFeatures) -> f64 {
        let enc = |x: &SparseVector| forward(params, self.layout, x, self.activation).z;
        let z1 = self.exec.map(&feats.first, enc);
        let z2 = self.exec.map(&feats.second, enc);
        let s = self.logit_matrix(&z1, &z2);
        info_nce_with_grad(&s, feats.len(), self.direction).0
    }

    /// Loss, with its gradient written into `grad` (overwritten). Per-sample
    /// work runs under `exec`; the reduction into `grad` is always in sample
    /// order.
    pub fn loss_and_grad(&self, params: &[f64], feats: &BatchFeatures, grad: &mut [f64]) -> f64 {
        let b = feats.len();
        let fw = |x: &SparseVector| forward(params, self.layout, x, self.activation);
        let f1 = self.exec.map(&feats.first, fw);
        let f2 = self.exec.map(&feats.second, fw);
        let z1: Vec<Vec<f64>> = f1.iter().map(|f| f.z.clone()).collect();
        let z2: Vec<Vec<f64>> = f2.iter().map(|f| f.z.clone()).collect();
        let s = self.logit_matrix(&z1, &z2);
        let (loss, ds) = info_nce_with_grad(&s, b, self.direction);

        let d = self.layout.embed;
        let tau = self.temperature;
        let dz1 = self.exec.map_range(b, |i| {
            let mut g = vec![0.0; d];
            for j in 0..b {
                let w = ds[i * b + j] / tau;
                g.iter_mut().zip(&z2[j]).for_each(|(g, z)| *g += w * z);
            }
            g
        });
        let dz2 = self.exec.map_range(b, |j| {
            let mut g = vec![0.0; d];
            for i in 0..b {
                let w = ds[i * b + j] / tau;
                g.iter_mut().zip(&z1[i]).for_each(|(g, z)| *g += w * z);
            }
            g
        });
        let g1 = self.exec.map_range(b, |i| {
            backward(params, self.layout, &f1[i], &dz1[i], self.activation)
        });
        let g2 = self.exec.map_range(b, |i| {
            backward(params, self.layout, &f2[i], &dz2[i], self.activation)
        });

        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..b {
            accumulate(grad, self.layout, &feats.first[i], &f1[i], &g1[i]);
        }
        for i in 0..b {
            accumulate(grad, self.layout, &feats.second[i], &f2[i], &g2[i]);
        }
        loss
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mi_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub loss: f64,
}

/// Encoder parameters plus the state of the run that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub train_config: TrainConfig,
    pub sampler_config: SamplerConfig,
    pub step: usize,
    pub loss_history: Vec<f64>,
    pub validation: Vec<ValidationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainState {
    format_version: u32,
    encoder_checksum: String,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    step: usize,
    loss_history: Vec<f64>,
    validation: Vec<ValidationRecord>,
}

/// Sidecar holding the training state next to an encoder checkpoint.
pub fn state_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_encoder(&self.encoder, path)?;
        let state = TrainState {
            format_version: encoder::FORMAT_VERSION,
            encoder_checksum: self.encoder.checksum(),
            train_config: self.train_config.clone(),
            sampler_config: self.sampler_config.clone(),
            step: self.step,
            loss_history: self.loss_history.clone(),
            validation: self.validation.clone(),
        };
        let sp = state_path(path);
        let mut text = serde_json::to_string_pretty(&state).expect("state serializes");
        text.push('\n');
        std::fs::write(&sp, text).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let encoder = load_encoder(path)?;
        let sp = state_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let state: TrainState = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", sp.display())))?;
        if state.format_version != encoder::FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported training state version {}",
                state.format_version
            )));
        }
        if state.encoder_checksum != encoder.checksum() {
            return Err(Error::Format(
                "training state does not match encoder parameters".into(),
            ));
        }
        if state.loss_history.len() != state.step {
            return Err(Error::Format(
                "loss history length differs from step count".into(),
            ));
        }
        Ok(Checkpoint {
            encoder,
            train_config: state.train_config,
            sampler_config: state.sampler_config,
            step: state.step,
            loss_history: state.loss_history,
            validation: state.validation,
        })
    }
}

/// Receives training progress.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint, _is_final: bool) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Holds out `fraction` of each value id's pairs, keeping at least two for
/// training. Returns (train, validation).
pub fn value_balanced_split(corpus: &Corpus, fraction: f64) -> (Corpus, Corpus) {
    let mut held: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    for pairs in corpus.by_value_id().values() {
        let n = pairs.len();
        let k = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(2));
        for p in &pairs[n - k..] {
            held.insert(p.qa_id.as_str());
        }
    }
    let train = corpus.filter(|p| !held.contains(p.qa_id.as_str()));
    let val = corpus.filter(|p| held.contains(p.qa_id.as_str()));
    (train, val)
}

pub struct Trainer<'a> {
    train_config: TrainConfig,
    sampler: ViewSampler<'a>,
    validation: Vec<BatchFeatures>,
    encoder: Encoder,
    optimizer: AdamW,
    total_steps: usize,
    exec: Execution,
}

impl<'a> Trainer<'a> {
    /// `train_corpus` and `val_corpus` usually come from
    /// [`value_balanced_split`].
    pub fn new(
        train_corpus: &'a Corpus,
        val_corpus: &Corpus,
        train_config: TrainConfig,
        sampler_config: SamplerConfig,
        encoder_config: EncoderConfig,
    ) -> Result<Self> {
        train_config.validate()?;
        let sampler = ViewSampler::new(train_corpus, sampler_config.clone())?;
        let encoder = Encoder::init(encoder_config, train_config.seed)?;
        let exec = encoder.execution();

        let validation = match Self::validation_batches(val_corpus, &train_config, &sampler_config)
        {
            Some(batches) => batches
                .iter()
                .map(|b| BatchFeatures::new(encoder.config(), b, exec))
                .collect(),
            None => Vec::new(),
        };
        let total_steps = train_config.max_steps.unwrap_or_else(|| {
            train_config.epochs * sampler_config.steps_per_epoch(train_corpus.qa_pairs.len())
        });
        let optimizer = AdamW::new(encoder.layout().len(), train_config.adamw());
        Ok(Trainer {
            train_config,
            sampler,
            validation,
            encoder,
            optimizer,
            total_steps,
            exec,
        })
    }

    fn validation_batches(
        val: &Corpus,
        tc: &TrainConfig,
        sc: &SamplerConfig,
    ) -> Option<Vec<Vec<ViewPair>>> {
        let eligible = val.by_value_id().values().filter(|v| v.len() >= 2).count();
        let b = sc.batch_size.min(eligible);
        if b < 2 || tc.validation_batches == 0 {
            return None;
        }
        let cfg = SamplerConfig {
            batch_size: b,
            ..sc.clone()
        };
        let sampler = ViewSampler::new(val, cfg).ok()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x7661_6c69_6461_7465);
        (0..tc.validation_batches)
            .map(|_| sampler.batch(&mut rng).ok())
            .collect()
    }

    /// Runs per-sample work and optimizer updates under `exec`. Results do not
    /// depend on the choice.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self.encoder = self.encoder.with_execution(exec);
        self
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    fn objective(&self) -> Objective {
        Objective {
            layout: self.encoder.layout(),
            temperature: self.train_config.temperature,
            direction: self.train_config.direction,
            activation: Activation::Tanh,
            exec: self.exec,
        }
    }

    pub fn validation_loss(&self) -> Option<f64> {
        if self.validation.is_empty() {
            return None;
        }
        let obj = self.objective();
        let total: f64 = self
            .validation
            .iter()
            .map(|f| obj.loss(self.encoder.params(), f))
            .sum();
        Some(total / self.validation.len() as f64)
    }

    /// Runs all steps, reporting to `observer`, and returns the final checkpoint.
    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<Checkpoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.sampler.config().seed);
        let mut grad = vec![0.0; self.encoder.layout().len()];
        let mut history = Vec::with_capacity(self.total_steps);
        let mut validation = Vec::new();
        let obj = self.objective();
        let b = self.sampler.config().batch_size;

        for step in 0..self.total_steps {
            let batch = self.sampler.batch(&mut rng)?;
            let feats = BatchFeatures::new(self.encoder.config(), &batch, self.exec);
            let loss = obj.loss_and_grad(self.encoder.params(), &feats, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { step: step + 1 });
            }
            let lr = lr_at(step, &self.train_config);
            let params = self.encoder.params_mut();
            self.optimizer.step(params, &grad, lr, self.exec);
            round_to_f32(params);
            history.push(loss);
            observer.on_step(&StepRecord {
                step: step + 1,
                lr,
                loss,
                mi_bound: mi_lower_bound(loss, b),
            })?;

            let done = step + 1 == self.total_steps;
            let periodic = self
                .train_config
                .checkpoint_every
                .is_some_and(|k| (step + 1) % k == 0);
            if done || periodic {
                if let Some(loss) = self.validation_loss() {
                    validation.push(ValidationRecord {
                        step: step + 1,
                        loss,
                    });
                }
                let ckpt = Checkpoint {
                    encoder: self.encoder.clone(),
                    train_config: self.train_config.clone(),
                    sampler_config: self.sampler.config().clone(),
                    step: step + 1,
                    loss_history: history.clone(),
                    validation: validation.clone(),
                };
                observer.on_checkpoint(&ckpt, done)?;
                if done {
                    return Ok(ckpt);
                }
            }
        }
        // Only reachable with zero total steps.
        Ok(Checkpoint {
            encoder: self.encoder,
            train_config: self.train_config,
            sampler_config: self.sampler.config().clone(),
            step: 0,
            loss_history: history,
            validation,
        })
    }
}

/// Trains an encoder on `corpus` with a value-balanced validation split.
pub fn train(
    corpus: &Corpus,
    train_config: &TrainConfig,
    sampler_config: &SamplerConfig,
    encoder_config: &EncoderConfig,
) -> Result<Checkpoint> {
    train_with(
        corpus,
        train_config,
        sampler_config,
        encoder_config,
        &mut (),
    )
}

pub fn train_with(
    corpus: &Corpus,
    train_config: &TrainConfig,
    sampler_config: &SamplerConfig,
    encoder_config: &EncoderConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    let (train_part, val_part) = value_balanced_split(corpus, train_config.validation_fraction);
    Trainer::new(
        &train_part,
        &val_part,
        train_config.clone(),
        sampler_config.clone(),
        encoder_config.clone(),
    )?
    .run(observer)
}

/// Embeds each pair as a single-QA view.
pub fn embed_pairs(encoder: &Encoder, pairs: &[QaPair]) -> Vec<crate::encoder::Embedding> {
    let texts: Vec<String> = pairs
        .iter()
        .map(|p| crate::views::render_pairs(&[p], usize::MAX).0)
        .collect();
    encoder.encode(&texts)
}

/// Labels of `pairs`, in order.
pub fn labels(pairs: &[QaPair]) -> Vec<ValueId> {
    pairs.iter().map(|p| p.value_id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{SynthConfig, SyntheticCorpus};

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            feature_dim: 512,
            hidden_dim: 32,
            embed_dim: 16,
            ..EncoderConfig::default()
        }
    }

    fn quick_config() -> (TrainConfig, SamplerConfig) {
        (
            TrainConfig {
                learning_rate: 3e-3,
                warmup_steps: 5,
                max_steps: Some(30),
                temperature: 0.1,
                ..TrainConfig::default()
            },
            SamplerConfig {
                batch_size: 4,
                lambda: 3,
                seed: 7,
                ..SamplerConfig::default()
            },
        )
    }

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.0);
        assert!((lr_at(500, &c) - 5e-6).abs() < 1e-20);
        assert_eq!(lr_at(1000, &c), 1e-5);
        assert_eq!(lr_at(50_000, &c), 1e-5);
    }

    #[test]
    fn defaults_mirror_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(c.warmup_steps, 1000);
        assert_eq!(c.epochs, 1);
        assert_eq!(SamplerConfig::default().batch_size, 64);
        assert_eq!(c.direction, Direction::OneWay);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig {
            temperature: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 6,
            pairs_per_id: 10,
            ..SynthConfig::default()
        });
        let (tc, sc) = quick_config();
        let a = train(&synth.corpus, &tc, &sc, &small_encoder()).unwrap();
        let b = train(&synth.corpus, &tc, &sc, &small_encoder()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), 30);
        assert_eq!(a.encoder.checksum(), b.encoder.checksum());
    }

    #[test]
    fn sequential_and_parallel_training_agree() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 5,
            pairs_per_id: 8,
            ..SynthConfig::default()
        });
        let (tc, sc) = quick_config();
        let (tp, vp) = value_balanced_split(&synth.corpus, tc.validation_fraction);
        let run = |exec| {
            Trainer::new(&tp, &vp, tc.clone(), sc.clone(), small_encoder())
                .unwrap()
                .with_execution(exec)
                .run(&mut ())
                .unwrap()
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Parallel);
        assert_eq!(a.encoder.params(), b.encoder.params());
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn checkpoints_are_periodic_and_saved_exactly() {
        struct Collect(Vec<(usize, bool)>);
        impl TrainObserver for Collect {
            fn on_checkpoint(&mut self, c: &Checkpoint, last: bool) -> Result<()> {
                self.0.push((c.step, last));
                assert_eq!(c.loss_history.len(), c.step);
                Ok(())
            }
        }
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 6,
            pairs_per_id: 12,
            ..SynthConfig::default()
        });
        let (mut tc, sc) = quick_config();
        tc.checkpoint_every = Some(10);
        tc.validation_fraction = 0.2;
        tc.max_steps = Some(25);
        let mut seen = Collect(Vec::new());
        let ckpt = train_with(&synth.corpus, &tc, &sc, &small_encoder(), &mut seen).unwrap();
        assert_eq!(seen.0, vec![(10, false), (20, false), (25, true)]);
        assert_eq!(ckpt.validation.len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("final.uvar");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let bytes = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn tampered_state_is_refused() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 4,
            pairs_per_id: 6,
            ..SynthConfig::default()
        });
        let (mut tc, sc) = quick_config();
        tc.max_steps = Some(2);
        let ckpt = train(&synth.corpus, &tc, &sc, &small_encoder()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.uvar");
        ckpt.save(&path).unwrap();
        let sp = state_path(&path);
        let text = std::fs::read_to_string(&sp).unwrap();
        std::fs::write(&sp, text.replace("\"step\": 2", "\"step\": 3")).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn insufficient_corpus_propagates() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 3,
            pairs_per_id: 6,
            ..SynthConfig::default()
        });
        let (tc, sc) = quick_config();
        assert!(matches!(
            train(&synth.corpus, &tc, &sc, &small_encoder()),
            Err(Error::InsufficientCorpus {
                needed: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 4,
            pairs_per_id: 6,
            ..SynthConfig::default()
        });
        let (mut tc, sc) = quick_config();
        // A denormal temperature overflows every logit to infinity.
        tc.temperature = 1e-320;
        let err = train(&synth.corpus, &tc, &sc, &small_encoder()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 1 }));
    }

    #[test]
    fn both_views_see_the_same_parameters() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 4,
            pairs_per_id: 6,
            ..SynthConfig::default()
        });
        let enc = Encoder::init(small_encoder(), 3).unwrap();
        let sc = SamplerConfig {
            batch_size: 4,
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = crate::views::make_training_batch(&synth.corpus, &sc, &mut rng).unwrap();
        let before = enc.checksum();
        let first: Vec<&str> = batch.iter().map(|p| p.x1.text.as_str()).collect();
        let z1 = enc.encode(&first);
        assert_eq!(enc.checksum(), before);
        let second: Vec<&str> = batch.iter().map(|p| p.x2.text.as_str()).collect();
        let z2 = enc.encode(&second);
        assert_eq!(enc.checksum(), before);

        // The training objective computes exactly these embeddings.
        let feats = BatchFeatures::new(enc.config(), &batch, Execution::Sequential);
        let obj = Objective {
            layout: enc.layout(),
            temperature: 0.05,
            direction: Direction::OneWay,
            activation: Activation::Tanh,
            exec: Execution::Sequential,
        };
        let expected = info_nce_loss(&z1, &z2, 0.05).unwrap();
        assert!((obj.loss(enc.params(), &feats) - expected).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_loss() {
        let synth = SyntheticCorpus::generate(&SynthConfig {
            value_ids: 8,
            pairs_per_id: 20,
            ..SynthConfig::default()
        });
        let tc = TrainConfig {
            learning_rate: 2e-3,
            warmup_steps: 10,
            max_steps: Some(80),
            ..TrainConfig::default()
        };
        let sc = SamplerConfig {
            batch_size: 8,
            lambda: 5,
            seed: 1,
            ..SamplerConfig::default()
        };
        let ckpt = train(&synth.corpus, &tc, &sc, &small_encoder()).unwrap();
        let head: f64 = ckpt.loss_history[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = ckpt.loss_history[70..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
