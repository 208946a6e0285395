//! Linear probe on frozen embeddings: one affine layer trained with AdamW on
//! softmax cross-entropy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AccAt, EvalItem};
use crate::corpus::ValueId;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::trainer::{AdamW, AdamWParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 2e-3,
            batch_size: 512,
            epochs: 20,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.epochs == 0
        {
            return Err(Error::Config(
                "probe learning_rate, batch_size and epochs must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(
                "probe weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted probe. Labels are indexed in sorted order.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    labels: Vec<ValueId>,
    dim: usize,
    /// Row-major C×d weights followed by C biases.
    params: Vec<f64>,
}

impl LinearProbe {
    pub fn fit(train: &[EvalItem], config: &ProbeConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let first = train.first().ok_or(Error::EmptyReference)?;
        let dim = first.embedding.dim();
        if train.iter().any(|t| t.embedding.dim() != dim) {
            return Err(Error::Dimension("probe inputs differ in dimension".into()));
        }
        let labels: Vec<ValueId> = train
            .iter()
            .map(|t| t.label.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&ValueId, usize> =
            labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
        let targets: Vec<usize> = train.iter().map(|t| index[&t.label]).collect();
        let c = labels.len();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut probe = LinearProbe {
            params: (0..c * (dim + 1))
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            labels,
            dim,
        };
        let mut opt = AdamW::new(
            probe.params.len(),
            AdamWParams {
                weight_decay: config.weight_decay,
                ..AdamWParams::default()
            },
        );
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut grad = vec![0.0; probe.params.len()];
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let n = batch.len() as f64;
                let dlogits = exec.map(batch, |&i| {
                    let mut p = softmax(&probe.logits_raw(&train[i].embedding.values));
                    p[targets[i]] -= 1.0;
                    p.iter_mut().for_each(|v| *v /= n);
                    p
                });
                grad.iter_mut().for_each(|g| *g = 0.0);
                let (gw, gb) = grad.split_at_mut(c * dim);
                for (&i, dl) in batch.iter().zip(&dlogits) {
                    let x = &train[i].embedding.values;
                    for (l, g) in dl.iter().enumerate() {
                        gw[l * dim..(l + 1) * dim]
                            .iter_mut()
                            .zip(x)
                            .for_each(|(w, xv)| *w += g * xv);
                        gb[l] += g;
                    }
                }
                opt.step(&mut probe.params, &grad, config.learning_rate, exec);
            }
        }
        Ok(probe)
    }

    pub fn labels(&self) -> &[ValueId] {
        &self.labels
    }

    fn logits_raw(&self, x: &[f64]) -> Vec<f64> {
        let c = self.labels.len();
        let (w, b) = self.params.split_at(c * self.dim);
        (0..c)
            .map(|l| b[l] + crate::encoder::dot(&w[l * self.dim..(l + 1) * self.dim], x))
            .collect()
    }

    pub fn logits(&self, x: &crate::encoder::Embedding) -> Vec<f64> {
        self.logits_raw(&x.values)
    }

    /// Label indices by descending logit, ties by ascending index.
    pub fn ranking(&self, x: &crate::encoder::Embedding) -> Vec<usize> {
        let z = self.logits(x);
        let mut idx: Vec<usize> = (0..z.len()).collect();
        idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
        idx
    }

    /// Fraction of `test` whose label is within the top 1, 5 and 10.
    pub fn accuracy_at(&self, test: &[EvalItem], exec: Execution) -> Result<AccAt> {
        if test.is_empty() {
            return Err(Error::EmptyQueries);
        }
        let index: BTreeMap<&ValueId, usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect();
        let mut targets = Vec::with_capacity(test.len());
        for t in test {
            match index.get(&t.label) {
                Some(&i) => targets.push(i),
                None => return Err(Error::LabelMismatch(t.label.to_string())),
            }
        }
        let ranks = exec.map_range(test.len(), |i| {
            self.ranking(&test[i].embedding)
                .iter()
                .position(|&l| l == targets[i])
                .expect("every label is ranked")
        });
        let n = test.len() as f64;
        let within = |k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / n;
        Ok(AccAt {
            at1: within(1),
            at5: within(5),
            at10: within(10),
        })
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Trains a probe on `train` and reports acc@{1,5,10} on `test`.
pub fn linear_probe(
    train: &[EvalItem],
    test: &[EvalItem],
    config: &ProbeConfig,
    exec: Execution,
) -> Result<AccAt> {
    let seen: std::collections::BTreeSet<&ValueId> = train.iter().map(|t| &t.label).collect();
    if let Some(t) = test.iter().find(|t| !seen.contains(&t.label)) {
        return Err(Error::LabelMismatch(t.label.to_string()));
    }
    if test.is_empty() {
        return Err(Error::EmptyQueries);
    }
    LinearProbe::fit(train, config, exec)?.accuracy_at(test, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusTag;
    use crate::encoder::Embedding;

    fn blobs(seed: u64, per: usize, centers: &[Vec<f64>], spread: f64) -> Vec<EvalItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..per {
            for (l, c) in centers.iter().enumerate() {
                let v: Vec<f64> = c
                    .iter()
                    .map(|x| x + spread * rng.random_range(-1.0..1.0))
                    .collect();
                let _ = i;
                out.push(EvalItem::new(
                    Embedding::normalized(v),
                    ValueId::new(format!("m{l}"), "eng"),
                    CorpusTag::Custom,
                ));
            }
        }
        out
    }

    #[test]
    fn defaults() {
        let c = ProbeConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.epochs), (2e-3, 512, 20));
    }

    #[test]
    fn separable_blobs_are_learned() {
        let centers = vec![vec![1.0, 0.2, 0.0], vec![-1.0, 0.2, 0.0]];
        let train = blobs(1, 100, &centers, 0.3);
        let test = blobs(2, 50, &centers, 0.3);
        let acc =
            linear_probe(&train, &test, &ProbeConfig::default(), Execution::default()).unwrap();
        assert_eq!(acc.at1, 1.0);
        assert_eq!(acc.at5, 1.0);
    }

    #[test]
    fn unseen_test_label_is_rejected() {
        let centers = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let train = blobs(1, 5, &centers[..1], 0.1);
        let test = blobs(2, 5, &centers, 0.1);
        assert!(matches!(
            linear_probe(
                &train,
                &test,
                &ProbeConfig::default(),
                Execution::Sequential
            ),
            Err(Error::LabelMismatch(_))
        ));
    }

    #[test]
    fn nested_and_deterministic() {
        let centers: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.5;
                vec![a.cos(), a.sin(), (2.0 * a).cos()]
            })
            .collect();
        let train = blobs(3, 6, &centers, 0.8);
        let test = blobs(4, 4, &centers, 0.8);
        let cfg = ProbeConfig {
            epochs: 5,
            seed: 3,
            ..ProbeConfig::default()
        };
        let a = linear_probe(&train, &test, &cfg, Execution::Sequential).unwrap();
        let b = linear_probe(&train, &test, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.at1 <= a.at5 && a.at5 <= a.at10);
        assert!(a.at10 <= 1.0 && a.at1 >= 0.0);
    }

    #[test]
    fn ranking_ties_prefer_lower_index() {
        let probe = LinearProbe {
            labels: vec![ValueId::new("a", "eng"), ValueId::new("b", "eng")],
            dim: 1,
            params: vec![0.0, 0.0, 0.0, 0.0],
        };
        assert_eq!(probe.ranking(&Embedding::new(vec![1.0])), vec![0, 1]);
    }
}
