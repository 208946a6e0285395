//! Multi-view training pairs.
//!
//! A view is 1..=λ QA pairs of one value id rendered as a single text; two
//! disjoint views of the same value id form a positive pair, and a batch holds
//! pairs of pairwise-distinct value ids so every off-diagonal term is a true
//! negative.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaPair, ValueId};
use crate::error::{Error, Result};

pub const DEFAULT_CHAR_BUDGET: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Maximum QA pairs per view.
    pub lambda: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Draw the two views of a pair from disjoint QA subsets.
    pub disjoint: bool,
    /// Character budget of a rendered view; trailing QAs are dropped whole.
    pub char_budget: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            lambda: 5,
            seed: 0,
            batch_size: 64,
            disjoint: true,
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "lambda and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Steps in one pass over `n_qa` pairs, given that a pair consumes
    /// λ + 1 QAs on average.
    pub fn steps_per_epoch(&self, n_qa: usize) -> usize {
        n_qa.div_ceil(self.batch_size * (self.lambda + 1)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct View {
    pub value_id: ValueId,
    pub qa_ids: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewPair {
    pub x1: View,
    pub x2: View,
}

fn render_one(pair: &QaPair) -> String {
    format!("Q: {}\nA: {}", pair.question_en, pair.answer_en)
}

/// Renders pairs as `Q: ..\nA: ..` blocks separated by a blank line, keeping
/// as many leading pairs as fit in `budget` characters (always at least one).
/// Returns the text and the number of pairs kept.
pub fn render_pairs(pairs: &[&QaPair], budget: usize) -> (String, usize) {
    let mut text = String::new();
    let mut used = 0usize;
    let mut kept = 0;
    for p in pairs {
        let block = render_one(p);
        let sep = if kept == 0 { 0 } else { 2 };
        let len = block.chars().count() + sep;
        if kept > 0 && used + len > budget {
            break;
        }
        if sep > 0 {
            text.push_str("\n\n");
        }
        text.push_str(&block);
        used += len;
        kept += 1;
    }
    (text, kept)
}

/// Serializes the listed QA ids, in order, from `corpus`.
pub fn serialize_view(qa_ids: &[String], corpus: &Corpus) -> Result<String> {
    let index = corpus.index();
    let pairs = qa_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| &corpus.qa_pairs[i])
                .ok_or_else(|| Error::DanglingReference(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(render_pairs(&pairs, usize::MAX).0)
}

fn make_view(pairs: Vec<&QaPair>, budget: usize) -> View {
    let (text, kept) = render_pairs(&pairs, budget);
    View {
        value_id: pairs[0].value_id.clone(),
        qa_ids: pairs[..kept].iter().map(|p| p.qa_id.clone()).collect(),
        text,
    }
}

/// Samples two disjoint views from a pool of one value id with the default
/// character budget.
pub fn sample_view_pair<R: Rng + ?Sized>(
    pool: &[&QaPair],
    lambda: usize,
    rng: &mut R,
) -> Result<ViewPair> {
    let config = SamplerConfig {
        lambda,
        ..SamplerConfig::default()
    };
    sample_view_pair_with(pool, &config, rng)
}

pub fn sample_view_pair_with<R: Rng + ?Sized>(
    pool: &[&QaPair],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ViewPair> {
    if pool.len() < 2 {
        return Err(Error::InsufficientPool(pool.len()));
    }
    let lambda = config.lambda.max(1);
    let (first, second): (Vec<usize>, Vec<usize>) = if config.disjoint {
        let n1 = rng.random_range(1..=lambda.min(pool.len() - 1));
        let n2 = rng.random_range(1..=lambda.min(pool.len() - n1));
        let picked = index::sample(rng, pool.len(), n1 + n2).into_vec();
        (picked[..n1].to_vec(), picked[n1..].to_vec())
    } else {
        let cap = lambda.min(pool.len());
        let n1 = rng.random_range(1..=cap);
        let n2 = rng.random_range(1..=cap);
        (
            index::sample(rng, pool.len(), n1).into_vec(),
            index::sample(rng, pool.len(), n2).into_vec(),
        )
    };
    let take = |idx: Vec<usize>| idx.into_iter().map(|i| pool[i]).collect::<Vec<_>>();
    Ok(ViewPair {
        x1: make_view(take(first), config.char_budget),
        x2: make_view(take(second), config.char_budget),
    })
}

/// Pools of a corpus grouped by value id, restricted to ids with at least two
/// pairs. Building it once amortizes grouping across many batches.
pub struct ViewSampler<'a> {
    config: SamplerConfig,
    pools: Vec<(ValueId, Vec<&'a QaPair>)>,
}

impl<'a> ViewSampler<'a> {
    pub fn new(corpus: &'a Corpus, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let mut groups: BTreeMap<ValueId, Vec<&'a QaPair>> = BTreeMap::new();
        for p in &corpus.qa_pairs {
            groups.entry(p.value_id.clone()).or_default().push(p);
        }
        let pools: Vec<_> = groups.into_iter().filter(|(_, v)| v.len() >= 2).collect();
        if pools.len() < config.batch_size {
            return Err(Error::InsufficientCorpus {
                needed: config.batch_size,
                found: pools.len(),
            });
        }
        Ok(ViewSampler { config, pools })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn eligible_value_ids(&self) -> impl Iterator<Item = &ValueId> {
        self.pools.iter().map(|(id, _)| id)
    }

    /// B view pairs with pairwise-distinct value ids.
    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<ViewPair>> {
        let chosen = index::sample(rng, self.pools.len(), self.config.batch_size);
        chosen
            .into_iter()
            .map(|i| sample_view_pair_with(&self.pools[i].1, &self.config, rng))
            .collect()
    }
}

pub fn make_training_batch<R: Rng + ?Sized>(
    corpus: &Corpus,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<ViewPair>> {
    ViewSampler::new(corpus, config.clone())?.batch(rng)
}
