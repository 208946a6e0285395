//! Cosine k-nearest-neighbour classification.
//!
//! Neighbours rank by descending similarity, ties by ascending reference
//! index. The prediction is the plurality label; a vote tie goes to the tied
//! label whose best neighbour ranks highest.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::{classification_metrics, ClassificationMetrics, EvalItem};
use crate::corpus::ValueId;
use crate::encoder::{dot, Embedding};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const DEFAULT_K: usize = 50;

fn by_rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` nearest reference items, nearest first. `exclude`
/// drops one reference index (a query that is itself in the reference).
pub fn nearest(
    reference: &[EvalItem],
    query: &Embedding,
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = reference
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, r)| (dot(&r.embedding.values, &query.values), i))
        .collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_rank);
    scored.into_iter().map(|(_, i)| i).collect()
}

fn vote<'a>(reference: &'a [EvalItem], ranked: &[usize]) -> &'a ValueId {
    // label -> (votes, rank of its best neighbour)
    let mut tally: BTreeMap<&ValueId, (usize, usize)> = BTreeMap::new();
    for (rank, &i) in ranked.iter().enumerate() {
        tally.entry(&reference[i].label).or_insert((0, rank)).0 += 1;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(label, _)| label)
        .expect("at least one neighbour")
}

fn check_k(reference: &[EvalItem], k: usize) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

/// Predicts the label of `query`. `k` larger than the reference uses all of it.
pub fn knn_classify(reference: &[EvalItem], query: &Embedding, k: usize) -> Result<ValueId> {
    knn_classify_excluding(reference, query, k, None)
}

pub fn knn_classify_excluding(
    reference: &[EvalItem],
    query: &Embedding,
    k: usize,
    exclude: Option<usize>,
) -> Result<ValueId> {
    check_k(reference, k)?;
    let ranked = nearest(reference, query, k, exclude);
    if ranked.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(vote(reference, &ranked).clone())
}

/// Predictions for every query, in query order.
pub fn knn_predict(
    reference: &[EvalItem],
    queries: &[EvalItem],
    k: usize,
    exec: Execution,
) -> Result<Vec<ValueId>> {
    check_k(reference, k)?;
    Ok(exec.map(queries, |q| {
        vote(reference, &nearest(reference, &q.embedding, k, None)).clone()
    }))
}

/// Accuracy and macro-F1 of kNN predictions for `queries`.
pub fn knn_evaluate(
    reference: &[EvalItem],
    queries: &[EvalItem],
    k: usize,
    exec: Execution,
) -> Result<ClassificationMetrics> {
    if queries.is_empty() {
        return Err(Error::EmptyQueries);
    }
    let pred = knn_predict(reference, queries, k, exec)?;
    let truth: Vec<ValueId> = queries.iter().map(|q| q.label.clone()).collect();
    classification_metrics(&truth, &pred)
}
