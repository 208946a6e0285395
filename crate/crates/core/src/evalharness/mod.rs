//! Value identification: classify QA embeddings into value ids with kNN and a
//! linear probe, compare against heuristic baselines, and run the non-value
//! and translationese controls.
//!
//! Reports are computed per evaluation corpus and then averaged uniformly
//! across corpora.

mod knn;
mod probe;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use knn::{
    knn_classify, knn_classify_excluding, knn_evaluate, knn_predict, nearest, DEFAULT_K,
};
pub use probe::{linear_probe, LinearProbe, ProbeConfig};

use crate::corpus::{CorpusTag, ValueId};
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub embedding: Embedding,
    pub label: ValueId,
    pub corpus_tag: CorpusTag,
}

impl EvalItem {
    /// The embedding is re-normalized to unit length.
    pub fn new(embedding: Embedding, label: ValueId, corpus_tag: CorpusTag) -> Self {
        EvalItem {
            embedding: Embedding::normalized(embedding.values),
            label,
            corpus_tag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Mean per-label F1 over labels present in the ground truth.
    pub macro_f1: f64,
    /// Mean per-label recall over labels present in the ground truth.
    pub macro_accuracy: f64,
}

pub fn classification_metrics(
    truth: &[ValueId],
    pred: &[ValueId],
) -> Result<ClassificationMetrics> {
    if truth.is_empty() {
        return Err(Error::EmptyQueries);
    }
    if truth.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    // label -> (tp, fp, fn)
    let mut counts: BTreeMap<&ValueId, [usize; 3]> = BTreeMap::new();
    for t in truth {
        counts.entry(t).or_default();
    }
    let mut correct = 0;
    for (t, p) in truth.iter().zip(pred) {
        if t == p {
            correct += 1;
            counts.get_mut(t).expect("truth label")[0] += 1;
        } else {
            counts.get_mut(t).expect("truth label")[2] += 1;
            if let Some(c) = counts.get_mut(p) {
                c[1] += 1;
            }
        }
    }
    let n_labels = counts.len() as f64;
    let mut f1_sum = 0.0;
    let mut recall_sum = 0.0;
    for [tp, fp, fn_] in counts.values() {
        if *tp > 0 {
            f1_sum += 2.0 * *tp as f64 / (2 * tp + fp + fn_) as f64;
        }
        recall_sum += *tp as f64 / (tp + fn_) as f64;
    }
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: f1_sum / n_labels,
        macro_accuracy: recall_sum / n_labels,
    })
}

/// Top-k accuracies in Table-1 column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccAt {
    #[serde(rename = "acc@1")]
    pub at1: f64,
    #[serde(rename = "acc@5")]
    pub at5: f64,
    #[serde(rename = "acc@10")]
    pub at10: f64,
}

impl AccAt {
    fn mean(items: &[AccAt]) -> AccAt {
        let n = items.len() as f64;
        AccAt {
            at1: items.iter().map(|a| a.at1).sum::<f64>() / n,
            at5: items.iter().map(|a| a.at5).sum::<f64>() / n,
            at10: items.iter().map(|a| a.at10).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub labels: usize,
    /// Uniform random guessing.
    pub random: f64,
    /// Always predicting the same k labels, under label-balanced evaluation.
    pub majority_at_k: BTreeMap<usize, f64>,
}

pub fn baseline_scores(labels: usize, ks: &[usize]) -> Result<Baselines> {
    if labels == 0 {
        return Err(Error::Config("baseline needs at least one label".into()));
    }
    let c = labels as f64;
    Ok(Baselines {
        labels,
        random: 1.0 / c,
        majority_at_k: ks.iter().map(|&k| (k, (k as f64 / c).min(1.0))).collect(),
    })
}

/// Uniform mean of per-corpus macro accuracies; `None` when there are none.
pub fn balanced_average(per_corpus_macro_accuracy: &[f64]) -> Option<f64> {
    if per_corpus_macro_accuracy.is_empty() {
        return None;
    }
    Some(per_corpus_macro_accuracy.iter().sum::<f64>() / per_corpus_macro_accuracy.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub value: ClassificationMetrics,
    pub nonvalue: ClassificationMetrics,
    /// Value minus non-value accuracy.
    pub gap: f64,
}

/// kNN on value-eliciting and non-value QAs against the same reference.
pub fn control_eval(
    nonvalue: &[EvalItem],
    value: &[EvalItem],
    reference: &[EvalItem],
    k: usize,
    exec: Execution,
) -> Result<ControlReport> {
    let nonvalue = knn_evaluate(reference, nonvalue, k, exec)?;
    let value = knn_evaluate(reference, value, k, exec)?;
    Ok(ControlReport {
        value,
        nonvalue,
        gap: value.accuracy - nonvalue.accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationeseMode {
    TextOnly,
    Paraphrase,
}

impl FromStr for TranslationeseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_only" | "text-only" => Ok(TranslationeseMode::TextOnly),
            "paraphrase" => Ok(TranslationeseMode::Paraphrase),
            other => Err(Error::Config(format!(
                "unknown translationese mode {other:?}"
            ))),
        }
    }
}

/// Encoder input for source-language identification.
pub fn translationese_input(
    mode: TranslationeseMode,
    english_translation: &str,
    machine_translated_text: &str,
) -> Result<String> {
    if english_translation.trim().is_empty() {
        return Err(Error::EmptyText("english_translation"));
    }
    match mode {
        TranslationeseMode::TextOnly => Ok(english_translation.to_string()),
        TranslationeseMode::Paraphrase => {
            if machine_translated_text.trim().is_empty() {
                return Err(Error::EmptyText("machine_translated_text"));
            }
            Ok(format!(
                "What is the paraphrase of {machine_translated_text}?\nA: {english_translation}"
            ))
        }
    }
}

/// One row of a parallel-text file. `machine_translated_text` is only needed
/// for the paraphrase format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelText {
    pub original_language: String,
    pub english_text: String,
    #[serde(default)]
    pub machine_translated_text: String,
}

/// Reads a tab-separated file with header `original_language  english_text`
/// and an optional third column `machine_translated_text`.
pub fn read_parallel_text(path: &Path) -> Result<Vec<ParallelText>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        let row: ParallelText =
            row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Label used for source-language identification items.
pub fn source_language_label(original_language: &str) -> ValueId {
    ValueId::new("source", original_language)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    /// Fraction of each corpus's questions used as kNN queries and probe
    /// test items; the rest form the reference and probe training set.
    pub query_fraction: f64,
    pub seed: u64,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: DEFAULT_K,
            query_fraction: 0.2,
            seed: 0,
            probe: ProbeConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.query_fraction > 0.0 && self.query_fraction < 1.0) {
            return Err(Error::Config("query_fraction must be in (0, 1)".into()));
        }
        self.probe.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub reference_items: usize,
    pub query_items: usize,
    /// Queries whose label has no reference item; they are not scored.
    pub dropped_queries: usize,
    pub knn: ClassificationMetrics,
    pub linear_probe: AccAt,
}

/// Table-1 style summary: kNN Acc/F1 and probe Acc@{1,5,10}, each averaged
/// uniformly over corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub knn_accuracy: f64,
    pub knn_macro_f1: f64,
    pub probe_acc_at: AccAt,
    pub balanced_average: f64,
    pub baselines: Baselines,
    pub per_corpus: BTreeMap<String, CorpusReport>,
    pub config: EvalConfig,
}

/// Splits indices into (reference, query) by group so no group straddles
/// both sides. Groups are shuffled with `seed`.
pub fn split_by_group(groups: &[&str], query_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut distinct: Vec<&str> = groups
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    distinct.shuffle(&mut rng);
    let n_query = ((distinct.len() as f64 * query_fraction).round() as usize)
        .clamp(1, distinct.len().saturating_sub(1).max(1));
    let query: BTreeSet<&str> = distinct[..n_query.min(distinct.len())]
        .iter()
        .copied()
        .collect();
    let (mut r, mut q) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if query.contains(g) && distinct.len() > 1 {
            q.push(i);
        } else {
            r.push(i);
        }
    }
    (r, q)
}

/// Evaluation group of a QA id: its base question, so that paraphrases of one
/// question stay on the same side of the split.
pub fn question_group(qa_id: &str) -> &str {
    let q = qa_id.split('/').next().unwrap_or(qa_id);
    match q.rfind(".p") {
        Some(i) if q[i + 2..].chars().all(|c| c.is_ascii_digit()) && i + 2 < q.len() => &q[..i],
        _ => q,
    }
}

/// Per-corpus kNN and probe evaluation with question-disjoint splits.
/// `groups[i]` is the question group of `items[i]`.
pub fn evaluate(
    items: &[EvalItem],
    groups: &[&str],
    config: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport> {
    config.validate()?;
    if items.len() != groups.len() {
        return Err(Error::Dimension(format!(
            "{} items but {} groups",
            items.len(),
            groups.len()
        )));
    }
    if items.is_empty() {
        return Err(Error::EmptyQueries);
    }
    let mut by_corpus: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_corpus.entry(it.corpus_tag.as_str()).or_default().push(i);
    }

    let mut per_corpus = BTreeMap::new();
    for (tag, idx) in by_corpus {
        let g: Vec<&str> = idx.iter().map(|&i| groups[i]).collect();
        let (r, q) = split_by_group(&g, config.query_fraction, config.seed);
        if q.is_empty() {
            continue;
        }
        let reference: Vec<EvalItem> = r.iter().map(|&j| items[idx[j]].clone()).collect();
        let seen: BTreeSet<&ValueId> = reference.iter().map(|it| &it.label).collect();
        let all_queries: Vec<&EvalItem> = q.iter().map(|&j| &items[idx[j]]).collect();
        let queries: Vec<EvalItem> = all_queries
            .iter()
            .filter(|it| seen.contains(&it.label))
            .map(|it| (*it).clone())
            .collect();
        if queries.is_empty() {
            continue;
        }
        let knn = knn_evaluate(&reference, &queries, config.k, exec)?;
        let linear_probe = linear_probe(&reference, &queries, &config.probe, exec)?;
        per_corpus.insert(
            tag.to_string(),
            CorpusReport {
                reference_items: reference.len(),
                query_items: queries.len(),
                dropped_queries: all_queries.len() - queries.len(),
                knn,
                linear_probe,
            },
        );
    }
    if per_corpus.is_empty() {
        return Err(Error::EmptyQueries);
    }
    let reports: Vec<&CorpusReport> = per_corpus.values().collect();
    let n = reports.len() as f64;
    let labels: BTreeSet<&ValueId> = items.iter().map(|it| &it.label).collect();
    let macro_acc: Vec<f64> = reports.iter().map(|r| r.knn.macro_accuracy).collect();
    Ok(EvalReport {
        knn_accuracy: reports.iter().map(|r| r.knn.accuracy).sum::<f64>() / n,
        knn_macro_f1: reports.iter().map(|r| r.knn.macro_f1).sum::<f64>() / n,
        probe_acc_at: AccAt::mean(&reports.iter().map(|r| r.linear_probe).collect::<Vec<_>>()),
        balanced_average: balanced_average(&macro_acc).expect("non-empty"),
        baselines: baseline_scores(labels.len(), &[1, 5, 10])?,
        per_corpus,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(i: usize) -> ValueId {
        ValueId::new(format!("m{i}"), "eng")
    }

    /// Confusion-matrix reference for macro-F1.
    fn macro_f1_oracle(truth: &[usize], pred: &[usize], c: usize) -> f64 {
        let mut m = vec![vec![0usize; c]; c];
        for (&t, &p) in truth.iter().zip(pred) {
            m[t][p] += 1;
        }
        let present: Vec<usize> = (0..c).filter(|&l| truth.contains(&l)).collect();
        let mut sum = 0.0;
        for &l in &present {
            let tp = m[l][l] as f64;
            let col: usize = (0..c).map(|r| m[r][l]).sum();
            let row: usize = m[l].iter().sum();
            let prec = if col > 0 { tp / col as f64 } else { 0.0 };
            let rec = tp / row as f64;
            if prec + rec > 0.0 {
                sum += 2.0 * prec * rec / (prec + rec);
            }
        }
        sum / present.len() as f64
    }

    #[test]
    fn baselines_for_128_labels() {
        let b = baseline_scores(128, &[1, 5, 10]).unwrap();
        assert_eq!(b.random, 0.0078125);
        assert_eq!(b.majority_at_k[&1], 0.0078125);
        assert_eq!(b.majority_at_k[&5], 0.0390625);
        assert_eq!(b.majority_at_k[&10], 0.078125);
        let one = baseline_scores(1, &[1, 5, 10]).unwrap();
        assert_eq!(one.random, 1.0);
        assert!(one.majority_at_k.values().all(|&x| x == 1.0));
        assert_eq!(baseline_scores(4, &[2]).unwrap().majority_at_k[&2], 0.5);
        assert!(baseline_scores(0, &[1]).is_err());
    }

    #[test]
    fn balanced_average_examples() {
        assert_eq!(balanced_average(&[0.37]), Some(0.37));
        assert!((balanced_average(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(balanced_average(&[]), None);
        // Per-label accuracies {1, 0} average to 0.5 whatever the counts.
        let truth = [v(0), v(0), v(0), v(0), v(1)];
        let pred = [v(0), v(0), v(0), v(0), v(0)];
        let m = classification_metrics(&truth, &pred).unwrap();
        assert_eq!(balanced_average(&[m.macro_accuracy]), Some(0.5));
    }

    #[test]
    fn macro_f1_ignores_labels_only_predicted() {
        let truth = [v(0), v(0)];
        let pred = [v(0), v(7)];
        let m = classification_metrics(&truth, &pred).unwrap();
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn macro_f1_matches_confusion_matrix(
            pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200)
        ) {
            let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let t: Vec<ValueId> = truth.iter().map(|&i| v(i)).collect();
            let p: Vec<ValueId> = pred.iter().map(|&i| v(i)).collect();
            let m = classification_metrics(&t, &p).unwrap();
            prop_assert!((m.macro_f1 - macro_f1_oracle(&truth, &pred, 6)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.macro_f1));
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
        }

        #[test]
        fn diagonal_confusion_gives_f1_equal_accuracy(labels in prop::collection::vec(0usize..5, 1..50)) {
            let t: Vec<ValueId> = labels.iter().map(|&i| v(i)).collect();
            let m = classification_metrics(&t, &t).unwrap();
            prop_assert_eq!(m.macro_f1, m.accuracy);
        }
    }

    #[test]
    fn translationese_examples() {
        assert_eq!(
            translationese_input(TranslationeseMode::Paraphrase, "I agree.", "Me agree.").unwrap(),
            "What is the paraphrase of Me agree.?\nA: I agree."
        );
        assert_eq!(
            translationese_input(TranslationeseMode::TextOnly, "I agree.", "").unwrap(),
            "I agree."
        );
        assert!(matches!(
            translationese_input(TranslationeseMode::Paraphrase, "", "x"),
            Err(Error::EmptyText(_))
        ));
        assert!(matches!(
            translationese_input(TranslationeseMode::Paraphrase, "x", " "),
            Err(Error::EmptyText(_))
        ));
        assert_eq!(
            "text-only".parse::<TranslationeseMode>().unwrap(),
            TranslationeseMode::TextOnly
        );
    }

    #[test]
    fn parallel_text_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ep.tsv");
        std::fs::write(
            &p,
            "original_language\tenglish_text\ndeu\tWe agree.\nfra\t\"Quoted\" text\n",
        )
        .unwrap();
        let rows = read_parallel_text(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].english_text, "\"Quoted\" text");
        assert_eq!(rows[0].machine_translated_text, "");
        std::fs::write(&p, "lang\ttext\nx\ty\n").unwrap();
        assert!(read_parallel_text(&p).is_err());
    }

    #[test]
    fn question_groups() {
        assert_eq!(question_group("rvs01-q003.p2/gpt/eng"), "rvs01-q003");
        assert_eq!(question_group("rvs01-q003/gpt/eng"), "rvs01-q003");
        assert_eq!(question_group("plain"), "plain");
        assert_eq!(question_group("a.pX/m/l"), "a.pX");
    }

    #[test]
    fn split_keeps_groups_together() {
        let groups: Vec<String> = (0..50).map(|i| format!("g{}", i % 10)).collect();
        let g: Vec<&str> = groups.iter().map(String::as_str).collect();
        let (r, q) = split_by_group(&g, 0.2, 1);
        assert_eq!(r.len() + q.len(), 50);
        let qg: BTreeSet<&str> = q.iter().map(|&i| g[i]).collect();
        assert_eq!(qg.len(), 2);
        assert!(r.iter().all(|&i| !qg.contains(g[i])));
        let (_, none) = split_by_group(&["only"], 0.5, 0);
        assert!(none.is_empty());
    }

    #[test]
    fn evaluate_separated_corpus() {
        let mut items = Vec::new();
        let mut groups = Vec::new();
        for q in 0..10 {
            for l in 0..3 {
                let mut e = vec![0.01 * q as f64; 3];
                e[l] = 1.0;
                items.push(EvalItem::new(Embedding::new(e), v(l), CorpusTag::Wvs));
                groups.push(format!("q{q}"));
            }
        }
        let g: Vec<&str> = groups.iter().map(String::as_str).collect();
        // Twenty full-batch steps barely move a 3-d probe; give it more.
        let cfg = EvalConfig {
            k: 3,
            probe: ProbeConfig {
                epochs: 300,
                ..ProbeConfig::default()
            },
            ..EvalConfig::default()
        };
        let r = evaluate(&items, &g, &cfg, Execution::default()).unwrap();
        assert_eq!(r.knn_accuracy, 1.0);
        assert_eq!(r.probe_acc_at.at1, 1.0);
        assert_eq!(r.balanced_average, 1.0);
        assert_eq!(r.per_corpus["wvs"].query_items, 6);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["probe_acc_at"]["acc@5"].is_number());
    }
}
