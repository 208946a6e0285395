//! Synthetic value-identification data with a known answer: every value id
//! answers from its own vocabulary, so a working encoder must separate them.
//! A matching non-value set draws all answers from one shared vocabulary.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    Corpus, CorpusTag, QaPair, QuestionRecord, ReferenceValue, Roster, Taxonomy, ValueId,
};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vor", "pel", "dri", "nax", "qui", "bel", "hom", "zet",
    "fa", "gun", "ish", "yol", "cra", "mun", "ost", "pim", "lek", "ved",
];
const LANGS: &[&str] = &["eng", "zho", "fra", "deu", "spa", "jpn", "arb", "hin"];
const SHARED: &[&str] = &[
    "the", "a", "it", "is", "and", "to", "of", "that", "in", "for", "on", "with", "this", "be",
    "as", "we", "not", "so", "but", "can",
];
const TOPICS: &[&str] = &[
    "career",
    "family",
    "money",
    "neighbors",
    "elections",
    "school",
    "health",
    "friendship",
    "religion",
    "travel",
    "work",
    "marriage",
    "parents",
    "laws",
    "art",
    "technology",
];
const TECH: &[&str] = &[
    "Can you implement KMP Algorithm with python?",
    "How do I reverse a linked list in C?",
    "What is the derivative of x squared?",
    "Convert 5 miles to kilometers.",
    "How does a hash map resolve collisions?",
    "Write a SQL query that counts rows per day.",
    "What is the boiling point of water at sea level?",
    "Explain binary search in two sentences.",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub value_ids: usize,
    /// Questions answered by every value id.
    pub pairs_per_id: usize,
    pub vocab_per_id: usize,
    /// Id-specific words per answer.
    pub answer_words: usize,
    /// Shared filler words per answer.
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            value_ids: 8,
            pairs_per_id: 40,
            vocab_per_id: 16,
            answer_words: 6,
            filler_words: 6,
            seed: 0,
        }
    }
}

pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub value_ids: Vec<ValueId>,
    vocabularies: Vec<Vec<String>>,
    config: SynthConfig,
}

fn value_id(i: usize) -> ValueId {
    ValueId::new(format!("model-{}", i / LANGS.len()), LANGS[i % LANGS.len()])
}

impl SyntheticCorpus {
    pub fn generate(config: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let value_ids: Vec<ValueId> = (0..config.value_ids).map(value_id).collect();

        let mut used = BTreeSet::new();
        let vocabularies: Vec<Vec<String>> = (0..config.value_ids)
            .map(|_| {
                let mut words = Vec::new();
                while words.len() < config.vocab_per_id {
                    let w: String = (0..3)
                        .map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty"))
                        .collect();
                    if used.insert(w.clone()) {
                        words.push(w);
                    }
                }
                words
            })
            .collect();

        let mut roster = Roster::new();
        for id in &value_ids {
            roster
                .0
                .entry(id.llm.clone())
                .or_default()
                .push(id.lang.clone());
        }
        let questions: Vec<QuestionRecord> = (0..config.pairs_per_id)
            .map(|j| QuestionRecord {
                question_id: format!("syn-q{j:03}"),
                value: "syn".into(),
                text: format!(
                    "Should I put {} ahead of {} in case {j}?",
                    TOPICS[j % TOPICS.len()],
                    TOPICS[(j * 7 + 3) % TOPICS.len()]
                ),
                paraphrase_index: 0,
                language: "eng".into(),
            })
            .collect();

        let mut qa_pairs = Vec::new();
        for (i, id) in value_ids.iter().enumerate() {
            for q in &questions {
                let answer = Self::answer(&mut rng, &vocabularies[i], config);
                qa_pairs.push(QaPair {
                    qa_id: format!("{}/{}/{}", q.question_id, id.llm, id.lang),
                    question_id: q.question_id.clone(),
                    value_id: id.clone(),
                    question_en: q.text.clone(),
                    answer_en: answer,
                    original_language: id.lang.clone(),
                    corpus_tag: CorpusTag::Train,
                    paraphrase_index: 0,
                });
            }
        }
        let corpus = Corpus {
            qa_pairs,
            questions,
            registry: vec![ReferenceValue {
                value_id: "syn".into(),
                name: "Synthetic value".into(),
                source_taxonomy: Taxonomy::Other,
            }],
            roster,
        };
        SyntheticCorpus {
            corpus,
            value_ids,
            vocabularies,
            config: config.clone(),
        }
    }

    fn answer(rng: &mut ChaCha8Rng, vocab: &[String], config: &SynthConfig) -> String {
        let mut words: Vec<&str> = Vec::new();
        for k in 0..config.answer_words.max(config.filler_words) {
            if k < config.filler_words {
                words.push(SHARED.choose(rng).expect("non-empty"));
            }
            if k < config.answer_words {
                words.push(vocab.choose(rng).expect("non-empty"));
            }
        }
        let mut s = words.join(" ");
        s.push('.');
        let mut c = s.chars();
        c.next()
            .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
            .unwrap_or_default()
    }

    pub fn vocabulary(&self, i: usize) -> &[String] {
        &self.vocabularies[i]
    }

    /// Fresh value-eliciting pairs (new seed stream) for every value id,
    /// `per_id` each, tagged with `tag`.
    pub fn fresh_pairs(&self, per_id: usize, seed: u64, tag: CorpusTag) -> Vec<QaPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (i, id) in self.value_ids.iter().enumerate() {
            for j in 0..per_id {
                let q = &self.corpus.questions[j % self.corpus.questions.len()];
                out.push(QaPair {
                    qa_id: format!("fresh{seed}-{j:03}/{}/{}", id.llm, id.lang),
                    question_id: q.question_id.clone(),
                    value_id: id.clone(),
                    question_en: q.text.clone(),
                    answer_en: Self::answer(&mut rng, &self.vocabularies[i], &self.config),
                    original_language: id.lang.clone(),
                    corpus_tag: tag,
                    paraphrase_index: 0,
                });
            }
        }
        out
    }

    /// Non-value pairs: technical questions whose answers come from one
    /// vocabulary shared by every value id, so labels are unrecoverable.
    pub fn nonvalue_pairs(&self, per_id: usize, seed: u64) -> Vec<QaPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared: Vec<String> = self.vocabularies.iter().flatten().cloned().collect();
        let mut out = Vec::new();
        for id in &self.value_ids {
            for j in 0..per_id {
                let question = TECH[rng.random_range(0..TECH.len())];
                out.push(QaPair {
                    qa_id: format!("nv{seed}-{j:03}/{}/{}", id.llm, id.lang),
                    question_id: format!("nv-q{j:03}"),
                    value_id: id.clone(),
                    question_en: question.to_string(),
                    answer_en: Self::answer(&mut rng, &shared, &self.config),
                    original_language: id.lang.clone(),
                    corpus_tag: CorpusTag::Nonvalue,
                    paraphrase_index: 0,
                });
            }
        }
        out
    }
}

/// Splits `pairs` into (kept, held_out), holding out the last `per_id` pairs
/// of every value id.
pub fn hold_out(pairs: &[QaPair], per_id: usize) -> (Vec<QaPair>, Vec<QaPair>) {
    let mut counts = std::collections::BTreeMap::new();
    for p in pairs {
        *counts.entry(&p.value_id).or_insert(0usize) += 1;
    }
    let mut seen = std::collections::BTreeMap::new();
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for p in pairs {
        let n = seen.entry(&p.value_id).or_insert(0usize);
        *n += 1;
        if *n > counts[&p.value_id] - per_id.min(counts[&p.value_id]) {
            held.push(p.clone());
        } else {
            kept.push(p.clone());
        }
    }
    (kept, held)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_corpus_is_valid() {
        let s = SyntheticCorpus::generate(&SynthConfig::default());
        s.corpus.validate().unwrap();
        assert_eq!(s.corpus.qa_pairs.len(), 8 * 40);
        assert_eq!(s.corpus.by_value_id().len(), 8);
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let s = SyntheticCorpus::generate(&SynthConfig::default());
        let a: BTreeSet<_> = s.vocabulary(0).iter().collect();
        let b: BTreeSet<_> = s.vocabulary(1).iter().collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn hold_out_splits_per_id() {
        let s = SyntheticCorpus::generate(&SynthConfig::default());
        let (kept, held) = hold_out(&s.corpus.qa_pairs, 10);
        assert_eq!(kept.len(), 240);
        assert_eq!(held.len(), 80);
    }

    #[test]
    fn deterministic() {
        let a = SyntheticCorpus::generate(&SynthConfig::default());
        let b = SyntheticCorpus::generate(&SynthConfig::default());
        assert_eq!(a.corpus, b.corpus);
    }
}
