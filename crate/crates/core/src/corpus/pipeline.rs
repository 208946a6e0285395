//! The corpus construction pipeline: scenarios, questions, paraphrases,
//! translation, answering and back-translation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::clients::{serialize_generator, serialize_translator, TextGenerator, Translator};
use super::prompts::{
    apply_chat_template, parse_lines, parse_numbered_list, parse_single, Template,
};
use super::{Corpus, CorpusTag, QaPair, QuestionRecord, ReferenceValue, Roster, ValueId, ENGLISH};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Asks `client` for scenarios about `value` and keeps the first `n`.
///
/// Question ids are `<value_id>-q<index>`.
pub fn generate_questions(
    value: &ReferenceValue,
    client: &dyn TextGenerator,
    n: usize,
) -> Result<Vec<QuestionRecord>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let response = client.generate(&Template::Scenarios.render(&value.name))?;
    let items = parse_numbered_list(&response, n)?;
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(i, text)| QuestionRecord {
            question_id: format!("{}-q{i:03}", value.value_id),
            value: value.value_id.clone(),
            text,
            paraphrase_index: 0,
            language: ENGLISH.to_string(),
        })
        .collect())
}

/// Rewrites each scenario as a should-or-should-not question, keeping ids.
pub fn questionize(
    scenarios: &[QuestionRecord],
    client: &dyn TextGenerator,
    exec: Execution,
) -> Result<Vec<QuestionRecord>> {
    exec.map(scenarios, |s| {
        let text = parse_single(&client.generate(&Template::Question.render(&s.text))?)?;
        Ok(QuestionRecord { text, ..s.clone() })
    })
    .into_iter()
    .collect()
}

/// Adds `p` paraphrases after each original question.
///
/// Output holds `|questions| * (p + 1)` records; paraphrase `k` of question
/// `id` gets id `id.p<k>` and `paraphrase_index = k`.
pub fn paraphrase_and_expand(
    questions: &[QuestionRecord],
    client: &dyn TextGenerator,
    p: usize,
    exec: Execution,
) -> Result<Vec<QuestionRecord>> {
    if let Some(q) = questions.iter().find(|q| q.paraphrase_index != 0) {
        return Err(Error::Schema(format!(
            "{} is already a paraphrase (index {})",
            q.question_id, q.paraphrase_index
        )));
    }
    let expanded = exec.map(questions, |q| -> Result<Vec<QuestionRecord>> {
        let mut out = vec![q.clone()];
        if p == 0 {
            return Ok(out);
        }
        let response = client.generate(&Template::Paraphrase.render(&q.text))?;
        for (k, text) in parse_lines(&response, p)?.into_iter().enumerate() {
            out.push(QuestionRecord {
                question_id: format!("{}.p{}", q.question_id, k + 1),
                text,
                paraphrase_index: (k + 1) as u32,
                ..q.clone()
            });
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(questions.len() * (p + 1));
    for group in expanded {
        all.extend(group?);
    }
    Ok(all)
}

/// An answering model plus the chat template its model card prescribes.
#[derive(Clone)]
pub struct LlmEndpoint {
    pub client: Arc<dyn TextGenerator>,
    /// Template containing `{PROMPT}`; `None` sends the question as is.
    pub chat_template: Option<String>,
}

impl LlmEndpoint {
    pub fn new(client: Arc<dyn TextGenerator>) -> Self {
        LlmEndpoint {
            client,
            chat_template: None,
        }
    }
}

pub trait LlmFactory {
    fn endpoint(&self, llm: &str) -> Result<LlmEndpoint>;
}

impl LlmFactory for BTreeMap<String, LlmEndpoint> {
    fn endpoint(&self, llm: &str) -> Result<LlmEndpoint> {
        self.get(llm)
            .cloned()
            .ok_or_else(|| Error::client(llm, "no client configured for this LLM"))
    }
}

impl<F: Fn(&str) -> Result<LlmEndpoint>> LlmFactory for F {
    fn endpoint(&self, llm: &str) -> Result<LlmEndpoint> {
        self(llm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectFailure {
    pub question_id: String,
    pub value_id: ValueId,
    pub error: String,
}

/// Pairs that were collected plus the calls that failed.
#[derive(Debug, Clone, Default)]
pub struct CollectReport {
    pub pairs: Vec<QaPair>,
    pub failures: Vec<CollectFailure>,
}

struct Job<'a> {
    question: &'a QuestionRecord,
    llm: &'a str,
    lang: &'a str,
}

fn collect_one(
    job: &Job<'_>,
    endpoint: &LlmEndpoint,
    translator: &dyn Translator,
    tag: CorpusTag,
) -> Result<QaPair> {
    let q = &job.question;
    let (question_en, answer_en) = if job.lang == ENGLISH {
        let prompt = apply_chat_template(endpoint.chat_template.as_deref(), &q.text);
        (q.text.clone(), endpoint.client.generate(&prompt)?)
    } else {
        let localized = translator.translate(&q.text, ENGLISH, job.lang)?;
        let prompt = apply_chat_template(endpoint.chat_template.as_deref(), &localized);
        let answer = endpoint.client.generate(&prompt)?;
        (
            translator.translate(&localized, job.lang, ENGLISH)?,
            translator.translate(&answer, job.lang, ENGLISH)?,
        )
    };
    let (question_en, answer_en) = (question_en.trim().to_string(), answer_en.trim().to_string());
    if question_en.is_empty() || answer_en.is_empty() {
        return Err(Error::client(
            endpoint.client.name(),
            "empty question or answer",
        ));
    }
    Ok(QaPair {
        qa_id: format!("{}/{}/{}", q.question_id, job.llm, job.lang),
        question_id: q.question_id.clone(),
        value_id: ValueId::new(job.llm, job.lang),
        question_en,
        answer_en,
        original_language: job.lang.to_string(),
        corpus_tag: tag,
        paraphrase_index: q.paraphrase_index,
    })
}

/// Answers every question with every LLM in every language it supports.
///
/// Non-English slots translate the question out of English, ask the model and
/// translate both sides back. Failed calls are reported, not fatal. Output is
/// sorted by (question_id, llm, language).
pub fn collect_qa(
    questions: &[QuestionRecord],
    roster: &Roster,
    llms: &dyn LlmFactory,
    translator: Arc<dyn Translator>,
    tag: CorpusTag,
    exec: Execution,
) -> Result<CollectReport> {
    roster.validate()?;
    for (llm, langs) in &roster.0 {
        for lang in langs.iter().filter(|l| l.as_str() != ENGLISH) {
            if !translator.supports(ENGLISH, lang) || !translator.supports(lang, ENGLISH) {
                return Err(Error::Roster(format!(
                    "{llm}: translator {} has no route between eng and {lang}",
                    translator.name()
                )));
            }
        }
    }
    let translator = serialize_translator(translator);
    let mut endpoints = BTreeMap::new();
    for llm in roster.0.keys() {
        let mut ep = llms.endpoint(llm)?;
        ep.client = serialize_generator(ep.client);
        endpoints.insert(llm.as_str(), ep);
    }

    let mut ordered: Vec<&QuestionRecord> = questions.iter().collect();
    ordered.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let mut jobs = Vec::new();
    for q in ordered {
        for (llm, langs) in &roster.0 {
            let mut langs: Vec<&String> = langs.iter().collect();
            langs.sort();
            for lang in langs {
                jobs.push(Job {
                    question: q,
                    llm,
                    lang,
                });
            }
        }
    }

    let results = exec.map(&jobs, |job| {
        collect_one(job, &endpoints[job.llm], translator.as_ref(), tag)
    });
    let mut report = CollectReport::default();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(pair) => report.pairs.push(pair),
            Err(e) => report.failures.push(CollectFailure {
                question_id: job.question.question_id.clone(),
                value_id: ValueId::new(job.llm, job.lang),
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Builds a validated corpus, dropping excluded question ids (and any pair
/// whose base question or paraphrase source is excluded).
pub fn assemble(
    registry: Vec<ReferenceValue>,
    roster: Roster,
    questions: Vec<QuestionRecord>,
    pairs: Vec<QaPair>,
    exclusions: &BTreeSet<String>,
) -> Result<Corpus> {
    let excluded = |qid: &str| {
        exclusions.contains(qid)
            || qid
                .split_once(".p")
                .is_some_and(|(base, _)| exclusions.contains(base))
    };
    let corpus = Corpus {
        qa_pairs: pairs
            .into_iter()
            .filter(|p| !excluded(&p.question_id))
            .collect(),
        questions: questions
            .into_iter()
            .filter(|q| !excluded(&q.question_id))
            .collect(),
        registry,
        roster,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::clients::{
        IdentityTranslator, Logged, MarkerTranslator, RequestLog, ScriptedGenerator,
    };
    use crate::corpus::Taxonomy;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn value(id: &str, name: &str) -> ReferenceValue {
        ReferenceValue {
            value_id: id.into(),
            name: name.into(),
            source_taxonomy: Taxonomy::Vsm,
        }
    }

    struct Canned(String);
    impl TextGenerator for Canned {
        fn name(&self) -> &str {
            "canned"
        }
        fn generate(&self, _: &str) -> Result<String> {
            Ok(self.0.clone())
        }
    }

    struct Counting(AtomicUsize);
    impl TextGenerator for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn generate(&self, _: &str) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok("1. x".into())
        }
    }

    #[test]
    fn fifty_scenarios_from_scripted_list() {
        let g = ScriptedGenerator::new("gpt", 3);
        let v = value("ivc", "Individualism vs Collectivism");
        let qs = generate_questions(&v, &g, 50).unwrap();
        assert_eq!(qs.len(), 50);
        assert!(qs
            .iter()
            .all(|q| q.paraphrase_index == 0 && q.language == "eng"));
        assert_eq!(qs[7].question_id, "ivc-q007");
    }

    #[test]
    fn zero_questions_never_calls_client() {
        let c = Counting(AtomicUsize::new(0));
        assert!(generate_questions(&value("v", "x"), &c, 0)
            .unwrap()
            .is_empty());
        assert_eq!(c.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn prose_response_is_parse_error() {
        let c = Canned("Honestly it depends on many things.".into());
        assert!(matches!(
            generate_questions(&value("v", "x"), &c, 3),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn prompt_is_verbatim_template() {
        let log = RequestLog::new();
        let g = Logged::wrap(Arc::new(ScriptedGenerator::new("gpt", 0)), &log);
        generate_questions(&value("v", "Harmony vs Mastery"), g.as_ref(), 2).unwrap();
        let entries = log.entries();
        assert_eq!(entries.len(), 1);
        assert_eq!(
            entries[0].prompt,
            Template::Scenarios
                .text()
                .replace("{VALUE}", "Harmony vs Mastery")
        );
    }

    #[test]
    fn paraphrase_counts() {
        let g = ScriptedGenerator::new("mixtral", 0);
        let v = value("v", "x");
        let originals = generate_questions(&v, &g, 2).unwrap();
        let out = paraphrase_and_expand(&originals, &g, 4, Execution::Parallel).unwrap();
        assert_eq!(out.len(), 10);
        for chunk in out.chunks(5) {
            let idx: Vec<u32> = chunk.iter().map(|q| q.paraphrase_index).collect();
            assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        }
        let same = paraphrase_and_expand(&originals[..1], &g, 0, Execution::Sequential).unwrap();
        assert_eq!(same, originals[..1].to_vec());
        assert!(paraphrase_and_expand(&out, &g, 4, Execution::Sequential).is_err());
    }

    #[test]
    fn too_few_paraphrases_is_parse_error() {
        let c = Canned("only one\nand two".into());
        let q = generate_questions(&value("v", "x"), &ScriptedGenerator::new("g", 0), 1).unwrap();
        assert!(matches!(
            paraphrase_and_expand(&q, &c, 4, Execution::Sequential),
            Err(Error::Parse(_))
        ));
    }

    struct CountingTranslator(AtomicUsize);
    impl Translator for CountingTranslator {
        fn name(&self) -> &str {
            "counting"
        }
        fn translate(&self, text: &str, _: &str, _: &str) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(text.to_string())
        }
    }

    fn endpoints(names: &[&str]) -> BTreeMap<String, LlmEndpoint> {
        names
            .iter()
            .map(|n| {
                (
                    n.to_string(),
                    LlmEndpoint::new(Arc::new(ScriptedGenerator::new(*n, 9))),
                )
            })
            .collect()
    }

    #[test]
    fn collect_two_languages() {
        let qs = generate_questions(&value("v", "x"), &ScriptedGenerator::new("g", 0), 2).unwrap();
        let roster = Roster::new().with("llm", &["eng", "zho"]);
        let report = collect_qa(
            &qs,
            &roster,
            &endpoints(&["llm"]),
            Arc::new(IdentityTranslator),
            CorpusTag::Train,
            Execution::Parallel,
        )
        .unwrap();
        assert!(report.failures.is_empty());
        assert_eq!(report.pairs.len(), 4);
        let ids: BTreeSet<ValueId> = report.pairs.iter().map(|p| p.value_id.clone()).collect();
        assert_eq!(
            ids,
            [ValueId::new("llm", "eng"), ValueId::new("llm", "zho")]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn english_slot_skips_translator() {
        let qs = generate_questions(&value("v", "x"), &ScriptedGenerator::new("g", 0), 1).unwrap();
        let t = Arc::new(CountingTranslator(AtomicUsize::new(0)));
        let roster = Roster::new().with("llm", &["eng"]);
        collect_qa(
            &qs,
            &roster,
            &endpoints(&["llm"]),
            t.clone(),
            CorpusTag::Train,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(t.0.load(Ordering::SeqCst), 0);

        let roster = Roster::new().with("llm", &["eng", "fra"]);
        collect_qa(
            &qs,
            &roster,
            &endpoints(&["llm"]),
            t.clone(),
            CorpusTag::Train,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(t.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn failures_are_collected_not_fatal() {
        let qs = generate_questions(&value("v", "x"), &ScriptedGenerator::new("g", 0), 3).unwrap();
        let mut eps = endpoints(&["good"]);
        eps.insert(
            "flaky".into(),
            LlmEndpoint::new(Arc::new(
                ScriptedGenerator::new("flaky", 1).failing_when("[fra]"),
            )),
        );
        let roster = Roster::new()
            .with("good", &["eng", "fra"])
            .with("flaky", &["eng", "fra"]);
        let report = collect_qa(
            &qs,
            &roster,
            &eps,
            Arc::new(MarkerTranslator),
            CorpusTag::Train,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(report.pairs.len(), 9);
        assert_eq!(report.failures.len(), 3);
        assert!(report
            .failures
            .iter()
            .all(|f| f.value_id == ValueId::new("flaky", "fra")));
        // Back-translation strips the marker.
        assert!(report.pairs.iter().all(|p| !p.question_en.starts_with('[')));
    }

    #[test]
    fn empty_language_list_is_roster_error() {
        let roster = Roster::new().with("llm", &[]);
        let r = collect_qa(
            &[],
            &roster,
            &endpoints(&["llm"]),
            Arc::new(IdentityTranslator),
            CorpusTag::Train,
            Execution::Sequential,
        );
        assert!(matches!(r, Err(Error::Roster(_))));
    }

    #[test]
    fn collection_order_is_canonical() {
        let qs = generate_questions(&value("v", "x"), &ScriptedGenerator::new("g", 0), 4).unwrap();
        let mut reversed = qs.clone();
        reversed.reverse();
        let roster = Roster::new().with("b", &["zho", "eng"]).with("a", &["eng"]);
        let run = |qs: &[QuestionRecord], exec| {
            collect_qa(
                qs,
                &roster,
                &endpoints(&["a", "b"]),
                Arc::new(MarkerTranslator),
                CorpusTag::Train,
                exec,
            )
            .unwrap()
            .pairs
        };
        let a = run(&qs, Execution::Parallel);
        assert_eq!(a, run(&reversed, Execution::Sequential));
        let keys: Vec<_> = a
            .iter()
            .map(|p| {
                (
                    p.question_id.clone(),
                    p.value_id.llm.clone(),
                    p.value_id.lang.clone(),
                )
            })
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn assemble_applies_exclusions() {
        let g = ScriptedGenerator::new("g", 0);
        let v = value("v", "x");
        let qs = paraphrase_and_expand(
            &generate_questions(&v, &g, 2).unwrap(),
            &g,
            2,
            Execution::Sequential,
        )
        .unwrap();
        let roster = Roster::new().with("llm", &["eng"]);
        let pairs = collect_qa(
            &qs,
            &roster,
            &endpoints(&["llm"]),
            Arc::new(IdentityTranslator),
            CorpusTag::Train,
            Execution::Sequential,
        )
        .unwrap()
        .pairs;
        let ex: BTreeSet<String> = ["v-q000".to_string()].into_iter().collect();
        let c = assemble(vec![v], roster, qs, pairs, &ex).unwrap();
        assert_eq!(c.questions.len(), 3);
        assert_eq!(c.qa_pairs.len(), 3);
        assert!(c
            .qa_pairs
            .iter()
            .all(|p| p.question_id.starts_with("v-q001")));
    }
}
