//! Value-eliciting QA corpus: domain types, validation and persistence.
//!
//! A corpus is stored as two files: the QA pairs as line-delimited JSON (one
//! pair per line) and a `<file>.meta.json` sidecar carrying the value
//! registry, the LLM roster and the question records the pairs link to.

pub mod clients;
pub mod pipeline;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pipeline::{
    assemble, collect_qa, generate_questions, paraphrase_and_expand, questionize, CollectFailure,
    CollectReport, LlmEndpoint, LlmFactory,
};

/// Returns true for a syntactically valid ISO 639-3 code (three lowercase
/// ASCII letters).
pub fn is_iso639_3(code: &str) -> bool {
    code.len() == 3 && code.bytes().all(|b| b.is_ascii_lowercase())
}

pub const ENGLISH: &str = "eng";

/// Value taxonomy a reference value was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Taxonomy {
    /// Rokeach Value Survey.
    #[serde(rename = "RVS")]
    Rvs,
    /// World Values Survey.
    #[serde(rename = "WVS")]
    Wvs,
    /// Schwartz value theory.
    #[serde(rename = "SVS")]
    Svs,
    /// Hofstede's Values Survey Module.
    #[serde(rename = "VSM")]
    Vsm,
    #[serde(rename = "other")]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValue {
    pub value_id: String,
    pub name: String,
    pub source_taxonomy: Taxonomy,
}

/// The shipped, editable seed registry of reference values.
pub fn default_registry() -> Result<Vec<ReferenceValue>> {
    parse_registry(include_str!("../../data/values.tsv"))
}

/// Parses a tab-separated registry with header `value_id, name, source_taxonomy`.
pub fn parse_registry(tsv: &str) -> Result<Vec<ReferenceValue>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(tsv.as_bytes());
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let value: ReferenceValue = row.map_err(|e| Error::Schema(format!("registry: {e}")))?;
        out.push(value);
    }
    validate_registry(&out)?;
    Ok(out)
}

pub fn validate_registry(registry: &[ReferenceValue]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for v in registry {
        if v.name.trim().is_empty() {
            return Err(Error::Schema(format!(
                "value {} has an empty name",
                v.value_id
            )));
        }
        if v.value_id.trim().is_empty() || !seen.insert(v.value_id.as_str()) {
            return Err(Error::Schema(format!(
                "value id {:?} is empty or duplicated",
                v.value_id
            )));
        }
    }
    Ok(())
}

/// An (LLM, language) pair: one distinct value system and the label of the
/// identification task. Rendered as `llm@lang`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueId {
    pub llm: String,
    pub lang: String,
}

impl ValueId {
    pub fn new(llm: impl Into<String>, lang: impl Into<String>) -> Self {
        ValueId {
            llm: llm.into(),
            lang: lang.into(),
        }
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.llm, self.lang)
    }
}

impl FromStr for ValueId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (llm, lang) = s
            .rsplit_once('@')
            .ok_or_else(|| Error::Schema(format!("value id {s:?} is not of the form llm@lang")))?;
        if llm.is_empty() || !is_iso639_3(lang) {
            return Err(Error::Schema(format!("invalid value id {s:?}")));
        }
        Ok(ValueId::new(llm, lang))
    }
}

/// Which subset of the shipped roster to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RosterSubset {
    Training,
    Unseen,
    All,
}

/// LLM name to the languages it is queried in, in declared order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Roster(pub BTreeMap<String, Vec<String>>);

impl Roster {
    pub fn new() -> Self {
        Roster::default()
    }

    pub fn with(mut self, llm: &str, langs: &[&str]) -> Self {
        self.0.insert(
            llm.to_string(),
            langs.iter().map(|l| l.to_string()).collect(),
        );
        self
    }

    /// The shipped roster of 15 LLMs.
    pub fn builtin(subset: RosterSubset) -> Result<Self> {
        #[derive(Deserialize)]
        struct Shipped {
            training: BTreeMap<String, Vec<String>>,
            unseen: BTreeMap<String, Vec<String>>,
        }
        let shipped: Shipped = toml::from_str(include_str!("../../data/roster.toml"))
            .map_err(|e| Error::Schema(format!("shipped roster: {e}")))?;
        let mut map = BTreeMap::new();
        if subset != RosterSubset::Unseen {
            map.extend(shipped.training);
        }
        if subset != RosterSubset::Training {
            map.extend(shipped.unseen);
        }
        let roster = Roster(map);
        roster.validate()?;
        Ok(roster)
    }

    pub fn languages(&self, llm: &str) -> Option<&[String]> {
        self.0.get(llm).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &ValueId) -> bool {
        self.languages(&id.llm)
            .is_some_and(|langs| langs.contains(&id.lang))
    }

    /// Every value id the roster declares, in (llm, declared language) order.
    pub fn value_ids(&self) -> Vec<ValueId> {
        self.0
            .iter()
            .flat_map(|(llm, langs)| langs.iter().map(move |l| ValueId::new(llm, l)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (llm, langs) in &self.0 {
            if langs.is_empty() {
                return Err(Error::Roster(format!("{llm} declares no languages")));
            }
            let mut seen = BTreeSet::new();
            for l in langs {
                if !is_iso639_3(l) {
                    return Err(Error::Schema(format!("{llm}: invalid language code {l:?}")));
                }
                if !seen.insert(l) {
                    return Err(Error::Schema(format!("{llm}: duplicate language {l}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub question_id: String,
    /// Id of the [`ReferenceValue`] the question elicits.
    pub value: String,
    pub text: String,
    /// 0 for the original question, 1..=P for its paraphrases.
    pub paraphrase_index: u32,
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusTag {
    Train,
    Wvs,
    Pvq,
    Globe,
    Valueprism,
    Nonvalue,
    Custom,
}

impl CorpusTag {
    pub const ALL: [CorpusTag; 7] = [
        CorpusTag::Train,
        CorpusTag::Wvs,
        CorpusTag::Pvq,
        CorpusTag::Globe,
        CorpusTag::Valueprism,
        CorpusTag::Nonvalue,
        CorpusTag::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusTag::Train => "train",
            CorpusTag::Wvs => "wvs",
            CorpusTag::Pvq => "pvq",
            CorpusTag::Globe => "globe",
            CorpusTag::Valueprism => "valueprism",
            CorpusTag::Nonvalue => "nonvalue",
            CorpusTag::Custom => "custom",
        }
    }
}

impl fmt::Display for CorpusTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorpusTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown corpus tag {s:?}")))
    }
}

/// One English-normalized question/answer pair with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub qa_id: String,
    pub question_id: String,
    pub value_id: ValueId,
    pub question_en: String,
    pub answer_en: String,
    pub original_language: String,
    pub corpus_tag: CorpusTag,
    pub paraphrase_index: u32,
}

/// Exact line layout of the corpus file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaLine {
    qa_id: String,
    question_id: String,
    value_llm: String,
    value_lang: String,
    question_en: String,
    answer_en: String,
    original_language: String,
    corpus_tag: CorpusTag,
    paraphrase_index: u32,
}

impl From<&QaPair> for QaLine {
    fn from(p: &QaPair) -> Self {
        QaLine {
            qa_id: p.qa_id.clone(),
            question_id: p.question_id.clone(),
            value_llm: p.value_id.llm.clone(),
            value_lang: p.value_id.lang.clone(),
            question_en: p.question_en.clone(),
            answer_en: p.answer_en.clone(),
            original_language: p.original_language.clone(),
            corpus_tag: p.corpus_tag,
            paraphrase_index: p.paraphrase_index,
        }
    }
}

impl From<QaLine> for QaPair {
    fn from(l: QaLine) -> Self {
        QaPair {
            qa_id: l.qa_id,
            question_id: l.question_id,
            value_id: ValueId::new(l.value_llm, l.value_lang),
            question_en: l.question_en,
            answer_en: l.answer_en,
            original_language: l.original_language,
            corpus_tag: l.corpus_tag,
            paraphrase_index: l.paraphrase_index,
        }
    }
}

/// Serializes one pair as a corpus-file line (without the trailing newline).
pub fn qa_to_line(pair: &QaPair) -> String {
    serde_json::to_string(&QaLine::from(pair)).expect("QA line serialization cannot fail")
}

pub fn qa_from_line(line: &str) -> Result<QaPair> {
    let parsed: QaLine =
        serde_json::from_str(line).map_err(|e| Error::Schema(format!("corpus line: {e}")))?;
    Ok(parsed.into())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub qa_pairs: Vec<QaPair>,
    pub questions: Vec<QuestionRecord>,
    pub registry: Vec<ReferenceValue>,
    pub roster: Roster,
}

impl Corpus {
    /// Checks every structural invariant: unique ids, resolvable value ids,
    /// valid language codes and provenance links.
    pub fn validate(&self) -> Result<()> {
        validate_registry(&self.registry)?;
        self.roster.validate()?;
        let values: BTreeSet<&str> = self.registry.iter().map(|v| v.value_id.as_str()).collect();
        let mut questions = BTreeMap::new();
        for q in &self.questions {
            if q.text.trim().is_empty() {
                return Err(Error::Schema(format!(
                    "question {} has empty text",
                    q.question_id
                )));
            }
            if !is_iso639_3(&q.language) {
                return Err(Error::Schema(format!(
                    "question {}: bad language",
                    q.question_id
                )));
            }
            if !values.contains(q.value.as_str()) {
                return Err(Error::Schema(format!(
                    "question {} references unknown value {}",
                    q.question_id, q.value
                )));
            }
            if questions.insert(q.question_id.as_str(), q).is_some() {
                return Err(Error::Schema(format!(
                    "duplicate question id {}",
                    q.question_id
                )));
            }
        }
        let mut qa_ids = BTreeSet::new();
        for p in &self.qa_pairs {
            if !qa_ids.insert(p.qa_id.as_str()) {
                return Err(Error::Schema(format!("duplicate qa id {}", p.qa_id)));
            }
            if p.question_en.trim().is_empty() || p.answer_en.trim().is_empty() {
                return Err(Error::Schema(format!("qa {} has empty text", p.qa_id)));
            }
            if !is_iso639_3(&p.value_id.lang) || !is_iso639_3(&p.original_language) {
                return Err(Error::Schema(format!(
                    "qa {}: invalid language code",
                    p.qa_id
                )));
            }
            if !self.roster.contains(&p.value_id) {
                return Err(Error::Schema(format!(
                    "qa {}: value id {} not in roster",
                    p.qa_id, p.value_id
                )));
            }
            if !questions.contains_key(p.question_id.as_str()) {
                return Err(Error::Schema(format!(
                    "qa {} links to unknown question {}",
                    p.qa_id, p.question_id
                )));
            }
        }
        Ok(())
    }

    pub fn pair(&self, qa_id: &str) -> Option<&QaPair> {
        self.qa_pairs.iter().find(|p| p.qa_id == qa_id)
    }

    /// qa_id -> pair index, for repeated lookups.
    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.qa_pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (p.qa_id.as_str(), i))
            .collect()
    }

    /// Pairs grouped by value id, in corpus order within each group.
    pub fn by_value_id(&self) -> BTreeMap<ValueId, Vec<&QaPair>> {
        let mut groups: BTreeMap<ValueId, Vec<&QaPair>> = BTreeMap::new();
        for p in &self.qa_pairs {
            groups.entry(p.value_id.clone()).or_default().push(p);
        }
        groups
    }

    /// A sub-corpus holding only the selected pairs (registry and roster kept).
    pub fn filter<F: Fn(&QaPair) -> bool>(&self, keep: F) -> Corpus {
        Corpus {
            qa_pairs: self.qa_pairs.iter().filter(|p| keep(p)).cloned().collect(),
            questions: self.questions.clone(),
            registry: self.registry.clone(),
            roster: self.roster.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusMeta {
    format_version: u32,
    registry: Vec<ReferenceValue>,
    roster: Roster,
    questions: Vec<QuestionRecord>,
}

const CORPUS_FORMAT_VERSION: u32 = 1;

/// Path of the metadata sidecar for a corpus file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    corpus.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &corpus.qa_pairs {
        writeln!(w, "{}", qa_to_line(p)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta = CorpusMeta {
        format_version: CORPUS_FORMAT_VERSION,
        registry: corpus.registry.clone(),
        roster: corpus.roster.clone(),
        questions: corpus.questions.clone(),
    };
    let mp = meta_path(path);
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serialization cannot fail");
    text.push('\n');
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let mp = meta_path(path);
    let meta_text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CorpusMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Schema(format!("{}: {e}", mp.display())))?;
    if meta.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported corpus format version {}",
            meta.format_version
        )));
    }

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut qa_pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = qa_from_line(&line)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), n + 1)))?;
        qa_pairs.push(pair);
    }
    let corpus = Corpus {
        qa_pairs,
        questions: meta.questions,
        registry: meta.registry,
        roster: meta.roster,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Reads an exclusion list: one question id per line, `#` starts a comment.
pub fn read_exclusions(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(n: usize) -> Corpus {
        let registry = vec![ReferenceValue {
            value_id: "v1".into(),
            name: "Harmony vs Mastery".into(),
            source_taxonomy: Taxonomy::Svs,
        }];
        let roster = Roster::new().with("m", &["eng", "zho", "fra"]);
        let langs = ["eng", "zho", "fra"];
        let questions: Vec<QuestionRecord> = (0..n.div_ceil(3))
            .map(|i| QuestionRecord {
                question_id: format!("v1-q{i:03}"),
                value: "v1".into(),
                text: format!("question {i}?"),
                paraphrase_index: 0,
                language: "eng".into(),
            })
            .collect();
        let qa_pairs = (0..n)
            .map(|i| QaPair {
                qa_id: format!("qa{i}"),
                question_id: format!("v1-q{:03}", i / 3),
                value_id: ValueId::new("m", langs[i % 3]),
                question_en: format!("question {}?", i / 3),
                answer_en: format!("answer \"{i}\"\nwith newline"),
                original_language: langs[i % 3].into(),
                corpus_tag: CorpusTag::Train,
                paraphrase_index: 0,
            })
            .collect();
        Corpus {
            qa_pairs,
            questions,
            registry,
            roster,
        }
    }

    #[test]
    fn round_trip_nine_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = tiny_corpus(9);
        save_corpus(&c, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn empty_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let c = Corpus::default();
        save_corpus(&c, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn line_has_exact_field_set() {
        let c = tiny_corpus(1);
        let v: serde_json::Value = serde_json::from_str(&qa_to_line(&c.qa_pairs[0])).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let expected: BTreeSet<&str> = [
            "qa_id",
            "question_id",
            "value_llm",
            "value_lang",
            "question_en",
            "answer_en",
            "original_language",
            "corpus_tag",
            "paraphrase_index",
        ]
        .into_iter()
        .collect();
        assert_eq!(keys, expected);
    }

    #[test]
    fn language_outside_roster_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&tiny_corpus(3), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(
            &path,
            text.replace("\"value_lang\":\"zho\"", "\"value_lang\":\"deu\""),
        )
        .unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_field_and_bad_code_rejected() {
        let c = tiny_corpus(1);
        let line = qa_to_line(&c.qa_pairs[0]);
        let extra = line.replacen('{', "{\"extra\":1,", 1);
        assert!(matches!(qa_from_line(&extra), Err(Error::Schema(_))));

        let mut bad = c.clone();
        bad.qa_pairs[0].original_language = "english".into();
        assert!(matches!(bad.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(&dir.path().join("nope.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dangling_question_link_rejected() {
        let mut c = tiny_corpus(3);
        c.qa_pairs[0].question_id = "ghost".into();
        assert!(matches!(c.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn shipped_registry_and_roster_load() {
        let reg = default_registry().unwrap();
        assert_eq!(reg.len(), 87);
        let all = Roster::builtin(RosterSubset::All).unwrap();
        assert_eq!(all.0.len(), 15);
        assert_eq!(Roster::builtin(RosterSubset::Training).unwrap().0.len(), 8);
        assert_eq!(Roster::builtin(RosterSubset::Unseen).unwrap().0.len(), 7);
        // The table as published lists 115 (llm, language) cells.
        assert_eq!(all.value_ids().len(), 115);
    }

    #[test]
    fn value_id_parse_display() {
        let v: ValueId = "MaralGPT/Maral-7B@pes".parse().unwrap();
        assert_eq!(v, ValueId::new("MaralGPT/Maral-7B", "pes"));
        assert_eq!(v.to_string(), "MaralGPT/Maral-7B@pes");
        assert!("nolang".parse::<ValueId>().is_err());
        assert!("x@english".parse::<ValueId>().is_err());
    }

    #[test]
    fn roster_rejects_empty_language_list() {
        let r = Roster::new().with("m", &[]);
        assert!(matches!(r.validate(), Err(Error::Roster(_))));
    }
}
