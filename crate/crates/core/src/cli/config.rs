//! The run configuration file (TOML).
//!
//! Every section is optional; missing fields take their defaults. Relative
//! paths resolve against the output directory. Credentials never appear in
//! the file: a command client reads its key from `UNIVAR_<CLIENT>_KEY`
//! (client name upper-cased, other characters mapped to `_`) unless
//! `api_key_env` names another variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::clients::{
    CommandGenerator, CommandTranslator, IdentityTranslator, MarkerTranslator, ScriptedGenerator,
    TextGenerator, Translator,
};
use crate::corpus::{CorpusTag, Roster, RosterSubset};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evalharness::{EvalConfig, ProbeConfig, DEFAULT_K};
use crate::trainer::TrainConfig;
use crate::views::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    pub reports: PathBuf,
    /// Tab-separated value registry; the shipped one when absent.
    pub registry: Option<PathBuf>,
    /// One question id per line to drop from the built corpus.
    pub exclusions: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            checkpoint: "encoder.uvar".into(),
            store: "embeddings.uvem".into(),
            reports: "reports".into(),
            registry: None,
            exclusions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RosterSpec {
    /// `"training"`, `"unseen"` or `"all"` from the shipped table.
    Builtin(String),
    Inline(BTreeMap<String, Vec<String>>),
}

impl RosterSpec {
    pub fn resolve(&self) -> Result<Roster> {
        match self {
            RosterSpec::Builtin(name) => {
                let subset = match name.as_str() {
                    "training" => RosterSubset::Training,
                    "unseen" => RosterSubset::Unseen,
                    "all" => RosterSubset::All,
                    other => {
                        return Err(Error::Config(format!(
                            "roster must be training, unseen, all or a table; got {other:?}"
                        )))
                    }
                };
                Roster::builtin(subset)
            }
            RosterSpec::Inline(map) => {
                let roster = Roster(map.clone());
                roster.validate()?;
                Ok(roster)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    /// Registry value ids to generate for; all of them when empty.
    pub values: Vec<String>,
    pub questions_per_value: usize,
    pub paraphrases: usize,
    pub roster: RosterSpec,
    pub corpus_tag: CorpusTag,
    /// Generator (from `[clients.generators]`) that writes scenarios,
    /// questions and paraphrases.
    pub question_generator: String,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            values: Vec::new(),
            questions_per_value: 50,
            paraphrases: 4,
            roster: RosterSpec::Builtin("training".into()),
            corpus_tag: CorpusTag::Train,
            question_generator: "generator".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Deterministic offline stand-in.
    Scripted {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        chat_template: Option<String>,
    },
    /// Prompt on stdin, response on stdout.
    Command {
        argv: Vec<String>,
        #[serde(default)]
        concurrent: bool,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        chat_template: Option<String>,
    },
}

impl GeneratorSpec {
    pub fn chat_template(&self) -> Option<&str> {
        match self {
            GeneratorSpec::Scripted { chat_template, .. }
            | GeneratorSpec::Command { chat_template, .. } => chat_template.as_deref(),
        }
    }

    pub fn build(&self, name: &str, run_seed: u64) -> Result<Arc<dyn TextGenerator>> {
        Ok(match self {
            GeneratorSpec::Scripted { seed, .. } => {
                Arc::new(ScriptedGenerator::new(name, seed.unwrap_or(run_seed)))
            }
            GeneratorSpec::Command {
                argv,
                concurrent,
                api_key_env,
                ..
            } => {
                if argv.is_empty() {
                    return Err(Error::Config(format!("client {name}: empty argv")));
                }
                Arc::new(CommandGenerator {
                    name: name.to_string(),
                    argv: argv.clone(),
                    api_key: api_key(name, api_key_env.as_deref()),
                    concurrent: *concurrent,
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TranslatorSpec {
    Identity,
    /// Offline stand-in that tags text with its source language.
    Marker,
    /// `{SRC}` / `{TGT}` in argv become language codes; text on stdin.
    Command {
        #[serde(default = "default_translator_name")]
        name: String,
        argv: Vec<String>,
        #[serde(default)]
        concurrent: bool,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

fn default_translator_name() -> String {
    "translator".into()
}

impl TranslatorSpec {
    pub fn build(&self) -> Result<Arc<dyn Translator>> {
        Ok(match self {
            TranslatorSpec::Identity => Arc::new(IdentityTranslator),
            TranslatorSpec::Marker => Arc::new(MarkerTranslator),
            TranslatorSpec::Command {
                name,
                argv,
                concurrent,
                api_key_env,
            } => {
                if argv.is_empty() {
                    return Err(Error::Config(format!("translator {name}: empty argv")));
                }
                Arc::new(CommandTranslator {
                    name: name.clone(),
                    argv: argv.clone(),
                    api_key: api_key(name, api_key_env.as_deref()),
                    concurrent: *concurrent,
                })
            }
        })
    }
}

/// Environment variable holding a client's credential.
pub fn key_variable(client: &str) -> String {
    let upper: String = client
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("UNIVAR_{upper}_KEY")
}

fn api_key(client: &str, explicit: Option<&str>) -> Option<String> {
    let var = explicit.map_or_else(|| key_variable(client), str::to_string);
    std::env::var(var).ok()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsConfig {
    pub generators: BTreeMap<String, GeneratorSpec>,
    pub translator: Option<TranslatorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k: usize,
    pub query_fraction: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: DEFAULT_K,
            query_fraction: EvalConfig::default().query_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSettings {
    pub projector: String,
}

impl Default for MapSettings {
    fn default() -> Self {
        MapSettings {
            projector: "pca".into(),
        }
    }
}

/// Everything a run needs. Component seeds are derived from `seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub build: BuildConfig,
    pub clients: ClientsConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub probe: ProbeConfig,
    pub eval: EvalSettings,
    pub map: MapSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Propagates the master seed into every component.
    pub fn seed_components(&mut self) {
        self.sampler.seed = self.seed;
        self.train.seed = self.seed.wrapping_add(1);
        self.probe.seed = self.seed.wrapping_add(2);
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.eval.k,
            query_fraction: self.eval.query_fraction,
            seed: self.seed.wrapping_add(3),
            probe: self.probe.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.train.validate()?;
        self.encoder.validate()?;
        self.eval_config().validate()?;
        if self.map.projector != "pca" {
            return Err(Error::Config(format!(
                "unknown projector {:?} (built-in: pca)",
                self.map.projector
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Resolves `p` against `base` unless absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
