//! Pluggable text-generation and translation clients.
//!
//! Real deployments plug in any backend through [`TextGenerator`] and
//! [`Translator`]; [`CommandGenerator`] / [`CommandTranslator`] shell out to
//! an external program. The scripted clients are deterministic doubles used
//! for tests and dry runs.

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::prompts::{parse_single, Template};
use crate::error::{Error, Result};
use crate::hashing::fnv1a64;

pub trait TextGenerator: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, prompt: &str) -> Result<String>;

    /// Whether concurrent `generate` calls are allowed. Clients returning
    /// false are wrapped in a [`Serialized`] adapter by the pipeline.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

pub trait Translator: Send + Sync {
    fn name(&self) -> &str;

    fn supports(&self, _src: &str, _tgt: &str) -> bool {
        true
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String>;

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Routes every call through a lock so at most one is in flight.
pub struct Serialized<C: ?Sized> {
    gate: Mutex<()>,
    inner: Arc<C>,
}

impl<C: ?Sized> Serialized<C> {
    pub fn new(inner: Arc<C>) -> Self {
        Serialized {
            gate: Mutex::new(()),
            inner,
        }
    }
}

impl TextGenerator for Serialized<dyn TextGenerator> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        let _guard = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.generate(prompt)
    }
}

impl Translator for Serialized<dyn Translator> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn supports(&self, src: &str, tgt: &str) -> bool {
        self.inner.supports(src, tgt)
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String> {
        let _guard = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.translate(text, src, tgt)
    }
}

pub fn serialize_generator(client: Arc<dyn TextGenerator>) -> Arc<dyn TextGenerator> {
    if client.concurrent_safe() {
        client
    } else {
        Arc::new(Serialized::new(client))
    }
}

pub fn serialize_translator(client: Arc<dyn Translator>) -> Arc<dyn Translator> {
    if client.concurrent_safe() {
        client
    } else {
        Arc::new(Serialized::new(client))
    }
}

/// One recorded client request.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct LogEntry {
    pub client: String,
    pub template: Option<&'static str>,
    pub prompt: String,
    pub ok: bool,
}

/// Shared request log. Entries are exported in sorted order so the log is
/// independent of call scheduling.
#[derive(Debug, Clone, Default)]
pub struct RequestLog(Arc<Mutex<Vec<LogEntry>>>);

impl RequestLog {
    pub fn new() -> Self {
        RequestLog::default()
    }

    fn push(&self, entry: LogEntry) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push(entry);
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        let mut v = self.0.lock().unwrap_or_else(|p| p.into_inner()).clone();
        v.sort();
        v
    }

    /// Line-delimited JSON, one entry per line.
    pub fn to_jsonl(&self) -> String {
        self.entries()
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }
}

/// Records every prompt sent through the wrapped generator.
pub struct Logged {
    inner: Arc<dyn TextGenerator>,
    log: RequestLog,
}

impl Logged {
    pub fn wrap(inner: Arc<dyn TextGenerator>, log: &RequestLog) -> Arc<dyn TextGenerator> {
        Arc::new(Logged {
            inner,
            log: log.clone(),
        })
    }
}

impl TextGenerator for Logged {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        let out = self.inner.generate(prompt);
        self.log.push(LogEntry {
            client: self.inner.name().to_string(),
            template: Template::classify(prompt).map(Template::name),
            prompt: prompt.to_string(),
            ok: out.is_ok(),
        });
        out
    }

    fn concurrent_safe(&self) -> bool {
        self.inner.concurrent_safe()
    }
}

const ANSWER_VOCAB: &[&str] = &[
    "family",
    "duty",
    "freedom",
    "choice",
    "community",
    "respect",
    "tradition",
    "individual",
    "harmony",
    "honesty",
    "fairness",
    "loyalty",
    "success",
    "care",
    "rules",
    "balance",
    "safety",
    "autonomy",
    "elders",
    "progress",
    "faith",
    "privacy",
    "equality",
    "order",
];

/// Deterministic stand-in for an LLM. Recognizes the generation templates and
/// answers anything else with seeded, model-specific filler text.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    name: String,
    seed: u64,
    fail_when: Option<String>,
    concurrent: bool,
}

impl ScriptedGenerator {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        ScriptedGenerator {
            name: name.into(),
            seed,
            fail_when: None,
            concurrent: true,
        }
    }

    /// Fail every prompt containing `needle`.
    pub fn failing_when(mut self, needle: impl Into<String>) -> Self {
        self.fail_when = Some(needle.into());
        self
    }

    pub fn with_concurrency(mut self, concurrent: bool) -> Self {
        self.concurrent = concurrent;
        self
    }

    fn words(&self, prompt: &str, count: usize) -> Vec<&'static str> {
        let mut h = fnv1a64(
            self.seed ^ fnv1a64(0, self.name.as_bytes()),
            prompt.as_bytes(),
        );
        (0..count)
            .map(|_| {
                h = fnv1a64(h, b"next");
                ANSWER_VOCAB[(h % ANSWER_VOCAB.len() as u64) as usize]
            })
            .collect()
    }
}

impl TextGenerator for ScriptedGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        if let Some(needle) = &self.fail_when {
            if prompt.contains(needle.as_str()) {
                return Err(Error::client(
                    &self.name,
                    format!("scripted failure on {needle:?}"),
                ));
            }
        }
        match Template::classify(prompt) {
            Some(Template::Scenarios) => {
                let value = Template::Scenarios.extract(prompt).unwrap_or_default();
                let mut out = String::from("Sure, here are the scenarios:\n");
                for i in 1..=50 {
                    let w = self.words(&format!("{prompt}#{i}"), 2);
                    out.push_str(&format!(
                        "{i}. Scenario {i} on {value}: is it right to put {} before {}?\n",
                        w[0], w[1]
                    ));
                }
                Ok(out)
            }
            Some(Template::Question) => {
                let situation = Template::Question.extract(prompt).unwrap_or_default();
                Ok(format!("Should I act on this: {situation}"))
            }
            Some(Template::Paraphrase) => {
                let q = Template::Paraphrase.extract(prompt).unwrap_or_default();
                Ok((1..=4)
                    .map(|k| format!("Rephrasing {k}: {q}"))
                    .collect::<Vec<_>>()
                    .join("\n"))
            }
            None => {
                let w = self.words(prompt, 8);
                Ok(format!("As {} I would say: {}.", self.name, w.join(" ")))
            }
        }
    }

    fn concurrent_safe(&self) -> bool {
        self.concurrent
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _src: &str, _tgt: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// Tags text on the way out of English (`[zho] ...`) and strips the tag on
/// the way back, so round trips are lossless and visible in outputs.
#[derive(Debug, Clone, Default)]
pub struct MarkerTranslator;

impl Translator for MarkerTranslator {
    fn name(&self) -> &str {
        "marker"
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String> {
        if src == tgt {
            return Ok(text.to_string());
        }
        let tag = format!("[{src}] ");
        let base = text.strip_prefix(&tag).unwrap_or(text);
        if tgt == super::ENGLISH {
            Ok(base.to_string())
        } else {
            Ok(format!("[{tgt}] {base}"))
        }
    }
}

fn run_command(
    client: &str,
    argv: &[String],
    env: &[(String, String)],
    input: &str,
) -> Result<String> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| Error::client(client, "empty command"))?;
    let mut child = Command::new(program)
        .args(args)
        .envs(env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::client(client, format!("spawn {program}: {e}")))?;
    child
        .stdin
        .take()
        .expect("stdin is piped")
        .write_all(input.as_bytes())
        .map_err(|e| Error::client(client, format!("write stdin: {e}")))?;
    let out = child
        .wait_with_output()
        .map_err(|e| Error::client(client, e.to_string()))?;
    if !out.status.success() {
        return Err(Error::client(
            client,
            format!(
                "{program} exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ),
        ));
    }
    String::from_utf8(out.stdout).map_err(|e| Error::client(client, e.to_string()))
}

/// Sends the prompt on stdin of an external command and reads the response
/// from stdout. The API key, when configured, is exported to the child as
/// `UNIVAR_API_KEY`.
#[derive(Debug, Clone)]
pub struct CommandGenerator {
    pub name: String,
    pub argv: Vec<String>,
    pub api_key: Option<String>,
    pub concurrent: bool,
}

impl TextGenerator for CommandGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        let env: Vec<(String, String)> = self
            .api_key
            .iter()
            .map(|k| ("UNIVAR_API_KEY".to_string(), k.clone()))
            .collect();
        run_command(&self.name, &self.argv, &env, prompt)
    }

    fn concurrent_safe(&self) -> bool {
        self.concurrent
    }
}

/// External translation command; `{SRC}` / `{TGT}` in arguments are replaced
/// by the language codes and the text is passed on stdin.
#[derive(Debug, Clone)]
pub struct CommandTranslator {
    pub name: String,
    pub argv: Vec<String>,
    pub api_key: Option<String>,
    pub concurrent: bool,
}

impl Translator for CommandTranslator {
    fn name(&self) -> &str {
        &self.name
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String> {
        let argv: Vec<String> = self
            .argv
            .iter()
            .map(|a| a.replace("{SRC}", src).replace("{TGT}", tgt))
            .collect();
        let env: Vec<(String, String)> = self
            .api_key
            .iter()
            .map(|k| ("UNIVAR_API_KEY".to_string(), k.clone()))
            .collect();
        Ok(run_command(&self.name, &argv, &env, text)?
            .trim_end()
            .to_string())
    }

    fn concurrent_safe(&self) -> bool {
        self.concurrent
    }
}

/// Convenience for answering a single-question prompt.
pub fn generate_single(client: &dyn TextGenerator, prompt: &str) -> Result<String> {
    parse_single(&client.generate(prompt)?)
}
