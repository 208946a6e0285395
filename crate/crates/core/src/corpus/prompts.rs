//! Generation prompt templates and response parsers.
//!
//! Templates live verbatim under `prompts/` in the crate root. Rendering only
//! fills the single `{...}` slot of each template; item counts written into a
//! template are part of its text, and the pipeline keeps the first `n` items
//! of a response.

use crate::error::{Error, Result};

/// Step 1: scenario list for a reference value.
pub const SCENARIOS: &str = include_str!("../../prompts/step1_scenarios.txt");
/// Step 2: turn a scenario into a should-or-should-not question.
pub const QUESTION: &str = include_str!("../../prompts/step2_question.txt");
/// Step 3: paraphrase a question.
pub const PARAPHRASE: &str = include_str!("../../prompts/step3_paraphrase.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    Scenarios,
    Question,
    Paraphrase,
}

impl Template {
    pub const ALL: [Template; 3] = [
        Template::Scenarios,
        Template::Question,
        Template::Paraphrase,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Template::Scenarios => SCENARIOS,
            Template::Question => QUESTION,
            Template::Paraphrase => PARAPHRASE,
        }
    }

    pub fn slot(self) -> &'static str {
        match self {
            Template::Scenarios => "{VALUE}",
            Template::Question => "{SITUATION}",
            Template::Paraphrase => "{QUESTION}",
        }
    }

    pub fn render(self, fill: &str) -> String {
        self.text().replacen(self.slot(), fill, 1)
    }

    /// Recovers the slot value if `prompt` was rendered from this template.
    pub fn extract(self, prompt: &str) -> Option<&str> {
        let (head, tail) = self.text().split_once(self.slot())?;
        let rest = prompt.strip_prefix(head)?;
        rest.strip_suffix(tail)
    }

    /// Which template, if any, produced `prompt`.
    pub fn classify(prompt: &str) -> Option<Template> {
        Template::ALL
            .into_iter()
            .find(|t| t.extract(prompt).is_some())
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::Scenarios => "scenarios",
            Template::Question => "question",
            Template::Paraphrase => "paraphrase",
        }
    }
}

/// Wraps a prompt in a model-specific chat template containing `{PROMPT}`.
/// Templates without the slot get the prompt appended.
pub fn apply_chat_template(template: Option<&str>, prompt: &str) -> String {
    match template {
        None => prompt.to_string(),
        Some(t) if t.contains("{PROMPT}") => t.replacen("{PROMPT}", prompt, 1),
        Some(t) => format!("{t}{prompt}"),
    }
}

/// Splits off a leading `N.`, `N)` or `N:` marker.
fn strip_number(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let digits = trimmed.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &trimmed[digits..];
    let rest = rest
        .strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .or_else(|| rest.strip_prefix(':'))?;
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some(rest.trim())
}

/// Parses a numbered list and returns its first `n` items.
///
/// Lines before the first numbered item are ignored; unnumbered lines after an
/// item continue it.
pub fn parse_numbered_list(response: &str, n: usize) -> Result<Vec<String>> {
    let mut items: Vec<String> = Vec::new();
    for line in response.lines() {
        if let Some(body) = strip_number(line) {
            items.push(body.to_string());
        } else if let Some(last) = items.last_mut() {
            let cont = line.trim();
            if !cont.is_empty() {
                if !last.is_empty() {
                    last.push(' ');
                }
                last.push_str(cont);
            }
        }
    }
    items.retain(|s| !s.is_empty());
    if items.len() < n {
        return Err(Error::Parse(format!(
            "expected {n} numbered items, found {}",
            items.len()
        )));
    }
    items.truncate(n);
    Ok(items)
}

/// Parses newline-separated items (optionally numbered or bulleted) and
/// returns the first `n`.
pub fn parse_lines(response: &str, n: usize) -> Result<Vec<String>> {
    let items: Vec<String> = response
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = strip_number(l).unwrap_or(l);
            l.trim_start_matches(['-', '*', '•']).trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect();
    if items.len() < n {
        return Err(Error::Parse(format!(
            "expected {n} newline-separated items, found {}",
            items.len()
        )));
    }
    Ok(items.into_iter().take(n).collect())
}

/// Cleans a single-question response: first non-empty line, unquoted.
pub fn parse_single(response: &str) -> Result<String> {
    let line = response
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::Parse("empty response".into()))?;
    let line = strip_number(line).unwrap_or(line);
    Ok(line.trim_matches('"').trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_match_reference_wording() {
        assert!(SCENARIOS.starts_with(
            "Create 50 scenarios highlighting the personal and regional variations in terms of `{VALUE}`"
        ));
        assert!(SCENARIOS.ends_with("return the scenario questions in a numbered list format."));
        assert_eq!(
            PARAPHRASE,
            "Write 4 different paraphrased questions separated by a newline from the following question: \"{QUESTION}\""
        );
        assert!(QUESTION.starts_with("Given a premise about \"{SITUATION}\", write a question"));
    }

    #[test]
    fn render_then_classify() {
        let p = Template::Scenarios.render("Individualism vs Collectivism");
        assert!(p.contains("`Individualism vs Collectivism`"));
        assert_eq!(Template::classify(&p), Some(Template::Scenarios));
        assert_eq!(
            Template::Scenarios.extract(&p),
            Some("Individualism vs Collectivism")
        );
        assert_eq!(Template::classify("What is love?"), None);
    }

    #[test]
    fn numbered_list_variants() {
        let r = "Here you go:\n1. First one\n2) Second\n   continued\n3: Third\n";
        assert_eq!(
            parse_numbered_list(r, 3).unwrap(),
            vec!["First one", "Second continued", "Third"]
        );
        assert_eq!(parse_numbered_list(r, 2).unwrap().len(), 2);
        assert!(parse_numbered_list(r, 4).is_err());
    }

    #[test]
    fn prose_is_parse_error() {
        let r = "I think there are many scenarios. For example, voting. Or not.";
        assert!(matches!(parse_numbered_list(r, 3), Err(Error::Parse(_))));
        // Other markers are not list items.
        assert!(parse_numbered_list("- a\n- b\n- c", 3).is_err());
        assert!(parse_numbered_list("1a b\n2b c", 1).is_err());
    }

    #[test]
    fn paraphrase_lines() {
        let r = "1. A?\n\n2. B?\n- C?\nD?";
        assert_eq!(parse_lines(r, 4).unwrap(), vec!["A?", "B?", "C?", "D?"]);
        assert!(parse_lines("A?\nB?", 4).is_err());
    }

    #[test]
    fn chat_template() {
        assert_eq!(
            apply_chat_template(Some("[INST] {PROMPT} [/INST]"), "hi"),
            "[INST] hi [/INST]"
        );
        assert_eq!(apply_chat_template(None, "hi"), "hi");
    }
}
