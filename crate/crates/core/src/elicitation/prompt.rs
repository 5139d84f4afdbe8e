use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dimension, LikertScale, Stimulus};

use super::ElicitError;

/// Where the study instructions go in the chat transcript.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionRole {
    /// One user message carrying instructions, directive and item.
    #[default]
    User,
    /// Instructions and directive as a system message, the item as the user turn.
    System,
}

pub const DEFAULT_RATING_CONSTRAINT: &str =
    "Answer only with the rating value, a whole number from {min} to {max}, without any other text.";

/// Prompt rendering options shared by every item of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub role: InstructionRole,
    /// `{min}` and `{max}` are replaced by the scale bounds.
    pub rating_constraint: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            role: InstructionRole::User,
            rating_constraint: DEFAULT_RATING_CONSTRAINT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub instructions: String,
    pub rating_constraint: String,
    pub item_text: String,
    pub scale: LikertScale,
    pub role: InstructionRole,
}

impl PromptSpec {
    fn scale_line(&self) -> String {
        format!(
            "Rate the following expression on a scale from {} to {}.",
            self.scale.min_point(),
            self.scale.max_point()
        )
    }

    fn constraint(&self) -> String {
        self.rating_constraint
            .replace("{min}", &self.scale.min_point().to_string())
            .replace("{max}", &self.scale.max_point().to_string())
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        let item = format!("Expression: \"{}\"", self.item_text);
        match self.role {
            InstructionRole::User => vec![ChatMessage {
                role: "user".into(),
                content: format!(
                    "{}\n\n{}\n{}\n\n{}",
                    self.instructions,
                    self.scale_line(),
                    item,
                    self.constraint()
                ),
            }],
            InstructionRole::System => vec![
                ChatMessage {
                    role: "system".into(),
                    content: format!("{}\n\n{}\n{}", self.instructions, self.scale_line(), self.constraint()),
                },
                ChatMessage {
                    role: "user".into(),
                    content: item,
                },
            ],
        }
    }

    /// Full rendered text, messages joined in order.
    pub fn rendered(&self) -> String {
        self.messages()
            .iter()
            .map(|m| format!("[{}]\n{}", m.role, m.content))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// SHA-256 over the rendered message list.
    pub fn prompt_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.messages()).expect("messages serialize");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub fn build_prompt(
    instructions: &str,
    item: &Stimulus,
    dimension: Dimension,
    scale: LikertScale,
    template: &PromptTemplate,
) -> Result<PromptSpec, ElicitError> {
    let instructions = instructions.trim();
    if instructions.is_empty() {
        return Err(ElicitError::Prompt(format!(
            "empty instructions for {} ({dimension})",
            item.item_ref()
        )));
    }
    if item.text.trim().is_empty() {
        return Err(ElicitError::Prompt(format!("{} has no text", item.item_ref())));
    }
    match item.norms.get(&dimension) {
        Some(norm) if norm.scale == scale => {}
        Some(norm) => {
            return Err(ElicitError::Prompt(format!(
                "{} is declared on the {} scale for {dimension}, prompt asked for {scale}",
                item.item_ref(),
                norm.scale
            )))
        }
        None => {
            return Err(ElicitError::Prompt(format!(
                "{} is not rated for {dimension}",
                item.item_ref()
            )))
        }
    }
    Ok(PromptSpec {
        instructions: instructions.to_string(),
        rating_constraint: template.rating_constraint.clone(),
        item_text: item.text.clone(),
        scale,
        role: template.role,
    })
}

/// Word sequences that signal experiment logistics rather than the rating
/// task itself (English and Italian).
pub const DEFAULT_LINT_PATTERNS: &[&str] = &[
    "press",
    "key",
    "keyboard",
    "button",
    "click",
    "spacebar",
    "space bar",
    "next screen",
    "next page",
    "to continue",
    "premi",
    "premere",
    "tasto",
    "clicca",
    "barra spaziatrice",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintWarning {
    pub pattern: String,
    pub sentence: String,
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Flag sentences of `instructions` that mention a practical-detail pattern.
/// Matching is on whole lower-cased words, so "press" does not hit "impression".
pub fn lint_instructions(instructions: &str, patterns: &[&str]) -> Vec<LintWarning> {
    let mut out = Vec::new();
    for sentence in instructions.split_inclusive(['.', '!', '?', '\n']) {
        let sentence = sentence.trim();
        if sentence.is_empty() {
            continue;
        }
        let toks = words(sentence);
        for pat in patterns {
            let pw = words(pat);
            if pw.is_empty() {
                continue;
            }
            if toks.windows(pw.len()).any(|w| w == pw.as_slice()) {
                out.push(LintWarning {
                    pattern: pat.to_string(),
                    sentence: sentence.to_string(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DimensionNorm, ItemClass, Language};
    use std::collections::BTreeMap;

    fn actors() -> Stimulus {
        Stimulus {
            study_id: "figurative_archive".into(),
            item_id: "42".into(),
            text: "Actors are masks".into(),
            language: Language::Italian,
            item_class: ItemClass::Metaphor,
            subset: None,
            norms: BTreeMap::from([(
                Dimension::Familiarity,
                DimensionNorm {
                    scale: LikertScale::SEVEN,
                    mean: Some(3.1),
                    n_raters: Some(20),
                },
            )]),
        }
    }

    #[test]
    fn prompt_carries_item_bounds_and_directive() {
        let p = build_prompt(
            Dimension::Familiarity.definition(),
            &actors(),
            Dimension::Familiarity,
            LikertScale::SEVEN,
            &PromptTemplate::default(),
        )
        .unwrap();
        let text = p.rendered();
        assert!(text.contains("Actors are masks"));
        assert!(text.contains("from 1 to 7"));
        assert!(text.contains("Answer only with the rating value"));
        assert!(text.contains("Frequency of experience of the expression"));
        assert_eq!(p.messages().len(), 1);
    }

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        let t = PromptTemplate::default();
        let a = build_prompt("Rate it.", &actors(), Dimension::Familiarity, LikertScale::SEVEN, &t).unwrap();
        let b = build_prompt("Rate it.", &actors(), Dimension::Familiarity, LikertScale::SEVEN, &t).unwrap();
        assert_eq!(a.prompt_hash(), b.prompt_hash());
        let c = build_prompt("Rate it!", &actors(), Dimension::Familiarity, LikertScale::SEVEN, &t).unwrap();
        assert_ne!(a.prompt_hash(), c.prompt_hash());
        let sys = PromptTemplate {
            role: InstructionRole::System,
            ..PromptTemplate::default()
        };
        let d = build_prompt("Rate it.", &actors(), Dimension::Familiarity, LikertScale::SEVEN, &sys).unwrap();
        assert_ne!(a.prompt_hash(), d.prompt_hash());
        assert_eq!(d.messages()[0].role, "system");
        assert_eq!(d.messages()[1].content, "Expression: \"Actors are masks\"");
    }

    #[test]
    fn empty_instructions_and_scale_mismatch_rejected() {
        let t = PromptTemplate::default();
        assert!(build_prompt("  ", &actors(), Dimension::Familiarity, LikertScale::SEVEN, &t).is_err());
        assert!(build_prompt("x", &actors(), Dimension::Familiarity, LikertScale::FIVE, &t).is_err());
        assert!(build_prompt("x", &actors(), Dimension::Imageability, LikertScale::SEVEN, &t).is_err());
    }

    #[test]
    fn lint_flags_practical_details() {
        let text = "Read each sentence carefully. Rate how familiar it is. \
                    When you are ready, press the key to continue.";
        let warnings = lint_instructions(text, DEFAULT_LINT_PATTERNS);
        let pats: Vec<&str> = warnings.iter().map(|w| w.pattern.as_str()).collect();
        assert!(pats.contains(&"press"));
        assert!(pats.contains(&"key"));
        assert!(warnings.iter().all(|w| w.sentence.starts_with("When you are ready")));
        assert!(lint_instructions("The impression of a monkey is pressing.", DEFAULT_LINT_PATTERNS).is_empty());
        assert!(!lint_instructions("Premi il tasto per continuare.", DEFAULT_LINT_PATTERNS).is_empty());
    }
}
