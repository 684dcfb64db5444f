//! Prompt templates.
//!
//! Templates ship as TOML data files under `prompts/` and are compiled in;
//! [`PromptSet::load_dir`] overrides any of them from a directory. A
//! template placeholder is `{name}` where `name` is an identifier; every
//! placeholder must be bound at render time.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::backend::ChatMessage;
use crate::corpus::RetrievedDoc;
use crate::knowledge::Format;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template placeholder `{{{0}}}` is not bound")]
    UnboundPlaceholder(String),
    #[error("prompt file {file}: {message}")]
    Invalid { file: String, message: String },
}

impl PromptError {
    pub fn name(&self) -> &'static str {
        match self {
            PromptError::UnboundPlaceholder(_) => "UnboundPlaceholder",
            PromptError::Invalid { .. } => "InvalidPromptFile",
        }
    }
}

const GRAPH: &str = include_str!("../prompts/graph.toml");
const KEYPOINTS: &str = include_str!("../prompts/keypoints.toml");
const SUMMARY: &str = include_str!("../prompts/summary.toml");
const VANILLA: &str = include_str!("../prompts/vanilla.toml");
const CONSTRUCTION: &str = include_str!("../prompts/construction.toml");

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(is_ident_start) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Substitutes `{name}` placeholders in one pass, so substituted values are
/// never re-scanned. Braces that do not enclose an identifier are literal.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnboundPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names referenced by a template.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                out.push(after[..close].to_string());
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Formats documents as `Doc {i}(Title: {title}) {text}` lines, 1-indexed.
pub fn render_docs(docs: &[RetrievedDoc]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("Doc {}(Title: {}) {}", i + 1, d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_golden_answers(golds: &[String]) -> String {
    golds.join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

impl PromptPair {
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<Vec<ChatMessage>, PromptError> {
        Ok(vec![
            ChatMessage::system(render(&self.system, vars)?),
            ChatMessage::user(render(&self.user, vars)?),
        ])
    }

    fn adapt(&self, noun: &str) -> Self {
        let title: String = noun
            .split(' ')
            .map(|w| {
                let mut c = w.chars();
                c.next()
                    .map(|f| f.to_uppercase().chain(c).collect::<String>())
                    .unwrap_or_default()
            })
            .collect::<Vec<_>>()
            .join(" ");
        let swap = |s: &str| {
            s.replace("knowledge graph", noun)
                .replace("Knowledge Graph", &title)
        };
        Self {
            system: swap(&self.system),
            user: swap(&self.user),
        }
    }
}

/// Prompts for the three pipeline stages of one representation format.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct KaPrompts {
    pub knowledge: PromptPair,
    pub cot: PromptPair,
    pub generation: PromptPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct VanillaFile {
    answer: PromptPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ConstructionPrompts {
    pub adequacy: PromptPair,
    /// Graph-format refine prompt; other formats derive from it.
    pub refine: PromptPair,
}

impl ConstructionPrompts {
    /// Refine prompt with "knowledge graph" replaced by the format's noun.
    pub fn refine_for(&self, format: Format) -> PromptPair {
        match format {
            Format::Graph => self.refine.clone(),
            other => self.refine.adapt(other.noun()),
        }
    }
}

/// Name of the placeholder that carries the stage-1 output into the
/// reasoning prompt.
pub fn repr_slot(format: Format) -> &'static str {
    match format {
        Format::Graph => "y_KG",
        Format::Keypoints => "y_Key",
        Format::Summary => "y_Note",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub graph: KaPrompts,
    pub keypoints: KaPrompts,
    pub summary: KaPrompts,
    pub vanilla: PromptPair,
    pub construction: ConstructionPrompts,
}

fn parse_toml<T: for<'de> Deserialize<'de>>(file: &str, text: &str) -> Result<T, PromptError> {
    toml::from_str(text).map_err(|e| PromptError::Invalid {
        file: file.to_string(),
        message: e.to_string(),
    })
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::from_sources(&HashMap::new()).expect("built-in prompts are valid")
    }
}

impl PromptSet {
    fn from_sources(overrides: &HashMap<&str, String>) -> Result<Self, PromptError> {
        let src = |name: &'static str, builtin: &'static str| -> (&'static str, String) {
            (
                name,
                overrides
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| builtin.to_string()),
            )
        };
        let (f, t) = src("graph.toml", GRAPH);
        let graph = parse_toml(f, &t)?;
        let (f, t) = src("keypoints.toml", KEYPOINTS);
        let keypoints = parse_toml(f, &t)?;
        let (f, t) = src("summary.toml", SUMMARY);
        let summary = parse_toml(f, &t)?;
        let (f, t) = src("vanilla.toml", VANILLA);
        let vanilla: VanillaFile = parse_toml(f, &t)?;
        let (f, t) = src("construction.toml", CONSTRUCTION);
        let construction = parse_toml(f, &t)?;
        Ok(Self {
            graph,
            keypoints,
            summary,
            vanilla: vanilla.answer,
            construction,
        })
    }

    /// Loads prompt files from `dir`, falling back to the built-in copy of
    /// any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut overrides = HashMap::new();
        for name in [
            "graph.toml",
            "keypoints.toml",
            "summary.toml",
            "vanilla.toml",
            "construction.toml",
        ] {
            let path = dir.join(name);
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Invalid {
                    file: path.display().to_string(),
                    message: e.to_string(),
                })?;
                overrides.insert(name, text);
            }
        }
        Self::from_sources(&overrides)
    }

    pub fn ka(&self, format: Format) -> &KaPrompts {
        match format {
            Format::Graph => &self.graph,
            Format::Keypoints => &self.keypoints,
            Format::Summary => &self.summary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(title: &str, text: &str) -> RetrievedDoc {
        RetrievedDoc {
            id: title.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    #[test]
    fn docs_layout() {
        assert_eq!(render_docs(&[]), "");
        assert_eq!(render_docs(&[doc("T", "body")]), "Doc 1(Title: T) body");
        let five: Vec<_> = (1..=5)
            .map(|i| doc(&format!("T{i}"), &format!("b{i}")))
            .collect();
        let rendered = render_docs(&five);
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "Doc 5(Title: T5) b5");
    }

    #[test]
    fn render_binds_and_rejects() {
        assert_eq!(
            render("Q: {question}!", &[("question", "why")]).unwrap(),
            "Q: why!"
        );
        assert!(matches!(
            render("{missing}", &[]),
            Err(PromptError::UnboundPlaceholder(n)) if n == "missing"
        ));
        // non-identifier braces are literal, values are not re-scanned
        assert_eq!(render("{ x } {a}", &[("a", "{a}")]).unwrap(), "{ x } {a}");
    }

    #[test]
    fn builtin_prompts_reference_expected_slots() {
        let p = PromptSet::default();
        for f in Format::ALL {
            let ka = p.ka(f);
            assert_eq!(placeholders(&ka.knowledge.user), ["question", "reference"]);
            assert_eq!(placeholders(&ka.cot.user), ["question", repr_slot(f)]);
            assert_eq!(placeholders(&ka.generation.user), ["question", "y_CoT"]);
            for pair in [&ka.knowledge, &ka.cot, &ka.generation] {
                assert!(placeholders(&pair.system).is_empty());
            }
        }
        assert_eq!(placeholders(&p.vanilla.system), ["reference"]);
        assert_eq!(
            placeholders(&p.construction.refine.user),
            ["question", "reference", "y_KG_neg", "golden_answers"]
        );
    }

    #[test]
    fn graph_prompt_text() {
        let p = PromptSet::default();
        assert!(p.graph.knowledge.system.starts_with(
            "You are a helpful AI assistant that are good at extracting crucial information"
        ));
        assert!(p
            .graph
            .knowledge
            .system
            .contains("Entities:\n- [Entity 1] (Attributes: [Attribute 1, Attribute 2, ...])\n"));
        assert_eq!(
            p.graph.knowledge.user,
            "Question: {question}\nDocuments: {reference}\nKnowledge Graph:"
        );
        assert_eq!(
            p.keypoints.knowledge.user.lines().last(),
            Some("KeyPoints:")
        );
        assert_eq!(
            p.summary.cot.user,
            "Question: {question}\nNote: {y_Note}\nReasoning Steps:"
        );
    }

    #[test]
    fn refine_adapts_to_format() {
        let p = PromptSet::default();
        let kp = p.construction.refine_for(Format::Keypoints);
        assert!(kp.user.contains("Flawed Keypoints: {y_KG_neg}"));
        assert!(kp.user.ends_with("Refined Keypoints:"));
        assert!(!kp.system.contains("knowledge graph"));
        assert_eq!(
            p.construction.refine_for(Format::Graph),
            p.construction.refine
        );
    }

    #[test]
    fn load_dir_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("vanilla.toml"),
            "[answer]\nsystem = 'S {reference}'\nuser = 'U {question}'\n",
        )
        .unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(p.vanilla.user, "U {question}");
        assert_eq!(p.graph, PromptSet::default().graph);
        std::fs::write(dir.path().join("graph.toml"), "nonsense = 1").unwrap();
        assert!(PromptSet::load_dir(dir.path()).is_err());
    }
}
