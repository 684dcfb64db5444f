//! Structured knowledge representations produced by the knowledge
//! organization stage: a knowledge graph (entities plus relationship
//! triples), a numbered keypoint list, or a free-text summary.
//!
//! The graph text layout is:
//!
//! ```text
//! Entities:
//! - Paris (Attributes: [capital, city])
//! - France
//!
//! Relationships:
//! 1. Paris -> capital of -> France
//! ```
//!
//! Parsing is tolerant of model formatting noise: headers are matched
//! case-insensitively and may carry trailing text, the attribute clause may
//! omit its brackets, and unparseable lines become [`ParseWarning`]s rather
//! than errors. Serialization always emits the canonical layout above.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Errors raised while parsing a knowledge representation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("missing section header `{0}`")]
    MissingSection(&'static str),
    #[error("graph has neither entities nor relationships")]
    EmptyGraph,
    #[error("keypoint list is empty")]
    EmptyList,
    #[error("unknown knowledge format `{0}`")]
    UnknownFormat(String),
}

impl FormatError {
    pub fn name(&self) -> &'static str {
        match self {
            FormatError::MissingSection(_) => "MissingSection",
            FormatError::EmptyGraph => "EmptyGraph",
            FormatError::EmptyList => "EmptyList",
            FormatError::UnknownFormat(_) => "UnknownFormat",
        }
    }
}

/// A non-fatal problem found while parsing. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

/// A parsed value together with the warnings collected on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<ParseWarning>,
}

/// The intermediate representation format used by the knowledge
/// organization stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Graph,
    Keypoints,
    Summary,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Graph, Format::Keypoints, Format::Summary];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Graph => "graph",
            Format::Keypoints => "keypoints",
            Format::Summary => "summary",
        }
    }

    /// Noun used when adapting the graph-oriented refine prompt to this format.
    pub fn noun(self) -> &'static str {
        match self {
            Format::Graph => "knowledge graph",
            Format::Keypoints => "keypoints",
            Format::Summary => "summary",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "graph" | "kg" => Ok(Format::Graph),
            "keypoints" | "key-points" => Ok(Format::Keypoints),
            "summary" | "note" => Ok(Format::Summary),
            other => Err(FormatError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub attributes: Vec<String>,
}

impl Entity {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            attributes: Vec::new(),
        }
    }

    pub fn with_attributes<I, S>(mut self, attrs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attributes.extend(attrs.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relationship {
    pub source: String,
    pub label: String,
    pub target: String,
}

impl Relationship {
    pub fn new(
        source: impl Into<String>,
        label: impl Into<String>,
        target: impl Into<String>,
    ) -> Self {
        Self {
            source: source.into(),
            label: label.into(),
            target: target.into(),
        }
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} -> {}", self.source, self.label, self.target)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub entities: Vec<Entity>,
    pub relationships: Vec<Relationship>,
}

impl KnowledgeGraph {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relationships.is_empty()
    }

    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.name == name)
    }

    /// Adds an entity, merging it into an existing one with the same name.
    /// Attribute lists are concatenated with duplicates dropped.
    pub fn add_entity(&mut self, entity: Entity) {
        let idx = match self.entities.iter().position(|e| e.name == entity.name) {
            Some(idx) => idx,
            None => {
                self.entities.push(Entity::new(entity.name));
                self.entities.len() - 1
            }
        };
        let slot = &mut self.entities[idx];
        for attr in entity.attributes {
            if !slot.attributes.contains(&attr) {
                slot.attributes.push(attr);
            }
        }
    }

    /// Relationship endpoints that are not declared as entities.
    pub fn undeclared_endpoints(&self) -> Vec<&str> {
        let declared: HashSet<&str> = self.entities.iter().map(|e| e.name.as_str()).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for rel in &self.relationships {
            for end in [rel.source.as_str(), rel.target.as_str()] {
                if !declared.contains(end) && seen.insert(end) {
                    out.push(end);
                }
            }
        }
        out
    }

    /// Checks that the graph can be serialized and parsed back unchanged.
    pub fn validate(&self) -> Result<(), String> {
        let mut names = HashSet::new();
        for e in &self.entities {
            check_field(&e.name, "entity name")?;
            if e.name.to_ascii_lowercase().contains("(attributes:") {
                return Err(format!(
                    "entity name `{}` contains an attribute clause",
                    e.name
                ));
            }
            if !names.insert(e.name.as_str()) {
                return Err(format!("duplicate entity `{}`", e.name));
            }
            let mut attrs = HashSet::new();
            for a in &e.attributes {
                check_field(a, "attribute")?;
                if a.contains([',', '[', ']', '(', ')']) {
                    return Err(format!("attribute `{a}` contains a reserved character"));
                }
                if !attrs.insert(a.as_str()) {
                    return Err(format!("duplicate attribute `{a}` on `{}`", e.name));
                }
            }
        }
        for r in &self.relationships {
            for field in [&r.source, &r.label, &r.target] {
                check_field(field, "relationship field")?;
                if field.contains("->") {
                    return Err(format!("relationship field `{field}` contains `->`"));
                }
            }
        }
        Ok(())
    }
}

fn check_field(s: &str, what: &str) -> Result<(), String> {
    if s.is_empty() || s.trim() != s {
        return Err(format!(
            "{what} `{s}` is empty or has surrounding whitespace"
        ));
    }
    if s.contains('\n') || s.contains('\r') {
        return Err(format!("{what} `{s}` spans lines"));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointList {
    pub points: Vec<String>,
}

/// A knowledge representation in one of the three supported formats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", content = "value", rename_all = "lowercase")]
pub enum KnowledgeRepr {
    Graph(KnowledgeGraph),
    Keypoints(KeypointList),
    /// Stored verbatim.
    Summary(String),
}

impl KnowledgeRepr {
    pub fn format(&self) -> Format {
        match self {
            KnowledgeRepr::Graph(_) => Format::Graph,
            KnowledgeRepr::Keypoints(_) => Format::Keypoints,
            KnowledgeRepr::Summary(_) => Format::Summary,
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            KnowledgeRepr::Graph(g) => serialize_graph(g),
            KnowledgeRepr::Keypoints(k) => serialize_keypoints(k),
            KnowledgeRepr::Summary(s) => s.clone(),
        }
    }
}

/// Parses `text` under the grammar of `format`.
pub fn parse_repr(format: Format, text: &str) -> Result<Parsed<KnowledgeRepr>, FormatError> {
    match format {
        Format::Graph => parse_graph(text).map(|p| Parsed {
            value: KnowledgeRepr::Graph(p.value),
            warnings: p.warnings,
        }),
        Format::Keypoints => parse_keypoints(text).map(|p| Parsed {
            value: KnowledgeRepr::Keypoints(p.value),
            warnings: p.warnings,
        }),
        Format::Summary => Ok(Parsed {
            value: KnowledgeRepr::Summary(text.to_string()),
            warnings: Vec::new(),
        }),
    }
}

/// Normalizes a header candidate: strips markdown emphasis and heading
/// markers, lowercases, and removes inner spaces.
fn header_key(line: &str) -> String {
    line.trim()
        .trim_start_matches(['#', '*', '_'])
        .trim()
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_header(line: &str, name: &str) -> bool {
    header_key(line).starts_with(&format!("{name}:"))
}

/// Strips a leading bullet (`-`, `*`, `•`). Returns `None` if absent.
fn strip_bullet(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for b in ['-', '*', '•'] {
        if let Some(rest) = t.strip_prefix(b) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return Some(rest.trim());
            }
        }
    }
    None
}

/// Strips a leading `N.` or `N)` list number. Returns `None` if absent.
fn strip_number(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &t[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some(rest.trim())
}

fn parse_entity(body: &str) -> Result<Entity, String> {
    let lower = body.to_ascii_lowercase();
    let (name, attrs) = match lower.find("(attributes:") {
        Some(at) => {
            let clause = &body[at + "(attributes:".len()..];
            let clause = match clause.rfind(')') {
                Some(close) => &clause[..close],
                None => clause,
            };
            let clause = clause.trim();
            let clause = clause
                .strip_prefix('[')
                .map(|c| c.strip_suffix(']').unwrap_or(c))
                .unwrap_or(clause);
            let attrs: Vec<String> = clause
                .split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(str::to_string)
                .collect();
            (body[..at].trim(), attrs)
        }
        None => (body.trim(), Vec::new()),
    };
    if name.is_empty() {
        return Err("entity has an empty name".into());
    }
    Ok(Entity::new(name).with_attributes(attrs))
}

fn parse_relationship(body: &str) -> Result<Relationship, String> {
    let parts: Vec<&str> = body.split("->").map(str::trim).collect();
    match parts.as_slice() {
        [s, l, t] if !s.is_empty() && !l.is_empty() && !t.is_empty() => {
            Ok(Relationship::new(*s, *l, *t))
        }
        [_, _, _] => Err("relationship has an empty field".into()),
        _ => Err(format!(
            "expected `source -> label -> target`, found {} part(s)",
            parts.len()
        )),
    }
}

/// Parses model output in the graph layout.
///
/// Returns [`FormatError::MissingSection`] unless an `Entities:` header is
/// followed by a `Relationships:` header, and [`FormatError::EmptyGraph`]
/// when both sections are empty.
pub fn parse_graph(text: &str) -> Result<Parsed<KnowledgeGraph>, FormatError> {
    let lines: Vec<&str> = text.lines().collect();
    let ent_at = lines
        .iter()
        .position(|l| is_header(l, "entities"))
        .ok_or(FormatError::MissingSection("Entities:"))?;
    let rel_at = lines[ent_at + 1..]
        .iter()
        .position(|l| is_header(l, "relationships"))
        .map(|p| p + ent_at + 1)
        .ok_or(FormatError::MissingSection("Relationships:"))?;

    let mut warnings = Vec::new();
    let mut warn = |idx: usize, message: String| {
        warnings.push(ParseWarning {
            line: idx + 1,
            message,
        })
    };

    for (idx, line) in lines[..ent_at].iter().enumerate() {
        if !line.trim().is_empty() {
            warn(idx, "text before the Entities section".into());
        }
    }

    let mut graph = KnowledgeGraph::default();
    for (idx, line) in lines.iter().enumerate().take(rel_at).skip(ent_at + 1) {
        if line.trim().is_empty() {
            continue;
        }
        match strip_bullet(line).map(parse_entity) {
            Some(Ok(entity)) => graph.add_entity(entity),
            Some(Err(msg)) => warn(idx, msg),
            None => warn(idx, format!("not an entity line: `{}`", line.trim())),
        }
    }

    for (idx, line) in lines.iter().enumerate().skip(rel_at + 1) {
        if line.trim().is_empty() {
            continue;
        }
        let body = strip_number(line).or_else(|| strip_bullet(line));
        match body.map(parse_relationship) {
            Some(Ok(rel)) => graph.relationships.push(rel),
            Some(Err(msg)) => warn(idx, msg),
            None => warn(idx, format!("not a relationship line: `{}`", line.trim())),
        }
    }

    if graph.is_empty() {
        return Err(FormatError::EmptyGraph);
    }
    for name in graph.undeclared_endpoints() {
        warnings.push(ParseWarning {
            line: 0,
            message: format!("relationship endpoint `{name}` is not a declared entity"),
        });
    }
    Ok(Parsed {
        value: graph,
        warnings,
    })
}

/// Emits the canonical graph layout with no trailing newline.
pub fn serialize_graph(g: &KnowledgeGraph) -> String {
    let mut out = String::from("Entities:");
    for e in &g.entities {
        out.push_str("\n- ");
        out.push_str(&e.name);
        if !e.attributes.is_empty() {
            out.push_str(" (Attributes: [");
            out.push_str(&e.attributes.join(", "));
            out.push_str("])");
        }
    }
    out.push_str("\n\nRelationships:");
    for (i, r) in g.relationships.iter().enumerate() {
        out.push_str(&format!("\n{}. {r}", i + 1));
    }
    out
}

/// Parses a keypoint list. The `Key Points:` header is optional; numbered
/// and dashed lines both become points.
pub fn parse_keypoints(text: &str) -> Result<Parsed<KeypointList>, FormatError> {
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if points.is_empty() && is_header(line, "keypoints") {
            continue;
        }
        match strip_number(line).or_else(|| strip_bullet(line)) {
            Some(p) if !p.is_empty() => points.push(p.to_string()),
            Some(_) => warnings.push(ParseWarning {
                line: idx + 1,
                message: "empty keypoint".into(),
            }),
            None => warnings.push(ParseWarning {
                line: idx + 1,
                message: format!("not a keypoint line: `{}`", line.trim()),
            }),
        }
    }
    if points.is_empty() {
        return Err(FormatError::EmptyList);
    }
    Ok(Parsed {
        value: KeypointList { points },
        warnings,
    })
}

pub fn serialize_keypoints(k: &KeypointList) -> String {
    let mut out = String::from("Key Points:");
    for (i, p) in k.points.iter().enumerate() {
        out.push_str(&format!("\n{}. {p}", i + 1));
    }
    out
}

/// Kept / added / removed partition of one kind of graph element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SetDiff<T: Ord> {
    pub kept: BTreeSet<T>,
    pub added: BTreeSet<T>,
    pub removed: BTreeSet<T>,
}

impl<T: Ord + Clone> SetDiff<T> {
    fn between(a: BTreeSet<T>, b: BTreeSet<T>) -> Self {
        Self {
            kept: a.intersection(&b).cloned().collect(),
            removed: a.difference(&b).cloned().collect(),
            added: b.difference(&a).cloned().collect(),
        }
    }

    pub fn is_unchanged(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Element-wise comparison of two graphs, from `a` to `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphDiff {
    pub entities: SetDiff<String>,
    /// `(entity, attribute)` pairs.
    pub attributes: SetDiff<(String, String)>,
    pub relationships: SetDiff<Relationship>,
}

impl GraphDiff {
    pub fn is_unchanged(&self) -> bool {
        self.entities.is_unchanged()
            && self.attributes.is_unchanged()
            && self.relationships.is_unchanged()
    }
}

impl fmt::Display for GraphDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entities.removed {
            writeln!(f, "- entity {e}")?;
        }
        for e in &self.entities.added {
            writeln!(f, "+ entity {e}")?;
        }
        for (e, a) in &self.attributes.removed {
            writeln!(f, "- attribute {e}: {a}")?;
        }
        for (e, a) in &self.attributes.added {
            writeln!(f, "+ attribute {e}: {a}")?;
        }
        for r in &self.relationships.removed {
            writeln!(f, "- relationship {r}")?;
        }
        for r in &self.relationships.added {
            writeln!(f, "+ relationship {r}")?;
        }
        Ok(())
    }
}

pub fn graph_diff_summary(a: &KnowledgeGraph, b: &KnowledgeGraph) -> GraphDiff {
    let names = |g: &KnowledgeGraph| g.entities.iter().map(|e| e.name.clone()).collect();
    let attrs = |g: &KnowledgeGraph| {
        g.entities
            .iter()
            .flat_map(|e| e.attributes.iter().map(|a| (e.name.clone(), a.clone())))
            .collect()
    };
    let rels = |g: &KnowledgeGraph| g.relationships.iter().cloned().collect();
    GraphDiff {
        entities: SetDiff::between(names(a), names(b)),
        attributes: SetDiff::between(attrs(a), attrs(b)),
        relationships: SetDiff::between(rels(a), rels(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_entity_and_relationship() {
        let text = "Entities:\n- Paris (Attributes: [capital, city])\n\nRelationships:\n1. Paris -> capital of -> France";
        let g = parse_graph(text).unwrap().value;
        assert_eq!(
            g,
            KnowledgeGraph {
                entities: vec![Entity::new("Paris").with_attributes(["capital", "city"])],
                relationships: vec![Relationship::new("Paris", "capital of", "France")],
            }
        );
    }

    #[test]
    fn empty_sections_are_an_error() {
        assert_eq!(
            parse_graph("Entities:\n\nRelationships:\n"),
            Err(FormatError::EmptyGraph)
        );
    }

    #[test]
    fn duplicate_entities_merge() {
        let text = "Entities:\n- A\n- A (Attributes: [x])\nRelationships:\n1. A -> r -> B";
        let g = parse_graph(text).unwrap().value;
        assert_eq!(g.entities, vec![Entity::new("A").with_attributes(["x"])]);
        assert_eq!(g.relationships, vec![Relationship::new("A", "r", "B")]);
    }

    #[test]
    fn merge_deduplicates_attributes() {
        let text =
            "Entities:\n- A (Attributes: [x, y])\n- A (Attributes: [y, z])\nRelationships:\n";
        let g = parse_graph(text).unwrap().value;
        assert_eq!(g.entities[0].attributes, ["x", "y", "z"]);
    }

    #[test]
    fn missing_sections() {
        assert_eq!(
            parse_graph("Relationships:\n1. A -> r -> B").unwrap_err(),
            FormatError::MissingSection("Entities:")
        );
        assert_eq!(
            parse_graph("Entities:\n- A").unwrap_err(),
            FormatError::MissingSection("Relationships:")
        );
        // wrong order
        assert_eq!(
            parse_graph("Relationships:\n1. A -> r -> B\nEntities:\n- A").unwrap_err(),
            FormatError::MissingSection("Relationships:")
        );
    }

    #[test]
    fn headers_are_noise_tolerant() {
        let text = "**ENTITIES:** (relevant)\n- A\n## relationships: \n1) A -> r -> B";
        let g = parse_graph(text).unwrap().value;
        assert_eq!(g.entities.len(), 1);
        assert_eq!(g.relationships.len(), 1);
    }

    #[test]
    fn unbracketed_attributes_accepted() {
        let text = "Entities:\n- A (Attributes: x, y)\nRelationships:\n";
        let g = parse_graph(text).unwrap().value;
        assert_eq!(g.entities[0].attributes, ["x", "y"]);
        assert_eq!(
            serialize_graph(&g),
            "Entities:\n- A (Attributes: [x, y])\n\nRelationships:"
        );
    }

    #[test]
    fn bad_lines_become_warnings() {
        let text =
            "Preamble\nEntities:\n- A\nnot a bullet\nRelationships:\n1. A -> B\n2. A -> r -> C";
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.value.relationships.len(), 1);
        let lines: Vec<usize> = parsed.warnings.iter().map(|w| w.line).collect();
        // preamble, stray line, two-part relationship, undeclared C
        assert_eq!(lines, [1, 4, 6, 0]);
    }

    #[test]
    fn serialize_layout() {
        let g = KnowledgeGraph {
            entities: vec![Entity::new("A")],
            relationships: vec![Relationship::new("A", "r", "B")],
        };
        assert_eq!(
            serialize_graph(&g),
            "Entities:\n- A\n\nRelationships:\n1. A -> r -> B"
        );
    }

    #[test]
    fn keypoints_grammar() {
        let k = parse_keypoints("Key Points:\n1. X born 1901\n2. Y died 1967").unwrap();
        assert_eq!(k.value.points, ["X born 1901", "Y died 1967"]);
        let k = parse_keypoints("- only one").unwrap();
        assert_eq!(k.value.points, ["only one"]);
        assert_eq!(parse_keypoints(""), Err(FormatError::EmptyList));
        assert_eq!(
            parse_keypoints("Key Points:\n"),
            Err(FormatError::EmptyList)
        );
        let k = parse_keypoints("KeyPoints:\n1. a\n- b").unwrap();
        assert_eq!(serialize_keypoints(&k.value), "Key Points:\n1. a\n2. b");
    }

    #[test]
    fn summary_is_verbatim() {
        let text = "  Entities: not parsed\n";
        let p = parse_repr(Format::Summary, text).unwrap();
        assert_eq!(p.value, KnowledgeRepr::Summary(text.to_string()));
    }

    #[test]
    fn diff_cases() {
        let a = parse_graph("Entities:\n- A (Attributes: [x])\nRelationships:\n1. A -> r -> B")
            .unwrap()
            .value;
        assert!(graph_diff_summary(&a, &a).is_unchanged());

        let mut b = a.clone();
        b.relationships.push(Relationship::new("A", "s", "C"));
        let d = graph_diff_summary(&a, &b);
        assert_eq!(
            d.relationships.added.iter().collect::<Vec<_>>(),
            [&Relationship::new("A", "s", "C")]
        );
        assert!(d.relationships.removed.is_empty());
        assert!(d.entities.is_unchanged());

        let c = parse_graph("Entities:\n- Z\nRelationships:\n1. Z -> q -> Y")
            .unwrap()
            .value;
        let d = graph_diff_summary(&a, &c);
        assert!(d.entities.kept.is_empty() && d.relationships.kept.is_empty());
        assert_eq!(d.entities.removed.len(), 1);
        assert_eq!(d.entities.added.len(), 1);
        assert_eq!(d.attributes.removed.len(), 1);
        assert_eq!(d.relationships.added.len(), 1);
    }

    fn field() -> impl Strategy<Value = String> {
        "[A-Za-z0-9][A-Za-z0-9 .'&:-]{0,12}[A-Za-z0-9]"
            .prop_filter("no arrows", |s| !s.contains("->"))
    }

    fn graph() -> impl Strategy<Value = KnowledgeGraph> {
        let entity = (field(), prop::collection::vec(field(), 0..4));
        (
            prop::collection::vec(entity, 0..6),
            prop::collection::vec((field(), field(), field()), 0..6),
        )
            .prop_map(|(ents, rels)| {
                let mut g = KnowledgeGraph::default();
                for (name, attrs) in ents {
                    g.add_entity(Entity::new(name).with_attributes(attrs));
                }
                g.relationships = rels
                    .into_iter()
                    .map(|(s, l, t)| Relationship::new(s, l, t))
                    .collect();
                g
            })
            .prop_filter("non-empty", |g| !g.is_empty())
    }

    proptest! {
        #[test]
        fn graph_round_trip(g in graph()) {
            prop_assert!(g.validate().is_ok());
            let text = serialize_graph(&g);
            let back = parse_graph(&text).unwrap().value;
            prop_assert_eq!(back, g);
        }

        #[test]
        fn parser_is_total(text in "(?s).{0,200}") {
            match parse_graph(&text) {
                Ok(_) | Err(FormatError::MissingSection(_)) | Err(FormatError::EmptyGraph) => {}
                Err(e) => prop_assert!(false, "unexpected error {e:?}"),
            }
        }

        #[test]
        fn parser_is_total_on_structured_noise(
            lines in prop::collection::vec(
                prop_oneof![
                    Just("Entities:".to_string()),
                    Just("Relationships:".to_string()),
                    "- [a-z ]{0,8}( \\(Attributes: [a-z, \\[\\]]{0,10}\\)?)?",
                    "[0-9]{1,2}[.)] [a-z ]{0,5}(-> ?[a-z ]{0,5}){0,4}",
                    ".{0,20}",
                ],
                0..12,
            )
        ) {
            let text = lines.join("\n");
            if let Ok(p) = parse_graph(&text) {
                // second normalization pass is a fixed point
                let once = serialize_graph(&p.value);
                let twice = serialize_graph(&parse_graph(&once).unwrap().value);
                prop_assert_eq!(once, twice);
            }
        }
    }
}
