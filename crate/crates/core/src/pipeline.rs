//! The single-call RAG baseline and the three-stage knowledge-aware
//! pipeline: knowledge organization over the documents, reasoning over the
//! organized knowledge, then answer generation from the reasoning alone.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendRole, Backends, GenerationRequest, Stage};
use crate::corpus::RetrievedDoc;
use crate::knowledge::{parse_repr, Format, FormatError, ParseWarning};
use crate::prompts::{render_docs, repr_slot, PromptError, PromptSet};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage} stage: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("knowledge output failed strict parsing: {0}")]
    StrictParseFailure(FormatError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl PipelineError {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineError::Backend { source, .. } => source.name(),
            PipelineError::StrictParseFailure(_) => "StrictParseFailure",
            PipelineError::Prompt(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub role: BackendRole,
    pub request: GenerationRequest,
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Vanilla,
    Ka,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub pipeline: PipelineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    pub question: String,
    pub rendered_docs: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_repr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_cot: Option<String>,
    pub y_gen: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_warnings: Vec<ParseWarning>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    pub stages: Vec<StageRecord>,
}

impl PipelineTrace {
    fn new(pipeline: PipelineKind, format: Option<Format>, question: &str, docs: &str) -> Self {
        Self {
            pipeline,
            format,
            question: question.to_string(),
            rendered_docs: docs.to_string(),
            y_repr: None,
            y_cot: None,
            y_gen: String::new(),
            parse_warnings: Vec::new(),
            parse_error: None,
            stages: Vec::new(),
        }
    }

    pub fn answer(&self) -> &str {
        &self.y_gen
    }

    pub fn request(&self, stage: Stage) -> Option<&GenerationRequest> {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .map(|s| &s.request)
    }
}

/// A failed run together with the partial trace, which includes the
/// request that failed.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub trace: Box<PipelineTrace>,
}

/// Issues one completion and records it in `trace`.
pub(crate) fn call(
    backends: &Backends,
    role: BackendRole,
    req: GenerationRequest,
    records: &mut Vec<StageRecord>,
) -> Result<String, PipelineError> {
    let stage = req.stage;
    match backends.complete(role, &req) {
        Ok(text) => {
            records.push(StageRecord {
                stage,
                role,
                request: req,
                response: Some(text.clone()),
                error: None,
            });
            Ok(text)
        }
        Err(source) => {
            records.push(StageRecord {
                stage,
                role,
                request: req,
                response: None,
                error: Some(source.to_string()),
            });
            Err(PipelineError::Backend { stage, source })
        }
    }
}

pub struct Pipelines<'a> {
    pub backends: &'a Backends,
    pub prompts: &'a PromptSet,
}

impl<'a> Pipelines<'a> {
    pub fn new(backends: &'a Backends, prompts: &'a PromptSet) -> Self {
        Self { backends, prompts }
    }

    /// One generator call over the question and rendered documents.
    pub fn run_vanilla(
        &self,
        question: &str,
        docs: &[RetrievedDoc],
    ) -> Result<PipelineTrace, PipelineFailure> {
        let reference = render_docs(docs);
        let mut trace = PipelineTrace::new(PipelineKind::Vanilla, None, question, &reference);
        let result = (|| {
            let messages = self
                .prompts
                .vanilla
                .render(&[("question", question), ("reference", &reference)])?;
            let req = self
                .backends
                .request(BackendRole::Generator, Stage::Vanilla, messages);
            call(
                self.backends,
                BackendRole::Generator,
                req,
                &mut trace.stages,
            )
        })();
        match result {
            Ok(answer) => {
                trace.y_gen = answer;
                Ok(trace)
            }
            Err(error) => Err(PipelineFailure {
                error,
                trace: Box::new(trace),
            }),
        }
    }

    /// Knowledge organization, reasoning, and generation, in that order.
    ///
    /// For graph and keypoint formats the stage-1 output is parsed and its
    /// warnings recorded. A missing section only fails the run when
    /// `strict` is set.
    pub fn run_ka(
        &self,
        question: &str,
        docs: &[RetrievedDoc],
        format: Format,
        strict: bool,
    ) -> Result<PipelineTrace, PipelineFailure> {
        let reference = render_docs(docs);
        let mut trace = PipelineTrace::new(PipelineKind::Ka, Some(format), question, &reference);
        let result = (|| {
            let prompts = self.prompts.ka(format);
            let messages = prompts
                .knowledge
                .render(&[("question", question), ("reference", &reference)])?;
            let req = self
                .backends
                .request(BackendRole::Generator, Stage::Kg, messages);
            let repr = call(
                self.backends,
                BackendRole::Generator,
                req,
                &mut trace.stages,
            )?;
            trace.y_repr = Some(repr.clone());

            if format != Format::Summary {
                match parse_repr(format, &repr) {
                    Ok(parsed) => trace.parse_warnings = parsed.warnings,
                    Err(e @ FormatError::MissingSection(_)) if strict => {
                        return Err(PipelineError::StrictParseFailure(e));
                    }
                    Err(e) => trace.parse_error = Some(e.to_string()),
                }
            }

            let (cot, answer) = self.reason(question, &repr, format, &mut trace.stages)?;
            trace.y_cot = Some(cot);
            Ok(answer)
        })();
        match result {
            Ok(answer) => {
                trace.y_gen = answer;
                Ok(trace)
            }
            Err(error) => Err(PipelineFailure {
                error,
                trace: Box::new(trace),
            }),
        }
    }

    /// Stages two and three on a given knowledge text. Returns the
    /// reasoning and the answer.
    pub fn reason(
        &self,
        question: &str,
        knowledge: &str,
        format: Format,
        records: &mut Vec<StageRecord>,
    ) -> Result<(String, String), PipelineError> {
        let prompts = self.prompts.ka(format);
        let messages = prompts
            .cot
            .render(&[("question", question), (repr_slot(format), knowledge)])?;
        let req = self
            .backends
            .request(BackendRole::Generator, Stage::Cot, messages);
        let cot = call(self.backends, BackendRole::Generator, req, records)?;

        let messages = prompts
            .generation
            .render(&[("question", question), ("y_CoT", &cot)])?;
        let req = self
            .backends
            .request(BackendRole::Generator, Stage::Gen, messages);
        let answer = call(self.backends, BackendRole::Generator, req, records)?;
        Ok((cot, answer))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::{Role, ScriptRule, ScriptedBackend};

    fn docs() -> Vec<RetrievedDoc> {
        vec![
            RetrievedDoc {
                id: "d1".into(),
                title: "Paris".into(),
                text: "Paris is the capital of France.".into(),
            },
            RetrievedDoc {
                id: "d2".into(),
                title: "Lyon".into(),
                text: "Lyon is a city in France.".into(),
            },
        ]
    }

    fn scripted(rules: Vec<ScriptRule>) -> Backends {
        Backends::shared(Arc::new(ScriptedBackend::new(rules)))
    }

    fn ka_rules() -> Vec<ScriptRule> {
        vec![
            ScriptRule::respond(
                "kg",
                "capital of France?",
                "Entities:\n- Paris (Attributes: [capital])\n\nRelationships:\n1. Paris -> capital of -> France",
            ),
            ScriptRule::respond("cot", "capital of France?", "Paris is the capital."),
            ScriptRule::respond("gen", "capital of France?", " Paris\n"),
        ]
    }

    #[test]
    fn vanilla_single_call() {
        let b = scripted(vec![ScriptRule::respond("vanilla", "capital", "Paris")]);
        let prompts = PromptSet::default();
        let p = Pipelines::new(&b, &prompts);
        let trace = p
            .run_vanilla("What is the capital of France?", &docs())
            .unwrap();
        assert_eq!(trace.answer(), "Paris");
        assert_eq!(trace.stages.len(), 1);
        let sys = &trace.stages[0].request.messages[0];
        assert_eq!(sys.role, Role::System);
        assert!(sys
            .content
            .ends_with("Doc 2(Title: Lyon) Lyon is a city in France."));
        assert_eq!(b.telemetry().requests, 1);

        let trace = p
            .run_vanilla("What is the capital of France?", &[])
            .unwrap();
        assert!(trace.stages[0].request.messages[0]
            .content
            .ends_with("The following are given documents.\n\n"));
    }

    #[test]
    fn vanilla_failure_keeps_request() {
        let b = scripted(vec![ScriptRule::fail("vanilla", "", 400)]);
        let prompts = PromptSet::default();
        let err = Pipelines::new(&b, &prompts)
            .run_vanilla("q?", &docs())
            .unwrap_err();
        assert_eq!(err.error.name(), "ApiError");
        assert_eq!(err.trace.stages.len(), 1);
        assert!(err.trace.stages[0].error.is_some());
    }

    #[test]
    fn ka_three_stages() {
        let b = scripted(ka_rules());
        let prompts = PromptSet::default();
        let p = Pipelines::new(&b, &prompts);
        let trace = p
            .run_ka(
                "What is the capital of France?",
                &docs(),
                Format::Graph,
                true,
            )
            .unwrap();
        assert_eq!(b.telemetry().requests, 3);
        let stages: Vec<Stage> = trace.stages.iter().map(|s| s.stage).collect();
        assert_eq!(stages, [Stage::Kg, Stage::Cot, Stage::Gen]);
        assert_eq!(trace.y_cot.as_deref(), Some("Paris is the capital."));
        assert_eq!(trace.y_gen, "Paris");
        // undeclared France endpoint
        assert_eq!(trace.parse_warnings.len(), 1);

        let cot_user = trace.request(Stage::Cot).unwrap().user_text();
        assert!(cot_user.contains("Paris -> capital of -> France"));
        assert!(!cot_user.contains("Lyon is a city"));
        let gen_user = trace.request(Stage::Gen).unwrap().user_text();
        assert_eq!(
            gen_user,
            "Question: What is the capital of France?\nReasoning Steps: Paris is the capital.\nAnswer:"
        );
    }

    #[test]
    fn ka_summary_is_not_parsed() {
        let mut rules = ka_rules();
        rules[0] = ScriptRule::respond("kg", "", "just a note, no sections");
        let b = scripted(rules);
        let prompts = PromptSet::default();
        let trace = Pipelines::new(&b, &prompts)
            .run_ka(
                "What is the capital of France?",
                &docs(),
                Format::Summary,
                true,
            )
            .unwrap();
        assert_eq!(trace.y_repr.as_deref(), Some("just a note, no sections"));
        assert!(trace.parse_warnings.is_empty() && trace.parse_error.is_none());
        assert!(trace
            .request(Stage::Cot)
            .unwrap()
            .user_text()
            .contains("Note: just a note"));
    }

    #[test]
    fn strict_kg() {
        let mut rules = ka_rules();
        rules[0] = ScriptRule::respond("kg", "", "no sections here");
        let b = scripted(rules);
        let prompts = PromptSet::default();
        let p = Pipelines::new(&b, &prompts);
        let q = "What is the capital of France?";
        let err = p.run_ka(q, &docs(), Format::Graph, true).unwrap_err();
        assert!(matches!(err.error, PipelineError::StrictParseFailure(_)));
        assert_eq!(err.trace.stages.len(), 1);

        let trace = p.run_ka(q, &docs(), Format::Graph, false).unwrap();
        assert!(trace.parse_error.is_some());
        assert_eq!(trace.y_gen, "Paris");
    }

    #[test]
    fn deterministic_traces() {
        let prompts = PromptSet::default();
        let run = || {
            let b = scripted(ka_rules());
            let t = Pipelines::new(&b, &prompts)
                .run_ka(
                    "What is the capital of France?",
                    &docs(),
                    Format::Graph,
                    false,
                )
                .unwrap();
            serde_json::to_string(&t).unwrap()
        };
        assert_eq!(run(), run());
    }
}
