//! Contrastive training-pair construction.
//!
//! For each question the generator runs the knowledge-aware pipeline. Only
//! wrong answers produce training signal: the expert first judges whether
//! the documents support a golden answer, then edits the flawed knowledge
//! representation until the generator, reasoning from the edit, reaches a
//! golden answer (at most `max_iter` edits). The accepted edit is the
//! chosen side of the pair and the original output the rejected side.
//!
//! The vanilla variant pairs the golden answer (chosen) with the wrong
//! single-call answer (rejected) when the documents are adequate.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendRole, Stage};
use crate::corpus::{QAExample, RetrievedDoc};
use crate::eval::exact_match;
use crate::knowledge::{parse_repr, Format};
use crate::pipeline::{call, PipelineError, Pipelines, StageRecord};
use crate::prompts::{render_docs, render_golden_answers, PromptError, PromptSet};

pub const DEFAULT_MAX_ITER: u32 = 3;
pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatagenPipeline {
    Ka,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub pipeline: DatagenPipeline,
    pub format: Format,
    pub max_iter: u32,
    pub workers: usize,
    pub strict_kg: bool,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            pipeline: DatagenPipeline::Ka,
            format: Format::Graph,
            max_iter: DEFAULT_MAX_ITER,
            workers: DEFAULT_WORKERS,
            strict_kg: false,
        }
    }
}

/// What the pair's chosen/rejected texts are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairFormat {
    Graph,
    Keypoints,
    Summary,
    /// Final answers from the vanilla pipeline.
    Answer,
}

impl From<Format> for PairFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Graph => PairFormat::Graph,
            Format::Keypoints => PairFormat::Keypoints,
            Format::Summary => PairFormat::Summary,
        }
    }
}

impl PairFormat {
    pub fn knowledge_format(self) -> Option<Format> {
        match self {
            PairFormat::Graph => Some(Format::Graph),
            PairFormat::Keypoints => Some(Format::Keypoints),
            PairFormat::Summary => Some(Format::Summary),
            PairFormat::Answer => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdequacyJudgement {
    pub verdict: bool,
    pub raw: String,
}

impl AdequacyJudgement {
    pub fn from_reply(raw: &str) -> Self {
        Self {
            verdict: raw.trim().to_lowercase().starts_with("true"),
            raw: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionIteration {
    pub revised_kg: String,
    pub regenerated_answer: String,
    pub matched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Accepted,
    DiscardedInadequate,
    DiscardedUnfixable,
    DiscardedMalformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adequacy: Option<AdequacyJudgement>,
    pub iterations: Vec<RevisionIteration>,
    pub final_status: FinalStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveSample {
    pub id: String,
    pub question: String,
    pub documents: Vec<RetrievedDoc>,
    pub rejected: String,
    pub chosen: String,
    pub golden_answers: Vec<String>,
    pub format: PairFormat,
    pub trace: RevisionTrace,
}

impl ContrastiveSample {
    /// Checks the pair invariants: distinct sides, both parseable under the
    /// structured formats.
    pub fn validate(&self) -> Result<(), String> {
        if self.chosen == self.rejected {
            return Err("chosen and rejected are identical".into());
        }
        if let Some(f @ (Format::Graph | Format::Keypoints)) = self.format.knowledge_format() {
            for (side, text) in [("chosen", &self.chosen), ("rejected", &self.rejected)] {
                parse_repr(f, text).map_err(|e| format!("{side} does not parse: {e}"))?;
            }
        }
        Ok(())
    }
}

/// Result of processing one example, short of a backend failure.
#[derive(Debug, Clone, PartialEq)]
pub enum Construction {
    SkippedCorrect {
        answer: String,
    },
    Accepted(ContrastiveSample),
    Discarded {
        answer: String,
        trace: RevisionTrace,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ConstructionError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl ConstructionError {
    pub fn name(&self) -> &'static str {
        match self {
            ConstructionError::Pipeline(e) => e.name(),
        }
    }
}

impl From<PromptError> for ConstructionError {
    fn from(e: PromptError) -> Self {
        ConstructionError::Pipeline(e.into())
    }
}

fn discard(
    answer: String,
    adequacy: Option<AdequacyJudgement>,
    iterations: Vec<RevisionIteration>,
    status: FinalStatus,
) -> Construction {
    Construction::Discarded {
        answer,
        trace: RevisionTrace {
            adequacy,
            iterations,
            final_status: status,
        },
    }
}

fn feedback_noun(format: Format) -> &'static str {
    match format {
        Format::Graph => "graph",
        other => other.noun(),
    }
}

/// Inserts `line` before the final line of `prompt` (the answer cue).
fn insert_before_cue(prompt: &str, line: &str) -> String {
    match prompt.rfind('\n') {
        Some(at) => format!("{}\n{}{}", &prompt[..at], line, &prompt[at..]),
        None => format!("{line}\n{prompt}"),
    }
}

pub struct Constructor<'a> {
    pub pipelines: Pipelines<'a>,
    pub config: DatagenConfig,
}

impl<'a> Constructor<'a> {
    pub fn new(pipelines: Pipelines<'a>, config: DatagenConfig) -> Self {
        Self { pipelines, config }
    }

    fn prompts(&self) -> &PromptSet {
        self.pipelines.prompts
    }

    fn check_adequacy(
        &self,
        ex: &QAExample,
        reference: &str,
        records: &mut Vec<StageRecord>,
    ) -> Result<AdequacyJudgement, ConstructionError> {
        let golds = render_golden_answers(&ex.golden_answers);
        let messages = self.prompts().construction.adequacy.render(&[
            ("question", &ex.question),
            ("reference", reference),
            ("golden_answers", &golds),
        ])?;
        let backends = self.pipelines.backends;
        let req = backends.request(BackendRole::Expert, Stage::Adequacy, messages);
        let raw = call(backends, BackendRole::Expert, req, records)?;
        Ok(AdequacyJudgement::from_reply(&raw))
    }

    /// Runs the knowledge-aware construction loop on one example.
    pub fn construct_pair(&self, ex: &QAExample) -> Result<Construction, ConstructionError> {
        let format = self.config.format;
        let trace =
            match self
                .pipelines
                .run_ka(&ex.question, &ex.retrieved, format, self.config.strict_kg)
            {
                Ok(t) => t,
                Err(f) => match f.error {
                    PipelineError::StrictParseFailure(_) => {
                        return Ok(discard(
                            String::new(),
                            None,
                            Vec::new(),
                            FinalStatus::DiscardedMalformed,
                        ))
                    }
                    other => return Err(other.into()),
                },
            };
        let answer = trace.y_gen.clone();
        if exact_match(&answer, &ex.golden_answers) == 1 {
            return Ok(Construction::SkippedCorrect { answer });
        }
        let rejected = trace.y_repr.clone().unwrap_or_default();
        if format != Format::Summary && parse_repr(format, &rejected).is_err() {
            return Ok(discard(
                answer,
                None,
                Vec::new(),
                FinalStatus::DiscardedMalformed,
            ));
        }
        if ex.golden_answers.is_empty() {
            return Ok(discard(
                answer,
                None,
                Vec::new(),
                FinalStatus::DiscardedInadequate,
            ));
        }

        let mut records = Vec::new();
        let adequacy = self.check_adequacy(ex, &trace.rendered_docs, &mut records)?;
        if !adequacy.verdict {
            return Ok(discard(
                answer,
                Some(adequacy),
                Vec::new(),
                FinalStatus::DiscardedInadequate,
            ));
        }

        let refine = self.prompts().construction.refine_for(format);
        let golds = render_golden_answers(&ex.golden_answers);
        let backends = self.pipelines.backends;
        let mut iterations: Vec<RevisionIteration> = Vec::new();
        let mut flawed = rejected.clone();
        for _ in 0..self.config.max_iter {
            let mut messages = refine.render(&[
                ("question", &ex.question),
                ("reference", &trace.rendered_docs),
                ("y_KG_neg", &flawed),
                ("golden_answers", &golds),
            ])?;
            if let Some(prev) = iterations.last() {
                let line = format!(
                    "Previous refined {} still produced the wrong answer: {}",
                    feedback_noun(format),
                    prev.regenerated_answer
                );
                let user = &mut messages[1].content;
                *user = insert_before_cue(user, &line);
            }
            let req = backends.request(BackendRole::Expert, Stage::Refine, messages);
            let revised = call(backends, BackendRole::Expert, req, &mut records)?;
            if format != Format::Summary && parse_repr(format, &revised).is_err() {
                iterations.push(RevisionIteration {
                    revised_kg: revised,
                    regenerated_answer: String::new(),
                    matched: false,
                });
                return Ok(discard(
                    answer,
                    Some(adequacy),
                    iterations,
                    FinalStatus::DiscardedMalformed,
                ));
            }
            let (_, regenerated) =
                self.pipelines
                    .reason(&ex.question, &revised, format, &mut records)?;
            let matched = exact_match(&regenerated, &ex.golden_answers) == 1;
            iterations.push(RevisionIteration {
                revised_kg: revised.clone(),
                regenerated_answer: regenerated,
                matched,
            });
            if matched {
                break;
            }
            flawed = revised;
        }

        match iterations.last() {
            Some(last) if last.matched && last.revised_kg != rejected => {
                let chosen = last.revised_kg.clone();
                Ok(Construction::Accepted(ContrastiveSample {
                    id: ex.id.clone(),
                    question: ex.question.clone(),
                    documents: ex.retrieved.clone(),
                    rejected,
                    chosen,
                    golden_answers: ex.golden_answers.clone(),
                    format: format.into(),
                    trace: RevisionTrace {
                        adequacy: Some(adequacy),
                        iterations,
                        final_status: FinalStatus::Accepted,
                    },
                }))
            }
            _ => Ok(discard(
                answer,
                Some(adequacy),
                iterations,
                FinalStatus::DiscardedUnfixable,
            )),
        }
    }

    /// Pairs the first golden answer with a wrong single-call answer.
    pub fn construct_vanilla_pair(
        &self,
        ex: &QAExample,
    ) -> Result<Construction, ConstructionError> {
        let trace = self
            .pipelines
            .run_vanilla(&ex.question, &ex.retrieved)
            .map_err(|f| f.error)?;
        let answer = trace.y_gen.clone();
        if exact_match(&answer, &ex.golden_answers) == 1 {
            return Ok(Construction::SkippedCorrect { answer });
        }
        let Some(gold) = ex.golden_answers.first() else {
            return Ok(discard(
                answer,
                None,
                Vec::new(),
                FinalStatus::DiscardedInadequate,
            ));
        };
        let mut records = Vec::new();
        let adequacy = self.check_adequacy(ex, &trace.rendered_docs, &mut records)?;
        if !adequacy.verdict {
            return Ok(discard(
                answer,
                Some(adequacy),
                Vec::new(),
                FinalStatus::DiscardedInadequate,
            ));
        }
        Ok(Construction::Accepted(ContrastiveSample {
            id: ex.id.clone(),
            question: ex.question.clone(),
            documents: ex.retrieved.clone(),
            rejected: answer,
            chosen: gold.clone(),
            golden_answers: ex.golden_answers.clone(),
            format: PairFormat::Answer,
            trace: RevisionTrace {
                adequacy: Some(adequacy),
                iterations: Vec::new(),
                final_status: FinalStatus::Accepted,
            },
        }))
    }

    pub fn construct(&self, ex: &QAExample) -> Result<Construction, ConstructionError> {
        match self.config.pipeline {
            DatagenPipeline::Ka => self.construct_pair(ex),
            DatagenPipeline::Vanilla => self.construct_vanilla_pair(ex),
        }
    }

    /// Re-runs reasoning and generation on the chosen side and checks that
    /// the answer matches a golden answer.
    pub fn verify_pair(&self, sample: &ContrastiveSample) -> Result<bool, ConstructionError> {
        let Some(format) = sample.format.knowledge_format() else {
            return Ok(exact_match(&sample.chosen, &sample.golden_answers) == 1);
        };
        let mut records = Vec::new();
        let (_, answer) =
            self.pipelines
                .reason(&sample.question, &sample.chosen, format, &mut records)?;
        Ok(exact_match(&answer, &sample.golden_answers) == 1)
    }

    /// Processes every example on a pool of `config.workers` threads.
    /// Records come back in input order.
    pub fn run_datagen(&self, examples: &[QAExample]) -> DatagenRun {
        let process = |ex: &QAExample| ExampleRecord::from_result(ex, self.construct(ex));
        let records: Vec<ExampleRecord> = match rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| examples.par_iter().map(process).collect()),
            Err(_) => examples.iter().map(process).collect(),
        };
        let mut report = DatagenReport::default();
        for r in &records {
            report.count(r.status);
        }
        DatagenRun { records, report }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleStatus {
    SkippedCorrect,
    Accepted,
    DiscardedInadequate,
    DiscardedUnfixable,
    DiscardedMalformed,
    BackendFailure,
}

/// Per-example outcome as written to the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub status: ExampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<RevisionTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub sample: Option<ContrastiveSample>,
}

impl ExampleRecord {
    fn from_result(ex: &QAExample, result: Result<Construction, ConstructionError>) -> Self {
        let mut rec = ExampleRecord {
            id: ex.id.clone(),
            status: ExampleStatus::BackendFailure,
            model_answer: None,
            trace: None,
            error: None,
            sample: None,
        };
        match result {
            Ok(Construction::SkippedCorrect { answer }) => {
                rec.status = ExampleStatus::SkippedCorrect;
                rec.model_answer = Some(answer);
            }
            Ok(Construction::Accepted(sample)) => {
                rec.status = ExampleStatus::Accepted;
                rec.model_answer = Some(sample.rejected.clone());
                rec.trace = Some(sample.trace.clone());
                rec.sample = Some(sample);
            }
            Ok(Construction::Discarded { answer, trace }) => {
                rec.status = match trace.final_status {
                    FinalStatus::DiscardedInadequate => ExampleStatus::DiscardedInadequate,
                    FinalStatus::DiscardedMalformed => ExampleStatus::DiscardedMalformed,
                    _ => ExampleStatus::DiscardedUnfixable,
                };
                rec.model_answer = Some(answer);
                rec.trace = Some(trace);
            }
            Err(e) => {
                log::warn!("example {}: {e}", ex.id);
                rec.error = Some(format!("{}: {e}", e.name()));
            }
        }
        rec
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatagenReport {
    pub skipped_correct: usize,
    pub accepted: usize,
    pub discarded_inadequate: usize,
    pub discarded_unfixable: usize,
    pub discarded_malformed: usize,
    pub backend_failures: usize,
}

impl DatagenReport {
    fn count(&mut self, status: ExampleStatus) {
        let slot = match status {
            ExampleStatus::SkippedCorrect => &mut self.skipped_correct,
            ExampleStatus::Accepted => &mut self.accepted,
            ExampleStatus::DiscardedInadequate => &mut self.discarded_inadequate,
            ExampleStatus::DiscardedUnfixable => &mut self.discarded_unfixable,
            ExampleStatus::DiscardedMalformed => &mut self.discarded_malformed,
            ExampleStatus::BackendFailure => &mut self.backend_failures,
        };
        *slot += 1;
    }

    pub fn total(&self) -> usize {
        self.skipped_correct
            + self.accepted
            + self.discarded_inadequate
            + self.discarded_unfixable
            + self.discarded_malformed
            + self.backend_failures
    }
}

#[derive(Debug, Clone)]
pub struct DatagenRun {
    pub records: Vec<ExampleRecord>,
    pub report: DatagenReport,
}

impl DatagenRun {
    pub fn samples(&self) -> impl Iterator<Item = &ContrastiveSample> {
        self.records.iter().filter_map(|r| r.sample.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportStyle {
    Native,
    /// `{prompt, chosen, rejected}` lines.
    Pcr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcrRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// The prompt the chosen/rejected texts respond to: the stage-1 user prompt
/// for knowledge pairs, the vanilla system and user prompts for answer pairs.
pub fn pair_prompt(prompts: &PromptSet, sample: &ContrastiveSample) -> Result<String, PromptError> {
    let reference = render_docs(&sample.documents);
    let vars = [
        ("question", sample.question.as_str()),
        ("reference", reference.as_str()),
    ];
    match sample.format.knowledge_format() {
        Some(f) => crate::prompts::render(&prompts.ka(f).knowledge.user, &vars),
        None => {
            let m = prompts.vanilla.render(&vars)?;
            Ok(format!("{}\n\n{}", m[0].content, m[1].content))
        }
    }
}

pub fn write_pairs<'s, W: Write>(
    mut out: W,
    samples: impl IntoIterator<Item = &'s ContrastiveSample>,
    style: ExportStyle,
    prompts: &PromptSet,
) -> Result<(), crate::Error> {
    for s in samples {
        let line = match style {
            ExportStyle::Native => serde_json::to_string(s)?,
            ExportStyle::Pcr => serde_json::to_string(&PcrRecord {
                prompt: pair_prompt(prompts, s)?,
                chosen: s.chosen.clone(),
                rejected: s.rejected.clone(),
            })?,
        };
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<ContrastiveSample>, crate::Error> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| crate::Error::Data {
            name: "MalformedLine",
            message: format!("pairs line {}: {e}", idx + 1),
        })?);
    }
    Ok(out)
}
