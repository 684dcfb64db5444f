//! Exact-match and token-F1 scoring of QA predictions.
//!
//! Answers are normalized SQuAD-style before comparison: lowercase, strip
//! ASCII punctuation, drop the articles `a`/`an`/`the`, collapse whitespace.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction id `{0}` has no gold entry")]
    MissingId(String),
    #[error("id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("no runs to aggregate")]
    NoRuns,
}

impl EvalError {
    pub fn name(&self) -> &'static str {
        match self {
            EvalError::MissingId(_) => "MissingId",
            EvalError::DuplicateId(_) => "DuplicateId",
            EvalError::NoRuns => "NoRuns",
        }
    }
}

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").unwrap());

pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 if the normalized prediction equals any normalized gold answer.
pub fn exact_match<S: AsRef<str>>(pred: &str, golds: &[S]) -> u8 {
    let p = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g.as_ref()) == p) as u8
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best multiset-overlap F1 of `pred` against any gold answer.
pub fn token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    golds
        .iter()
        .map(|g| f1_single(pred, g.as_ref()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub golden_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub em: u8,
    pub f1: f64,
}

/// EM and F1 on a 0-100 scale. For aggregates, `examples` holds the first
/// run's records and `runs` the number of runs averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
    pub runs: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub examples: Vec<ExampleScore>,
}

pub fn evaluate_run(
    preds: &[PredictionRecord],
    gold: &[GoldRecord],
) -> Result<EvalResult, EvalError> {
    let mut index: HashMap<&str, &GoldRecord> = HashMap::with_capacity(gold.len());
    for g in gold {
        if index.insert(g.id.as_str(), g).is_some() {
            return Err(EvalError::DuplicateId(g.id.clone()));
        }
    }
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(preds.len());
    for p in preds {
        if !seen.insert(p.id.as_str()) {
            return Err(EvalError::DuplicateId(p.id.clone()));
        }
        let g = index
            .get(p.id.as_str())
            .ok_or_else(|| EvalError::MissingId(p.id.clone()))?;
        examples.push(ExampleScore {
            id: p.id.clone(),
            em: exact_match(&p.answer, &g.golden_answers),
            f1: token_f1(&p.answer, &g.golden_answers),
        });
    }
    let n = examples.len();
    let (em, f1) = if n == 0 {
        (0.0, 0.0)
    } else {
        let em: f64 = examples.iter().map(|e| e.em as f64).sum();
        let f1: f64 = examples.iter().map(|e| e.f1).sum();
        (100.0 * em / n as f64, 100.0 * f1 / n as f64)
    };
    Ok(EvalResult {
        em,
        f1,
        n,
        runs: 1,
        examples,
    })
}

/// Unweighted mean of per-run metrics.
pub fn aggregate(results: &[EvalResult]) -> Result<EvalResult, EvalError> {
    let first = results.first().ok_or(EvalError::NoRuns)?;
    let k = results.len() as f64;
    Ok(EvalResult {
        em: results.iter().map(|r| r.em).sum::<f64>() / k,
        f1: results.iter().map(|r| r.f1).sum::<f64>() / k,
        n: first.n,
        runs: results.len(),
        examples: first.examples.clone(),
    })
}
