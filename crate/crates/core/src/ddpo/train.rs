//! Full-batch gradient descent of the dense DPO loss on a [`ToyLm`].

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::toy::ToyLm;
use super::{
    ddpo_loss, pair_logprob_grads, BatchLoss, DdpoConfig, DdpoError, PairLogProbs, DEFAULT_TOY_LR,
};
use crate::datagen::ContrastiveSample;
use crate::diff::{align_tokens, TokenId, Tokenizer};

/// A tokenized preference pair with its alignment masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPair {
    pub context: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
    pub chosen_changed: Vec<bool>,
    pub rejected_changed: Vec<bool>,
}

impl ToyPair {
    pub fn new(context: Vec<TokenId>, chosen: Vec<TokenId>, rejected: Vec<TokenId>) -> Self {
        let d = align_tokens(&chosen, &rejected);
        Self {
            context,
            chosen,
            rejected,
            chosen_changed: d.chosen_mask.changed,
            rejected_changed: d.rejected_mask.changed,
        }
    }
}

/// Pairs plus the frozen reference model and its cached log-probs.
#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub reference: ToyLm,
    pub pairs: Vec<ToyPair>,
    ref_chosen: Vec<Vec<f64>>,
    ref_rejected: Vec<Vec<f64>>,
}

impl ToyProblem {
    pub fn new(reference: ToyLm, pairs: Vec<ToyPair>) -> Result<Self, DdpoError> {
        if pairs.is_empty() {
            return Err(DdpoError::EmptyBatch);
        }
        let mut ref_chosen = Vec::with_capacity(pairs.len());
        let mut ref_rejected = Vec::with_capacity(pairs.len());
        for p in &pairs {
            ref_chosen.push(reference.logprobs(&p.context, &p.chosen)?);
            ref_rejected.push(reference.logprobs(&p.context, &p.rejected)?);
        }
        Ok(Self {
            reference,
            pairs,
            ref_chosen,
            ref_rejected,
        })
    }

    pub fn batch(&self, policy: &ToyLm) -> Result<Vec<PairLogProbs>, DdpoError> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(PairLogProbs {
                    policy_chosen: policy.logprobs(&p.context, &p.chosen)?,
                    ref_chosen: self.ref_chosen[i].clone(),
                    chosen_changed: p.chosen_changed.clone(),
                    policy_rejected: policy.logprobs(&p.context, &p.rejected)?,
                    ref_rejected: self.ref_rejected[i].clone(),
                    rejected_changed: p.rejected_changed.clone(),
                })
            })
            .collect()
    }

    pub fn loss(&self, policy: &ToyLm, cfg: &DdpoConfig) -> Result<BatchLoss, DdpoError> {
        ddpo_loss(&self.batch(policy)?, cfg)
    }

    /// Batch loss and its gradient with respect to every policy logit.
    pub fn loss_and_grad(
        &self,
        policy: &ToyLm,
        cfg: &DdpoConfig,
    ) -> Result<(BatchLoss, Vec<f64>), DdpoError> {
        let batch = self.batch(policy)?;
        let loss = ddpo_loss(&batch, cfg)?;
        let n = batch.len() as f64;
        let mut grad = vec![0.0; policy.logits().len()];
        for (p, lp) in self.pairs.iter().zip(&batch) {
            let (dc, dr) = pair_logprob_grads(lp, cfg)?;
            let dc: Vec<f64> = dc.iter().map(|g| g / n).collect();
            let dr: Vec<f64> = dr.iter().map(|g| g / n).collect();
            policy.accumulate_grad(&p.context, &p.chosen, &dc, &mut grad)?;
            policy.accumulate_grad(&p.context, &p.rejected, &dr, &mut grad)?;
        }
        Ok((loss, grad))
    }

    /// Table rows read by at least one token position of the batch.
    pub fn touched_rows(&self) -> Vec<bool> {
        let mut touched = vec![false; self.reference.rows()];
        for p in &self.pairs {
            for resp in [&p.chosen, &p.rejected] {
                let seq: Vec<TokenId> = p.context.iter().chain(resp.iter()).copied().collect();
                for t in p.context.len()..seq.len() {
                    touched[self.reference.row_at(&seq, t)] = true;
                }
            }
        }
        touched
    }
}

/// Random near-duplicate pairs. Chosen responses use the first
/// `vocab − corrupt_tokens` ids: uniform draws, except at the `edits`
/// corrected positions, which hold the reference model's most likely clean
/// token for that context. The rejected response replaces each corrected
/// token with a run of `corrupt_span` ids from the reserved top range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vocab: usize,
    pub corrupt_tokens: usize,
    pub order: usize,
    pub pairs: usize,
    pub context_len: usize,
    pub response_len: usize,
    pub edits: usize,
    pub corrupt_span: usize,
    /// Standard deviation of the reference logits.
    pub init_scale: f64,
    /// Added to the reference logits of corrupt tokens.
    pub corrupt_bias: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab: 6,
            corrupt_tokens: 2,
            order: 2,
            pairs: 32,
            context_len: 2,
            response_len: 16,
            edits: 2,
            corrupt_span: 3,
            init_scale: 1.0,
            corrupt_bias: -5.0,
        }
    }
}

impl SyntheticSpec {
    pub fn build(&self, seed: u64) -> Result<ToyProblem, DdpoError> {
        if self.corrupt_tokens == 0 || self.corrupt_tokens >= self.vocab {
            return Err(DdpoError::InvalidConfig(
                "corrupt_tokens must be in 1..vocab".into(),
            ));
        }
        if self.edits > self.response_len || self.corrupt_span == 0 {
            return Err(DdpoError::InvalidConfig(
                "edits must fit the response and corrupt_span must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reference = ToyLm::random(self.vocab, self.order, self.init_scale, &mut rng)?;
        let clean = self.vocab - self.corrupt_tokens;
        let v = self.vocab;
        for (i, w) in reference.logits_mut().iter_mut().enumerate() {
            if i % v >= clean {
                *w += self.corrupt_bias;
            }
        }
        let positions: Vec<usize> = (0..self.response_len).collect();
        let mut pairs = Vec::with_capacity(self.pairs);
        for _ in 0..self.pairs {
            let context: Vec<TokenId> = (0..self.context_len)
                .map(|_| rng.random_range(0..clean as TokenId))
                .collect();
            let mut edit = vec![false; self.response_len];
            for &at in positions.choose_multiple(&mut rng, self.edits) {
                edit[at] = true;
            }
            let mut seq = context.clone();
            for &e in &edit {
                let tok = if e {
                    let row = reference.row(reference.row_at(&seq, seq.len()));
                    (0..clean)
                        .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                        .expect("clean vocabulary is non-empty") as TokenId
                } else {
                    rng.random_range(0..clean as TokenId)
                };
                seq.push(tok);
            }
            let chosen = seq.split_off(self.context_len);
            let mut rejected = Vec::with_capacity(chosen.len() + self.edits * self.corrupt_span);
            for (&t, &e) in chosen.iter().zip(&edit) {
                if e {
                    for _ in 0..self.corrupt_span {
                        rejected.push(rng.random_range(clean as TokenId..v as TokenId));
                    }
                } else {
                    rejected.push(t);
                }
            }
            pairs.push(ToyPair::new(context, chosen, rejected));
        }
        ToyProblem::new(reference, pairs)
    }
}

/// Default vocabulary cap for pairs files.
pub const DEFAULT_MAX_VOCAB: usize = 4096;

/// Tokenizes pairs with the whitespace tokenizer (question as context) and
/// builds a random reference model over the resulting vocabulary.
pub fn problem_from_samples(
    samples: &[ContrastiveSample],
    order: usize,
    init_scale: f64,
    max_vocab: usize,
    seed: u64,
) -> Result<ToyProblem, crate::Error> {
    let tok = Tokenizer::whitespace();
    let mut raw = Vec::with_capacity(samples.len());
    for s in samples {
        raw.push((
            tok.tokenize(&s.question)?.tokens,
            tok.tokenize(&s.chosen)?.tokens,
            tok.tokenize(&s.rejected)?.tokens,
        ));
    }
    let vocab = tok.vocab_len();
    if vocab > max_vocab {
        return Err(DdpoError::VocabOverflow {
            needed: vocab,
            limit: max_vocab,
        }
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = ToyLm::random(vocab.max(1), order, init_scale, &mut rng)?;
    let pairs = raw
        .into_iter()
        .map(|(c, y, n)| ToyPair::new(c, y, n))
        .collect();
    Ok(ToyProblem::new(reference, pairs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: DEFAULT_TOY_LR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub dpo_loss: f64,
    pub sft_loss: f64,
    pub reward_chosen: f64,
    pub reward_rejected: f64,
    pub reward_accuracy: f64,
    pub reward_margin: f64,
}

impl StepMetrics {
    fn new(step: usize, l: &BatchLoss) -> Self {
        Self {
            step,
            loss: l.loss,
            dpo_loss: l.dpo_loss,
            sft_loss: l.sft_loss,
            reward_chosen: l.reward_chosen,
            reward_rejected: l.reward_rejected,
            reward_accuracy: l.reward_accuracy,
            reward_margin: l.reward_margin(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Row `s` is measured after `s` updates.
    pub metrics: Vec<StepMetrics>,
    pub policy: ToyLm,
}

impl TrainOutcome {
    pub fn last(&self) -> &StepMetrics {
        self.metrics.last().expect("metrics always include step 0")
    }
}

/// Plain gradient descent from a copy of the reference model.
pub fn train_toy(
    problem: &ToyProblem,
    cfg: &DdpoConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome, DdpoError> {
    cfg.validate()?;
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(DdpoError::InvalidConfig(
            "learning rate must be positive".into(),
        ));
    }
    let mut policy = problem.reference.clone();
    let mut metrics = Vec::with_capacity(opts.steps + 1);
    for step in 0..=opts.steps {
        let (loss, grad) = problem.loss_and_grad(&policy, cfg)?;
        metrics.push(StepMetrics::new(step, &loss));
        if step == opts.steps {
            break;
        }
        for (w, g) in policy.logits_mut().iter_mut().zip(&grad) {
            *w -= opts.lr * g;
        }
        log::debug!("step {step}: loss {}", loss.loss);
    }
    Ok(TrainOutcome { metrics, policy })
}

pub const METRICS_COLUMNS: &str =
    "step,loss,dpo_loss,sft_loss,reward_chosen,reward_rejected,reward_accuracy,reward_margin";

/// Writes the metrics as CSV. The first line is a `#` comment noting that
/// rewards exclude the per-prompt `β log Z(x)` term.
pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[StepMetrics]) -> std::io::Result<()> {
    writeln!(
        out,
        "# rewards are beta*(log pi - log pi_ref) weighted scores; the per-prompt beta*log Z(x) shift is omitted"
    )?;
    writeln!(out, "{METRICS_COLUMNS}")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.step,
            m.loss,
            m.dpo_loss,
            m.sft_loss,
            m.reward_chosen,
            m.reward_rejected,
            m.reward_accuracy,
            m.reward_margin
        )?;
    }
    Ok(())
}
