//! Dense DPO: preference loss over token-weighted sequence scores.
//!
//! A sequence score is `Σ_unchanged lp + γ Σ_changed lp`, where the changed
//! tokens come from the LCS alignment of the chosen and rejected texts. The
//! pair logit is `β[(s*⁺ − s_ref⁺) − (s*⁻ − s_ref⁻)]`, and the per-pair loss
//! is `−log σ(logit) + α · NLL(chosen)` under the policy. Reported rewards
//! are `β(s* − s_ref)`; the partition term cancels inside the logit and is
//! omitted from them.

pub mod gradcheck;
pub mod toy;
pub mod train;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::{TokenId, WeightMask};

/// Learning rate used for LoRA fine-tuning of full-size models.
pub const LORA_LEARNING_RATE: f64 = 5e-5;
/// Default learning rate for the toy logit-table model.
pub const DEFAULT_TOY_LR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DdpoError {
    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("token {token} is out of range for vocabulary size {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("vocabulary needs {needed} tokens, limit is {limit}")]
    VocabOverflow { needed: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

impl DdpoError {
    pub fn name(&self) -> &'static str {
        match self {
            DdpoError::LengthMismatch { .. } => "LengthMismatch",
            DdpoError::EmptyBatch => "EmptyBatch",
            DdpoError::TokenOutOfRange { .. } => "TokenOutOfRange",
            DdpoError::VocabOverflow { .. } => "VocabOverflow",
            DdpoError::InvalidConfig(_) => "InvalidConfig",
            DdpoError::InvalidCheckpoint(_) => "InvalidCheckpoint",
        }
    }
}

/// Which sequences of a pair get γ-weighted scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSide {
    #[default]
    Both,
    /// Rejected scores are plain sums.
    Chosen,
}

impl FromStr for WeightSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(WeightSide::Both),
            "chosen" => Ok(WeightSide::Chosen),
            other => Err(format!(
                "unknown weight side `{other}` (expected both|chosen)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpoConfig {
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Use the mean rather than the sum of chosen log-probs in the SFT term.
    pub sft_normalize: bool,
    pub weight_side: WeightSide,
}

impl Default for DdpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 1.1,
            alpha: 0.1,
            sft_normalize: false,
            weight_side: WeightSide::Both,
        }
    }
}

impl DdpoConfig {
    pub fn validate(&self) -> Result<(), DdpoError> {
        let bad = |m: &str| Err(DdpoError::InvalidConfig(m.into()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        Ok(())
    }

    fn rejected_gamma(&self) -> f64 {
        match self.weight_side {
            WeightSide::Both => self.gamma,
            WeightSide::Chosen => 1.0,
        }
    }
}

/// Teacher-forced `log p(y_t | x, y_<t)`, one per response token.
pub type PerTokenLogProbs = Vec<f64>;

/// Policy and reference log-probs of both sides of a pair plus the
/// changed-token masks from their alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLogProbs {
    pub policy_chosen: PerTokenLogProbs,
    pub ref_chosen: PerTokenLogProbs,
    pub chosen_changed: Vec<bool>,
    pub policy_rejected: PerTokenLogProbs,
    pub ref_rejected: PerTokenLogProbs,
    pub rejected_changed: Vec<bool>,
}

pub type PairBatch = Vec<PairLogProbs>;

fn check_len(what: &'static str, left: usize, right: usize) -> Result<(), DdpoError> {
    if left == right {
        Ok(())
    } else {
        Err(DdpoError::LengthMismatch { what, left, right })
    }
}

impl PairLogProbs {
    pub fn validate(&self) -> Result<(), DdpoError> {
        let c = self.chosen_changed.len();
        check_len("policy chosen log-probs", self.policy_chosen.len(), c)?;
        check_len("reference chosen log-probs", self.ref_chosen.len(), c)?;
        let r = self.rejected_changed.len();
        check_len("policy rejected log-probs", self.policy_rejected.len(), r)?;
        check_len("reference rejected log-probs", self.ref_rejected.len(), r)
    }

    /// The same pair with chosen and rejected exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            policy_chosen: self.policy_rejected.clone(),
            ref_chosen: self.ref_rejected.clone(),
            chosen_changed: self.rejected_changed.clone(),
            policy_rejected: self.policy_chosen.clone(),
            ref_rejected: self.ref_chosen.clone(),
            rejected_changed: self.chosen_changed.clone(),
        }
    }
}

fn score(lp: &[f64], changed: &[bool], gamma: f64) -> f64 {
    let (mut u, mut c) = (0.0, 0.0);
    for (&v, &ch) in lp.iter().zip(changed) {
        if ch {
            c += v;
        } else {
            u += v;
        }
    }
    u + gamma * c
}

/// `Σ_unchanged lp + γ Σ_changed lp` with γ taken from the mask.
pub fn weighted_score(lp: &[f64], mask: &WeightMask) -> Result<f64, DdpoError> {
    check_len("weighted score", lp.len(), mask.changed.len())?;
    if !(mask.gamma > 0.0) {
        return Err(DdpoError::InvalidConfig("gamma must be positive".into()));
    }
    Ok(score(lp, &mask.changed, mask.gamma))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `−log σ(z)`, stable for large |z|.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTerms {
    pub logit: f64,
    /// `β(s*⁺ − s_ref⁺)`
    pub reward_chosen: f64,
    /// `β(s*⁻ − s_ref⁻)`
    pub reward_rejected: f64,
    pub dpo: f64,
    pub sft: f64,
    pub loss: f64,
}

pub fn pair_terms(pair: &PairLogProbs, cfg: &DdpoConfig) -> Result<PairTerms, DdpoError> {
    pair.validate()?;
    let gc = cfg.gamma;
    let gr = cfg.rejected_gamma();
    let chosen_gap = score(&pair.policy_chosen, &pair.chosen_changed, gc)
        - score(&pair.ref_chosen, &pair.chosen_changed, gc);
    let rejected_gap = score(&pair.policy_rejected, &pair.rejected_changed, gr)
        - score(&pair.ref_rejected, &pair.rejected_changed, gr);
    let logit = cfg.beta * (chosen_gap - rejected_gap);
    let dpo = neg_log_sigmoid(logit);
    let sft = sft_nll(&pair.policy_chosen, cfg.sft_normalize);
    Ok(PairTerms {
        logit,
        reward_chosen: cfg.beta * chosen_gap,
        reward_rejected: cfg.beta * rejected_gap,
        dpo,
        sft,
        loss: dpo + cfg.alpha * sft,
    })
}

fn sft_nll(lp: &[f64], normalize: bool) -> f64 {
    let nll: f64 = -lp.iter().sum::<f64>();
    if normalize && !lp.is_empty() {
        nll / lp.len() as f64
    } else {
        nll
    }
}

pub fn pair_logit(pair: &PairLogProbs, cfg: &DdpoConfig) -> Result<f64, DdpoError> {
    Ok(pair_terms(pair, cfg)?.logit)
}

/// Batch means of the loss components and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub loss: f64,
    pub dpo_loss: f64,
    pub sft_loss: f64,
    pub reward_chosen: f64,
    pub reward_rejected: f64,
    /// Fraction of pairs whose logit is positive.
    pub reward_accuracy: f64,
    pub pairs: Vec<PairTerms>,
}

impl BatchLoss {
    pub fn reward_margin(&self) -> f64 {
        self.reward_chosen - self.reward_rejected
    }

    pub fn mean_logit(&self) -> f64 {
        self.pairs.iter().map(|p| p.logit).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Mean over pairs, reduced in pair order.
pub fn ddpo_loss(batch: &[PairLogProbs], cfg: &DdpoConfig) -> Result<BatchLoss, DdpoError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(DdpoError::EmptyBatch);
    }
    let pairs = batch
        .iter()
        .map(|p| pair_terms(p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let n = pairs.len() as f64;
    let mean = |f: fn(&PairTerms) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    Ok(BatchLoss {
        loss: mean(|p| p.loss),
        dpo_loss: mean(|p| p.dpo),
        sft_loss: mean(|p| p.sft),
        reward_chosen: mean(|p| p.reward_chosen),
        reward_rejected: mean(|p| p.reward_rejected),
        reward_accuracy: pairs.iter().filter(|p| p.logit > 0.0).count() as f64 / n,
        pairs,
    })
}

/// Derivatives of one pair's loss with respect to the policy log-probs of
/// the chosen and rejected tokens.
pub fn pair_logprob_grads(
    pair: &PairLogProbs,
    cfg: &DdpoConfig,
) -> Result<(Vec<f64>, Vec<f64>), DdpoError> {
    let terms = pair_terms(pair, cfg)?;
    // d(−log σ(z))/dz
    let dz = sigmoid(terms.logit) - 1.0;
    let sft = if cfg.sft_normalize && !pair.policy_chosen.is_empty() {
        cfg.alpha / pair.policy_chosen.len() as f64
    } else {
        cfg.alpha
    };
    let gr = cfg.rejected_gamma();
    let chosen = pair
        .chosen_changed
        .iter()
        .map(|&c| dz * cfg.beta * if c { cfg.gamma } else { 1.0 } - sft)
        .collect();
    let rejected = pair
        .rejected_changed
        .iter()
        .map(|&c| -dz * cfg.beta * if c { gr } else { 1.0 })
        .collect();
    Ok((chosen, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(
        pc: &[f64],
        rc: &[f64],
        cm: &[bool],
        pr: &[f64],
        rr: &[f64],
        rm: &[bool],
    ) -> PairLogProbs {
        PairLogProbs {
            policy_chosen: pc.to_vec(),
            ref_chosen: rc.to_vec(),
            chosen_changed: cm.to_vec(),
            policy_rejected: pr.to_vec(),
            ref_rejected: rr.to_vec(),
            rejected_changed: rm.to_vec(),
        }
    }

    #[test]
    fn weighted_score_examples() {
        let m = WeightMask {
            changed: vec![false, true, false],
            gamma: 1.1,
        };
        let s = weighted_score(&[-1.0, -2.0, -0.5], &m).unwrap();
        assert!((s - -3.7).abs() < 1e-12);
        let s1 = weighted_score(&[-1.0, -2.0, -0.5], &m.with_gamma(1.0)).unwrap();
        assert_eq!(s1, -3.5);
        assert_eq!(
            weighted_score(&[], &WeightMask::unchanged(0, 1.1)).unwrap(),
            0.0
        );
        assert!(matches!(
            weighted_score(&[-1.0], &m),
            Err(DdpoError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pair_logit_examples() {
        let cfg = DdpoConfig {
            gamma: 1.0,
            ..DdpoConfig::default()
        };
        let eq = pair(&[-1.0], &[-1.0], &[false], &[-1.0], &[-1.0], &[false]);
        assert_eq!(pair_logit(&eq, &cfg).unwrap(), 0.0);
        let p = pair(&[-1.0], &[-2.0], &[false], &[-3.0], &[-2.0], &[false]);
        assert!((pair_logit(&p, &cfg).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(
            pair_logit(&p.swapped(), &cfg).unwrap(),
            -pair_logit(&p, &cfg).unwrap()
        );
    }

    #[test]
    fn loss_examples() {
        let base = DdpoConfig {
            gamma: 1.0,
            alpha: 0.0,
            ..DdpoConfig::default()
        };
        let eq = pair(
            &[-0.3, -2.0],
            &[-0.3, -2.0],
            &[true, false],
            &[-1.0],
            &[-1.0],
            &[true],
        );
        let l = ddpo_loss(&[eq], &base).unwrap();
        assert_eq!(l.loss, std::f64::consts::LN_2);

        let p = pair(
            &[-1.0, -2.5],
            &[-2.0, -2.5],
            &[false, false],
            &[-3.0],
            &[-2.0],
            &[false],
        );
        let l = ddpo_loss(std::slice::from_ref(&p), &base).unwrap();
        assert!((l.loss - 0.598139).abs() < 1e-6);
        let with_sft = DdpoConfig { alpha: 0.1, ..base };
        let l2 = ddpo_loss(&[p], &with_sft).unwrap();
        assert!((l2.loss - 0.948139).abs() < 1e-6);
        assert!((l2.sft_loss - 3.5).abs() < 1e-15);

        assert_eq!(ddpo_loss(&[], &base).unwrap_err(), DdpoError::EmptyBatch);
    }

    #[test]
    fn stable_log_sigmoid() {
        assert_eq!(neg_log_sigmoid(0.0), std::f64::consts::LN_2);
        assert!((neg_log_sigmoid(800.0)).abs() < 1e-300);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn weight_side_chosen_leaves_rejected_plain() {
        let p = pair(&[-1.0], &[-1.0], &[false], &[-3.0], &[-2.0], &[true]);
        let both = pair_terms(&p, &DdpoConfig::default()).unwrap();
        let chosen_only = pair_terms(
            &p,
            &DdpoConfig {
                weight_side: WeightSide::Chosen,
                ..DdpoConfig::default()
            },
        )
        .unwrap();
        assert!((both.reward_rejected - 0.1 * -1.1).abs() < 1e-15);
        assert!((chosen_only.reward_rejected - 0.1 * -1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(DdpoConfig::default().validate().is_ok());
        for bad in [
            DdpoConfig {
                beta: 0.0,
                ..DdpoConfig::default()
            },
            DdpoConfig {
                gamma: -1.0,
                ..DdpoConfig::default()
            },
            DdpoConfig {
                alpha: f64::NAN,
                ..DdpoConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
