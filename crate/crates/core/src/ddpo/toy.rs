//! A causal n-gram language model whose parameters are a table of logits,
//! one row of `V` logits per context window of the previous `n − 1` tokens.
//! Positions before the start of the sequence are filled with the padding
//! id `V`, so there are `(V + 1)^(n − 1)` rows.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DdpoError;
use crate::diff::TokenId;

/// Upper bound on the number of table entries.
pub const MAX_PARAMS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    #[serde(rename = "V")]
    vocab: usize,
    #[serde(rename = "n")]
    order: usize,
    logits: Vec<f64>,
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

impl ToyLm {
    /// All-zero (uniform) table.
    pub fn new(vocab: usize, order: usize) -> Result<Self, DdpoError> {
        if vocab == 0 || order == 0 {
            return Err(DdpoError::InvalidConfig(
                "vocabulary size and order must be positive".into(),
            ));
        }
        let params = (vocab + 1)
            .checked_pow((order - 1) as u32)
            .and_then(|rows| rows.checked_mul(vocab))
            .filter(|&p| p <= MAX_PARAMS)
            .ok_or(DdpoError::VocabOverflow {
                needed: vocab,
                limit: MAX_PARAMS,
            })?;
        Ok(Self {
            vocab,
            order,
            logits: vec![0.0; params],
        })
    }

    /// Logits drawn from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(
        vocab: usize,
        order: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, DdpoError> {
        let mut lm = Self::new(vocab, order)?;
        let normal = Normal::new(0.0, scale)
            .map_err(|e| DdpoError::InvalidConfig(format!("logit scale: {e}")))?;
        for v in &mut lm.logits {
            *v = normal.sample(rng);
        }
        Ok(lm)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.logits.len() / self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.logits[r * self.vocab..(r + 1) * self.vocab]
    }

    /// Row index of the context window ending just before position `t` of
    /// `seq`.
    pub fn row_at(&self, seq: &[TokenId], t: usize) -> usize {
        let pad = self.vocab;
        let mut r = 0;
        for k in (1..self.order).rev() {
            let tok = if t >= k { seq[t - k] as usize } else { pad };
            r = r * (self.vocab + 1) + tok;
        }
        r
    }

    /// Log-probabilities of every token under row `r`.
    pub fn log_softmax(&self, r: usize) -> Vec<f64> {
        let row = self.row(r);
        let lse = log_sum_exp(row);
        row.iter().map(|&x| x - lse).collect()
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), DdpoError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab) {
            Some(&token) => Err(DdpoError::TokenOutOfRange {
                token,
                vocab: self.vocab,
            }),
            None => Ok(()),
        }
    }

    fn joined(&self, context: &[TokenId], response: &[TokenId]) -> Result<Vec<TokenId>, DdpoError> {
        self.check_tokens(context)?;
        self.check_tokens(response)?;
        Ok(context.iter().chain(response).copied().collect())
    }

    /// Teacher-forced `log p(y_t | x, y_<t)` for each response token.
    pub fn logprobs(
        &self,
        context: &[TokenId],
        response: &[TokenId],
    ) -> Result<Vec<f64>, DdpoError> {
        let seq = self.joined(context, response)?;
        Ok((context.len()..seq.len())
            .map(|t| {
                let r = self.row_at(&seq, t);
                let row = self.row(r);
                row[seq[t] as usize] - log_sum_exp(row)
            })
            .collect())
    }

    /// Adds `Σ_t coeffs[t] · ∂ log p(y_t | ·)/∂θ` to `grad`, which has one
    /// entry per table logit.
    pub fn accumulate_grad(
        &self,
        context: &[TokenId],
        response: &[TokenId],
        coeffs: &[f64],
        grad: &mut [f64],
    ) -> Result<(), DdpoError> {
        if coeffs.len() != response.len() {
            return Err(DdpoError::LengthMismatch {
                what: "gradient coefficients",
                left: coeffs.len(),
                right: response.len(),
            });
        }
        if grad.len() != self.logits.len() {
            return Err(DdpoError::LengthMismatch {
                what: "gradient buffer",
                left: grad.len(),
                right: self.logits.len(),
            });
        }
        let seq = self.joined(context, response)?;
        let v = self.vocab;
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let t = context.len() + i;
            let r = self.row_at(&seq, t);
            let probs = self.log_softmax(r);
            let g = &mut grad[r * v..(r + 1) * v];
            for (k, lp) in probs.iter().enumerate() {
                g[k] -= c * lp.exp();
            }
            g[seq[t] as usize] += c;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let lm: ToyLm = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let expected = ToyLm::new(lm.vocab, lm.order)?.logits.len();
        if lm.logits.len() != expected {
            return Err(DdpoError::InvalidCheckpoint(format!(
                "expected {expected} logits, found {}",
                lm.logits.len()
            ))
            .into());
        }
        Ok(lm)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn uniform_table() {
        let lm = ToyLm::new(5, 2).unwrap();
        assert_eq!(lm.rows(), 6);
        let lp = lm.logprobs(&[1], &[0, 4, 2]).unwrap();
        assert_eq!(lp.len(), 3);
        for v in lp {
            assert!((v - (1.0f64 / 5.0).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_token_row() {
        let mut lm = ToyLm::new(2, 2).unwrap();
        // row for context token 0
        lm.logits_mut()[1] = 3f64.ln();
        let lp = lm.logprobs(&[0], &[1]).unwrap();
        assert!((lp[0] - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lm = ToyLm::random(7, 3, 2.0, &mut rng).unwrap();
        assert_eq!(lm.rows(), 64);
        for r in 0..lm.rows() {
            let s: f64 = lm.log_softmax(r).iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_rows() {
        let lm = ToyLm::new(3, 3).unwrap();
        // empty history -> (pad, pad)
        assert_eq!(lm.row_at(&[], 0), 3 * 4 + 3);
        assert_eq!(lm.row_at(&[2], 1), 3 * 4 + 2);
        assert_eq!(lm.row_at(&[2, 1], 2), 2 * 4 + 1);
    }

    #[test]
    fn out_of_range() {
        let lm = ToyLm::new(3, 2).unwrap();
        assert_eq!(
            lm.logprobs(&[], &[3]).unwrap_err(),
            DdpoError::TokenOutOfRange { token: 3, vocab: 3 }
        );
    }

    #[test]
    fn overflow() {
        assert!(matches!(
            ToyLm::new(1000, 4),
            Err(DdpoError::VocabOverflow { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lm = ToyLm::random(4, 2, 1.0, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        lm.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"V\":4,\"n\":2,"));
        assert_eq!(ToyLm::load(&path).unwrap(), lm);
    }
}
