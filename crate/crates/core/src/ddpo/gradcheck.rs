//! Central-difference verification of the analytic loss gradient.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::toy::ToyLm;
use super::train::{ToyPair, ToyProblem};
use super::{DdpoConfig, DdpoError};
use crate::diff::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Number of sampled coordinates.
    pub trials: usize,
    pub h: f64,
    pub tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            h: 1e-6,
            tol: 1e-5,
        }
    }
}

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<CoordCheck>,
    pub failures: Vec<CoordCheck>,
    /// Coordinates in rows the batch never reads.
    pub untouched: usize,
    /// Untouched coordinates whose analytic gradient is not exactly zero.
    pub untouched_nonzero: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.untouched_nonzero == 0
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.failures.extend(other.failures);
        self.untouched += other.untouched;
        self.untouched_nonzero += other.untouched_nonzero;
    }
}

/// Compares the analytic gradient at `policy` with central differences on
/// `opts.trials` coordinates sampled from rows the batch reads.
pub fn grad_check<R: Rng + ?Sized>(
    problem: &ToyProblem,
    policy: &ToyLm,
    cfg: &DdpoConfig,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport, DdpoError> {
    let (_, grad) = problem.loss_and_grad(policy, cfg)?;
    let v = policy.vocab();
    let touched = problem.touched_rows();
    let mut candidates = Vec::new();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        failures: Vec::new(),
        untouched: 0,
        untouched_nonzero: 0,
        tol: opts.tol,
    };
    for (r, &t) in touched.iter().enumerate() {
        let coords = r * v..(r + 1) * v;
        if t {
            candidates.extend(coords);
        } else {
            report.untouched += v;
            report.untouched_nonzero += grad[coords].iter().filter(|g| **g != 0.0).count();
        }
    }

    let mut probe = policy.clone();
    for _ in 0..opts.trials {
        let Some(&index) = candidates.choose(rng) else {
            break;
        };
        let orig = probe.logits()[index];
        probe.logits_mut()[index] = orig + opts.h;
        let up = problem.loss(&probe, cfg)?.loss;
        probe.logits_mut()[index] = orig - opts.h;
        let down = problem.loss(&probe, cfg)?.loss;
        probe.logits_mut()[index] = orig;
        let numeric = (up - down) / (2.0 * opts.h);
        let check = CoordCheck {
            index,
            analytic: grad[index],
            numeric,
            rel_err: relative_error(grad[index], numeric),
        };
        report.checked += 1;
        if check.rel_err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(check.rel_err);
            report.worst = Some(check);
        }
        if !(check.rel_err <= opts.tol) {
            report.failures.push(check);
        }
    }
    Ok(report)
}

fn random_seq<R: Rng + ?Sized>(rng: &mut R, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len)
        .map(|_| rng.random_range(0..vocab as TokenId))
        .collect()
}

/// A small random problem with a policy perturbed away from the reference,
/// so that the loss is not at its symmetric point.
pub fn random_problem<R: Rng + ?Sized>(rng: &mut R) -> Result<(ToyProblem, ToyLm), DdpoError> {
    let vocab = rng.random_range(4..=7);
    let order = rng.random_range(2..=3);
    let reference = ToyLm::random(vocab, order, 1.0, rng)?;
    let pairs = (0..rng.random_range(2..=4))
        .map(|_| {
            let context = random_seq(rng, vocab, 2);
            let len = rng.random_range(3..=8);
            let chosen = random_seq(rng, vocab, len);
            let mut rejected = chosen.clone();
            for t in rejected.iter_mut() {
                if rng.random_bool(0.3) {
                    *t = rng.random_range(0..vocab as TokenId);
                }
            }
            if rng.random_bool(0.3) {
                rejected.push(rng.random_range(0..vocab as TokenId));
            }
            ToyPair::new(context, chosen, rejected)
        })
        .collect();
    let problem = ToyProblem::new(reference.clone(), pairs)?;
    let mut policy = reference;
    for w in policy.logits_mut() {
        *w += rng.random_range(-0.5..0.5);
    }
    Ok((problem, policy))
}

/// Runs [`grad_check`] on a fresh random problem for every combination of
/// α ∈ {0, 0.1}, γ ∈ {1, 1.1, 2} and SFT normalization, splitting
/// `opts.trials` across the twelve settings.
pub fn grad_check_grid(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport, DdpoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings: Vec<DdpoConfig> = [0.0, 0.1]
        .into_iter()
        .flat_map(|alpha| {
            [1.0, 1.1, 2.0].into_iter().flat_map(move |gamma| {
                [false, true]
                    .into_iter()
                    .map(move |sft_normalize| DdpoConfig {
                        alpha,
                        gamma,
                        sft_normalize,
                        ..DdpoConfig::default()
                    })
            })
        })
        .collect();
    let per = opts.trials.div_ceil(settings.len());
    let mut total: Option<GradCheckReport> = None;
    for cfg in &settings {
        let (problem, policy) = random_problem(&mut rng)?;
        let r = grad_check(
            &problem,
            &policy,
            cfg,
            &GradCheckOptions {
                trials: per,
                ..*opts
            },
            &mut rng,
        )?;
        match &mut total {
            Some(t) => t.merge(r),
            None => total = Some(r),
        }
    }
    Ok(total.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_passes() {
        let r = grad_check_grid(
            7,
            &GradCheckOptions {
                trials: 240,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.checked >= 240);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (problem, policy) = random_problem(&mut rng).unwrap();
        // Checking a different loss than the one differentiated: compare
        // the gradient at one policy with differences at another.
        let mut other = policy.clone();
        for w in other.logits_mut() {
            *w *= 3.0;
        }
        let cfg = DdpoConfig::default();
        let (_, g1) = problem.loss_and_grad(&policy, &cfg).unwrap();
        let (_, g2) = problem.loss_and_grad(&other, &cfg).unwrap();
        let worst = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| relative_error(*a, *b))
            .fold(0.0, f64::max);
        assert!(worst > 1e-5);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-6).abs() < 1e-18);
    }
}
