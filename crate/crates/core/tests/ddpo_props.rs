use kare_core::ddpo::train::{train_toy, SyntheticSpec, TrainOptions};
use kare_core::ddpo::{ddpo_loss, pair_logprob_grads, DdpoConfig, PairLogProbs, WeightSide};
use proptest::prelude::*;

/// Plain DPO on summed log-probs, written without the library's helpers.
fn dpo_oracle(batch: &[PairLogProbs], beta: f64, alpha: f64) -> f64 {
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let total: f64 = batch
        .iter()
        .map(|p| {
            let z = beta
                * ((sum(&p.policy_chosen) - sum(&p.ref_chosen))
                    - (sum(&p.policy_rejected) - sum(&p.ref_rejected)));
            let nll = -sum(&p.policy_chosen);
            (1.0 + (-z).exp()).ln() + alpha * nll
        })
        .sum();
    total / batch.len() as f64
}

fn side(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-6.0f64..-0.01, n),
            prop::collection::vec(-6.0f64..-0.01, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn pair() -> impl Strategy<Value = PairLogProbs> {
    (side(1..12), side(1..12)).prop_map(|((pc, rc, cm), (pr, rr, rm))| PairLogProbs {
        policy_chosen: pc,
        ref_chosen: rc,
        chosen_changed: cm,
        policy_rejected: pr,
        ref_rejected: rr,
        rejected_changed: rm,
    })
}

fn batch() -> impl Strategy<Value = Vec<PairLogProbs>> {
    prop::collection::vec(pair(), 1..6)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn unit_gamma_is_plain_dpo(b in batch(), beta in 0.01f64..1.0, alpha in prop::sample::select(vec![0.0, 0.1, 0.5])) {
        for weight_side in [WeightSide::Both, WeightSide::Chosen] {
            let cfg = DdpoConfig { beta, gamma: 1.0, alpha, sft_normalize: false, weight_side };
            let got = ddpo_loss(&b, &cfg).unwrap().loss;
            let want = dpo_oracle(&b, beta, alpha);
            prop_assert!(close(got, want, 1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn reference_policy_gives_ln2(b in batch(), gamma in 0.5f64..3.0, beta in 0.01f64..1.0) {
        let b: Vec<_> = b
            .into_iter()
            .map(|mut p| {
                p.policy_chosen = p.ref_chosen.clone();
                p.policy_rejected = p.ref_rejected.clone();
                p
            })
            .collect();
        let cfg = DdpoConfig { beta, gamma, alpha: 0.0, ..DdpoConfig::default() };
        let l = ddpo_loss(&b, &cfg).unwrap();
        prop_assert!((l.loss - std::f64::consts::LN_2).abs() <= 1e-12);
        prop_assert_eq!(l.reward_accuracy, 0.0);
    }

    #[test]
    fn swap_negates_logit(p in pair(), gamma in 0.5f64..3.0, beta in 0.01f64..1.0) {
        let cfg = DdpoConfig { beta, gamma, alpha: 0.0, ..DdpoConfig::default() };
        let a = ddpo_loss(std::slice::from_ref(&p), &cfg).unwrap().pairs[0];
        let b = ddpo_loss(&[p.swapped()], &cfg).unwrap().pairs[0];
        prop_assert_eq!(a.logit, -b.logit);
        prop_assert_eq!(a.reward_chosen, b.reward_rejected);
        prop_assert_eq!(a.reward_rejected, b.reward_chosen);
    }

    #[test]
    fn changed_tokens_get_gamma_times_the_pressure(p in pair(), gamma in 1.0f64..3.0) {
        let cfg = DdpoConfig { gamma, alpha: 0.0, ..DdpoConfig::default() };
        let (gc, gr) = pair_logprob_grads(&p, &cfg).unwrap();
        let unit_c = gc.iter().zip(&p.chosen_changed).find(|(_, c)| !**c).map(|(g, _)| *g);
        for (g, &changed) in gc.iter().zip(&p.chosen_changed) {
            prop_assert!(*g <= 0.0);
            if let (true, Some(u)) = (changed, unit_c) {
                prop_assert!(close(*g, gamma * u, 1e-12));
            }
        }
        for g in &gr {
            prop_assert!(*g >= 0.0);
        }
    }

    #[test]
    fn logprob_grads_match_differences(p in pair(), gamma in 0.5f64..3.0, alpha in 0.0f64..0.5, norm in any::<bool>()) {
        let cfg = DdpoConfig { gamma, alpha, sft_normalize: norm, ..DdpoConfig::default() };
        let (gc, gr) = pair_logprob_grads(&p, &cfg).unwrap();
        let h = 1e-6;
        let f = |q: &PairLogProbs| ddpo_loss(std::slice::from_ref(q), &cfg).unwrap().loss;
        for i in 0..p.policy_chosen.len() {
            let (mut up, mut down) = (p.clone(), p.clone());
            up.policy_chosen[i] += h;
            down.policy_chosen[i] -= h;
            let n = (f(&up) - f(&down)) / (2.0 * h);
            prop_assert!((n - gc[i]).abs() <= 1e-6, "chosen {i}: {n} vs {}", gc[i]);
        }
        for i in 0..p.policy_rejected.len() {
            let (mut up, mut down) = (p.clone(), p.clone());
            up.policy_rejected[i] += h;
            down.policy_rejected[i] -= h;
            let n = (f(&up) - f(&down)) / (2.0 * h);
            prop_assert!((n - gr[i]).abs() <= 1e-6, "rejected {i}: {n} vs {}", gr[i]);
        }
    }
}

#[test]
fn seed_42_toy_run_is_frozen() {
    let problem = SyntheticSpec::default().build(42).unwrap();
    let run = |alpha| {
        let cfg = DdpoConfig {
            alpha,
            ..DdpoConfig::default()
        };
        *train_toy(&problem, &cfg, &TrainOptions::default())
            .unwrap()
            .last()
    };
    let plain = run(0.0);
    let with_sft = run(0.1);
    assert!(
        (plain.reward_chosen - -0.09169045121635194).abs() < 1e-9,
        "{plain:?}"
    );
    assert!(
        (with_sft.reward_chosen - 0.46657901790093265).abs() < 1e-9,
        "{with_sft:?}"
    );
    assert_eq!(plain.reward_accuracy, 1.0);
    assert_eq!(with_sft.reward_accuracy, 1.0);
    assert!(plain.reward_chosen < 0.0);
    assert!(with_sft.reward_chosen > plain.reward_chosen);
}
