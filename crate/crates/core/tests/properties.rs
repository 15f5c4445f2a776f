use proptest::prelude::*;

use logistic_lda::data_io::{Corpus, PayloadSpec};
use logistic_lda::encoders::{EncoderParams, Item, Table};
use logistic_lda::eval::{majority_vote, match_topics};
use logistic_lda::lda::{gibbs_sweep, GibbsState};
use logistic_lda::math::{digamma, log_sum_exp, softmax, trigamma, PositiveVector, SeededRng};
use logistic_lda::mean_field::{elbo, init_state, item_logits, sweep, Group, HyperParams, UpdateOrder};
use logistic_lda::regularizer::{bound_value, regularizer_value, responsibilities};
use logistic_lda::training::predict_group;

fn logits(k: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, k)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..k {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

/// A random token group together with a table encoder and hyperparameters.
fn token_model() -> impl Strategy<Value = (Group<f64>, EncoderParams<f64>, HyperParams<f64>)> {
    (2..5usize, 2..8usize).prop_flat_map(|(k, v)| {
        (
            prop::collection::vec(0..v, 1..10),
            prop::collection::vec(-4.0..4.0f64, k * v),
            prop::collection::vec(0.05..3.0f64, k),
            0.0..3.0f64,
            prop::option::of(0..k),
        )
            .prop_map(move |(tokens, table, alpha, lambda, label)| {
                let group = Group::new("g", tokens.into_iter().map(Item::Token).collect(), label).unwrap();
                let theta = EncoderParams::Table(Table::new(k, v, table).unwrap());
                let hyper = HyperParams {
                    alpha: PositiveVector::new(alpha).unwrap(),
                    lambda,
                    ..HyperParams::with_topics(k).unwrap()
                };
                (group, theta, hyper)
            })
    })
}

proptest! {
    #[test]
    fn softmax_matches_direct_formula(x in logits(1..12)) {
        let p = softmax(&x).unwrap();
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
        for (pi, xi) in p.as_slice().iter().zip(&x) {
            prop_assert!((pi - (xi - m).exp() / z).abs() < 1e-14);
            prop_assert!(*pi >= 0.0);
        }
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_shifts(x in logits(1..12), c in -100.0..100.0f64) {
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let (a, b) = (softmax(&x).unwrap(), softmax(&shifted).unwrap());
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_is_between_max_and_max_plus_log_n(x in logits(1..12)) {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&x).unwrap();
        prop_assert!(l >= m - 1e-12);
        prop_assert!(l <= m + (x.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn polygamma_recurrences(x in 1e-3..1e4f64) {
        let d = digamma(x).unwrap();
        prop_assert!((digamma(x + 1.0).unwrap() - d - 1.0 / x).abs() <= 1e-12 * d.abs().max(1.0));
        let t = trigamma(x).unwrap();
        prop_assert!((t - trigamma(x + 1.0).unwrap() - 1.0 / (x * x)).abs() <= 1e-12 * t.abs().max(1.0));
        prop_assert!(t > 0.0);
    }

    #[test]
    fn majority_vote_agrees_with_histogram(votes in prop::collection::vec(0..6usize, 1..40)) {
        let mut hist = [0usize; 6];
        votes.iter().for_each(|v| hist[*v] += 1);
        let top = *hist.iter().max().unwrap();
        let expected = hist.iter().position(|c| *c == top).unwrap();
        prop_assert_eq!(majority_vote(&votes).unwrap(), expected);
    }

    #[test]
    fn matching_is_optimal_and_permutation_invariant(
        k in 1..5usize,
        cells in prop::collection::vec(0..20u64, 16),
        seed in any::<u64>(),
    ) {
        let m: Vec<Vec<u64>> = (0..k).map(|r| cells[r * k..(r + 1) * k].to_vec()).collect();
        let total: u64 = m.iter().flatten().sum();
        prop_assume!(total > 0);
        let brute = permutations(k)
            .iter()
            .map(|p| (0..k).map(|t| m[t][p[t]]).sum::<u64>())
            .max()
            .unwrap();
        let matched = match_topics(&m).unwrap();
        prop_assert!((matched.accuracy - brute as f64 / total as f64).abs() < 1e-15);
        let mut seen = matched.assignment.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());

        let mut perm: Vec<usize> = (0..k).collect();
        SeededRng::new(seed).shuffle(&mut perm);
        let shuffled: Vec<Vec<u64>> = m.iter().map(|row| perm.iter().map(|c| row[*c]).collect()).collect();
        prop_assert_eq!(match_topics(&shuffled).unwrap().accuracy, matched.accuracy);
    }

    #[test]
    fn sweeps_never_lower_the_elbo((group, theta, hyper) in token_model(), clamp in any::<bool>()) {
        let f = item_logits(&group, &theta).unwrap();
        let mut state = init_state(&group, &hyper, clamp).unwrap();
        let mut last = elbo(&group, &state, &theta, &hyper).unwrap();
        for _ in 0..8 {
            sweep(&mut state, &f, &hyper, UpdateOrder::default()).unwrap();
            let now = elbo(&group, &state, &theta, &hyper).unwrap();
            prop_assert!(now >= last - 1e-9 * last.abs().max(1.0));
            last = now;
        }
    }

    #[test]
    fn beliefs_stay_on_the_simplex((group, theta, hyper) in token_model()) {
        let pred = predict_group(&group, &theta, &hyper).unwrap();
        let on_simplex = |p: &[f64]| p.iter().all(|v| *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        prop_assert!(on_simplex(pred.p_group.as_slice()));
        prop_assert_eq!(pred.p_items.len(), group.len());
        for p in &pred.p_items {
            prop_assert!(on_simplex(p.as_slice()));
        }
        prop_assert!(pred.label < hyper.num_topics());
    }

    #[test]
    fn alpha_hat_dominates_the_prior((group, theta, hyper) in token_model()) {
        let f = item_logits(&group, &theta).unwrap();
        let mut state = init_state(&group, &hyper, false).unwrap();
        sweep(&mut state, &f, &hyper, UpdateOrder::default()).unwrap();
        let added: f64 = state.alpha_hat().as_slice().iter().zip(hyper.alpha.as_slice()).map(|(a, b)| a - b).sum();
        prop_assert!(state.alpha_hat().as_slice().iter().zip(hyper.alpha.as_slice()).all(|(a, b)| a >= b));
        // items contribute N and the label belief contributes λ
        prop_assert!((added - group.len() as f64 - hyper.lambda).abs() < 1e-9);
    }

    #[test]
    fn responsibilities_normalize_per_topic(
        rows in prop::collection::vec(logits(3..4), 1..20),
        gamma in 0.0..10.0f64,
    ) {
        let r = responsibilities(&rows).unwrap();
        for k in 0..3 {
            let col: f64 = r.iter().map(|row| row[k]).sum();
            prop_assert!((col - 1.0).abs() < 1e-12);
        }
        // the bound is tight at the responsibilities
        let exact = regularizer_value(&rows, gamma).unwrap();
        let bound = bound_value(&rows, &r, gamma).unwrap();
        prop_assert!((exact - bound).abs() <= 1e-9 * exact.abs().max(1.0));
    }

    #[test]
    fn gibbs_counts_stay_consistent(
        docs in prop::collection::vec(prop::collection::vec(0..6usize, 1..8), 1..5),
        seed in any::<u64>(),
    ) {
        let groups = docs
            .iter()
            .enumerate()
            .map(|(d, toks)| Group::new(format!("d{d}"), toks.iter().map(|t| Item::Token(*t)).collect(), None).unwrap())
            .collect();
        let corpus = Corpus::new(groups, 3, PayloadSpec::Token { vocab_size: 6 }, None).unwrap();
        let mut rng = SeededRng::new(seed);
        let mut state = GibbsState::random_init(&corpus, vec![0.5; 3], 0.1, 0.0, &mut rng).unwrap();
        for _ in 0..5 {
            gibbs_sweep(&mut state, &mut rng).unwrap();
            prop_assert!(state.counts_consistent());
        }
        prop_assert_eq!(state.n_k.iter().sum::<usize>(), docs.iter().map(Vec::len).sum::<usize>());
    }
}
