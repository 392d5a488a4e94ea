mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbm_mcem::{
    cc_log_lik, complete_log_lik, draw_plan, node_cond_log_lik, DyadCovariates, PlanMode,
};

fn instance(n: usize, k: usize, seed: u64) -> (sbm_mcem::Network, DyadCovariates, sbm_mcem::Params, sbm_mcem::Labels) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_network(n, 0.3, &mut rng);
    let cov = DyadCovariates::seeded_bernoulli(n, 2, 0.5, seed ^ 0x55).unwrap();
    let params = random_params(k, 2, &mut rng);
    let labels = random_labels(k, n, &mut rng);
    (net, cov, params, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn complete_matches_pairwise_sum(n in 2usize..25, k in 1usize..5, seed in any::<u64>()) {
        let (net, cov, params, labels) = instance(n, k, seed);
        let fast = complete_log_lik(&params, &net, &cov, &labels).unwrap();
        let slow = naive_complete(&params, &net, &cov, &labels);
        prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }

    #[test]
    fn exhaustive_plan_is_exact(n in 2usize..25, k in 1usize..4, seed in any::<u64>()) {
        let (net, cov, params, labels) = instance(n, k, seed);
        let plan = draw_plan(&net, &labels, n, seed).unwrap();
        prop_assert!(plan.is_exhaustive());
        let exact = complete_log_lik(&params, &net, &cov, &labels).unwrap();
        for mode in [PlanMode::Stale, PlanMode::Strict] {
            let cc = cc_log_lik(&params, &net, &cov, &labels, &plan, mode).unwrap();
            prop_assert!((cc - exact).abs() <= 1e-9 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn conditional_differences_match_complete(n in 2usize..20, k in 2usize..4, seed in any::<u64>(), node in any::<prop::sample::Index>()) {
        let (net, cov, params, labels) = instance(n, k, seed);
        let i = node.index(n);
        let mut scores = Vec::new();
        let mut totals = Vec::new();
        for g in 0..k {
            scores.push(node_cond_log_lik(&params, &net, &cov, &labels, i, g, None).unwrap());
            let mut z = labels.clone();
            z.set(i, g);
            totals.push(naive_complete(&params, &net, &cov, &z));
        }
        for g in 1..k {
            let a = scores[g] - scores[0];
            let b = totals[g] - totals[0];
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn relabeling_groups_leaves_the_likelihood_unchanged(n in 2usize..20, seed in any::<u64>(), shift in 0usize..3) {
        let k = 3;
        let (net, cov, params, labels) = instance(n, k, seed);
        let perm: Vec<usize> = (0..k).map(|a| (a + shift) % k).collect();
        let mut inverse = vec![0; k];
        for (a, &b) in perm.iter().enumerate() {
            inverse[b] = a;
        }
        let before = complete_log_lik(&params, &net, &cov, &labels).unwrap();
        let after = complete_log_lik(&params.permuted(&perm), &net, &cov, &labels.relabeled(&inverse)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before.abs()));
    }

    #[test]
    fn plan_controls_are_non_neighbors_in_their_group(n in 3usize..30, k in 1usize..4, m0 in 1usize..6, seed in any::<u64>()) {
        let (net, _, _, labels) = instance(n, k, seed);
        let plan = draw_plan(&net, &labels, m0, seed).unwrap();
        for i in 0..n {
            for g in 0..k {
                let pool = (0..n).filter(|&j| j != i && !net.has_edge(i, j) && labels.get(j) == g).count();
                prop_assert_eq!(plan.non_neighbor_count(i, g), pool);
                for &j in plan.controls(i, g) {
                    let j = j as usize;
                    prop_assert!(j != i && !net.has_edge(i, j) && labels.get(j) == g);
                }
                if pool <= m0 {
                    prop_assert_eq!(plan.controls(i, g).len(), pool);
                } else {
                    prop_assert_eq!(plan.controls(i, g).len(), m0);
                }
            }
        }
    }
}

#[test]
fn complete_sums_to_one_over_labelings_and_graphs() {
    // With K = 1 and no covariates the likelihood of every graph on four
    // nodes must add up to one.
    let n = 4;
    let params = sbm_mcem::Params::new(1, vec![-0.4], vec![], vec![1.0]).unwrap();
    let cov = DyadCovariates::none(n);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let labels = sbm_mcem::Labels::constant(1, n);
    let mut logs = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges = pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e);
        let net = sbm_mcem::Network::from_edges(n, edges).unwrap();
        logs.push(complete_log_lik(&params, &net, &cov, &labels).unwrap());
    }
    assert!(log_sum_exp(&logs).abs() < 1e-12);
}

#[test]
fn sampled_plan_is_unbiased_on_average() {
    let n = 60;
    let (net, cov, params, labels) = instance(n, 2, 11);
    let exact = complete_log_lik(&params, &net, &cov, &labels).unwrap();
    let reps = 400;
    let mean = (0..reps)
        .map(|s| {
            let plan = draw_plan(&net, &labels, 4, 1000 + s).unwrap();
            cc_log_lik(&params, &net, &cov, &labels, &plan, PlanMode::Stale).unwrap()
        })
        .sum::<f64>()
        / reps as f64;
    assert!((mean - exact).abs() < 0.01 * exact.abs(), "{mean} vs {exact}");
}
