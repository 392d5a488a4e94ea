mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbm_mcem::metrics::{align_to, hungarian, mmd, nmi, param_error};
use sbm_mcem::Labels;

fn permutation(k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_is_invisible_to_nmi_and_mmd(n in 2usize..60, k in 2usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_labels(k, n, &mut rng);
        let w = random_labels(k, n, &mut rng);
        let p = permutation(k, seed);
        prop_assert_eq!(mmd(&z, &z.relabeled(&p)).unwrap(), 0.0);
        let a = nmi(&z, &w).unwrap();
        let b = nmi(&z.relabeled(&p), &w).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert!((a - nmi(&w, &z).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_is_at_most_the_raw_mismatch(n in 2usize..60, k in 2usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_labels(k, n, &mut rng);
        let w = random_labels(k, n, &mut rng);
        let raw = (0..n).filter(|&i| z.get(i) != w.get(i)).count() as f64 / n as f64;
        let m = mmd(&z, &w).unwrap();
        prop_assert!(m <= raw + 1e-12);
        prop_assert!(m <= 1.0 - 1.0 / k as f64 + 1e-12);
    }

    #[test]
    fn hungarian_matches_brute_force(k in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..10.0)).collect();
        let total = |p: &[usize]| (0..k).map(|r| cost[r * k + p[r]]).sum::<f64>();
        let got = total(&hungarian(&cost, k));
        let mut best = f64::INFINITY;
        let mut p: Vec<usize> = (0..k).collect();
        permute(&mut p, 0, &mut |q| best = best.min(total(q)));
        prop_assert!((got - best).abs() < 1e-9);
    }

    #[test]
    fn alignment_undoes_a_relabeling(k in 2usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_params(k, 1, &mut rng);
        let p = permutation(k, seed);
        let shuffled = truth.permuted(&p);
        let back = shuffled.permuted(&align_to(&shuffled, &truth));
        prop_assert!(back.max_abs_diff(&truth) < 1e-12);
        let err = param_error(&shuffled, &truth, true).unwrap();
        prop_assert!(err.err_theta < 1e-12 && err.err_pi < 1e-12);
    }
}

fn permute(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, f);
        p.swap(at, i);
    }
}

#[test]
fn pi_settles_ties_in_theta() {
    let theta = vec![vec![1.0, -2.0, -2.0], vec![-2.0, 1.0, -2.0], vec![-2.0, -2.0, 1.0]];
    let truth = sbm_mcem::Params::from_rows(&theta, vec![], vec![0.5, 0.3, 0.2]).unwrap();
    let est = sbm_mcem::Params::from_rows(&theta, vec![], vec![0.2, 0.5, 0.3]).unwrap();
    let err = param_error(&est, &truth, true).unwrap();
    assert!(err.err_pi < 1e-12);
}

#[test]
fn nmi_known_values() {
    let a = Labels::new(2, vec![0, 0, 1, 1]).unwrap();
    let b = Labels::new(2, vec![0, 1, 0, 1]).unwrap();
    assert!(nmi(&a, &b).unwrap().abs() < 1e-12);
    assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(mmd(&a, &b).unwrap(), 0.5);
}
