mod common;

use std::collections::BTreeSet;

use subsets::combinations;
use ndarray::{array, Axis};
use proptest::prelude::*;
use saln_core::selection::{self, JestState, SelectionConfig, Strategy};
use saln_core::spectral::FeatureBatch;

use common::*;

mod subsets {
    /// All `k`-subsets of `0..n` in lexicographic order.
    pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                go(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        go(0, n, k, &mut Vec::new(), &mut out);
        out
    }
}

fn jest_cfg(filter_ratio: f64) -> SelectionConfig {
    SelectionConfig {
        strategy: Strategy::Jest,
        filter_ratio,
        chunk_count: 1,
        redundancy_weight: 0.0,
        ..SelectionConfig::default()
    }
}

fn enumerate_best(scores: &[f64], k: usize) -> Vec<usize> {
    combinations(scores.len(), k)
        .into_iter()
        .max_by(|a, b| {
            let sa: f64 = a.iter().map(|&i| scores[i]).sum();
            let sb: f64 = b.iter().map(|&i| scores[i]).sum();
            sa.total_cmp(&sb)
        })
        .unwrap()
}

#[test]
fn saln_two_cluster_example_matches_oracle() {
    let batch = FeatureBatch::new(array![[1.0, 0.05], [0.98, 0.1], [0.05, 1.0], [0.1, 0.97]], 0).unwrap();
    let r = selection::saln_select(&batch, &SelectionConfig::new(Strategy::Saln, 0.5)).unwrap();
    // numpy.linalg.eigh ranks |Fiedler| as rows 2, 0, 1, 3.
    assert_eq!(r.indices, vec![0, 2]);
}

#[test]
fn jest_greedy_matches_enumeration_without_redundancy() {
    let batch = FeatureBatch::new(gaussian(4, 3, &mut rng(1)), 0).unwrap();
    let learner = vec![2.0, 1.0, 0.1, 3.0];
    let state = JestState::new(learner.clone(), vec![1.0; 4]);
    let r = selection::jest_select(&batch, &state, &jest_cfg(0.5)).unwrap();
    let learnability: Vec<f64> = learner.iter().map(|l| l - 1.0).collect();
    assert_eq!(r.indices, enumerate_best(&learnability, 2));
    assert_eq!(r.indices, vec![0, 3]);

    let history: BTreeSet<usize> = [3].into_iter().collect();
    let state = state.with_history(vec![0, 1, 2, 3], history);
    let r = selection::jest_select(&batch, &state, &jest_cfg(0.5)).unwrap();
    assert_eq!(r.indices, enumerate_best(&r.scores, 2));
}

#[test]
fn jest_greedy_matches_enumeration_on_random_scores() {
    let mut r = rng(2);
    for trial in 0..50 {
        let batch = FeatureBatch::new(gaussian(7, 3, &mut r), 0).unwrap();
        let learner: Vec<f64> = gaussian(1, 7, &mut r).iter().copied().collect();
        let state = JestState::new(learner.clone(), vec![0.0; 7]);
        let cfg = SelectionConfig { chunk_count: 1 + trial % 3, ..jest_cfg(0.5) };
        let sel = selection::jest_select(&batch, &state, &cfg).unwrap();
        let mut best = enumerate_best(&learner, 3);
        best.sort_unstable();
        assert_eq!(sel.indices, best);
    }
}

#[test]
fn jest_history_suppression_excludes_old_samples() {
    let mut r = rng(4);
    for _ in 0..20 {
        let batch = FeatureBatch::new(gaussian(12, 4, &mut r), 0).unwrap();
        let learner: Vec<f64> = gaussian(1, 12, &mut r).iter().map(|v| 1.0 + v.abs()).collect();
        let history: BTreeSet<usize> = (0..6).map(|i| 100 + 2 * i).collect();
        let ids: Vec<usize> = (100..112).collect();
        let state = JestState::new(learner, vec![0.0; 12]).with_history(ids.clone(), history.clone());
        let cfg = SelectionConfig {
            history_suppression_weight: 1e-9,
            chunk_count: 2,
            ..jest_cfg(0.5)
        };
        let sel = selection::jest_select(&batch, &state, &cfg).unwrap();
        assert!(sel.indices.iter().all(|&i| !history.contains(&ids[i])));
    }
}

#[test]
fn cardinality_uniqueness_range_and_determinism() {
    let mut r = rng(9);
    for n in 2..=65 {
        let x = gaussian(n, 5, &mut r);
        let batch = FeatureBatch::new(x, n as u64).unwrap();
        let losses: Vec<f64> = gaussian(1, n, &mut r).iter().copied().collect();
        let state = JestState::new(losses, vec![0.0; n]);
        for (num, den) in [(0, 1), (1, 5), (1, 2), (4, 5), (99, 100)] {
            let ratio = num as f64 / den as f64;
            let expected = ((n * (den - num)) / den).max(1);
            for strategy in [Strategy::Saln, Strategy::Jest, Strategy::Random] {
                let cfg = SelectionConfig { seed: n as u64, ..SelectionConfig::new(strategy, ratio) };
                let a = selection::select(&batch, &cfg, Some(&state)).unwrap();
                let b = selection::select(&batch, &cfg, Some(&state)).unwrap();
                assert_eq!(a, b);
                assert_eq!(a.indices.len(), expected, "{strategy} n={n} r={ratio}");
                assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
                assert!(a.indices.iter().all(|&i| i < n));
            }
            let std = selection::standard_select(n);
            assert_eq!(std.indices, (0..n).collect::<Vec<_>>());
        }
    }
}

#[test]
fn saln_is_scale_invariant() {
    let mut r = rng(10);
    for _ in 0..50 {
        let x = gaussian(20, 6, &mut r);
        let cfg = SelectionConfig::new(Strategy::Saln, 0.5);
        let a = selection::saln_select(&FeatureBatch::new(x.clone(), 0).unwrap(), &cfg).unwrap();
        let b = selection::saln_select(&FeatureBatch::new(x * 3.7, 0).unwrap(), &cfg).unwrap();
        assert_eq!(a.indices, b.indices);
    }
}

#[test]
fn saln_selection_follows_row_permutations() {
    let mut r = rng(13);
    for _ in 0..30 {
        let x = gaussian(16, 5, &mut r);
        let cfg = SelectionConfig::new(Strategy::Saln, 0.5);
        let a = selection::saln_select(&FeatureBatch::new(x.clone(), 0).unwrap(), &cfg).unwrap();
        let mut perm: Vec<usize> = (0..16).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let b = selection::saln_select(&FeatureBatch::new(x.select(Axis(0), &perm), 0).unwrap(), &cfg).unwrap();
        let mapped: BTreeSet<usize> = b.indices.iter().map(|&i| perm[i]).collect();
        let original: BTreeSet<usize> = a.indices.iter().copied().collect();
        assert_eq!(mapped, original);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jest_is_monotone_in_learnability(
        learn in prop::collection::vec(-3.0f64..3.0, 2..16),
        ratio in 0.0f64..0.95,
    ) {
        let n = learn.len();
        let batch = FeatureBatch::new(gaussian(n, 3, &mut rng(n as u64)), 0).unwrap();
        let state = JestState::new(learn.clone(), vec![0.0; n]);
        let cfg = SelectionConfig { chunk_count: 3, ..jest_cfg(ratio) };
        let sel = selection::jest_select(&batch, &state, &cfg).unwrap();
        let chosen: BTreeSet<usize> = sel.indices.iter().copied().collect();
        for &j in &chosen {
            for i in 0..n {
                if learn[i] > learn[j] {
                    prop_assert!(chosen.contains(&i));
                }
            }
        }
    }

    #[test]
    fn random_select_is_a_valid_subset(n in 1usize..200, ratio in 0.0f64..0.999, seed in any::<u64>()) {
        let cfg = SelectionConfig { seed, ..SelectionConfig::new(Strategy::Random, ratio) };
        let sel = selection::random_select(n, &cfg).unwrap();
        prop_assert_eq!(sel.indices.len(), selection::kept_count(n, ratio));
        prop_assert!(sel.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(sel.indices.iter().all(|&i| i < n));
    }
}
