use std::collections::{BTreeSet, HashSet};

use mmrec::dataset::{Dataset, Entity, Interactions};
use mmrec::rng::SeededRng;
use mmrec::splits::*;
use proptest::prelude::*;

fn random_dataset(seed: u64, n_users: usize, n_items: usize, per_user: usize) -> Dataset {
    let mut rng = SeededRng::new(seed, "data");
    let mut pairs = Vec::new();
    for u in 0..n_users {
        let k = 1 + rng.below(per_user);
        for i in rng.sample_indices(n_items, k.min(n_items)) {
            pairs.push((u, i));
        }
    }
    Dataset::from_pairs(n_users, n_items, &pairs).unwrap()
}

fn user_counts(pairs: &[(usize, usize)], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for &(u, _) in pairs {
        c[u] += 1;
    }
    c
}

#[test]
fn ten_interactions_split_eight_one_one() {
    // five users share all ten items, so no held-out item lacks a train copy
    let pairs: Vec<(usize, usize)> = (0..5).flat_map(|u| (0..10).map(move |i| (u, i))).collect();
    let data = Dataset::from_pairs(5, 10, &pairs).unwrap();
    let s = split_warm(&data, DEFAULT_RATIOS, 3).unwrap();
    let c = [user_counts(&s.train, 5), user_counts(&s.val, 5), user_counts(&s.test, 5)];
    for u in 0..5 {
        assert_eq!((c[0][u], c[1][u], c[2][u]), (8, 1, 1), "user {u}");
    }
}

#[test]
fn lone_user_items_are_repaired_into_train() {
    let data = Dataset::from_pairs(1, 10, &(0..10).map(|i| (0, i)).collect::<Vec<_>>()).unwrap();
    let s = split_warm(&data, DEFAULT_RATIOS, 0).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 0, 0));
}

#[test]
fn five_interactions_stay_in_train() {
    let pairs: Vec<(usize, usize)> = (0..5).map(|i| (0, i)).collect();
    let data = Dataset::from_pairs(1, 5, &pairs).unwrap();
    let s = split_warm(&data, DEFAULT_RATIOS, 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 0, 0));
}

#[test]
fn warm_split_invariants() {
    let data = random_dataset(1, 60, 80, 30);
    let a = split_warm(&data, DEFAULT_RATIOS, 9).unwrap();
    let b = split_warm(&data, DEFAULT_RATIOS, 9).unwrap();
    let c = split_warm(&data, DEFAULT_RATIOS, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.test, c.test);
    assert_eq!(a.train.len() + a.val.len() + a.test.len(), data.interactions().len());
    let sets: Vec<HashSet<_>> = [&a.train, &a.val, &a.test].iter().map(|p| p.iter().copied().collect()).collect();
    assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
    let train_users: HashSet<usize> = a.train.iter().map(|p| p.0).collect();
    let train_items: HashSet<usize> = a.train.iter().map(|p| p.1).collect();
    for &(u, i) in a.val.iter().chain(&a.test) {
        assert!(train_users.contains(&u) && train_items.contains(&i));
    }
}

#[test]
fn cold_splits_are_entity_disjoint() {
    let data = random_dataset(2, 40, 50, 15);
    for (entity, scenario) in [(Entity::User, Scenario::UserCold), (Entity::Item, Scenario::ItemCold)] {
        let s = split_cold(&data, entity, DEFAULT_RATIOS, 4).unwrap();
        assert_eq!(s.scenario, scenario);
        let key = |p: &(usize, usize)| if entity == Entity::User { p.0 } else { p.1 };
        let parts: Vec<BTreeSet<usize>> = [&s.train, &s.val, &s.test].iter().map(|p| p.iter().map(key).collect()).collect();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(parts[a].is_disjoint(&parts[b]));
            }
        }
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), data.interactions().len());
        assert_eq!(s, split_cold(&data, entity, DEFAULT_RATIOS, 4).unwrap());
        let test: BTreeSet<usize> = s.test_entities.iter().copied().collect();
        assert!(parts[2].is_subset(&test));
    }
}

#[test]
fn ten_users_partition_eight_one_one() {
    let pairs: Vec<(usize, usize)> = (0..10).flat_map(|u| (0..3).map(move |i| (u, (u + i) % 6))).collect();
    let data = Dataset::from_pairs(10, 6, &pairs).unwrap();
    let s = split_cold(&data, Entity::User, DEFAULT_RATIOS, 0).unwrap();
    assert_eq!((s.val_entities.len(), s.test_entities.len()), (1, 1));
    let train_users: BTreeSet<usize> = s.train.iter().map(|p| p.0).collect();
    assert_eq!(train_users.len(), 8);
    let u = s.test_entities[0];
    assert_eq!(s.test.iter().filter(|p| p.0 == u).count(), 3);
    let small = Dataset::from_pairs(5, 6, &pairs[..15]).unwrap();
    assert!(split_cold(&small, Entity::User, DEFAULT_RATIOS, 0).is_err());
}

#[test]
fn item_cold_candidates_are_the_phase_items() {
    let data = random_dataset(3, 30, 40, 12);
    let s = split_cold(&data, Entity::Item, DEFAULT_RATIOS, 1).unwrap();
    let mut expected = s.test_entities.clone();
    expected.sort_unstable();
    assert_eq!(s.candidate_items(Phase::Test), expected);
    let pool = s.train_item_pool();
    assert!(pool.iter().all(|i| !s.test_entities.contains(i) && !s.val_entities.contains(i)));
}

#[test]
fn split_round_trip() {
    let data = random_dataset(4, 30, 30, 10);
    let dir = tempfile::tempdir().unwrap();
    for s in [
        split_warm(&data, DEFAULT_RATIOS, 1).unwrap(),
        split_cold(&data, Entity::Item, DEFAULT_RATIOS, 1).unwrap(),
    ] {
        save_split(dir.path(), &s).unwrap();
        assert_eq!(load_split(dir.path()).unwrap(), s);
    }
}

#[test]
fn forced_negative() {
    let pairs: Vec<(usize, usize)> = (0..10).filter(|&i| i != 7).map(|i| (0, i)).collect();
    let train = Interactions::from_pairs(1, 10, &pairs).unwrap();
    let mut rng = SeededRng::new(0, "neg");
    assert_eq!(sample_negatives(0, 3, &train, 10, &mut rng).unwrap(), vec![7, 7, 7]);
    let full = Interactions::from_pairs(1, 3, &[(0, 0), (0, 1), (0, 2)]).unwrap();
    assert!(sample_negatives(0, 1, &full, 3, &mut rng).is_err());
}

#[test]
fn negatives_are_uniform() {
    let train = Interactions::from_pairs(1, 6, &[(0, 0), (0, 3)]).unwrap();
    let mut rng = SeededRng::new(1, "neg");
    let mut counts = [0usize; 6];
    let draws = 100_000;
    for _ in 0..draws {
        counts[sample_negatives(0, 1, &train, 6, &mut rng).unwrap()[0]] += 1;
    }
    assert_eq!((counts[0], counts[3]), (0, 0));
    for i in [1, 2, 4, 5] {
        let f = counts[i] as f64 / draws as f64;
        assert!((f - 0.25).abs() < 0.005, "{f}");
    }
    assert_eq!(sample_negatives(0, 10, &train, 6, &mut rng).unwrap().len(), 10);
}

#[test]
fn modality_sampling() {
    let mut rng = SeededRng::new(2, "mods");
    assert_eq!(sample_modalities(&["audio"], 1, &mut rng).unwrap(), vec!["audio"]);
    for _ in 0..100 {
        let p = sample_modalities(&["a", "b"], 2, &mut rng).unwrap();
        assert_ne!(p[0], p[1]);
    }
    assert!(sample_modalities(&["a"], 2, &mut rng).is_err());
    let mods = [0usize, 1, 2, 3, 4];
    let mut counts = std::collections::HashMap::new();
    let draws = 100_000;
    for _ in 0..draws {
        let mut p = sample_modalities(&mods, 2, &mut rng).unwrap();
        p.sort_unstable();
        *counts.entry((p[0], p[1])).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 10);
    for c in counts.values() {
        assert!((*c as f64 / draws as f64 - 0.1).abs() < 0.01);
    }
}

#[test]
fn batches_cover_the_epoch() {
    let pairs: Vec<(usize, usize)> = (0..10).map(|i| (i, i)).collect();
    let b = make_batches(&pairs, 4, 3);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    let mut all: Vec<_> = b.concat();
    all.sort_unstable();
    assert_eq!(all, pairs);
    assert_eq!(make_batches(&pairs, 4, 3), b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn negatives_avoid_train_positives(seed in any::<u64>()) {
        let data = random_dataset(seed, 8, 12, 10);
        let train = data.interactions();
        let mut rng = SeededRng::new(seed, "prop-neg");
        for u in 0..8 {
            if train.user_items(u).len() == 12 {
                continue;
            }
            for i in sample_negatives(u, 10, train, 12, &mut rng).unwrap() {
                prop_assert!(!train.contains(u, i));
            }
        }
    }

    #[test]
    fn warm_split_preserves_counts(seed in any::<u64>()) {
        let data = random_dataset(seed, 15, 20, 12);
        let s = split_warm(&data, DEFAULT_RATIOS, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), data.interactions().len());
    }
}
