use mmrec::gap::*;
use mmrec::rng::SeededRng;
use proptest::prelude::*;

fn bank(mods: usize, items: usize, dim: usize, rng: &mut SeededRng) -> EmbeddingBank {
    let embs = (0..mods)
        .map(|_| (0..items * dim).map(|_| rng.normal()).collect())
        .collect();
    EmbeddingBank::new(
        (0..mods).map(|m| format!("m{m}")).collect(),
        dim,
        (0..items).collect(),
        embs,
    )
    .unwrap()
}

fn brute_intra(b: &EmbeddingBank, f: Measure) -> f64 {
    let m = b.n_modalities();
    let mut total = 0.0;
    for r in 0..b.n_items() {
        let mut s = 0.0;
        let mut count = 0;
        for k in 0..m {
            for l in 0..m {
                if k < l {
                    s += f.eval(b.row(k, r), b.row(l, r));
                    count += 1;
                }
            }
        }
        total += s / count as f64;
    }
    total / b.n_items() as f64
}

fn brute_inter(b: &EmbeddingBank, f: Measure) -> f64 {
    let n = b.n_items();
    let mut total = 0.0;
    for k in 0..b.n_modalities() {
        let mut s = 0.0;
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    s += f.eval(b.row(k, i), b.row(k, j));
                    count += 1;
                }
            }
        }
        total += s / count as f64;
    }
    total / b.n_modalities() as f64
}

#[test]
fn identical_modalities() {
    let mut rng = SeededRng::new(1, "gap");
    let one = bank(1, 6, 4, &mut rng);
    let twin = EmbeddingBank::new(
        vec!["a".into(), "b".into()],
        4,
        one.items.clone(),
        vec![one.embs[0].clone(), one.embs[0].clone()],
    )
    .unwrap();
    assert!((intra_metric(&twin, Measure::Cosine).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(intra_metric(&twin, Measure::Euclidean).unwrap(), 0.0);
}

#[test]
fn three_four_five() {
    let b = EmbeddingBank::new(vec!["a".into(), "b".into()], 2, vec![0], vec![vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(intra_metric(&b, Measure::Euclidean).unwrap(), 5.0);
}

#[test]
fn orthonormal_pair() {
    let b = EmbeddingBank::new(vec!["a".into()], 2, vec![0, 1], vec![vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
    assert_eq!(inter_metric(&b, Measure::Cosine).unwrap(), 0.0);
    assert!((inter_metric(&b, Measure::Euclidean).unwrap() - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn degenerate_bank_inter() {
    let b = EmbeddingBank::new(vec!["a".into()], 2, vec![0, 1, 2], vec![[0.5, -1.0].repeat(3)]).unwrap();
    assert_eq!(inter_metric(&b, Measure::Euclidean).unwrap(), 0.0);
    assert!((inter_metric(&b, Measure::Cosine).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn metrics_match_pair_enumeration() {
    let mut rng = SeededRng::new(2, "gap");
    for _ in 0..20 {
        let b = bank(3, 5, 4, &mut rng);
        for f in [Measure::Euclidean, Measure::Cosine] {
            assert!((intra_metric(&b, f).unwrap() - brute_intra(&b, f)).abs() < 1e-6);
            assert!((inter_metric(&b, f).unwrap() - brute_inter(&b, f)).abs() < 1e-6);
        }
    }
}

#[test]
fn errors_on_degenerate_shapes() {
    let mut rng = SeededRng::new(3, "gap");
    assert!(intra_metric(&bank(1, 5, 3, &mut rng), Measure::Cosine).is_err());
    assert!(inter_metric(&bank(2, 1, 3, &mut rng), Measure::Cosine).is_err());
    assert!(EmbeddingBank::new(vec!["a".into()], 3, vec![0], vec![vec![1.0]]).is_err());
}

#[test]
fn rescaling() {
    let mut rng = SeededRng::new(4, "gap");
    let b = bank(3, 8, 5, &mut rng);
    let mut scaled = b.clone();
    for m in scaled.embs.iter_mut() {
        m.iter_mut().for_each(|v| *v *= 3.0);
    }
    for f in [intra_metric as fn(&EmbeddingBank, Measure) -> mmrec::Result<f64>, inter_metric] {
        assert!((f(&b, Measure::Cosine).unwrap() - f(&scaled, Measure::Cosine).unwrap()).abs() < 1e-12);
        assert!((3.0 * f(&b, Measure::Euclidean).unwrap() - f(&scaled, Measure::Euclidean).unwrap()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariance(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed, "perm");
        let b = bank(3, 7, 4, &mut rng);
        let mut rows: Vec<usize> = (0..7).collect();
        rng.shuffle(&mut rows);
        let items = b.select(&rows);
        let mut order: Vec<usize> = (0..3).collect();
        rng.shuffle(&mut order);
        let mods = EmbeddingBank::new(
            order.iter().map(|&m| b.modalities[m].clone()).collect(),
            4,
            b.items.clone(),
            order.iter().map(|&m| b.embs[m].clone()).collect(),
        ).unwrap();
        for f in [Measure::Euclidean, Measure::Cosine] {
            let base = (intra_metric(&b, f).unwrap(), inter_metric(&b, f).unwrap());
            for other in [&items, &mods] {
                prop_assert!((intra_metric(other, f).unwrap() - base.0).abs() < 1e-9);
                prop_assert!((inter_metric(other, f).unwrap() - base.1).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn pca_rank_one_line() {
    let mut rng = SeededRng::new(5, "pca");
    let rows: Vec<f64> = (0..40)
        .flat_map(|_| {
            let t = rng.normal();
            [2.0 * t + 1.0, -t + 3.0]
        })
        .collect();
    let b = EmbeddingBank::new(vec!["a".into(), "b".into()], 2, (0..20).collect(), vec![rows[..40].to_vec(), rows[40..].to_vec()]).unwrap();
    let p = pca_project(&b, 2).unwrap();
    assert!(p.explained_ratio[0] >= 1.0 - 1e-6);
    assert!(p.explained_ratio[0] >= p.explained_ratio[1]);
    // largest-magnitude coordinate of each axis is positive
    for axis in &p.components {
        let lead = axis.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        assert!(lead > 0.0);
    }
}

#[test]
fn pca_identical_points() {
    let b = EmbeddingBank::new(vec!["a".into(), "b".into()], 3, vec![0, 1], vec![[1.0, 2.0, 3.0].repeat(2), [1.0, 2.0, 3.0].repeat(2)]).unwrap();
    let p = pca_project(&b, 2).unwrap();
    assert!(p.coords.iter().flatten().all(|&v| v == 0.0));
    assert!(p.explained_ratio.iter().all(|&v| v == 0.0));
}

#[test]
fn pca_full_reconstruction() {
    let mut rng = SeededRng::new(6, "pca");
    let b = bank(3, 10, 4, &mut rng);
    let p = pca_project(&b, 4).unwrap();
    let ratios: f64 = p.explained_ratio.iter().sum();
    assert!((ratios - 1.0).abs() < 1e-9);
    assert!(p.explained_ratio.windows(2).all(|w| w[0] >= w[1]));
    for m in 0..3 {
        for r in 0..10 {
            let coords = &p.coords[m][r * 4..(r + 1) * 4];
            for j in 0..4 {
                let rec: f64 = (0..4).map(|c| coords[c] * p.components[c][j]).sum();
                assert!((rec + p.mean[j] - b.row(m, r)[j]).abs() < 1e-4);
            }
        }
    }
    assert!(pca_project(&b, 5).is_err());
    let csv = p.to_csv(&b);
    assert_eq!(csv.lines().count(), 1 + 30);
    assert!(csv.starts_with("item_index,modality,x,y\n"));
}

#[test]
fn probe_separable_halfspaces() {
    let mut rng = SeededRng::new(7, "probe");
    let n = 40;
    let a: Vec<f64> = (0..n).flat_map(|_| [2.0 + rng.uniform(), rng.normal()]).collect();
    let b: Vec<f64> = (0..n).flat_map(|_| [-2.0 - rng.uniform(), rng.normal()]).collect();
    let bank = EmbeddingBank::new(vec!["a".into(), "b".into()], 2, (0..n).collect(), vec![a, b]).unwrap();
    let r = separability_probe(&bank, PROBE_TRAIN_FRACTION, PROBE_SEEDS, 1).unwrap();
    assert_eq!(r.per_seed_accuracy.len(), 20);
    assert_eq!(r.mean_accuracy, 1.0);
    assert_eq!(r.random_baseline, 0.5);
}

#[test]
fn probe_same_distribution_is_chance() {
    let mut rng = SeededRng::new(8, "probe");
    let b = bank(2, 200, 4, &mut rng);
    let r = separability_probe(&b, 0.8, 20, 2).unwrap();
    assert!((r.mean_accuracy - 0.5).abs() < 0.1, "{}", r.mean_accuracy);
    let mean: f64 = r.per_seed_accuracy.iter().sum::<f64>() / 20.0;
    assert!((mean - r.mean_accuracy).abs() < 1e-12);
}

#[test]
fn probe_on_identical_embeddings_is_majority_rate() {
    let b = EmbeddingBank::new(
        (0..3).map(|m| format!("m{m}")).collect(),
        2,
        (0..20).collect(),
        vec![[0.3, 0.7].repeat(20); 3],
    )
    .unwrap();
    let r = separability_probe(&b, 0.8, 5, 3).unwrap();
    assert!((r.mean_accuracy - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn probe_with_permuted_labels_stays_near_chance() {
    // strongly separable bank, but labels shuffled within each item
    let mut rng = SeededRng::new(9, "probe");
    let n = 150;
    let embs: Vec<Vec<f64>> = (0..3)
        .map(|m| (0..n).flat_map(|_| [m as f64 * 4.0 + rng.normal(), rng.normal()]).collect())
        .collect();
    let b = EmbeddingBank::new((0..3).map(|m| format!("m{m}")).collect(), 2, (0..n).collect(), embs).unwrap();
    let mut labels = vec![vec![0; n]; 3];
    for r in 0..n {
        let mut perm = vec![0, 1, 2];
        rng.shuffle(&mut perm);
        for m in 0..3 {
            labels[m][r] = perm[m];
        }
    }
    let r = probe_with_labels(&b, 0.8, 20, 4, Some(&labels)).unwrap();
    // the 20 resplits share items, so the effective sample is the 450 rows
    let sd = ((1.0 / 3.0) * (2.0 / 3.0) / 450.0_f64).sqrt();
    assert!((r.mean_accuracy - 1.0 / 3.0).abs() < 3.0 * sd, "{}", r.mean_accuracy);
}

#[test]
fn probe_rejects_small_banks() {
    let mut rng = SeededRng::new(10, "probe");
    assert!(separability_probe(&bank(2, 9, 3, &mut rng), 0.8, 20, 0).is_err());
    assert!(separability_probe(&bank(1, 20, 3, &mut rng), 0.8, 20, 0).is_err());
}

#[test]
fn subsample_and_csv() {
    let mut rng = SeededRng::new(11, "sub");
    let b = bank(2, 30, 3, &mut rng);
    let s = b.subsample(10, 1);
    assert_eq!(s.n_items(), 10);
    assert!(s.items.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(b.subsample(10, 1), s);
    assert_eq!(b.subsample(100, 1), b);
    let stats = GapStats::compute(&b).unwrap();
    let csv = stats.to_csv();
    assert_eq!(csv.lines().next(), Some("metric,value"));
    assert_eq!(csv.lines().count(), 5);
}
