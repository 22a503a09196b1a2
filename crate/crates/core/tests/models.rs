use diffcore::nn::Mode;
use diffcore::{grad_check, FnObjective, Graph, ParamStore, Tensor};
use mmrec::dataset::{Dataset, Entity, ModalityStore};
use mmrec::models::*;
use mmrec::rng::SeededRng;
use mmrec::splits::Scenario;
use mmrec::view::DataView;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

/// 4 users, 6 items, two item modalities and one user modality.
fn toy() -> Dataset {
    let mut rng = SeededRng::new(1, "toy");
    let mut store = |name: &str, entity: Entity, n: usize, dim: usize| {
        let m: Vec<f32> = (0..n * dim).map(|_| rng.normal() as f32).collect();
        ModalityStore::new(name, entity, dim, m, vec![true; n]).unwrap()
    };
    let items = vec![store("audio", Entity::Item, 6, 3), store("text", Entity::Item, 6, 2)];
    let users = vec![store("age", Entity::User, 4, 2)];
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 5), (3, 0)];
    Dataset::new(
        "toy",
        (0..4).map(|u| format!("u{u}")).collect(),
        (0..6).map(|i| format!("i{i}")).collect(),
        &pairs,
        users,
        items,
    )
    .unwrap()
}

fn config(kind: ModelKind, variant: Variant) -> ModelConfig {
    ModelConfig {
        kind,
        variant,
        shared_dim: 4,
        g_layers: vec![5],
        branch_layers: vec![5],
        embedding_dim: 3,
        loss: LossConfig {
            alpha: 0.5,
            beta: 0.3,
            tau: 0.7,
            n_neg: 2,
        },
        ..Default::default()
    }
}

fn batch() -> Vec<(usize, usize)> {
    vec![(0, 0), (1, 3), (2, 4), (3, 5)]
}

fn max_grad_error(cfg: &ModelConfig) -> f64 {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let model = Model::new(cfg, &data, Scenario::Warm, 3).unwrap().cast::<f64>();
    let pools = model.net.sample_pools(&view, &(0..6).collect::<Vec<_>>());
    let plan = model.plan_batch(&view, &batch(), &pools, &mut SeededRng::new(4, "plan")).unwrap();
    let mut net = model.net.clone();
    let mut obj = FnObjective::new(model.store.clone(), move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let mut rng = SeededRng::new(5, "dropout");
        let parts = net.batch_loss(g, s, &view, &plan, Mode::Train, &mut rng).map_err(|e| diffcore::DiffError::Invalid(e.to_string()))?;
        Ok(parts.total)
    });
    let report = grad_check(&mut obj, 1e-6, 5000, 0).unwrap();
    report.max_rel_error
}

#[test]
fn batch_loss_gradients_match_finite_differences() {
    for (kind, variant) in [
        (ModelKind::Sibrar, Variant::Sc),
        (ModelKind::Sibrar, Variant::Vanilla),
        (ModelKind::Mubrar, Variant::Sc),
        (ModelKind::Mf, Variant::Sc),
        (ModelKind::Deepmf, Variant::Sc),
    ] {
        let err = max_grad_error(&config(kind, variant));
        assert!(err < 1e-4, "{kind:?}/{variant:?}: {err}");
    }
    let both = ModelConfig {
        side: Side::Both,
        ..config(ModelKind::Sibrar, Variant::Sc)
    };
    assert!(max_grad_error(&both) < 1e-4);
}

#[test]
fn bpr_at_zero_margin_is_n_ln2() {
    let mut g = Graph::<f64>::new();
    let s = g.input(Tensor::zeros(&[11]));
    let l = bpr_loss(&mut g, s, 11).unwrap();
    assert!((g.value(l).item().unwrap() - 10.0 * LN2).abs() < 1e-6);
    // two pairs with margins 1 and -2 against a single negative each
    let mut g = Graph::<f64>::new();
    let s = g.input(Tensor::vector(vec![1.0, 0.0, 0.0, 2.0]));
    let l = bpr_loss(&mut g, s, 2).unwrap();
    let expected = (1.0 + (-1.0f64).exp()).ln() + (1.0 + 2.0f64.exp()).ln();
    assert!((g.value(l).item().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn sinfonce_with_equal_embeddings_is_2_ln2() {
    let mut g = Graph::<f64>::new();
    let e = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.5, 0.3, -0.2, 0.5]).unwrap();
    let m1 = g.input(e.clone());
    let m2 = g.input(e);
    let l = sinfonce_loss(&mut g, m1, m2, 2, 0.1).unwrap();
    assert!((g.value(l).item().unwrap() - 2.0 * LN2).abs() < 1e-6);
}

#[test]
fn sinfonce_matches_direct_formula() {
    let mut rng = SeededRng::new(2, "nce");
    let (pairs, s, d, tau) = (3, 4, 5, 0.3);
    let a: Vec<f64> = (0..pairs * s * d).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..pairs * s * d).map(|_| rng.normal()).collect();
    let row = |x: &[f64], r: usize| x[r * d..(r + 1) * d].to_vec();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let direction = |x: &[f64], y: &[f64]| {
        let mut total = 0.0;
        for p in 0..pairs {
            let anchor = row(x, p * s);
            let logits: Vec<f64> = (0..s).map(|c| dot(&anchor, &row(y, p * s + c)) / tau).collect();
            let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
            total += lse - logits[0];
        }
        total
    };
    let expected = direction(&a, &b) + direction(&b, &a);
    let mut g = Graph::<f64>::new();
    let m1 = g.input(Tensor::matrix(pairs * s, d, a).unwrap());
    let m2 = g.input(Tensor::matrix(pairs * s, d, b).unwrap());
    let l = sinfonce_loss(&mut g, m1, m2, s, tau).unwrap();
    assert!((g.value(l).item().unwrap() - expected).abs() < 1e-10);
}

#[test]
fn alpha_zero_reduces_to_bpr() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let mut cfg = config(ModelKind::Sibrar, Variant::Sc);
    cfg.loss.alpha = 0.0;
    let mut model = Model::new(&cfg, &data, Scenario::Warm, 3).unwrap();
    let pools = model.net.sample_pools(&view, &(0..6).collect::<Vec<_>>());
    let plan = model.plan_batch(&view, &batch(), &pools, &mut SeededRng::new(4, "plan")).unwrap();
    // without a contrastive term the sampling variant draws one modality
    assert!(plan.item_mods.iter().all(|m| m.len() == 1));
    let mut g = Graph::new();
    let parts = model.batch_loss(&mut g, &view, &plan, Mode::Train, &mut SeededRng::new(0, "d")).unwrap();
    assert!(parts.item_contrast.is_none());
    assert_eq!(g.value(parts.total).item().unwrap(), g.value(parts.rank).item().unwrap());
}

#[test]
fn sc_plans_two_modalities_per_candidate() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let model = Model::new(&config(ModelKind::Sibrar, Variant::Sc), &data, Scenario::Warm, 3).unwrap();
    let pools = model.net.sample_pools(&view, &(0..6).collect::<Vec<_>>());
    let plan = model.plan_batch(&view, &batch(), &pools, &mut SeededRng::new(4, "plan")).unwrap();
    assert_eq!(plan.item_block, 3);
    assert_eq!(plan.items.len(), 12);
    for (b, &(u, i)) in batch().iter().enumerate() {
        assert_eq!(plan.items[b * 3], i);
        for &j in &plan.items[b * 3 + 1..b * 3 + 3] {
            assert!(!data.interactions().contains(u, j));
        }
        let anchor = &plan.item_mods[b * 3];
        assert_eq!(anchor.len(), 2);
        assert_ne!(anchor[0], anchor[1]);
        // every item has every modality, so negatives copy the anchor's draw
        assert_eq!(&plan.item_mods[b * 3 + 1], anchor);
    }
}

fn perturb(model: &mut Model, prefix: &str) -> usize {
    let mut touched = 0;
    for p in model.store.iter_mut() {
        if p.name.starts_with(prefix) {
            p.value.data_mut().iter_mut().for_each(|v| *v += 0.5);
            touched += 1;
        }
    }
    touched
}

fn item_bank(model: &mut Model, view: &DataView) -> ModalityBank {
    model.modality_bank(view, Entity::Item, &(0..6).collect::<Vec<_>>()).unwrap()
}

#[test]
fn single_branch_shares_its_encoder() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let mut model = Model::new(&config(ModelKind::Sibrar, Variant::Sc), &data, Scenario::Warm, 3).unwrap();
    let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
    assert!(names.iter().any(|n| n.starts_with("item.f.audio")));
    assert!(names.iter().any(|n| n.starts_with("item.f.text")));
    assert!(!names.iter().any(|n| n.starts_with("item.branch")));
    let before = item_bank(&mut model, &view);
    assert!(perturb(&mut model, "item.g.") > 0);
    let after = item_bank(&mut model, &view);
    for s in 0..before.names.len() {
        assert_ne!(before.embs[s], after.embs[s], "{}", before.names[s]);
    }
}

#[test]
fn multi_branch_modalities_are_isolated() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let mut model = Model::new(&config(ModelKind::Mubrar, Variant::Vanilla), &data, Scenario::Warm, 3).unwrap();
    let before = item_bank(&mut model, &view);
    assert!(perturb(&mut model, "item.branch.text.") > 0);
    let after = item_bank(&mut model, &view);
    for (s, name) in before.names.iter().enumerate() {
        if name == "text" {
            assert_ne!(before.embs[s], after.embs[s]);
        } else {
            assert_eq!(before.embs[s], after.embs[s], "{name}");
        }
    }
}

#[test]
fn subset_embedding_is_the_modality_mean() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let mut model = Model::new(&config(ModelKind::Sibrar, Variant::Sc), &data, Scenario::Warm, 3).unwrap();
    let items: Vec<usize> = (0..6).collect();
    let bank = item_bank(&mut model, &view);
    let subset = vec!["audio".to_string(), "text".to_string()];
    let e = model.embed_items(&view, &items, &subset).unwrap();
    let (a, t) = (bank.subset_indices(&subset[..1]).unwrap()[0], bank.subset_indices(&subset[1..]).unwrap()[0]);
    for r in 0..6 {
        for c in 0..3 {
            let mean = (bank.embs[a][r * 3 + c] as f64 + bank.embs[t][r * 3 + c] as f64) / 2.0;
            assert!((e.row(r)[c] as f64 - mean).abs() < 1e-6);
        }
    }
    assert!(model.embed_items(&view, &items, &["video".to_string()]).is_err());
}

#[test]
fn pop_and_rand_scorers() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let users: Vec<usize> = (0..4).collect();
    let items: Vec<usize> = (0..6).collect();
    let mut pop = Model::new(&ModelConfig::of_kind(ModelKind::Pop), &data, Scenario::Warm, 0).unwrap();
    pop.fit_popularity(&view);
    let s = pop.scorer(&view, &users, &items, None).unwrap();
    let phi = view.popularity();
    assert_eq!(phi[0], 0.5);
    assert!(items.iter().all(|&i| s.score(1, i) == phi[i]));
    let mut rand = Model::new(&ModelConfig::of_kind(ModelKind::Rand), &data, Scenario::Warm, 9).unwrap();
    let s = rand.scorer(&view, &users, &items, None).unwrap();
    assert_eq!(s.score(2, 3), rand_score(9, 2, 3));
    assert!((0..4).all(|u| items.iter().all(|&i| (0.0..1.0).contains(&s.score(u, i)))));
    assert_ne!(rand_score(9, 2, 3), rand_score(10, 2, 3));
}

#[test]
fn deepmf_scores_are_floored_cosines() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let mut m = Model::new(&ModelConfig::of_kind(ModelKind::Deepmf), &data, Scenario::Warm, 1).unwrap();
    let s = m.scorer(&view, &(0..4).collect::<Vec<_>>(), &(0..6).collect::<Vec<_>>(), None).unwrap();
    let mu = m.config().mu;
    for u in 0..4 {
        for i in 0..6 {
            let v = s.score(u, i);
            assert!(v >= mu && v <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn top_k_ties_and_exclusion() {
    let scores = [0.5, 0.9, 0.5, 0.1, 0.9];
    let f = |i: usize| scores[i];
    let all: Vec<usize> = (0..5).collect();
    assert_eq!(top_k(f, &all, &[], 3).unwrap(), vec![1, 4, 0]);
    assert_eq!(top_k(f, &all, &[1], 3).unwrap(), vec![4, 0, 2]);
    assert_eq!(top_k(f, &all, &[], 5).unwrap(), vec![1, 4, 0, 2, 3]);
    assert!(top_k(f, &all, &[0, 1], 4).is_err());
}

proptest! {
    #[test]
    fn top_k_matches_full_sort(
        scores in proptest::collection::vec(0u8..6, 1..40),
        k in 0usize..10,
        excl in proptest::collection::btree_set(0usize..40, 0..5),
    ) {
        let n = scores.len();
        let exclude: Vec<usize> = excl.into_iter().filter(|&i| i < n).collect();
        let all: Vec<usize> = (0..n).collect();
        let mut oracle: Vec<usize> = all.iter().copied().filter(|i| !exclude.contains(i)).collect();
        oracle.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
        let got = top_k(|i| scores[i] as f64, &all, &exclude, k);
        if oracle.len() < k {
            prop_assert!(got.is_err());
        } else {
            oracle.truncate(k);
            prop_assert_eq!(got.unwrap(), oracle);
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let data = toy();
    let view = DataView::from_train(&data, data.interactions().clone());
    let users: Vec<usize> = (0..4).collect();
    let items: Vec<usize> = (0..6).collect();
    for kind in [ModelKind::Sibrar, ModelKind::Mubrar, ModelKind::Mf, ModelKind::Pop] {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::new(&config(kind, Variant::Sc), &data, Scenario::Warm, 5).unwrap();
        m.fit_popularity(&view);
        save_checkpoint(&mut m, dir.path()).unwrap();
        let mut back = load_checkpoint(dir.path(), &data).unwrap();
        assert_eq!(back.config(), m.config());
        let (a, b) = (
            m.scorer(&view, &users, &items, None).unwrap(),
            back.scorer(&view, &users, &items, None).unwrap(),
        );
        for u in 0..4 {
            for i in 0..6 {
                assert_eq!(a.score(u, i), b.score(u, i), "{kind:?}");
            }
        }
        // a truncated parameter file is rejected
        let bin = dir.path().join("params.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(dir.path(), &data).is_err());
    }
}

#[test]
fn invalid_model_configs() {
    let base = ModelConfig::default();
    for cfg in [
        ModelConfig { embedding_dim: 0, ..base.clone() },
        ModelConfig { loss: LossConfig { tau: 0.0, ..Default::default() }, ..base.clone() },
        ModelConfig { loss: LossConfig { alpha: -1.0, ..Default::default() }, ..base.clone() },
        ModelConfig { dropout: 1.0, ..base.clone() },
        ModelConfig { g_layers: vec![0], ..base.clone() },
    ] {
        assert!(cfg.validate().is_err());
    }
    let data = toy();
    let cfg = ModelConfig {
        train_modalities: vec!["video".into()],
        ..base
    };
    assert!(Model::new(&cfg, &data, Scenario::Warm, 0).is_err());
}
