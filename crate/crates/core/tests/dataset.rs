use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use mmrec::dataset::*;
use mmrec::MmrecError;
use proptest::prelude::*;

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

/// Three users, four items, a CSV audio matrix missing item `c` and an MMR1
/// text matrix with an explicit mask.
fn fixture(dir: &Path) -> std::path::PathBuf {
    write(dir, "users.tsv", "alice\nbob\ncarol\n");
    write(dir, "items.tsv", "a\nb\nc\nd\n");
    write(dir, "interactions.tsv", "alice\ta\nalice\tb\nbob\tb\t1.0\ncarol\td\n\n");
    write(dir, "audio.csv", "id,x,y\nd,4,4.5\na,1,1.5\nb,2,2.5\n");
    write_mmr1(&dir.join("text.mmr1"), 4, 1, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    write(dir, "text.mask", "1\n0\n1\n1\n");
    let manifest = r#"{
  "name": "fixture",
  "users_file": "users.tsv",
  "items_file": "items.tsv",
  "interactions_file": "interactions.tsv",
  "modalities": [
    {"name": "audio", "entity": "item", "dim": 2, "file": "audio.csv", "format": "csv"},
    {"name": "text", "entity": "item", "dim": 1, "file": "text.mmr1", "format": "mmr1", "mask_file": "text.mask"}
  ]
}"#;
    write(dir, "dataset.json", manifest);
    dir.join("dataset.json")
}

#[test]
fn loads_registries_matrices_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let data = load_dataset(&fixture(dir.path())).unwrap();
    assert_eq!((data.n_users(), data.n_items()), (3, 4));
    assert_eq!(data.interactions().user_items(0), &[0, 1]);
    assert_eq!(data.interactions().user_items(1), &[1]);
    let audio = data.modality(Entity::Item, "audio").unwrap();
    assert_eq!(audio.row(0).unwrap(), &[1.0, 1.5]);
    assert_eq!(audio.row(3).unwrap(), &[4.0, 4.5]);
    assert!(audio.row(2).is_none());
    let text = data.modality(Entity::Item, "text").unwrap();
    assert_eq!(text.mask(), &[true, false, true, true]);
    assert_eq!(text.row(2).unwrap(), &[0.3]);
}

#[test]
fn write_then_load_is_identity() {
    let src = tempfile::tempdir().unwrap();
    let data = load_dataset(&fixture(src.path())).unwrap();
    let out = tempfile::tempdir().unwrap();
    let manifest = write_dataset(out.path(), &data).unwrap();
    assert_eq!(load_dataset(&manifest).unwrap(), data);
}

fn expect_err(dir: &Path, file: &str, body: &str) -> MmrecError {
    let manifest = fixture(dir);
    write(dir, file, body);
    load_dataset(&manifest).unwrap_err()
}

#[test]
fn malformed_inputs_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    assert!(matches!(expect_err(d.path(), "interactions.tsv", "alice\tzzz\n"), MmrecError::UnknownId { .. }));
    assert!(matches!(expect_err(d.path(), "interactions.tsv", "alice\n"), MmrecError::Parse { .. }));
    assert!(matches!(expect_err(d.path(), "interactions.tsv", "alice\ta\tx\n"), MmrecError::Parse { .. }));
    assert!(matches!(expect_err(d.path(), "users.tsv", "alice\nalice\n"), MmrecError::DuplicateId { .. }));
    assert!(matches!(expect_err(d.path(), "audio.csv", "id,x,y,z\na,1,2,3\n"), MmrecError::DimMismatch { .. }));
    assert!(matches!(expect_err(d.path(), "audio.csv", "id,x,y\na,1,2\na,1,2\n"), MmrecError::DuplicateId { .. }));
    assert!(matches!(expect_err(d.path(), "audio.csv", "id,x,y\nq,1,2\n"), MmrecError::UnknownId { .. }));
    assert!(matches!(expect_err(d.path(), "audio.csv", "id,x,y\na,1,nope\n"), MmrecError::Parse { .. }));
    assert!(matches!(expect_err(d.path(), "text.mask", "1\n0\n"), MmrecError::Parse { .. }));
    assert!(matches!(expect_err(d.path(), "text.mmr1", "MMR0"), MmrecError::Parse { .. }));
    let e = expect_err(d.path(), "dataset.json", "{");
    assert!(e.is_validation());
    let missing = load_dataset(&d.path().join("nope.json")).unwrap_err();
    assert!(matches!(missing, MmrecError::Io { .. }));
}

#[test]
fn mmr1_round_trip_and_truncation() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("m.mmr1");
    let values: Vec<f32> = (0..6).map(|v| v as f32 * 0.5 - 1.0).collect();
    write_mmr1(&p, 2, 3, &values).unwrap();
    assert_eq!(read_mmr1(&p).unwrap(), (2, 3, values));
    let bytes = fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"MMR1");
    fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
    assert!(read_mmr1(&p).is_err());
}

#[test]
fn store_validation() {
    assert!(ModalityStore::new("x", Entity::Item, 0, vec![], vec![]).is_err());
    assert!(ModalityStore::new("x", Entity::Item, 2, vec![1.0; 3], vec![true, true]).is_err());
    assert!(ModalityStore::new("x", Entity::Item, 1, vec![f32::NAN], vec![true]).is_err());
    // non-finite values are tolerated in rows marked missing
    assert!(ModalityStore::new("x", Entity::Item, 1, vec![f32::NAN], vec![false]).is_ok());
    let reserved = ModalityStore::new("interactions", Entity::Item, 1, vec![0.0], vec![true]).unwrap();
    assert!(Dataset::new("d", vec!["u".into()], vec!["i".into()], &[(0, 0)], vec![], vec![reserved]).is_err());
}

#[test]
fn duplicate_pairs_collapse() {
    let i = Interactions::from_pairs(2, 3, &[(0, 2), (0, 1), (0, 2), (1, 0)]).unwrap();
    assert_eq!(i.len(), 3);
    assert_eq!(i.user_items(0), &[1, 2]);
    assert!(i.contains(1, 0) && !i.contains(1, 1));
    assert!(Interactions::from_pairs(2, 3, &[(2, 0)]).is_err());
}

#[test]
fn binarize_keeps_values_at_threshold() {
    let raw = vec![("u", "a", 4.0), ("u", "b", 3.5), ("v", "a", 5.0)];
    assert_eq!(binarize_feedback(&raw, 4.0), vec![("u", "a"), ("v", "a")]);
}

/// Recomputes degrees from scratch until nothing changes.
fn naive_core(pairs: &[(u8, u8)], k: usize) -> HashSet<(u8, u8)> {
    let mut set: HashSet<(u8, u8)> = pairs.iter().copied().collect();
    loop {
        let mut du: HashMap<u8, usize> = HashMap::new();
        let mut di: HashMap<u8, usize> = HashMap::new();
        for &(u, i) in &set {
            *du.entry(u).or_default() += 1;
            *di.entry(i).or_default() += 1;
        }
        let next: HashSet<(u8, u8)> = set.iter().copied().filter(|(u, i)| du[u] >= k && di[i] >= k).collect();
        if next.len() == set.len() {
            return set;
        }
        set = next;
    }
}

#[test]
fn five_core_hand_case() {
    // a 5x5 biclique survives; the extra user with four items does not
    let mut pairs: Vec<(u8, u8)> = (0..5).flat_map(|u| (0..5).map(move |i| (u, i))).collect();
    pairs.extend((0..4).map(|i| (9, i)));
    let kept = core_filter(&pairs, 5, 5);
    assert_eq!(kept.len(), 25);
    assert!(kept.iter().all(|&(u, _)| u != 9));
}

proptest! {
    #[test]
    fn core_filter_matches_fixed_point(
        pairs in proptest::collection::vec((0u8..12, 0u8..12), 0..120),
        k in 1usize..5,
    ) {
        let kept = core_filter(&pairs, k, k);
        let expected = naive_core(&pairs, k);
        let got: HashSet<(u8, u8)> = kept.iter().copied().collect();
        prop_assert_eq!(&got, &expected);
        // survivors keep their first-appearance order
        let mut seen = HashSet::new();
        let order: Vec<(u8, u8)> = pairs.iter().copied().filter(|p| expected.contains(p) && seen.insert(*p)).collect();
        let mut seen = HashSet::new();
        let dedup: Vec<(u8, u8)> = kept.into_iter().filter(|p| seen.insert(*p)).collect();
        prop_assert_eq!(dedup, order);
    }
}
