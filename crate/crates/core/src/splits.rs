//! Warm/cold splits and the training samplers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Entity, Interactions};
use crate::rng::SeededRng;
use crate::{MmrecError, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Warm,
    UserCold,
    ItemCold,
}

impl Scenario {
    pub fn cold_entity(self) -> Option<Entity> {
        match self {
            Scenario::Warm => None,
            Scenario::UserCold => Some(Entity::User),
            Scenario::ItemCold => Some(Entity::Item),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Val,
    Test,
}

/// Disjoint train/validation/test interaction sets.
///
/// For cold scenarios `val_entities` / `test_entities` hold the partition of
/// the cold entity kind; they are empty for warm splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub scenario: Scenario,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub val_entities: Vec<usize>,
    pub test_entities: Vec<usize>,
}

impl Split {
    pub fn train_interactions(&self) -> Interactions {
        Interactions::from_pairs(self.n_users, self.n_items, &self.train)
            .expect("split pairs are in range")
    }

    pub fn phase_pairs(&self, phase: Phase) -> &[(usize, usize)] {
        match phase {
            Phase::Val => &self.val,
            Phase::Test => &self.test,
        }
    }

    pub fn phase_entities(&self, phase: Phase) -> &[usize] {
        match phase {
            Phase::Val => &self.val_entities,
            Phase::Test => &self.test_entities,
        }
    }

    /// Relevant items per user for `phase`.
    pub fn relevant(&self, phase: Phase) -> Vec<Vec<usize>> {
        let mut rel = vec![Vec::new(); self.n_users];
        for &(u, i) in self.phase_pairs(phase) {
            rel[u].push(i);
        }
        for r in &mut rel {
            r.sort_unstable();
        }
        rel
    }

    /// Distinct items with at least one `phase` interaction, ascending.
    pub fn phase_items(&self, phase: Phase) -> Vec<usize> {
        let mut items: Vec<usize> = self.phase_pairs(phase).iter().map(|p| p.1).collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// Items that may be recommended during `phase`. In item-cold start only
    /// the phase's items are ranked; otherwise the full catalog.
    pub fn candidate_items(&self, phase: Phase) -> Vec<usize> {
        match self.scenario {
            Scenario::ItemCold => {
                let mut c = self.phase_entities(phase).to_vec();
                c.sort_unstable();
                c
            }
            _ => (0..self.n_items).collect(),
        }
    }

    /// Items allowed as training negatives: all items except those held out
    /// as cold items.
    pub fn train_item_pool(&self) -> Vec<usize> {
        let mut held = vec![false; self.n_items];
        if self.scenario == Scenario::ItemCold {
            for &i in self.val_entities.iter().chain(&self.test_entities) {
                held[i] = true;
            }
        }
        (0..self.n_items).filter(|&i| !held[i]).collect()
    }
}

/// Per-user random 80/10/10 split with floored validation and test counts.
///
/// A validation or test interaction whose item would otherwise be absent from
/// the training set is moved into training, so every item seen at evaluation
/// has at least one training interaction.
pub fn split_warm(data: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let mut rng = SeededRng::new(seed, "split-warm");
    let inter = data.interactions();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for u in 0..data.n_users() {
        let mut items = inter.user_items(u).to_vec();
        if items.is_empty() {
            return Err(MmrecError::InvalidData(format!(
                "user `{}` has no interactions",
                data.user_ids[u]
            )));
        }
        let n = items.len();
        let n_val = (ratios.1 * n as f64).floor() as usize;
        let n_test = (ratios.2 * n as f64).floor() as usize;
        rng.shuffle(&mut items);
        for (k, &i) in items.iter().enumerate() {
            if k < n_val {
                val.push((u, i));
            } else if k < n_val + n_test {
                test.push((u, i));
            } else {
                train.push((u, i));
            }
        }
    }
    let mut in_train = vec![false; data.n_items()];
    for &(_, i) in &train {
        in_train[i] = true;
    }
    for held in [&mut val, &mut test] {
        held.retain(|&(u, i)| {
            if in_train[i] {
                true
            } else {
                in_train[i] = true;
                train.push((u, i));
                false
            }
        });
    }
    Ok(finish(Split {
        scenario: Scenario::Warm,
        seed,
        ratios,
        n_users: data.n_users(),
        n_items: data.n_items(),
        train,
        val,
        test,
        val_entities: Vec::new(),
        test_entities: Vec::new(),
    }))
}

/// Partitions users or items 80/10/10; every interaction follows its entity.
pub fn split_cold(data: &Dataset, entity: Entity, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let n = match entity {
        Entity::User => data.n_users(),
        Entity::Item => data.n_items(),
    };
    let n_val = (ratios.1 * n as f64).floor() as usize;
    let n_test = (ratios.2 * n as f64).floor() as usize;
    if n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(MmrecError::InvalidData(format!(
            "{n} {}s cannot fill three cold-start partitions",
            entity.as_str()
        )));
    }
    let mut rng = SeededRng::new(seed, &format!("split-cold-{}", entity.as_str()));
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    // 0 = train, 1 = val, 2 = test
    let mut part = vec![0u8; n];
    for &e in &order[..n_val] {
        part[e] = 1;
    }
    for &e in &order[n_val..n_val + n_test] {
        part[e] = 2;
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (u, i) in data.interactions().pairs() {
        let e = if entity == Entity::User { u } else { i };
        match part[e] {
            1 => val.push((u, i)),
            2 => test.push((u, i)),
            _ => train.push((u, i)),
        }
    }
    let mut val_entities = order[..n_val].to_vec();
    let mut test_entities = order[n_val..n_val + n_test].to_vec();
    val_entities.sort_unstable();
    test_entities.sort_unstable();
    Ok(finish(Split {
        scenario: if entity == Entity::User {
            Scenario::UserCold
        } else {
            Scenario::ItemCold
        },
        seed,
        ratios,
        n_users: data.n_users(),
        n_items: data.n_items(),
        train,
        val,
        test,
        val_entities,
        test_entities,
    }))
}

fn finish(mut s: Split) -> Split {
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

/// Which items a negative may be drawn from.
#[derive(Clone, Copy, Debug)]
pub enum ItemPool<'a> {
    All(usize),
    Subset(&'a [usize]),
}

impl ItemPool<'_> {
    fn len(&self) -> usize {
        match self {
            ItemPool::All(n) => *n,
            ItemPool::Subset(s) => s.len(),
        }
    }

    fn get(&self, k: usize) -> usize {
        match self {
            ItemPool::All(_) => k,
            ItemPool::Subset(s) => s[k],
        }
    }
}

const REJECTION_TRIES: usize = 64;
const COLLISION_REDRAWS: usize = 8;

/// `n_neg` uniformly drawn items the user has no training interaction with.
pub fn sample_negatives(
    user: usize,
    n_neg: usize,
    train: &Interactions,
    n_items: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    sample_negatives_from(user, n_neg, train, ItemPool::All(n_items), rng)
}

/// [`sample_negatives`] restricted to `pool`.
pub fn sample_negatives_from(
    user: usize,
    n_neg: usize,
    train: &Interactions,
    pool: ItemPool<'_>,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let positives = train.user_items(user);
    let mut complement: Option<Vec<usize>> = None;
    let mut draw = |rng: &mut SeededRng| -> Result<usize> {
        if let Some(c) = &complement {
            return Ok(c[rng.below(c.len())]);
        }
        for _ in 0..REJECTION_TRIES {
            let i = pool.get(rng.below(pool.len().max(1)));
            if pool.len() > 0 && positives.binary_search(&i).is_err() {
                return Ok(i);
            }
        }
        // dense user: fall back to sampling the explicit complement
        let c: Vec<usize> = (0..pool.len())
            .map(|k| pool.get(k))
            .filter(|i| positives.binary_search(i).is_err())
            .collect();
        if c.is_empty() {
            return Err(MmrecError::Sampling(format!(
                "user {user} interacted with every candidate item"
            )));
        }
        let i = c[rng.below(c.len())];
        complement = Some(c);
        Ok(i)
    };
    let mut out: Vec<usize> = Vec::with_capacity(n_neg);
    for _ in 0..n_neg {
        let mut i = draw(rng)?;
        for _ in 0..COLLISION_REDRAWS {
            if !out.contains(&i) {
                break;
            }
            i = draw(rng)?;
        }
        out.push(i);
    }
    Ok(out)
}

/// Uniform sample of `n_mod` distinct entries of `available`.
pub fn sample_modalities<T: Clone>(available: &[T], n_mod: usize, rng: &mut SeededRng) -> Result<Vec<T>> {
    if available.len() < n_mod {
        return Err(MmrecError::Sampling(format!(
            "{} modalities available, {n_mod} requested",
            available.len()
        )));
    }
    Ok(rng
        .sample_indices(available.len(), n_mod)
        .into_iter()
        .map(|k| available[k].clone())
        .collect())
}

/// One epoch of shuffled mini-batches; the last batch may be short.
pub fn make_batches(
    pairs: &[(usize, usize)],
    batch_size: usize,
    shuffle_seed: u64,
) -> Vec<Vec<(usize, usize)>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut order = pairs.to_vec();
    SeededRng::new(shuffle_seed, "batches").shuffle(&mut order);
    order.chunks(batch_size).map(<[_]>::to_vec).collect()
}

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    scenario: Scenario,
    seed: u64,
    ratios: (f64, f64, f64),
    n_users: usize,
    n_items: usize,
    #[serde(default)]
    val_entities: Vec<usize>,
    #[serde(default)]
    test_entities: Vec<usize>,
}

fn write_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let body: String = pairs.iter().map(|(u, i)| format!("{u}\t{i}\n")).collect();
    fs::write(path, body).map_err(|e| MmrecError::io(path, e))
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| MmrecError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut f = l.split('\t').map(|x| x.trim().parse::<usize>());
            match (f.next(), f.next(), f.next()) {
                (Some(Ok(u)), Some(Ok(i)), None) => Ok((u, i)),
                _ => Err(MmrecError::parse(path, format!("bad line `{l}`"))),
            }
        })
        .collect()
}

pub fn save_split(dir: &Path, split: &Split) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MmrecError::io(dir, e))?;
    write_pairs(&dir.join("train.tsv"), &split.train)?;
    write_pairs(&dir.join("val.tsv"), &split.val)?;
    write_pairs(&dir.join("test.tsv"), &split.test)?;
    let meta = SplitMeta {
        scenario: split.scenario,
        seed: split.seed,
        ratios: split.ratios,
        n_users: split.n_users,
        n_items: split.n_items,
        val_entities: split.val_entities.clone(),
        test_entities: split.test_entities.clone(),
    };
    let path = dir.join("split.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| MmrecError::io(&path, e))
}

pub fn load_split(dir: &Path) -> Result<Split> {
    let path = dir.join("split.json");
    let text = fs::read_to_string(&path).map_err(|e| MmrecError::io(&path, e))?;
    let meta: SplitMeta = serde_json::from_str(&text).map_err(|e| MmrecError::parse(&path, e.to_string()))?;
    let split = Split {
        scenario: meta.scenario,
        seed: meta.seed,
        ratios: meta.ratios,
        n_users: meta.n_users,
        n_items: meta.n_items,
        train: read_pairs(&dir.join("train.tsv"))?,
        val: read_pairs(&dir.join("val.tsv"))?,
        test: read_pairs(&dir.join("test.tsv"))?,
        val_entities: meta.val_entities,
        test_entities: meta.test_entities,
    };
    for &(u, i) in split.train.iter().chain(&split.val).chain(&split.test) {
        if u >= split.n_users || i >= split.n_items {
            return Err(MmrecError::parse(dir, format!("pair ({u}, {i}) out of range")));
        }
    }
    Ok(finish(split))
}
