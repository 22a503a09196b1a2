//! SiBraR / MuBraR and the baselines behind one two-tower interface.

mod checkpoint;
mod config;
mod loss;
mod tower;

use diffcore::init::normal;
use diffcore::nn::{Mlp, Mode};
use diffcore::{Graph, ParamStore, Real, Tensor, Var};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{CounterpartTower, LossConfig, ModelConfig, ModelKind, NMod, Side, Variant};
pub use loss::{bce_loss, bpr_loss, sinfonce_loss};
pub use tower::{resolve_sources, Arch, Encoded, ModalTower, Source, SourceKind, Tower};

use crate::dataset::{Dataset, Entity};
use crate::rng::{mix, splitmix64, SeededRng};
use crate::splits::{sample_modalities, sample_negatives_from, ItemPool, Scenario};
use crate::view::DataView;
use crate::{MmrecError, Result};

/// Dataset-dependent sizes a model was built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_users: usize,
    pub n_items: usize,
    pub scenario: Scenario,
    pub item_sources: Vec<Source>,
    pub user_sources: Vec<Source>,
}

/// Network structure; parameter values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Net<T> {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub user: Option<Tower<T>>,
    pub item: Option<Tower<T>>,
    /// Training popularity φ, used by the popularity baseline.
    pub popularity: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub net: Net<T>,
    pub store: ParamStore<T>,
}

/// Sampled inputs of one training batch. Candidates are pair-major: each
/// pair owns `item_block` consecutive item candidates (positive first) and
/// `user_block` consecutive user candidates (the pair's user first).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub users: Vec<usize>,
    pub user_mods: Vec<Vec<usize>>,
    pub user_block: usize,
    pub items: Vec<usize>,
    pub item_mods: Vec<Vec<usize>>,
    pub item_block: usize,
}

impl BatchPlan {
    pub fn n_pairs(&self) -> usize {
        self.items.len() / self.item_block.max(1)
    }
}

/// Entities that may be drawn as negatives.
#[derive(Clone, Debug)]
pub struct SamplePools {
    pub items: Vec<usize>,
    pub users: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub rank: Var,
    pub item_contrast: Option<Var>,
    pub user_contrast: Option<Var>,
}

fn modal_tower<T: Real, R: RngCore + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    entity: Entity,
    arch: Arch,
    sources: Vec<Source>,
    rng: &mut R,
) -> ModalTower<T> {
    let prefix = entity.as_str();
    let emb = cfg.embedding_dim;
    let (adapters, shared) = match arch {
        Arch::Single => {
            let adapters = sources
                .iter()
                .map(|s| {
                    let name = format!("{prefix}.f.{}", s.name);
                    Mlp::new(store, &name, &[s.dim, cfg.shared_dim], false, true, 0.0, rng)
                })
                .collect();
            let mut dims = vec![cfg.shared_dim];
            dims.extend(&cfg.g_layers);
            dims.push(emb);
            let g = Mlp::new(store, &format!("{prefix}.g"), &dims, cfg.batchnorm, false, cfg.dropout, rng);
            (adapters, Some(g))
        }
        Arch::Multi => {
            let adapters = sources
                .iter()
                .map(|s| {
                    let mut dims = vec![s.dim];
                    dims.extend(&cfg.branch_layers);
                    dims.push(emb);
                    let name = format!("{prefix}.branch.{}", s.name);
                    Mlp::new(store, &name, &dims, cfg.batchnorm, false, cfg.dropout, rng)
                })
                .collect();
            (adapters, None)
        }
    };
    ModalTower {
        entity,
        arch,
        sources,
        adapters,
        shared,
    }
}

fn plain_tower<T: Real, R: RngCore + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    shape: &ModelShape,
    entity: Entity,
    profile: bool,
    rng: &mut R,
) -> Tower<T> {
    let (n, other) = match entity {
        Entity::User => (shape.n_users, shape.n_items),
        Entity::Item => (shape.n_items, shape.n_users),
    };
    let prefix = entity.as_str();
    if profile {
        let mut dims = vec![other];
        dims.extend(&cfg.g_layers);
        dims.push(cfg.embedding_dim);
        let encoder = Mlp::new(store, &format!("{prefix}.h"), &dims, cfg.batchnorm, false, cfg.dropout, rng);
        Tower::Profile { entity, encoder }
    } else {
        let table = store.add(
            format!("{prefix}.embedding"),
            normal(rng, &[n, cfg.embedding_dim], 0.1),
        );
        Tower::Lookup { entity, table }
    }
}

impl Net<f32> {
    /// Builds the structure and draws initial parameters.
    pub fn build(
        config: &ModelConfig,
        data: &Dataset,
        scenario: Scenario,
        seed: u64,
    ) -> Result<(Net<f32>, ParamStore<f32>)> {
        config.validate()?;
        let kind = config.kind;
        let item_modal = kind.is_multimodal() && config.side != Side::User;
        let user_modal = kind.is_multimodal() && config.side != Side::Item;
        let shape = ModelShape {
            n_users: data.n_users(),
            n_items: data.n_items(),
            scenario,
            item_sources: if item_modal {
                resolve_sources(data, Entity::Item, &config.train_modalities)?
            } else {
                Vec::new()
            },
            user_sources: if user_modal {
                resolve_sources(data, Entity::User, &config.user_modalities)?
            } else {
                Vec::new()
            },
        };
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed, "init");
        let arch = if kind == ModelKind::Mubrar {
            Arch::Multi
        } else {
            Arch::Single
        };
        let counterpart = |entity: Entity| match config.counterpart {
            CounterpartTower::Lookup => false,
            CounterpartTower::Profile => true,
            CounterpartTower::Auto => scenario.cold_entity() == Some(entity),
        };
        let (user, item) = match kind {
            ModelKind::Pop | ModelKind::Rand => (None, None),
            ModelKind::Mf => (
                Some(plain_tower(&mut store, config, &shape, Entity::User, false, &mut rng)),
                Some(plain_tower(&mut store, config, &shape, Entity::Item, false, &mut rng)),
            ),
            ModelKind::Deepmf => (
                Some(plain_tower(&mut store, config, &shape, Entity::User, true, &mut rng)),
                Some(plain_tower(&mut store, config, &shape, Entity::Item, true, &mut rng)),
            ),
            ModelKind::Sibrar | ModelKind::Mubrar => {
                let user = if user_modal {
                    Tower::Modal(modal_tower(&mut store, config, Entity::User, arch, shape.user_sources.clone(), &mut rng))
                } else {
                    let p = counterpart(Entity::User);
                    plain_tower(&mut store, config, &shape, Entity::User, p, &mut rng)
                };
                let item = if item_modal {
                    Tower::Modal(modal_tower(&mut store, config, Entity::Item, arch, shape.item_sources.clone(), &mut rng))
                } else {
                    let p = counterpart(Entity::Item);
                    plain_tower(&mut store, config, &shape, Entity::Item, p, &mut rng)
                };
                (Some(user), Some(item))
            }
        };
        let net = Net {
            config: config.clone(),
            shape,
            user,
            item,
            popularity: vec![0.0; data.n_items()],
            seed,
        };
        Ok((net, store))
    }
}

impl<T: Real> Net<T> {
    pub fn cast<U: Real>(&self) -> Net<U> {
        Net {
            config: self.config.clone(),
            shape: self.shape.clone(),
            user: self.user.as_ref().map(Tower::cast),
            item: self.item.as_ref().map(Tower::cast),
            popularity: self.popularity.clone(),
            seed: self.seed,
        }
    }

    pub fn tower(&self, entity: Entity) -> Option<&Tower<T>> {
        match entity {
            Entity::User => self.user.as_ref(),
            Entity::Item => self.item.as_ref(),
        }
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp<T>> {
        let mut v = Vec::new();
        if let Some(t) = &mut self.user {
            v.extend(t.mlps_mut());
        }
        if let Some(t) = &mut self.item {
            v.extend(t.mlps_mut());
        }
        v
    }

    fn modal(&self, entity: Entity) -> Option<&ModalTower<T>> {
        match self.tower(entity) {
            Some(Tower::Modal(m)) => Some(m),
            _ => None,
        }
    }

    /// Entities that can be encoded during training.
    pub fn sample_pools(&self, view: &DataView, item_pool: &[usize]) -> SamplePools {
        let keep = |entity: Entity, e: usize| match self.modal(entity) {
            Some(m) => !m.available(view, e).is_empty(),
            None => true,
        };
        SamplePools {
            items: item_pool.iter().copied().filter(|&i| keep(Entity::Item, i)).collect(),
            users: (0..view.count(Entity::User))
                .filter(|&u| !view.profile(Entity::User, u).is_empty() && keep(Entity::User, u))
                .collect(),
        }
    }

    /// Samples the modalities of an anchor entity.
    fn anchor_mods(&self, entity: Entity, view: &DataView, e: usize, weight: f64, rng: &mut SeededRng) -> Result<Vec<usize>> {
        let Some(m) = self.modal(entity) else {
            return Ok(Vec::new());
        };
        let avail = m.available(view, e);
        if avail.is_empty() {
            return Err(MmrecError::InvalidData(format!(
                "{} {e} has none of the training modalities",
                entity.as_str()
            )));
        }
        match self.config.n_mod(weight) {
            NMod::All => Ok(avail),
            NMod::Fixed(k) => sample_modalities(&avail, k.min(avail.len()), rng),
        }
    }

    /// Modalities of a negative: the anchor's, with any the negative lacks
    /// replaced by one of its own (vanilla encodes everything it has).
    fn negative_mods(&self, entity: Entity, view: &DataView, e: usize, anchor: &[usize], weight: f64, rng: &mut SeededRng) -> Vec<usize> {
        let Some(m) = self.modal(entity) else {
            return Vec::new();
        };
        let avail = m.available(view, e);
        if self.config.n_mod(weight) == NMod::All {
            return avail;
        }
        anchor
            .iter()
            .map(|s| {
                if avail.contains(s) {
                    *s
                } else {
                    avail[rng.below(avail.len())]
                }
            })
            .collect()
    }

    /// Draws negatives and modalities for a batch of positive pairs.
    pub fn plan_batch(&self, view: &DataView, batch: &[(usize, usize)], pools: &SamplePools, rng: &mut SeededRng) -> Result<BatchPlan> {
        let n_neg = self.config.loss.n_neg;
        let (wi, wu) = (self.config.item_weight(), self.config.user_weight());
        let user_contrast = self.modal(Entity::User).is_some() && self.config.n_mod(wu) == NMod::Fixed(2);
        let user_block = if user_contrast { 1 + n_neg } else { 1 };
        let mut plan = BatchPlan {
            users: Vec::with_capacity(batch.len() * user_block),
            user_mods: Vec::new(),
            user_block,
            items: Vec::with_capacity(batch.len() * (1 + n_neg)),
            item_mods: Vec::new(),
            item_block: 1 + n_neg,
        };
        for &(u, i) in batch {
            let negs = sample_negatives_from(u, n_neg, &view.train, ItemPool::Subset(&pools.items), rng)?;
            let pos_mods = self.anchor_mods(Entity::Item, view, i, wi, rng)?;
            plan.items.push(i);
            for &j in &negs {
                plan.items.push(j);
            }
            if self.modal(Entity::Item).is_some() {
                plan.item_mods.push(pos_mods.clone());
                for &j in &negs {
                    let m = self.negative_mods(Entity::Item, view, j, &pos_mods, wi, rng);
                    plan.item_mods.push(m);
                }
            }
            let u_mods = self.anchor_mods(Entity::User, view, u, wu, rng)?;
            plan.users.push(u);
            if self.modal(Entity::User).is_some() {
                plan.user_mods.push(u_mods.clone());
            }
            if user_contrast {
                for _ in 0..n_neg {
                    let v = if pools.users.len() > 1 {
                        loop {
                            let v = pools.users[rng.below(pools.users.len())];
                            if v != u {
                                break v;
                            }
                        }
                    } else {
                        u
                    };
                    plan.users.push(v);
                    let m = self.negative_mods(Entity::User, view, v, &u_mods, wu, rng);
                    plan.user_mods.push(m);
                }
            }
        }
        Ok(plan)
    }

    fn embed<R: RngCore + ?Sized>(
        &mut self,
        entity: Entity,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        view: &DataView,
        ents: &[usize],
        mods: &[Vec<usize>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Option<Encoded>)> {
        let tower = match entity {
            Entity::User => self.user.as_mut(),
            Entity::Item => self.item.as_mut(),
        }
        .ok_or_else(|| MmrecError::Config(format!("{:?} has no {} tower", self.config.kind, entity.as_str())))?;
        match tower {
            Tower::Modal(m) => {
                let enc = m.encode(g, store, view, ents, mods, mode, rng)?;
                Ok((enc.mean, Some(enc)))
            }
            t => Ok((t.embed_plain(g, store, view, ents, mode, rng)?, None)),
        }
    }

    fn pair_scores(&self, g: &mut Graph<T>, users: Var, items: Var) -> Result<Var> {
        if self.config.kind == ModelKind::Deepmf {
            let u = g.l2_normalize_rows(users);
            let i = g.l2_normalize_rows(items);
            let c = g.row_dot(u, i)?;
            Ok(g.clamp_min(c, self.config.mu))
        } else {
            Ok(g.row_dot(users, items)?)
        }
    }

    /// Contrastive term over the pairs whose anchor got two modalities.
    fn contrast(g: &mut Graph<T>, enc: &Encoded, block: usize, tau: f64) -> Result<Option<Var>> {
        let pairs = enc.slots.len() / block;
        let two: Vec<usize> = (0..pairs).filter(|&b| enc.slots[b * block].len() == 2).collect();
        if two.is_empty() {
            return Ok(None);
        }
        let pick = |q: usize| -> Vec<usize> {
            two.iter()
                .flat_map(|&b| (0..block).map(move |c| b * block + c))
                .map(|c| enc.slots[c][q.min(enc.slots[c].len() - 1)])
                .collect()
        };
        let m1 = g.gather(enc.rows, pick(0))?;
        let m2 = g.gather(enc.rows, pick(1))?;
        Ok(Some(sinfonce_loss(g, m1, m2, block, tau)?))
    }

    /// Total training loss of a planned batch: the ranking loss plus the
    /// weighted contrastive terms.
    pub fn batch_loss<R: RngCore + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        view: &DataView,
        plan: &BatchPlan,
        mode: Mode,
        rng: &mut R,
    ) -> Result<LossParts> {
        let s = plan.item_block;
        let pairs = plan.n_pairs();
        let (items, item_enc) = self.embed(Entity::Item, g, store, view, &plan.items, &plan.item_mods, mode, rng)?;
        let (users, user_enc) = self.embed(Entity::User, g, store, view, &plan.users, &plan.user_mods, mode, rng)?;
        let ub = plan.user_block;
        let rep: Vec<usize> = (0..pairs).flat_map(|b| std::iter::repeat_n(b * ub, s)).collect();
        let users = g.gather(users, rep)?;
        let scores = self.pair_scores(g, users, items)?;
        let rank = if self.config.kind == ModelKind::Deepmf {
            bce_loss(g, scores, s, self.config.mu)?
        } else {
            bpr_loss(g, scores, s)?
        };
        let tau = self.config.loss.tau;
        let mut total = rank;
        let mut parts = [None, None];
        for (k, (enc, block, w)) in [
            (&item_enc, s, self.config.item_weight()),
            (&user_enc, ub, self.config.user_weight()),
        ]
        .into_iter()
        .enumerate()
        {
            if w <= 0.0 {
                continue;
            }
            if let Some(enc) = enc {
                if let Some(c) = Self::contrast(g, enc, block, tau)? {
                    let wc = g.scale(c, w);
                    total = g.add(total, wc)?;
                    parts[k] = Some(c);
                }
            }
        }
        Ok(LossParts {
            total,
            rank,
            item_contrast: parts[0],
            user_contrast: parts[1],
        })
    }

    /// Eval-mode per-modality embeddings of `ents`.
    pub fn modality_bank(&mut self, store: &ParamStore<T>, view: &DataView, entity: Entity, ents: &[usize]) -> Result<ModalityBank> {
        let d = self.config.embedding_dim;
        let mut rng = SeededRng::new(0, "eval");
        let tower = match entity {
            Entity::User => self.user.as_mut(),
            Entity::Item => self.item.as_mut(),
        }
        .ok_or_else(|| MmrecError::Config(format!("{:?} has no {} tower", self.config.kind, entity.as_str())))?;
        let mut bank = ModalityBank {
            entity,
            names: Vec::new(),
            dim: d,
            ents: ents.to_vec(),
            embs: Vec::new(),
            avail: Vec::new(),
        };
        match tower {
            Tower::Modal(m) => {
                for s in 0..m.sources.len() {
                    let idx: Vec<usize> = (0..ents.len())
                        .filter(|&r| m.sources[s].available(view, entity, ents[r]))
                        .collect();
                    let mut emb = vec![0f32; ents.len() * d];
                    if !idx.is_empty() {
                        let sub: Vec<usize> = idx.iter().map(|&r| ents[r]).collect();
                        let mods = vec![vec![s]; sub.len()];
                        let mut g = Graph::new();
                        let enc = m.encode(&mut g, store, view, &sub, &mods, Mode::Eval, &mut rng)?;
                        let out = g.value(enc.rows);
                        for (k, &r) in idx.iter().enumerate() {
                            for (o, v) in emb[r * d..(r + 1) * d].iter_mut().zip(out.row(k)) {
                                *o = v.to_f64() as f32;
                            }
                        }
                    }
                    let mut avail = vec![false; ents.len()];
                    for &r in &idx {
                        avail[r] = true;
                    }
                    bank.names.push(m.sources[s].name.clone());
                    bank.embs.push(emb);
                    bank.avail.push(avail);
                }
            }
            t => {
                let mut g = Graph::new();
                let v = if ents.is_empty() {
                    None
                } else {
                    Some(t.embed_plain(&mut g, store, view, ents, Mode::Eval, &mut rng)?)
                };
                bank.names.push("embedding".into());
                bank.embs.push(v.map_or_else(Vec::new, |v| {
                    g.value(v).data().iter().map(|x| x.to_f64() as f32).collect()
                }));
                bank.avail.push(vec![true; ents.len()]);
            }
        }
        Ok(bank)
    }

    /// Builds a frozen scorer for the given users and items. `item_subset`
    /// restricts item modalities (all trained modalities when `None`).
    pub fn scorer(
        &mut self,
        store: &ParamStore<T>,
        view: &DataView,
        users: &[usize],
        items: &[usize],
        item_subset: Option<&[String]>,
    ) -> Result<Scorer> {
        let d = self.config.embedding_dim;
        let kind = match self.config.kind {
            ModelKind::Pop => {
                return Ok(Scorer {
                    kind: ScoreKind::Pop(self.popularity.clone()),
                    dim: 0,
                    users: Vec::new(),
                    items: Vec::new(),
                })
            }
            ModelKind::Rand => {
                return Ok(Scorer {
                    kind: ScoreKind::Rand(self.seed),
                    dim: 0,
                    users: Vec::new(),
                    items: Vec::new(),
                })
            }
            ModelKind::Deepmf => ScoreKind::Cosine(self.config.mu),
            _ => ScoreKind::Dot,
        };
        let ubank = self.modality_bank(store, view, Entity::User, users)?;
        let ibank = self.modality_bank(store, view, Entity::Item, items)?;
        let subset = match item_subset {
            None => (0..ibank.names.len()).collect(),
            Some(names) => ibank.subset_indices(names)?,
        };
        let (ue, _) = ubank.combine(&(0..ubank.names.len()).collect::<Vec<_>>());
        let (ie, _) = ibank.combine(&subset);
        let mut user_rows = vec![0f32; self.shape.n_users * d];
        for (r, &u) in users.iter().enumerate() {
            user_rows[u * d..(u + 1) * d].copy_from_slice(&ue[r * d..(r + 1) * d]);
        }
        let mut item_rows = vec![0f32; self.shape.n_items * d];
        for (r, &i) in items.iter().enumerate() {
            item_rows[i * d..(i + 1) * d].copy_from_slice(&ie[r * d..(r + 1) * d]);
        }
        Ok(Scorer {
            kind,
            dim: d,
            users: user_rows,
            items: item_rows,
        })
    }
}

/// Eval-mode embeddings of a set of entities, one matrix per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBank {
    pub entity: Entity,
    pub names: Vec<String>,
    pub dim: usize,
    pub ents: Vec<usize>,
    /// Per modality, `ents.len() × dim` row-major; zero rows where unavailable.
    pub embs: Vec<Vec<f32>>,
    pub avail: Vec<Vec<bool>>,
}

impl ModalityBank {
    pub fn subset_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        if names.is_empty() {
            return Err(MmrecError::Config("empty modality subset".into()));
        }
        names
            .iter()
            .map(|n| {
                self.names.iter().position(|m| m == n).ok_or_else(|| {
                    MmrecError::Config(format!("modality `{n}` was not trained"))
                })
            })
            .collect()
    }

    /// Mean over the available modalities of `subset`, per entity. Entities
    /// with none of them get a zero row and `false` in the returned mask.
    pub fn combine(&self, subset: &[usize]) -> (Vec<f32>, Vec<bool>) {
        let (n, d) = (self.ents.len(), self.dim);
        let mut out = vec![0f32; n * d];
        let mut has = vec![false; n];
        let mut acc = vec![0f64; d];
        for r in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut k = 0usize;
            for &s in subset {
                if self.avail[s][r] {
                    k += 1;
                    for (a, v) in acc.iter_mut().zip(&self.embs[s][r * d..(r + 1) * d]) {
                        *a += *v as f64;
                    }
                }
            }
            if k > 0 {
                has[r] = true;
                for (o, a) in out[r * d..(r + 1) * d].iter_mut().zip(&acc) {
                    *o = (a / k as f64) as f32;
                }
            }
        }
        (out, has)
    }

    /// Embedding of entity row `r` under modality `s`, if available.
    pub fn row(&self, s: usize, r: usize) -> Option<&[f32]> {
        self.avail[s][r].then(|| &self.embs[s][r * self.dim..(r + 1) * self.dim])
    }
}

#[derive(Clone, Debug)]
pub enum ScoreKind {
    Dot,
    Cosine(f64),
    Pop(Vec<f64>),
    Rand(u64),
}

/// Frozen user/item embeddings; scoring is pure and thread-safe.
#[derive(Clone, Debug)]
pub struct Scorer {
    pub kind: ScoreKind,
    pub dim: usize,
    users: Vec<f32>,
    items: Vec<f32>,
}

pub fn rand_score(seed: u64, user: usize, item: usize) -> f64 {
    (splitmix64(mix(&[seed, user as u64, item as u64])) >> 11) as f64 / (1u64 << 53) as f64
}

impl Scorer {
    pub fn user_embedding(&self, u: usize) -> &[f32] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_embedding(&self, i: usize) -> &[f32] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        match &self.kind {
            ScoreKind::Pop(phi) => phi[i],
            ScoreKind::Rand(seed) => rand_score(*seed, u, i),
            ScoreKind::Dot => dot(self.user_embedding(u), self.item_embedding(i)),
            ScoreKind::Cosine(mu) => {
                let (a, b) = (self.user_embedding(u), self.item_embedding(i));
                let na = dot(a, a).sqrt().max(1e-12);
                let nb = dot(b, b).sqrt().max(1e-12);
                (dot(a, b) / (na * nb)).max(*mu)
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// The `k` highest-scoring candidates not in `exclude` (sorted), ties broken
/// by ascending item index.
pub fn top_k(
    score: impl Fn(usize) -> f64,
    candidates: &[usize],
    exclude: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|i| exclude.binary_search(i).is_err())
        .map(|&i| (score(i), i))
        .collect();
    if scored.len() < k {
        return Err(MmrecError::InvalidData(format!(
            "{} candidates left for top-{k}",
            scored.len()
        )));
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() && k > 0 {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Top-k recommendation for one user from a frozen scorer.
pub fn recommend_topk(scorer: &Scorer, user: usize, k: usize, candidates: &[usize], exclude: &[usize]) -> Result<Vec<usize>> {
    top_k(|i| scorer.score(user, i), candidates, exclude, k)
}

impl Model<f32> {
    pub fn new(config: &ModelConfig, data: &Dataset, scenario: Scenario, seed: u64) -> Result<Self> {
        let (net, store) = Net::build(config, data, scenario, seed)?;
        Ok(Model { net, store })
    }
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            net: self.net.cast(),
            store: self.store.cast(),
        }
    }

    /// Sets the popularity baseline's scores from training interactions.
    pub fn fit_popularity(&mut self, view: &DataView) {
        self.net.popularity = view.popularity();
    }

    pub fn plan_batch(&self, view: &DataView, batch: &[(usize, usize)], pools: &SamplePools, rng: &mut SeededRng) -> Result<BatchPlan> {
        self.net.plan_batch(view, batch, pools, rng)
    }

    pub fn batch_loss<R: RngCore + ?Sized>(&mut self, g: &mut Graph<T>, view: &DataView, plan: &BatchPlan, mode: Mode, rng: &mut R) -> Result<LossParts> {
        self.net.batch_loss(g, &self.store, view, plan, mode, rng)
    }

    pub fn modality_bank(&mut self, view: &DataView, entity: Entity, ents: &[usize]) -> Result<ModalityBank> {
        self.net.modality_bank(&self.store, view, entity, ents)
    }

    pub fn scorer(&mut self, view: &DataView, users: &[usize], items: &[usize], item_subset: Option<&[String]>) -> Result<Scorer> {
        self.net.scorer(&self.store, view, users, items, item_subset)
    }

    /// Inference embedding of items: the mean over the requested modalities
    /// each item has. Items with none of them embed to zero.
    pub fn embed_items(&mut self, view: &DataView, items: &[usize], subset: &[String]) -> Result<Tensor<f32>> {
        let bank = self.modality_bank(view, Entity::Item, items)?;
        let idx = bank.subset_indices(subset)?;
        let (e, _) = bank.combine(&idx);
        Ok(Tensor::new(vec![items.len(), bank.dim], e)?)
    }

    /// Names of the trained item modalities (empty for non-modal items).
    pub fn item_modalities(&self) -> Vec<String> {
        self.net.shape.item_sources.iter().map(|s| s.name.clone()).collect()
    }
}
