use diffcore::nn::{Mlp, Mode};
use diffcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Entity, INTERACTIONS};
use crate::view::DataView;
use crate::{MmrecError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    /// The densified training profile.
    Interactions,
    /// Index into the dataset's feature stores of the tower's entity kind.
    Feature(usize),
}

/// One modality an encoder consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub name: String,
    pub kind: SourceKind,
    pub dim: usize,
}

impl Source {
    pub fn available(&self, view: &DataView, entity: Entity, e: usize) -> bool {
        match self.kind {
            SourceKind::Interactions => !view.profile(entity, e).is_empty(),
            SourceKind::Feature(k) => view.data.modalities(entity)[k].is_available(e),
        }
    }

    fn push_row<T: Real>(&self, view: &DataView, entity: Entity, e: usize, out: &mut Vec<T>) -> Result<()> {
        match self.kind {
            SourceKind::Interactions => {
                let start = out.len();
                out.resize(start + self.dim, T::ZERO);
                for &j in view.profile(entity, e) {
                    out[start + j] = T::ONE;
                }
            }
            SourceKind::Feature(k) => {
                let row = view.data.modalities(entity)[k].row(e).ok_or_else(|| {
                    MmrecError::InvalidData(format!(
                        "modality `{}` is unavailable for {} {e}",
                        self.name,
                        entity.as_str()
                    ))
                })?;
                out.extend(row.iter().map(|&v| T::from_f64(v as f64)));
            }
        }
        Ok(())
    }
}

/// Resolves modality names for `entity`; an empty list selects
/// "interactions" followed by every feature store.
pub fn resolve_sources(data: &Dataset, entity: Entity, names: &[String]) -> Result<Vec<Source>> {
    let other = match entity {
        Entity::User => data.n_items(),
        Entity::Item => data.n_users(),
    };
    let stores = data.modalities(entity);
    let all: Vec<String> = std::iter::once(INTERACTIONS.to_string())
        .chain(stores.iter().map(|s| s.name.clone()))
        .collect();
    let names = if names.is_empty() { &all[..] } else { names };
    let mut out: Vec<Source> = Vec::new();
    for name in names {
        if out.iter().any(|s| &s.name == name) {
            return Err(MmrecError::Config(format!("modality `{name}` listed twice")));
        }
        let source = if name == INTERACTIONS {
            Source {
                name: name.clone(),
                kind: SourceKind::Interactions,
                dim: other,
            }
        } else {
            let k = stores.iter().position(|s| &s.name == name).ok_or_else(|| {
                MmrecError::Config(format!("no {} modality named `{name}`", entity.as_str()))
            })?;
            Source {
                name: name.clone(),
                kind: SourceKind::Feature(k),
                dim: stores[k].dim,
            }
        };
        out.push(source);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Per-modality one-layer adapters followed by one shared encoder.
    Single,
    /// One independent deep network per modality.
    Multi,
}

/// Encodes entities from their modalities.
#[derive(Clone, Debug)]
pub struct ModalTower<T> {
    pub entity: Entity,
    pub arch: Arch,
    pub sources: Vec<Source>,
    /// `f_k`: adapters (single branch) or full branches (multi branch).
    pub adapters: Vec<Mlp<T>>,
    /// `g`: the encoder shared by all modalities (single branch only).
    pub shared: Option<Mlp<T>>,
}

/// Output of [`ModalTower::encode`]: one row per (candidate, slot), the row
/// indices of each candidate's slots, and each candidate's mean embedding.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub rows: Var,
    pub slots: Vec<Vec<usize>>,
    pub mean: Var,
}

impl<T: Real> ModalTower<T> {
    pub fn available(&self, view: &DataView, e: usize) -> Vec<usize> {
        (0..self.sources.len())
            .filter(|&s| self.sources[s].available(view, self.entity, e))
            .collect()
    }

    /// Embeds candidate `ents[c]` on the modalities `mods[c]` (source
    /// indices). Rows are grouped by modality so each adapter runs once.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<R: RngCore + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        view: &DataView,
        ents: &[usize],
        mods: &[Vec<usize>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Encoded> {
        let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.sources.len()];
        for (c, m) in mods.iter().enumerate() {
            if m.is_empty() {
                return Err(MmrecError::InvalidData(format!(
                    "{} {} has no modality to encode",
                    self.entity.as_str(),
                    ents[c]
                )));
            }
            for (q, &s) in m.iter().enumerate() {
                groups[s].push((c, q));
            }
        }
        let mut slots: Vec<Vec<usize>> = mods.iter().map(|m| vec![0; m.len()]).collect();
        let mut parts = Vec::new();
        let mut offset = 0;
        for (s, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let src = &self.sources[s];
            let mut data = Vec::with_capacity(group.len() * src.dim);
            for &(c, _) in group {
                src.push_row(view, self.entity, ents[c], &mut data)?;
            }
            let x = g.constant(Tensor::new(vec![group.len(), src.dim], data)?);
            // a branch cannot normalize a single row with batch statistics
            let branch_mode = if self.arch == Arch::Multi && group.len() < 2 {
                Mode::Eval
            } else {
                mode
            };
            parts.push(self.adapters[s].forward(g, store, x, branch_mode, rng)?);
            for (r, &(c, q)) in group.iter().enumerate() {
                slots[c][q] = offset + r;
            }
            offset += group.len();
        }
        let mut rows = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        if let Some(shared) = &mut self.shared {
            rows = shared.forward(g, store, rows, mode, rng)?;
        }
        let mean = g.segment_mean(rows, slots.clone())?;
        Ok(Encoded { rows, slots, mean })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.adapters.iter().flat_map(Mlp::params).collect();
        if let Some(s) = &self.shared {
            out.extend(s.params());
        }
        out
    }

    fn cast<U: Real>(&self) -> ModalTower<U> {
        ModalTower {
            entity: self.entity,
            arch: self.arch,
            sources: self.sources.clone(),
            adapters: self.adapters.iter().map(Mlp::cast).collect(),
            shared: self.shared.as_ref().map(Mlp::cast),
        }
    }

    fn mlps_mut(&mut self) -> Vec<&mut Mlp<T>> {
        let mut v: Vec<&mut Mlp<T>> = self.adapters.iter_mut().collect();
        v.extend(self.shared.as_mut());
        v
    }
}

/// Entity encoder `h` or item encoder.
#[derive(Clone, Debug)]
pub enum Tower<T> {
    Lookup { entity: Entity, table: ParamId },
    Profile { entity: Entity, encoder: Mlp<T> },
    Modal(ModalTower<T>),
}

impl<T: Real> Tower<T> {
    pub fn entity(&self) -> Entity {
        match self {
            Tower::Lookup { entity, .. } | Tower::Profile { entity, .. } => *entity,
            Tower::Modal(m) => m.entity,
        }
    }

    /// Embeds entities through a lookup table or profile encoder.
    pub fn embed_plain<R: RngCore + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        view: &DataView,
        ents: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        match self {
            Tower::Lookup { table, .. } => Ok(g.embedding_lookup(store, *table, ents.to_vec())?),
            Tower::Profile { entity, encoder } => {
                let dim = encoder.in_dim();
                let mut data = vec![T::ZERO; ents.len() * dim];
                for (r, &e) in ents.iter().enumerate() {
                    for &j in view.profile(*entity, e) {
                        data[r * dim + j] = T::ONE;
                    }
                }
                let x = g.constant(Tensor::new(vec![ents.len(), dim], data)?);
                Ok(encoder.forward(g, store, x, mode, rng)?)
            }
            Tower::Modal(_) => Err(MmrecError::InvalidData(
                "modal towers embed through encode()".into(),
            )),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Tower::Lookup { table, .. } => vec![*table],
            Tower::Profile { encoder, .. } => encoder.params(),
            Tower::Modal(m) => m.params(),
        }
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp<T>> {
        match self {
            Tower::Lookup { .. } => Vec::new(),
            Tower::Profile { encoder, .. } => vec![encoder],
            Tower::Modal(m) => m.mlps_mut(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tower<U> {
        match self {
            Tower::Lookup { entity, table } => Tower::Lookup {
                entity: *entity,
                table: *table,
            },
            Tower::Profile { entity, encoder } => Tower::Profile {
                entity: *entity,
                encoder: encoder.cast(),
            },
            Tower::Modal(m) => Tower::Modal(m.cast()),
        }
    }
}
