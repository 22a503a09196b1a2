//! Multimodal datasets: entity registries, the binary interaction matrix and
//! dense per-entity feature stores.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::hash::Hash;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{MmrecError, Result};

/// Name of the implicit modality derived from interaction profiles.
pub const INTERACTIONS: &str = "interactions";

const MMR1_MAGIC: &[u8; 4] = b"MMR1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entity {
    User,
    Item,
}

impl Entity {
    pub fn as_str(self) -> &'static str {
        match self {
            Entity::User => "user",
            Entity::Item => "item",
        }
    }
}

/// Dense side-information matrix for one modality of one entity kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityStore {
    pub name: String,
    pub entity: Entity,
    pub dim: usize,
    matrix: Vec<f32>,
    available: Vec<bool>,
}

impl ModalityStore {
    pub fn new(
        name: impl Into<String>,
        entity: Entity,
        dim: usize,
        matrix: Vec<f32>,
        available: Vec<bool>,
    ) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(MmrecError::InvalidData(format!("modality `{name}` has dim 0")));
        }
        if matrix.len() != available.len() * dim {
            return Err(MmrecError::InvalidData(format!(
                "modality `{name}`: {} values for {} rows of dim {dim}",
                matrix.len(),
                available.len()
            )));
        }
        for (e, &ok) in available.iter().enumerate() {
            if ok && matrix[e * dim..(e + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(MmrecError::InvalidData(format!(
                    "modality `{name}`: non-finite value in available row {e}"
                )));
            }
        }
        Ok(ModalityStore {
            name,
            entity,
            dim,
            matrix,
            available,
        })
    }

    pub fn len(&self) -> usize {
        self.available.len()
    }

    pub fn is_empty(&self) -> bool {
        self.available.is_empty()
    }

    pub fn is_available(&self, e: usize) -> bool {
        self.available[e]
    }

    pub fn mask(&self) -> &[bool] {
        &self.available
    }

    /// Feature row of entity `e`, or `None` when masked out.
    pub fn row(&self, e: usize) -> Option<&[f32]> {
        self.available[e].then(|| &self.matrix[e * self.dim..(e + 1) * self.dim])
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }
}

/// Index pairs of positive interactions, stored as sorted per-user lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interactions {
    n_items: usize,
    by_user: Vec<Vec<usize>>,
}

impl Interactions {
    /// Builds from arbitrary pairs; duplicates are collapsed.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut by_user = vec![Vec::new(); n_users];
        for &(u, i) in pairs {
            if u >= n_users || i >= n_items {
                return Err(MmrecError::InvalidData(format!(
                    "interaction ({u}, {i}) out of range {n_users}x{n_items}"
                )));
            }
            by_user[u].push(i);
        }
        for items in &mut by_user {
            items.sort_unstable();
            items.dedup();
        }
        Ok(Interactions { n_items, by_user })
    }

    pub fn n_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.by_user.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.by_user[u]
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.by_user[u].binary_search(&i).is_ok()
    }

    /// All pairs in (user, item) lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect()
    }

    /// Column view: sorted user lists per item.
    pub fn by_item(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.n_items];
        for (u, items) in self.by_user.iter().enumerate() {
            for &i in items {
                cols[i].push(u);
            }
        }
        cols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    interactions: Interactions,
    pub user_modalities: Vec<ModalityStore>,
    pub item_modalities: Vec<ModalityStore>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        pairs: &[(usize, usize)],
        user_modalities: Vec<ModalityStore>,
        item_modalities: Vec<ModalityStore>,
    ) -> Result<Self> {
        check_unique(&user_ids, Entity::User)?;
        check_unique(&item_ids, Entity::Item)?;
        let interactions = Interactions::from_pairs(user_ids.len(), item_ids.len(), pairs)?;
        for (stores, entity, n) in [
            (&user_modalities, Entity::User, user_ids.len()),
            (&item_modalities, Entity::Item, item_ids.len()),
        ] {
            let mut names = HashSet::new();
            for s in stores {
                if s.entity != entity || s.len() != n {
                    return Err(MmrecError::InvalidData(format!(
                        "modality `{}` must have one row per {}",
                        s.name,
                        entity.as_str()
                    )));
                }
                if s.name == INTERACTIONS || !names.insert(s.name.as_str()) {
                    return Err(MmrecError::InvalidData(format!(
                        "modality name `{}` is reserved or repeated",
                        s.name
                    )));
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            user_ids,
            item_ids,
            interactions,
            user_modalities,
            item_modalities,
        })
    }

    /// Dataset with synthetic ids `u0..`, `i0..` and no side information.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Dataset::new(
            "pairs",
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            pairs,
            Vec::new(),
            Vec::new(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn interactions(&self) -> &Interactions {
        &self.interactions
    }

    pub fn modalities(&self, entity: Entity) -> &[ModalityStore] {
        match entity {
            Entity::User => &self.user_modalities,
            Entity::Item => &self.item_modalities,
        }
    }

    pub fn modality(&self, entity: Entity, name: &str) -> Option<&ModalityStore> {
        self.modalities(entity).iter().find(|s| s.name == name)
    }

    /// Number of users whose profile counts as an "interactions" modality.
    pub fn n_user_profiles(&self) -> usize {
        (0..self.n_users())
            .filter(|&u| !self.interactions.user_items(u).is_empty())
            .count()
    }
}

fn check_unique(ids: &[String], entity: Entity) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(MmrecError::DuplicateId {
                entity: entity.as_str(),
                id: id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Mmr1,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub entity: Entity,
    pub dim: usize,
    pub file: String,
    pub format: MatrixFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
}

/// Contents of `dataset.json`. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub users_file: String,
    pub items_file: String,
    pub interactions_file: String,
    #[serde(default)]
    pub modalities: Vec<ModalitySpec>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MmrecError::io(path, e))
}

fn read_registry(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// `user<TAB>item[<TAB>value]` lines. Values are returned when present.
pub fn read_interactions(path: &Path) -> Result<Vec<(String, String, Option<f64>)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let value = match fields.len() {
            2 => None,
            3 => Some(fields[2].trim().parse::<f64>().map_err(|_| {
                MmrecError::parse(path, format!("line {}: bad value `{}`", n + 1, fields[2]))
            })?),
            k => {
                return Err(MmrecError::parse(
                    path,
                    format!("line {}: expected 2 or 3 fields, got {k}", n + 1),
                ))
            }
        };
        out.push((fields[0].trim().to_string(), fields[1].trim().to_string(), value));
    }
    Ok(out)
}

/// Reads an MMR1 matrix, returning (rows, cols, values).
pub fn read_mmr1(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| MmrecError::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MMR1_MAGIC {
        return Err(MmrecError::parse(path, "missing MMR1 header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(MmrecError::parse(
            path,
            format!("expected {} payload bytes, found {}", rows * cols * 4, body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

pub fn write_mmr1(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), rows * cols);
    let mut buf = Vec::with_capacity(12 + values.len() * 4);
    buf.extend_from_slice(MMR1_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| MmrecError::io(path, e))
}

/// Reads an `id,v0,...` CSV into registry order. Entities without a row are
/// reported as missing in the returned mask.
fn read_csv_matrix(
    path: &Path,
    ids: &HashMap<&str, usize>,
    entity: Entity,
) -> Result<(usize, Vec<f32>, Vec<bool>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MmrecError::parse(path, "empty file"))?;
    let cols = header.split(',').count().saturating_sub(1);
    let mut matrix = vec![0.0f32; ids.len() * cols];
    let mut present = vec![false; ids.len()];
    for line in lines {
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").trim();
        let &e = ids.get(id).ok_or_else(|| MmrecError::UnknownId {
            entity: entity.as_str(),
            id: id.to_string(),
            path: path.to_path_buf(),
        })?;
        if present[e] {
            return Err(MmrecError::DuplicateId {
                entity: entity.as_str(),
                id: id.to_string(),
            });
        }
        let vals: Vec<f32> = fields
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| MmrecError::parse(path, format!("bad number in row `{id}`")))?;
        if vals.len() != cols {
            return Err(MmrecError::parse(path, format!("row `{id}` has {} values", vals.len())));
        }
        matrix[e * cols..(e + 1) * cols].copy_from_slice(&vals);
        present[e] = true;
    }
    Ok((cols, matrix, present))
}

fn read_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    let mask: Vec<bool> = read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(MmrecError::parse(path, format!("mask value `{other}`"))),
        })
        .collect::<Result<_>>()?;
    if mask.len() != n {
        return Err(MmrecError::parse(path, format!("{} mask lines for {n} entities", mask.len())));
    }
    Ok(mask)
}

/// Loads `dataset.json` and everything it references.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&read_text(manifest_path)?)
        .map_err(|e| MmrecError::parse(manifest_path, e.to_string()))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let user_ids = read_registry(&dir.join(&manifest.users_file))?;
    let item_ids = read_registry(&dir.join(&manifest.items_file))?;
    check_unique(&user_ids, Entity::User)?;
    check_unique(&item_ids, Entity::Item)?;
    let user_index: HashMap<&str, usize> =
        user_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let item_index: HashMap<&str, usize> =
        item_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();

    let inter_path = dir.join(&manifest.interactions_file);
    let mut pairs = Vec::new();
    for (u, i, _) in read_interactions(&inter_path)? {
        let lookup = |map: &HashMap<&str, usize>, id: &str, entity: Entity| {
            map.get(id).copied().ok_or_else(|| MmrecError::UnknownId {
                entity: entity.as_str(),
                id: id.to_string(),
                path: inter_path.clone(),
            })
        };
        pairs.push((
            lookup(&user_index, &u, Entity::User)?,
            lookup(&item_index, &i, Entity::Item)?,
        ));
    }

    let mut user_modalities = Vec::new();
    let mut item_modalities = Vec::new();
    for spec in &manifest.modalities {
        let (ids, n) = match spec.entity {
            Entity::User => (&user_index, user_ids.len()),
            Entity::Item => (&item_index, item_ids.len()),
        };
        let path = dir.join(&spec.file);
        let (cols, matrix, present) = match spec.format {
            MatrixFormat::Mmr1 => {
                let (rows, cols, values) = read_mmr1(&path)?;
                if rows != n {
                    return Err(MmrecError::parse(&path, format!("{rows} rows for {n} entities")));
                }
                (cols, values, vec![true; n])
            }
            MatrixFormat::Csv => read_csv_matrix(&path, ids, spec.entity)?,
        };
        if cols != spec.dim {
            return Err(MmrecError::DimMismatch {
                name: spec.name.clone(),
                declared: spec.dim,
                found: cols,
            });
        }
        let mut available = match &spec.mask_file {
            Some(m) => read_mask(&dir.join(m), n)?,
            None => vec![true; n],
        };
        for (a, p) in available.iter_mut().zip(&present) {
            *a &= *p;
        }
        let store = ModalityStore::new(spec.name.clone(), spec.entity, cols, matrix, available)?;
        match spec.entity {
            Entity::User => user_modalities.push(store),
            Entity::Item => item_modalities.push(store),
        }
    }
    Dataset::new(
        manifest.name,
        user_ids,
        item_ids,
        &pairs,
        user_modalities,
        item_modalities,
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MmrecError::io(path, e))
}

/// Writes `data` in the directory layout read by [`load_dataset`], with
/// matrices in MMR1 format. Returns the manifest path.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| MmrecError::io(dir, e))?;
    write_text(&dir.join("users.tsv"), &lines(&data.user_ids))?;
    write_text(&dir.join("items.tsv"), &lines(&data.item_ids))?;
    let mut inter = String::new();
    for (u, i) in data.interactions.pairs() {
        inter.push_str(&data.user_ids[u]);
        inter.push('\t');
        inter.push_str(&data.item_ids[i]);
        inter.push('\n');
    }
    write_text(&dir.join("interactions.tsv"), &inter)?;

    let mut specs = Vec::new();
    for store in data.user_modalities.iter().chain(&data.item_modalities) {
        let stem = format!("{}_{}", store.entity.as_str(), store.name);
        let file = format!("{stem}.mmr1");
        write_mmr1(&dir.join(&file), store.len(), store.dim, store.matrix())?;
        let mask_file = if store.mask().iter().all(|&a| a) {
            None
        } else {
            let name = format!("{stem}.mask");
            let body: String = store
                .mask()
                .iter()
                .map(|&a| if a { "1\n" } else { "0\n" })
                .collect();
            write_text(&dir.join(&name), &body)?;
            Some(name)
        };
        specs.push(ModalitySpec {
            name: store.name.clone(),
            entity: store.entity,
            dim: store.dim,
            file,
            format: MatrixFormat::Mmr1,
            mask_file,
        });
    }
    let manifest = Manifest {
        name: data.name.clone(),
        users_file: "users.tsv".into(),
        items_file: "items.tsv".into(),
        interactions_file: "interactions.tsv".into(),
        modalities: specs,
    };
    let path = dir.join("dataset.json");
    let mut f = fs::File::create(&path).map_err(|e| MmrecError::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| MmrecError::io(&path, e))?;
    Ok(path)
}

fn lines(ids: &[String]) -> String {
    ids.iter().map(|s| format!("{s}\n")).collect()
}

/// Keeps the pairs whose feedback value reaches `threshold`, in input order.
pub fn binarize_feedback<U: Clone, I: Clone>(raw: &[(U, I, f64)], threshold: f64) -> Vec<(U, I)> {
    raw.iter()
        .filter(|(_, _, v)| *v >= threshold)
        .map(|(u, i, _)| (u.clone(), i.clone()))
        .collect()
}

/// Iterated k-core filtering. Survivors keep their input order; duplicates
/// count once toward degrees.
pub fn core_filter<U, I>(pairs: &[(U, I)], k_user: usize, k_item: usize) -> Vec<(U, I)>
where
    U: Clone + Eq + Hash,
    I: Clone + Eq + Hash,
{
    // index the distinct pairs
    let mut users: HashMap<&U, usize> = HashMap::new();
    let mut items: HashMap<&I, usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut seen = HashSet::new();
    for (u, i) in pairs {
        let nu = users.len();
        let ui = *users.entry(u).or_insert(nu);
        let ni = items.len();
        let ii = *items.entry(i).or_insert(ni);
        if seen.insert((ui, ii)) {
            edges.push((ui, ii));
        }
    }
    let mut user_edges = vec![Vec::new(); users.len()];
    let mut item_edges = vec![Vec::new(); items.len()];
    for (e, &(u, i)) in edges.iter().enumerate() {
        user_edges[u].push(e);
        item_edges[i].push(e);
    }
    let mut udeg: Vec<usize> = user_edges.iter().map(Vec::len).collect();
    let mut ideg: Vec<usize> = item_edges.iter().map(Vec::len).collect();
    let mut alive = vec![true; edges.len()];
    let mut u_dead = vec![false; users.len()];
    let mut i_dead = vec![false; items.len()];

    // queue of (is_user, index) nodes below threshold
    let mut queue: VecDeque<(bool, usize)> = VecDeque::new();
    for (u, &d) in udeg.iter().enumerate() {
        if d < k_user {
            queue.push_back((true, u));
        }
    }
    for (i, &d) in ideg.iter().enumerate() {
        if d < k_item {
            queue.push_back((false, i));
        }
    }
    while let Some((is_user, n)) = queue.pop_front() {
        let dead = if is_user { &mut u_dead[n] } else { &mut i_dead[n] };
        if *dead {
            continue;
        }
        *dead = true;
        let incident = if is_user { &user_edges[n] } else { &item_edges[n] };
        for &e in incident {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = edges[e];
            if is_user {
                ideg[i] -= 1;
                if ideg[i] < k_item && !i_dead[i] {
                    queue.push_back((false, i));
                }
            } else {
                udeg[u] -= 1;
                if udeg[u] < k_user && !u_dead[u] {
                    queue.push_back((true, u));
                }
            }
        }
    }
    let keep: HashSet<(usize, usize)> = edges
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(&e, _)| e)
        .collect();
    let mut emitted = HashSet::new();
    pairs
        .iter()
        .filter(|(u, i)| {
            let key = (users[u], items[i]);
            keep.contains(&key) && emitted.insert(key)
        })
        .cloned()
        .collect()
}
