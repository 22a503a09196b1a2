//! Modality-gap diagnostics: intra/inter-item distances, a pooled PCA
//! projection and a modality-separability probe.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Entity;
use crate::models::{Model, ModalityBank};
use crate::rng::SeededRng;
use crate::view::DataView;
use crate::{MmrecError, Result};

pub const PROBE_SEEDS: usize = 20;
pub const PROBE_TRAIN_FRACTION: f64 = 0.8;
pub const EXPORT_ITEMS: usize = 500;
const PROBE_MIN_ITEMS: usize = 10;
const PROBE_ITERS: usize = 500;
const PROBE_LR: f64 = 0.5;
const PROBE_L2: f64 = 1e-4;

/// Per-modality embeddings of the same entities, all available.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank {
    pub modalities: Vec<String>,
    pub dim: usize,
    /// Entity index of each row.
    pub items: Vec<usize>,
    /// Per modality, `items.len() × dim` row-major.
    pub embs: Vec<Vec<f64>>,
}

impl EmbeddingBank {
    pub fn new(modalities: Vec<String>, dim: usize, items: Vec<usize>, embs: Vec<Vec<f64>>) -> Result<Self> {
        if modalities.len() != embs.len() || embs.iter().any(|e| e.len() != items.len() * dim) {
            return Err(MmrecError::InvalidData(
                "embedding bank matrices must all be items × dim".into(),
            ));
        }
        Ok(EmbeddingBank {
            modalities,
            dim,
            items,
            embs,
        })
    }

    /// Keeps the entities for which every modality is available.
    pub fn from_modality_bank(bank: &ModalityBank) -> Result<Self> {
        let d = bank.dim;
        let rows: Vec<usize> = (0..bank.ents.len())
            .filter(|&r| bank.avail.iter().all(|a| a[r]))
            .collect();
        let embs = bank
            .embs
            .iter()
            .map(|m| {
                rows.iter()
                    .flat_map(|&r| m[r * d..(r + 1) * d].iter().map(|&v| v as f64))
                    .collect()
            })
            .collect();
        EmbeddingBank::new(
            bank.names.clone(),
            d,
            rows.iter().map(|&r| bank.ents[r]).collect(),
            embs,
        )
    }

    /// Eval-mode item embeddings of a trained model, one matrix per item
    /// modality, restricted to `items` that have every modality.
    pub fn from_model<T: diffcore::Real>(model: &mut Model<T>, view: &DataView, items: &[usize]) -> Result<Self> {
        Self::from_modality_bank(&model.modality_bank(view, Entity::Item, items)?)
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn row(&self, m: usize, r: usize) -> &[f64] {
        &self.embs[m][r * self.dim..(r + 1) * self.dim]
    }

    /// Bank restricted to the given row positions.
    pub fn select(&self, rows: &[usize]) -> EmbeddingBank {
        let embs = (0..self.n_modalities())
            .map(|m| rows.iter().flat_map(|&r| self.row(m, r).iter().copied()).collect())
            .collect();
        EmbeddingBank {
            modalities: self.modalities.clone(),
            dim: self.dim,
            items: rows.iter().map(|&r| self.items[r]).collect(),
            embs,
        }
    }

    /// At most `max` rows drawn uniformly without replacement, in row order.
    pub fn subsample(&self, max: usize, seed: u64) -> EmbeddingBank {
        if self.n_items() <= max {
            return self.clone();
        }
        let mut rows = SeededRng::new(seed, "gap-subsample").sample_indices(self.n_items(), max);
        rows.sort_unstable();
        self.select(&rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    Euclidean,
    Cosine,
}

impl Measure {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Measure::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Measure::Cosine => cosine(a, b),
        }
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Mean over items of the mean pairwise measure between that item's
/// modality embeddings.
pub fn intra_metric(bank: &EmbeddingBank, f: Measure) -> Result<f64> {
    let m = bank.n_modalities();
    if m < 2 {
        return Err(MmrecError::InvalidData("intra-item metrics need two modalities".into()));
    }
    if bank.n_items() == 0 {
        return Err(MmrecError::InvalidData("empty embedding bank".into()));
    }
    let pairs = (m * (m - 1) / 2) as f64;
    let total: f64 = (0..bank.n_items())
        .map(|r| {
            let mut s = 0.0;
            for k in 0..m {
                for l in 0..k {
                    s += f.eval(bank.row(k, r), bank.row(l, r));
                }
            }
            s / pairs
        })
        .sum();
    Ok(total / bank.n_items() as f64)
}

/// Mean over modalities of the mean pairwise measure between different
/// items' embeddings of that modality.
pub fn inter_metric(bank: &EmbeddingBank, f: Measure) -> Result<f64> {
    let n = bank.n_items();
    if n < 2 {
        return Err(MmrecError::InvalidData("inter-item metrics need two items".into()));
    }
    if bank.n_modalities() == 0 {
        return Err(MmrecError::InvalidData("embedding bank has no modalities".into()));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let total: f64 = (0..bank.n_modalities())
        .map(|k| {
            let s: f64 = (0..n)
                .into_par_iter()
                .map(|i| (0..i).map(|j| f.eval(bank.row(k, i), bank.row(k, j))).sum::<f64>())
                .collect::<Vec<_>>()
                .iter()
                .sum();
            s / pairs
        })
        .sum();
    Ok(total / bank.n_modalities() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub intra_ed: f64,
    pub intra_cs: f64,
    pub inter_ed: f64,
    pub inter_cs: f64,
}

impl GapStats {
    pub fn compute(bank: &EmbeddingBank) -> Result<Self> {
        Ok(GapStats {
            intra_ed: intra_metric(bank, Measure::Euclidean)?,
            intra_cs: intra_metric(bank, Measure::Cosine)?,
            inter_ed: inter_metric(bank, Measure::Euclidean)?,
            inter_cs: inter_metric(bank, Measure::Cosine)?,
        })
    }

    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nintra_ed,{}\nintra_cs,{}\ninter_ed,{}\ninter_cs,{}\n",
            self.intra_ed, self.intra_cs, self.inter_ed, self.inter_cs
        )
    }
}

/// PCA fitted on the rows of all modalities pooled together.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `n_components × dim`, each row a unit-norm principal axis.
    pub components: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
    /// Per modality, `n_items × n_components` row-major.
    pub coords: Vec<Vec<f64>>,
}

impl Projection {
    /// `item_index,modality,x,y` rows for the first two components.
    pub fn to_csv(&self, bank: &EmbeddingBank) -> String {
        let c = self.components.len();
        let mut s = String::from("item_index,modality,x,y\n");
        for (m, name) in bank.modalities.iter().enumerate() {
            for (r, item) in bank.items.iter().enumerate() {
                let row = &self.coords[m][r * c..(r + 1) * c];
                let x = row.first().copied().unwrap_or(0.0);
                let y = row.get(1).copied().unwrap_or(0.0);
                s.push_str(&format!("{item},{name},{x},{y}\n"));
            }
        }
        s
    }
}

pub fn pca_project(bank: &EmbeddingBank, n_components: usize) -> Result<Projection> {
    let d = bank.dim;
    if n_components > d {
        return Err(MmrecError::Config(format!(
            "{n_components} components requested from {d}-dimensional embeddings"
        )));
    }
    let rows = bank.n_items() * bank.n_modalities();
    if rows == 0 {
        return Err(MmrecError::InvalidData("empty embedding bank".into()));
    }
    let mut mean = vec![0.0; d];
    for m in &bank.embs {
        for (j, v) in m.iter().enumerate() {
            mean[j % d] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= rows as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for m in &bank.embs {
        for r in m.chunks(d) {
            for a in 0..d {
                let xa = r[a] - mean[a];
                for b in 0..=a {
                    cov[(a, b)] += xa * (r[b] - mean[b]);
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov /= rows as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(n_components);
    let mut explained_ratio = Vec::with_capacity(n_components);
    for &c in order.iter().take(n_components) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        // sign convention: the largest-magnitude coordinate is positive
        let lead = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        let lambda = eig.eigenvalues[c].max(0.0);
        explained_ratio.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    let coords = bank
        .embs
        .iter()
        .map(|m| {
            m.chunks(d)
                .flat_map(|r| {
                    components.iter().map(|axis| {
                        let p: f64 = r.iter().zip(&mean).zip(axis).map(|((x, mu), a)| (x - mu) * a).sum();
                        // exact zeros for degenerate data instead of rounding noise
                        if total > 0.0 {
                            p
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        })
        .collect();
    Ok(Projection {
        mean,
        components,
        explained_ratio,
        coords,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub random_baseline: f64,
}

impl ProbeResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,accuracy\n");
        for (i, a) in self.per_seed_accuracy.iter().enumerate() {
            s.push_str(&format!("{i},{a}\n"));
        }
        s
    }
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardized features.
#[derive(Clone, Debug)]
pub struct LogisticProbe {
    dim: usize,
    classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × (dim + 1)`, bias last.
    weights: Vec<f64>,
}

impl LogisticProbe {
    pub fn fit(x: &[f64], y: &[usize], dim: usize, classes: usize) -> Self {
        let n = y.len();
        let mut mean = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for r in x.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        for r in x.chunks(dim) {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 };
        }
        let mut probe = LogisticProbe {
            dim,
            classes,
            mean,
            scale,
            weights: vec![0.0; classes * (dim + 1)],
        };
        let feats: Vec<Vec<f64>> = x.chunks(dim).map(|r| probe.features(r)).collect();
        let mut grad = vec![0.0; probe.weights.len()];
        let mut p = vec![0.0; classes];
        for _ in 0..PROBE_ITERS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (f, &label) in feats.iter().zip(y) {
                probe.softmax(f, &mut p);
                for c in 0..classes {
                    let err = p[c] - if c == label { 1.0 } else { 0.0 };
                    for (g, v) in grad[c * (dim + 1)..(c + 1) * (dim + 1)].iter_mut().zip(f) {
                        *g += err * v / n as f64;
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&grad) {
                *w -= PROBE_LR * (g + PROBE_L2 * *w);
            }
        }
        probe
    }

    fn features(&self, row: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = row
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        f.push(1.0);
        f
    }

    fn softmax(&self, f: &[f64], p: &mut [f64]) {
        for (c, pc) in p.iter_mut().enumerate() {
            *pc = self.weights[c * (self.dim + 1)..(c + 1) * (self.dim + 1)]
                .iter()
                .zip(f)
                .map(|(w, v)| w * v)
                .sum();
        }
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in p.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        p.iter_mut().for_each(|v| *v /= z);
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn predict(&self, row: &[f64]) -> usize {
        let f = self.features(row);
        let mut p = vec![0.0; self.classes];
        self.softmax(&f, &mut p);
        (0..self.classes).fold(0, |b, c| if p[c] > p[b] { c } else { b })
    }
}

/// Accuracy of predicting which modality produced an embedding, averaged
/// over `n_seeds` item-level train/test splits. All modality rows of an
/// item fall on the same side of each split.
pub fn separability_probe(bank: &EmbeddingBank, train_fraction: f64, n_seeds: usize, seed: u64) -> Result<ProbeResult> {
    probe_with_labels(bank, train_fraction, n_seeds, seed, None)
}

/// [`separability_probe`] with the modality label of each (item row,
/// modality) pair replaced by `labels[m][r]`.
pub fn probe_with_labels(
    bank: &EmbeddingBank,
    train_fraction: f64,
    n_seeds: usize,
    seed: u64,
    labels: Option<&[Vec<usize>]>,
) -> Result<ProbeResult> {
    let n = bank.n_items();
    let m = bank.n_modalities();
    if n < PROBE_MIN_ITEMS {
        return Err(MmrecError::InvalidData(format!(
            "probe needs at least {PROBE_MIN_ITEMS} items, got {n}"
        )));
    }
    if m < 2 {
        return Err(MmrecError::InvalidData("probe needs two modalities".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) || n_seeds == 0 {
        return Err(MmrecError::Config("probe needs a train fraction in (0, 1) and at least one seed".into()));
    }
    let label = |k: usize, r: usize| labels.map_or(k, |l| l[k][r]);
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let accs: Vec<f64> = (0..n_seeds)
        .into_par_iter()
        .map(|s| {
            let mut rows: Vec<usize> = (0..n).collect();
            SeededRng::new(seed, &format!("probe-{s}")).shuffle(&mut rows);
            let (train, test) = rows.split_at(n_train);
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for &r in train {
                for k in 0..m {
                    x.extend_from_slice(bank.row(k, r));
                    y.push(label(k, r));
                }
            }
            let probe = LogisticProbe::fit(&x, &y, bank.dim, m);
            let mut hits = 0usize;
            for &r in test {
                for k in 0..m {
                    hits += usize::from(probe.predict(bank.row(k, r)) == label(k, r));
                }
            }
            hits as f64 / (test.len() * m) as f64
        })
        .collect();
    let mean_accuracy = accs.iter().sum::<f64>() / accs.len() as f64;
    Ok(ProbeResult {
        per_seed_accuracy: accs,
        mean_accuracy,
        random_baseline: 1.0 / m as f64,
    })
}
