//! Planted-structure multimodal datasets.
//!
//! Users and items get latent vectors; interactions are Bernoulli draws from
//! a logistic model of the latent dot product, and every modality is a noisy
//! random linear image of the entity's latent.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset, Dataset, Entity, ModalityStore};
use crate::rng::SeededRng;
use crate::{MmrecError, Result};

const BISECTION_STEPS: usize = 100;
const DENSITY_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub name: String,
    pub dim: usize,
    pub noise_sigma: f64,
    /// Fraction of latent coordinates the modality observes; the map rows
    /// of the remaining coordinates are zero.
    #[serde(default = "full_coverage")]
    pub coverage: f64,
}

fn full_coverage() -> f64 {
    1.0
}

impl SynthModality {
    pub fn new(name: &str, dim: usize, noise_sigma: f64) -> Self {
        SynthModality {
            name: name.into(),
            dim,
            noise_sigma,
            coverage: 1.0,
        }
    }

    pub fn with_coverage(mut self, coverage: f64) -> Self {
        self.coverage = coverage;
        self
    }

    fn observed(&self, latent_dim: usize) -> usize {
        ((self.coverage * latent_dim as f64).ceil() as usize).clamp(1, latent_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    /// Scale `c` applied to the latent dot product inside the sigmoid.
    pub signal: f64,
    pub density: f64,
    pub modalities: Vec<SynthModality>,
    pub user_modalities: Vec<SynthModality>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 300,
            latent_dim: 16,
            signal: 4.0,
            density: 0.03,
            modalities: vec![
                SynthModality::new("audio", 16, 0.25),
                SynthModality::new("text", 24, 0.25),
                SynthModality::new("image", 32, 0.25),
            ],
            user_modalities: vec![SynthModality::new("demographics", 8, 0.25)],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MmrecError::Config(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.latent_dim == 0 {
            return bad("n_users, n_items and latent_dim must be positive");
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return bad("density must lie in (0, 1)");
        }
        if !self.signal.is_finite() || self.signal < 0.0 {
            return bad("signal must be finite and non-negative");
        }
        for m in self.modalities.iter().chain(&self.user_modalities) {
            if m.dim == 0 || !(m.noise_sigma >= 0.0) || !m.noise_sigma.is_finite() {
                return bad(&format!("modality `{}` needs dim > 0 and noise_sigma >= 0", m.name));
            }
            if !(m.coverage > 0.0 && m.coverage <= 1.0) {
                return bad(&format!("modality `{}` needs coverage in (0, 1]", m.name));
            }
        }
        Ok(())
    }

    /// Whether the expected interaction count leaves room for k-core
    /// filtering with threshold `k` on both sides.
    pub fn supports_core(&self, k: usize) -> bool {
        self.density * (self.n_users * self.n_items) as f64 >= (k * (self.n_users + self.n_items)) as f64
    }
}

/// Everything drawn during generation, for oracle tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub latent_dim: usize,
    pub signal: f64,
    pub bias: f64,
    pub target_density: f64,
    pub realized_density: f64,
    /// Row-major `n_users × latent_dim`.
    pub user_latents: Vec<f64>,
    pub item_latents: Vec<f64>,
    /// Per modality name, the row-major `latent_dim × dim` map.
    pub maps: Vec<(String, Vec<f64>)>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn latents(rng: &mut SeededRng, n: usize, d: usize) -> Vec<f64> {
    // covariance I/sqrt(d), so the dot product of two latents has unit variance
    let std = (d as f64).powf(-0.25);
    (0..n * d).map(|_| rng.normal() * std).collect()
}

fn modality(
    rng: &mut SeededRng,
    spec: &SynthModality,
    entity: Entity,
    z: &[f64],
    n: usize,
    d: usize,
) -> Result<(ModalityStore, Vec<f64>)> {
    let seen = spec.observed(d);
    let mut dims: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut dims);
    let mut map = vec![0f64; d * spec.dim];
    let scale = 1.0 / (seen as f64).sqrt();
    for &l in &dims[..seen] {
        for c in 0..spec.dim {
            map[l * spec.dim + c] = rng.normal() * scale;
        }
    }
    let mut out = vec![0f32; n * spec.dim];
    for e in 0..n {
        let ze = &z[e * d..(e + 1) * d];
        for c in 0..spec.dim {
            let mut v = 0.0;
            for (l, zl) in ze.iter().enumerate() {
                v += zl * map[l * spec.dim + c];
            }
            out[e * spec.dim + c] = (v + spec.noise_sigma * rng.normal()) as f32;
        }
    }
    let store = ModalityStore::new(&spec.name, entity, spec.dim, out, vec![true; n])?;
    Ok((store, map))
}

/// Draws a dataset from `cfg`. The bias is bisected on the realized density
/// of a fixed set of uniforms, so the result hits the target up to one cell.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Truth)> {
    cfg.validate()?;
    let (nu, ni, d) = (cfg.n_users, cfg.n_items, cfg.latent_dim);
    let zu = latents(&mut SeededRng::new(cfg.seed, "synth-users"), nu, d);
    let zi = latents(&mut SeededRng::new(cfg.seed, "synth-items"), ni, d);
    let mut logits = vec![0f64; nu * ni];
    for u in 0..nu {
        for i in 0..ni {
            let dot: f64 = zu[u * d..(u + 1) * d].iter().zip(&zi[i * d..(i + 1) * d]).map(|(a, b)| a * b).sum();
            logits[u * ni + i] = cfg.signal * dot;
        }
    }
    let mut draw = SeededRng::new(cfg.seed, "synth-draws");
    let uniforms: Vec<f64> = (0..nu * ni).map(|_| draw.uniform()).collect();
    let realized = |b: f64| {
        let hits = logits.iter().zip(&uniforms).filter(|(l, r)| **r < sigmoid(**l + b)).count();
        hits as f64 / (nu * ni) as f64
    };

    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    let mut bias = 0.0;
    let mut density = realized(bias);
    for _ in 0..BISECTION_STEPS {
        bias = 0.5 * (lo + hi);
        density = realized(bias);
        if density < cfg.density {
            lo = bias;
        } else {
            hi = bias;
        }
        if (density - cfg.density).abs() <= 0.5 / (nu * ni) as f64 {
            break;
        }
    }
    if (density - cfg.density).abs() > DENSITY_TOLERANCE * cfg.density {
        return Err(MmrecError::InvalidData(format!(
            "density calibration did not converge: {density} vs target {}",
            cfg.density
        )));
    }

    let mut pairs = Vec::new();
    for u in 0..nu {
        let start = pairs.len();
        for i in 0..ni {
            let k = u * ni + i;
            if uniforms[k] < sigmoid(logits[k] + bias) {
                pairs.push((u, i));
            }
        }
        if pairs.len() == start {
            // every user keeps at least its most likely item
            let row = &logits[u * ni..(u + 1) * ni];
            let best = (0..ni).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            pairs.push((u, best));
        }
    }

    let mut maps = Vec::new();
    let mut user_mods = Vec::new();
    for spec in &cfg.user_modalities {
        let mut rng = SeededRng::new(cfg.seed, &format!("synth-user-{}", spec.name));
        let (store, map) = modality(&mut rng, spec, Entity::User, &zu, nu, d)?;
        user_mods.push(store);
        maps.push((format!("user_{}", spec.name), map));
    }
    let mut item_mods = Vec::new();
    for spec in &cfg.modalities {
        let mut rng = SeededRng::new(cfg.seed, &format!("synth-item-{}", spec.name));
        let (store, map) = modality(&mut rng, spec, Entity::Item, &zi, ni, d)?;
        item_mods.push(store);
        maps.push((format!("item_{}", spec.name), map));
    }
    let data = Dataset::new(
        "synth",
        (0..nu).map(|u| format!("u{u}")).collect(),
        (0..ni).map(|i| format!("i{i}")).collect(),
        &pairs,
        user_mods,
        item_mods,
    )?;
    let truth = Truth {
        latent_dim: d,
        signal: cfg.signal,
        bias,
        target_density: cfg.density,
        realized_density: pairs.len() as f64 / (nu * ni) as f64,
        user_latents: zu,
        item_latents: zi,
        maps,
    };
    Ok((data, truth))
}

/// Writes the dataset plus `truth.json`; returns the manifest path.
pub fn write_synth(dir: &Path, data: &Dataset, truth: &Truth) -> Result<PathBuf> {
    let manifest = write_dataset(dir, data)?;
    let path = dir.join("truth.json");
    let text = serde_json::to_string(truth)?;
    fs::write(&path, text + "\n").map_err(|e| MmrecError::io(&path, e))?;
    Ok(manifest)
}
