use serde::{Deserialize, Serialize};

use crate::{MmrecError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sibrar,
    Mubrar,
    Mf,
    Deepmf,
    Pop,
    Rand,
}

impl ModelKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ModelKind::Pop | ModelKind::Rand)
    }

    pub fn is_multimodal(self) -> bool {
        matches!(self, ModelKind::Sibrar | ModelKind::Mubrar)
    }
}

/// Modality usage during training: `Vanilla` encodes every available
/// modality, `S` samples one per interaction, `Sc` samples two and adds the
/// contrastive term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    S,
    #[default]
    Sc,
}

/// Which entity is encoded from its modalities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[default]
    Item,
    User,
    Both,
}

/// Encoder for the counterpart entity of a single-side model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterpartTower {
    /// Lookup table, or profile encoder when the entity kind is cold.
    #[default]
    Auto,
    Lookup,
    Profile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Contrastive weight of the modal side (the item side when both are modal).
    pub alpha: f64,
    /// Contrastive weight of the user side when both sides are modal.
    pub beta: f64,
    pub tau: f64,
    pub n_neg: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.01,
            beta: 0.0,
            tau: 1.0,
            n_neg: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub variant: Variant,
    pub side: Side,
    /// Width of the per-modality adapters' output (input of the shared encoder).
    pub shared_dim: usize,
    /// Hidden widths of the shared encoder (also of profile encoders).
    pub g_layers: Vec<usize>,
    /// Hidden widths of each multi-branch modality network.
    pub branch_layers: Vec<usize>,
    pub embedding_dim: usize,
    pub batchnorm: bool,
    pub dropout: f64,
    pub loss: LossConfig,
    /// Modalities of the encoded item side; empty means all available,
    /// including "interactions".
    pub train_modalities: Vec<String>,
    /// Modalities of the encoded user side, same convention.
    pub user_modalities: Vec<String>,
    pub counterpart: CounterpartTower,
    /// Score floor of the cosine scorer.
    pub mu: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Sibrar,
            variant: Variant::Sc,
            side: Side::Item,
            shared_dim: 32,
            g_layers: vec![64],
            branch_layers: vec![64],
            embedding_dim: 32,
            batchnorm: true,
            dropout: 0.0,
            loss: LossConfig::default(),
            train_modalities: Vec::new(),
            user_modalities: Vec::new(),
            counterpart: CounterpartTower::Auto,
            mu: 1e-6,
        }
    }
}

/// Number of modalities encoded per training candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NMod {
    All,
    Fixed(usize),
}

impl ModelConfig {
    pub fn of_kind(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MmrecError::Config(m));
        if self.embedding_dim == 0 || self.shared_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.g_layers.iter().chain(&self.branch_layers).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if !(self.loss.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.loss.tau));
        }
        if self.loss.alpha < 0.0 || self.loss.beta < 0.0 {
            return bad("contrastive weights must be non-negative".into());
        }
        if self.loss.n_neg == 0 && self.kind.trainable() {
            return bad("n_neg must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.mu >= 0.0 && self.mu < 1.0) {
            return bad(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        Ok(())
    }

    /// Contrastive weight applied to the item side.
    pub fn item_weight(&self) -> f64 {
        match self.side {
            Side::Item | Side::Both => self.loss.alpha,
            Side::User => 0.0,
        }
    }

    /// Contrastive weight applied to the user side.
    pub fn user_weight(&self) -> f64 {
        match self.side {
            Side::User => self.loss.alpha,
            Side::Both => self.loss.beta,
            Side::Item => 0.0,
        }
    }

    /// A side trains with two sampled modalities only when its contrastive
    /// term is active; otherwise sampling variants use a single modality.
    pub fn n_mod(&self, weight: f64) -> NMod {
        match self.variant {
            Variant::Vanilla => NMod::All,
            Variant::S => NMod::Fixed(1),
            Variant::Sc if weight > 0.0 => NMod::Fixed(2),
            Variant::Sc => NMod::Fixed(1),
        }
    }
}
