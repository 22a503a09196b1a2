//! Epoch loop with validation-driven early stopping.

use std::time::Instant;

use diffcore::nn::Mode;
use diffcore::{Adam, AdamConfig, Graph};
use serde::{Deserialize, Serialize};

use crate::eval::mean_ndcg;
use crate::models::Model;
use crate::rng::{mix, SeededRng};
use crate::splits::{make_batches, Phase, Split};
use crate::view::DataView;
use crate::{MmrecError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            patience: 5,
            lr: 5e-3,
            weight_decay: 0.0,
            batch_size: 256,
            eval_k: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 || self.eval_k == 0 {
            return Err(MmrecError::Config(
                "max_epochs, patience, batch_size and eval_k must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(MmrecError::Config("lr must be positive, weight_decay non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience counter on a maximized validation metric; only strict
/// improvements reset it.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        match self.best {
            Some((_, b)) if !(value > b) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((epoch, value));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    /// (epoch, value) of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// `epoch,train_loss,val_ndcg10` lines (wall times are left out so the
    /// file is reproducible).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_ndcg10\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_ndcg));
        }
        s
    }
}

/// Batches for one epoch. A trailing single-pair batch is folded into the
/// previous batch, since batch statistics need at least two rows.
pub fn epoch_batches(split: &Split, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<(usize, usize)>> {
    let mut batches = make_batches(&split.train, batch_size, mix(&[seed, epoch as u64]));
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Trains `model` and returns the snapshot with the best validation NDCG.
pub fn train(model: Model<f32>, view: &DataView, split: &Split, cfg: &TrainConfig) -> Result<(Model<f32>, TrainHistory)> {
    train_with(model, view, split, cfg, |_| Ok(()))
}

/// [`train`] with a callback run after every epoch.
pub fn train_with(
    mut model: Model<f32>,
    view: &DataView,
    split: &Split,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<(Model<f32>, TrainHistory)> {
    cfg.validate()?;
    model.fit_popularity(view);
    if !model.config().kind.trainable() {
        return Ok((model, TrainHistory::default()));
    }
    if split.train.is_empty() {
        return Err(MmrecError::InvalidData("empty training set".into()));
    }
    let pools = model.net.sample_pools(view, &split.train_item_pool());
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut rng = SeededRng::new(cfg.seed, &format!("epoch-{epoch}"));
        let mut total = 0.0;
        for (b, batch) in epoch_batches(split, cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let plan = model.plan_batch(view, batch, &pools, &mut rng)?;
            let mut g = Graph::new();
            let parts = model.batch_loss(&mut g, view, &plan, Mode::Train, &mut rng)?;
            let loss = g.value(parts.total).item()? as f64;
            if !loss.is_finite() {
                return Err(MmrecError::NonFiniteLoss { epoch, batch: b, loss });
            }
            g.backward(parts.total, &mut model.store)?;
            adam.step(&mut model.store)?;
            total += loss;
        }
        let val = mean_ndcg(&mut model, view, split, Phase::Val, cfg.eval_k)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / split.train.len() as f64,
            val_ndcg: val,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.5} val ndcg@{} {:.5}", record.train_loss, cfg.eval_k, val);
        on_epoch(&record)?;
        history.epochs.push(record);
        match stopper.observe(epoch, val) {
            Verdict::Improved => {
                best = model.clone();
                history.best_epoch = epoch;
            }
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    Ok((best, history))
}
