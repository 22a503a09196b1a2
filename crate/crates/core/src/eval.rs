//! Full-ranking evaluation of a frozen model.

use std::collections::BTreeMap;

use diffcore::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, accuracy_metrics, finite_mean, long_tail, LONG_TAIL_FRACTION};
use crate::models::{recommend_topk, Model};
use crate::splits::{Phase, Split};
use crate::view::DataView;
use crate::{MmrecError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub n_users_evaluated: usize,
    /// Evaluated users, aligned with every per-user vector.
    pub users: Vec<usize>,
    /// Per-user values; `pl` holds NaN for users excluded from its mean.
    pub per_user: BTreeMap<String, Vec<f64>>,
    pub mean: BTreeMap<String, f64>,
    /// Users left out of the popularity-lift mean (zero-popularity history).
    pub pl_excluded: usize,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> f64 {
        self.mean.get(metric).copied().unwrap_or(f64::NAN)
    }
}

/// Ranked lists for every user with a non-empty relevant set in `phase`.
pub struct Rankings {
    pub users: Vec<usize>,
    pub recs: Vec<Vec<usize>>,
    pub relevant: Vec<Vec<usize>>,
}

pub fn rank_phase<T: Real>(
    model: &mut Model<T>,
    view: &DataView,
    split: &Split,
    phase: Phase,
    k: usize,
    subset: Option<&[String]>,
) -> Result<Rankings> {
    let relevant = split.relevant(phase);
    let users: Vec<usize> = (0..split.n_users).filter(|&u| !relevant[u].is_empty()).collect();
    if users.is_empty() {
        return Err(MmrecError::InvalidData(format!("no user has {phase:?} interactions")));
    }
    let candidates = split.candidate_items(phase);
    let scorer = model.scorer(view, &users, &candidates, subset)?;
    let recs: Vec<Vec<usize>> = users
        .par_iter()
        .map(|&u| recommend_topk(&scorer, u, k, &candidates, view.train.user_items(u)))
        .collect::<Result<_>>()?;
    let relevant = users.iter().map(|&u| relevant[u].clone()).collect();
    Ok(Rankings {
        users,
        recs,
        relevant,
    })
}

/// All ten report metrics from ranked lists.
pub fn report_from_rankings(r: &Rankings, view: &DataView, k: usize) -> Result<MetricReport> {
    let phi = view.popularity();
    let tail = long_tail(&phi, LONG_TAIL_FRACTION);
    let acc: Vec<_> = r
        .recs
        .iter()
        .zip(&r.relevant)
        .map(|(recs, rel)| accuracy_metrics(recs, rel, k))
        .collect::<Result<_>>()?;
    let mut per_user: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut put = |name: &str, v: Vec<f64>| {
        per_user.insert(name.to_string(), v);
    };
    put("ndcg", acc.iter().map(|a| a.ndcg).collect());
    put("recall", acc.iter().map(|a| a.recall).collect());
    put("precision", acc.iter().map(|a| a.precision).collect());
    put("f1", acc.iter().map(|a| a.f1).collect());
    put("ap", acc.iter().map(|a| a.ap).collect());
    put("rr", acc.iter().map(|a| a.rr).collect());
    put("arp", r.recs.iter().map(|x| metrics::arp(x, &phi)).collect());
    put("aplt", r.recs.iter().map(|x| metrics::aplt(x, &tail)).collect());
    let pl: Vec<f64> = r
        .users
        .iter()
        .zip(&r.recs)
        .map(|(&u, x)| metrics::popularity_lift(x, view.train.user_items(u), &phi).unwrap_or(f64::NAN))
        .collect();
    let pl_excluded = pl.iter().filter(|v| v.is_nan()).count();
    put("pl", pl);
    let mut mean: BTreeMap<String, f64> = per_user.iter().map(|(k, v)| (k.clone(), finite_mean(v))).collect();
    mean.insert("coverage".into(), metrics::coverage(&r.recs, view.data.n_items()));
    Ok(MetricReport {
        k,
        n_users_evaluated: r.users.len(),
        users: r.users.clone(),
        per_user,
        mean,
        pl_excluded,
    })
}

/// Evaluates on `phase` with the given item modalities (all trained ones
/// when `None`).
pub fn eval_model<T: Real>(
    model: &mut Model<T>,
    view: &DataView,
    split: &Split,
    phase: Phase,
    k: usize,
    subset: Option<&[String]>,
) -> Result<MetricReport> {
    let r = rank_phase(model, view, split, phase, k, subset)?;
    report_from_rankings(&r, view, k)
}

/// Mean NDCG@k only (validation during training).
pub fn mean_ndcg<T: Real>(model: &mut Model<T>, view: &DataView, split: &Split, phase: Phase, k: usize) -> Result<f64> {
    let r = rank_phase(model, view, split, phase, k, None)?;
    let v: Vec<f64> = r
        .recs
        .iter()
        .zip(&r.relevant)
        .map(|(recs, rel)| accuracy_metrics(recs, rel, k).map(|a| a.ndcg))
        .collect::<Result<_>>()?;
    Ok(finite_mean(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    /// Bit `b` set when `modalities[b]` is in the subset.
    pub mask: u32,
    pub subset: Vec<String>,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetGridResult {
    pub modalities: Vec<String>,
    pub rows: Vec<GridRow>,
}

impl SubsetGridResult {
    /// Mean of `metric` over the rows using exactly `c` modalities.
    pub fn mean_by_count(&self, metric: &str, c: usize) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.subset.len() == c)
            .map(|r| r.report.get(metric))
            .collect();
        finite_mean(&v)
    }
}

/// Evaluates every non-empty subset of `modalities` (the trained item
/// modalities when `None`) with frozen weights.
pub fn subset_grid<T: Real>(
    model: &mut Model<T>,
    view: &DataView,
    split: &Split,
    phase: Phase,
    k: usize,
    modalities: Option<&[String]>,
) -> Result<SubsetGridResult> {
    let mods: Vec<String> = match modalities {
        Some(m) => m.to_vec(),
        None => model.item_modalities(),
    };
    if mods.len() < 2 {
        return Err(MmrecError::Config("a subset grid needs at least two modalities".into()));
    }
    if mods.len() > 16 {
        return Err(MmrecError::Config("too many modalities for a subset grid".into()));
    }
    let mut rows = Vec::new();
    for mask in 1u32..(1 << mods.len()) {
        let subset: Vec<String> = (0..mods.len())
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| mods[b].clone())
            .collect();
        let report = eval_model(model, view, split, phase, k, Some(&subset))?;
        rows.push(GridRow { mask, subset, report });
    }
    Ok(SubsetGridResult { modalities: mods, rows })
}
