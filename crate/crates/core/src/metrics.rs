//! Per-user ranking metrics and popularity-bias metrics.

use serde::{Deserialize, Serialize};

use crate::{MmrecError, Result};

/// Metric names in report order.
pub const METRICS: [&str; 10] = [
    "ndcg", "recall", "precision", "f1", "ap", "rr", "coverage", "arp", "aplt", "pl",
];

pub const LONG_TAIL_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub ndcg: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub ap: f64,
    pub rr: f64,
}

fn check_distinct(recs: &[usize]) -> Result<()> {
    let mut sorted = recs.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(MmrecError::InvalidData("duplicate item in recommendations".into()));
    }
    Ok(())
}

/// Ideal DCG for `n_rel` relevant items at cutoff `k`.
pub fn idcg(k: usize, n_rel: usize) -> f64 {
    (1..=k.min(n_rel)).map(|j| 1.0 / ((j + 1) as f64).log2()).sum()
}

/// Accuracy metrics of a ranked list against a sorted relevant set.
pub fn accuracy_metrics(recs: &[usize], relevant: &[usize], k: usize) -> Result<Accuracy> {
    if relevant.is_empty() {
        return Err(MmrecError::InvalidData("empty relevant set".into()));
    }
    if relevant.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MmrecError::InvalidData("relevant set must be sorted and distinct".into()));
    }
    check_distinct(recs)?;
    let recs = &recs[..recs.len().min(k)];
    let hit: Vec<bool> = recs.iter().map(|i| relevant.binary_search(i).is_ok()).collect();
    let mut dcg = 0.0;
    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    let mut rr = 0.0;
    for (j, &h) in hit.iter().enumerate() {
        let rank = j + 1;
        if h {
            dcg += 1.0 / ((rank + 1) as f64).log2();
            hits += 1;
            ap_sum += hits as f64 / rank as f64;
            if rr == 0.0 {
                rr = 1.0 / rank as f64;
            }
        }
    }
    let recall = hits as f64 / relevant.len() as f64;
    let precision = if recs.is_empty() {
        0.0
    } else {
        hits as f64 / recs.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Accuracy {
        ndcg: dcg / idcg(k, relevant.len()),
        recall,
        precision,
        f1,
        ap: ap_sum / relevant.len() as f64,
        rr,
    })
}

/// Share of the catalog recommended to at least one user.
pub fn coverage(recs_per_user: &[Vec<usize>], n_items: usize) -> f64 {
    let mut seen = vec![false; n_items];
    for recs in recs_per_user {
        for &i in recs {
            seen[i] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / n_items as f64
}

fn mean_popularity(items: &[usize], phi: &[f64]) -> f64 {
    items.iter().map(|&i| phi[i]).sum::<f64>() / items.len() as f64
}

/// Average recommendation popularity of one list.
pub fn arp(recs: &[usize], phi: &[f64]) -> f64 {
    mean_popularity(recs, phi)
}

/// Membership mask of the long tail: the `ceil(fraction * N)` items of
/// lowest popularity, ties broken by ascending index.
pub fn long_tail(phi: &[f64], fraction: f64) -> Vec<bool> {
    let n = phi.len();
    let size = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]).then(a.cmp(&b)));
    let mut tail = vec![false; n];
    for &i in &order[..size] {
        tail[i] = true;
    }
    tail
}

pub fn aplt(recs: &[usize], tail: &[bool]) -> f64 {
    recs.iter().filter(|&&i| tail[i]).count() as f64 / recs.len() as f64
}

/// Relative popularity change from a user's training history to their
/// recommendations; `None` when the history has zero popularity.
pub fn popularity_lift(recs: &[usize], history: &[usize], phi: &[f64]) -> Option<f64> {
    if history.is_empty() || recs.is_empty() {
        return None;
    }
    let pb_p = mean_popularity(history, phi);
    if pb_p <= 0.0 {
        return None;
    }
    let pb_q = mean_popularity(recs, phi);
    Some((pb_q - pb_p) / pb_p)
}

/// Neumaier-compensated mean of the finite entries.
pub fn finite_mean(xs: &[f64]) -> f64 {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for &x in xs.iter().filter(|x| x.is_finite()) {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum + comp) / n as f64
    }
}

/// Sample standard deviation of the finite entries.
pub fn finite_std(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = finite_mean(&v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    (finite_mean(&dev) * v.len() as f64 / (v.len() - 1) as f64).sqrt()
}
