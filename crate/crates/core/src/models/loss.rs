//! Ranking and contrastive losses on the autodiff tape.
//!
//! Candidate blocks are laid out pair-major: for pair `b` with `s`
//! candidates, rows `b*s .. b*s+s` hold the positive first and then the
//! negatives.

use diffcore::{Graph, Real, Var};

use crate::{MmrecError, Result};

fn repeat_first(pairs: usize, s: usize) -> Vec<usize> {
    (0..pairs).flat_map(|b| std::iter::repeat_n(b * s, s)).collect()
}

fn firsts(pairs: usize, s: usize) -> Vec<usize> {
    (0..pairs).map(|b| b * s).collect()
}

fn negatives(pairs: usize, s: usize) -> Vec<usize> {
    (0..pairs).flat_map(|b| (1..s).map(move |c| b * s + c)).collect()
}

/// `−Σ_b Σ_k ln σ(ŷ_pos − ŷ_neg_k)` over a pair-major score vector with
/// `s = 1 + n_neg` candidates per pair.
pub fn bpr_loss<T: Real>(g: &mut Graph<T>, scores: Var, s: usize) -> Result<Var> {
    let n = g.value(scores).numel();
    if s < 2 || !n.is_multiple_of(s) {
        return Err(MmrecError::InvalidData(format!("{n} scores in blocks of {s}")));
    }
    let pairs = n / s;
    let col = g.reshape(scores, vec![n, 1])?;
    let pos: Vec<usize> = (0..pairs)
        .flat_map(|b| std::iter::repeat_n(b * s, s - 1))
        .collect();
    let pos = g.gather(col, pos)?;
    let neg = g.gather(col, negatives(pairs, s))?;
    let diff = g.sub(pos, neg)?;
    let ls = g.log_sigmoid(diff);
    let total = g.sum(ls);
    Ok(g.scale(total, -1.0))
}

/// Binary cross-entropy with positives labelled 1 and negatives 0, for
/// scores in `[mu, 1]`. `1 − ŷ` is floored at `mu` as well.
pub fn bce_loss<T: Real>(g: &mut Graph<T>, scores: Var, s: usize, mu: f64) -> Result<Var> {
    let n = g.value(scores).numel();
    if !n.is_multiple_of(s) {
        return Err(MmrecError::InvalidData(format!("{n} scores in blocks of {s}")));
    }
    let pairs = n / s;
    let col = g.reshape(scores, vec![n, 1])?;
    let pos = g.gather(col, firsts(pairs, s))?;
    let pos = g.clamp_min(pos, mu);
    let lp = g.ln(pos);
    let lp = g.sum(lp);
    let neg = g.gather(col, negatives(pairs, s))?;
    let comp = g.affine(neg, -1.0, 1.0);
    let comp = g.clamp_min(comp, mu);
    let ln = g.ln(comp);
    let ln = g.sum(ln);
    let total = g.add(lp, ln)?;
    Ok(g.scale(total, -1.0))
}

/// One InfoNCE direction: anchors from `a`'s positive rows against all
/// candidates of `b`.
fn info_nce<T: Real>(g: &mut Graph<T>, a: Var, b: Var, pairs: usize, s: usize, tau: f64) -> Result<Var> {
    let anchors = g.gather(a, repeat_first(pairs, s))?;
    let logits = g.row_dot(anchors, b)?;
    let logits = g.reshape(logits, vec![pairs, s])?;
    let logits = g.scale(logits, 1.0 / tau);
    let lse = g.logsumexp_rows(logits);
    let lse = g.sum(lse);
    let pa = g.gather(a, firsts(pairs, s))?;
    let pb = g.gather(b, firsts(pairs, s))?;
    let pos = g.row_dot(pa, pb)?;
    let pos = g.sum(pos);
    let pos = g.scale(pos, 1.0 / tau);
    Ok(g.sub(lse, pos)?)
}

/// Symmetric InfoNCE between the embeddings of two sampled modalities.
///
/// `m1` and `m2` are pair-major `[pairs * s, d]` blocks of the first and
/// second modality's embeddings; row `b*s` of each belongs to the positive.
pub fn sinfonce_loss<T: Real>(g: &mut Graph<T>, m1: Var, m2: Var, s: usize, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(MmrecError::Config(format!("tau must be positive, got {tau}")));
    }
    let rows = g.value(m1).rows();
    if s == 0 || !rows.is_multiple_of(s) || g.value(m2).shape() != g.value(m1).shape() {
        return Err(MmrecError::InvalidData(format!(
            "contrastive blocks {:?} / {:?} with {s} candidates",
            g.value(m1).shape(),
            g.value(m2).shape()
        )));
    }
    let pairs = rows / s;
    let l12 = info_nce(g, m1, m2, pairs, s, tau)?;
    let l21 = info_nce(g, m2, m1, pairs, s, tau)?;
    Ok(g.add(l12, l21)?)
}
