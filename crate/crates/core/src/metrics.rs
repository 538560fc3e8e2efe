//! Ranking and classification metrics.
//!
//! Every function here is pure: identical inputs give bit-identical outputs.
//! CTR runs are scored with [`auc`] and [`log_loss`]; Top-N runs with
//! [`ndcg_at_k`], [`recall_at_k`], [`hit_rate_at_k`] and [`mrr`].

use std::cmp::Ordering;
use std::collections::HashSet;
use std::hash::Hash;

use crate::scalar::Real;

/// Default clamp applied to probabilities before taking logarithms.
pub const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("labels and scores differ in length ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("metric needs at least one example")]
    EmptyInput,
    #[error("AUC is undefined without both positive and negative labels")]
    SingleClass,
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("cutoff k must be at least 1")]
    InvalidCutoff,
}

fn check_lengths<F>(labels: &[bool], scores: &[F]) -> Result<(), MetricError> {
    if labels.len() != scores.len() {
        return Err(MetricError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

fn check_finite<F: Real>(scores: &[F]) -> Result<(), MetricError> {
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(MetricError::NonFiniteScore(i)),
        None => Ok(()),
    }
}

/// Area under the ROC curve via the rank-sum statistic.
///
/// Tied scores receive their average rank, so a tied positive/negative pair
/// contributes one half.
pub fn auc<F: Real>(labels: &[bool], scores: &[F]) -> Result<F, MetricError> {
    check_lengths(labels, scores)?;
    check_finite(scores)?;
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Ranks are 1-based; doubled so tie averages stay integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled_avg = (start + 1 + end) as u64;
        let block_positives = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        doubled_rank_sum += doubled_avg * block_positives;
        start = end;
    }

    let p = positives as u64;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(F::from_u64(doubled_u).expect("rank sum representable")
        / F::from_u64(2 * p * negatives as u64).expect("pair count representable"))
}

/// Mean binary cross-entropy. The probability given to the observed class is
/// floored at `eps`, which equals clamping predictions to `[eps, 1 - eps]`
/// up to rounding near 1.
pub fn log_loss<F: Real>(labels: &[bool], probs: &[F], eps: F) -> Result<F, MetricError> {
    check_lengths(labels, probs)?;
    check_finite(probs)?;
    let one = F::one();
    let total = labels
        .iter()
        .zip(probs)
        .fold(F::zero(), |acc, (&y, &p)| {
            // Probability assigned to the observed class, floored at eps.
            let q = if y { p } else { one - p };
            acc + q.max(eps).min(one).ln()
        });
    Ok(-total / F::from_count(labels.len()))
}

fn hits_in_top_k<I: Eq + Hash>(ranked: &[I], relevant: &HashSet<I>, k: usize) -> usize {
    ranked.iter().take(k).filter(|i| relevant.contains(*i)).count()
}

/// Normalized discounted cumulative gain at cutoff `k` for binary relevance.
///
/// Position `i` (1-based) is discounted by `log2(i + 1)`.
pub fn ndcg_at_k<F: Real, I: Eq + Hash>(
    ranked: &[I],
    relevant: &HashSet<I>,
    k: usize,
) -> Result<F, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidCutoff);
    }
    if relevant.is_empty() {
        return Err(MetricError::EmptyRelevant);
    }
    let discount = |pos: usize| F::one() / F::from_count(pos + 1).log2();
    let dcg = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(*item))
        .fold(F::zero(), |acc, (i, _)| acc + discount(i + 1));
    let idcg = (1..=k.min(relevant.len())).fold(F::zero(), |acc, pos| acc + discount(pos));
    Ok(dcg / idcg)
}

/// Fraction of the relevant set found in the top `k`.
pub fn recall_at_k<F: Real, I: Eq + Hash>(
    ranked: &[I],
    relevant: &HashSet<I>,
    k: usize,
) -> Result<F, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidCutoff);
    }
    if relevant.is_empty() {
        return Err(MetricError::EmptyRelevant);
    }
    Ok(F::from_count(hits_in_top_k(ranked, relevant, k)) / F::from_count(relevant.len()))
}

/// 1 when any relevant item appears in the top `k`, else 0.
pub fn hit_rate_at_k<F: Real, I: Eq + Hash>(ranked: &[I], relevant: &HashSet<I>, k: usize) -> F {
    if hits_in_top_k(ranked, relevant, k) > 0 {
        F::one()
    } else {
        F::zero()
    }
}

/// Reciprocal of the 1-based position of the first relevant item, 0 if none.
pub fn mrr<F: Real, I: Eq + Hash>(ranked: &[I], relevant: &HashSet<I>) -> F {
    ranked
        .iter()
        .position(|i| relevant.contains(i))
        .map_or(F::zero(), |pos| F::one() / F::from_count(pos + 1))
}
