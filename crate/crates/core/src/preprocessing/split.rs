//! Split protocols.
//!
//! This file is shipped verbatim inside every preprocessing export so that
//! the exact partitioning logic can be reviewed. Only the seed is withheld.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tolerance on the sum of split ratios.
pub const RATIO_SUM_TOLERANCE: f64 = 1e-9;

/// Default (train, valid, test) fractions for labeled splits.
pub const DEFAULT_RATIOS: SplitRatios = SplitRatios {
    train: 0.8,
    valid: 0.1,
    test: 0.1,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SplitError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(SplitError::InvalidRatios(format!(
                "each ratio must be > 0, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > RATIO_SUM_TOLERANCE {
            return Err(SplitError::InvalidRatios(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.valid, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("label class {0} has no rows")]
    DegenerateClass(u8),
    #[error("no interactions to split")]
    EmptyInteractions,
}

/// Row indices (into the input order) assigned to each part.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

/// Distributes `total` units over `weights` by largest remainder.
///
/// Floors every quota, then hands the leftover units to the parts with the
/// largest fractional remainders; ties go to the earlier part.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-part positive counts such that the overall part sizes are honored
/// and each class stays within one unit of its exact quota.
fn positive_counts(positives: usize, negatives: usize, sizes: &[usize; 3], ratios: &[f64; 3]) -> [usize; 3] {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut remainder = [0f64; 3];
    for j in 0..3 {
        let a = positives as f64 * ratios[j];
        let b = negatives as f64 * ratios[j];
        remainder[j] = a - a.floor();
        let lo_j = (a.floor() as usize).max(sizes[j].saturating_sub(b.ceil() as usize));
        let hi_j = (a.ceil() as usize)
            .min(sizes[j].saturating_sub(b.floor() as usize))
            .min(sizes[j]);
        lo[j] = lo_j.min(sizes[j]);
        hi[j] = hi_j.max(lo[j]);
    }
    let mut counts = lo;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        remainder[b]
            .partial_cmp(&remainder[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    // Move toward the class total, first inside the per-class bounds, then
    // (only if rounding made those infeasible) inside the part sizes.
    for bounds in [hi, *sizes] {
        let mut progressed = true;
        while progressed && counts.iter().sum::<usize>() < positives {
            progressed = false;
            for &j in &order {
                if counts.iter().sum::<usize>() < positives && counts[j] < bounds[j] {
                    counts[j] += 1;
                    progressed = true;
                }
            }
        }
    }
    let mut progressed = true;
    while progressed && counts.iter().sum::<usize>() > positives {
        progressed = false;
        for &j in order.iter().rev() {
            if counts.iter().sum::<usize>() > positives && counts[j] > 0 {
                counts[j] -= 1;
                progressed = true;
            }
        }
    }
    counts
}

/// Label-stratified random split.
///
/// Part sizes come from largest-remainder rounding of the total; the
/// positive/negative mix of each part stays within one row of its exact
/// quota. Which rows land where, and the row order inside each part, are a
/// deterministic function of `seed`.
pub fn split_random_stratified(
    labels: &[bool],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitIndices, SplitError> {
    ratios.validate()?;
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i]);
    if neg.is_empty() {
        return Err(SplitError::DegenerateClass(0));
    }
    if pos.is_empty() {
        return Err(SplitError::DegenerateClass(1));
    }

    let weights = ratios.as_array();
    let sizes: [usize; 3] = largest_remainder(labels.len(), &weights)
        .try_into()
        .expect("three parts");
    let pos_counts = positive_counts(pos.len(), neg.len(), &sizes, &weights);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);

    let mut parts: [Vec<usize>; 3] = Default::default();
    let (mut p_at, mut n_at) = (0, 0);
    for j in 0..3 {
        let take_pos = pos_counts[j];
        let take_neg = sizes[j] - take_pos;
        parts[j].extend_from_slice(&pos[p_at..p_at + take_pos]);
        parts[j].extend_from_slice(&neg[n_at..n_at + take_neg]);
        p_at += take_pos;
        n_at += take_neg;
        parts[j].shuffle(&mut rng);
    }
    let [train, valid, test] = parts;
    Ok(SplitIndices { train, valid, test })
}

/// One user-item interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

/// Minimum interactions a user needs to be evaluated.
pub const MIN_EVALUATED_INTERACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatestOutSplit {
    pub indices: SplitIndices,
    /// Sorted user ids that have a held-out test interaction.
    pub evaluated_users: Vec<String>,
}

/// Per-user leave-latest-out.
///
/// For users with at least three interactions the latest goes to test, the
/// second latest to valid, the rest to train. Equal timestamps are ordered
/// by item id, the lexicographically larger item counting as later. Users
/// with fewer interactions contribute everything to train and are not
/// evaluated. Train keeps input order; valid and test are ordered by user.
pub fn split_leave_latest_out(interactions: &[Interaction]) -> Result<LatestOutSplit, SplitError> {
    if interactions.is_empty() {
        return Err(SplitError::EmptyInteractions);
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in interactions.iter().enumerate() {
        by_user.entry(it.user.as_str()).or_default().push(i);
    }

    let mut held_out = vec![false; interactions.len()];
    let mut indices = SplitIndices::default();
    let mut evaluated_users = Vec::new();
    for (user, mut rows) in by_user {
        if rows.len() < MIN_EVALUATED_INTERACTIONS {
            continue;
        }
        rows.sort_by(|&a, &b| {
            let (x, y) = (&interactions[a], &interactions[b]);
            y.timestamp.cmp(&x.timestamp).then_with(|| y.item.cmp(&x.item))
        });
        indices.test.push(rows[0]);
        indices.valid.push(rows[1]);
        held_out[rows[0]] = true;
        held_out[rows[1]] = true;
        evaluated_users.push(user.to_string());
    }
    indices.train = (0..interactions.len()).filter(|&i| !held_out[i]).collect();
    Ok(LatestOutSplit {
        indices,
        evaluated_users,
    })
}
