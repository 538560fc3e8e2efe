//! Cross-dataset aggregation.
//!
//! Each dataset ranks the eligible submissions on its primary metric with
//! competition ranking ("1, 2, 2, 4"). A submission's aggregate score is
//! its mean rank over all datasets of the task. Ranks rather than raw
//! metric values are averaged because metric scales differ by dataset.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::evaluation::{Direction, MetricResult};
use crate::scalar::Real;
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("no rank for dataset `{0}`")]
    IncompleteRanks(String),
    #[error("cannot aggregate over zero datasets")]
    NoDatasets,
}

/// Competition ranking: a submission's rank is one plus the number of
/// submissions with a strictly better value.
pub fn rank_within_dataset<F: Real>(results: &[(String, F)], direction: Direction) -> BTreeMap<String, u32> {
    let better = |a: F, b: F| match direction {
        Direction::HigherBetter => a > b,
        Direction::LowerBetter => a < b,
    };
    let mut sorted: Vec<&(String, F)> = results.iter().collect();
    sorted.sort_by(|a, b| {
        if better(a.1, b.1) {
            Ordering::Less
        } else if better(b.1, a.1) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    let mut ranks = BTreeMap::new();
    let mut block_rank = 1u32;
    for (i, (id, value)) in sorted.iter().enumerate() {
        if i > 0 && better(sorted[i - 1].1, *value) {
            block_rank = i as u32 + 1;
        }
        ranks.insert(id.clone(), block_rank);
    }
    ranks
}

/// Arithmetic mean of ranks.
pub fn mean_rank<F: Real>(ranks: &[u32]) -> Result<F, AggregationError> {
    if ranks.is_empty() {
        return Err(AggregationError::NoDatasets);
    }
    let sum: u64 = ranks.iter().map(|&r| u64::from(r)).sum();
    Ok(F::from_u64(sum).expect("rank sum representable") / F::from_count(ranks.len()))
}

/// Mean rank over exactly `datasets`; every dataset needs a rank.
pub fn aggregate<F: Real>(ranks: &BTreeMap<String, u32>, datasets: &[String]) -> Result<F, AggregationError> {
    let per_dataset = datasets
        .iter()
        .map(|d| ranks.get(d).copied().ok_or_else(|| AggregationError::IncompleteRanks(d.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    mean_rank(&per_dataset)
}

/// Outcome of one submission on one dataset, as seen by the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary<F> {
    pub succeeded: bool,
    pub wall_clock_seconds: F,
    pub metrics: Option<MetricResult<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionSummary<F> {
    pub submission_id: String,
    pub author: String,
    pub submitted_at: DateTime<Utc>,
    pub runs: BTreeMap<String, RunSummary<F>>,
}

/// Everything needed to build one task's leaderboard.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSnapshot<F> {
    pub task: Task,
    pub datasets: Vec<String>,
    pub submissions: Vec<SubmissionSummary<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStanding<F> {
    pub metrics: BTreeMap<String, F>,
    #[serde(default)]
    pub primary_metric: Option<String>,
    pub rank: Option<u32>,
    pub wall_clock_seconds: F,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry<F> {
    pub submission_id: String,
    pub author: String,
    pub submitted_at: DateTime<Utc>,
    pub per_dataset: BTreeMap<String, DatasetStanding<F>>,
    /// Present only for eligible entries.
    pub mean_rank: Option<F>,
    pub total_runtime_seconds: F,
    /// Every dataset of the task has a succeeded run.
    pub eligible: bool,
}

fn is_eligible<F: Real>(sub: &SubmissionSummary<F>, datasets: &[String]) -> bool {
    !datasets.is_empty()
        && datasets.iter().all(|d| {
            sub.runs
                .get(d)
                .is_some_and(|r| r.succeeded && r.metrics.as_ref().is_some_and(|m| m.primary_value().is_some()))
        })
}

/// Ranked leaderboard for one task.
///
/// Eligible entries come first, by mean rank, then total runtime, then
/// submission time. Ineligible entries follow by submission time, without
/// ranks.
pub fn build_leaderboard<F: Real>(snapshot: &TaskSnapshot<F>) -> Vec<LeaderboardEntry<F>> {
    let eligible: Vec<bool> = snapshot
        .submissions
        .iter()
        .map(|s| is_eligible(s, &snapshot.datasets))
        .collect();

    let mut ranks: BTreeMap<&str, BTreeMap<String, u32>> = BTreeMap::new();
    for dataset in &snapshot.datasets {
        let mut results = Vec::new();
        let mut direction = Direction::HigherBetter;
        for (sub, _) in snapshot.submissions.iter().zip(&eligible).filter(|(_, &e)| e) {
            let m = sub.runs[dataset].metrics.as_ref().expect("eligible runs carry metrics");
            direction = m.direction();
            results.push((sub.submission_id.clone(), m.primary_value().expect("checked")));
        }
        ranks.insert(dataset, rank_within_dataset(&results, direction));
    }

    let mut entries: Vec<LeaderboardEntry<F>> = snapshot
        .submissions
        .iter()
        .zip(&eligible)
        .map(|(sub, &eligible)| {
            let per_dataset: BTreeMap<String, DatasetStanding<F>> = sub
                .runs
                .iter()
                .filter(|(d, _)| snapshot.datasets.contains(d))
                .map(|(d, run)| {
                    let rank = if eligible {
                        ranks.get(d.as_str()).and_then(|r| r.get(&sub.submission_id)).copied()
                    } else {
                        None
                    };
                    let standing = DatasetStanding {
                        metrics: run.metrics.as_ref().map(|m| m.metrics.clone()).unwrap_or_default(),
                        primary_metric: run.metrics.as_ref().map(|m| m.primary_metric.clone()),
                        rank,
                        wall_clock_seconds: run.wall_clock_seconds,
                        succeeded: run.succeeded,
                    };
                    (d.clone(), standing)
                })
                .collect();
            let mean_rank = if eligible {
                let r: BTreeMap<String, u32> = per_dataset
                    .iter()
                    .filter_map(|(d, s)| s.rank.map(|r| (d.clone(), r)))
                    .collect();
                aggregate(&r, &snapshot.datasets).ok()
            } else {
                None
            };
            let total_runtime_seconds = per_dataset
                .values()
                .fold(F::zero(), |acc, s| acc + s.wall_clock_seconds);
            LeaderboardEntry {
                submission_id: sub.submission_id.clone(),
                author: sub.author.clone(),
                submitted_at: sub.submitted_at,
                per_dataset,
                mean_rank,
                total_runtime_seconds,
                eligible,
            }
        })
        .collect();

    entries.sort_by(|a, b| {
        b.eligible
            .cmp(&a.eligible)
            .then_with(|| match (a.mean_rank, b.mean_rank) {
                (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
                _ => Ordering::Equal,
            })
            .then_with(|| {
                if a.eligible {
                    a.total_runtime_seconds
                        .partial_cmp(&b.total_runtime_seconds)
                        .unwrap_or(Ordering::Equal)
                } else {
                    Ordering::Equal
                }
            })
            .then_with(|| a.submitted_at.cmp(&b.submitted_at))
            .then_with(|| a.submission_id.cmp(&b.submission_id))
    });
    entries
}
