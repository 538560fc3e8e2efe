//! Prediction-file validation and task scoring.
//!
//! Prediction files:
//!
//! * CTR: CSV with header `row_id,score`, one row per hidden test row,
//!   scores finite and in `[0, 1]`.
//! * Top-N: CSV with header `user_id,item_id,rank`, ranks contiguous from 1
//!   per user, at most [`K_MAX`] rows per user, every evaluated user present.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::metrics::{self, MetricError, LOG_LOSS_EPS};
use crate::scalar::Real;
use crate::task::Task;

/// Longest ranked list accepted per user.
pub const K_MAX: usize = 50;
/// Cutoffs reported for Top-N runs by default.
pub const DEFAULT_CUTOFFS: &[usize] = &[10];

pub const CTR_PREDICTION_HEADER: [&str; 2] = ["row_id", "score"];
pub const TOPN_PREDICTION_HEADER: [&str; 3] = ["user_id", "item_id", "rank"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    /// The prediction file violates its contract.
    #[error("invalid output: {0}")]
    OutputInvalid(String),
    /// The reference data cannot be used.
    #[error("invalid ground truth: {0}")]
    InvalidTruth(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn invalid(msg: impl Into<String>) -> EvalError {
    EvalError::OutputInvalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Metric values for one run on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult<F> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub metrics: BTreeMap<String, F>,
    pub primary_metric: String,
}

impl<F: Real> MetricResult<F> {
    pub fn primary_value(&self) -> Option<F> {
        self.metrics.get(&self.primary_metric).copied()
    }

    pub fn direction(&self) -> Direction {
        metric_direction(&self.primary_metric)
    }
}

pub fn metric_direction(name: &str) -> Direction {
    if name == "log_loss" {
        Direction::LowerBetter
    } else {
        Direction::HigherBetter
    }
}

/// One CTR prediction row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtrPrediction<F> {
    pub row_id: usize,
    pub score: F,
}

/// One user's ranked list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopNPrediction {
    pub user_id: String,
    pub items: Vec<String>,
}

/// Hidden CTR labels in test-row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtrTruth {
    pub labels: Vec<bool>,
}

/// Held-out item per evaluated user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopNTruth {
    pub held_out: BTreeMap<String, String>,
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), EvalError> {
    let header = reader
        .headers()
        .map_err(|e| invalid(format!("unreadable header: {e}")))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(invalid(format!(
            "header must be `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

impl CtrTruth {
    /// Reads labels from a hidden test file by column name.
    pub fn from_csv<R: Read>(input: R, label_column: &str) -> Result<Self, EvalError> {
        let mut reader = csv_reader(input);
        let header = reader
            .headers()
            .map_err(|e| EvalError::InvalidTruth(e.to_string()))?;
        let col = header
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| EvalError::InvalidTruth(format!("no `{label_column}` column")))?;
        let mut labels = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| EvalError::InvalidTruth(e.to_string()))?;
            labels.push(match &rec[col] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(EvalError::InvalidTruth(format!(
                        "row {}: label `{other}` is not 0 or 1",
                        i + 1
                    )))
                }
            });
        }
        Ok(CtrTruth { labels })
    }
}

impl TopNTruth {
    pub fn from_csv<R: Read>(input: R, user_column: &str, item_column: &str) -> Result<Self, EvalError> {
        let mut reader = csv_reader(input);
        let header = reader
            .headers()
            .map_err(|e| EvalError::InvalidTruth(e.to_string()))?;
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| EvalError::InvalidTruth(format!("no `{name}` column")))
        };
        let (u, it) = (find(user_column)?, find(item_column)?);
        let mut held_out = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| EvalError::InvalidTruth(e.to_string()))?;
            if held_out.insert(rec[u].to_string(), rec[it].to_string()).is_some() {
                return Err(EvalError::InvalidTruth(format!(
                    "user `{}` has more than one held-out item",
                    &rec[u]
                )));
            }
        }
        Ok(TopNTruth { held_out })
    }
}

/// Parses a CTR prediction file and returns scores indexed by `row_id`.
pub fn parse_ctr_predictions<F: Real, R: Read>(input: R, expected_rows: usize) -> Result<Vec<F>, EvalError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &CTR_PREDICTION_HEADER)?;
    let mut scores: Vec<Option<F>> = vec![None; expected_rows];
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| invalid(format!("line {line}: {e}")))?;
        let row_id: usize = rec[0]
            .parse()
            .map_err(|_| invalid(format!("line {line}: row_id `{}` is not an index", &rec[0])))?;
        let raw: f64 = rec[1]
            .parse()
            .map_err(|_| invalid(format!("line {line}: score `{}` is not numeric", &rec[1])))?;
        if !raw.is_finite() {
            return Err(invalid(format!("line {line}: score `{}` is not finite", &rec[1])));
        }
        if !(0.0..=1.0).contains(&raw) {
            return Err(invalid(format!("line {line}: score {raw} outside [0, 1]")));
        }
        let slot = scores
            .get_mut(row_id)
            .ok_or_else(|| invalid(format!("line {line}: row_id {row_id} out of range 0..{expected_rows}")))?;
        if slot.is_some() {
            return Err(invalid(format!("duplicate row_id {row_id}")));
        }
        *slot = Some(F::from_f64(raw).ok_or_else(|| invalid("score not representable"))?);
    }
    scores
        .iter()
        .enumerate()
        .map(|(id, s)| s.ok_or_else(|| invalid(format!("missing row_id {id}"))))
        .collect()
}

/// Parses a Top-N prediction file into one ranked list per evaluated user.
pub fn parse_topn_predictions<R: Read>(input: R, truth: &TopNTruth) -> Result<Vec<TopNPrediction>, EvalError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &TOPN_PREDICTION_HEADER)?;
    let mut by_user: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| invalid(format!("line {line}: {e}")))?;
        let (user, item) = (&rec[0], &rec[1]);
        if !truth.held_out.contains_key(user) {
            return Err(invalid(format!("line {line}: `{user}` is not an evaluated user")));
        }
        if item.is_empty() {
            return Err(invalid(format!("line {line}: empty item_id")));
        }
        let rank: usize = rec[2]
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| invalid(format!("line {line}: rank `{}` is not a positive integer", &rec[2])))?;
        let ranks = by_user.entry(user.to_string()).or_default();
        if ranks.insert(rank, item.to_string()).is_some() {
            return Err(invalid(format!("user `{user}` lists rank {rank} more than once")));
        }
    }

    let mut out = Vec::with_capacity(truth.held_out.len());
    for user in truth.held_out.keys() {
        let ranks = by_user
            .remove(user)
            .ok_or_else(|| invalid(format!("missing user `{user}`")))?;
        if ranks.len() > K_MAX {
            return Err(invalid(format!("user `{user}` has {} items (max {K_MAX})", ranks.len())));
        }
        if ranks.keys().copied().ne(1..=ranks.len()) {
            return Err(invalid(format!("user `{user}` ranks are not contiguous from 1")));
        }
        let items: Vec<String> = ranks.into_values().collect();
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|i| !seen.insert(i.as_str())) {
            return Err(invalid(format!("user `{user}` lists item `{dup}` twice")));
        }
        out.push(TopNPrediction {
            user_id: user.clone(),
            items,
        });
    }
    Ok(out)
}

/// AUC and log loss; AUC is primary.
pub fn evaluate_ctr<F: Real, R: Read>(predictions: R, truth: &CtrTruth) -> Result<MetricResult<F>, EvalError> {
    let scores: Vec<F> = parse_ctr_predictions(predictions, truth.labels.len())?;
    let eps = F::from_f64(LOG_LOSS_EPS).expect("eps representable");
    let metrics = BTreeMap::from([
        ("auc".to_string(), metrics::auc(&truth.labels, &scores)?),
        ("log_loss".to_string(), metrics::log_loss(&truth.labels, &scores, eps)?),
    ]);
    Ok(MetricResult {
        run_id: None,
        metrics,
        primary_metric: "auc".into(),
    })
}

/// Ranked-retrieval metrics averaged uniformly over evaluated users.
/// Primary metric is `ndcg@10` when 10 is among the cutoffs, else the
/// first cutoff's NDCG.
pub fn evaluate_topn<F: Real, R: Read>(
    predictions: R,
    truth: &TopNTruth,
    cutoffs: &[usize],
) -> Result<MetricResult<F>, EvalError> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(MetricError::InvalidCutoff.into());
    }
    if truth.held_out.is_empty() {
        return Err(EvalError::InvalidTruth("no evaluated users".into()));
    }
    let lists = parse_topn_predictions(predictions, truth)?;
    let mut sums: BTreeMap<String, F> = BTreeMap::new();
    let mut add = |name: String, v: F| {
        let slot = sums.entry(name).or_insert_with(F::zero);
        *slot = *slot + v;
    };
    for list in &lists {
        let relevant: HashSet<&str> = [truth.held_out[&list.user_id].as_str()].into_iter().collect();
        let ranked: Vec<&str> = list.items.iter().map(String::as_str).collect();
        for &k in cutoffs {
            add(format!("ndcg@{k}"), metrics::ndcg_at_k(&ranked, &relevant, k)?);
            add(format!("recall@{k}"), metrics::recall_at_k(&ranked, &relevant, k)?);
            add(format!("hit_rate@{k}"), metrics::hit_rate_at_k(&ranked, &relevant, k));
        }
        add("mrr".into(), metrics::mrr(&ranked, &relevant));
    }
    let n = F::from_count(lists.len());
    let primary_k = if cutoffs.contains(&10) { 10 } else { cutoffs[0] };
    Ok(MetricResult {
        run_id: None,
        metrics: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        primary_metric: format!("ndcg@{primary_k}"),
    })
}

/// Task-dispatching evaluation of a prediction file against hidden test data.
pub fn evaluate<F: Real>(task: Task, predictions: &[u8], truth: &Truth) -> Result<MetricResult<F>, EvalError> {
    match (task, truth) {
        (Task::Ctr, Truth::Ctr(t)) => evaluate_ctr(predictions, t),
        (Task::TopN, Truth::TopN(t)) => evaluate_topn(predictions, t, DEFAULT_CUTOFFS),
        _ => Err(EvalError::InvalidTruth(format!("truth does not belong to task `{task}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Truth {
    Ctr(CtrTruth),
    TopN(TopNTruth),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctr_truth() -> CtrTruth {
        CtrTruth {
            labels: vec![true, false, true, false],
        }
    }

    fn topn_truth() -> TopNTruth {
        TopNTruth {
            held_out: BTreeMap::from([("u1".into(), "a".into()), ("u2".into(), "b".into())]),
        }
    }

    #[test]
    fn ctr_perfect_predictions() {
        let file = "row_id,score\n0,0.9\n1,0.1\n2,0.9\n3,0.1\n";
        let r: MetricResult<f64> = evaluate_ctr(file.as_bytes(), &ctr_truth()).unwrap();
        assert_eq!(r.metrics["auc"], 1.0);
        assert_eq!(r.primary_metric, "auc");
        assert!((r.metrics["log_loss"] - -(0.9f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn ctr_rows_join_by_row_id_not_position() {
        let file = "row_id,score\n3,0.1\n1,0.1\n2,0.9\n0,0.9\n";
        let r: MetricResult<f64> = evaluate_ctr(file.as_bytes(), &ctr_truth()).unwrap();
        assert_eq!(r.metrics["auc"], 1.0);
    }

    #[test]
    fn ctr_contract_violations() {
        let cases = [
            ("row_id,score\n0,0.9\n1,0.1\n3,0.1\n", "missing row_id 2"),
            ("row_id,score\n0,0.9\n1,0.1\n1,0.1\n2,0.3\n", "duplicate row_id 1"),
            ("row_id,score\n0,NaN\n1,0.1\n2,0.9\n3,0.1\n", "not finite"),
            ("row_id,score\n0,1.5\n1,0.1\n2,0.9\n3,0.1\n", "outside"),
            ("row_id,score\n0,abc\n1,0.1\n2,0.9\n3,0.1\n", "not numeric"),
            ("id,score\n0,0.9\n", "header"),
            ("row_id,score\n9,0.9\n", "out of range"),
        ];
        for (file, needle) in cases {
            match evaluate_ctr::<f64, _>(file.as_bytes(), &ctr_truth()) {
                Err(EvalError::OutputInvalid(msg)) => assert!(msg.contains(needle), "{msg} !~ {needle}"),
                other => panic!("expected OutputInvalid for {file:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn topn_all_hits_at_rank_one() {
        let file = "user_id,item_id,rank\nu1,a,1\nu1,z,2\nu2,b,1\n";
        let r: MetricResult<f64> = evaluate_topn(file.as_bytes(), &topn_truth(), &[10]).unwrap();
        for v in r.metrics.values() {
            assert_eq!(*v, 1.0);
        }
        assert_eq!(r.primary_metric, "ndcg@10");
        assert_eq!(r.metrics.len(), 4);
    }

    #[test]
    fn topn_average_over_users() {
        let file = "user_id,item_id,rank\nu1,a,1\nu2,x,1\nu2,y,2\n";
        let r: MetricResult<f64> = evaluate_topn(file.as_bytes(), &topn_truth(), &[10]).unwrap();
        assert_eq!(r.metrics["ndcg@10"], 0.5);
        assert_eq!(r.metrics["hit_rate@10"], 0.5);
        assert_eq!(r.metrics["mrr"], 0.5);
    }

    #[test]
    fn topn_contract_violations() {
        let cases = [
            ("user_id,item_id,rank\nu1,a,1\n", "missing user `u2`"),
            ("user_id,item_id,rank\nu1,a,1\nu2,b,1\nu1,c,1\n", "more than once"),
            ("user_id,item_id,rank\nu1,a,1\nu1,a,2\nu2,b,1\n", "twice"),
            ("user_id,item_id,rank\nu1,a,1\nu1,c,3\nu2,b,1\n", "contiguous"),
            ("user_id,item_id,rank\nu1,a,0\nu2,b,1\n", "positive"),
            ("user_id,item_id,rank\nu1,a,1\nu2,b,1\nu9,b,1\n", "not an evaluated user"),
            ("user,item_id,rank\n", "header"),
        ];
        for (file, needle) in cases {
            match evaluate_topn::<f64, _>(file.as_bytes(), &topn_truth(), &[10]) {
                Err(EvalError::OutputInvalid(msg)) => assert!(msg.contains(needle), "{msg} !~ {needle}"),
                other => panic!("expected OutputInvalid for {file:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn topn_list_length_capped() {
        let mut file = String::from("user_id,item_id,rank\nu2,b,1\n");
        for r in 1..=K_MAX + 1 {
            file.push_str(&format!("u1,i{r},{r}\n"));
        }
        assert!(matches!(
            evaluate_topn::<f64, _>(file.as_bytes(), &topn_truth(), &[10]),
            Err(EvalError::OutputInvalid(_))
        ));
    }

    #[test]
    fn truth_parsing() {
        let t = CtrTruth::from_csv("f,click\na,1\nb,0\n".as_bytes(), "click").unwrap();
        assert_eq!(t.labels, [true, false]);
        assert!(CtrTruth::from_csv("f,click\na,2\n".as_bytes(), "click").is_err());
        let t = TopNTruth::from_csv("user_id,item_id,ts\nu,i,3\n".as_bytes(), "user_id", "item_id").unwrap();
        assert_eq!(t.held_out["u"], "i");
    }
}
