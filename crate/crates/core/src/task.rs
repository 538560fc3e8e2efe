use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Benchmark task family. Every dataset and submission belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Click-through rate prediction: score each test row with a click probability.
    Ctr,
    /// Top-N recommendation: emit a ranked item list per evaluated user.
    TopN,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Ctr, Task::TopN];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ctr => "ctr",
            Task::TopN => "topn",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task `{0}` (expected `ctr` or `topn`)")]
pub struct UnknownTask(pub String);

impl FromStr for Task {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ctr" => Ok(Task::Ctr),
            "topn" => Ok(Task::TopN),
            _ => Err(UnknownTask(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_serializes_lowercase() {
        assert_eq!("CTR".parse::<Task>().unwrap(), Task::Ctr);
        assert_eq!("topn".parse::<Task>().unwrap(), Task::TopN);
        assert!("session".parse::<Task>().is_err());
        assert_eq!(serde_json::to_string(&Task::TopN).unwrap(), "\"topn\"");
    }
}
