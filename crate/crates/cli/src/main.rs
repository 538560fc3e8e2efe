//! `rboard` command-line client.
//!
//! Exit codes: 0 success, 2 user or contract error, 3 transport error.

mod client;
mod render;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use client::{Client, Failure};
use rboard_core::evaluation::{evaluate, CtrTruth, TopNTruth, Truth};
use rboard_core::{ColumnSchema, NewDataset, SplitConfig, Task};

const WATCH_INTERVAL: Duration = Duration::from_secs(2);

#[derive(Parser)]
#[command(name = "rboard", version, about = "Client for the rboard benchmark platform")]
struct Cli {
    /// Base URL of the rboard server.
    #[arg(long, env = "RBOARD_URL", default_value = "http://127.0.0.1:8080", global = true)]
    url: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset administration.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Upload a submission archive; prints the submission id.
    Submit {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        author: String,
        #[command(flatten)]
        token: SubmitToken,
    },
    /// Show the runs of a submission.
    Status {
        submission_id: String,
        /// Poll until every run is terminal.
        #[arg(long)]
        watch: bool,
    },
    /// Print a task's leaderboard.
    Leaderboard {
        #[arg(value_parser = parse_task)]
        task: Task,
        /// Print the API response body unchanged.
        #[arg(long)]
        json: bool,
    },
    /// Score a prediction file against a test file offline.
    EvalLocal {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// CTR label column; defaults to the last column of the truth file.
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long, default_value = "user_id")]
        user_column: String,
        #[arg(long, default_value = "item_id")]
        item_column: String,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Register a raw CSV file; prints the dataset id.
    Register {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        /// JSON column schema, e.g. {"kind":"ctr","features":["item"],"label":"click"}.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        id: String,
        /// Display name; defaults to the id.
        #[arg(long)]
        name: Option<String>,
        /// Split seed; drawn at random when omitted. Never printed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        token: AdminToken,
    },
}

#[derive(Args)]
struct SubmitToken {
    #[arg(long = "token", env = "RBOARD_TOKEN", hide_env_values = true)]
    value: String,
}

#[derive(Args)]
struct AdminToken {
    #[arg(long = "admin-token", env = "RBOARD_ADMIN_TOKEN", hide_env_values = true)]
    value: String,
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::from_str(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

fn read(path: &PathBuf) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::user("io_error", format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let client = Client::new(&cli.url)?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Dataset {
            command:
                DatasetCommand::Register {
                    task,
                    schema,
                    raw,
                    id,
                    name,
                    seed,
                    token,
                },
        } => {
            let schema: ColumnSchema = serde_json::from_slice(&read(&schema)?)
                .map_err(|e| Failure::user("invalid_config", format!("schema file: {e}")))?;
            let new = NewDataset {
                name: name.unwrap_or_else(|| id.clone()),
                dataset_id: id,
                task,
                schema,
                split_config: SplitConfig::default_for(task, seed.unwrap_or_else(rand::random)),
            };
            let created = client.register_dataset(&new, read(&raw)?, &token.value)?;
            writeln!(out, "{}", created["dataset_id"].as_str().unwrap_or_default())
        }
        Command::Submit {
            task,
            archive,
            author,
            token,
        } => {
            let receipt = client.submit(read(&archive)?, task, &author, &token.value)?;
            writeln!(out, "{}", receipt["submission_id"].as_str().unwrap_or_default())
        }
        Command::Status { submission_id, watch } => {
            let mut view = client.submission(&submission_id)?;
            while watch && !render::all_terminal(&view) {
                thread::sleep(WATCH_INTERVAL);
                view = client.submission(&submission_id)?;
            }
            write!(out, "{}", render::status_table(&view))
        }
        Command::Leaderboard { task, json } => {
            let body = client.leaderboard(task)?;
            if json {
                out.write_all(&body)
            } else {
                let entries: serde_json::Value = serde_json::from_slice(&body)
                    .map_err(|e| Failure::transport(format!("unreadable leaderboard: {e}")))?;
                write!(out, "{}", render::leaderboard_table(&entries))
            }
        }
        Command::EvalLocal {
            task,
            predictions,
            truth,
            label_column,
            user_column,
            item_column,
        } => {
            let truth_bytes = read(&truth)?;
            let truth = match task {
                Task::Ctr => {
                    let label = match label_column {
                        Some(l) => l,
                        None => last_column(&truth_bytes)?,
                    };
                    CtrTruth::from_csv(truth_bytes.as_slice(), &label).map(Truth::Ctr)
                }
                Task::TopN => TopNTruth::from_csv(truth_bytes.as_slice(), &user_column, &item_column).map(Truth::TopN),
            }
            .map_err(|e| Failure::user("invalid_truth", e.to_string()))?;
            let result = evaluate::<f64>(task, &read(&predictions)?, &truth)
                .map_err(|e| Failure::user("output_invalid", e.to_string()))?;
            write!(out, "{}", render::metrics(&result))
        }
    }
    .map_err(|e| Failure::user("io_error", e.to_string()))
}

fn last_column(csv: &[u8]) -> Result<String, Failure> {
    let header = csv.split(|&b| b == b'\n').next().unwrap_or_default();
    String::from_utf8_lossy(header)
        .trim_end_matches('\r')
        .rsplit(',')
        .next()
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .ok_or_else(|| Failure::user("invalid_truth", "truth file has no header"))
}
