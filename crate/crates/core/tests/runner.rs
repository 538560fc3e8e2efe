use std::collections::HashSet;
use std::fs;
use std::time::Duration;

use rboard_core::digest::sha256_hex;
use rboard_core::runner::sandbox::{network_isolation, NetworkIsolation};
use rboard_core::runner::{RunStatus, RunnerError};
use rboard_core::store::{RecordKind, StoreError};
use rboard_core::submission::SubmissionError;
use rboard_core::{ErrorClass, Platform, PlatformError, RunRecord, SubmissionStatus, Task};
use rboard_testkit::{archive, ctr_dataset, platform, python3_available, stubs, topn_dataset, SECRET_SEEDS};
use tempfile::TempDir;

fn setup(timeout: Duration) -> (TempDir, Platform) {
    assert!(python3_available(), "these tests launch python3 stubs");
    let dir = TempDir::new().unwrap();
    let p = platform(dir.path(), timeout);
    let (new, raw) = ctr_dataset("ctr-a", 1, SECRET_SEEDS[0], 400);
    p.register_dataset(new, &raw).unwrap();
    let (new, raw) = topn_dataset("topn-a", 2, SECRET_SEEDS[2], 60, 40);
    p.register_dataset(new, &raw).unwrap();
    (dir, p)
}

fn run_one(p: &Platform, main_py: &str, task: Task) -> RunRecord {
    let receipt = p.submit(&archive(main_py), task, "tester").unwrap();
    assert_eq!(receipt.run_ids.len(), 1);
    p.execute_inline(&receipt.run_ids).unwrap().remove(0)
}

#[test]
fn baseline_succeeds_on_both_tasks() {
    let (_dir, p) = setup(Duration::from_secs(60));
    for task in Task::ALL {
        let run = run_one(&p, &stubs::popularity(), task);
        assert_eq!(run.status, RunStatus::Succeeded, "{task}: {:?} {}", run.detail, run.log_excerpt);
        assert_eq!(run.exit_code, Some(0));
        let stored = p.runner().predictions(&run.run_id).unwrap().unwrap();
        assert_eq!(run.prediction_checksum.as_deref(), Some(sha256_hex(&stored).as_str()));

        let view = p.get_submission(&run.submission_id).unwrap();
        assert_eq!(view.submission.status, SubmissionStatus::Completed);
        assert!(view.eligible);
        let result = view.runs[0].result.as_ref().unwrap();
        for (name, v) in &result.metrics {
            if name == "log_loss" {
                assert!(*v >= 0.0);
            } else {
                assert!((0.0..=1.0).contains(v), "{name} = {v}");
            }
        }
    }
}

#[test]
fn nonzero_exit_is_failed_with_code_and_log() {
    let (_dir, p) = setup(Duration::from_secs(60));
    let run = run_one(&p, stubs::EXIT_3, Task::Ctr);
    assert_eq!(run.status, RunStatus::Failed);
    assert_eq!(run.exit_code, Some(3));
    assert!(run.log_excerpt.contains("stub failing on purpose"));
    assert!(run.prediction_checksum.is_none());
    let view = p.get_submission(&run.submission_id).unwrap();
    assert_eq!(view.submission.status, SubmissionStatus::Completed);
    assert!(!view.eligible);
}

#[test]
fn timeout_kills_and_records_bounded_runtime() {
    let (_dir, p) = setup(Duration::from_secs(1));
    let run = run_one(&p, stubs::SLEEP_FOREVER, Task::Ctr);
    assert_eq!(run.status, RunStatus::Timeout);
    assert!(
        (1.0..=2.0).contains(&run.wall_clock_seconds),
        "wall clock {}",
        run.wall_clock_seconds
    );
    assert_eq!(run.exit_code, None);
}

#[test]
fn runtime_covers_the_whole_process() {
    let (_dir, p) = setup(Duration::from_secs(60));
    let run = run_one(&p, &stubs::sleep_then(1.0, &stubs::popularity()), Task::TopN);
    assert_eq!(run.status, RunStatus::Succeeded);
    assert!(
        (1.0..=2.0).contains(&run.wall_clock_seconds),
        "wall clock {}",
        run.wall_clock_seconds
    );
}

#[test]
fn missing_or_malformed_output_is_output_invalid() {
    let (_dir, p) = setup(Duration::from_secs(60));
    let run = run_one(&p, stubs::NO_OUTPUT, Task::Ctr);
    assert_eq!(run.status, RunStatus::OutputInvalid);
    assert_eq!(run.exit_code, Some(0));
    assert!(run.detail.unwrap().contains("no prediction file"));

    let run = run_one(&p, stubs::BAD_OUTPUT, Task::TopN);
    assert_eq!(run.status, RunStatus::OutputInvalid);
    assert!(run.detail.unwrap().contains("header"));
}

#[test]
fn logs_are_bounded_with_marker() {
    let (_dir, p) = setup(Duration::from_secs(60));
    let run = run_one(&p, &stubs::noisy(10), Task::Ctr);
    let log = p.run_logs(&run.run_id).unwrap();
    assert!(log.len() <= 64 * 1024, "log is {} bytes", log.len());
    assert!(log.contains("[output truncated:"));
    assert!(run.log_excerpt.len() <= 2048);

    let run = run_one(&p, stubs::NO_OUTPUT, Task::Ctr);
    assert!(p.run_logs(&run.run_id).unwrap().contains("hello"));

    let err = p.run_logs("sub-00000000000000000000000000000000.ctr-a").unwrap_err();
    assert_eq!(err.class(), ErrorClass::NotFound);
}

#[test]
fn sandbox_tree_never_reaches_hidden_data() {
    let (dir, p) = setup(Duration::from_secs(60));
    let receipt_a = p.submit(&archive(&stubs::tree_probe()), Task::Ctr, "a").unwrap();
    let receipt_b = p.submit(&archive(&stubs::tree_probe()), Task::Ctr, "b").unwrap();
    p.start_workers().unwrap();
    let hidden = p.layout().hidden_root();
    let hidden = fs::canonicalize(&hidden).unwrap();
    let mut cwds = HashSet::new();
    for receipt in [&receipt_a, &receipt_b] {
        let view = p.wait_for_submission(&receipt.submission_id, Duration::from_secs(60)).unwrap();
        let run = &view.runs[0].run;
        assert_eq!(run.status, RunStatus::Succeeded, "{:?}", run.detail);
        let log = p.run_logs(&run.run_id).unwrap();
        let paths: Vec<&str> = log.lines().filter(|l| l.starts_with("PATH ")).collect();
        assert!(paths.iter().any(|l| l.contains("test_input.csv")));
        for line in &paths {
            assert!(!line.contains(hidden.to_str().unwrap()), "{line}");
            assert!(!line.contains("/hidden/"), "{line}");
        }
        let cwd = paths
            .iter()
            .find_map(|l| l.split_whitespace().nth(1).filter(|p| p.ends_with("/code/main.py")))
            .unwrap()
            .to_string();
        cwds.insert(cwd);
    }
    assert_eq!(cwds.len(), 2, "runs shared a working directory");
    // Working directories are destroyed; only artifacts remain.
    let work = dir.path().join("work");
    assert!(fs::read_dir(&work).map_or(true, |mut d| d.next().is_none()));
}

#[test]
fn network_is_unreachable_inside_runs() {
    if network_isolation() == NetworkIsolation::Unavailable {
        eprintln!("network namespaces unavailable on this host; isolation not asserted");
        return;
    }
    let (_dir, p) = setup(Duration::from_secs(30));
    let run = run_one(&p, stubs::NETWORK_PROBE, Task::Ctr);
    let log = p.run_logs(&run.run_id).unwrap();
    assert!(log.contains("NETWORK blocked"), "{log}");
}

#[test]
fn terminal_runs_never_change() {
    let (_dir, p) = setup(Duration::from_secs(60));
    let run = run_one(&p, stubs::EXIT_3, Task::Ctr);
    assert!(matches!(
        p.runner().execute(&run.run_id),
        Err(RunnerError::InvalidTransition { from: RunStatus::Failed, .. })
    ));
    let store = rboard_core::store::Store::open(p.layout().root()).unwrap();
    let mut tampered = run.clone();
    tampered.status = RunStatus::Succeeded;
    assert!(matches!(
        store.put_json(RecordKind::Run, &run.run_id, &tampered),
        Err(StoreError::ImmutableRecord { .. })
    ));
    assert_eq!(p.get_run(&run.run_id).unwrap().run, run);
}

#[test]
fn fan_out_and_scheduling_rules() {
    let (_dir, p) = setup(Duration::from_secs(60));
    let (new, raw) = ctr_dataset("ctr-b", 3, SECRET_SEEDS[1], 300);
    p.register_dataset(new, &raw).unwrap();
    let receipt = p.submit(&archive(stubs::NO_OUTPUT), Task::Ctr, "fan").unwrap();
    assert_eq!(receipt.run_ids.len(), 2);
    let view = p.get_submission(&receipt.submission_id).unwrap();
    assert_eq!(view.submission.status, SubmissionStatus::Running);
    let datasets: HashSet<_> = view.runs.iter().map(|r| r.run.dataset_id.as_str()).collect();
    assert_eq!(datasets, HashSet::from(["ctr-a", "ctr-b"]));
    assert!(view.runs.iter().all(|r| r.run.status == RunStatus::Queued && r.result.is_none()));

    let again = p
        .runner()
        .schedule_task_runs(&receipt.submission_id, &["ctr-a".to_string()])
        .unwrap_err();
    assert!(matches!(again, RunnerError::Submission(SubmissionError::InvalidState { .. })));

    p.execute_inline(&receipt.run_ids[..1]).unwrap();
    let view = p.get_submission(&receipt.submission_id).unwrap();
    assert_eq!(view.submission.status, SubmissionStatus::Running);
    p.execute_inline(&receipt.run_ids[1..]).unwrap();
    let view = p.get_submission(&receipt.submission_id).unwrap();
    assert_eq!(view.submission.status, SubmissionStatus::Completed);
    assert_eq!(view.runs.len(), 2);
    assert!(view.runs.iter().all(|r| r.run.status.is_terminal()));
}

#[test]
fn submitting_to_a_task_without_datasets_fails() {
    assert!(python3_available());
    let dir = TempDir::new().unwrap();
    let p = platform(dir.path(), Duration::from_secs(5));
    let err = p.submit(&archive(stubs::NO_OUTPUT), Task::TopN, "x").unwrap_err();
    assert!(matches!(err, PlatformError::Submission(SubmissionError::NoDatasetsForTask(Task::TopN))));
}

#[test]
fn restart_fails_interrupted_runs_and_requeues_queued_ones() {
    let (dir, p) = setup(Duration::from_secs(60));
    let receipt = p.submit(&archive(&stubs::popularity()), Task::Ctr, "r").unwrap();
    let run_id = receipt.run_ids[0].clone();
    let store = rboard_core::store::Store::open(dir.path()).unwrap();
    let mut run: RunRecord = store.get_json(RecordKind::Run, &run_id).unwrap();
    run.transition(RunStatus::Running).unwrap();
    store.put_json(RecordKind::Run, &run_id, &run).unwrap();
    let queued = p.submit(&archive(&stubs::popularity()), Task::Ctr, "q").unwrap();
    drop(p);

    let p = platform(dir.path(), Duration::from_secs(60));
    p.start_workers().unwrap();
    let interrupted = p.get_run(&run_id).unwrap().run;
    assert_eq!(interrupted.status, RunStatus::Failed);
    assert_eq!(
        p.get_submission(&receipt.submission_id).unwrap().submission.status,
        SubmissionStatus::Completed
    );
    let view = p.wait_for_submission(&queued.submission_id, Duration::from_secs(60)).unwrap();
    assert_eq!(view.runs[0].run.status, RunStatus::Succeeded);
}
