use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::thread;

use rboard_api::{router, serve, Tokens};
use rboard_core::{Platform, PlatformConfig, Task};
use rboard_testkit::{archive, python3_available, stubs};
use tempfile::TempDir;
use tokio::sync::oneshot;

const TOKEN: &str = "cli-submit-token";
const ADMIN: &str = "cli-admin-token";

struct Server {
    addr: SocketAddr,
    platform: Arc<Platform>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
    _dir: TempDir,
}

impl Server {
    fn start() -> Self {
        let dir = TempDir::new().unwrap();
        let mut config = PlatformConfig::new(dir.path());
        config.workers = 1;
        let platform = Arc::new(Platform::open(config).unwrap());
        platform.start_workers().unwrap();
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(
            platform.clone(),
            Tokens {
                submit: TOKEN.into(),
                admin: Some(ADMIN.into()),
            },
        );
        let (stop, rx) = oneshot::channel::<()>();
        let thread = thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                serve(listener, app, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            });
        });
        Server {
            addr,
            platform,
            stop: Some(stop),
            thread: Some(thread),
            _dir: dir,
        }
    }

    fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn rboard(&self, args: &[&str]) -> Output {
        rboard(&self.url(), args)
    }

    /// Registers a small dataset of each task through the CLI.
    fn seed_datasets(&self, files: &Path) {
        let ctr_schema = files.join("ctr-schema.json");
        fs::write(&ctr_schema, r#"{"kind":"ctr","features":["item","context"],"label":"click"}"#).unwrap();
        let ctr_raw = files.join("ctr.csv");
        fs::write(&ctr_raw, rboard_testkit::ctr_raw(5, 600)).unwrap();
        let topn_schema = files.join("topn-schema.json");
        fs::write(&topn_schema, r#"{"kind":"topn","user":"user_id","item":"item_id","timestamp":"timestamp"}"#).unwrap();
        let topn_raw = files.join("topn.csv");
        fs::write(&topn_raw, rboard_testkit::topn_raw(5, 60, 40)).unwrap();
        for (task, schema, raw, id) in [
            ("ctr", &ctr_schema, &ctr_raw, "ctr-one"),
            ("topn", &topn_schema, &topn_raw, "topn-one"),
        ] {
            let out = self.rboard(&[
                "dataset", "register", "--task", task, "--schema", path(schema), "--raw", path(raw), "--id", id,
                "--admin-token", ADMIN,
            ]);
            assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
            assert_eq!(stdout(&out), format!("{id}\n"));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn rboard(url: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rboard"))
        .args(args)
        .env("RBOARD_URL", url)
        .env("RBOARD_TOKEN", TOKEN)
        .env_remove("RBOARD_ADMIN_TOKEN")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dataset_register_reports_errors_with_exit_2() {
    let server = Server::start();
    let files = TempDir::new().unwrap();
    server.seed_datasets(files.path());

    let schema = files.path().join("ctr-schema.json");
    let raw = files.path().join("ctr.csv");
    let dup = server.rboard(&[
        "dataset", "register", "--task", "ctr", "--schema", path(&schema), "--raw", path(&raw), "--id", "ctr-one",
        "--admin-token", ADMIN,
    ]);
    assert_eq!(dup.status.code(), Some(2));
    assert!(stderr(&dup).contains("duplicate_id"), "{}", stderr(&dup));

    let broken = files.path().join("broken.csv");
    fs::write(&broken, "item,context,click\ni1,c1,1\ni2,c2,maybe\n").unwrap();
    let bad = server.rboard(&[
        "dataset", "register", "--task", "ctr", "--schema", path(&schema), "--raw", path(&broken), "--id", "broken",
        "--admin-token", ADMIN,
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let err = stderr(&bad);
    assert!(err.contains("schema_violation") && err.contains("row 2") && err.contains("click"), "{err}");

    let no_admin = server.rboard(&[
        "dataset", "register", "--task", "ctr", "--schema", path(&schema), "--raw", path(&raw), "--id", "other",
        "--admin-token", "wrong",
    ]);
    assert_eq!(no_admin.status.code(), Some(2));
    assert!(stderr(&no_admin).contains("unauthorized"));
}

#[test]
fn submit_status_and_leaderboard() {
    if !python3_available() {
        eprintln!("python3 unavailable; skipping");
        return;
    }
    let server = Server::start();
    let files = TempDir::new().unwrap();
    server.seed_datasets(files.path());

    let empty = server.rboard(&["leaderboard", "ctr"]);
    assert_eq!(empty.status.code(), Some(0));
    assert_eq!(stdout(&empty), "no entries\n");

    let mut ids = Vec::new();
    for (name, code) in [("popularity", stubs::popularity()), ("random", stubs::random())] {
        let zip = files.path().join(format!("{name}.zip"));
        fs::write(&zip, archive(&code)).unwrap();
        let out = server.rboard(&["submit", "--task", "ctr", "--archive", path(&zip), "--author", name]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        ids.push(stdout(&out).trim().to_string());
    }

    for id in &ids {
        let out = server.rboard(&["status", id, "--watch"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let text = stdout(&out);
        let rows: Vec<&str> = text.lines().skip(2).collect();
        assert_eq!(rows.len(), 1, "{text}");
        assert!(rows[0].starts_with("ctr-one") && rows[0].contains("succeeded") && rows[0].contains("auc="), "{text}");
    }

    let json = server.rboard(&["leaderboard", "ctr", "--json"]);
    assert_eq!(json.status.code(), Some(0));
    let api = reqwest::blocking::get(format!("{}/api/v1/leaderboard/ctr", server.url()))
        .unwrap()
        .bytes()
        .unwrap();
    assert_eq!(json.stdout, api.to_vec());

    let table = server.rboard(&["leaderboard", "ctr"]);
    let board = server.platform.leaderboard(Task::Ctr).unwrap();
    let lines: Vec<String> = stdout(&table).lines().skip(1).map(str::to_string).collect();
    assert_eq!(lines.len(), board.len());
    for (line, entry) in lines.iter().zip(&board) {
        assert!(line.contains(&entry.submission_id), "{line}");
    }
}

#[test]
fn submit_and_status_errors() {
    let server = Server::start();
    let files = TempDir::new().unwrap();
    server.seed_datasets(files.path());

    let no_entry = files.path().join("no-entry.zip");
    fs::write(
        &no_entry,
        rboard_core::archive::write_deterministic_zip(&[("model.py", b"pass".to_vec())]).unwrap(),
    )
    .unwrap();
    let out = server.rboard(&["submit", "--task", "ctr", "--archive", path(&no_entry), "--author", "a"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing_entry_file"), "{}", stderr(&out));

    let unknown = server.rboard(&["status", "does-not-exist"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("not_found"));

    let missing_file = server.rboard(&["submit", "--task", "ctr", "--archive", "/nonexistent.zip", "--author", "a"]);
    assert_eq!(missing_file.status.code(), Some(2));
}

#[test]
fn unreachable_server_exits_3() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let files = TempDir::new().unwrap();
    let zip = files.path().join("s.zip");
    fs::write(&zip, archive(stubs::EXIT_3)).unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let out = rboard(&url, &["submit", "--task", "ctr", "--archive", path(&zip), "--author", "a"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("network error"));
    assert_eq!(rboard(&url, &["leaderboard", "topn"]).status.code(), Some(3));
}

#[test]
fn eval_local_scores_offline() {
    let files = TempDir::new().unwrap();
    let truth = files.path().join("test.csv");
    fs::write(&truth, "item,context,click\ni1,c1,1\ni2,c1,0\ni3,c2,1\ni4,c2,0\n").unwrap();
    let perfect = files.path().join("perfect.csv");
    fs::write(&perfect, "row_id,score\n0,0.9\n1,0.1\n2,0.8\n3,0.2\n").unwrap();
    let out = rboard("http://127.0.0.1:9", &["eval-local", "--task", "ctr", "--predictions", path(&perfect), "--truth", path(&truth)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("auc=1\n"), "{}", stdout(&out));

    let two = files.path().join("two.csv");
    fs::write(&two, "user,clicked\nu1,1\nu2,0\n").unwrap();
    let uniform = files.path().join("uniform.csv");
    fs::write(&uniform, "row_id,score\n0,0.5\n1,0.5\n").unwrap();
    let out = rboard(
        "http://127.0.0.1:9",
        &["eval-local", "--task", "ctr", "--predictions", path(&uniform), "--truth", path(&two), "--label-column", "clicked"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log_loss: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("log_loss="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((log_loss - std::f64::consts::LN_2).abs() <= 1e-12);

    let malformed = files.path().join("bad.csv");
    fs::write(&malformed, "row_id,score\n0,0.9\n0,0.1\n").unwrap();
    let out = rboard("http://127.0.0.1:9", &["eval-local", "--task", "ctr", "--predictions", path(&malformed), "--truth", path(&truth)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("output_invalid"), "{}", stderr(&out));

    let topn_truth = files.path().join("topn.csv");
    fs::write(&topn_truth, "user_id,item_id,timestamp\nu1,m1,10\nu2,m2,11\n").unwrap();
    let topn_pred = files.path().join("topn-pred.csv");
    fs::write(&topn_pred, "user_id,item_id,rank\nu1,m1,1\nu2,m9,1\nu2,m2,2\n").unwrap();
    let out = rboard("http://127.0.0.1:9", &["eval-local", "--task", "topn", "--predictions", path(&topn_pred), "--truth", path(&topn_truth)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("ndcg@10="), "{text}");
    assert!(text.contains("hit_rate@10=1\n") && text.contains("mrr=0.75\n"), "{text}");
}
