#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rboard_api::{router, serve, Tokens};
use rboard_core::{NewDataset, Platform, PlatformConfig, Task};
use reqwest::blocking::{multipart, Client, Response};
use tempfile::TempDir;
use tokio::sync::oneshot;

pub const SUBMIT_TOKEN: &str = "submit-token-3f9a";
pub const ADMIN_TOKEN: &str = "admin-token-77c1";

/// API server on an ephemeral port, backed by a platform in a temp dir.
pub struct TestServer {
    pub addr: SocketAddr,
    pub platform: Arc<Platform>,
    pub client: Client,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
    _dir: TempDir,
}

impl TestServer {
    pub fn start(configure: impl FnOnce(&mut PlatformConfig)) -> Self {
        let dir = TempDir::new().unwrap();
        let mut config = PlatformConfig::new(dir.path());
        config.workers = 1;
        configure(&mut config);
        let platform = Arc::new(Platform::open(config).unwrap());
        platform.start_workers().unwrap();

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(
            platform.clone(),
            Tokens {
                submit: SUBMIT_TOKEN.into(),
                admin: Some(ADMIN_TOKEN.into()),
            },
        );
        let (tx, rx) = oneshot::channel::<()>();
        let thread = thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                serve(listener, app, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            });
        });
        TestServer {
            addr,
            platform,
            client: Client::builder().timeout(Duration::from_secs(120)).build().unwrap(),
            shutdown: Some(tx),
            thread: Some(thread),
            _dir: dir,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn get(&self, path: &str) -> Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    pub fn get_json(&self, path: &str) -> serde_json::Value {
        let r = self.get(path);
        assert!(r.status().is_success(), "GET {path}: {}", r.status());
        r.json().unwrap()
    }

    pub fn register(&self, new: &NewDataset, raw: &[u8], token: Option<&str>) -> Response {
        let mut form = multipart::Form::new()
            .text("descriptor", serde_json::to_string(new).unwrap())
            .part("raw", multipart::Part::bytes(raw.to_vec()).file_name("raw.csv"));
        if let Some(t) = token {
            form = form.text("token", t.to_string());
        }
        self.client
            .post(self.url("/api/v1/datasets"))
            .multipart(form)
            .send()
            .unwrap()
    }

    pub fn submit(&self, archive: &[u8], task: &str, author: &str, token: Option<&str>) -> Response {
        let mut form = multipart::Form::new()
            .part("archive", multipart::Part::bytes(archive.to_vec()).file_name("submission.zip"))
            .text("task", task.to_string())
            .text("author", author.to_string());
        if let Some(t) = token {
            form = form.text("token", t.to_string());
        }
        self.client
            .post(self.url("/api/v1/submissions"))
            .multipart(form)
            .send()
            .unwrap()
    }

    /// Submits and returns the new submission id, panicking unless 201.
    pub fn submit_ok(&self, archive: &[u8], task: Task) -> String {
        let r = self.submit(archive, task.as_str(), "tester", Some(SUBMIT_TOKEN));
        assert_eq!(r.status().as_u16(), 201, "{}", r.text().unwrap_or_default());
        let body: serde_json::Value = r.json().unwrap();
        body["submission_id"].as_str().unwrap().to_string()
    }

    /// Polls the submission until it is completed.
    pub fn wait(&self, id: &str, timeout: Duration) -> serde_json::Value {
        let deadline = Instant::now() + timeout;
        loop {
            let view = self.get_json(&format!("/api/v1/submissions/{id}"));
            if view["status"] == "completed" || view["status"] == "failed" {
                return view;
            }
            assert!(Instant::now() < deadline, "submission {id} did not finish");
            thread::sleep(Duration::from_millis(50));
        }
    }

    /// Sends a GET with `path` exactly as given, bypassing URL
    /// normalization. Returns the status code and body.
    pub fn raw_get(&self, path: &str) -> (u16, Vec<u8>) {
        let mut stream = TcpStream::connect(self.addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        write!(stream, "GET {path} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\n\r\n", self.addr).unwrap();
        let mut buf = Vec::new();
        stream.read_to_end(&mut buf).unwrap();
        let split = buf.windows(4).position(|w| w == b"\r\n\r\n").unwrap_or(buf.len());
        let head = String::from_utf8_lossy(&buf[..split]).to_string();
        let status = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        (status, buf[(split + 4).min(buf.len())..].to_vec())
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Every entry of a zip archive as (name, bytes).
pub fn unzip(bytes: &[u8]) -> Vec<(String, Vec<u8>)> {
    let dir = TempDir::new().unwrap();
    let entries = rboard_core::archive::extract_zip(bytes, dir.path(), 1 << 30).unwrap();
    entries
        .into_iter()
        .map(|path| {
            let data = std::fs::read(&path).unwrap();
            let name = path.strip_prefix(dir.path()).unwrap().to_string_lossy().replace('\\', "/");
            (name, data)
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
