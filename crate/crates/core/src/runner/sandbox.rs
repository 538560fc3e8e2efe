//! Process-level sandbox: one child process group per run, with a wall
//! clock limit, an address-space cap, a file-size cap, a scrubbed
//! environment and (where the kernel allows it) a private, empty network
//! namespace. This is not container-grade isolation.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use super::{LiveLog, SandboxLimits};

#[derive(Debug, Clone)]
pub struct LaunchSpec {
    pub program: String,
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub env: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

#[derive(Debug, Clone, Copy)]
pub struct ProcessOutcome {
    pub exit: ExitKind,
    /// Spawn to exit (or to the kill, on timeout).
    pub wall_clock: Duration,
}

/// How network access is cut off for child processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkIsolation {
    /// New user and network namespaces; works unprivileged on most kernels.
    UserAndNetNamespace,
    /// New network namespace only; needs CAP_SYS_ADMIN.
    NetNamespace,
    /// The kernel refused both; children share the host network.
    Unavailable,
}

fn unshare_flags(mode: NetworkIsolation) -> Option<libc::c_int> {
    match mode {
        NetworkIsolation::UserAndNetNamespace => Some(libc::CLONE_NEWUSER | libc::CLONE_NEWNET),
        NetworkIsolation::NetNamespace => Some(libc::CLONE_NEWNET),
        NetworkIsolation::Unavailable => None,
    }
}

fn probe(mode: NetworkIsolation) -> bool {
    let flags = unshare_flags(mode).expect("probing a namespace mode");
    let mut cmd = Command::new("/bin/sh");
    cmd.args(["-c", "exit 0"])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    // SAFETY: unshare is async-signal-safe and touches only the child.
    unsafe {
        cmd.pre_exec(move || {
            if libc::unshare(flags) != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        });
    }
    cmd.status().map(|s| s.success()).unwrap_or(false)
}

/// The strongest network isolation this host supports, probed once.
pub fn network_isolation() -> NetworkIsolation {
    static MODE: OnceLock<NetworkIsolation> = OnceLock::new();
    *MODE.get_or_init(|| {
        for mode in [NetworkIsolation::UserAndNetNamespace, NetworkIsolation::NetNamespace] {
            if probe(mode) {
                return mode;
            }
        }
        tracing::warn!("network namespaces unavailable; sandboxed runs keep host networking");
        NetworkIsolation::Unavailable
    })
}

fn set_limit(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: value as libc::rlim_t,
        rlim_max: value as libc::rlim_t,
    };
    // SAFETY: plain syscall on a stack value.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

fn pump<R: Read + Send + 'static>(mut pipe: R, log: Arc<LiveLog>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => log.append(&buf[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
    })
}

fn kill_group(pgid: i32) {
    // SAFETY: signals the child's process group only.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

const POLL_INTERVAL: Duration = Duration::from_millis(10);
/// How long to wait for output pipes to drain after the child is gone.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(2);

/// Spawns `spec`, streams combined output into `log`, and waits for exit
/// or the wall-clock limit. The whole process group is killed on timeout
/// and after exit, so daemonized grandchildren do not outlive the run.
///
/// An `Err` means the process could not be started at all.
pub fn run(spec: &LaunchSpec, limits: &SandboxLimits, log: Arc<LiveLog>) -> io::Result<ProcessOutcome> {
    let mut cmd = Command::new(&spec.program);
    cmd.args(&spec.args)
        .current_dir(&spec.cwd)
        .env_clear()
        .envs(spec.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let memory = limits.memory_bytes;
    let file_size = limits.max_output_bytes;
    let unshare = unshare_flags(network_isolation());
    // SAFETY: only async-signal-safe syscalls run between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            set_limit(libc::RLIMIT_AS, memory)?;
            set_limit(libc::RLIMIT_FSIZE, file_size)?;
            set_limit(libc::RLIMIT_CORE, 0)?;
            if let Some(flags) = unshare {
                if libc::unshare(flags) != 0 {
                    return Err(io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }

    let mut child = cmd.spawn()?;
    let started = Instant::now();
    let pgid = child.id() as i32;
    let readers = [
        pump(child.stdout.take().expect("piped stdout"), log.clone()),
        pump(child.stderr.take().expect("piped stderr"), log.clone()),
    ];

    let deadline = started + limits.wall_timeout;
    let exit = loop {
        if let Some(status) = child.try_wait()? {
            break match (status.code(), status.signal()) {
                (Some(code), _) => ExitKind::Exited(code),
                (None, Some(sig)) => ExitKind::Signaled(sig),
                (None, None) => ExitKind::Signaled(0),
            };
        }
        let now = Instant::now();
        if now >= deadline {
            kill_group(pgid);
            child.wait()?;
            break ExitKind::TimedOut;
        }
        thread::sleep(POLL_INTERVAL.min(deadline - now));
    };
    let wall_clock = started.elapsed();
    kill_group(pgid);

    let drain_deadline = Instant::now() + DRAIN_TIMEOUT;
    for reader in readers {
        while !reader.is_finished() && Instant::now() < drain_deadline {
            thread::sleep(POLL_INTERVAL);
        }
        if reader.is_finished() {
            let _ = reader.join();
        }
    }
    Ok(ProcessOutcome { exit, wall_clock })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> LaunchSpec {
        LaunchSpec {
            program: "/bin/sh".into(),
            args: vec!["-c".into(), script.into()],
            cwd: std::env::temp_dir(),
            env: vec![("PATH".into(), "/usr/bin:/bin".into())],
        }
    }

    fn limits(timeout_ms: u64) -> SandboxLimits {
        SandboxLimits {
            wall_timeout: Duration::from_millis(timeout_ms),
            ..SandboxLimits::default()
        }
    }

    #[test]
    fn captures_output_and_exit_code() {
        let log = Arc::new(LiveLog::new(1024));
        let out = run(&sh("echo hello; echo oops >&2; exit 3"), &limits(5000), log.clone()).unwrap();
        assert_eq!(out.exit, ExitKind::Exited(3));
        let text = log.snapshot();
        assert!(text.contains("hello") && text.contains("oops"));
    }

    #[test]
    fn kills_on_timeout() {
        let log = Arc::new(LiveLog::new(1024));
        let out = run(&sh("sleep 30 & sleep 30"), &limits(300), log).unwrap();
        assert_eq!(out.exit, ExitKind::TimedOut);
        assert!(out.wall_clock >= Duration::from_millis(300));
        assert!(out.wall_clock < Duration::from_secs(3));
    }

    #[test]
    fn environment_is_scrubbed() {
        std::env::set_var("RBOARD_SANDBOX_LEAK_CHECK", "leaked");
        let log = Arc::new(LiveLog::new(4096));
        run(&sh("env"), &limits(5000), log.clone()).unwrap();
        assert!(!log.snapshot().contains("leaked"));
    }

    #[test]
    fn network_is_cut_when_namespaces_work() {
        if network_isolation() == NetworkIsolation::Unavailable {
            return;
        }
        let log = Arc::new(LiveLog::new(4096));
        // Only loopback exists in a fresh namespace, and it is down.
        run(&sh("cat /proc/net/dev | tail -n +3 | cut -d: -f1 | tr -d ' '"), &limits(5000), log.clone()).unwrap();
        let ifaces: Vec<String> = log.snapshot().lines().map(str::to_string).collect();
        assert_eq!(ifaces, ["lo"]);
    }

    #[test]
    fn spawn_failure_is_an_error() {
        let spec = LaunchSpec {
            program: "/nonexistent/interpreter".into(),
            ..sh("")
        };
        assert!(run(&spec, &limits(1000), Arc::new(LiveLog::new(16))).is_err());
    }
}
