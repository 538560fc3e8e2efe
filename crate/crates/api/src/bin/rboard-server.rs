//! rboard HTTP server.
//!
//! Environment: `RBOARD_LISTEN` (default `127.0.0.1:8080`), `RBOARD_TOKEN`
//! (required), `RBOARD_ADMIN_TOKEN` (enables dataset registration), plus
//! the platform variables read by `PlatformConfig::from_env`.

use std::process::ExitCode;
use std::sync::Arc;

use rboard_api::{router, serve, Tokens};
use rboard_core::{Platform, PlatformConfig};
use tracing_subscriber::EnvFilter;

const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match run().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

async fn run() -> Result<(), Box<dyn std::error::Error>> {
    let config = PlatformConfig::from_env()?;
    let submit = std::env::var("RBOARD_TOKEN")
        .ok()
        .filter(|t| !t.is_empty())
        .ok_or("RBOARD_TOKEN must be set")?;
    let admin = std::env::var("RBOARD_ADMIN_TOKEN").ok().filter(|t| !t.is_empty());
    let listen = std::env::var("RBOARD_LISTEN").unwrap_or_else(|_| DEFAULT_LISTEN.to_string());

    let data_dir = config.data_dir.clone();
    let workers = config.workers;
    let platform = tokio::task::spawn_blocking(move || -> Result<Arc<Platform>, rboard_core::PlatformError> {
        let platform = Arc::new(Platform::open(config)?);
        platform.start_workers()?;
        Ok(platform)
    })
    .await??;
    if admin.is_none() {
        tracing::warn!("RBOARD_ADMIN_TOKEN unset; dataset registration disabled");
    }

    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, data = %data_dir.display(), workers, "listening");
    let app = router(platform, Tokens { submit, admin });
    serve(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    // Runs still executing are marked failed on the next start.
    tracing::info!("shutting down");
    Ok(())
}
