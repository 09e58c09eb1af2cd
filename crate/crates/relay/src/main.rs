use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use docmux::doclet::{DocletId, DEFAULT_AWARENESS_TTL_MS};
use docmux::relay::RelayConfig;
use relay::{load_snapshots, metrics_router, save_snapshots, serve_tcp, ws_router, Shared};
use tokio::net::TcpListener;
use tracing::{error, info, level_filters::LevelFilter};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Carrier {
    Ws,
    Tcp,
}

#[derive(Parser, Debug)]
#[command(version, about = "Relay doclet frames between collaborating clients")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,

    #[arg(long, value_enum, default_value = "ws")]
    carrier: Carrier,

    /// Hub that receives frames sent without a doclet id.
    #[arg(long)]
    default_doclet: Option<DocletId>,

    #[arg(long)]
    snapshot_dir: Option<PathBuf>,

    #[arg(long, default_value_t = 30)]
    snapshot_interval_s: u64,

    #[arg(long, default_value_t = DEFAULT_AWARENESS_TTL_MS)]
    awareness_ttl_ms: u64,

    #[arg(long, default_value = "info")]
    log_level: LevelFilter,

    /// Serve plain-text counters at http://127.0.0.1:<port>/metrics.
    #[arg(long)]
    metrics_port: Option<u16>,
}

#[tokio::main]
async fn main() -> Result<()> {
    let args = Args::parse();
    tracing_subscriber::fmt().with_max_level(args.log_level).init();

    let shared = Shared::new(RelayConfig {
        default_doclet: args.default_doclet.clone(),
        awareness_ttl_ms: args.awareness_ttl_ms.max(1),
    });

    if let Some(dir) = &args.snapshot_dir {
        let hubs = load_snapshots(dir).with_context(|| format!("reading {}", dir.display()))?;
        info!(count = hubs.len(), dir = %dir.display(), "restored snapshots");
        shared.with_relay(|relay| hubs.into_iter().for_each(|hub| relay.insert_hub(hub)));
        let (dir, shared) = (dir.clone(), shared.clone());
        let every = Duration::from_secs(args.snapshot_interval_s.max(1));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tick.tick().await;
                if let Err(e) = save_snapshots(&dir, &shared) {
                    error!("snapshot failed: {e}");
                }
            }
        });
    }

    {
        let shared = shared.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(1));
            loop {
                tick.tick().await;
                let now = shared.now_ms();
                for (doclet, user) in shared.with_relay(|relay| relay.expire_awareness(now)) {
                    info!(%doclet, user, "cursor expired");
                }
            }
        });
    }

    if let Some(port) = args.metrics_port {
        let listener = TcpListener::bind(("127.0.0.1", port))
            .await
            .context("binding metrics port")?;
        info!(addr = %listener.local_addr()?, "metrics listening");
        let metrics = shared.clone();
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, metrics_router(metrics)).await {
                error!("metrics server: {e}");
            }
        });
    }

    #[cfg(unix)]
    {
        let shared = shared.clone();
        let mut usr1 = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::user_defined1())?;
        tokio::spawn(async move {
            while usr1.recv().await.is_some() {
                print!("{}", shared.metrics_text());
            }
        });
    }

    let listener = TcpListener::bind(args.listen)
        .await
        .with_context(|| format!("binding {}", args.listen))?;
    info!(addr = %listener.local_addr()?, carrier = ?args.carrier, "relay listening");
    let server = {
        let shared = shared.clone();
        async move {
            match args.carrier {
                Carrier::Ws => axum::serve(listener, ws_router(shared)).await,
                Carrier::Tcp => serve_tcp(listener, shared).await,
            }
        }
    };
    tokio::select! {
        r = server => r.context("server stopped")?,
        _ = tokio::signal::ctrl_c() => info!("shutting down"),
    }
    if let Some(dir) = &args.snapshot_dir {
        let n = save_snapshots(dir, &shared)?;
        info!(count = n, "final snapshot written");
    }
    Ok(())
}
