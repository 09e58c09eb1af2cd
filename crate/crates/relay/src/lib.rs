//! Networked front end for [`docmux::relay::Relay`].
//!
//! The sans-IO relay sits behind one mutex. Each connection gets an
//! unbounded outbound queue drained by its own writer task, so the lock is
//! never held across an await.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use docmux::doclet::UserId;
use docmux::relay::{restore, snapshot_hub, ConnId, DocletHub, Relay, RelayConfig};
use futures_util::{SinkExt, StreamExt};
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Deserialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tracing::{debug, info, warn};

/// Largest frame accepted on the TCP carrier.
pub const MAX_FRAME_LEN: usize = 16 << 20;

pub const SNAPSHOT_EXT: &str = "dsn1";

#[derive(Default)]
struct Inner {
    relay: Relay,
    peers: HashMap<ConnId, mpsc::UnboundedSender<Vec<u8>>>,
}

/// Relay state shared by every connection task.
#[derive(Clone)]
pub struct Shared {
    inner: Arc<Mutex<Inner>>,
    started: Instant,
}

impl Shared {
    pub fn new(config: RelayConfig) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                relay: Relay::new(config),
                peers: HashMap::new(),
            })),
            started: Instant::now(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    /// Runs `f` against the relay under the lock.
    pub fn with_relay<T>(&self, f: impl FnOnce(&mut Relay) -> T) -> T {
        f(&mut self.lock().relay)
    }

    pub fn connect(&self, user: Option<UserId>) -> (ConnId, mpsc::UnboundedReceiver<Vec<u8>>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let mut inner = self.lock();
        let conn = inner.relay.handle_connect(user);
        inner.peers.insert(conn, tx);
        (conn, rx)
    }

    pub fn inbound(&self, conn: ConnId, bytes: &[u8]) {
        let now = self.now_ms();
        let mut inner = self.lock();
        let out = inner.relay.handle_frame(conn, bytes, now);
        for o in out {
            if let Some(tx) = inner.peers.get(&o.to) {
                // a closed receiver means that peer is mid-disconnect
                let _ = tx.send(o.bytes);
            }
        }
    }

    pub fn disconnect(&self, conn: ConnId) {
        let mut inner = self.lock();
        inner.peers.remove(&conn);
        inner.relay.handle_disconnect(conn);
    }

    pub fn metrics_text(&self) -> String {
        self.lock().relay.metrics_text()
    }
}

pub async fn serve_tcp(listener: TcpListener, shared: Shared) -> io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        let shared = shared.clone();
        tokio::spawn(async move {
            if let Err(e) = tcp_connection(stream, peer, shared).await {
                debug!(%peer, "tcp connection ended: {e}");
            }
        });
    }
}

async fn tcp_connection(stream: TcpStream, peer: SocketAddr, shared: Shared) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let (read, mut write) = stream.into_split();
    let (conn, mut rx) = shared.connect(None);
    info!(%peer, conn, "tcp connected");
    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            let mut buf = Vec::with_capacity(4 + frame.len());
            buf.extend_from_slice(&(frame.len() as u32).to_be_bytes());
            buf.extend_from_slice(&frame);
            if write.write_all(&buf).await.is_err() {
                break;
            }
        }
    });
    let result = read_tcp_frames(BufReader::new(read), |frame| shared.inbound(conn, frame)).await;
    shared.disconnect(conn);
    writer.abort();
    info!(%peer, conn, "tcp disconnected");
    result
}

async fn read_tcp_frames<R: AsyncReadExt + Unpin>(mut read: R, mut on_frame: impl FnMut(&[u8])) -> io::Result<()> {
    let mut buf = Vec::new();
    loop {
        let len = match read.read_u32().await {
            Ok(n) => n as usize,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        if len > MAX_FRAME_LEN {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("frame of {len} bytes"),
            ));
        }
        buf.resize(len, 0);
        read.read_exact(&mut buf).await?;
        on_frame(&buf);
    }
}

/// Query string of `/collab`; `?user=<id>` names the connecting user.
#[derive(Debug, Deserialize)]
pub struct CollabParams {
    pub user: Option<UserId>,
}

pub fn ws_router(shared: Shared) -> Router {
    Router::new().route("/collab", get(ws_upgrade)).with_state(shared)
}

async fn ws_upgrade(
    ws: WebSocketUpgrade,
    Query(params): Query<CollabParams>,
    State(shared): State<Shared>,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| ws_connection(socket, params.user, shared))
}

async fn ws_connection(socket: WebSocket, user: Option<UserId>, shared: Shared) {
    let (mut sink, mut stream) = socket.split();
    let (conn, mut rx) = shared.connect(user);
    info!(conn, ?user, "ws connected");
    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            if sink.send(Message::Binary(frame.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(msg) = stream.next().await {
        match msg {
            Ok(Message::Binary(bytes)) => shared.inbound(conn, &bytes),
            Ok(Message::Close(_)) => break,
            Ok(Message::Text(_)) => warn!(conn, "ignoring text message"),
            Ok(_) => {}
            Err(e) => {
                debug!(conn, "ws read failed: {e}");
                break;
            }
        }
    }
    shared.disconnect(conn);
    writer.abort();
    info!(conn, "ws disconnected");
}

pub fn metrics_router(shared: Shared) -> Router {
    Router::new()
        .route(
            "/metrics",
            get(|State(s): State<Shared>| async move { s.metrics_text() }),
        )
        .with_state(shared)
}

// keep `-`, `_` and `.` readable; everything else, including `/`, is escaped
const FILENAME: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.');

pub fn snapshot_path(dir: &Path, doclet: &str) -> PathBuf {
    let mut name = utf8_percent_encode(doclet, FILENAME).to_string();
    if name.starts_with('.') {
        name.replace_range(..1, "%2E");
    }
    dir.join(format!("{name}.{SNAPSHOT_EXT}"))
}

/// Writes every hub to `dir`, each through a temporary file and a rename so
/// readers never see a partial snapshot.
pub fn save_snapshots(dir: &Path, shared: &Shared) -> io::Result<usize> {
    let snaps: Vec<(String, Vec<u8>)> = shared.with_relay(|relay| {
        relay
            .hubs()
            .map(|hub| (hub.id().as_str().to_owned(), snapshot_hub(hub)))
            .collect()
    });
    std::fs::create_dir_all(dir)?;
    for (id, bytes) in &snaps {
        let path = snapshot_path(dir, id);
        let tmp = path.with_extension(format!("{SNAPSHOT_EXT}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
    }
    Ok(snaps.len())
}

/// Reads every `*.dsn1` in `dir`. Unreadable files are logged and skipped.
pub fn load_snapshots(dir: &Path) -> io::Result<Vec<DocletHub>> {
    let mut hubs = Vec::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(hubs),
        Err(e) => return Err(e),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == SNAPSHOT_EXT))
        .collect();
    paths.sort();
    for path in paths {
        let bytes = std::fs::read(&path)?;
        match restore(&bytes) {
            Ok(hub) => {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let named = percent_decode_str(&stem).decode_utf8_lossy();
                if named != hub.id().as_str() {
                    warn!(path = %path.display(), doclet = %hub.id(), "snapshot name does not match its doclet");
                }
                hubs.push(hub);
            }
            Err(e) => warn!(path = %path.display(), "skipping snapshot: {e}"),
        }
    }
    Ok(hubs)
}
