//! Relay server core, independent of any socket library.
//!
//! The relay terminates one connection per client transport, keeps an
//! authoritative replica per doclet (a [`DocletHub`]) and forwards UPDATE and
//! AWARENESS frames byte-for-byte to the other subscribers of the same
//! doclet. Untagged frames go to the default doclet.
//!
//! [`Relay`] is a plain value; a network front end wraps it in a lock so all
//! mutations of a hub are serialized.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::crdt::{Integration, Op, OpId, TextDoc};
use crate::doclet::{AwarenessEntry, Doclet, DocletId, UserId, DEFAULT_AWARENESS_TTL_MS};
use crate::wire::{decode_frame, encode_frame, put_ops, put_varint, Frame, Payload, Reader, WireError};

pub type ConnId = u64;

/// Replica id of every hub replica; relays never author ops.
pub const SERVER_REPLICA: u64 = 0;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"DSN1";

/// Hub name used for untagged frames when nothing else is configured and no
/// hub exists yet.
pub const FALLBACK_DOCLET: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayConfig {
    /// Target of untagged frames. `None` means the first hub created.
    pub default_doclet: Option<DocletId>,
    pub awareness_ttl_ms: u64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            default_doclet: None,
            awareness_ttl_ms: DEFAULT_AWARENESS_TTL_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HubMetrics {
    pub frames_in: u64,
    pub frames_out: u64,
    /// Ops in UPDATE frames that referenced a delete as an element.
    pub rejected_ops: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelayMetrics {
    pub frames_in: u64,
    pub frames_out: u64,
    pub routing_errors: u64,
    pub decode_errors: u64,
    /// Ops integrated into a hub after first appearing in a different hub.
    pub contamination: u64,
}

#[derive(Debug, Clone)]
pub struct DocletHub {
    pub doclet: Doclet,
    subscribers: BTreeSet<ConnId>,
    pub metrics: HubMetrics,
}

impl DocletHub {
    pub fn new(id: DocletId) -> Self {
        Self {
            doclet: Doclet::new(id, SERVER_REPLICA),
            subscribers: BTreeSet::new(),
            metrics: HubMetrics::default(),
        }
    }

    pub fn id(&self) -> &DocletId {
        self.doclet.id()
    }

    pub fn subscribers(&self) -> impl Iterator<Item = ConnId> + '_ {
        self.subscribers.iter().copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConnectionRecord {
    /// Known from the handshake, or learned from the first AWARENESS frame.
    pub user: Option<UserId>,
    pub subscribed: BTreeSet<DocletId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: ConnId,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("bad snapshot magic")]
    BadMagic,
    #[error("snapshot is malformed: {0}")]
    Malformed(#[from] WireError),
    #[error("snapshot doclet id is invalid")]
    BadDocletId,
    #[error("snapshot ops do not form a complete history ({0} left pending)")]
    Incomplete(usize),
    #[error("snapshot op {0} references a delete")]
    BadReference(OpId),
    #[error("no hub for doclet {0}")]
    UnknownDoclet(DocletId),
}

#[derive(Debug, Default)]
pub struct Relay {
    config: RelayConfig,
    hubs: BTreeMap<DocletId, DocletHub>,
    first_hub: Option<DocletId>,
    conns: HashMap<ConnId, ConnectionRecord>,
    next_conn: ConnId,
    op_home: HashMap<OpId, DocletId>,
    metrics: RelayMetrics,
}

impl Relay {
    pub fn new(config: RelayConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &RelayConfig {
        &self.config
    }

    pub fn metrics(&self) -> RelayMetrics {
        self.metrics
    }

    pub fn hub(&self, id: &DocletId) -> Option<&DocletHub> {
        self.hubs.get(id)
    }

    pub fn hubs(&self) -> impl Iterator<Item = &DocletHub> + '_ {
        self.hubs.values()
    }

    pub fn connection(&self, conn: ConnId) -> Option<&ConnectionRecord> {
        self.conns.get(&conn)
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    /// Registers a new connection. Ids are never reused.
    pub fn handle_connect(&mut self, user: Option<UserId>) -> ConnId {
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            ConnectionRecord {
                user,
                subscribed: BTreeSet::new(),
            },
        );
        id
    }

    pub fn handle_disconnect(&mut self, conn: ConnId) {
        if let Some(record) = self.conns.remove(&conn) {
            for id in record.subscribed {
                if let Some(hub) = self.hubs.get_mut(&id) {
                    hub.subscribers.remove(&conn);
                }
            }
        }
    }

    /// Adds a hub (e.g. one restored from a snapshot), replacing any hub with
    /// the same id.
    pub fn insert_hub(&mut self, hub: DocletHub) {
        let id = hub.id().clone();
        for op in hub.doclet.doc.ops() {
            self.op_home.entry(op.id()).or_insert_with(|| id.clone());
        }
        if self.first_hub.is_none() {
            self.first_hub = Some(id.clone());
        }
        self.hubs.insert(id, hub);
    }

    /// Processes one inbound frame and returns the frames to deliver.
    pub fn handle_frame(&mut self, conn: ConnId, bytes: &[u8], now_ms: u64) -> Vec<Outbound> {
        self.metrics.frames_in += 1;
        if !self.conns.contains_key(&conn) {
            self.metrics.routing_errors += 1;
            return Vec::new();
        }
        let frame = match decode_frame(bytes) {
            Ok(frame) => frame,
            Err(_) => {
                self.metrics.decode_errors += 1;
                return Vec::new();
            }
        };
        let target = match &frame.doclet {
            Some(id) => Some(id.clone()),
            None => self.default_target(matches!(frame.payload, Payload::Subscribe)),
        };
        let Some(target) = target else {
            self.metrics.routing_errors += 1;
            return Vec::new();
        };
        if matches!(frame.payload, Payload::Subscribe) {
            self.ensure_hub(&target);
        }
        let Some(hub) = self.hubs.get_mut(&target) else {
            self.metrics.routing_errors += 1;
            return Vec::new();
        };
        hub.metrics.frames_in += 1;

        let conn_record = self.conns.get_mut(&conn).expect("checked above");
        let mut out = Vec::new();
        let Frame { doclet: tag, payload } = frame;
        match payload {
            Payload::Subscribe => {
                hub.subscribers.insert(conn);
                conn_record.subscribed.insert(target.clone());
            }
            Payload::Unsubscribe => {
                hub.subscribers.remove(&conn);
                conn_record.subscribed.remove(&target);
            }
            Payload::SyncReq(vv) => {
                let ops = hub.doclet.doc.ops_since(&vv);
                if !ops.is_empty() {
                    let reply = encode_frame(&Frame::new(tag, Payload::Update(ops))).expect("tag came off the wire");
                    out.push(Outbound { to: conn, bytes: reply });
                }
            }
            Payload::Update(ops) => {
                for op in ops {
                    let id = op.id();
                    match hub.doclet.doc.integrate(op) {
                        Ok(Integration::Applied | Integration::Buffered) => {
                            let home = self.op_home.entry(id).or_insert_with(|| target.clone());
                            if *home != target {
                                self.metrics.contamination += 1;
                            }
                        }
                        Ok(Integration::Duplicate) => {}
                        Err(_) => hub.metrics.rejected_ops += 1,
                    }
                }
                broadcast(hub, conn, bytes, &mut out);
            }
            Payload::Awareness { user, anchor } => {
                conn_record.user.get_or_insert(user);
                hub.doclet.apply_awareness(AwarenessEntry {
                    user,
                    anchor,
                    last_seen_ms: now_ms,
                });
                broadcast(hub, conn, bytes, &mut out);
            }
            Payload::Keepalive => {
                if let Some(user) = conn_record.user {
                    hub.doclet.touch(user, now_ms);
                }
            }
        }
        hub.metrics.frames_out += out.len() as u64;
        self.metrics.frames_out += out.len() as u64;
        out
    }

    /// Drops stale cursors from every hub.
    pub fn expire_awareness(&mut self, now_ms: u64) -> Vec<(DocletId, UserId)> {
        let ttl = self.config.awareness_ttl_ms.max(1);
        let mut removed = Vec::new();
        for (id, hub) in &mut self.hubs {
            for user in hub.doclet.expire_awareness(now_ms, ttl).expect("ttl is positive") {
                removed.push((id.clone(), user));
            }
        }
        removed
    }

    pub fn snapshot(&self, id: &DocletId) -> Result<Vec<u8>, SnapshotError> {
        self.hubs
            .get(id)
            .map(snapshot_hub)
            .ok_or_else(|| SnapshotError::UnknownDoclet(id.clone()))
    }

    /// Plain-text counters, one `name value` pair per line.
    pub fn metrics_text(&self) -> String {
        let m = self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "frames_in {}", m.frames_in);
        let _ = writeln!(s, "frames_out {}", m.frames_out);
        let _ = writeln!(s, "routing_errors {}", m.routing_errors);
        let _ = writeln!(s, "decode_errors {}", m.decode_errors);
        let _ = writeln!(s, "contamination {}", m.contamination);
        let _ = writeln!(s, "connections {}", self.conns.len());
        for (id, hub) in &self.hubs {
            let h = hub.metrics;
            let label = id.as_str().replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(s, "frames_in{{doclet=\"{label}\"}} {}", h.frames_in);
            let _ = writeln!(s, "frames_out{{doclet=\"{label}\"}} {}", h.frames_out);
            let _ = writeln!(s, "rejected_ops{{doclet=\"{label}\"}} {}", h.rejected_ops);
        }
        s
    }

    fn default_target(&mut self, create: bool) -> Option<DocletId> {
        if let Some(id) = &self.config.default_doclet {
            return Some(id.clone());
        }
        if let Some(id) = &self.first_hub {
            return Some(id.clone());
        }
        create.then(|| DocletId::new(FALLBACK_DOCLET).expect("valid literal"))
    }

    fn ensure_hub(&mut self, id: &DocletId) {
        if !self.hubs.contains_key(id) {
            self.insert_hub(DocletHub::new(id.clone()));
        }
    }
}

fn broadcast(hub: &DocletHub, from: ConnId, bytes: &[u8], out: &mut Vec<Outbound>) {
    out.extend(hub.subscribers.iter().filter(|&&c| c != from).map(|&to| Outbound {
        to,
        bytes: bytes.to_vec(),
    }));
}

/// Serializes a hub's op history: magic, doclet id, then all inserts in
/// ascending `(lamport, replica)` order followed by all deletes in id order.
pub fn snapshot_hub(hub: &DocletHub) -> Vec<u8> {
    let doc = &hub.doclet.doc;
    let mut inserts = Vec::new();
    let mut deletes = Vec::new();
    for op in doc.ops() {
        match op {
            Op::Insert(ins) => inserts.push(ins),
            Op::Delete(del) => deletes.push(del),
        }
    }
    inserts.sort_by_key(|ins| (ins.key(), ins.id.seq));
    deletes.sort_by_key(|del| del.id);
    let ops: Vec<Op> = inserts
        .into_iter()
        .map(|i| Op::Insert(i.clone()))
        .chain(deletes.into_iter().map(|d| Op::Delete(d.clone())))
        .collect();

    let id = hub.id().as_str().as_bytes();
    let mut out = Vec::with_capacity(8 + id.len() + ops.len() * 8);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    put_varint(&mut out, id.len() as u64);
    out.extend_from_slice(id);
    put_ops(&mut out, &ops);
    out
}

/// Rebuilds a hub from [`snapshot_hub`] output.
pub fn restore(bytes: &[u8]) -> Result<DocletHub, SnapshotError> {
    if bytes.len() < 4 || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let mut r = Reader::new(&bytes[4..]);
    let len = r.varint()?;
    let len = usize::try_from(len).map_err(|_| WireError::LengthOverflow(len))?;
    let id = std::str::from_utf8(r.take(len)?).map_err(|_| SnapshotError::BadDocletId)?;
    let id = DocletId::new(id).map_err(|_| SnapshotError::BadDocletId)?;
    let ops = r.ops()?;
    r.finish()?;

    let mut doc = TextDoc::new(SERVER_REPLICA);
    for op in ops {
        let op_id = op.id();
        doc.integrate(op).map_err(|_| SnapshotError::BadReference(op_id))?;
    }
    if doc.pending_count() > 0 {
        return Err(SnapshotError::Incomplete(doc.pending_count()));
    }
    Ok(DocletHub {
        doclet: Doclet::with_doc(id, doc),
        subscribers: BTreeSet::new(),
        metrics: HubMetrics::default(),
    })
}
