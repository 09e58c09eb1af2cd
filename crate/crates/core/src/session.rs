//! Client-side communication handler.
//!
//! A [`Session`] sits between a user's doclet replicas and the connection(s)
//! to the relay. It runs one of three strategies:
//!
//! * [`Strategy::Naive`]: one connection, frames carry no doclet id. Incoming
//!   changes are applied to whichever doclet is active, and every incoming
//!   change forces a cursor re-broadcast on the next tick. Peers receive that
//!   re-broadcast as another unattributed change, so the echo never stops.
//! * [`Strategy::PerSocket`]: one connection per doclet.
//! * [`Strategy::Mux`]: one connection, every frame tagged with its doclet id.
//!
//! Sessions are sans-clock: every event method takes the current time in
//! milliseconds (virtual or wall), which is also what the per-second metric
//! windows are keyed on.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::crdt::{Anchor, CrdtError, Integration, Op, ReplicaId, VersionVector};
use crate::doclet::{AwarenessEntry, Doclet, DocletId, UserId};
use crate::wire::{decode_frame, encode_frame, Frame, FrameKind, Payload, WireError};

/// Session replica ids pack the user id above a 16-bit doclet slot.
pub const SLOT_BITS: u32 = 16;
pub const MAX_USER_ID: UserId = (1 << (64 - SLOT_BITS)) - 1;
pub const MAX_DOCLETS: usize = (1 << SLOT_BITS) - 1;

/// Replica id used by `user` for the doclet at position `slot` of its
/// subscription list. Never 0, which is reserved for relays.
pub fn replica_for(user: UserId, slot: usize) -> ReplicaId {
    (user << SLOT_BITS) | (slot as u64 + 1)
}

/// Inverse of [`replica_for`] for the user part.
pub fn user_of_replica(replica: ReplicaId) -> UserId {
    replica >> SLOT_BITS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Naive,
    PerSocket,
    Mux,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::PerSocket => "per-socket",
            Strategy::Mux => "mux",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "per-socket" => Ok(Strategy::PerSocket),
            "mux" => Ok(Strategy::Mux),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    pub tick_ms: u64,
    pub keepalive_ms: u64,
    /// Upper bound on cursor re-broadcasts a naive session emits per tick.
    pub naive_resend_cap: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_ms: 25,
            keepalive_ms: 1000,
            naive_resend_cap: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

/// A message-oriented, ordered connection to the relay.
pub trait Transport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;
}

/// What a transport is opened for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportSlot<'a> {
    Shared,
    Doclet(&'a DocletId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("a session needs at least one doclet")]
    NoDoclets,
    #[error("doclet {0} listed twice")]
    DuplicateDoclet(DocletId),
    #[error("at most {MAX_DOCLETS} doclets per session")]
    TooManyDoclets,
    #[error("user id {0} exceeds {MAX_USER_ID}")]
    UserTooLarge(UserId),
    #[error("doclet {0} is not subscribed")]
    UnknownDoclet(DocletId),
    #[error("doclet {0} is not the active doclet")]
    NotActive(DocletId),
    #[error(transparent)]
    Crdt(#[from] CrdtError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edit {
    Insert { index: usize, ch: char },
    Delete { index: usize },
}

/// Per-doclet tracking state: the local replica plus what was last observed
/// and last announced for it.
#[derive(Debug, Clone)]
pub struct TrackingRecord {
    pub doclet: Doclet,
    pub previous_state: VersionVector,
    pub previous_cursor: Option<Anchor>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsCounters {
    pub frames_sent: u64,
    pub frames_received: u64,
    pub connections_opened: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub routing_errors: u64,
    pub decode_errors: u64,
    /// `(second, frames sent + received during that second)`, ascending.
    pub per_second: Vec<(u64, u64)>,
}

impl MetricsCounters {
    /// Frame count for second `sec`, 0 if nothing happened.
    pub fn window(&self, sec: u64) -> u64 {
        self.per_second.iter().find(|(s, _)| *s == sec).map_or(0, |(_, n)| *n)
    }
}

#[derive(Debug, Default)]
struct Meter {
    counters: MetricsCounters,
    windows: BTreeMap<u64, u64>,
}

impl Meter {
    fn sent(&mut self, bytes: usize, now_ms: u64) {
        self.counters.frames_sent += 1;
        self.counters.bytes_sent += bytes as u64;
        *self.windows.entry(now_ms / 1000).or_default() += 1;
    }

    fn received(&mut self, bytes: usize, now_ms: u64) {
        self.counters.frames_received += 1;
        self.counters.bytes_received += bytes as u64;
        *self.windows.entry(now_ms / 1000).or_default() += 1;
    }

    fn snapshot(&self) -> MetricsCounters {
        MetricsCounters {
            per_second: self.windows.iter().map(|(&s, &n)| (s, n)).collect(),
            ..self.counters.clone()
        }
    }
}

/// Outcome of handling one inbound message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Received {
    Applied {
        doclet: DocletId,
        kind: FrameKind,
        /// Some op could not be integrated yet and was buffered.
        misfit: bool,
    },
    Unrouted(Option<DocletId>),
    Undecodable(WireError),
}

pub struct Session {
    strategy: Strategy,
    user: UserId,
    config: SessionConfig,
    records: Vec<TrackingRecord>,
    slots: HashMap<DocletId, usize>,
    transports: Vec<Box<dyn Transport>>,
    active: usize,
    meter: Meter,
    naive_pending: u64,
    keepalive_epoch: u64,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("strategy", &self.strategy)
            .field("user", &self.user)
            .field("doclets", &self.records.len())
            .field("active", &self.active)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Opens the transports required by `strategy` and sends SUBSCRIBE and
    /// SYNC_REQ for every doclet. The first doclet starts active.
    pub fn open<F>(
        strategy: Strategy,
        user: UserId,
        doclets: Vec<DocletId>,
        config: SessionConfig,
        now_ms: u64,
        mut open_transport: F,
    ) -> Result<Self, SessionError>
    where
        F: FnMut(TransportSlot<'_>) -> Result<Box<dyn Transport>, TransportError>,
    {
        if doclets.is_empty() {
            return Err(SessionError::NoDoclets);
        }
        if doclets.len() > MAX_DOCLETS {
            return Err(SessionError::TooManyDoclets);
        }
        if user > MAX_USER_ID {
            return Err(SessionError::UserTooLarge(user));
        }
        let mut slots = HashMap::with_capacity(doclets.len());
        let mut records = Vec::with_capacity(doclets.len());
        for (slot, id) in doclets.into_iter().enumerate() {
            if slots.insert(id.clone(), slot).is_some() {
                return Err(SessionError::DuplicateDoclet(id));
            }
            records.push(TrackingRecord {
                doclet: Doclet::new(id, replica_for(user, slot)),
                previous_state: VersionVector::new(),
                previous_cursor: None,
            });
        }

        let mut meter = Meter::default();
        let mut transports = Vec::new();
        match strategy {
            Strategy::Naive | Strategy::Mux => {
                transports.push(open_transport(TransportSlot::Shared)?);
            }
            Strategy::PerSocket => {
                for record in &records {
                    transports.push(open_transport(TransportSlot::Doclet(record.doclet.id()))?);
                }
            }
        }
        meter.counters.connections_opened = transports.len() as u64;

        let mut session = Self {
            strategy,
            user,
            config,
            records,
            slots,
            transports,
            active: 0,
            meter,
            naive_pending: 0,
            keepalive_epoch: now_ms / config.keepalive_ms.max(1),
        };
        for slot in 0..session.records.len() {
            session.send(slot, Payload::Subscribe, now_ms)?;
            let vv = session.records[slot].doclet.doc.version().clone();
            session.send(slot, Payload::SyncReq(vv), now_ms)?;
        }
        Ok(session)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn active_doclet(&self) -> &DocletId {
        self.records[self.active].doclet.id()
    }

    pub fn doclet_ids(&self) -> impl Iterator<Item = &DocletId> + '_ {
        self.records.iter().map(|r| r.doclet.id())
    }

    pub fn record(&self, doclet: &DocletId) -> Option<&TrackingRecord> {
        self.slots.get(doclet).map(|&slot| &self.records[slot])
    }

    pub fn doclet(&self, doclet: &DocletId) -> Option<&Doclet> {
        self.record(doclet).map(|r| &r.doclet)
    }

    pub fn transport_count(&self) -> usize {
        self.transports.len()
    }

    /// Queued cursor re-broadcasts (naive sessions only).
    pub fn naive_resend_pending(&self) -> u64 {
        self.naive_pending
    }

    pub fn snapshot_metrics(&self) -> MetricsCounters {
        self.meter.snapshot()
    }

    /// The local cursor in the active doclet as an index, 0 when unset.
    pub fn cursor_index(&self) -> usize {
        let record = &self.records[self.active];
        record
            .previous_cursor
            .and_then(|a| record.doclet.doc.anchor_to_index(a).ok())
            .unwrap_or(0)
    }

    /// Applies a keystroke to the active doclet and sends exactly one UPDATE.
    /// The cursor moves locally; no AWARENESS frame is sent for it.
    pub fn on_local_edit(&mut self, doclet: &DocletId, edit: Edit, now_ms: u64) -> Result<Op, SessionError> {
        let slot = self.slot(doclet)?;
        if slot != self.active {
            return Err(SessionError::NotActive(doclet.clone()));
        }
        let doc = &mut self.records[slot].doclet.doc;
        let (op, cursor): (Op, Anchor) = match edit {
            Edit::Insert { index, ch } => {
                let op = doc.local_insert(index, ch)?;
                let cursor = Anchor::After(op.id);
                (op.into(), cursor)
            }
            Edit::Delete { index } => {
                let op = doc.local_delete(index)?;
                (op.into(), doc.index_to_anchor(index)?)
            }
        };
        let record = &mut self.records[slot];
        record.previous_state = record.doclet.doc.version().clone();
        record.previous_cursor = Some(cursor);
        self.send(slot, Payload::Update(vec![op.clone()]), now_ms)?;
        Ok(op)
    }

    /// Moves the local cursor, activating `doclet`. Returns the number of
    /// frames sent: 0 when neither the position nor the active doclet changed.
    pub fn on_local_cursor(&mut self, doclet: &DocletId, index: usize, now_ms: u64) -> Result<usize, SessionError> {
        let slot = self.slot(doclet)?;
        let anchor = self.records[slot].doclet.doc.index_to_anchor(index)?;
        let was_active = self.active == slot;
        self.active = slot;
        if was_active && self.records[slot].previous_cursor == Some(anchor) {
            return Ok(0);
        }
        self.records[slot].previous_cursor = Some(anchor);
        let payload = Payload::Awareness {
            user: self.user,
            anchor: Some(anchor),
        };
        self.send(slot, payload, now_ms)?;
        Ok(1)
    }

    /// Handles one inbound message from transport `transport`.
    pub fn on_frame(&mut self, transport: usize, bytes: &[u8], now_ms: u64) -> Received {
        self.meter.received(bytes.len(), now_ms);
        let frame = match decode_frame(bytes) {
            Ok(frame) => frame,
            Err(e) => {
                self.meter.counters.decode_errors += 1;
                return Received::Undecodable(e);
            }
        };
        let slot = match self.strategy {
            Strategy::Naive => Some(self.active),
            Strategy::PerSocket => (transport < self.records.len()).then_some(transport),
            Strategy::Mux => frame.doclet.as_ref().and_then(|id| self.slots.get(id).copied()),
        };
        let Some(slot) = slot else {
            self.meter.counters.routing_errors += 1;
            return Received::Unrouted(frame.doclet);
        };
        let kind = frame.kind();
        let misfit = self.apply(slot, frame.payload, now_ms);
        if self.strategy == Strategy::Naive && matches!(kind, FrameKind::Update | FrameKind::Awareness) {
            // The untagged handler cannot tell which view this belongs to, so
            // the active view's cursors get re-applied and re-announced.
            self.naive_pending += 1;
        }
        Received::Applied {
            doclet: self.records[slot].doclet.id().clone(),
            kind,
            misfit,
        }
    }

    /// Periodic driver, called every `tick_ms`. Sends keepalives on each
    /// `keepalive_ms` boundary and, for naive sessions, queued cursor
    /// re-broadcasts. Returns the number of frames sent.
    pub fn tick(&mut self, now_ms: u64) -> Result<usize, SessionError> {
        let mut sent = 0;
        let epoch = now_ms / self.config.keepalive_ms.max(1);
        if epoch > self.keepalive_epoch {
            self.keepalive_epoch = epoch;
            match self.strategy {
                Strategy::Naive | Strategy::Mux => {
                    self.send(self.active, Payload::Keepalive, now_ms)?;
                    sent += 1;
                }
                Strategy::PerSocket => {
                    for slot in 0..self.records.len() {
                        self.send(slot, Payload::Keepalive, now_ms)?;
                        sent += 1;
                    }
                }
            }
        }
        if self.strategy == Strategy::Naive && self.naive_pending > 0 {
            let burst = self.naive_pending.min(u64::from(self.config.naive_resend_cap));
            self.naive_pending = 0;
            let anchor = self.records[self.active].previous_cursor;
            for _ in 0..burst {
                let payload = Payload::Awareness {
                    user: self.user,
                    anchor,
                };
                self.send(self.active, payload, now_ms)?;
                sent += 1;
            }
        }
        Ok(sent)
    }

    fn slot(&self, doclet: &DocletId) -> Result<usize, SessionError> {
        self.slots
            .get(doclet)
            .copied()
            .ok_or_else(|| SessionError::UnknownDoclet(doclet.clone()))
    }

    fn send(&mut self, slot: usize, payload: Payload, now_ms: u64) -> Result<(), SessionError> {
        let (tag, transport) = match self.strategy {
            Strategy::Naive => (None, 0),
            Strategy::Mux => (Some(self.records[slot].doclet.id().clone()), 0),
            Strategy::PerSocket => (Some(self.records[slot].doclet.id().clone()), slot),
        };
        let bytes = encode_frame(&Frame::new(tag, payload))?;
        self.transports[transport].send(&bytes)?;
        self.meter.sent(bytes.len(), now_ms);
        Ok(())
    }

    fn apply(&mut self, slot: usize, payload: Payload, now_ms: u64) -> bool {
        let record = &mut self.records[slot];
        let mut misfit = false;
        match payload {
            Payload::Update(ops) => {
                for op in ops {
                    let authored = match &op {
                        Op::Insert(ins) => Some((user_of_replica(ins.id.replica), ins.origin, ins.id)),
                        Op::Delete(_) => None,
                    };
                    match record.doclet.doc.integrate(op) {
                        Ok(Integration::Applied) => {
                            // the author typed at their cursor: carry it along
                            if let Some((author, origin, id)) = authored {
                                if author != self.user
                                    && record.doclet.cursor_of(author).and_then(|e| e.anchor) == Some(origin)
                                {
                                    record.doclet.move_cursor(author, Anchor::After(id));
                                }
                            }
                        }
                        Ok(Integration::Duplicate) => {}
                        Ok(Integration::Buffered) | Err(_) => misfit = true,
                    }
                }
            }
            Payload::Awareness { user, anchor } => {
                record.doclet.apply_awareness(AwarenessEntry {
                    user,
                    anchor,
                    last_seen_ms: now_ms,
                });
            }
            Payload::Subscribe | Payload::SyncReq(_) | Payload::Unsubscribe | Payload::Keepalive => {}
        }
        record.previous_state = record.doclet.doc.version().clone();
        misfit
    }
}
