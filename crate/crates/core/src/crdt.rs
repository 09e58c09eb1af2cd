//! Operation-based sequence CRDT for plain text (RGA family).
//!
//! Every character is an element identified by an [`OpId`]. Inserts name the
//! element they were typed after (their *origin*) and carry a Lamport
//! timestamp; concurrent inserts after the same origin are ordered by
//! descending `(lamport, replica)`. Deletes only set a tombstone flag, so
//! origins and cursor anchors stay resolvable forever.
//!
//! Remote ops may arrive in any order. An op that is not causally ready
//! (missing origin/target, or a gap in its replica's sequence numbers) is
//! parked in a pending buffer and retried after every successful integration.
//!
//! ```
//! use docmux::crdt::TextDoc;
//!
//! let mut a = TextDoc::new(1);
//! let mut b = TextDoc::new(2);
//! let op_a = a.local_insert(0, 'a').unwrap();
//! let op_b = b.local_insert(0, 'b').unwrap();
//! a.integrate(op_b.into()).unwrap();
//! b.integrate(op_a.into()).unwrap();
//! assert_eq!(a.visible_text(), "ba");
//! assert_eq!(a.visible_text(), b.visible_text());
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

/// Replica identifier. Replica `0` is reserved for relay servers, which never
/// generate ops.
pub type ReplicaId = u64;

/// Globally unique identity of an op: the producing replica and its
/// per-replica sequence number (starting at 1, gapless).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpId {
    pub replica: ReplicaId,
    pub seq: u64,
}

impl OpId {
    pub const fn new(replica: ReplicaId, seq: u64) -> Self {
        Self { replica, seq }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.replica, self.seq)
    }
}

/// A stable position in the element list: the start of the document, or
/// "just after" a given insert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Anchor {
    Head,
    After(OpId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertOp {
    pub id: OpId,
    pub lamport: u64,
    pub origin: Anchor,
    pub ch: char,
}

impl InsertOp {
    /// Ordering key for concurrent siblings; greater keys sit closer to the
    /// origin.
    pub fn key(&self) -> (u64, ReplicaId) {
        (self.lamport, self.id.replica)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeleteOp {
    pub id: OpId,
    pub target: OpId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Insert(InsertOp),
    Delete(DeleteOp),
}

impl Op {
    pub fn id(&self) -> OpId {
        match self {
            Op::Insert(op) => op.id,
            Op::Delete(op) => op.id,
        }
    }
}

impl From<InsertOp> for Op {
    fn from(op: InsertOp) -> Self {
        Op::Insert(op)
    }
}

impl From<DeleteOp> for Op {
    fn from(op: DeleteOp) -> Self {
        Op::Delete(op)
    }
}

/// Highest contiguous sequence number integrated per replica. Absent
/// replicas read as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct VersionVector(BTreeMap<ReplicaId, u64>);

impl VersionVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, replica: ReplicaId) -> u64 {
        self.0.get(&replica).copied().unwrap_or(0)
    }

    /// Raises the entry for `replica` to `seq` if it is lower.
    pub fn observe(&mut self, replica: ReplicaId, seq: u64) {
        if seq == 0 {
            return;
        }
        let entry = self.0.entry(replica).or_insert(0);
        if *entry < seq {
            *entry = seq;
        }
    }

    pub fn contains(&self, id: OpId) -> bool {
        id.seq <= self.get(id.replica)
    }

    /// True when every entry of `other` is covered by `self`.
    pub fn dominates(&self, other: &VersionVector) -> bool {
        other.0.iter().all(|(&r, &s)| self.get(r) >= s)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ReplicaId, u64)> + '_ {
        self.0.iter().map(|(&r, &s)| (r, s))
    }
}

impl FromIterator<(ReplicaId, u64)> for VersionVector {
    fn from_iter<I: IntoIterator<Item = (ReplicaId, u64)>>(iter: I) -> Self {
        let mut vv = VersionVector::new();
        for (r, s) in iter {
            vv.observe(r, s);
        }
        vv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integration {
    Applied,
    Buffered,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown op {0}")]
    UnknownOp(OpId),
    #[error("op {0} is a delete and cannot be referenced as an element")]
    NotAnInsert(OpId),
}

#[derive(Debug, Clone)]
struct Element {
    op: InsertOp,
    deleted: bool,
}

/// One replica of a text document.
///
/// A `TextDoc` is a plain single-owner value; callers serialize access.
#[derive(Debug, Clone)]
pub struct TextDoc {
    replica: ReplicaId,
    elements: Vec<Element>,
    pending: Vec<Op>,
    oplog: HashMap<OpId, Op>,
    // integration order; always causally consistent
    history: Vec<OpId>,
    vv: VersionVector,
    clock: u64,
}

impl TextDoc {
    pub fn new(replica: ReplicaId) -> Self {
        Self {
            replica,
            elements: Vec::new(),
            pending: Vec::new(),
            oplog: HashMap::new(),
            history: Vec::new(),
            vv: VersionVector::new(),
            clock: 0,
        }
    }

    pub fn replica(&self) -> ReplicaId {
        self.replica
    }

    pub fn version(&self) -> &VersionVector {
        &self.vv
    }

    pub fn lamport_clock(&self) -> u64 {
        self.clock
    }

    /// Number of visible characters.
    pub fn len(&self) -> usize {
        self.elements.iter().filter(|e| !e.deleted).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of elements including tombstones.
    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn visible_text(&self) -> String {
        self.elements.iter().filter(|e| !e.deleted).map(|e| e.op.ch).collect()
    }

    pub fn op(&self, id: OpId) -> Option<&Op> {
        self.oplog.get(&id)
    }

    /// Number of integrated ops.
    pub fn op_count(&self) -> usize {
        self.history.len()
    }

    /// Integrated ops in integration order.
    pub fn ops(&self) -> impl Iterator<Item = &Op> + '_ {
        self.history.iter().map(|id| &self.oplog[id])
    }

    /// True for HEAD and for integrated inserts.
    pub fn resolves(&self, anchor: Anchor) -> bool {
        match anchor {
            Anchor::Head => true,
            Anchor::After(id) => matches!(self.oplog.get(&id), Some(Op::Insert(_))),
        }
    }

    pub fn local_insert(&mut self, index: usize, ch: char) -> Result<InsertOp, CrdtError> {
        let origin = self.index_to_anchor(index)?;
        let op = InsertOp {
            id: self.next_id(),
            lamport: self.clock + 1,
            origin,
            ch,
        };
        self.apply_insert(&op);
        self.commit(Op::Insert(op.clone()));
        Ok(op)
    }

    pub fn local_delete(&mut self, index: usize) -> Result<DeleteOp, CrdtError> {
        let pos = self
            .visible_position(index)
            .ok_or(CrdtError::IndexOutOfRange { index, len: self.len() })?;
        let op = DeleteOp {
            id: self.next_id(),
            target: self.elements[pos].op.id,
        };
        self.elements[pos].deleted = true;
        self.commit(Op::Delete(op.clone()));
        Ok(op)
    }

    /// Integrates a remote (or replayed) op.
    ///
    /// Fails only when the op references an integrated delete as if it were an
    /// element, which no well-formed producer can emit.
    pub fn integrate(&mut self, op: Op) -> Result<Integration, CrdtError> {
        let id = op.id();
        if self.vv.contains(id) || self.pending.iter().any(|p| p.id() == id) {
            return Ok(Integration::Duplicate);
        }
        if !self.is_ready(&op)? {
            self.pending.push(op);
            return Ok(Integration::Buffered);
        }
        self.apply_remote(op);
        self.drain_pending()?;
        Ok(Integration::Applied)
    }

    /// Every integrated op not covered by `since`, in an order where each
    /// op's dependencies precede it.
    pub fn ops_since(&self, since: &VersionVector) -> Vec<Op> {
        self.history
            .iter()
            .filter(|id| !since.contains(**id))
            .map(|id| self.oplog[id].clone())
            .collect()
    }

    pub fn index_to_anchor(&self, index: usize) -> Result<Anchor, CrdtError> {
        if index == 0 {
            return Ok(Anchor::Head);
        }
        self.visible_position(index - 1)
            .map(|pos| Anchor::After(self.elements[pos].op.id))
            .ok_or(CrdtError::IndexOutOfRange { index, len: self.len() })
    }

    /// Resolves an anchor to a cursor index. A tombstoned anchor lands just
    /// after the nearest visible element before it.
    pub fn anchor_to_index(&self, anchor: Anchor) -> Result<usize, CrdtError> {
        let id = match anchor {
            Anchor::Head => return Ok(0),
            Anchor::After(id) => id,
        };
        match self.oplog.get(&id) {
            Some(Op::Insert(_)) => {}
            Some(Op::Delete(_)) => return Err(CrdtError::NotAnInsert(id)),
            None => return Err(CrdtError::UnknownOp(id)),
        }
        let mut visible = 0;
        for e in &self.elements {
            if !e.deleted {
                visible += 1;
            }
            if e.op.id == id {
                return Ok(visible);
            }
        }
        Err(CrdtError::UnknownOp(id))
    }

    fn next_id(&self) -> OpId {
        OpId::new(self.replica, self.vv.get(self.replica) + 1)
    }

    fn commit(&mut self, op: Op) {
        let id = op.id();
        if let Op::Insert(ins) = &op {
            self.clock = self.clock.max(ins.lamport);
        }
        self.vv.observe(id.replica, id.seq);
        self.history.push(id);
        self.oplog.insert(id, op);
    }

    fn element_ref(&self, id: OpId) -> Result<bool, CrdtError> {
        match self.oplog.get(&id) {
            Some(Op::Insert(_)) => Ok(true),
            Some(Op::Delete(_)) => Err(CrdtError::NotAnInsert(id)),
            None => Ok(false),
        }
    }

    fn is_ready(&self, op: &Op) -> Result<bool, CrdtError> {
        let id = op.id();
        if id.seq != self.vv.get(id.replica) + 1 {
            return Ok(false);
        }
        match op {
            Op::Insert(ins) => match ins.origin {
                Anchor::Head => Ok(true),
                Anchor::After(origin) => self.element_ref(origin),
            },
            Op::Delete(del) => self.element_ref(del.target),
        }
    }

    fn apply_remote(&mut self, op: Op) {
        match &op {
            Op::Insert(ins) => self.apply_insert(ins),
            Op::Delete(del) => {
                let pos = self.position_of(del.target).expect("target checked ready");
                self.elements[pos].deleted = true;
            }
        }
        self.commit(op);
    }

    fn apply_insert(&mut self, op: &InsertOp) {
        let mut pos = match op.origin {
            Anchor::Head => 0,
            Anchor::After(origin) => self.position_of(origin).expect("origin checked ready") + 1,
        };
        let key = op.key();
        while pos < self.elements.len() && self.elements[pos].op.key() > key {
            pos += 1;
        }
        self.elements.insert(
            pos,
            Element {
                op: op.clone(),
                deleted: false,
            },
        );
    }

    fn drain_pending(&mut self) -> Result<(), CrdtError> {
        loop {
            let mut progressed = false;
            let mut i = 0;
            while i < self.pending.len() {
                let id = self.pending[i].id();
                if self.vv.contains(id) {
                    self.pending.swap_remove(i);
                    continue;
                }
                if self.is_ready(&self.pending[i])? {
                    let op = self.pending.swap_remove(i);
                    self.apply_remote(op);
                    progressed = true;
                } else {
                    i += 1;
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    fn position_of(&self, id: OpId) -> Option<usize> {
        self.elements.iter().position(|e| e.op.id == id)
    }

    fn visible_position(&self, index: usize) -> Option<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.deleted)
            .nth(index)
            .map(|(pos, _)| pos)
    }
}
