//! A doclet: one independently collaborated text state plus the cursors of
//! the users currently looking at it.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::crdt::{Anchor, ReplicaId, TextDoc};

/// Cursor entries older than this are considered gone.
pub const DEFAULT_AWARENESS_TTL_MS: u64 = 30_000;

pub const MAX_DOCLET_ID_LEN: usize = 255;

pub type UserId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocletIdError {
    #[error("doclet id is empty")]
    Empty,
    #[error("doclet id is {0} bytes, limit is 255")]
    TooLong(usize),
}

/// UTF-8 doclet identifier, 1 to 255 bytes. Byte equality is identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DocletId(String);

impl DocletId {
    pub fn new(id: impl Into<String>) -> Result<Self, DocletIdError> {
        let id = id.into();
        match id.len() {
            0 => Err(DocletIdError::Empty),
            n if n > MAX_DOCLET_ID_LEN => Err(DocletIdError::TooLong(n)),
            _ => Ok(Self(id)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<&str> for DocletId {
    type Error = DocletIdError;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        DocletId::new(value)
    }
}

impl std::str::FromStr for DocletId {
    type Err = DocletIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocletId::new(s)
    }
}

/// Last known cursor of one user in one doclet. `anchor == None` means the
/// user's cursor is not in this doclet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AwarenessEntry {
    pub user: UserId,
    pub anchor: Option<Anchor>,
    pub last_seen_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AwarenessChange {
    /// The stored anchor differs from the previous one (or the user is new).
    pub changed: bool,
    /// The supplied anchor did not resolve and was stored as absent.
    pub coerced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("awareness ttl must be positive")]
pub struct ZeroTtl;

#[derive(Debug, Clone)]
pub struct Doclet {
    id: DocletId,
    pub doc: TextDoc,
    awareness: BTreeMap<UserId, AwarenessEntry>,
}

impl Doclet {
    pub fn new(id: DocletId, replica: ReplicaId) -> Self {
        Self::with_doc(id, TextDoc::new(replica))
    }

    pub fn with_doc(id: DocletId, doc: TextDoc) -> Self {
        Self {
            id,
            doc,
            awareness: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &DocletId {
        &self.id
    }

    pub fn awareness(&self) -> impl Iterator<Item = &AwarenessEntry> + '_ {
        self.awareness.values()
    }

    pub fn cursor_of(&self, user: UserId) -> Option<&AwarenessEntry> {
        self.awareness.get(&user)
    }

    /// Last-writer-wins upsert of a user's cursor.
    pub fn apply_awareness(&mut self, mut entry: AwarenessEntry) -> AwarenessChange {
        let coerced = match entry.anchor {
            Some(anchor) if !self.doc.resolves(anchor) => {
                entry.anchor = None;
                true
            }
            _ => false,
        };
        let changed = match self.awareness.get(&entry.user) {
            Some(prev) => prev.anchor != entry.anchor,
            None => true,
        };
        self.awareness.insert(entry.user, entry);
        AwarenessChange { changed, coerced }
    }

    /// Refreshes `last_seen_ms` without touching the anchor. Returns false for
    /// unknown users.
    pub fn touch(&mut self, user: UserId, now_ms: u64) -> bool {
        match self.awareness.get_mut(&user) {
            Some(entry) => {
                entry.last_seen_ms = entry.last_seen_ms.max(now_ms);
                true
            }
            None => false,
        }
    }

    /// Moves a user's cursor without changing its freshness.
    pub(crate) fn move_cursor(&mut self, user: UserId, anchor: Anchor) {
        if let Some(entry) = self.awareness.get_mut(&user) {
            entry.anchor = Some(anchor);
        }
    }

    pub fn remove_user(&mut self, user: UserId) -> bool {
        self.awareness.remove(&user).is_some()
    }

    /// Drops entries not refreshed within `ttl_ms`; returns the removed users.
    pub fn expire_awareness(&mut self, now_ms: u64, ttl_ms: u64) -> Result<Vec<UserId>, ZeroTtl> {
        if ttl_ms == 0 {
            return Err(ZeroTtl);
        }
        let stale: Vec<UserId> = self
            .awareness
            .values()
            .filter(|e| now_ms.saturating_sub(e.last_seen_ms) > ttl_ms)
            .map(|e| e.user)
            .collect();
        for user in &stale {
            self.awareness.remove(user);
        }
        Ok(stale)
    }
}
