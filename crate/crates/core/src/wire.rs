//! Binary frame codec.
//!
//! Every frame is carried in exactly one transport message:
//!
//! ```text
//! [kind: u8][doclet-id length: varint][doclet-id: UTF-8][payload]
//! ```
//!
//! A zero-length doclet id marks an untagged frame. Integers inside payloads
//! are unsigned LEB128 varints. Decoding is strict: unknown kinds or tags,
//! truncation, invalid UTF-8 and trailing bytes are all errors.

use thiserror::Error;

use crate::crdt::{Anchor, DeleteOp, InsertOp, Op, OpId, VersionVector};
use crate::doclet::{DocletId, UserId, MAX_DOCLET_ID_LEN};

/// Longest valid varint encoding of a u64.
pub const MAX_VARINT_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input")]
    Truncated,
    #[error("varint overflows 64 bits")]
    VarintOverflow,
    #[error("unknown frame kind {0:#04x}")]
    UnknownKind(u8),
    #[error("unknown {what} tag {tag}")]
    UnknownTag { what: &'static str, tag: u8 },
    #[error("doclet id is {0} bytes, limit is 255")]
    DocletIdTooLong(usize),
    #[error("doclet id is not valid UTF-8")]
    InvalidUtf8,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid codepoint {0:#x}")]
    InvalidCodepoint(u64),
    #[error("sequence numbers start at 1")]
    ZeroSeq,
    #[error("length {0} does not fit in memory")]
    LengthOverflow(u64),
}

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Subscribe = 0x01,
    SyncReq = 0x02,
    Update = 0x03,
    Awareness = 0x04,
    Unsubscribe = 0x05,
    Keepalive = 0x06,
}

impl TryFrom<u8> for FrameKind {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            0x01 => FrameKind::Subscribe,
            0x02 => FrameKind::SyncReq,
            0x03 => FrameKind::Update,
            0x04 => FrameKind::Awareness,
            0x05 => FrameKind::Unsubscribe,
            0x06 => FrameKind::Keepalive,
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Subscribe,
    SyncReq(VersionVector),
    Update(Vec<Op>),
    Awareness { user: UserId, anchor: Option<Anchor> },
    Unsubscribe,
    Keepalive,
}

impl Payload {
    pub fn kind(&self) -> FrameKind {
        match self {
            Payload::Subscribe => FrameKind::Subscribe,
            Payload::SyncReq(_) => FrameKind::SyncReq,
            Payload::Update(_) => FrameKind::Update,
            Payload::Awareness { .. } => FrameKind::Awareness,
            Payload::Unsubscribe => FrameKind::Unsubscribe,
            Payload::Keepalive => FrameKind::Keepalive,
        }
    }
}

/// One protocol message. `doclet == None` is the untagged form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub doclet: Option<DocletId>,
    pub payload: Payload,
}

impl Frame {
    pub fn new(doclet: Option<DocletId>, payload: Payload) -> Self {
        Self { doclet, payload }
    }

    pub fn kind(&self) -> FrameKind {
        self.payload.kind()
    }
}

pub fn encode_varint(n: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAX_VARINT_LEN);
    put_varint(&mut out, n);
    out
}

pub fn put_varint(out: &mut Vec<u8>, mut n: u64) {
    while n >= 0x80 {
        out.push((n as u8 & 0x7f) | 0x80);
        n >>= 7;
    }
    out.push(n as u8);
}

/// Returns the value and the number of bytes consumed.
pub fn decode_varint(bytes: &[u8]) -> Result<(u64, usize), WireError> {
    let mut value = 0u64;
    for (i, &b) in bytes.iter().enumerate() {
        if i == MAX_VARINT_LEN - 1 && b > 0x01 {
            return Err(WireError::VarintOverflow);
        }
        value |= u64::from(b & 0x7f) << (7 * i);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(WireError::Truncated)
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let id = frame.doclet.as_ref().map_or("", DocletId::as_str);
    if id.len() > MAX_DOCLET_ID_LEN {
        return Err(WireError::DocletIdTooLong(id.len()));
    }
    let mut out = Vec::with_capacity(2 + id.len() + 16);
    out.push(frame.kind() as u8);
    put_varint(&mut out, id.len() as u64);
    out.extend_from_slice(id.as_bytes());
    match &frame.payload {
        Payload::Subscribe | Payload::Unsubscribe | Payload::Keepalive => {}
        Payload::SyncReq(vv) => {
            put_varint(&mut out, vv.len() as u64);
            for (replica, seq) in vv.iter() {
                put_varint(&mut out, replica);
                put_varint(&mut out, seq);
            }
        }
        Payload::Update(ops) => put_ops(&mut out, ops),
        Payload::Awareness { user, anchor } => {
            put_varint(&mut out, *user);
            match anchor {
                None => out.push(0),
                Some(Anchor::Head) => out.push(1),
                Some(Anchor::After(id)) => {
                    out.push(2);
                    put_op_id(&mut out, *id);
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    let mut r = Reader::new(bytes);
    let kind = FrameKind::try_from(r.byte()?)?;
    let id_len = r.len()?;
    if id_len > MAX_DOCLET_ID_LEN {
        return Err(WireError::DocletIdTooLong(id_len));
    }
    let id_bytes = r.take(id_len)?;
    let doclet = if id_len == 0 {
        None
    } else {
        let s = std::str::from_utf8(id_bytes).map_err(|_| WireError::InvalidUtf8)?;
        Some(DocletId::new(s).expect("length checked above"))
    };
    let payload = match kind {
        FrameKind::Subscribe => Payload::Subscribe,
        FrameKind::Unsubscribe => Payload::Unsubscribe,
        FrameKind::Keepalive => Payload::Keepalive,
        FrameKind::SyncReq => {
            let n = r.len()?;
            let mut vv = VersionVector::new();
            for _ in 0..n {
                let replica = r.varint()?;
                let seq = r.varint()?;
                vv.observe(replica, seq);
            }
            Payload::SyncReq(vv)
        }
        FrameKind::Update => Payload::Update(r.ops()?),
        FrameKind::Awareness => {
            let user = r.varint()?;
            let anchor = match r.byte()? {
                0 => None,
                1 => Some(Anchor::Head),
                2 => Some(Anchor::After(r.op_id()?)),
                tag => {
                    return Err(WireError::UnknownTag {
                        what: "awareness anchor",
                        tag,
                    })
                }
            };
            Payload::Awareness { user, anchor }
        }
    };
    r.finish()?;
    Ok(Frame { doclet, payload })
}

/// Appends `varint count` followed by each op, the layout shared by UPDATE
/// payloads and snapshot files.
pub fn put_ops(out: &mut Vec<u8>, ops: &[Op]) {
    put_varint(out, ops.len() as u64);
    for op in ops {
        put_op(out, op);
    }
}

fn put_op_id(out: &mut Vec<u8>, id: OpId) {
    put_varint(out, id.replica);
    put_varint(out, id.seq);
}

fn put_op(out: &mut Vec<u8>, op: &Op) {
    match op {
        Op::Insert(ins) => {
            out.push(0);
            put_op_id(out, ins.id);
            put_varint(out, ins.lamport);
            match ins.origin {
                Anchor::Head => out.push(0),
                Anchor::After(id) => {
                    out.push(1);
                    put_op_id(out, id);
                }
            }
            put_varint(out, u64::from(u32::from(ins.ch)));
        }
        Op::Delete(del) => {
            out.push(1);
            put_op_id(out, del.id);
            put_op_id(out, del.target);
        }
    }
}

/// Cursor over a byte slice; all reads fail with `Truncated` at the end.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn byte(&mut self) -> Result<u8, WireError> {
        let b = *self.buf.get(self.pos).ok_or(WireError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub fn varint(&mut self) -> Result<u64, WireError> {
        let (n, used) = decode_varint(&self.buf[self.pos..])?;
        self.pos += used;
        Ok(n)
    }

    fn len(&mut self) -> Result<usize, WireError> {
        let n = self.varint()?;
        usize::try_from(n).map_err(|_| WireError::LengthOverflow(n))
    }

    fn op_id(&mut self) -> Result<OpId, WireError> {
        let replica = self.varint()?;
        let seq = self.varint()?;
        if seq == 0 {
            return Err(WireError::ZeroSeq);
        }
        Ok(OpId::new(replica, seq))
    }

    pub fn ops(&mut self) -> Result<Vec<Op>, WireError> {
        let n = self.len()?;
        // each op takes at least 5 bytes; don't trust n for preallocation
        let mut ops = Vec::with_capacity(n.min(self.remaining() / 5));
        for _ in 0..n {
            ops.push(self.op()?);
        }
        Ok(ops)
    }

    fn op(&mut self) -> Result<Op, WireError> {
        match self.byte()? {
            0 => {
                let id = self.op_id()?;
                let lamport = self.varint()?;
                let origin = match self.byte()? {
                    0 => Anchor::Head,
                    1 => Anchor::After(self.op_id()?),
                    tag => return Err(WireError::UnknownTag { what: "anchor", tag }),
                };
                let cp = self.varint()?;
                let ch = u32::try_from(cp)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or(WireError::InvalidCodepoint(cp))?;
                Ok(Op::Insert(InsertOp {
                    id,
                    lamport,
                    origin,
                    ch,
                }))
            }
            1 => Ok(Op::Delete(DeleteOp {
                id: self.op_id()?,
                target: self.op_id()?,
            })),
            tag => Err(WireError::UnknownTag { what: "op", tag }),
        }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}

/// Prefixes a frame with its 4-byte big-endian length, the TCP carrier format.
pub fn length_prefixed(frame: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + frame.len());
    out.extend_from_slice(&(frame.len() as u32).to_be_bytes());
    out.extend_from_slice(frame);
    out
}
