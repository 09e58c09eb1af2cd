//! Multiplexed sync for many small collaborative text documents.
//!
//! A page hosts several independent rich-text regions ("doclets"). Each one is
//! a sequence CRDT ([`crdt::TextDoc`]) plus per-user cursor awareness
//! ([`doclet::Doclet`]). Clients talk to a relay ([`relay::Relay`]) using the
//! binary frames in [`wire`], and [`session::Session`] implements three ways
//! of carrying many doclets to the relay: one shared untagged socket, one
//! socket per doclet, or one shared socket with doclet-tagged frames.
//!
//! [`sim`] runs clients and a relay on a virtual clock and produces the
//! frame-count comparisons the `bench` tool prints.

pub mod crdt;
pub mod doclet;
pub mod relay;
pub mod session;
pub mod sim;
pub mod wire;

pub use crdt::{Anchor, CrdtError, DeleteOp, InsertOp, Integration, Op, OpId, ReplicaId, TextDoc, VersionVector};
pub use doclet::{Doclet, DocletId, UserId};
pub use relay::{Relay, RelayConfig};
pub use session::{Edit, Session, SessionConfig, Strategy};
pub use wire::{decode_frame, encode_frame, Frame, FrameKind, Payload, WireError};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/text-crdt.md")]
    mod text_crdt {}
    #[doc = include_str!("../../../book/src/doclets.md")]
    mod doclets {}
    #[doc = include_str!("../../../book/src/wire-format.md")]
    mod wire_format {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/relay.md")]
    mod relay {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
