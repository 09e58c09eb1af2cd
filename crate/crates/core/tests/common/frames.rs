use docmux::crdt::{Anchor, DeleteOp, InsertOp, Op, OpId, VersionVector};
use docmux::doclet::DocletId;
use docmux::wire::{Frame, Payload};
use proptest::prelude::*;

pub fn op_id() -> impl Strategy<Value = OpId> {
    (any::<u64>(), 1..=u64::MAX).prop_map(|(r, s)| OpId::new(r, s))
}

pub fn anchor() -> impl Strategy<Value = Anchor> {
    prop_oneof![Just(Anchor::Head), op_id().prop_map(Anchor::After)]
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (op_id(), any::<u64>(), anchor(), any::<char>()).prop_map(|(id, lamport, origin, ch)| Op::Insert(InsertOp {
            id,
            lamport,
            origin,
            ch
        })),
        (op_id(), op_id()).prop_map(|(id, target)| Op::Delete(DeleteOp { id, target })),
    ]
}

pub fn doclet_id() -> impl Strategy<Value = DocletId> {
    "\\PC{1,80}"
        .prop_filter("fits the length limit", |s| s.len() <= 255)
        .prop_map(|s| DocletId::new(s).unwrap())
}

pub fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        Just(Payload::Subscribe),
        Just(Payload::Unsubscribe),
        Just(Payload::Keepalive),
        prop::collection::vec((any::<u64>(), 1..=u64::MAX), 0..6)
            .prop_map(|entries| Payload::SyncReq(entries.into_iter().collect::<VersionVector>())),
        prop::collection::vec(op(), 0..8).prop_map(Payload::Update),
        (any::<u64>(), prop::option::of(anchor())).prop_map(|(user, anchor)| Payload::Awareness { user, anchor }),
    ]
}

pub fn frame() -> impl Strategy<Value = Frame> {
    (prop::option::of(doclet_id()), payload()).prop_map(|(doclet, payload)| Frame::new(doclet, payload))
}
