mod common;

use docmux::doclet::DocletId;
use docmux::relay::{restore, snapshot_hub, DocletHub, SnapshotError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_id(rng: &mut impl Rng) -> DocletId {
    const PARTS: [&str; 6] = ["intro", "doclet", "é", "第", "-", "7"];
    let n = rng.random_range(1..6);
    let s: String = (0..n).map(|_| PARTS[rng.random_range(0..PARTS.len())]).collect();
    DocletId::new(s).unwrap()
}

#[test]
fn restore_inverts_snapshot() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let mut hub = DocletHub::new(random_id(&mut rng));
        let replicas = rng.random_range(1..=4);
        let ops = rng.random_range(0..=150);
        let (_, log) = common::random_session(replicas, ops.max(1), &mut rng);
        // feed the hub in a scrambled order; the buffer sorts it out
        let mut order = log.clone();
        order.reverse();
        for op in order {
            hub.doclet.doc.integrate(op).unwrap();
        }
        assert_eq!(hub.doclet.doc.pending_count(), 0);

        let bytes = snapshot_hub(&hub);
        assert_eq!(&bytes[..4], b"DSN1");
        let back = restore(&bytes).unwrap();
        assert_eq!(back.id(), hub.id());
        assert_eq!(back.doclet.doc.visible_text(), hub.doclet.doc.visible_text());
        assert_eq!(back.doclet.doc.version(), hub.doclet.doc.version());
        assert_eq!(back.doclet.doc.op_count(), hub.doclet.doc.op_count());
        assert_eq!(snapshot_hub(&back), bytes, "snapshots are canonical");
    }
}

#[test]
fn corrupt_snapshots_are_rejected() {
    let mut hub = DocletHub::new(DocletId::new("d").unwrap());
    hub.doclet.doc.local_insert(0, 'x').unwrap();
    let bytes = snapshot_hub(&hub);
    assert_eq!(restore(b"DSN2\x01d\x00").unwrap_err(), SnapshotError::BadMagic);
    for cut in 4..bytes.len() {
        assert!(restore(&bytes[..cut]).is_err());
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(restore(&extra).is_err());
}
