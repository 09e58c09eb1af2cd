mod common;

use common::{random_session, tree_text};
use docmux::crdt::{Integration, Op, TextDoc, VersionVector};
use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn randomized_replicas_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let replicas = rng.random_range(2..=4);
        let ops = rng.random_range(1..=200);
        let (docs, log) = random_session(replicas, ops, &mut rng);
        let expected = tree_text(&log);
        for doc in &docs {
            assert_eq!(doc.pending_count(), 0, "trial {trial}");
            assert_eq!(doc.visible_text(), expected, "trial {trial}");
            assert_eq!(doc.version(), docs[0].version(), "trial {trial}");
            assert_eq!(doc.op_count(), log.len(), "trial {trial}");
        }
    }
}

#[test]
fn every_delivery_order_of_small_op_sets_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sets = 0;
    for size in 1..=6 {
        for _ in 0..40 {
            let replicas = rng.random_range(1..=3);
            let (_, log) = random_session(replicas, size, &mut rng);
            let expected = tree_text(&log);
            for perm in log.iter().permutations(log.len()) {
                let mut doc = TextDoc::new(99);
                for op in perm {
                    doc.integrate(op.clone()).unwrap();
                }
                assert_eq!(doc.pending_count(), 0);
                assert_eq!(doc.visible_text(), expected, "{log:?}");
            }
            sets += 1;
        }
    }
    assert_eq!(sets, 240);
}

#[test]
fn integration_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (docs, log) = random_session(3, 60, &mut rng);
        let mut doc = TextDoc::new(99);
        let mut shuffled = log.clone();
        shuffled.shuffle(&mut rng);
        for op in shuffled.iter().chain(&log) {
            doc.integrate(op.clone()).unwrap();
        }
        assert_eq!(doc.visible_text(), docs[0].visible_text());
        for op in &log {
            assert_eq!(doc.integrate(op.clone()).unwrap(), Integration::Duplicate);
        }
        assert_eq!(doc.op_count(), log.len());
    }
}

#[test]
fn ops_since_fills_exactly_the_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (docs, log) = random_session(3, 80, &mut rng);
        let full = &docs[0];
        // a lagging peer that saw a causally closed prefix
        let cut = rng.random_range(0..=log.len());
        let mut peer = TextDoc::new(50);
        for op in &log[..cut] {
            peer.integrate(op.clone()).unwrap();
        }
        let gap: Vec<Op> = full.ops_since(peer.version());
        assert!(gap.iter().all(|op| !peer.version().contains(op.id())));
        assert_eq!(gap.len(), log.len() - cut);
        for op in gap {
            assert_eq!(peer.integrate(op).unwrap(), Integration::Applied);
        }
        assert_eq!(peer.visible_text(), full.visible_text());
        assert_eq!(peer.version(), full.version());
        assert!(full.ops_since(full.version()).is_empty());
        assert_eq!(full.ops_since(&VersionVector::new()).len(), log.len());
    }
}

#[test]
fn oracle_matches_sequential_editing() {
    // the tree walk agrees with a single replica's own view of its edits
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut doc = TextDoc::new(1);
    let mut log = Vec::new();
    for _ in 0..300 {
        log.push(common::random_edit(&mut doc, &mut rng));
        assert_eq!(tree_text(&log), doc.visible_text());
    }
}
