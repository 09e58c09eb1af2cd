#![allow(dead_code)]

pub mod frames;

use std::collections::{HashMap, HashSet};

use docmux::crdt::{Anchor, InsertOp, Op, OpId, TextDoc};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Text computed straight from an op set: depth-first walk of the origin
/// tree, children visited in descending `(lamport, replica)` order,
/// deleted characters skipped.
pub fn tree_text(ops: &[Op]) -> String {
    let mut children: HashMap<Anchor, Vec<&InsertOp>> = HashMap::new();
    let mut deleted = HashSet::new();
    for op in ops {
        match op {
            Op::Insert(ins) => children.entry(ins.origin).or_default().push(ins),
            Op::Delete(del) => {
                deleted.insert(del.target);
            }
        }
    }
    for kids in children.values_mut() {
        kids.sort_by_key(|k| std::cmp::Reverse(k.key()));
    }
    let mut out = String::new();
    let mut stack: Vec<&InsertOp> = children
        .get(&Anchor::Head)
        .map(|k| k.iter().rev().copied().collect())
        .unwrap_or_default();
    while let Some(ins) = stack.pop() {
        if !deleted.contains(&ins.id) {
            out.push(ins.ch);
        }
        if let Some(kids) = children.get(&Anchor::After(ins.id)) {
            stack.extend(kids.iter().rev().copied());
        }
    }
    out
}

/// Random local edit: insert (or delete when there is text, 30% of the time).
pub fn random_edit(doc: &mut TextDoc, rng: &mut impl Rng) -> Op {
    let len = doc.len();
    if len > 0 && rng.random_bool(0.3) {
        doc.local_delete(rng.random_range(0..len)).unwrap().into()
    } else {
        let ch = rng.random_range(b'a'..=b'z') as char;
        doc.local_insert(rng.random_range(0..=len), ch).unwrap().into()
    }
}

/// Replicas editing concurrently with random partial syncs. Returns the
/// replicas and every op generated, in generation order.
///
/// Delivery is FIFO per (sender, receiver) link with links picked at
/// random, so ops often arrive before ops from third parties they depend on.
pub fn random_session(replicas: usize, ops: usize, rng: &mut impl Rng) -> (Vec<TextDoc>, Vec<Op>) {
    let mut docs: Vec<TextDoc> = (1..=replicas as u64).map(TextDoc::new).collect();
    let mut log: Vec<Op> = Vec::new();
    // queues[to][from]: indexes into log
    let mut queues = vec![vec![std::collections::VecDeque::new(); replicas]; replicas];
    while log.len() < ops {
        if rng.random_bool(0.5) {
            let r = rng.random_range(0..replicas);
            let op = random_edit(&mut docs[r], rng);
            for (to, q) in queues.iter_mut().enumerate() {
                if to != r {
                    q[r].push_back(log.len());
                }
            }
            log.push(op);
        } else {
            deliver_one(&mut docs, &mut queues, &log, rng);
        }
    }
    while deliver_one(&mut docs, &mut queues, &log, rng) {}
    (docs, log)
}

fn deliver_one(
    docs: &mut [TextDoc],
    queues: &mut [Vec<std::collections::VecDeque<usize>>],
    log: &[Op],
    rng: &mut impl Rng,
) -> bool {
    let mut links: Vec<(usize, usize)> = Vec::new();
    for (to, qs) in queues.iter().enumerate() {
        for (from, q) in qs.iter().enumerate() {
            if !q.is_empty() {
                links.push((to, from));
            }
        }
    }
    let Some(&(to, from)) = links.choose(rng) else {
        return false;
    };
    let i = queues[to][from].pop_front().unwrap();
    docs[to].integrate(log[i].clone()).unwrap();
    true
}

pub fn ids(ops: &[Op]) -> Vec<OpId> {
    ops.iter().map(Op::id).collect()
}
