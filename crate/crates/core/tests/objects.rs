mod common;

use std::collections::{BTreeMap, BTreeSet};

use blunt_core::adversary::{FirstPolicy, RandomPolicy};
use blunt_core::engine::{run, Directive, World};
use blunt_core::exec::{
    outcome_of, project_history, Execution, InvocationId, LocalOp, RandomTape, StepKind, TapeReader,
};
use blunt_core::lincheck::{
    check_linearizable, check_tail_strong, enumerate_tree, Move, TreeConfig,
};
use blunt_core::netsim::{Payload, Tag};
use blunt_core::objects::{
    audit_effect_free, Binding, Locals, Method, ObjectKind, ObjectSpec, PreambleMapping,
};
use blunt_core::progdsl::workload;
use blunt_core::value::{Timestamp, Value};
use common::{binding, drive, fuzz_workload};
use proptest::prelude::*;

fn methods(e: &Execution) -> BTreeMap<InvocationId, Method> {
    e.steps
        .iter()
        .filter_map(|s| match (&s.kind, s.inv) {
            (StepKind::Call { method, .. }, Some(inv)) => Some((inv, *method)),
            _ => None,
        })
        .collect()
}

/// The timestamp carried by each Write's update messages.
fn write_timestamps(e: &Execution) -> BTreeMap<InvocationId, Timestamp> {
    let m = methods(e);
    let mut out = BTreeMap::new();
    for s in &e.steps {
        if let StepKind::Send { msg } = &s.kind {
            if let Payload::Update { ts, .. } = &msg.payload {
                if m.get(&msg.cause.inv) == Some(&Method::Write) {
                    let prev = out.insert(msg.cause.inv, *ts);
                    assert!(prev.is_none() || prev == Some(*ts));
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn network_conserves_messages(seed in any::<u64>(), k in proptest::option::of(1i64..4)) {
        let prog = fuzz_workload(ObjectKind::Abd);
        let b = [binding(ObjectKind::Abd, k)];
        let mut servers: BTreeMap<u32, Timestamp> = BTreeMap::new();
        drive(&prog, &b, &mut RandomPolicy::new(seed),
            &mut TapeReader::new(RandomTape::Seeded(seed)), |w: &World| {
            let net = w.net();
            assert_eq!(net.sent_count(), net.in_flight().len() as u64 + net.delivered_count());
            let sent: BTreeSet<u64> = w.steps().iter().filter_map(|s| match &s.kind {
                StepKind::Send { msg } => Some(msg.id),
                _ => None,
            }).collect();
            for m in net.in_flight() {
                assert!(sent.contains(&m.id), "message {} was never sent", m.id);
            }
            for p in 0..3 {
                let (_, ts) = w.abd_server(0, p).unwrap();
                let prev = servers.insert(p, ts);
                assert!(prev.is_none_or(|old| old <= ts), "server {p} went back from {prev:?} to {ts:?}");
            }
        });
    }

    #[test]
    fn writes_carry_distinct_timestamps(seed in any::<u64>(), k in proptest::option::of(1i64..4)) {
        let prog = fuzz_workload(ObjectKind::Abd);
        let e = run(&prog, &[binding(ObjectKind::Abd, k)], &mut RandomPolicy::new(seed),
            RandomTape::Seeded(seed), 100_000).unwrap();
        let ts = write_timestamps(&e);
        prop_assert_eq!(ts.len(), 4);
        let distinct: BTreeSet<Timestamp> = ts.values().copied().collect();
        prop_assert_eq!(distinct.len(), ts.len());
        for (inv, t) in &ts {
            prop_assert_eq!(t.pid, inv.proc);
        }
    }

    /// Any two quorums intersect, so a query phase that starts after a
    /// Write returned sees at least that Write's timestamp.
    #[test]
    fn later_queries_see_returned_writes(seed in any::<u64>(), k in proptest::option::of(1i64..4)) {
        let prog = fuzz_workload(ObjectKind::Abd);
        let e = run(&prog, &[binding(ObjectKind::Abd, k)], &mut RandomPolicy::new(seed),
            RandomTape::Seeded(seed), 100_000).unwrap();
        let wts = write_timestamps(&e);
        let mut returned_at = BTreeMap::new();
        let mut called_at = BTreeMap::new();
        let mut seen: BTreeMap<InvocationId, Vec<Timestamp>> = BTreeMap::new();
        for s in &e.steps {
            let Some(inv) = s.inv else { continue };
            match &s.kind {
                StepKind::Call { .. } => { called_at.insert(inv, s.seq); }
                StepKind::Return { .. } => { returned_at.insert(inv, s.seq); }
                StepKind::Local(LocalOp::PreambleEnd { locals: Locals::Pair { ts, .. } }) => {
                    seen.entry(inv).or_default().push(*ts);
                }
                _ => {}
            }
        }
        for (w, wts) in &wts {
            let Some(r) = returned_at.get(w) else { continue };
            for (inv, c) in &called_at {
                if c > r {
                    for ts in seen.get(inv).into_iter().flatten() {
                        prop_assert!(ts >= wts, "{} saw {:?} after {} wrote {:?}", inv, ts, w, wts);
                    }
                }
            }
        }
    }

    #[test]
    fn iterated_histories_are_linearizable(seed in any::<u64>(), kind in 1usize..5, k in 1i64..4) {
        let kind = common::KINDS[kind];
        let prog = fuzz_workload(kind);
        let e = run(&prog, &[binding(kind, Some(k))], &mut RandomPolicy::new(seed),
            RandomTape::Seeded(seed), 100_000).unwrap();
        let spec = ObjectSpec::for_kind(kind, 3, Value::Int(0));
        prop_assert!(check_linearizable(&project_history(&e), &spec).unwrap().linearizable);
    }
}

fn apply_moves(w: &mut World, moves: &[Move], rng: &mut TapeReader) {
    for m in moves {
        let d = m.resolve(w).unwrap_or_else(|| panic!("{m:?} not enabled"));
        w.apply(d, rng).unwrap();
    }
}

fn exchange(client: u32, server: u32, tags: [Tag; 2]) -> [Move; 2] {
    [
        Move::Deliver {
            object: 0,
            dest: server,
            from: client,
            tag: tags[0],
        },
        Move::Deliver {
            object: 0,
            dest: client,
            from: server,
            tag: tags[1],
        },
    ]
}

/// Finishes every process except `hold`, then lets everything run.
fn finish_without(w: &mut World, hold: u32, rng: &mut TapeReader) {
    loop {
        let next = w
            .legal()
            .into_iter()
            .find(|d| !matches!(d, Directive::Step { proc } if *proc == hold));
        match next {
            Some(d) => w.apply(d, rng).unwrap(),
            None => break,
        }
    }
    while !w.all_done() {
        let d = w.legal()[0];
        w.apply(d, rng).unwrap();
    }
}

fn write_then_read() -> blunt_core::progdsl::Program {
    workload(
        "ww-r",
        "R",
        Value::Bot,
        &[vec![Some(0)], vec![Some(1)], vec![None]],
    )
}

#[test]
fn concurrent_abd_writes_order_by_process_id() {
    let prog = write_then_read();
    let mut w = World::new(&prog, &[Binding::plain(ObjectKind::Abd)])
        .unwrap()
        .with_log();
    let mut rng = TapeReader::new(RandomTape::Fixed(vec![]));
    let q = [Tag::Query, Tag::Reply];
    let mut moves = vec![Move::Step(0), Move::Step(0), Move::Step(1), Move::Step(1)];
    for c in [0, 1] {
        for s in [0, 1] {
            moves.extend(exchange(c, s, q));
        }
    }
    apply_moves(&mut w, &moves, &mut rng);
    finish_without(&mut w, 2, &mut rng);
    for p in 0..3 {
        assert_eq!(
            w.abd_server(0, p).unwrap(),
            (Value::Int(1), Timestamp::new(1, 1))
        );
    }
    let e = w.into_execution();
    let ts = write_timestamps(&e);
    assert_eq!(
        ts.values().copied().collect::<Vec<_>>(),
        [Timestamp::new(1, 0), Timestamp::new(1, 1)]
    );
    let o = outcome_of(&e);
    let read = o.returns.iter().find(|(id, _)| id.proc == 2).unwrap();
    assert_eq!(read.1, Value::Int(1));
}

#[test]
fn abd_sequential_write_then_read() {
    let prog = workload("w-r", "R", Value::Bot, &[vec![Some(0), None]]);
    let e = run(
        &prog,
        &[Binding::plain(ObjectKind::Abd)],
        &mut FirstPolicy,
        RandomTape::Fixed(vec![]),
        10_000,
    )
    .unwrap();
    let o = outcome_of(&e);
    assert_eq!(o.returns.iter().last().unwrap().1, Value::Int(0));
    assert_eq!(
        write_timestamps(&e).values().copied().collect::<Vec<_>>(),
        [Timestamp::new(1, 0)]
    );
}

#[test]
fn concurrent_va_writes_order_by_process_id() {
    let prog = write_then_read();
    let b = [Binding::plain(ObjectKind::Va)];
    let mut w = World::new(&prog, &b).unwrap().with_log();
    let mut rng = TapeReader::new(RandomTape::Fixed(vec![]));
    // lockstep: both writers collect before either writes its register
    while w.schedulable(0) || w.schedulable(1) {
        for p in [0, 1] {
            if w.schedulable(p) {
                w.apply(Directive::Step { proc: p }, &mut rng).unwrap();
            }
        }
    }
    while !w.all_done() {
        w.apply(Directive::Step { proc: 2 }, &mut rng).unwrap();
    }
    let e = w.into_execution();
    let pre: Vec<Timestamp> = e
        .steps
        .iter()
        .filter(|s| s.proc < 2)
        .filter_map(|s| match &s.kind {
            StepKind::Local(LocalOp::PreambleEnd {
                locals: Locals::Pair { ts, .. },
            }) => Some(*ts),
            _ => None,
        })
        .collect();
    assert_eq!(pre, [Timestamp::ZERO, Timestamp::ZERO]);
    let o = outcome_of(&e);
    let read = o.returns.iter().find(|(id, _)| id.proc == 2).unwrap();
    assert_eq!(read.1, Value::Int(1));
}

#[test]
fn sequential_snapshot_scans() {
    let b = [Binding::plain(ObjectKind::Snapshot)];
    let scan = |ops: &[Vec<Option<i64>>]| {
        let prog = workload("s", "S", Value::Int(0), ops);
        let e = run(
            &prog,
            &b,
            &mut FirstPolicy,
            RandomTape::Fixed(vec![]),
            10_000,
        )
        .unwrap();
        let o = outcome_of(&e);
        let v = o
            .returns
            .iter()
            .find(|(id, _)| id.proc == 1)
            .unwrap()
            .1
            .clone();
        v
    };
    let v = |xs: [i64; 2]| Value::Vector(xs.iter().map(|x| Value::Int(*x)).collect());
    assert_eq!(scan(&[vec![Some(1)], vec![None]]), v([1, 0]));
    assert_eq!(scan(&[vec![None], vec![None]]), v([0, 0]));
}

/// Every history in the tree of a small workload, branching for `depth`
/// moves and then run to quiescence, is linearizable.
fn exhaustive_small_trees_are_linearizable(
    kind: ObjectKind,
    depth: usize,
    ops: &[Vec<Option<i64>>],
) {
    let prog = workload("small", "X", Value::Int(0), ops);
    let t = enumerate_tree(
        &prog,
        &[Binding::plain(kind)],
        &[],
        TreeConfig {
            depth,
            complete: true,
            max_nodes: 2_000_000,
        },
    )
    .unwrap();
    let spec = ObjectSpec::for_kind(kind, ops.len(), Value::Int(0));
    let v = check_tail_strong(&t, &spec, &PreambleMapping::full(kind)).unwrap();
    assert!(v.all_linearizable, "{kind}: {:?}", v.witness);
    assert!(t.len() > 100, "{kind}: only {} nodes", t.len());
}

#[test]
fn israeli_li_never_inverts_old_and_new_values() {
    exhaustive_small_trees_are_linearizable(
        ObjectKind::Il,
        10,
        &[vec![Some(5)], vec![None], vec![None]],
    );
}

#[test]
fn vitanyi_awerbuch_small_interleavings() {
    exhaustive_small_trees_are_linearizable(
        ObjectKind::Va,
        64,
        &[vec![Some(1)], vec![Some(2)], vec![None]],
    );
}

#[test]
fn snapshot_small_interleavings() {
    exhaustive_small_trees_are_linearizable(
        ObjectKind::Snapshot,
        64,
        &[vec![Some(1), Some(2)], vec![None]],
    );
}

#[test]
fn declared_preambles_are_effect_free() {
    for kind in [
        ObjectKind::Abd,
        ObjectKind::Snapshot,
        ObjectKind::Va,
        ObjectKind::Il,
    ] {
        for k in [None, Some(2)] {
            let b = binding(kind, k);
            for m in kind.methods() {
                let r = audit_effect_free(b, m, &b.declared_preambles(), 50, 11).unwrap();
                assert!(r.ok(), "{kind} {m} k={k:?}: {:?}", r.violations);
            }
        }
    }
}

#[test]
fn whole_method_preambles_are_not_effect_free() {
    for kind in [ObjectKind::Abd, ObjectKind::Va, ObjectKind::Il] {
        let b = Binding::plain(kind);
        let r =
            audit_effect_free(b, kind.write_method(), &PreambleMapping::full(kind), 20, 3).unwrap();
        assert!(!r.ok(), "{kind}");
    }
    let snap = Binding::plain(ObjectKind::Snapshot).with_extended_update(true);
    let r = audit_effect_free(snap, Method::Update, &snap.declared_preambles(), 20, 3).unwrap();
    assert!(
        r.ok(),
        "extended update preamble still ends before the write"
    );
}
