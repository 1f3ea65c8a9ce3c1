#![allow(dead_code)]

use blunt_core::adversary::AdversaryPolicy;
use blunt_core::engine::World;
use blunt_core::exec::{ExecError, Execution, Origin, RandomSource};
use blunt_core::objects::{Binding, ObjectKind};
use blunt_core::progdsl::{workload, Program};
use blunt_core::value::Value;

pub const KINDS: [ObjectKind; 5] = [
    ObjectKind::Atomic,
    ObjectKind::Abd,
    ObjectKind::Snapshot,
    ObjectKind::Va,
    ObjectKind::Il,
];

/// Atomic objects have no preamble to iterate, so `k` is ignored for them.
pub fn binding(kind: ObjectKind, k: Option<i64>) -> Binding {
    match k {
        Some(k) if kind != ObjectKind::Atomic => Binding::iterated(kind, k).unwrap(),
        _ => Binding::plain(kind),
    }
}

/// Three processes mixing writes and reads on object `X` (initially 0).
/// Israeli–Li only allows process 0 to write.
pub fn fuzz_workload(kind: ObjectKind) -> Program {
    let ops: Vec<Vec<Option<i64>>> = if kind == ObjectKind::Il {
        vec![
            vec![Some(1), Some(2), Some(3)],
            vec![None, None, None],
            vec![None, None, None],
        ]
    } else {
        vec![
            vec![Some(1), None, Some(3)],
            vec![Some(2), None, None],
            vec![None, Some(4), None],
        ]
    };
    workload("fuzz", "X", Value::Int(0), &ops)
}

/// Draws from a fixed prefix, then from a hash of `seed` and the position.
pub struct PrefixSource {
    pub prefix: Vec<i64>,
    pub seed: u64,
    pub pos: usize,
}

impl RandomSource for PrefixSource {
    fn draw(&mut self, domain: &[i64], _origin: Origin) -> Result<i64, ExecError> {
        let v = match self.prefix.get(self.pos) {
            Some(v) if domain.contains(v) => *v,
            _ => {
                let h = blunt_core::exec::hash_pair(self.seed, self.pos as u64);
                domain[(h % domain.len() as u64) as usize]
            }
        };
        self.pos += 1;
        Ok(v)
    }
}

/// Runs to completion, calling `check` on the world after every directive.
pub fn drive(
    program: &Program,
    bindings: &[Binding],
    policy: &mut dyn AdversaryPolicy,
    rng: &mut dyn RandomSource,
    mut check: impl FnMut(&World),
) -> Execution {
    let mut w = World::new(program, bindings).unwrap().with_log();
    let mut budget = 100_000;
    while !w.all_done() && !w.legal().is_empty() {
        let d = policy.decide(&w).unwrap();
        w.apply(d, rng).unwrap();
        check(&w);
        budget -= 1;
        assert!(budget > 0, "run did not finish");
    }
    w.into_execution()
}
