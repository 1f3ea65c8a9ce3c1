//! A hand-written schedule that makes the weakener's reader loop forever
//! with probability 1 when both registers are plain ABD with three
//! processes.
//!
//! The two writes to `R` run concurrently. `p0`'s query phase is left one
//! reply short and `p2`'s first read is left one reply short; then `p1`
//! flips the coin. The missing replies are chosen after the coin is known:
//!
//! * coin 0: `p0` hears from `p2` and writes with timestamp (1,0), which is
//!   planted at `p2` alone; the first read hears it from `p2` and returns 0,
//!   the second read sees (1,(1,1)) from `p0` and `p1` and returns 1.
//! * coin 1: `p0` hears `p1`'s (1,(1,1)) and writes with (2,0); the first
//!   read hears (1,(1,1)) from `p1` before that write lands and returns 1,
//!   the second read returns 0.

use crate::engine::{Directive, World};
use crate::exec::ProcessId;
use crate::netsim::Tag;
use crate::objects::ObjectKind;
use crate::progdsl::{weakener, Program};

use super::{AdversaryPolicy, PolicyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Step(ProcessId),
    Deliver {
        obj: u32,
        dest: ProcessId,
        from: ProcessId,
        tag: Tag,
    },
}

const R: u32 = 0;
const C: u32 = 1;

fn steps(p: ProcessId, count: usize, out: &mut Vec<Op>) {
    out.extend(std::iter::repeat_n(Op::Step(p), count));
}

/// Deliver `client`'s query at `server` and the reply back.
fn query(obj: u32, client: ProcessId, server: ProcessId, out: &mut Vec<Op>) {
    out.push(Op::Deliver {
        obj,
        dest: server,
        from: client,
        tag: Tag::Query,
    });
    out.push(Op::Deliver {
        obj,
        dest: client,
        from: server,
        tag: Tag::Reply,
    });
}

/// Deliver `client`'s update at `server` and the ack back.
fn update(obj: u32, client: ProcessId, server: ProcessId, out: &mut Vec<Op>) {
    out.push(Op::Deliver {
        obj,
        dest: server,
        from: client,
        tag: Tag::Update,
    });
    out.push(Op::Deliver {
        obj,
        dest: client,
        from: server,
        tag: Tag::Ack,
    });
}

/// A whole invocation by `p` served by `servers` in both phases.
fn whole(obj: u32, p: ProcessId, servers: [ProcessId; 2], out: &mut Vec<Op>) {
    steps(p, 2, out);
    for s in servers {
        query(obj, p, s, out);
    }
    steps(p, 2, out);
    for s in servers {
        update(obj, p, s, out);
    }
    steps(p, 1, out);
}

fn prefix() -> Vec<Op> {
    let mut s = Vec::new();
    // W0 starts and hears only from itself
    steps(0, 2, &mut s);
    query(R, 0, 0, &mut s);
    // W1 completes its query phase and broadcasts (1,(1,1))
    steps(1, 2, &mut s);
    query(R, 1, 0, &mut s);
    query(R, 1, 1, &mut s);
    steps(1, 2, &mut s);
    // R1 starts and hears (⊥,(0,0)) from p0
    steps(2, 2, &mut s);
    query(R, 2, 0, &mut s);
    // W1 lands at p0 and p1 and returns
    update(R, 1, 0, &mut s);
    update(R, 1, 1, &mut s);
    steps(1, 1, &mut s);
    // the coin flip
    steps(1, 1, &mut s);
    s
}

fn finish_p1(s: &mut Vec<Op>) {
    whole(C, 1, [0, 1], s);
    steps(1, 1, s);
}

fn finish_p2(s: &mut Vec<Op>) {
    whole(R, 2, [0, 1], s);
    whole(C, 2, [0, 1], s);
    // the test and the sink
    steps(2, 2, s);
}

fn case_zero() -> Vec<Op> {
    let mut s = Vec::new();
    finish_p1(&mut s);
    // W0 hears (⊥,(0,0)) from p2 and writes (0,(1,0)) to p0 and p2
    query(R, 0, 2, &mut s);
    steps(0, 2, &mut s);
    update(R, 0, 0, &mut s);
    update(R, 0, 2, &mut s);
    steps(0, 2, &mut s);
    // R1 hears (0,(1,0)) from p2 itself and writes it back
    query(R, 2, 2, &mut s);
    steps(2, 2, &mut s);
    update(R, 2, 2, &mut s);
    update(R, 2, 0, &mut s);
    steps(2, 1, &mut s);
    finish_p2(&mut s);
    s
}

fn case_one() -> Vec<Op> {
    let mut s = Vec::new();
    finish_p1(&mut s);
    // W0 hears (1,(1,1)) from p1: its timestamp will be (2,0)
    query(R, 0, 1, &mut s);
    steps(0, 1, &mut s);
    // R1 hears (1,(1,1)) from p1 and completes before W0's update
    query(R, 2, 1, &mut s);
    steps(2, 2, &mut s);
    update(R, 2, 0, &mut s);
    update(R, 2, 1, &mut s);
    steps(2, 1, &mut s);
    // W0 writes (0,(2,0))
    steps(0, 1, &mut s);
    update(R, 0, 0, &mut s);
    update(R, 0, 1, &mut s);
    steps(0, 2, &mut s);
    finish_p2(&mut s);
    s
}

/// The scripted adversary. It branches once, on the coin value.
#[derive(Clone, Debug)]
pub struct CraftedPolicy {
    prefix: Vec<Op>,
    cases: [Vec<Op>; 2],
    pos: usize,
}

/// Builds the crafted policy after checking that the configuration is the
/// weakener over two plain ABD registers with three processes.
pub fn crafted_abd_weakener_policy(
    program: &Program,
    bindings: &[crate::objects::Binding],
) -> Result<CraftedPolicy, PolicyError> {
    if program != &weakener() {
        return Err(PolicyError::WrongConfiguration(format!(
            "expected the weakener program, got `{}`",
            program.name
        )));
    }
    if bindings.len() != 2
        || bindings
            .iter()
            .any(|b| b.kind != ObjectKind::Abd || b.k.is_some())
    {
        return Err(PolicyError::WrongConfiguration(
            "both registers must be plain ABD".into(),
        ));
    }
    Ok(CraftedPolicy {
        prefix: prefix(),
        cases: [case_zero(), case_one()],
        pos: 0,
    })
}

impl CraftedPolicy {
    fn op(&self, world: &World) -> Result<Op, PolicyError> {
        if self.pos < self.prefix.len() {
            return Ok(self.prefix[self.pos]);
        }
        let coin = world
            .var(1, "coin")
            .and_then(|v| v.as_int())
            .filter(|c| *c == 0 || *c == 1)
            .ok_or_else(|| PolicyError::ScriptMismatch("coin not flipped".into()))?;
        let case = &self.cases[coin as usize];
        case.get(self.pos - self.prefix.len())
            .copied()
            .ok_or_else(|| PolicyError::ScriptMismatch("script exhausted".into()))
    }
}

impl AdversaryPolicy for CraftedPolicy {
    fn name(&self) -> &str {
        "crafted"
    }

    fn decide(&mut self, world: &World) -> Result<Directive, PolicyError> {
        let op = self.op(world)?;
        self.pos += 1;
        match op {
            Op::Step(p) => {
                if world.schedulable(p) {
                    Ok(Directive::Step { proc: p })
                } else {
                    Err(PolicyError::ScriptMismatch(format!(
                        "p{p} is not schedulable at script position {}",
                        self.pos - 1
                    )))
                }
            }
            Op::Deliver {
                obj,
                dest,
                from,
                tag,
            } => {
                let candidates: Vec<_> = world
                    .net()
                    .in_flight()
                    .iter()
                    .filter(|m| {
                        m.object == obj && m.dest == dest && m.sender == from && m.tag() == tag
                    })
                    .collect();
                let pick = candidates
                    .iter()
                    .find(|m| world.is_relevant(m))
                    .or_else(|| candidates.first())
                    .ok_or_else(|| {
                        PolicyError::ScriptMismatch(format!(
                            "no {tag:?} from p{from} to p{dest} on object {obj}"
                        ))
                    })?;
                Ok(Directive::Deliver {
                    proc: dest,
                    msg: pick.id,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objects::Binding;

    #[test]
    fn rejects_other_configurations() {
        let atomic = [Binding::plain(ObjectKind::Atomic); 2];
        assert!(matches!(
            crafted_abd_weakener_policy(&weakener(), &atomic),
            Err(PolicyError::WrongConfiguration(_))
        ));
        let abd2 = [Binding::iterated(ObjectKind::Abd, 2).unwrap(); 2];
        assert!(crafted_abd_weakener_policy(&weakener(), &abd2).is_err());
    }
}
