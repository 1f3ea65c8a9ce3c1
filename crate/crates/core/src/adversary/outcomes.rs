//! Exhaustive enumeration of the outcomes a program can reach.

use std::collections::{BTreeSet, HashSet};

use crate::engine::{Directive, World};
use crate::exec::{ExecError, Forced, Returns};
use crate::objects::Binding;
use crate::progdsl::Program;

use super::search::{chance_process, close};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeSet {
    /// Return-value maps of the final states reached.
    pub outcomes: BTreeSet<Returns>,
    pub states: u64,
    /// False when the state budget ran out first.
    pub exhausted: bool,
}

/// Every outcome reachable under some schedule and some random values,
/// exploring at most `state_budget` distinct states. Uses the same
/// outcome-preserving reductions as the expectimax search.
pub fn reachable_outcomes(
    program: &Program,
    bindings: &[Binding],
    state_budget: u64,
) -> Result<OutcomeSet, ExecError> {
    let mut root = World::new(program, bindings)?;
    close(&mut root)?;
    let mut seen: HashSet<u128> = HashSet::new();
    let mut outcomes = BTreeSet::new();
    let mut exhausted = true;
    seen.insert(root.digest());
    let mut stack = vec![root];
    while let Some(w) = stack.pop() {
        let children: Vec<World> = if let Some(p) = chance_process(&w) {
            let mut out = Vec::new();
            for v in w.random_domain(p).unwrap_or_default() {
                let mut c = w.clone();
                c.apply(Directive::Step { proc: p }, &mut Forced(v))?;
                out.push(c);
            }
            out
        } else {
            let moves = w.batched_moves();
            if moves.is_empty() {
                outcomes.insert(w.returns().clone());
                continue;
            }
            let mut out = Vec::new();
            for m in moves {
                let mut c = w.clone();
                for d in m {
                    c.apply(d, &mut Forced(0))?;
                }
                out.push(c);
            }
            out
        };
        for mut c in children {
            close(&mut c)?;
            if c.all_done() {
                outcomes.insert(c.returns().clone());
                continue;
            }
            if seen.len() as u64 >= state_budget {
                exhausted = false;
                continue;
            }
            if seen.insert(c.digest()) {
                stack.push(c);
            }
        }
    }
    Ok(OutcomeSet {
        outcomes,
        states: seen.len() as u64,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objects::ObjectKind;
    use crate::progdsl::weakener;

    #[test]
    fn atomic_weakener_outcomes() {
        let r = reachable_outcomes(
            &weakener(),
            &[Binding::plain(ObjectKind::Atomic); 2],
            1_000_000,
        )
        .unwrap();
        assert!(r.exhausted);
        // p2's reads: u1 ≤ u2 in write order; coin 0 or 1; both terminal cases
        assert!(r.outcomes.len() > 4);
        for o in &r.outcomes {
            assert_eq!(o.len(), 6);
        }
    }
}
