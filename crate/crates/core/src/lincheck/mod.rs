//! Linearizability of histories, strong and tail strong linearizability of
//! execution trees, and ABD's timestamp-order linearization.

mod abd;
mod strong;
mod tree;

pub use abd::abd_canonical_linearization;
pub use strong::complete_nodes;
pub use strong::{check_strong_linearizable, check_tail_strong, StrongVerdict, StrongWitness};
pub use tree::{
    enumerate_tree, race_prefix, race_workload, ExecutionTree, Move, TreeConfig, TreeNode,
};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Action, ExecError, History, InvocationId};
use crate::objects::{Method, ObjectError, ObjectSpec};
use crate::value::Value;

#[derive(Debug, Error, PartialEq)]
pub enum LinError {
    #[error("malformed history: {0}")]
    Malformed(String),
    #[error("history mixes objects {0:?}; check each object separately")]
    MixedObjects(Vec<String>),
    #[error("tree has more than {limit} nodes")]
    TreeTooLarge { limit: usize },
    #[error("invocation {0} has not finished its preamble")]
    NotComplete(InvocationId),
    #[error(transparent)]
    Object(#[from] ObjectError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// One operation of a sequential history.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinOp {
    pub inv: InvocationId,
    pub method: Method,
    pub arg: Value,
    pub ret: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Linearization {
    pub ops: Vec<LinOp>,
}

impl Linearization {
    pub fn is_prefix_of(&self, other: &Linearization) -> bool {
        self.ops.len() <= other.ops.len() && self.ops[..] == other.ops[..self.ops.len()]
    }

    pub fn invs(&self) -> Vec<InvocationId> {
        self.ops.iter().map(|o| o.inv).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinVerdict {
    pub linearizable: bool,
    pub witness: Option<Linearization>,
}

/// An operation of a concurrent history with its position.
#[derive(Clone, Debug)]
pub(crate) struct HOp {
    pub inv: InvocationId,
    pub method: Method,
    pub arg: Value,
    pub ret: Option<Value>,
    pub call_pos: usize,
    pub ret_pos: usize,
}

/// Indexes a single-object history, checking that it is well formed.
pub(crate) fn operations(h: &History) -> Result<Vec<HOp>, LinError> {
    let objects = h.objects();
    if objects.len() > 1 {
        return Err(LinError::MixedObjects(objects));
    }
    let mut ops: Vec<HOp> = Vec::new();
    let mut index: BTreeMap<InvocationId, usize> = BTreeMap::new();
    for (pos, a) in h.actions.iter().enumerate() {
        match a {
            Action::Call {
                inv, method, arg, ..
            } => {
                if index.contains_key(inv) {
                    return Err(LinError::Malformed(format!("second call for {inv}")));
                }
                if ops
                    .iter()
                    .any(|o| o.inv.proc == inv.proc && o.ret.is_none())
                {
                    return Err(LinError::Malformed(format!(
                        "p{} calls {inv} with an invocation pending",
                        inv.proc
                    )));
                }
                index.insert(*inv, ops.len());
                ops.push(HOp {
                    inv: *inv,
                    method: *method,
                    arg: arg.clone(),
                    ret: None,
                    call_pos: pos,
                    ret_pos: usize::MAX,
                });
            }
            Action::Return {
                inv, method, value, ..
            } => {
                let i = *index
                    .get(inv)
                    .ok_or_else(|| LinError::Malformed(format!("return without call for {inv}")))?;
                let o = &mut ops[i];
                if o.ret.is_some() {
                    return Err(LinError::Malformed(format!("second return for {inv}")));
                }
                if o.method != *method {
                    return Err(LinError::Malformed(format!(
                        "{inv} called {} but returned from {method}",
                        o.method
                    )));
                }
                o.ret = Some(value.clone());
                o.ret_pos = pos;
            }
        }
    }
    Ok(ops)
}

/// `before[i]` lists the operations that returned before `i` was called.
pub(crate) fn real_time(ops: &[HOp]) -> Vec<Vec<usize>> {
    ops.iter()
        .map(|o| {
            ops.iter()
                .enumerate()
                .filter(|(_, p)| p.ret_pos < o.call_pos)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64).max(1)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }
}

struct Search<'a> {
    ops: &'a [HOp],
    before: Vec<Vec<usize>>,
    spec: &'a ObjectSpec,
    failed: HashSet<(Bits, Value)>,
    remaining_complete: usize,
}

impl Search<'_> {
    fn dfs(
        &mut self,
        done: &mut Bits,
        state: &Value,
        out: &mut Vec<LinOp>,
    ) -> Result<bool, LinError> {
        if self.remaining_complete == 0 {
            return Ok(true);
        }
        if self.failed.contains(&(done.clone(), state.clone())) {
            return Ok(false);
        }
        for i in 0..self.ops.len() {
            if done.get(i) || self.before[i].iter().any(|j| !done.get(*j)) {
                continue;
            }
            let o = &self.ops[i];
            let (next, ret) = self.spec.apply(state, o.inv.proc, o.method, &o.arg)?;
            if o.ret.as_ref().is_some_and(|r| *r != ret) {
                continue;
            }
            let complete = o.ret.is_some();
            done.set(i);
            if complete {
                self.remaining_complete -= 1;
            }
            out.push(LinOp {
                inv: o.inv,
                method: o.method,
                arg: o.arg.clone(),
                ret,
            });
            if self.dfs(done, &next, out)? {
                return Ok(true);
            }
            out.pop();
            done.clear(i);
            if complete {
                self.remaining_complete += 1;
            }
        }
        self.failed.insert((done.clone(), state.clone()));
        Ok(false)
    }
}

/// Decides whether a single-object history is linearizable. Pending
/// invocations may be completed with any value the specification allows, or
/// dropped. The witness lists the linearized operations in order.
pub fn check_linearizable(h: &History, spec: &ObjectSpec) -> Result<LinVerdict, LinError> {
    let ops = operations(h)?;
    let mut s = Search {
        before: real_time(&ops),
        ops: &ops,
        spec,
        failed: HashSet::new(),
        remaining_complete: ops.iter().filter(|o| o.ret.is_some()).count(),
    };
    let mut out = Vec::new();
    let ok = s.dfs(&mut Bits::new(ops.len()), &spec.initial_state(), &mut out)?;
    Ok(LinVerdict {
        linearizable: ok,
        witness: ok.then_some(Linearization { ops: out }),
    })
}

/// Checks every object of a multi-object history with its own
/// specification. Returns the first object that fails, if any.
pub fn check_each_object(
    h: &History,
    spec_of: &dyn Fn(&str) -> ObjectSpec,
) -> Result<Option<String>, LinError> {
    for name in h.objects() {
        let v = check_linearizable(&h.restrict(&name), &spec_of(&name))?;
        if !v.linearizable {
            return Ok(Some(name));
        }
    }
    Ok(None)
}

/// True iff `lin` is a linearization of `h`: it follows the specification,
/// contains every completed operation with its recorded return value, only
/// contains invoked operations, and respects real-time order.
pub fn is_linearization_of(
    h: &History,
    lin: &Linearization,
    spec: &ObjectSpec,
) -> Result<bool, LinError> {
    let ops = operations(h)?;
    let pos: BTreeMap<InvocationId, usize> =
        ops.iter().enumerate().map(|(i, o)| (o.inv, i)).collect();
    let mut state = spec.initial_state();
    let mut placed = vec![false; ops.len()];
    let before = real_time(&ops);
    for l in &lin.ops {
        let Some(&i) = pos.get(&l.inv) else {
            return Ok(false);
        };
        let o = &ops[i];
        if placed[i] || o.method != l.method || o.arg != l.arg {
            return Ok(false);
        }
        if before[i].iter().any(|j| !placed[*j]) {
            return Ok(false);
        }
        let (next, ret) = spec.apply(&state, o.inv.proc, o.method, &o.arg)?;
        if ret != l.ret || o.ret.as_ref().is_some_and(|r| *r != ret) {
            return Ok(false);
        }
        state = next;
        placed[i] = true;
    }
    Ok(ops.iter().zip(&placed).all(|(o, p)| *p || o.ret.is_none()))
}

/// One line of checker output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub input: String,
    pub mode: String,
    pub verdict: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<serde_json::Value>,
}
