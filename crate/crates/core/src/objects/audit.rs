//! Dynamic check that declared preambles are effect-free.
//!
//! A driver runs small concurrent workloads under seeded random schedules.
//! In every execution, each invocation of the audited method is split at
//! the last step it took at the preamble's end site (an invocation that
//! never got there is all preamble). A preamble may contain local steps,
//! base-register reads, sends and receipts; it may not write a base
//! register, and no message it sent may make a server change its
//! `(value, timestamp)` pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adversary::RandomPolicy;
use crate::engine::run;
use crate::exec::{AccessOp, ExecError, Execution, InvocationId, RandomTape, StepKind};
use crate::progdsl::workload;
use crate::value::Value;

use super::{Binding, Method, ObjectError, ObjectKind, PreambleMapping};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub run: u64,
    pub inv: InvocationId,
    /// Sequence number of the offending step.
    pub seq: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kind: ObjectKind,
    pub method: Method,
    pub runs: u64,
    /// Preamble steps inspected across all runs.
    pub steps_checked: u64,
    pub violations: Vec<AuditViolation>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Two writers and a reader, except for Israeli–Li where only process 0
/// may write.
fn driver_workload(kind: ObjectKind) -> crate::progdsl::Program {
    let ops: Vec<Vec<Option<i64>>> = if kind == ObjectKind::Il {
        vec![vec![Some(1), Some(2)], vec![None, None], vec![None, None]]
    } else {
        vec![vec![Some(1), None], vec![Some(2), None], vec![None, None]]
    };
    workload("audit", "X", Value::Int(0), &ops)
}

/// Checks one execution; returns the number of preamble steps inspected.
fn audit_execution(
    e: &Execution,
    method: Method,
    end: u32,
    run_index: u64,
    out: &mut Vec<AuditViolation>,
) -> u64 {
    let mut audited: BTreeMap<InvocationId, u64> = BTreeMap::new();
    for s in &e.steps {
        if let (StepKind::Call { method: m, .. }, Some(inv)) = (&s.kind, s.inv) {
            if *m == method {
                audited.insert(inv, u64::MAX);
            }
        }
    }
    for s in &e.steps {
        if let Some(inv) = s.inv {
            if s.site == end {
                if let Some(b) = audited.get_mut(&inv) {
                    *b = if *b == u64::MAX {
                        s.seq
                    } else {
                        (*b).max(s.seq)
                    };
                }
            }
        }
    }
    let in_preamble = |inv: &InvocationId, seq: u64| audited.get(inv).is_some_and(|b| seq <= *b);
    let mut checked = 0;
    for s in &e.steps {
        match (&s.kind, s.inv) {
            (StepKind::Deliver { msg, effect }, None) => {
                if !in_preamble(&msg.cause.inv, msg.cause.seq) {
                    continue;
                }
                checked += 1;
                if effect.mutates_server() {
                    out.push(AuditViolation {
                        run: run_index,
                        inv: msg.cause.inv,
                        seq: s.seq,
                        reason: format!(
                            "p{} changed its server state handling message m{}",
                            s.proc, msg.id
                        ),
                    });
                }
            }
            (kind, Some(inv)) if in_preamble(&inv, s.seq) => {
                checked += 1;
                if let StepKind::Access {
                    object,
                    cell,
                    op: AccessOp::Write,
                    ..
                } = kind
                {
                    out.push(AuditViolation {
                        run: run_index,
                        inv,
                        seq: s.seq,
                        reason: format!("wrote {object}[{cell}]"),
                    });
                }
            }
            _ => {}
        }
    }
    checked
}

/// Audits `method` of objects bound as `binding` against the preamble
/// mapping `pm` over `runs` seeded random schedules.
pub fn audit_effect_free(
    binding: Binding,
    method: Method,
    pm: &PreambleMapping,
    runs: u64,
    seed: u64,
) -> Result<AuditReport, ExecError> {
    if !binding.kind.methods().contains(&method) {
        return Err(ExecError::InvalidBinding(
            ObjectError::Unsupported {
                kind: binding.kind,
                method,
            }
            .to_string(),
        ));
    }
    let end = pm
        .end_of(method)
        .map_err(|e| ExecError::InvalidBinding(e.to_string()))?;
    let program = driver_workload(binding.kind);
    let mut violations = Vec::new();
    let mut steps_checked = 0;
    for i in 0..runs {
        let s = crate::exec::hash_pair(seed, i);
        let mut policy = RandomPolicy::new(s);
        let e = run(
            &program,
            &[binding],
            &mut policy,
            RandomTape::Seeded(s),
            100_000,
        )?;
        steps_checked += audit_execution(&e, method, end, i, &mut violations);
    }
    Ok(AuditReport {
        kind: binding.kind,
        method,
        runs,
        steps_checked,
        violations,
    })
}
