//! The timestamp-order linearization of ABD executions.

use std::collections::BTreeMap;

use crate::exec::{Execution, InvocationId, LocalOp, Origin, StepKind};
use crate::objects::{Locals, Method};
use crate::value::{Timestamp, Value};

use super::{LinError, LinOp, Linearization};

struct Inv {
    method: Method,
    arg: Value,
    returned: bool,
    /// (iteration, locals, sequence number) of each finished preamble.
    preambles: Vec<(Option<u32>, Locals, u64)>,
    chosen: Option<u32>,
}

/// Orders the logically-completed invocations of an ABD execution (those
/// whose timestamp is at most that of some returned invocation) by
/// timestamp, a Write before the Reads that share its timestamp, and Reads
/// with equal timestamps in the order they finished their query phase.
///
/// Every invocation must have finished its query phase. For iterated ABD
/// the iteration picked by the object's random step is used.
pub fn abd_canonical_linearization(e: &Execution) -> Result<Linearization, LinError> {
    let mut invs: BTreeMap<InvocationId, Inv> = BTreeMap::new();
    let mut objects: Vec<&str> = Vec::new();
    for s in &e.steps {
        let Some(id) = s.inv else { continue };
        match &s.kind {
            StepKind::Call {
                object,
                method,
                arg,
            } => {
                if !objects.contains(&object.as_str()) {
                    objects.push(object);
                }
                invs.insert(
                    id,
                    Inv {
                        method: *method,
                        arg: arg.clone(),
                        returned: false,
                        preambles: Vec::new(),
                        chosen: None,
                    },
                );
            }
            StepKind::Return { .. } => {
                if let Some(i) = invs.get_mut(&id) {
                    i.returned = true;
                }
            }
            StepKind::Local(LocalOp::PreambleEnd { locals }) => {
                if let Some(i) = invs.get_mut(&id) {
                    i.preambles.push((s.iter, locals.clone(), s.seq));
                }
            }
            StepKind::Random {
                origin: Origin::Object,
                result,
                ..
            } => {
                if let Some(i) = invs.get_mut(&id) {
                    i.chosen = Some(*result as u32);
                }
            }
            _ => {}
        }
    }
    if objects.len() > 1 {
        return Err(LinError::MixedObjects(
            objects.iter().map(|s| s.to_string()).collect(),
        ));
    }
    let mut entries: Vec<(Timestamp, u8, u64, InvocationId, LinOp, bool)> = Vec::new();
    for (id, i) in &invs {
        let pick = match i.chosen {
            Some(j) => i.preambles.iter().find(|p| p.0 == Some(j)),
            None if i.preambles.len() == 1 => i.preambles.first(),
            None => None,
        };
        let Some((_, Locals::Pair { value, ts }, seq)) = pick else {
            return Err(LinError::NotComplete(*id));
        };
        let (ts, order, ret) = match i.method {
            Method::Write => (Timestamp::new(ts.t + 1, id.proc), 0, Value::Unit),
            _ => (*ts, 1, value.clone()),
        };
        entries.push((
            ts,
            order,
            *seq,
            *id,
            LinOp {
                inv: *id,
                method: i.method,
                arg: i.arg.clone(),
                ret,
            },
            i.returned,
        ));
    }
    let Some(bound) = entries.iter().filter(|x| x.5).map(|x| x.0).max() else {
        return Ok(Linearization::default());
    };
    entries.retain(|x| x.0 <= bound);
    entries.sort_by_key(|a| (a.0, a.1, a.2));
    Ok(Linearization {
        ops: entries.into_iter().map(|x| x.4).collect(),
    })
}
