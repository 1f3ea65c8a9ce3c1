//! Event X: every object random step picks a preamble iteration that no
//! program random step falls inside.

use serde::{Deserialize, Serialize};

use crate::exec::{Execution, InvocationId, Origin, StepKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub inv: InvocationId,
    pub chosen: i64,
    /// Sequence numbers of program random steps strictly inside the chosen
    /// iteration.
    pub overlapping: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventXWitness {
    pub choices: Vec<Choice>,
    pub holds: bool,
}

impl EventXWitness {
    pub fn of(e: &Execution) -> Self {
        let program_random: Vec<u64> = e
            .steps
            .iter()
            .filter(|s| {
                matches!(
                    s.kind,
                    StepKind::Random {
                        origin: Origin::Program,
                        ..
                    }
                )
            })
            .map(|s| s.seq)
            .collect();
        let mut choices = Vec::new();
        for s in &e.steps {
            let (
                StepKind::Random {
                    origin: Origin::Object,
                    result,
                    ..
                },
                Some(inv),
            ) = (&s.kind, s.inv)
            else {
                continue;
            };
            let span = e
                .steps
                .iter()
                .filter(|t| t.inv == Some(inv) && t.iter == Some(*result as u32))
                .map(|t| t.seq)
                .fold(None, |acc: Option<(u64, u64)>, q| match acc {
                    None => Some((q, q)),
                    Some((a, b)) => Some((a.min(q), b.max(q))),
                });
            let overlapping = match span {
                Some((first, last)) => program_random
                    .iter()
                    .copied()
                    .filter(|q| first < *q && *q < last)
                    .collect(),
                None => Vec::new(),
            };
            choices.push(Choice {
                inv,
                chosen: *result,
                overlapping,
            });
        }
        let holds = choices.iter().all(|c| c.overlapping.is_empty());
        EventXWitness { choices, holds }
    }
}

pub fn event_x_holds(e: &Execution) -> bool {
    EventXWitness::of(e).holds
}
