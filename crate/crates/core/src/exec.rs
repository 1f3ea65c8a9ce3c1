//! Executions, histories and outcomes, plus the JSON-lines event format.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netsim::{Message, NetError};
use crate::objects::{Locals, Method, PreambleMapping};
use crate::value::Value;

pub type ProcessId = u32;

/// Identifies an invocation by process, program control point and how many
/// times that control point was visited before.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub struct InvocationId {
    pub proc: ProcessId,
    pub site: u32,
    pub occ: u32,
}

impl fmt::Display for InvocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}@{}#{}", self.proc, self.site, self.occ)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("random tape exhausted at entry {0}")]
    TapeExhausted(usize),
    #[error("tape value {value} is outside the requested domain {domain:?}")]
    TapeOutOfDomain { value: i64, domain: Vec<i64> },
    #[error("step budget of {0} directives exceeded")]
    BudgetExceeded(u64),
    #[error("illegal directive {directive}: {reason}")]
    PolicyIllegalDirective { directive: String, reason: String },
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("invalid invocation: {0}")]
    InvalidInvocation(String),
    #[error("invalid binding: {0}")]
    InvalidBinding(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Program,
    Object,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessOp {
    Read,
    Write,
}

/// What a delivered message did at its destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    /// A server answered a query.
    Replied,
    /// A server adopted a newer value and acknowledged.
    Adopted,
    /// A server kept its value and acknowledged.
    Kept,
    /// A client counted a reply or ack toward its current phase.
    Counted,
    /// A client dropped a reply or ack from a finished phase.
    Stale,
}

impl Effect {
    /// True when the handler changed the receiving server's persistent state.
    pub fn mutates_server(self) -> bool {
        self == Effect::Adopted
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalOp {
    Assign {
        var: String,
        value: Value,
    },
    Branch {
        taken: bool,
    },
    Terminate,
    Loop,
    /// End of a method's preamble with the locals it produced.
    PreambleEnd {
        locals: Locals,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum StepKind {
    Local(LocalOp),
    Random {
        domain: Vec<i64>,
        result: i64,
        origin: Origin,
    },
    Call {
        object: String,
        method: Method,
        arg: Value,
    },
    Return {
        object: String,
        method: Method,
        value: Value,
    },
    Send {
        msg: Message,
    },
    Deliver {
        msg: Message,
        effect: Effect,
    },
    Access {
        object: String,
        cell: String,
        op: AccessOp,
        value: Value,
    },
}

/// One labeled transition. `site` is a program control point for program
/// steps and a method control point for steps inside an object method.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub seq: u64,
    pub proc: ProcessId,
    pub inv: Option<InvocationId>,
    pub site: u32,
    #[serde(flatten)]
    pub kind: StepKind,
    /// Preamble iteration (1-based) for steps inside an iterated preamble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iter: Option<u32>,
}

impl Step {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("steps always serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Terminated,
    LoopForever,
    Blocked,
}

/// Returned values keyed by invocation, sorted by id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Returns(Vec<(InvocationId, Value)>);

impl Returns {
    pub fn from_pairs(mut pairs: Vec<(InvocationId, Value)>) -> Self {
        pairs.sort_by_key(|(id, _)| *id);
        Returns(pairs)
    }

    pub fn get(&self, id: &InvocationId) -> Option<&Value> {
        self.0
            .binary_search_by_key(id, |(i, _)| *i)
            .ok()
            .map(|i| &self.0[i].1)
    }

    pub fn insert(&mut self, id: InvocationId, v: Value) {
        match self.0.binary_search_by_key(&id, |(i, _)| *i) {
            Ok(i) => self.0[i].1 = v,
            Err(i) => self.0.insert(i, (id, v)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(InvocationId, Value)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for (id, v) in &self.0 {
            out.extend_from_slice(&id.proc.to_le_bytes());
            out.extend_from_slice(&id.site.to_le_bytes());
            out.extend_from_slice(&id.occ.to_le_bytes());
            v.encode(out);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub returns: Returns,
    pub terminal: Vec<Terminal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapeEntry {
    pub origin: Origin,
    pub domain: Vec<i64>,
    pub value: i64,
}

/// Source of random values, consumed in order by random steps of either
/// origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomTape {
    /// Explicit values; each must lie in the domain requested when consumed.
    Fixed(Vec<i64>),
    /// Entry `j` picks `domain[h mod |domain|]` where `h` is the first eight
    /// bytes (little-endian) of SHA-256 over the seed and `j`, both as
    /// little-endian u64.
    Seeded(u64),
}

impl RandomTape {
    pub fn seeded_index(seed: u64, j: u64, len: usize) -> usize {
        (hash_pair(seed, j) % len as u64) as usize
    }
}

/// First eight bytes, little-endian, of SHA-256(a LE || b LE).
pub fn hash_pair(a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub trait RandomSource {
    fn draw(&mut self, domain: &[i64], origin: Origin) -> Result<i64, ExecError>;
}

/// Reads a [`RandomTape`] front to back.
#[derive(Clone, Debug)]
pub struct TapeReader {
    tape: RandomTape,
    pos: usize,
}

impl TapeReader {
    pub fn new(tape: RandomTape) -> Self {
        TapeReader { tape, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

impl RandomSource for TapeReader {
    fn draw(&mut self, domain: &[i64], _origin: Origin) -> Result<i64, ExecError> {
        let v = match &self.tape {
            RandomTape::Fixed(vals) => {
                let v = *vals
                    .get(self.pos)
                    .ok_or(ExecError::TapeExhausted(self.pos))?;
                if !domain.contains(&v) {
                    return Err(ExecError::TapeOutOfDomain {
                        value: v,
                        domain: domain.to_vec(),
                    });
                }
                v
            }
            RandomTape::Seeded(seed) => {
                domain[RandomTape::seeded_index(*seed, self.pos as u64, domain.len())]
            }
        };
        self.pos += 1;
        Ok(v)
    }
}

/// Always answers with a fixed value; used to expand chance nodes.
pub(crate) struct Forced(pub i64);

impl RandomSource for Forced {
    fn draw(&mut self, _domain: &[i64], _origin: Origin) -> Result<i64, ExecError> {
        Ok(self.0)
    }
}

/// Per-process state at the end of an execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcFinal {
    pub status: Option<Terminal>,
    pub vars: Vec<(String, Value)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub n: usize,
    pub steps: Vec<Step>,
    pub procs: Vec<ProcFinal>,
    pub tape: Vec<TapeEntry>,
    pub directives: Vec<crate::engine::Directive>,
}

impl Execution {
    /// An execution holding only `steps`; final states are unknown.
    pub fn from_steps(n: usize, steps: Vec<Step>) -> Self {
        Execution {
            n,
            steps,
            procs: Vec::new(),
            tape: Vec::new(),
            directives: Vec::new(),
        }
    }

    pub fn prefix(&self, len: usize) -> Execution {
        Execution::from_steps(self.n, self.steps[..len.min(self.steps.len())].to_vec())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&s.to_json());
            out.push('\n');
        }
        out
    }
}

/// Parses JSON lines into steps, naming the failing line on error.
pub fn parse_jsonl(text: &str) -> Result<Vec<Step>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Call {
        inv: InvocationId,
        object: String,
        method: Method,
        arg: Value,
    },
    Return {
        inv: InvocationId,
        object: String,
        method: Method,
        value: Value,
    },
}

impl Action {
    pub fn inv(&self) -> InvocationId {
        match self {
            Action::Call { inv, .. } | Action::Return { inv, .. } => *inv,
        }
    }

    pub fn object(&self) -> &str {
        match self {
            Action::Call { object, .. } | Action::Return { object, .. } => object,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub actions: Vec<Action>,
}

impl History {
    /// Actions on one object only.
    pub fn restrict(&self, object: &str) -> History {
        History {
            actions: self
                .actions
                .iter()
                .filter(|a| a.object() == object)
                .cloned()
                .collect(),
        }
    }

    pub fn objects(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for a in &self.actions {
            if !names.iter().any(|n| n == a.object()) {
                names.push(a.object().to_string());
            }
        }
        names
    }
}

pub fn project_history(e: &Execution) -> History {
    let actions = e
        .steps
        .iter()
        .filter_map(|s| match (&s.kind, s.inv) {
            (
                StepKind::Call {
                    object,
                    method,
                    arg,
                },
                Some(inv),
            ) => Some(Action::Call {
                inv,
                object: object.clone(),
                method: *method,
                arg: arg.clone(),
            }),
            (
                StepKind::Return {
                    object,
                    method,
                    value,
                },
                Some(inv),
            ) => Some(Action::Return {
                inv,
                object: object.clone(),
                method: *method,
                value: value.clone(),
            }),
            _ => None,
        })
        .collect();
    History { actions }
}

pub fn outcome_of(e: &Execution) -> Outcome {
    let mut returns = Returns::default();
    let mut terminal = vec![Terminal::Blocked; e.n];
    for s in &e.steps {
        match (&s.kind, s.inv) {
            (StepKind::Return { value, .. }, Some(inv)) => returns.insert(inv, value.clone()),
            (StepKind::Local(LocalOp::Terminate), _) => {
                terminal[s.proc as usize] = Terminal::Terminated
            }
            (StepKind::Local(LocalOp::Loop), _) => {
                terminal[s.proc as usize] = Terminal::LoopForever
            }
            _ => {}
        }
    }
    Outcome { returns, terminal }
}

/// True iff every invoked method has a step at its preamble-end control
/// point.
pub fn is_complete_wrt(
    e: &Execution,
    pm: &PreambleMapping,
) -> Result<bool, crate::objects::ObjectError> {
    let mut pending: Vec<(InvocationId, u32)> = Vec::new();
    for s in &e.steps {
        let Some(inv) = s.inv else { continue };
        if let StepKind::Call { method, .. } = &s.kind {
            pending.push((inv, pm.end_of(*method)?));
        }
        if let Some(i) = pending
            .iter()
            .position(|(id, site)| *id == inv && *site == s.site)
        {
            pending.swap_remove(i);
        }
    }
    Ok(pending.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_tape_is_deterministic_and_in_domain() {
        let mut a = TapeReader::new(RandomTape::Seeded(9));
        let mut b = TapeReader::new(RandomTape::Seeded(9));
        for _ in 0..50 {
            let x = a.draw(&[3, 4, 5], Origin::Program).unwrap();
            assert_eq!(x, b.draw(&[3, 4, 5], Origin::Program).unwrap());
            assert!((3..=5).contains(&x));
        }
    }

    #[test]
    fn fixed_tape_errors() {
        let mut t = TapeReader::new(RandomTape::Fixed(vec![1, 7]));
        assert_eq!(t.draw(&[0, 1], Origin::Program), Ok(1));
        assert!(matches!(
            t.draw(&[0, 1], Origin::Object),
            Err(ExecError::TapeOutOfDomain { value: 7, .. })
        ));
        let mut t = TapeReader::new(RandomTape::Fixed(vec![]));
        assert_eq!(
            t.draw(&[0, 1], Origin::Program),
            Err(ExecError::TapeExhausted(0))
        );
    }

    #[test]
    fn empty_execution_outcome() {
        let e = Execution::from_steps(3, vec![]);
        let o = outcome_of(&e);
        assert!(o.returns.is_empty());
        assert_eq!(o.terminal, vec![Terminal::Blocked; 3]);
        assert!(project_history(&e).actions.is_empty());
        assert!(is_complete_wrt(&e, &PreambleMapping::initial()).unwrap());
    }

    #[test]
    fn local_only_execution_has_empty_history() {
        let s = Step {
            seq: 0,
            proc: 0,
            inv: None,
            site: 0,
            kind: StepKind::Local(LocalOp::Assign {
                var: "x".into(),
                value: Value::Int(1),
            }),
            iter: None,
        };
        let e = Execution::from_steps(1, vec![s]);
        assert!(project_history(&e).actions.is_empty());
    }

    #[test]
    fn step_json_round_trip() {
        let s = Step {
            seq: 4,
            proc: 1,
            inv: Some(InvocationId {
                proc: 1,
                site: 2,
                occ: 0,
            }),
            site: 3,
            kind: StepKind::Random {
                domain: vec![1, 2],
                result: 2,
                origin: Origin::Object,
            },
            iter: Some(2),
        };
        let line = s.to_json();
        let back: Step = serde_json::from_str(&line).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), line);
        assert!(line.starts_with(r#"{"seq":4,"proc":1,"inv":{"proc":1,"site":2,"occ":0},"site":3,"kind":"random","payload":"#));
    }
}
