//! Shared objects: kinds, bindings, sequential specifications and preamble
//! mappings. The step-level behaviour of each kind lives in
//! [`crate::engine`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Timestamp, Value};

mod audit;

pub use audit::{audit_effect_free, AuditReport, AuditViolation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObjectError {
    #[error("k must be at least 1, got {0}")]
    NonPositiveK(i64),
    #[error("method {0} has no control point in the preamble mapping")]
    UnknownMethod(Method),
    #[error("method {method} is not supported by {kind}")]
    Unsupported { kind: ObjectKind, method: Method },
    #[error("unknown object kind `{0}`")]
    UnknownKind(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Read,
    Write,
    Scan,
    Update,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Read => "Read",
            Method::Write => "Write",
            Method::Scan => "Scan",
            Method::Update => "Update",
        };
        f.write_str(s)
    }
}

impl Method {
    pub fn is_mutator(self) -> bool {
        matches!(self, Method::Write | Method::Update)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    /// A linearizable register whose methods take effect in one step.
    Atomic,
    /// Multi-writer ABD register over a message-passing network.
    Abd,
    /// Single-writer-cell atomic snapshot from atomic registers.
    Snapshot,
    /// Vitányi–Awerbuch multi-writer register from single-writer registers.
    Va,
    /// Israeli–Li single-writer register from single-reader registers.
    Il,
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObjectKind::Atomic => "atomic",
            ObjectKind::Abd => "abd",
            ObjectKind::Snapshot => "snapshot",
            ObjectKind::Va => "va",
            ObjectKind::Il => "il",
        };
        f.write_str(s)
    }
}

impl FromStr for ObjectKind {
    type Err = ObjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "atomic" => Ok(ObjectKind::Atomic),
            "abd" => Ok(ObjectKind::Abd),
            "snapshot" => Ok(ObjectKind::Snapshot),
            "va" => Ok(ObjectKind::Va),
            "il" => Ok(ObjectKind::Il),
            other => Err(ObjectError::UnknownKind(other.to_string())),
        }
    }
}

impl ObjectKind {
    /// Method invoked by a program `write`.
    pub fn write_method(self) -> Method {
        match self {
            ObjectKind::Snapshot => Method::Update,
            _ => Method::Write,
        }
    }

    /// Method invoked by a program `read`.
    pub fn read_method(self) -> Method {
        match self {
            ObjectKind::Snapshot => Method::Scan,
            _ => Method::Read,
        }
    }

    pub fn methods(self) -> [Method; 2] {
        [self.read_method(), self.write_method()]
    }

    pub fn return_site(self) -> u32 {
        match self {
            ObjectKind::Atomic => sites::atomic::RETURN,
            ObjectKind::Abd => sites::abd::RETURN,
            ObjectKind::Snapshot => sites::snapshot::RETURN,
            ObjectKind::Va => sites::va::RETURN,
            ObjectKind::Il => sites::il::RETURN,
        }
    }
}

/// Method control points. Every method starts at `CALL = 0`.
pub mod sites {
    pub mod atomic {
        pub const CALL: u32 = 0;
        pub const ACCESS: u32 = 1;
        pub const RETURN: u32 = 2;
    }

    pub mod abd {
        pub const CALL: u32 = 0;
        pub const QUERY_SEND: u32 = 1;
        /// Assignment of the query phase result; end of the declared preamble.
        pub const QUERY_DONE: u32 = 2;
        pub const CHOOSE: u32 = 3;
        pub const UPDATE_SEND: u32 = 4;
        pub const RETURN: u32 = 5;
        pub const REPLY_RECV: u32 = 6;
        pub const ACK_RECV: u32 = 7;
        pub const QUERY_HANDLER: u32 = 8;
        pub const UPDATE_HANDLER: u32 = 9;
    }

    pub mod va {
        pub const CALL: u32 = 0;
        pub const COLLECT: u32 = 1;
        pub const PRE_END: u32 = 2;
        pub const CHOOSE: u32 = 3;
        pub const WRITE: u32 = 4;
        pub const RETURN: u32 = 5;
    }

    pub mod il {
        pub const CALL: u32 = 0;
        pub const READ_VAL: u32 = 1;
        pub const READ_REPORT: u32 = 2;
        pub const PRE_END: u32 = 3;
        pub const CHOOSE: u32 = 4;
        pub const WRITE_VAL: u32 = 5;
        pub const WRITE_REPORT: u32 = 6;
        pub const RETURN: u32 = 7;
    }

    pub mod snapshot {
        pub const CALL: u32 = 0;
        pub const COLLECT: u32 = 1;
        pub const PRE_END: u32 = 2;
        pub const CHOOSE: u32 = 3;
        pub const WRITE: u32 = 4;
        pub const RETURN: u32 = 5;
    }
}

/// How a program object name is implemented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub kind: ObjectKind,
    /// Number of preamble iterations; `None` runs the plain method.
    pub k: Option<u32>,
    /// Snapshot only: the Update preamble extends to the end of its scan.
    pub extended_update: bool,
    /// Israeli–Li only: the single writer.
    pub writer: u32,
}

impl Binding {
    pub fn plain(kind: ObjectKind) -> Self {
        Binding {
            kind,
            k: None,
            extended_update: false,
            writer: 0,
        }
    }

    /// The preamble-iterated version with `k` iterations.
    pub fn iterated(kind: ObjectKind, k: i64) -> Result<Self, ObjectError> {
        if k < 1 {
            return Err(ObjectError::NonPositiveK(k));
        }
        Ok(Binding {
            k: Some(k as u32),
            ..Binding::plain(kind)
        })
    }

    pub fn with_writer(mut self, writer: u32) -> Self {
        self.writer = writer;
        self
    }

    pub fn with_extended_update(mut self, on: bool) -> Self {
        self.extended_update = on;
        self
    }

    pub fn declared_preambles(&self) -> PreambleMapping {
        PreambleMapping::declared(self.kind, self.extended_update)
    }
}

/// The local variables a preamble hands to the tail.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locals {
    Empty,
    /// A value and its timestamp (ABD, Vitányi–Awerbuch).
    Pair {
        value: Value,
        ts: Timestamp,
    },
    /// A value and its sequence number (Israeli–Li).
    Seq {
        value: Value,
        seq: u64,
    },
    /// A snapshot view.
    View {
        view: Vec<Value>,
    },
}

impl Locals {
    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Locals::Empty => out.push(0),
            Locals::Pair { value, ts } => {
                out.push(1);
                value.encode(out);
                out.extend_from_slice(&ts.t.to_le_bytes());
                out.extend_from_slice(&ts.pid.to_le_bytes());
            }
            Locals::Seq { value, seq } => {
                out.push(2);
                value.encode(out);
                out.extend_from_slice(&seq.to_le_bytes());
            }
            Locals::View { view } => {
                out.push(3);
                Value::Vector(view.clone()).encode(out);
            }
        }
    }
}

/// Maps each method to the control point ending its preamble.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreambleMapping {
    pub ends: BTreeMap<Method, u32>,
}

impl PreambleMapping {
    pub fn from_pairs(pairs: &[(Method, u32)]) -> Self {
        PreambleMapping {
            ends: pairs.iter().copied().collect(),
        }
    }

    /// Every method's preamble is empty.
    pub fn initial() -> Self {
        Self::from_pairs(&[
            (Method::Read, 0),
            (Method::Write, 0),
            (Method::Scan, 0),
            (Method::Update, 0),
        ])
    }

    /// Every method is entirely preamble.
    pub fn full(kind: ObjectKind) -> Self {
        let r = kind.return_site();
        let [a, b] = kind.methods();
        Self::from_pairs(&[(a, r), (b, r)])
    }

    /// The effect-free preambles each implementation declares.
    pub fn declared(kind: ObjectKind, extended_update: bool) -> Self {
        use sites::*;
        match kind {
            ObjectKind::Atomic => Self::from_pairs(&[(Method::Read, 0), (Method::Write, 0)]),
            ObjectKind::Abd => Self::from_pairs(&[
                (Method::Read, abd::QUERY_DONE),
                (Method::Write, abd::QUERY_DONE),
            ]),
            ObjectKind::Va => {
                Self::from_pairs(&[(Method::Read, va::PRE_END), (Method::Write, va::PRE_END)])
            }
            ObjectKind::Il => Self::from_pairs(&[(Method::Read, il::PRE_END), (Method::Write, 0)]),
            ObjectKind::Snapshot => Self::from_pairs(&[
                (Method::Scan, snapshot::PRE_END),
                (
                    Method::Update,
                    if extended_update {
                        snapshot::PRE_END
                    } else {
                        0
                    },
                ),
            ]),
        }
    }

    pub fn end_of(&self, m: Method) -> Result<u32, ObjectError> {
        self.ends
            .get(&m)
            .copied()
            .ok_or(ObjectError::UnknownMethod(m))
    }

    /// True when the method's preamble ends at its first step.
    pub fn is_empty_for(&self, m: Method) -> bool {
        self.ends.get(&m) == Some(&0)
    }
}

/// Sequential specifications as transition functions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectSpec {
    /// Reads return the last written value, or `init`.
    Register { init: Value },
    /// `Update` by process `i` sets component `i`; `Scan` returns the vector.
    Snapshot { n: usize, init: Value },
}

impl ObjectSpec {
    pub fn for_kind(kind: ObjectKind, n: usize, init: Value) -> Self {
        match kind {
            ObjectKind::Snapshot => ObjectSpec::Snapshot { n, init },
            _ => ObjectSpec::Register { init },
        }
    }

    pub fn initial_state(&self) -> Value {
        match self {
            ObjectSpec::Register { init } => init.clone(),
            ObjectSpec::Snapshot { n, init } => Value::Vector(vec![init.clone(); *n]),
        }
    }

    /// Applies one operation, returning the next state and the return value.
    pub fn apply(
        &self,
        state: &Value,
        proc: u32,
        method: Method,
        arg: &Value,
    ) -> Result<(Value, Value), ObjectError> {
        match (self, method) {
            (ObjectSpec::Register { .. }, Method::Write) => Ok((arg.clone(), Value::Unit)),
            (ObjectSpec::Register { .. }, Method::Read) => Ok((state.clone(), state.clone())),
            (ObjectSpec::Snapshot { .. }, Method::Scan) => Ok((state.clone(), state.clone())),
            (ObjectSpec::Snapshot { n, .. }, Method::Update) => {
                let mut v = match state {
                    Value::Vector(v) => v.clone(),
                    _ => vec![Value::Bot; *n],
                };
                if let Some(slot) = v.get_mut(proc as usize) {
                    *slot = arg.clone();
                }
                Ok((Value::Vector(v), Value::Unit))
            }
            (ObjectSpec::Register { .. }, m) => Err(ObjectError::Unsupported {
                kind: ObjectKind::Atomic,
                method: m,
            }),
            (ObjectSpec::Snapshot { .. }, m) => Err(ObjectError::Unsupported {
                kind: ObjectKind::Snapshot,
                method: m,
            }),
        }
    }
}
