//! Values carried by registers, snapshots and messages.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A value stored in a shared object or returned by an invocation.
///
/// JSON encoding: `Bot` is `null`, `Unit` is the string `"ok"`, integers are
/// numbers and vectors are arrays.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Value {
    /// The initial "no value written yet" marker.
    #[default]
    Bot,
    /// Return value of methods with no result (writes, updates).
    Unit,
    Int(i64),
    /// Snapshot views.
    Vector(Vec<Value>),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn is_bot(&self) -> bool {
        matches!(self, Value::Bot)
    }

    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Value::Bot => out.push(0),
            Value::Unit => out.push(1),
            Value::Int(i) => {
                out.push(2);
                out.extend_from_slice(&i.to_le_bytes());
            }
            Value::Vector(vs) => {
                out.push(3);
                out.extend_from_slice(&(vs.len() as u32).to_le_bytes());
                for v in vs {
                    v.encode(out);
                }
            }
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bot => write!(f, "⊥"),
            Value::Unit => write!(f, "ok"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Vector(vs) => {
                write!(f, "[")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Bot => s.serialize_none(),
            Value::Unit => s.serialize_str("ok"),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Vector(vs) => vs.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        Value::from_json(&raw).map_err(serde::de::Error::custom)
    }
}

impl Value {
    fn from_json(raw: &serde_json::Value) -> Result<Value, String> {
        match raw {
            serde_json::Value::Null => Ok(Value::Bot),
            serde_json::Value::String(s) if s == "ok" => Ok(Value::Unit),
            serde_json::Value::Number(n) => n
                .as_i64()
                .map(Value::Int)
                .ok_or_else(|| format!("value {n} is not a 64-bit integer")),
            serde_json::Value::Array(items) => items
                .iter()
                .map(Value::from_json)
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Vector),
            other => Err(format!("unsupported value encoding {other}")),
        }
    }
}

/// An `(integer, process id)` pair ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp {
    pub t: u64,
    pub pid: u32,
}

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp { t: 0, pid: 0 };

    pub fn new(t: u64, pid: u32) -> Self {
        Timestamp { t, pid }
    }

    /// Strict lexicographic comparison on `(t, pid)`.
    pub fn less(&self, other: &Timestamp) -> bool {
        self < other
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.t, self.pid).cmp(&(other.t, other.pid))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.t, self.pid)
    }
}

/// Free-function form of [`Timestamp::less`].
pub fn ts_less(a: Timestamp, b: Timestamp) -> bool {
    a.less(&b)
}
