use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blunt_core::objects::{Binding, ObjectKind};
use blunt_core::progdsl::{weakener, weakener_bad, BadPredicate, FnPredicate, Program};
use blunt_core::value::Value;

use crate::{BadArg, ObjectArg};

pub fn load_program(spec: &str) -> Result<Program> {
    if spec == "weakener" {
        return Ok(weakener());
    }
    let text =
        std::fs::read_to_string(spec).with_context(|| format!("reading program file {spec}"))?;
    Program::parse(&text).with_context(|| format!("parsing program file {spec}"))
}

pub fn object_kind(o: ObjectArg) -> ObjectKind {
    match o {
        ObjectArg::Atomic => ObjectKind::Atomic,
        ObjectArg::Abd | ObjectArg::AbdK => ObjectKind::Abd,
        ObjectArg::Snapshot => ObjectKind::Snapshot,
        ObjectArg::Va => ObjectKind::Va,
        ObjectArg::Il => ObjectKind::Il,
    }
}

/// The binding for `--object` and `--k`. `abd-k` needs `k`; other kinds are
/// iterated only when `k` is given.
pub fn binding(o: ObjectArg, k: Option<i64>) -> Result<Binding> {
    let kind = object_kind(o);
    let k = match (o, k) {
        (ObjectArg::AbdK, None) => bail!("--object abd-k requires --k"),
        (_, k) => k,
    };
    Ok(match k {
        Some(k) => Binding::iterated(kind, k)?,
        None => Binding::plain(kind),
    })
}

pub fn bad_predicate(b: BadArg) -> Arc<dyn BadPredicate> {
    match b {
        BadArg::Weakener => Arc::new(weakener_bad()),
        BadArg::None => Arc::new(FnPredicate::new("never", |_: &_| false)),
    }
}

/// `BLUNT_SEED`, when set, overrides the seed given on the command line.
pub fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var("BLUNT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .with_context(|| format!("BLUNT_SEED={s} is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

/// Parses a value as JSON; `bot` is accepted for ⊥.
pub fn parse_value(s: &str) -> Result<Value> {
    let s = s.trim();
    if s == "bot" {
        return Ok(Value::Bot);
    }
    serde_json::from_str(s).with_context(|| format!("`{s}` is not a value"))
}

pub fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abd_k_needs_k() {
        assert!(binding(ObjectArg::AbdK, None).is_err());
        let b = binding(ObjectArg::AbdK, Some(2)).unwrap();
        assert_eq!((b.kind, b.k), (ObjectKind::Abd, Some(2)));
        assert!(binding(ObjectArg::Abd, Some(0)).is_err());
    }

    #[test]
    fn values() {
        assert_eq!(parse_value("null").unwrap(), Value::Bot);
        assert_eq!(parse_value("bot").unwrap(), Value::Bot);
        assert_eq!(parse_value("-1").unwrap(), Value::Int(-1));
        assert!(parse_value("x").is_err());
    }
}
