use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blunt_core::exec::{parse_jsonl, Action, Execution, History};
use blunt_core::lincheck::{
    check_linearizable, check_strong_linearizable, check_tail_strong, ExecutionTree, VerdictRecord,
};
use blunt_core::objects::{ObjectSpec, PreambleMapping};
use blunt_core::value::Value;
use serde_json::json;

use crate::config::{object_kind, parse_value, write_or_print};
use crate::{CheckArgs, CheckMode, PreambleArg};

/// Initial values: a default for every object plus per-name overrides.
struct Inits {
    default: Value,
    named: BTreeMap<String, Value>,
}

impl Inits {
    fn parse(items: &[String]) -> Result<Inits> {
        let mut out = Inits {
            default: Value::Bot,
            named: BTreeMap::new(),
        };
        for item in items {
            match item.split_once('=') {
                Some((name, v)) => {
                    out.named.insert(name.trim().to_string(), parse_value(v)?);
                }
                None => out.default = parse_value(item)?,
            }
        }
        Ok(out)
    }

    fn get(&self, name: &str) -> Value {
        self.named.get(name).unwrap_or(&self.default).clone()
    }
}

enum Input {
    Execution(Execution),
    Tree(ExecutionTree),
}

fn read_input(path: &Path) -> Result<Input> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_tree = match first {
        Some(l) => serde_json::from_str::<serde_json::Value>(l)
            .map(|v| v.get("node").is_some())
            .unwrap_or(false),
        None => false,
    };
    if is_tree {
        let t = ExecutionTree::from_jsonl(&text)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(Input::Tree(t))
    } else {
        let steps = parse_jsonl(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let n = steps.iter().map(|s| s.proc as usize + 1).max().unwrap_or(0);
        Ok(Input::Execution(Execution::from_steps(n, steps)))
    }
}

fn single_object(objects: &[String], path: &Path) -> Result<String> {
    match objects {
        [one] => Ok(one.clone()),
        [] => Ok(String::new()),
        many => bail!(
            "{}: strong checks need a single object, found {}",
            path.display(),
            many.join(", ")
        ),
    }
}

fn tree_objects(t: &ExecutionTree) -> Vec<String> {
    let mut names = std::collections::BTreeSet::new();
    for h in t.histories() {
        for a in h.iter() {
            names.insert(a.object().to_string());
        }
    }
    names.into_iter().collect()
}

/// Linearizability of every distinct history; the witness names the first
/// failing history and object.
fn check_all_linearizable(
    histories: &[Arc<Vec<Action>>],
    spec_of: &dyn Fn(&str) -> ObjectSpec,
) -> Result<Option<serde_json::Value>> {
    let mut seen = HashSet::new();
    for (node, h) in histories.iter().enumerate() {
        if !seen.insert(Arc::as_ptr(h)) {
            continue;
        }
        let h = History {
            actions: h.to_vec(),
        };
        for name in h.objects() {
            let part = h.restrict(&name);
            if !check_linearizable(&part, &spec_of(&name))?.linearizable {
                return Ok(Some(
                    json!({ "node": node, "object": name, "history": part }),
                ));
            }
        }
    }
    Ok(None)
}

/// Writes one verdict record per input; returns true iff all inputs pass.
pub fn cmd_check(args: CheckArgs) -> Result<bool> {
    let kind = object_kind(args.object);
    let inits = Inits::parse(&args.init)?;
    let pm = match args.preamble {
        PreambleArg::Declared => PreambleMapping::declared(kind, false),
        PreambleArg::Initial => PreambleMapping::initial(),
        PreambleArg::Full => PreambleMapping::full(kind),
    };
    let mode = match args.mode {
        CheckMode::Lin => "lin",
        CheckMode::Strong => "strong",
        CheckMode::Tail => "tail",
    };
    let mut out = String::new();
    let mut all_pass = true;
    for path in &args.inputs {
        let tree = match read_input(path)? {
            Input::Execution(e) => ExecutionTree::chain(&e),
            Input::Tree(t) => t,
        };
        let n = tree.n;
        let spec_of = |name: &str| ObjectSpec::for_kind(kind, n, inits.get(name));
        let (verdict, witness) = match args.mode {
            CheckMode::Lin => {
                let w = check_all_linearizable(&tree.histories(), &spec_of)?;
                (w.is_none(), w)
            }
            CheckMode::Strong | CheckMode::Tail => {
                let name = single_object(&tree_objects(&tree), path)?;
                let spec = spec_of(&name);
                let v = if args.mode == CheckMode::Strong {
                    check_strong_linearizable(&tree, &spec)?
                } else {
                    check_tail_strong(&tree, &spec, &pm)?
                };
                let ok = v.holds && v.all_linearizable;
                let w = match (&v.witness, v.all_linearizable) {
                    (Some(w), _) => Some(serde_json::to_value(w)?),
                    (None, false) => check_all_linearizable(&tree.histories(), &spec_of)?,
                    (None, true) => None,
                };
                (ok, if ok { None } else { w })
            }
        };
        all_pass &= verdict;
        let rec = VerdictRecord {
            input: path.display().to_string(),
            mode: mode.to_string(),
            verdict,
            witness,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write_or_print(args.out.as_deref(), &out)?;
    Ok(all_pass)
}
