//! Finite execution trees and their bounded enumeration.
//!
//! A tree node is an execution prefix at directive granularity: a node's
//! steps are the steps logged by the one directive that extends its parent.
//! Enumeration follows a fixed prefix, then branches over every batched
//! scheduling choice (see [`World::batched_moves`]) up to a depth, taking
//! process-local steps eagerly. Leaves can be extended to quiescence by a
//! fixed deterministic scheduler so that the tree contains whole
//! executions.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Directive, NextAction, World};
use crate::exec::{Action, Execution, Forced, ProcessId, Step, StepKind};
use crate::netsim::Tag;
use crate::objects::Binding;
use crate::progdsl::{workload, Program};
use crate::value::Value;

use super::LinError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub steps: Vec<Step>,
    #[serde(skip)]
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecutionTree {
    pub n: usize,
    pub nodes: Vec<TreeNode>,
}

#[derive(Serialize, Deserialize)]
struct NodeLine {
    node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    steps: Vec<Step>,
}

impl ExecutionTree {
    /// A tree holding only the empty execution.
    pub fn new(n: usize) -> Self {
        ExecutionTree {
            n,
            nodes: vec![TreeNode {
                parent: None,
                steps: Vec::new(),
                children: Vec::new(),
            }],
        }
    }

    /// A single chain: one node per step of `e`.
    pub fn chain(e: &Execution) -> Self {
        let mut t = ExecutionTree::new(e.n);
        let mut cur = 0;
        for s in &e.steps {
            cur = t.add_child(cur, vec![s.clone()]);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_child(&mut self, parent: usize, steps: Vec<Step>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            parent: Some(parent),
            steps,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Node ids from the root down to `i`.
    pub fn path(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut cur = i;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn execution(&self, i: usize) -> Execution {
        let steps = self
            .path(i)
            .into_iter()
            .flat_map(|j| self.nodes[j].steps.iter().cloned())
            .collect();
        Execution::from_steps(self.n, steps)
    }

    pub fn is_ancestor(&self, a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.nodes[b].parent {
                Some(p) => b = p,
                None => return false,
            }
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|i| self.nodes[*i].children.is_empty())
            .collect()
    }

    /// The call/return history of every node, sharing storage between a
    /// node and its parent when the node adds no action.
    pub fn histories(&self) -> Vec<Arc<Vec<Action>>> {
        let mut out: Vec<Arc<Vec<Action>>> = Vec::with_capacity(self.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let base = match node.parent {
                Some(p) => {
                    assert!(p < i, "parents precede children");
                    out[p].clone()
                }
                None => Arc::new(Vec::new()),
            };
            let added: Vec<Action> = node.steps.iter().filter_map(step_action).collect();
            if added.is_empty() {
                out.push(base);
            } else {
                let mut v = (*base).clone();
                v.extend(added);
                out.push(Arc::new(v));
            }
        }
        out
    }

    /// One JSON object per line: `{"node", "parent", "steps"}`; the root
    /// line also carries the process count `n`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let line = NodeLine {
                node: i,
                parent: node.parent,
                n: node.parent.is_none().then_some(self.n),
                steps: node.steps.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("tree nodes serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut t = ExecutionTree::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: NodeLine =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", lineno + 1))?;
            if l.node != t.nodes.len() {
                return Err(format!(
                    "line {}: expected node {}",
                    lineno + 1,
                    t.nodes.len()
                ));
            }
            match l.parent {
                None if l.node == 0 => {
                    t.n = l.n.unwrap_or(0);
                    t.nodes.push(TreeNode {
                        parent: None,
                        steps: l.steps,
                        children: Vec::new(),
                    });
                }
                Some(p) if p < l.node => {
                    t.add_child(p, l.steps);
                }
                _ => return Err(format!("line {}: bad parent", lineno + 1)),
            }
        }
        if t.nodes.is_empty() {
            return Err("empty tree".into());
        }
        Ok(t)
    }
}

pub(crate) fn step_action(s: &Step) -> Option<Action> {
    match (&s.kind, s.inv) {
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
    }
}

/// A scheduling choice named by content rather than message id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Step(ProcessId),
    Deliver {
        object: u32,
        dest: ProcessId,
        from: ProcessId,
        tag: Tag,
    },
}

impl Move {
    /// The matching directive, preferring a message whose delivery still
    /// matters.
    pub fn resolve(&self, w: &World) -> Option<Directive> {
        match *self {
            Move::Step(proc) => w.schedulable(proc).then_some(Directive::Step { proc }),
            Move::Deliver {
                object,
                dest,
                from,
                tag,
            } => {
                let c: Vec<_> = w
                    .net()
                    .in_flight()
                    .iter()
                    .filter(|m| {
                        m.object == object && m.dest == dest && m.sender == from && m.tag() == tag
                    })
                    .collect();
                c.iter()
                    .find(|m| w.is_relevant(m))
                    .or(c.first())
                    .map(|m| Directive::Deliver {
                        proc: dest,
                        msg: m.id,
                    })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeConfig {
    /// Branching depth below the prefix, in batched moves.
    pub depth: usize,
    /// Extend every leaf to quiescence with the first batched move.
    pub complete: bool,
    pub max_nodes: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            depth: 4,
            complete: true,
            max_nodes: 2_000_000,
        }
    }
}

struct Builder {
    tree: ExecutionTree,
    index: BTreeMap<(usize, Directive, i64), usize>,
    config: TreeConfig,
}

impl Builder {
    fn apply(
        &mut self,
        w: &mut World,
        node: usize,
        d: Directive,
        v: i64,
    ) -> Result<usize, LinError> {
        let before = w.steps().len();
        w.apply(d, &mut Forced(v))?;
        if let Some(&c) = self.index.get(&(node, d, v)) {
            return Ok(c);
        }
        if self.tree.len() >= self.config.max_nodes {
            return Err(LinError::TreeTooLarge {
                limit: self.config.max_nodes,
            });
        }
        let c = self.tree.add_child(node, w.steps()[before..].to_vec());
        self.index.insert((node, d, v), c);
        Ok(c)
    }

    /// Applies eager local steps; returns the node reached.
    fn close(&mut self, w: &mut World, mut node: usize) -> Result<usize, LinError> {
        loop {
            let n = w.n() as ProcessId;
            match (0..n).find(|p| w.next_action(*p) == NextAction::Local) {
                Some(proc) => node = self.apply(w, node, Directive::Step { proc }, 0)?,
                None => return Ok(node),
            }
        }
    }

    fn expand(&mut self, w: World, node: usize, depth: usize) -> Result<(), LinError> {
        let mut w = w;
        let node = self.close(&mut w, node)?;
        if w.all_done() {
            return Ok(());
        }
        let n = w.n() as ProcessId;
        if let Some(proc) = (0..n).find(|p| w.next_action(*p) == NextAction::Random) {
            for v in w.random_domain(proc).unwrap_or_default() {
                let mut child = w.clone();
                let c = self.apply(&mut child, node, Directive::Step { proc }, v)?;
                self.expand(child, c, depth)?;
            }
            return Ok(());
        }
        let moves = w.batched_moves();
        if depth == 0 {
            if self.config.complete {
                if let Some(m) = moves.first() {
                    let mut child = w.clone();
                    let mut cur = node;
                    for d in m {
                        cur = self.apply(&mut child, cur, *d, 0)?;
                    }
                    self.expand(child, cur, 0)?;
                }
            }
            return Ok(());
        }
        for m in moves {
            let mut child = w.clone();
            let mut cur = node;
            for d in m {
                cur = self.apply(&mut child, cur, d, 0)?;
            }
            self.expand(child, cur, depth - 1)?;
        }
        Ok(())
    }
}

/// Builds the tree of executions of `program` that start with `prefix`
/// and then branch for `config.depth` batched moves.
pub fn enumerate_tree(
    program: &Program,
    bindings: &[Binding],
    prefix: &[Move],
    config: TreeConfig,
) -> Result<ExecutionTree, LinError> {
    let mut w = World::new(program, bindings)?.with_log();
    let mut b = Builder {
        tree: ExecutionTree::new(w.n()),
        index: BTreeMap::new(),
        config,
    };
    let mut node = 0;
    for (i, m) in prefix.iter().enumerate() {
        let d = m.resolve(&w).ok_or_else(|| {
            LinError::Malformed(format!("prefix move {i} ({m:?}) is not enabled"))
        })?;
        node = b.apply(&mut w, node, d, 0)?;
    }
    b.expand(w, node, config.depth)?;
    Ok(b.tree)
}

/// Two concurrent writers of 0 and 1 and a reader that reads twice, on a
/// register initialized to ⊥.
pub fn race_workload() -> Program {
    workload(
        "race",
        "R",
        Value::Bot,
        &[vec![Some(0)], vec![Some(1)], vec![None, None]],
    )
}

fn step(p: ProcessId, count: usize, out: &mut Vec<Move>) {
    out.extend(std::iter::repeat_n(Move::Step(p), count));
}

fn exchange(client: ProcessId, server: ProcessId, tags: [Tag; 2], out: &mut Vec<Move>) {
    out.push(Move::Deliver {
        object: 0,
        dest: server,
        from: client,
        tag: tags[0],
    });
    out.push(Move::Deliver {
        object: 0,
        dest: client,
        from: server,
        tag: tags[1],
    });
}

/// A prefix of [`race_workload`] over ABD after which the order of the
/// first read and the 0-writer is still open: the 1-writer has returned,
/// while the 0-writer and the first read each hold one reply, from `p0`.
pub fn race_prefix() -> Vec<Move> {
    let q = [Tag::Query, Tag::Reply];
    let u = [Tag::Update, Tag::Ack];
    let mut s = Vec::new();
    step(0, 2, &mut s);
    exchange(0, 0, q, &mut s);
    step(1, 2, &mut s);
    exchange(1, 0, q, &mut s);
    exchange(1, 1, q, &mut s);
    step(1, 2, &mut s);
    step(2, 2, &mut s);
    exchange(2, 0, q, &mut s);
    exchange(1, 0, u, &mut s);
    exchange(1, 1, u, &mut s);
    step(1, 1, &mut s);
    s
}
