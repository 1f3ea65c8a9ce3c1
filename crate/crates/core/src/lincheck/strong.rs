//! Strong and tail strong linearizability of finite execution trees.
//!
//! The search assigns a linearization to every node, top down, so that a
//! child's linearization extends its parent's. Without loss of generality a
//! node's linearization ends with an operation that has returned at that
//! node (any suffix of pending operations can be postponed to the
//! descendants that need it), so each child only has a handful of
//! candidate extensions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::{Action, History, InvocationId, StepKind};
use crate::objects::{ObjectSpec, PreambleMapping};
use crate::value::Value;

use super::tree::ExecutionTree;
use super::{check_linearizable, operations, real_time, HOp, LinError, LinOp, Linearization};

/// A tree over histories: the shape the checkers work on.
struct HTree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    hist: Vec<Arc<Vec<Action>>>,
    /// Node id in the source execution tree.
    source: Vec<usize>,
}

impl HTree {
    fn from_tree(t: &ExecutionTree, hist: Vec<Arc<Vec<Action>>>, keep: &[bool]) -> HTree {
        let mut id = vec![usize::MAX; t.len()];
        let mut anchor = vec![None; t.len()];
        let mut h = HTree {
            parent: Vec::new(),
            children: Vec::new(),
            hist: Vec::new(),
            source: Vec::new(),
        };
        for i in 0..t.len() {
            let up = t.nodes[i]
                .parent
                .and_then(|p| if keep[p] { Some(id[p]) } else { anchor[p] });
            anchor[i] = up;
            if keep[i] {
                let me = h.parent.len();
                id[i] = me;
                h.parent.push(up);
                h.children.push(Vec::new());
                h.hist.push(hist[i].clone());
                h.source.push(i);
                if let Some(p) = up {
                    h.children[p].push(me);
                }
            }
        }
        h
    }

    fn roots(&self) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|i| self.parent[*i].is_none())
            .collect()
    }

    fn is_ancestor(&self, a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.parent[b] {
                Some(p) => b = p,
                None => return false,
            }
        }
    }
}

/// Where strong linearizability breaks down: no linearization of `node`'s
/// history extends to every child, although each child's subtree on its
/// own can be handled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongWitness {
    /// Node id in the checked execution tree.
    pub node: usize,
    pub history: History,
    /// The children, each with the history of one leaf below it.
    pub branches: Vec<(usize, History)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongVerdict {
    pub holds: bool,
    /// Nodes the strong check ran on.
    pub nodes_checked: usize,
    /// Tail check only: whether every node's history is linearizable.
    pub all_linearizable: bool,
    /// A prefix-preserving assignment when `holds`: node id and index into
    /// `pool`, for every checked node.
    pub assignment: Vec<(usize, usize)>,
    pub pool: Vec<Linearization>,
    pub witness: Option<StrongWitness>,
}

impl StrongVerdict {
    /// The linearization assigned to node `i`, if it was checked.
    pub fn f(&self, i: usize) -> Option<&Linearization> {
        self.assignment
            .iter()
            .find(|(n, _)| *n == i)
            .map(|(_, k)| &self.pool[*k])
    }
}

type Key = (usize, Vec<InvocationId>);

struct Strong<'a> {
    tree: &'a HTree,
    spec: &'a ObjectSpec,
    memo: HashMap<Key, bool>,
    choice: HashMap<Key, Vec<Linearization>>,
    /// Strict ancestors of the node the check is restricted to.
    restricted: HashSet<usize>,
    focus: Option<usize>,
}

impl Strong<'_> {
    fn children(&self, node: usize) -> Vec<usize> {
        let all = &self.tree.children[node];
        match self.focus {
            Some(f) if self.restricted.contains(&node) => all
                .iter()
                .copied()
                .filter(|c| self.tree.is_ancestor(*c, f))
                .collect(),
            _ => all.clone(),
        }
    }

    fn feasible(&mut self, node: usize, lin: &Linearization) -> Result<bool, LinError> {
        let key = (node, lin.invs());
        let memoize = !self.restricted.contains(&node);
        if memoize {
            if let Some(v) = self.memo.get(&key) {
                return Ok(*v);
            }
        }
        let mut picks = Vec::new();
        let mut ok = true;
        for c in self.children(node) {
            let exts = extensions(&self.tree.hist[c], lin, self.spec)?;
            let mut found = None;
            for l in exts {
                if self.feasible(c, &l)? {
                    found = Some(l);
                    break;
                }
            }
            match found {
                Some(l) => picks.push(l),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if memoize {
            self.memo.insert(key.clone(), ok);
            if ok {
                self.choice.insert(key, picks);
            }
        }
        Ok(ok)
    }

    fn check_root(&mut self, root: usize) -> Result<Option<Linearization>, LinError> {
        for l in extensions(&self.tree.hist[root], &Linearization::default(), self.spec)? {
            if self.feasible(root, &l)? {
                return Ok(Some(l));
            }
        }
        Ok(None)
    }
}

/// Linearizations of `hist` that extend `base` and end with a completed
/// operation (or equal `base` when nothing completed is missing).
fn extensions(
    hist: &[Action],
    base: &Linearization,
    spec: &ObjectSpec,
) -> Result<Vec<Linearization>, LinError> {
    let h = History {
        actions: hist.to_vec(),
    };
    let ops = operations(&h)?;
    let before = real_time(&ops);
    let index: BTreeMap<InvocationId, usize> =
        ops.iter().enumerate().map(|(i, o)| (o.inv, i)).collect();
    let mut placed = vec![false; ops.len()];
    let mut state = spec.initial_state();
    for l in &base.ops {
        let Some(&i) = index.get(&l.inv) else {
            return Ok(Vec::new());
        };
        let o = &ops[i];
        if before[i].iter().any(|j| !placed[*j]) {
            return Ok(Vec::new());
        }
        let (next, ret) = spec.apply(&state, o.inv.proc, o.method, &o.arg)?;
        if o.ret.as_ref().is_some_and(|r| *r != ret) {
            return Ok(Vec::new());
        }
        state = next;
        placed[i] = true;
    }
    let missing = ops
        .iter()
        .zip(&placed)
        .filter(|(o, p)| o.ret.is_some() && !**p)
        .count();
    let mut out = Vec::new();
    let mut cur = base.ops.clone();
    extend(
        &ops,
        &before,
        spec,
        &mut placed,
        &state,
        missing,
        &mut cur,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    ops: &[HOp],
    before: &[Vec<usize>],
    spec: &ObjectSpec,
    placed: &mut [bool],
    state: &Value,
    missing: usize,
    cur: &mut Vec<LinOp>,
    out: &mut Vec<Linearization>,
) -> Result<(), LinError> {
    if missing == 0 {
        out.push(Linearization { ops: cur.clone() });
        return Ok(());
    }
    for i in 0..ops.len() {
        if placed[i] || before[i].iter().any(|j| !placed[*j]) {
            continue;
        }
        let o = &ops[i];
        let (next, ret) = spec.apply(state, o.inv.proc, o.method, &o.arg)?;
        if o.ret.as_ref().is_some_and(|r| *r != ret) {
            continue;
        }
        let complete = o.ret.is_some();
        placed[i] = true;
        cur.push(LinOp {
            inv: o.inv,
            method: o.method,
            arg: o.arg.clone(),
            ret,
        });
        extend(
            ops,
            before,
            spec,
            placed,
            &next,
            missing - complete as usize,
            cur,
            out,
        )?;
        cur.pop();
        placed[i] = false;
    }
    Ok(())
}

fn with_big_stack<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .stack_size(512 << 20)
            .spawn_scoped(s, f)
            .expect("spawn checker thread")
            .join()
            .expect("checker thread panicked")
    })
}

fn single_object(tree: &HTree) -> Result<(), LinError> {
    let mut names = BTreeSet::new();
    for h in &tree.hist {
        for a in h.iter() {
            names.insert(a.object().to_string());
        }
    }
    if names.len() > 1 {
        return Err(LinError::MixedObjects(names.into_iter().collect()));
    }
    Ok(())
}

fn strong_on(tree: &HTree, spec: &ObjectSpec) -> Result<StrongVerdict, LinError> {
    single_object(tree)?;
    with_big_stack(|| {
        let mut s = Strong {
            tree,
            spec,
            memo: HashMap::new(),
            choice: HashMap::new(),
            restricted: HashSet::new(),
            focus: None,
        };
        let roots = tree.roots();
        let mut root_lins = Vec::new();
        for r in &roots {
            match s.check_root(*r)? {
                Some(l) => root_lins.push((*r, l)),
                None => {
                    let witness = find_witness(&mut s, *r)?;
                    return Ok(StrongVerdict {
                        holds: false,
                        nodes_checked: tree.parent.len(),
                        all_linearizable: true,
                        assignment: Vec::new(),
                        pool: Vec::new(),
                        witness: Some(witness),
                    });
                }
            }
        }
        // read the assignment back from the recorded choices
        let mut pool: Vec<Linearization> = Vec::new();
        let mut pool_index: HashMap<Linearization, usize> = HashMap::new();
        let mut assignment = Vec::with_capacity(tree.parent.len());
        let mut stack: Vec<(usize, Linearization)> = root_lins;
        while let Some((node, lin)) = stack.pop() {
            let k = *pool_index.entry(lin.clone()).or_insert_with(|| {
                pool.push(lin.clone());
                pool.len() - 1
            });
            assignment.push((tree.source[node], k));
            let picks = s
                .choice
                .get(&(node, lin.invs()))
                .cloned()
                .unwrap_or_default();
            for (c, l) in tree.children[node].iter().zip(picks) {
                stack.push((*c, l));
            }
        }
        assignment.sort_unstable();
        Ok(StrongVerdict {
            holds: true,
            nodes_checked: tree.parent.len(),
            all_linearizable: true,
            assignment,
            pool,
            witness: None,
        })
    })
}

/// Descends from a failing root to the deepest node whose subtree (with
/// the path leading to it) still fails on its own.
fn find_witness(s: &mut Strong<'_>, root: usize) -> Result<StrongWitness, LinError> {
    let tree = s.tree;
    let mut node = root;
    'descend: loop {
        for &c in &tree.children[node] {
            let mut anc = HashSet::new();
            let mut x = c;
            while let Some(p) = tree.parent[x] {
                anc.insert(p);
                x = p;
            }
            s.restricted = anc;
            s.focus = Some(c);
            if s.check_root(root)?.is_none() {
                node = c;
                continue 'descend;
            }
        }
        break;
    }
    s.restricted.clear();
    s.focus = None;
    let leaf_below = |mut x: usize| {
        while let Some(c) = tree.children[x].first() {
            x = *c;
        }
        x
    };
    Ok(StrongWitness {
        node: tree.source[node],
        history: History {
            actions: tree.hist[node].to_vec(),
        },
        branches: tree.children[node]
            .iter()
            .map(|c| {
                let leaf = leaf_below(*c);
                (
                    tree.source[*c],
                    History {
                        actions: tree.hist[leaf].to_vec(),
                    },
                )
            })
            .collect(),
    })
}

/// Decides whether some prefix-preserving assignment of linearizations to
/// the nodes of `t` exists. All actions must be on one object.
pub fn check_strong_linearizable(
    t: &ExecutionTree,
    spec: &ObjectSpec,
) -> Result<StrongVerdict, LinError> {
    let keep = vec![true; t.len()];
    let tree = HTree::from_tree(t, t.histories(), &keep);
    strong_on(&tree, spec)
}

/// For each node, whether every invocation has reached its preamble end.
pub fn complete_nodes(t: &ExecutionTree, pm: &PreambleMapping) -> Result<Vec<bool>, LinError> {
    let mut pending: Vec<Arc<Vec<(InvocationId, u32)>>> = Vec::with_capacity(t.len());
    let mut out = Vec::with_capacity(t.len());
    for node in &t.nodes {
        let base = match node.parent {
            Some(p) => pending[p].clone(),
            None => Arc::new(Vec::new()),
        };
        let mut cur: Option<Vec<(InvocationId, u32)>> = None;
        for s in &node.steps {
            let Some(inv) = s.inv else { continue };
            if let StepKind::Call { method, .. } = &s.kind {
                let end = pm.end_of(*method)?;
                cur.get_or_insert_with(|| (*base).clone()).push((inv, end));
            }
            let list = cur.as_ref().map_or(&*base, |v| v);
            if let Some(i) = list
                .iter()
                .position(|(id, site)| *id == inv && *site == s.site)
            {
                cur.get_or_insert_with(|| (*base).clone()).swap_remove(i);
            }
        }
        let next = cur.map(Arc::new).unwrap_or(base);
        out.push(next.is_empty());
        pending.push(next);
    }
    Ok(out)
}

/// Tail strong linearizability: every node's history is linearizable, and
/// the nodes whose invocations have all passed their preambles (with the
/// induced ancestor relation) are strongly linearizable.
pub fn check_tail_strong(
    t: &ExecutionTree,
    spec: &ObjectSpec,
    pm: &PreambleMapping,
) -> Result<StrongVerdict, LinError> {
    let hist = t.histories();
    let mut seen: HashSet<*const Vec<Action>> = HashSet::new();
    let mut all_linearizable = true;
    for h in &hist {
        if seen.insert(Arc::as_ptr(h)) {
            let v = check_linearizable(
                &History {
                    actions: h.to_vec(),
                },
                spec,
            )?;
            if !v.linearizable {
                all_linearizable = false;
                break;
            }
        }
    }
    let keep = complete_nodes(t, pm)?;
    let tree = HTree::from_tree(t, hist, &keep);
    let mut v = strong_on(&tree, spec)?;
    v.all_linearizable = all_linearizable;
    v.holds &= all_linearizable;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::FirstPolicy;
    use crate::engine::run;
    use crate::exec::RandomTape;
    use crate::lincheck::tree::{enumerate_tree, race_prefix, race_workload, TreeConfig};
    use crate::objects::{Binding, ObjectKind};

    fn reg() -> ObjectSpec {
        ObjectSpec::Register { init: Value::Bot }
    }

    #[test]
    fn sequential_chain_is_strongly_linearizable() {
        let e = run(
            &race_workload(),
            &[Binding::plain(ObjectKind::Atomic)],
            &mut FirstPolicy,
            RandomTape::Fixed(vec![]),
            1000,
        )
        .unwrap();
        let t = ExecutionTree::chain(&e);
        let v = check_strong_linearizable(&t, &reg()).unwrap();
        assert!(v.holds);
        let last = t.len() - 1;
        assert_eq!(v.f(last).unwrap().ops.len(), 4);
    }

    #[test]
    fn atomic_tree_is_strongly_linearizable() {
        let t = enumerate_tree(
            &race_workload(),
            &[Binding::plain(ObjectKind::Atomic)],
            &[],
            TreeConfig {
                depth: 4,
                complete: true,
                max_nodes: 100_000,
            },
        )
        .unwrap();
        assert!(check_strong_linearizable(&t, &reg()).unwrap().holds);
    }

    #[test]
    fn abd_race_tree_is_tail_strong_but_not_strong() {
        let t = enumerate_tree(
            &race_workload(),
            &[Binding::plain(ObjectKind::Abd)],
            &race_prefix(),
            TreeConfig {
                depth: 4,
                complete: true,
                max_nodes: 1_000_000,
            },
        )
        .unwrap();
        let strong = check_strong_linearizable(&t, &reg()).unwrap();
        assert!(!strong.holds);
        assert!(strong.witness.unwrap().branches.len() >= 2);
        let pm = PreambleMapping::declared(ObjectKind::Abd, false);
        let tail = check_tail_strong(&t, &reg(), &pm).unwrap();
        assert!(tail.all_linearizable);
        assert!(tail.holds);
    }
}
