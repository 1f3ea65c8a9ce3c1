//! Optimal strong adversary by expectimax over the game tree.
//!
//! Adversary nodes maximize over scheduling choices; random steps average
//! uniformly over their domain. The tree is shrunk in three sound ways:
//!
//! * Steps that touch only the stepping process (calls, sends, preamble
//!   ends, returns, program-local instructions) are taken as soon as they
//!   are enabled. They commute with every other process's steps and
//!   enable, never disable, later choices.
//! * Random steps are taken as soon as they are enabled. Learning a random
//!   value earlier never hurts a strong adversary, and the value cannot
//!   influence anyone else until its owner acts on it.
//! * Messages whose delivery can no longer change any state (replies and
//!   acks for finished phases, queries whose reply would be one, updates
//!   that neither raise the server's timestamp nor feed an open phase) are
//!   never delivered, and states are merged on a canonical digest that
//!   ignores message ids and sequence numbers.
//! * Replies and acks are delivered a quorum at a time (see
//!   [`World::batched_moves`]).
//!
//! Values are exact rationals. When the node budget runs out the result is
//! a certified interval: unexplored subtrees contribute `[0, 1]`.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};

use crate::engine::{Directive, NextAction, World};
use crate::exec::{ExecError, Forced, ProcessId};
use crate::objects::Binding;
use crate::progdsl::{BadPredicate, Program};

use super::{AdversaryPolicy, PolicyError};

type Q = Ratio<u64>;

#[derive(Default)]
struct IdHasher(u64);

impl Hasher for IdHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 = self.0.rotate_left(8) ^ u64::from(*b);
        }
    }

    fn write_u128(&mut self, i: u128) {
        self.0 = (i as u64) ^ ((i >> 64) as u64);
    }
}

type Memo = HashMap<u128, Q, BuildHasherDefault<IdHasher>>;

#[derive(Clone, Copy, Debug)]
pub struct SearchConfig {
    /// Maximum number of expanded (non-memoized, undecided) nodes.
    pub node_budget: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            node_budget: 100_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes: u64,
    pub memo_hits: u64,
    pub memo_entries: u64,
}

#[derive(Clone)]
pub struct SearchResult {
    /// Certified lower bound; the exact optimum when `exhausted`.
    pub value: BigRational,
    /// Certified upper bound; equals `value` when `exhausted`.
    pub upper: BigRational,
    /// True when the whole (reduced) game tree was evaluated.
    pub exhausted: bool,
    /// True when the bounds coincide, which can happen without exhausting
    /// the tree (a winning strategy certifies value 1).
    pub exact: bool,
    pub stats: SearchStats,
    pub policy: SearchPolicy,
}

impl std::fmt::Debug for SearchResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchResult")
            .field("value", &self.value)
            .field("upper", &self.upper)
            .field("exhausted", &self.exhausted)
            .field("exact", &self.exact)
            .field("stats", &self.stats)
            .finish()
    }
}

fn to_big(q: Q) -> BigRational {
    BigRational::new(BigInt::from(*q.numer()), BigInt::from(*q.denom()))
}

/// Takes every enabled process-local step, lowest process first, until
/// none is left, then forgets dead messages.
pub(crate) fn close(w: &mut World) -> Result<(), ExecError> {
    loop {
        let p = (0..w.n() as ProcessId).find(|p| w.next_action(*p) == NextAction::Local);
        match p {
            Some(proc) => w.apply(Directive::Step { proc }, &mut Forced(0))?,
            None => {
                w.discard_dead_messages();
                return Ok(());
            }
        }
    }
}

pub(crate) fn chance_process(w: &World) -> Option<ProcessId> {
    (0..w.n() as ProcessId).find(|p| w.next_action(*p) == NextAction::Random)
}

struct Searcher<'a> {
    bad: &'a dyn BadPredicate,
    memo: Memo,
    budget: u64,
    stats: SearchStats,
    truncated: bool,
}

impl Searcher<'_> {
    /// Value of a leaf, or `None` when the state needs expanding.
    fn leaf(&self, w: &World) -> Option<Q> {
        if let Some(b) = self.bad.decided(w.returns()) {
            return Some(if b { Q::one() } else { Q::zero() });
        }
        if w.all_done() {
            return Some(if self.bad.is_bad(w.returns()) {
                Q::one()
            } else {
                Q::zero()
            });
        }
        None
    }

    /// Evaluates a closed state with digest `d`.
    fn eval(&mut self, w: &World, d: u128) -> Result<(Q, Q), ExecError> {
        if let Some(v) = self.leaf(w) {
            return Ok((v, v));
        }
        if let Some(v) = self.memo.get(&d) {
            self.stats.memo_hits += 1;
            return Ok((*v, *v));
        }
        if self.stats.nodes >= self.budget {
            self.truncated = true;
            return Ok((Q::zero(), Q::one()));
        }
        self.stats.nodes += 1;
        let (lo, hi) = if let Some(p) = chance_process(w) {
            let domain = w.random_domain(p).expect("random step pending");
            let mut lo = Q::zero();
            let mut hi = Q::zero();
            for v in &domain {
                let mut child = w.clone();
                child.apply(Directive::Step { proc: p }, &mut Forced(*v))?;
                close(&mut child)?;
                let cd = child.digest();
                let (l, h) = self.eval(&child, cd)?;
                lo += l;
                hi += h;
            }
            let k = Q::from_integer(domain.len() as u64);
            (lo / k, hi / k)
        } else {
            let moves = w.batched_moves();
            if moves.is_empty() {
                let v = if self.bad.is_bad(w.returns()) {
                    Q::one()
                } else {
                    Q::zero()
                };
                (v, v)
            } else {
                let mut seen: Vec<u128> = Vec::with_capacity(moves.len());
                let mut lo = Q::zero();
                let mut hi = Q::zero();
                for m in moves {
                    let mut child = w.clone();
                    for d in m {
                        child.apply(d, &mut Forced(0))?;
                    }
                    close(&mut child)?;
                    let cd = child.digest();
                    if seen.contains(&cd) {
                        continue;
                    }
                    seen.push(cd);
                    let (l, h) = self.eval(&child, cd)?;
                    lo = lo.max(l);
                    hi = hi.max(h);
                    if lo.is_one() {
                        hi = lo;
                        break;
                    }
                }
                (lo, hi)
            }
        };
        if lo == hi {
            self.memo.insert(d, lo);
        }
        Ok((lo, hi))
    }
}

/// Computes the optimal adversary's probability of a bad outcome.
pub fn expectimax(
    program: &Program,
    bindings: &[Binding],
    bad: Arc<dyn BadPredicate>,
    config: SearchConfig,
) -> Result<SearchResult, ExecError> {
    let program = program.clone();
    let bindings = bindings.to_vec();
    // deep recursion: run on a thread with a generous stack
    std::thread::Builder::new()
        .stack_size(1 << 30)
        .spawn(move || search_inner(&program, &bindings, bad, config))
        .expect("spawn search thread")
        .join()
        .expect("search thread panicked")
}

fn search_inner(
    program: &Program,
    bindings: &[Binding],
    bad: Arc<dyn BadPredicate>,
    config: SearchConfig,
) -> Result<SearchResult, ExecError> {
    let mut root = World::new(program, bindings)?;
    close(&mut root)?;
    let d = root.digest();
    let mut s = Searcher {
        bad: bad.as_ref(),
        memo: Memo::default(),
        budget: config.node_budget,
        stats: SearchStats::default(),
        truncated: false,
    };
    let (lo, hi) = s.eval(&root, d)?;
    s.stats.memo_entries = s.memo.len() as u64;
    let stats = s.stats;
    let memo = std::mem::take(&mut s.memo);
    Ok(SearchResult {
        value: to_big(lo),
        upper: to_big(hi),
        exhausted: !s.truncated,
        exact: lo == hi,
        stats,
        policy: SearchPolicy {
            memo: Arc::new(memo),
            bad,
            queued: Default::default(),
        },
    })
}

/// The adversary read off a finished search: it mirrors the search's
/// eager local and random steps and otherwise takes the move with the best
/// memoized value.
#[derive(Clone)]
pub struct SearchPolicy {
    memo: Arc<Memo>,
    bad: Arc<dyn BadPredicate>,
    queued: std::collections::VecDeque<Directive>,
}

impl SearchPolicy {
    fn value_of(&self, w: &World) -> Option<Q> {
        if let Some(b) = self.bad.decided(w.returns()) {
            return Some(if b { Q::one() } else { Q::zero() });
        }
        if w.all_done() {
            return Some(if self.bad.is_bad(w.returns()) {
                Q::one()
            } else {
                Q::zero()
            });
        }
        self.memo.get(&w.digest()).copied()
    }

    /// Number of memoized states backing the policy.
    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

impl AdversaryPolicy for SearchPolicy {
    fn name(&self) -> &str {
        "search"
    }

    fn decide(&mut self, world: &World) -> Result<Directive, PolicyError> {
        if let Some(d) = self.queued.pop_front() {
            if world.legal().contains(&d) {
                return Ok(d);
            }
            self.queued.clear();
        }
        let n = world.n() as ProcessId;
        for want in [NextAction::Local, NextAction::Random] {
            if let Some(proc) = (0..n).find(|p| world.next_action(*p) == want) {
                return Ok(Directive::Step { proc });
            }
        }
        let moves = world.batched_moves();
        let mut best: Option<(Q, &Vec<Directive>)> = None;
        for m in &moves {
            let mut child = world.detached();
            if m.iter().any(|d| child.apply(*d, &mut Forced(0)).is_err())
                || close(&mut child).is_err()
            {
                continue;
            }
            if let Some(v) = self.value_of(&child) {
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, m));
                }
            }
        }
        let chosen = best.map(|(_, m)| m).or_else(|| moves.first());
        if let Some(m) = chosen {
            self.queued.extend(m.iter().skip(1).copied());
            return Ok(m[0]);
        }
        world
            .legal()
            .first()
            .copied()
            .ok_or(PolicyError::NoLegalDirective)
    }
}
