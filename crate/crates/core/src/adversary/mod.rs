//! Strong adversaries: scheduling policies, the optimal-adversary search,
//! Monte Carlo estimation and the closed-form bounds.

use thiserror::Error;

use crate::engine::{Directive, World};
use crate::exec::hash_pair;

mod bounds;
mod crafted;
mod eventx;
mod montecarlo;
mod outcomes;
mod search;

pub use bounds::{prob_x_lower_bound, theorem_bound, BoundError};
pub use crafted::{crafted_abd_weakener_policy, CraftedPolicy};
pub use eventx::{event_x_holds, Choice, EventXWitness};
pub use montecarlo::{
    decomposition_holds, hoeffding_half_width, monte_carlo, trial_seed, MonteCarloResult, Trial,
};
pub use outcomes::{reachable_outcomes, OutcomeSet};
pub use search::{expectimax, SearchConfig, SearchPolicy, SearchResult, SearchStats};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy does not apply to this configuration: {0}")]
    WrongConfiguration(String),
    #[error("scripted schedule diverged: {0}")]
    ScriptMismatch(String),
    #[error("no legal directive")]
    NoLegalDirective,
}

/// A deterministic scheduler. `decide` sees the whole current state,
/// including every random value consumed so far, and nothing about future
/// random values.
pub trait AdversaryPolicy {
    fn name(&self) -> &str;

    fn decide(&mut self, world: &World) -> Result<Directive, PolicyError>;
}

/// Picks the first legal directive: the lowest schedulable process, else the
/// oldest in-flight message.
#[derive(Clone, Debug, Default)]
pub struct FirstPolicy;

impl AdversaryPolicy for FirstPolicy {
    fn name(&self) -> &str {
        "first"
    }

    fn decide(&mut self, world: &World) -> Result<Directive, PolicyError> {
        world
            .legal()
            .first()
            .copied()
            .ok_or(PolicyError::NoLegalDirective)
    }
}

/// Picks uniformly among legal directives using a hash of the seed and the
/// decision index.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    seed: u64,
    decisions: u64,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { seed, decisions: 0 }
    }
}

impl AdversaryPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, world: &World) -> Result<Directive, PolicyError> {
        let legal = world.legal();
        if legal.is_empty() {
            return Err(PolicyError::NoLegalDirective);
        }
        let h = hash_pair(self.seed, self.decisions);
        self.decisions += 1;
        Ok(legal[(h % legal.len() as u64) as usize])
    }
}

/// Replays a fixed directive list.
#[derive(Clone, Debug)]
pub struct ScriptPolicy {
    directives: Vec<Directive>,
    pos: usize,
}

impl ScriptPolicy {
    pub fn new(directives: Vec<Directive>) -> Self {
        ScriptPolicy { directives, pos: 0 }
    }
}

impl AdversaryPolicy for ScriptPolicy {
    fn name(&self) -> &str {
        "script"
    }

    fn decide(&mut self, _world: &World) -> Result<Directive, PolicyError> {
        let d = self
            .directives
            .get(self.pos)
            .copied()
            .ok_or_else(|| PolicyError::ScriptMismatch("script exhausted".into()))?;
        self.pos += 1;
        Ok(d)
    }
}
