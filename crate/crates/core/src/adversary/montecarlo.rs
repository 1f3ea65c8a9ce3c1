//! Seeded Monte Carlo estimation of the bad-outcome probability.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::engine::run;
use crate::exec::{hash_pair, outcome_of, ExecError, Outcome, RandomTape};
use crate::objects::Binding;
use crate::progdsl::{BadPredicate, Program};

use super::{event_x_holds, AdversaryPolicy};

/// Seed of trial `i`: the first eight bytes of SHA-256 over the master seed
/// and `i` (both little-endian u64), read little-endian. The trial's tape is
/// `RandomTape::Seeded(seed)` and seeded policies receive the same value.
pub fn trial_seed(master: u64, i: u64) -> u64 {
    hash_pair(master, i)
}

/// Two-sided 99% Hoeffding half-width for `trials` samples.
pub fn hoeffding_half_width(trials: u64) -> f64 {
    ((200.0f64).ln() / (2.0 * trials as f64)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: u64,
    pub seed: u64,
    pub bad: bool,
    pub event_x: bool,
    pub tape: Vec<i64>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub trials: u64,
    pub bad: u64,
    pub x: u64,
    pub bad_and_x: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_trial: Vec<Trial>,
}

/// Runs `trials` independent executions. Trial `i` uses the tape and policy
/// seed [`trial_seed`]`(master_seed, i)`.
pub fn monte_carlo(
    program: &Program,
    bindings: &[Binding],
    bad: &dyn BadPredicate,
    make_policy: &dyn Fn(u64) -> Box<dyn AdversaryPolicy>,
    trials: u64,
    master_seed: u64,
    step_budget: u64,
) -> Result<MonteCarloResult, ExecError> {
    let mut per_trial = Vec::with_capacity(trials as usize);
    for index in 0..trials {
        let seed = trial_seed(master_seed, index);
        let mut policy = make_policy(seed);
        let e = run(
            program,
            bindings,
            policy.as_mut(),
            RandomTape::Seeded(seed),
            step_budget,
        )?;
        let outcome = outcome_of(&e);
        per_trial.push(Trial {
            index,
            seed,
            bad: bad.is_bad(&outcome.returns),
            event_x: event_x_holds(&e),
            tape: e.tape.iter().map(|t| t.value).collect(),
            outcome,
        });
    }
    Ok(summarize(per_trial))
}

fn summarize(per_trial: Vec<Trial>) -> MonteCarloResult {
    let trials = per_trial.len() as u64;
    let bad = per_trial.iter().filter(|t| t.bad).count() as u64;
    let x = per_trial.iter().filter(|t| t.event_x).count() as u64;
    let bad_and_x = per_trial.iter().filter(|t| t.bad && t.event_x).count() as u64;
    let estimate = if trials == 0 {
        0.0
    } else {
        bad as f64 / trials as f64
    };
    let h = if trials == 0 {
        1.0
    } else {
        hoeffding_half_width(trials)
    };
    MonteCarloResult {
        trials,
        bad,
        x,
        bad_and_x,
        estimate,
        ci_low: (estimate - h).max(0.0),
        ci_high: (estimate + h).min(1.0),
        per_trial,
    }
}

/// Checks `P(bad) = P(bad|X)P(X) + P(bad|¬X)P(¬X)` on the empirical
/// frequencies in exact arithmetic. A conditional frequency on an empty
/// event contributes zero.
pub fn decomposition_holds(r: &MonteCarloResult) -> bool {
    if r.trials == 0 {
        return true;
    }
    let q = |a: u64, b: u64| -> BigRational {
        if b == 0 {
            BigRational::zero()
        } else {
            BigRational::new(BigInt::from(a), BigInt::from(b))
        }
    };
    let n = r.trials;
    let not_x = n - r.x;
    let bad_not_x = r.bad - r.bad_and_x;
    let lhs = q(r.bad, n);
    let rhs = q(r.bad_and_x, r.x) * q(r.x, n) + q(bad_not_x, not_x) * q(not_x, n);
    lhs == rhs
}
