mod common;

use std::sync::Arc;

use blunt_core::adversary::{
    decomposition_holds, event_x_holds, expectimax, hoeffding_half_width, monte_carlo,
    prob_x_lower_bound, theorem_bound, FirstPolicy, MonteCarloResult, SearchConfig,
};
use blunt_core::exec::{Execution, InvocationId, LocalOp, Origin, Step, StepKind};
use blunt_core::objects::{Binding, ObjectKind};
use blunt_core::progdsl::{weakener, weakener_bad, workload, FnPredicate};
use blunt_core::value::Value;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;

fn q(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

fn f(x: &BigRational) -> f64 {
    x.to_f64().unwrap()
}

/// The bound evaluated in floating point directly from its definition.
fn bound_f64(pa: f64, pl: f64, n: u64, r: u64, k: u64) -> f64 {
    let x = (k.saturating_sub(r) as f64 / k as f64).powi(n as i32 - 1);
    x * pa + (1.0 - x) * pl
}

fn probs() -> impl Strategy<Value = (BigRational, BigRational)> {
    (0i64..=64, 0i64..=64).prop_map(|(a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        (q(lo, 64), q(hi, 64))
    })
}

proptest! {
    #[test]
    fn bound_lies_between_the_two_probabilities(
        (pa, pl) in probs(), n in 1u64..6, r in 1u64..5, k in 1u64..40,
    ) {
        let b = theorem_bound(&pa, &pl, n, r, k).unwrap();
        prop_assert!(pa <= b && b <= pl);
        prop_assert!((f(&b) - bound_f64(f(&pa), f(&pl), n, r, k)).abs() < 1e-12);
    }

    #[test]
    fn bound_does_not_increase_with_k(
        (pa, pl) in probs(), n in 1u64..6, r in 1u64..5, k in 1u64..40,
    ) {
        let a = theorem_bound(&pa, &pl, n, r, k).unwrap();
        let b = theorem_bound(&pa, &pl, n, r, k + 1).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn too_few_iterations_give_the_linearizable_probability(
        (pa, pl) in probs(), n in 2u64..6, r in 1u64..8, k in 1u64..8,
    ) {
        prop_assume!(k <= r);
        prop_assert_eq!(prob_x_lower_bound(n, r, k).unwrap(), BigRational::zero());
        prop_assert_eq!(theorem_bound(&pa, &pl, n, r, k).unwrap(), pl);
    }

    #[test]
    fn a_single_process_gets_the_atomic_probability(
        (pa, pl) in probs(), r in 1u64..8, k in 1u64..40,
    ) {
        prop_assert_eq!(prob_x_lower_bound(1, r, k).unwrap(), BigRational::one());
        prop_assert_eq!(theorem_bound(&pa, &pl, 1, r, k).unwrap(), pa);
    }

    #[test]
    fn bound_is_monotone_in_both_probabilities(
        (pa, pl) in probs(), n in 1u64..5, k in 1u64..10, da in 0i64..8, dl in 0i64..8,
    ) {
        let pl2 = (&pl + q(dl, 64)).min(BigRational::one());
        let pa2 = (&pa + q(da, 64)).min(pl2.clone());
        let b = theorem_bound(&pa, &pl, n, 1, k).unwrap();
        let b2 = theorem_bound(&pa2, &pl2, n, 1, k).unwrap();
        prop_assert!(b <= b2);
    }

    #[test]
    fn decomposition_holds_for_consistent_counts(
        trials in 1u64..500, x in 0u64..500, bad_x in 0u64..500, bad_nx in 0u64..500,
    ) {
        let x = x % (trials + 1);
        let bad_and_x = bad_x % (x + 1);
        let bad = bad_and_x + bad_nx % (trials - x + 1);
        let r = MonteCarloResult {
            trials, bad, x, bad_and_x,
            estimate: bad as f64 / trials as f64,
            ci_low: 0.0, ci_high: 1.0, per_trial: Vec::new(),
        };
        prop_assert!(decomposition_holds(&r));
    }
}

#[test]
fn bound_values_for_three_processes() {
    let half = q(1, 2);
    let one = BigRational::one();
    assert_eq!(prob_x_lower_bound(3, 1, 2).unwrap(), q(1, 4));
    assert_eq!(theorem_bound(&half, &one, 3, 1, 1).unwrap(), one);
    assert_eq!(theorem_bound(&half, &one, 3, 1, 2).unwrap(), q(7, 8));
    assert_eq!(theorem_bound(&half, &one, 3, 1, 3).unwrap(), q(7, 9));
    let far = theorem_bound(&half, &one, 3, 1, 1_000_000).unwrap();
    assert!((f(&far) - 0.5).abs() < 1e-5);
    assert!(theorem_bound(&one, &half, 3, 1, 2).is_err());
    assert!(prob_x_lower_bound(3, 0, 2).is_err());
}

#[test]
fn hoeffding_width_shrinks_with_trials() {
    let w = hoeffding_half_width(10_000);
    assert!((w - ((200.0f64).ln() / 20_000.0).sqrt()).abs() < 1e-15);
    assert!(hoeffding_half_width(100_000) < w);
}

fn inv(proc: u32) -> InvocationId {
    InvocationId {
        proc,
        site: 0,
        occ: 0,
    }
}

fn step(
    seq: u64,
    proc: u32,
    kind: StepKind,
    call: Option<InvocationId>,
    iter: Option<u32>,
) -> Step {
    Step {
        seq,
        proc,
        inv: call,
        site: 0,
        kind,
        iter,
    }
}

fn random(domain: Vec<i64>, result: i64, origin: Origin) -> StepKind {
    StepKind::Random {
        domain,
        result,
        origin,
    }
}

fn local() -> StepKind {
    StepKind::Local(LocalOp::Assign {
        var: "t".into(),
        value: Value::Int(0),
    })
}

/// Process 0 runs two preamble iterations; process 1 flips a coin while
/// iteration 1 is in progress. Process 0 then picks iteration `chosen`.
fn two_iterations_with_coin_inside_first(chosen: i64) -> Execution {
    let i = Some(inv(0));
    let steps = vec![
        step(0, 0, local(), i, Some(1)),
        step(1, 1, random(vec![0, 1], 1, Origin::Program), None, None),
        step(2, 0, local(), i, Some(1)),
        step(3, 0, local(), i, Some(2)),
        step(4, 0, local(), i, Some(2)),
        step(5, 0, random(vec![1, 2], chosen, Origin::Object), i, None),
    ];
    Execution::from_steps(2, steps)
}

#[test]
fn event_x_rejects_choosing_an_iteration_with_a_coin_inside() {
    assert!(!event_x_holds(&two_iterations_with_coin_inside_first(1)));
    assert!(event_x_holds(&two_iterations_with_coin_inside_first(2)));
}

#[test]
fn event_x_holds_without_object_random_steps() {
    let e = Execution::from_steps(
        1,
        vec![step(
            0,
            0,
            random(vec![0, 1], 0, Origin::Program),
            None,
            None,
        )],
    );
    assert!(event_x_holds(&e));
}

#[test]
fn event_x_ignores_coins_after_the_chosen_iteration() {
    let i = Some(inv(0));
    let steps = vec![
        step(0, 0, local(), i, Some(1)),
        step(1, 0, local(), i, Some(1)),
        step(2, 1, random(vec![0, 1], 0, Origin::Program), None, None),
        step(3, 0, local(), i, Some(2)),
        step(4, 0, random(vec![1, 2], 1, Origin::Object), i, None),
    ];
    assert!(event_x_holds(&Execution::from_steps(2, steps)));
}

fn budget() -> SearchConfig {
    SearchConfig {
        node_budget: 100_000_000,
    }
}

#[test]
fn atomic_search_policy_wins_half_the_time() {
    let prog = weakener();
    let b = [Binding::plain(ObjectKind::Atomic); 2];
    let bad = Arc::new(weakener_bad());
    let s = expectimax(&prog, &b, bad.clone(), budget()).unwrap();
    assert_eq!(s.value, q(1, 2));
    assert!(s.exhausted);
    let policy = s.policy.clone();
    let trials = 20_000;
    let mc = monte_carlo(
        &prog,
        &b,
        bad.as_ref(),
        &|_| Box::new(policy.clone()),
        trials,
        11,
        100_000,
    )
    .unwrap();
    assert!((mc.estimate - 0.5).abs() <= hoeffding_half_width(trials));
    assert!(decomposition_holds(&mc));
    // no object randomness, so every trial is in event X
    assert_eq!(mc.x, trials);
}

#[test]
fn abd_search_dominates_atomic() {
    let prog = weakener();
    let bad = Arc::new(weakener_bad());
    let atomic = expectimax(
        &prog,
        &[Binding::plain(ObjectKind::Atomic); 2],
        bad.clone(),
        budget(),
    )
    .unwrap();
    let abd = expectimax(&prog, &[Binding::plain(ObjectKind::Abd); 2], bad, budget()).unwrap();
    assert!(abd.value >= atomic.value);
    assert_eq!(abd.value, BigRational::one());
    assert!(abd.exact);
}

#[test]
fn deterministic_program_that_reaches_bad_has_value_one() {
    // the reader sees 1 only if the write goes first; no randomness at all
    let prog = workload("order", "X", Value::Int(0), &[vec![Some(1)], vec![None]]);
    let b = [Binding::plain(ObjectKind::Atomic)];
    let reads_one =
        |r: &blunt_core::exec::Returns| r.iter().any(|(id, v)| id.proc == 1 && *v == Value::Int(1));
    let s = expectimax(
        &prog,
        &b,
        Arc::new(FnPredicate::new("one", reads_one)),
        budget(),
    )
    .unwrap();
    assert_eq!(s.value, BigRational::one());
    assert!(s.exhausted);
    let never = Arc::new(FnPredicate::new("never", |_: &_| false));
    let s = expectimax(&prog, &b, never.clone(), budget()).unwrap();
    assert_eq!(s.value, BigRational::zero());
    let mc = monte_carlo(
        &prog,
        &b,
        never.as_ref(),
        &|_| Box::new(FirstPolicy),
        50,
        3,
        1000,
    )
    .unwrap();
    assert_eq!(mc.estimate, 0.0);
}

#[test]
fn truncated_search_brackets_the_value() {
    let prog = weakener();
    let b = [Binding::iterated(ObjectKind::Abd, 2).unwrap(); 2];
    let s = expectimax(
        &prog,
        &b,
        Arc::new(weakener_bad()),
        SearchConfig { node_budget: 2_000 },
    )
    .unwrap();
    assert!(!s.exhausted);
    assert!(s.value <= q(5, 8) && q(5, 8) <= s.upper);
}
