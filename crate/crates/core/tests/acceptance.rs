//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

mod common;

use std::sync::Arc;
use std::time::Instant;

use blunt_core::adversary::{
    crafted_abd_weakener_policy, decomposition_holds, expectimax, hoeffding_half_width,
    monte_carlo, prob_x_lower_bound, reachable_outcomes, theorem_bound, AdversaryPolicy,
    FirstPolicy, MonteCarloResult, RandomPolicy, SearchConfig, SearchResult,
};
use blunt_core::engine::run;
use blunt_core::exec::{outcome_of, project_history, RandomTape};
use blunt_core::lincheck::{
    abd_canonical_linearization, check_linearizable, check_strong_linearizable, check_tail_strong,
    complete_nodes, enumerate_tree, is_linearization_of, race_prefix, race_workload, ExecutionTree,
    Move, TreeConfig,
};
use blunt_core::objects::{
    audit_effect_free, Binding, Method, ObjectKind, ObjectSpec, PreambleMapping,
};
use blunt_core::progdsl::{weakener, weakener_bad, BadPredicate, Program};
use blunt_core::value::Value;
use common::fuzz_workload;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&mut Shared) -> Outcome);

fn q(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

const SEARCH_BUDGET: u64 = 100_000_000;
const MC_TRIALS: u64 = 10_000;
const FUZZ_RUNS: u64 = 10_000;

fn search(prog: &Program, b: &[Binding]) -> Result<SearchResult, String> {
    expectimax(
        prog,
        b,
        Arc::new(weakener_bad()),
        SearchConfig {
            node_budget: SEARCH_BUDGET,
        },
    )
    .map_err(|e| e.to_string())
}

#[derive(Default)]
struct Shared {
    atomic: Option<SearchResult>,
    abd: Option<SearchResult>,
    abd2: Option<SearchResult>,
    /// (label, batch) for every Monte Carlo batch sampled.
    batches: Vec<(String, MonteCarloResult)>,
}

fn atomic_baseline(s: &mut Shared) -> Outcome {
    let r = search(&weakener(), &[Binding::plain(ObjectKind::Atomic); 2])?;
    let detail = format!(
        "value {} exhausted {} nodes {}",
        r.value, r.exhausted, r.stats.nodes
    );
    let ok = r.exhausted && r.value == q(1, 2);
    s.atomic = Some(r);
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn abd_winning_adversary(s: &mut Shared) -> Outcome {
    let prog = weakener();
    let b = [Binding::plain(ObjectKind::Abd); 2];
    let bad = weakener_bad();
    for coin in [0, 1] {
        let mut p = crafted_abd_weakener_policy(&prog, &b).map_err(|e| e.to_string())?;
        let e = run(&prog, &b, &mut p, RandomTape::Fixed(vec![coin]), 100_000)
            .map_err(|e| e.to_string())?;
        ensure(e.tape.len() == 1, "the coin is not the only random step")?;
        ensure(
            bad.is_bad(&outcome_of(&e).returns),
            format!("crafted policy misses the bad outcome on coin {coin}"),
        )?;
    }
    let crafted = monte_carlo(
        &prog,
        &b,
        &bad,
        &|_| Box::new(crafted_abd_weakener_policy(&weakener(), &b).unwrap()),
        1_000,
        2,
        100_000,
    )
    .map_err(|e| e.to_string())?;
    ensure(crafted.bad == crafted.trials, "a crafted trial terminated")?;
    s.batches.push(("abd crafted".into(), crafted));
    let r = search(&prog, &b)?;
    let detail = format!(
        "crafted bad on coins 0 and 1; search value {} upper {} nodes {}",
        r.value, r.upper, r.stats.nodes
    );
    let ok = r.exact && r.value == BigRational::one();
    s.abd = Some(r);
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn sample(
    s: &mut Shared,
    label: &str,
    b: &[Binding],
    make: &dyn Fn(u64) -> Box<dyn AdversaryPolicy>,
    seed: u64,
) -> Result<f64, String> {
    let r = monte_carlo(
        &weakener(),
        b,
        &weakener_bad(),
        make,
        MC_TRIALS,
        seed,
        100_000,
    )
    .map_err(|e| e.to_string())?;
    let est = r.estimate;
    s.batches.push((label.to_string(), r));
    Ok(est)
}

fn abd2_window(s: &mut Shared) -> Outcome {
    let b = [Binding::iterated(ObjectKind::Abd, 2).unwrap(); 2];
    let r = search(&weakener(), &b)?;
    let h = hoeffding_half_width(MC_TRIALS);
    let policy = r.policy.clone();
    let estimates = [
        (
            "random",
            sample(
                s,
                "abd2 random",
                &b,
                &|seed| Box::new(RandomPolicy::new(seed)),
                31,
            )?,
        ),
        (
            "first",
            sample(s, "abd2 first", &b, &|_| Box::new(FirstPolicy), 32)?,
        ),
        (
            "search",
            sample(s, "abd2 search", &b, &|_| Box::new(policy.clone()), 33)?,
        ),
    ];
    let mut detail = format!(
        "p* in [{}, {}] exhausted {} nodes {}; estimates",
        r.value, r.upper, r.exhausted, r.stats.nodes
    );
    for (name, e) in &estimates {
        detail.push_str(&format!(" {name}={e:.4}"));
    }
    detail.push_str(&format!(" (half-width {h:.4})"));
    let window = if r.exhausted {
        r.value >= q(1, 2) && r.value <= q(5, 8)
    } else {
        r.value >= q(1, 2) && r.upper <= q(5, 8)
    };
    let sampled = estimates.iter().all(|(_, e)| *e <= 0.625 + h);
    s.abd2 = Some(r);
    ensure(window && sampled, detail.clone())?;
    Ok(detail)
}

fn generic_bound(s: &mut Shared) -> Outcome {
    let half = q(1, 2);
    let one = BigRational::one();
    let b = theorem_bound(&half, &one, 3, 1, 2).map_err(|e| e.to_string())?;
    ensure(b == q(7, 8), format!("bound {b}"))?;
    let x = prob_x_lower_bound(3, 1, 2).map_err(|e| e.to_string())?;
    ensure(x == q(1, 4), format!("prob_x {x}"))?;
    let mut prev = theorem_bound(&half, &one, 3, 1, 1).unwrap();
    for k in 2..=200 {
        let cur = theorem_bound(&half, &one, 3, 1, k).unwrap();
        ensure(cur <= prev, format!("bound increases at k={k}"))?;
        prev = cur;
    }
    let far = theorem_bound(&half, &one, 3, 1, 1_000_000)
        .unwrap()
        .to_f64()
        .unwrap();
    ensure((far - 0.5).abs() < 1e-5, format!("bound at k=1e6 is {far}"))?;
    let h = hoeffding_half_width(MC_TRIALS);
    let abd2: Vec<f64> = s
        .batches
        .iter()
        .filter(|(l, _)| l.starts_with("abd2"))
        .map(|(_, r)| r.estimate)
        .collect();
    ensure(!abd2.is_empty(), "no ABD² samples")?;
    let worst = abd2.iter().cloned().fold(0.0, f64::max);
    ensure(
        worst <= 0.875 + h,
        format!("ABD² frequency {worst} above 7/8"),
    )?;
    Ok(format!(
        "bound 7/8, prob_x 1/4, k=1e6 bound {far:.7}, max ABD² frequency {worst:.4}"
    ))
}

fn fuzz_linearizability(_: &mut Shared) -> Outcome {
    let cases: [(&str, ObjectKind, Option<i64>); 6] = [
        ("abd", ObjectKind::Abd, None),
        ("abd^2", ObjectKind::Abd, Some(2)),
        ("abd^3", ObjectKind::Abd, Some(3)),
        ("snapshot", ObjectKind::Snapshot, None),
        ("va", ObjectKind::Va, None),
        ("il", ObjectKind::Il, None),
    ];
    for (name, kind, k) in cases {
        let prog = fuzz_workload(kind);
        let b = [common::binding(kind, k)];
        let spec = ObjectSpec::for_kind(kind, 3, Value::Int(0));
        for i in 0..FUZZ_RUNS {
            let e = run(
                &prog,
                &b,
                &mut RandomPolicy::new(i),
                RandomTape::Seeded(i),
                100_000,
            )
            .map_err(|e| format!("{name} run {i}: {e}"))?;
            let v = check_linearizable(&project_history(&e), &spec)
                .map_err(|e| format!("{name} run {i}: {e}"))?;
            ensure(
                v.linearizable,
                format!("{name} run {i} is not linearizable"),
            )?;
        }
    }
    Ok(format!(
        "{FUZZ_RUNS} runs each of abd, abd^2, abd^3, snapshot, va, il"
    ))
}

fn abd_tree(prefix: &[Move], depth: usize) -> Result<ExecutionTree, String> {
    enumerate_tree(
        &race_workload(),
        &[Binding::plain(ObjectKind::Abd)],
        prefix,
        TreeConfig {
            depth,
            complete: true,
            max_nodes: 2_000_000,
        },
    )
    .map_err(|e| e.to_string())
}

/// Checks the canonical order on every complete node and its nearest
/// complete ancestor; returns the number of pairs checked.
fn canonical_prefix_pairs(
    t: &ExecutionTree,
    pm: &PreambleMapping,
    spec: &ObjectSpec,
) -> Result<usize, String> {
    let complete = complete_nodes(t, pm).map_err(|e| e.to_string())?;
    let hist = t.histories();
    let mut lin = vec![None; t.len()];
    let mut pairs = 0;
    for i in 0..t.len() {
        if !complete[i] {
            continue;
        }
        let l =
            abd_canonical_linearization(&t.execution(i)).map_err(|e| format!("node {i}: {e}"))?;
        let h = blunt_core::exec::History {
            actions: hist[i].to_vec(),
        };
        ensure(
            is_linearization_of(&h, &l, spec).map_err(|e| e.to_string())?,
            format!("canonical order of node {i} is not a linearization"),
        )?;
        let mut a = t.nodes[i].parent;
        while let Some(p) = a {
            if let Some(lp) = &lin[p] {
                ensure(
                    blunt_core::lincheck::Linearization::is_prefix_of(lp, &l),
                    format!("canonical order not preserved from node {p} to {i}"),
                )?;
                pairs += 1;
                break;
            }
            a = t.nodes[p].parent;
        }
        lin[i] = Some(l);
    }
    Ok(pairs)
}

fn tail_strong(_: &mut Shared) -> Outcome {
    let spec = ObjectSpec::Register { init: Value::Bot };
    let pm = Binding::plain(ObjectKind::Abd).declared_preambles();
    let full = abd_tree(&[], 3)?;
    let race = abd_tree(&race_prefix(), 4)?;
    let mut pairs = 0;
    for (name, t) in [("full", &full), ("race", &race)] {
        let v = check_tail_strong(t, &spec, &pm).map_err(|e| e.to_string())?;
        ensure(
            v.holds && v.all_linearizable,
            format!("{name} tree fails the tail check"),
        )?;
        pairs += canonical_prefix_pairs(t, &pm, &spec)?;
    }
    let strong = check_strong_linearizable(&race, &spec).map_err(|e| e.to_string())?;
    ensure(!strong.holds, "race tree is strongly linearizable")?;
    let w = strong.witness.ok_or("no witness extracted")?;
    ensure(w.branches.len() >= 2, "witness has fewer than two branches")?;
    Ok(format!(
        "tail holds on {} + {} nodes; canonical order preserved on {pairs} pairs; strong fails at node {} with {} branches",
        full.len(),
        race.len(),
        w.node,
        w.branches.len()
    ))
}

fn preamble_audit(_: &mut Shared) -> Outcome {
    let mut checked = 0;
    for kind in [
        ObjectKind::Abd,
        ObjectKind::Snapshot,
        ObjectKind::Va,
        ObjectKind::Il,
    ] {
        for method in kind.methods() {
            for b in [Binding::plain(kind), Binding::iterated(kind, 2).unwrap()] {
                let r = audit_effect_free(b, method, &b.declared_preambles(), 200, 5)
                    .map_err(|e| e.to_string())?;
                ensure(
                    r.ok() && r.steps_checked > 0,
                    format!(
                        "{kind:?} {method} declared preamble: {:?}",
                        r.violations.first()
                    ),
                )?;
                checked += r.steps_checked;
            }
        }
    }
    let wrong = audit_effect_free(
        Binding::plain(ObjectKind::Abd),
        Method::Write,
        &PreambleMapping::full(ObjectKind::Abd),
        200,
        5,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        !wrong.ok(),
        "ABD write preamble with the update phase passes the audit",
    )?;
    Ok(format!(
        "{checked} preamble steps clean; update-phase preamble flagged ({} violations)",
        wrong.violations.len()
    ))
}

fn model_identity(s: &mut Shared) -> Outcome {
    let prog = weakener();
    let mut sets = Vec::new();
    for (name, b) in [
        ("atomic", Binding::plain(ObjectKind::Atomic)),
        ("abd", Binding::plain(ObjectKind::Abd)),
        ("abd^2", Binding::iterated(ObjectKind::Abd, 2).unwrap()),
    ] {
        let o = reachable_outcomes(&prog, &[b; 2], 100_000_000).map_err(|e| e.to_string())?;
        ensure(
            o.exhausted,
            format!("{name} outcome enumeration ran out of budget"),
        )?;
        eprintln!(
            "  {name}: {} outcomes over {} states",
            o.outcomes.len(),
            o.states
        );
        sets.push(o.outcomes);
    }
    ensure(
        sets[0] == sets[1] && sets[1] == sets[2],
        "outcome sets differ",
    )?;
    let (a, d) = match (&s.atomic, &s.abd) {
        (Some(a), Some(d)) => (a, d),
        _ => return Err("search values missing".into()),
    };
    ensure(
        d.value >= a.upper,
        format!("ABD value {} below atomic {}", d.value, a.upper),
    )?;
    let atomic_mc = monte_carlo(
        &prog,
        &[Binding::plain(ObjectKind::Atomic); 2],
        &weakener_bad(),
        &|seed| Box::new(RandomPolicy::new(seed)),
        MC_TRIALS,
        81,
        100_000,
    )
    .map_err(|e| e.to_string())?;
    s.batches.push(("atomic random".into(), atomic_mc));
    for (label, r) in &s.batches {
        ensure(
            decomposition_holds(r),
            format!("counting identity fails on {label}"),
        )?;
    }
    Ok(format!(
        "{} outcomes in each model; ABD {} >= atomic {}; identity exact on {} batches",
        sets[0].len(),
        d.value,
        a.value,
        s.batches.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("atomic baseline is 1/2", atomic_baseline),
        ("ABD adversary forces the loop", abd_winning_adversary),
        ("ABD^2 optimum within [1/2, 5/8]", abd2_window),
        ("generic bound", generic_bound),
        ("linearizability fuzzing", fuzz_linearizability),
        ("tail strong linearizability", tail_strong),
        ("effect-free preamble audit", preamble_audit),
        ("model identity", model_identity),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(&mut shared)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
