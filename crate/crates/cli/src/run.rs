use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use blunt_core::adversary::{
    crafted_abd_weakener_policy, decomposition_holds, event_x_holds, expectimax,
    hoeffding_half_width, monte_carlo, prob_x_lower_bound, theorem_bound, trial_seed,
    AdversaryPolicy, FirstPolicy, MonteCarloResult, RandomPolicy, ScriptPolicy, SearchConfig,
    SearchResult, Trial,
};
use blunt_core::engine::{run, Directive};
use blunt_core::exec::{outcome_of, Outcome, RandomTape};
use blunt_core::objects::{Binding, ObjectKind};
use blunt_core::progdsl::{BadPredicate, Program};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::config::{bad_predicate, binding, effective_seed, load_program, write_or_print};
use crate::{AdversaryArg, BadArg, ObjectArg, RunArgs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub program: String,
    pub object: ObjectArg,
    pub k: Option<i64>,
    pub n: usize,
    pub adversary: AdversaryArg,
    pub trials: u64,
    pub seed: u64,
    pub step_budget: u64,
    pub search_budget: u64,
    pub bad: BadArg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tape: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<Directive>>,
}

/// An exact search result; probabilities are fractions in lowest terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exact {
    pub value: String,
    pub value_f64: f64,
    pub upper: String,
    pub upper_f64: f64,
    pub exhausted: bool,
    pub exact: bool,
    pub nodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub trials: u64,
    pub bad: u64,
    pub estimate: f64,
    /// 99% Hoeffding interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    pub event_x: u64,
    pub bad_and_x: u64,
    pub decomposition_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub n: u64,
    pub r: u64,
    pub k: u64,
    pub p_atomic: String,
    pub p_lin: String,
    pub prob_x_lower_bound: String,
    pub value: String,
    pub value_f64: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub returns: String,
    pub terminal: String,
    pub bad: bool,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub tape: Vec<i64>,
    pub bad: bool,
    pub event_x: bool,
    pub steps: usize,
    /// The schedule taken; replayable with `--adversary file`.
    pub directives: Vec<Directive>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: ExperimentConfig,
    /// The program in the text format, so the report replays on its own.
    pub program_text: String,
    #[serde(default)]
    pub search: Option<Exact>,
    #[serde(default)]
    pub monte_carlo: Option<Estimate>,
    #[serde(default)]
    pub replay: Option<Replay>,
    #[serde(default)]
    pub atomic_baseline: Option<Exact>,
    #[serde(default)]
    pub bound: Option<Bound>,
    #[serde(default)]
    pub bound_error: Option<String>,
    pub outcomes: Vec<OutcomeTally>,
    pub wall_time_secs: f64,
}

fn f64_of(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

fn exact_of(r: &SearchResult) -> Exact {
    Exact {
        value: r.value.to_string(),
        value_f64: f64_of(&r.value),
        upper: r.upper.to_string(),
        upper_f64: f64_of(&r.upper),
        exhausted: r.exhausted,
        exact: r.exact,
        nodes: r.stats.nodes,
    }
}

fn estimate_of(r: &MonteCarloResult) -> Estimate {
    Estimate {
        trials: r.trials,
        bad: r.bad,
        estimate: r.estimate,
        ci_low: r.ci_low,
        ci_high: r.ci_high,
        half_width: if r.trials == 0 {
            1.0
        } else {
            hoeffding_half_width(r.trials)
        },
        event_x: r.x,
        bad_and_x: r.bad_and_x,
        decomposition_holds: decomposition_holds(r),
    }
}

pub fn returns_text(o: &Outcome) -> String {
    o.returns
        .iter()
        .map(|(id, v)| format!("{id}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn terminal_text(o: &Outcome) -> String {
    o.terminal
        .iter()
        .map(|t| serde_json::to_value(t).map(|v| v.as_str().unwrap_or("").to_string()))
        .collect::<Result<Vec<_>, _>>()
        .unwrap_or_default()
        .join(" ")
}

fn tallies<'a>(outcomes: impl Iterator<Item = (&'a Outcome, bool)>) -> Vec<OutcomeTally> {
    let mut m: BTreeMap<(String, String), (bool, u64)> = BTreeMap::new();
    for (o, bad) in outcomes {
        let e = m
            .entry((returns_text(o), terminal_text(o)))
            .or_insert((bad, 0));
        e.1 += 1;
    }
    m.into_iter()
        .map(|((returns, terminal), (bad, count))| OutcomeTally {
            returns,
            terminal,
            bad,
            count,
        })
        .collect()
}

type PolicyFactory = Box<dyn Fn(u64) -> Box<dyn AdversaryPolicy>>;

fn search(
    program: &Program,
    b: Binding,
    bad: &Arc<dyn BadPredicate>,
    budget: u64,
) -> Result<SearchResult> {
    let bindings = vec![b; program.objects.len()];
    Ok(expectimax(
        program,
        &bindings,
        bad.clone(),
        SearchConfig {
            node_budget: budget,
        },
    )?)
}

pub fn cmd_run(args: RunArgs) -> Result<Report> {
    let start = Instant::now();
    let seed = effective_seed(args.seed)?;
    let program = load_program(&args.program)?;
    if let Some(n) = args.n {
        if n != program.n() {
            bail!(
                "--n {n} does not match the program's {} processes",
                program.n()
            );
        }
    }
    let b = binding(args.object, args.k)?;
    let bindings = vec![b; program.objects.len()];
    let bad = bad_predicate(args.bad);
    let trials = args.trials.unwrap_or(match args.adversary {
        AdversaryArg::Search => 0,
        _ => 1000,
    });
    let schedule: Option<Vec<Directive>> = match (&args.schedule, args.adversary) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading schedule {}", p.display()))?;
            Some(
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing schedule {}", p.display()))?,
            )
        }
        (None, AdversaryArg::File) => bail!("--adversary file requires --schedule"),
        (None, _) => None,
    };

    let main_search = match args.adversary {
        AdversaryArg::Search => Some(search(&program, b, &bad, args.search_budget)?),
        _ => None,
    };

    let make_policy: PolicyFactory = match args.adversary {
        AdversaryArg::Crafted => {
            let p = crafted_abd_weakener_policy(&program, &bindings)?;
            Box::new(move |_| Box::new(p.clone()))
        }
        AdversaryArg::Search => {
            let p = main_search
                .as_ref()
                .map(|r| r.policy.clone())
                .context("search result missing")?;
            Box::new(move |_| Box::new(p.clone()))
        }
        AdversaryArg::Random => Box::new(|s| Box::new(RandomPolicy::new(s))),
        AdversaryArg::First => Box::new(|_| Box::new(FirstPolicy)),
        AdversaryArg::File => {
            let d = schedule.clone().unwrap_or_default();
            Box::new(move |_| Box::new(ScriptPolicy::new(d.clone())))
        }
    };

    let mut mc: Option<MonteCarloResult> = None;
    let mut replay = None;
    let mut outcomes = Vec::new();
    if let Some(tape) = &args.tape {
        let mut p = make_policy(seed);
        let e = run(
            &program,
            &bindings,
            p.as_mut(),
            RandomTape::Fixed(tape.clone()),
            args.step_budget,
        )?;
        let o = outcome_of(&e);
        let is_bad = bad.is_bad(&o.returns);
        outcomes = tallies(std::iter::once((&o, is_bad)));
        replay = Some(Replay {
            tape: e.tape.iter().map(|t| t.value).collect(),
            bad: is_bad,
            event_x: event_x_holds(&e),
            steps: e.steps.len(),
            directives: e.directives.clone(),
        });
        if let Some(dir) = &args.trace_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("replay.jsonl"), e.to_jsonl())?;
        }
    } else if trials > 0 {
        let r = monte_carlo(
            &program,
            &bindings,
            bad.as_ref(),
            make_policy.as_ref(),
            trials,
            seed,
            args.step_budget,
        )?;
        outcomes = tallies(r.per_trial.iter().map(|t| (&t.outcome, t.bad)));
        if let Some(path) = &args.csv {
            write_trials_csv(path, &r.per_trial)?;
        }
        if let Some(dir) = &args.trace_dir {
            std::fs::create_dir_all(dir)?;
            for i in 0..trials {
                let s = trial_seed(seed, i);
                let mut p = make_policy(s);
                let e = run(
                    &program,
                    &bindings,
                    p.as_mut(),
                    RandomTape::Seeded(s),
                    args.step_budget,
                )?;
                std::fs::write(dir.join(format!("trial-{i}.jsonl")), e.to_jsonl())?;
            }
        }
        mc = Some(r);
    }

    let (atomic_baseline, bound, bound_error) = if args.no_bound {
        (None, None, None)
    } else {
        let atomic = search(
            &program,
            Binding::plain(ObjectKind::Atomic),
            &bad,
            args.search_budget,
        )?;
        let plain = Binding { k: None, ..b };
        let lin = if plain.kind == ObjectKind::Atomic {
            atomic.clone()
        } else if let (Some(r), true) = (&main_search, plain == b) {
            r.clone()
        } else {
            search(&program, plain, &bad, args.search_budget)?
        };
        let n = program.n() as u64;
        let r = program.max_random_steps() as u64;
        let k = b.k.unwrap_or(1) as u64;
        // the bound grows in both probabilities, so certified upper values
        // keep it sound when a search is cut short
        let (bound, err) = match (
            theorem_bound(&atomic.upper, &lin.upper, n, r, k),
            prob_x_lower_bound(n, r, k),
        ) {
            (Ok(v), Ok(x)) => (
                Some(Bound {
                    n,
                    r,
                    k,
                    p_atomic: atomic.upper.to_string(),
                    p_lin: lin.upper.to_string(),
                    prob_x_lower_bound: x.to_string(),
                    value_f64: f64_of(&v),
                    value: v.to_string(),
                }),
                None,
            ),
            (Err(e), _) | (_, Err(e)) => (None, Some(e.to_string())),
        };
        (Some(exact_of(&atomic)), bound, err)
    };

    let report = Report {
        version: format!("blunt {}", env!("CARGO_PKG_VERSION")),
        config: ExperimentConfig {
            program: args.program.clone(),
            object: args.object,
            k: args.k,
            n: program.n(),
            adversary: args.adversary,
            trials: if args.tape.is_some() { 1 } else { trials },
            seed,
            step_budget: args.step_budget,
            search_budget: args.search_budget,
            bad: args.bad,
            tape: args.tape.clone(),
            schedule,
        },
        program_text: program.to_text(),
        search: main_search.as_ref().map(exact_of),
        monte_carlo: mc.as_ref().map(estimate_of),
        replay,
        atomic_baseline,
        bound,
        bound_error,
        outcomes,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_or_print(args.out.as_deref(), &text)?;
    Ok(report)
}

fn write_trials_csv(path: &std::path::Path, trials: &[Trial]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "trial", "seed", "bad", "event_x", "tape", "returns", "terminal",
    ])?;
    for t in trials {
        let mut tape = String::new();
        for (i, v) in t.tape.iter().enumerate() {
            if i > 0 {
                tape.push(' ');
            }
            let _ = write!(tape, "{v}");
        }
        w.write_record([
            t.index.to_string(),
            t.seed.to_string(),
            t.bad.to_string(),
            t.event_x.to_string(),
            tape,
            returns_text(&t.outcome),
            terminal_text(&t.outcome),
        ])?;
    }
    w.flush()?;
    Ok(())
}
