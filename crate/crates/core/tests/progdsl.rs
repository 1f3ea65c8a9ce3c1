use blunt_core::progdsl::{weakener, DslError, Expr, Instruction, ObjectDecl, Program};
use blunt_core::value::Value;
use proptest::prelude::*;

const OBJECTS: [&str; 2] = ["R", "C"];

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3i64..10).prop_map(Expr::int),
        Just(Expr::Const(Value::Bot)),
        Just(Expr::var("v")),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        let pair = (inner.clone(), inner.clone());
        prop_oneof![
            pair.clone()
                .prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            pair.clone()
                .prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            pair.clone()
                .prop_map(|(a, b)| Expr::Eq(Box::new(a), Box::new(b))),
            pair.clone()
                .prop_map(|(a, b)| Expr::Ne(Box::new(a), Box::new(b))),
            pair.clone()
                .prop_map(|(a, b)| Expr::And(Box::new(a), Box::new(b))),
            pair.prop_map(|(a, b)| Expr::Or(Box::new(a), Box::new(b))),
            inner.prop_map(|a| Expr::Not(Box::new(a))),
        ]
    })
}

fn object() -> impl Strategy<Value = String> {
    prop::sample::select(OBJECTS.to_vec()).prop_map(String::from)
}

fn instruction() -> impl Strategy<Value = Instruction> {
    let simple = prop_oneof![
        (object(), expr()).prop_map(|(object, value)| Instruction::Write { object, value }),
        (prop::sample::select(vec!["a", "b"]), object()).prop_map(|(v, object)| {
            Instruction::Read {
                var: v.into(),
                object,
            }
        }),
        prop::collection::vec(-2i64..5, 1..4).prop_map(|domain| Instruction::Random {
            var: "w".into(),
            domain
        }),
        expr().prop_map(|expr| Instruction::Assign {
            var: "v".into(),
            expr
        }),
    ];
    simple.prop_recursive(2, 12, 3, |inner| {
        (
            expr(),
            prop::collection::vec(inner.clone(), 0..3),
            prop::collection::vec(inner, 0..3),
        )
            .prop_map(|(cond, then_branch, else_branch)| Instruction::If {
                cond,
                then_branch,
                else_branch,
            })
    })
}

fn body() -> impl Strategy<Value = Vec<Instruction>> {
    (
        prop::collection::vec(instruction(), 0..5),
        prop_oneof![
            Just(None),
            Just(Some(Instruction::LoopForever)),
            Just(Some(Instruction::Terminate))
        ],
    )
        .prop_map(|(mut body, last)| {
            // `v` is assigned first so every expression may use it
            body.insert(
                0,
                Instruction::Assign {
                    var: "v".into(),
                    expr: Expr::int(0),
                },
            );
            body.extend(last);
            body
        })
}

fn program() -> impl Strategy<Value = Program> {
    (
        prop::collection::vec(body(), 1..4),
        prop_oneof![Just(Value::Bot), (-5i64..5).prop_map(Value::Int)],
    )
        .prop_map(|(processes, init)| Program {
            name: "generated".into(),
            objects: OBJECTS
                .iter()
                .map(|o| ObjectDecl {
                    name: o.to_string(),
                    init: init.clone(),
                })
                .collect(),
            processes,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn text_format_round_trips(p in program()) {
        prop_assert!(p.validate().is_ok());
        let text = p.to_text();
        let back = Program::parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p);
    }
}

#[test]
fn weakener_round_trips_and_has_one_coin() {
    let w = weakener();
    assert_eq!(Program::parse(&w.to_text()).unwrap(), w);
    assert_eq!(w.n(), 3);
    assert_eq!(w.max_random_steps(), 1);
}

#[test]
fn validation_errors() {
    let parse = |s: &str| Program::parse(s);
    assert!(matches!(
        parse("program p\nobject R = 0\nprocess 0:\n  write Q 1\n"),
        Err(DslError::UnknownObject { .. })
    ));
    assert!(matches!(
        parse("program p\nobject R = 0\nprocess 0:\n  write R x\n"),
        Err(DslError::UnassignedVariable { .. })
    ));
    assert!(matches!(
        parse("program p\nobject R = 0\n"),
        Err(DslError::NoProcesses)
    ));
    assert!(matches!(
        parse("program p\nobject R = 0\nprocess 0:\n  x := frobnicate R\n"),
        Err(DslError::Parse { line: 4, .. })
    ));
}

#[test]
fn variables_assigned_on_one_branch_only_are_unassigned_after_it() {
    let text = "program p\nobject R = 0\nprocess 0:\n  c := random {0, 1}\n  if (c == 0) {\n    x := read R\n  } else {\n  }\n  write R x\n";
    assert!(matches!(
        Program::parse(text),
        Err(DslError::UnassignedVariable { .. })
    ));
}
