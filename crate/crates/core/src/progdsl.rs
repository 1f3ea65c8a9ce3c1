//! A small loop-free language for randomized client programs, and the
//! predicates that pick out "bad" outcomes.
//!
//! Programs are a fixed set of processes, each a list of instructions that
//! read and write shared objects, sample random values and branch. The only
//! loop is the absorbing `loop` sink, which keeps the number of random steps
//! on any path finite and computable.
//!
//! The text format has one process per section and one instruction per line:
//!
//! ```text
//! program weakener
//! object R = bot
//! object C = -1
//! process 0:
//!   write R 0
//! process 1:
//!   write R 1
//!   coin := random {0, 1}
//!   write C coin
//! process 2:
//!   u1 := read R
//!   ...
//!   if ((u1 == c) && (u2 == (1 - c))) {
//!     loop
//!   } else {
//!     terminate
//!   }
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::exec::{InvocationId, Returns};
use crate::value::Value;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DslError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("random instruction with empty domain in process {0}")]
    EmptyDomain(usize),
    #[error("process {proc} uses undeclared object `{object}`")]
    UnknownObject { proc: usize, object: String },
    #[error("process {proc} reads variable `{var}` before assigning it")]
    UnassignedVariable { proc: usize, var: String },
    #[error("program declares no processes")]
    NoProcesses,
}

/// Expressions over local variables and constants. Booleans are the integers
/// 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Const(Value),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Ne(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn int(i: i64) -> Expr {
        Expr::Const(Value::Int(i))
    }

    fn bin(op: fn(Box<Expr>, Box<Expr>) -> Expr, a: Expr, b: Expr) -> Expr {
        op(Box::new(a), Box::new(b))
    }

    /// Evaluates against a variable lookup. Arithmetic on non-integers and
    /// unknown variables evaluate to `⊥`.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<Value>) -> Value {
        let truth = |b: bool| Value::Int(b as i64);
        let is_true = |v: &Value| matches!(v, Value::Int(i) if *i != 0);
        match self {
            Expr::Const(v) => v.clone(),
            Expr::Var(name) => lookup(name).unwrap_or(Value::Bot),
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                match (a.eval(lookup).as_int(), b.eval(lookup).as_int()) {
                    (Some(x), Some(y)) => Value::Int(if matches!(self, Expr::Add(..)) {
                        x.wrapping_add(y)
                    } else {
                        x.wrapping_sub(y)
                    }),
                    _ => Value::Bot,
                }
            }
            Expr::Eq(a, b) => truth(a.eval(lookup) == b.eval(lookup)),
            Expr::Ne(a, b) => truth(a.eval(lookup) != b.eval(lookup)),
            Expr::And(a, b) => truth(is_true(&a.eval(lookup)) && is_true(&b.eval(lookup))),
            Expr::Or(a, b) => truth(is_true(&a.eval(lookup)) || is_true(&b.eval(lookup))),
            Expr::Not(a) => truth(!is_true(&a.eval(lookup))),
        }
    }

    fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(v.clone()),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Eq(a, b)
            | Expr::Ne(a, b)
            | Expr::And(a, b)
            | Expr::Or(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            Expr::Not(a) => a.vars(out),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bin =
            |f: &mut fmt::Formatter<'_>, a: &Expr, op: &str, b: &Expr| write!(f, "({a} {op} {b})");
        match self {
            Expr::Const(Value::Bot) => write!(f, "bot"),
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Add(a, b) => bin(f, a, "+", b),
            Expr::Sub(a, b) => bin(f, a, "-", b),
            Expr::Eq(a, b) => bin(f, a, "==", b),
            Expr::Ne(a, b) => bin(f, a, "!=", b),
            Expr::And(a, b) => bin(f, a, "&&", b),
            Expr::Or(a, b) => bin(f, a, "||", b),
            Expr::Not(a) => write!(f, "!{a}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instruction {
    /// Invoke the writing method of an object (`Write`, or `Update` on a
    /// snapshot).
    Write {
        object: String,
        value: Expr,
    },
    /// Invoke the reading method of an object (`Read`, or `Scan` on a
    /// snapshot) and store the result.
    Read {
        var: String,
        object: String,
    },
    Random {
        var: String,
        domain: Vec<i64>,
    },
    Assign {
        var: String,
        expr: Expr,
    },
    If {
        cond: Expr,
        then_branch: Vec<Instruction>,
        else_branch: Vec<Instruction>,
    },
    LoopForever,
    Terminate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectDecl {
    pub name: String,
    pub init: Value,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub objects: Vec<ObjectDecl>,
    pub processes: Vec<Vec<Instruction>>,
}

impl Program {
    pub fn n(&self) -> usize {
        self.processes.len()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    /// Checks names, random domains and assignment-before-use.
    pub fn validate(&self) -> Result<(), DslError> {
        if self.processes.is_empty() {
            return Err(DslError::NoProcesses);
        }
        for (p, body) in self.processes.iter().enumerate() {
            let mut assigned = Vec::new();
            self.validate_block(p, body, &mut assigned)?;
        }
        Ok(())
    }

    fn validate_block(
        &self,
        proc: usize,
        body: &[Instruction],
        assigned: &mut Vec<String>,
    ) -> Result<(), DslError> {
        let check_expr = |e: &Expr, assigned: &Vec<String>| {
            let mut used = Vec::new();
            e.vars(&mut used);
            match used.into_iter().find(|v| !assigned.contains(v)) {
                Some(var) => Err(DslError::UnassignedVariable { proc, var }),
                None => Ok(()),
            }
        };
        let check_obj = |o: &str| {
            if self.object_index(o).is_none() {
                Err(DslError::UnknownObject {
                    proc,
                    object: o.to_string(),
                })
            } else {
                Ok(())
            }
        };
        for ins in body {
            match ins {
                Instruction::Write { object, value } => {
                    check_obj(object)?;
                    check_expr(value, assigned)?;
                }
                Instruction::Read { var, object } => {
                    check_obj(object)?;
                    assigned.push(var.clone());
                }
                Instruction::Random { var, domain } => {
                    if domain.is_empty() {
                        return Err(DslError::EmptyDomain(proc));
                    }
                    assigned.push(var.clone());
                }
                Instruction::Assign { var, expr } => {
                    check_expr(expr, assigned)?;
                    assigned.push(var.clone());
                }
                Instruction::If {
                    cond,
                    then_branch,
                    else_branch,
                } => {
                    check_expr(cond, assigned)?;
                    let mut a = assigned.clone();
                    self.validate_block(proc, then_branch, &mut a)?;
                    let mut b = assigned.clone();
                    self.validate_block(proc, else_branch, &mut b)?;
                    // only variables assigned on both branches survive
                    assigned.extend(
                        a.into_iter()
                            .filter(|v| b.contains(v) && !assigned.contains(v))
                            .collect::<Vec<_>>(),
                    );
                }
                Instruction::LoopForever | Instruction::Terminate => {}
            }
        }
        Ok(())
    }

    /// Maximum number of program `random` steps over all executions: the sum
    /// over processes of the path maximum within each process.
    pub fn max_random_steps(&self) -> usize {
        fn block(body: &[Instruction]) -> usize {
            let mut total = 0;
            for ins in body {
                match ins {
                    Instruction::Random { .. } => total += 1,
                    Instruction::If {
                        then_branch,
                        else_branch,
                        ..
                    } => total += block(then_branch).max(block(else_branch)),
                    Instruction::LoopForever | Instruction::Terminate => return total,
                    _ => {}
                }
            }
            total
        }
        self.processes.iter().map(|b| block(b)).sum()
    }

    /// Parses the text format described in the module documentation.
    pub fn parse(text: &str) -> Result<Program, DslError> {
        Parser::new(text).program()
    }

    /// Renders the program in the text format; `parse(to_text(p)) == p`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "program {}", self.name);
        for o in &self.objects {
            let init = match &o.init {
                Value::Bot => "bot".to_string(),
                v => v.to_string(),
            };
            let _ = writeln!(out, "object {} = {}", o.name, init);
        }
        for (p, body) in self.processes.iter().enumerate() {
            let _ = writeln!(out, "process {p}:");
            write_block(&mut out, body, 1);
        }
        out
    }
}

fn write_block(out: &mut String, body: &[Instruction], depth: usize) {
    let pad = "  ".repeat(depth);
    for ins in body {
        match ins {
            Instruction::Write { object, value } => {
                let _ = writeln!(out, "{pad}write {object} {value}");
            }
            Instruction::Read { var, object } => {
                let _ = writeln!(out, "{pad}{var} := read {object}");
            }
            Instruction::Random { var, domain } => {
                let d: Vec<String> = domain.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(out, "{pad}{var} := random {{{}}}", d.join(", "));
            }
            Instruction::Assign { var, expr } => {
                let _ = writeln!(out, "{pad}{var} := {expr}");
            }
            Instruction::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let _ = writeln!(out, "{pad}if {cond} {{");
                write_block(out, then_branch, depth + 1);
                let _ = writeln!(out, "{pad}}} else {{");
                write_block(out, else_branch, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
            Instruction::LoopForever => {
                let _ = writeln!(out, "{pad}loop");
            }
            Instruction::Terminate => {
                let _ = writeln!(out, "{pad}terminate");
            }
        }
    }
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Parser { lines, pos: 0 }
    }

    fn err<T>(&self, line: usize, msg: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Parse {
            line,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    fn program(mut self) -> Result<Program, DslError> {
        let (line, first) = match self.peek() {
            Some(l) => l,
            None => return self.err(0, "empty program"),
        };
        let name = match first.strip_prefix("program ") {
            Some(n) => n.trim().to_string(),
            None => return self.err(line, "expected `program <name>`"),
        };
        self.pos += 1;
        let mut objects = Vec::new();
        let mut processes = Vec::new();
        while let Some((line, text)) = self.peek() {
            if let Some(rest) = text.strip_prefix("object ") {
                let (oname, init) = match rest.split_once('=') {
                    Some(x) => x,
                    None => return self.err(line, "expected `object <name> = <value>`"),
                };
                let init = match parse_expr(init.trim()) {
                    Ok(Expr::Const(v)) => v,
                    Ok(Expr::Sub(a, b)) if *a == Expr::int(0) => match *b {
                        Expr::Const(Value::Int(i)) => Value::Int(-i),
                        _ => return self.err(line, "object initial value must be a constant"),
                    },
                    Ok(_) => return self.err(line, "object initial value must be a constant"),
                    Err(e) => return self.err(line, e),
                };
                objects.push(ObjectDecl {
                    name: oname.trim().to_string(),
                    init,
                });
                self.pos += 1;
            } else if let Some(rest) = text.strip_prefix("process ") {
                let idx: usize = match rest.trim_end_matches(':').trim().parse() {
                    Ok(i) => i,
                    Err(_) => return self.err(line, "expected `process <index>:`"),
                };
                if idx != processes.len() {
                    return self.err(line, format!("expected process {}", processes.len()));
                }
                self.pos += 1;
                processes.push(self.block(false)?);
            } else {
                return self.err(line, format!("unexpected `{text}`"));
            }
        }
        let program = Program {
            name,
            objects,
            processes,
        };
        program.validate()?;
        Ok(program)
    }

    /// Reads instructions until a section header (top level) or a closing
    /// brace (nested).
    fn block(&mut self, nested: bool) -> Result<Vec<Instruction>, DslError> {
        let mut body = Vec::new();
        while let Some((line, text)) = self.peek() {
            if !nested && (text.starts_with("process ") || text.starts_with("object ")) {
                break;
            }
            if nested && text.starts_with('}') {
                break;
            }
            self.pos += 1;
            body.push(self.instruction(line, text)?);
        }
        Ok(body)
    }

    fn instruction(&mut self, line: usize, text: &str) -> Result<Instruction, DslError> {
        if text == "loop" {
            return Ok(Instruction::LoopForever);
        }
        if text == "terminate" {
            return Ok(Instruction::Terminate);
        }
        if let Some(rest) = text.strip_prefix("write ") {
            let rest = rest.trim();
            let (object, expr) = match rest.split_once(char::is_whitespace) {
                Some(x) => x,
                None => return self.err(line, "expected `write <object> <expr>`"),
            };
            let value = parse_expr(expr.trim()).or_else(|e| self.err(line, e))?;
            return Ok(Instruction::Write {
                object: object.to_string(),
                value,
            });
        }
        if let Some(rest) = text.strip_prefix("if ") {
            let cond_text = match rest.trim().strip_suffix('{') {
                Some(c) => c.trim(),
                None => return self.err(line, "expected `{` at end of if"),
            };
            let cond = parse_expr(cond_text).or_else(|e| self.err(line, e))?;
            let then_branch = self.block(true)?;
            let (l2, close) = match self.peek() {
                Some(x) => x,
                None => return self.err(line, "unterminated if"),
            };
            self.pos += 1;
            let else_branch = if close == "} else {" {
                let b = self.block(true)?;
                match self.peek() {
                    Some((_, "}")) => self.pos += 1,
                    _ => return self.err(l2, "unterminated else"),
                }
                b
            } else if close == "}" {
                Vec::new()
            } else {
                return self.err(l2, "expected `}` or `} else {`");
            };
            return Ok(Instruction::If {
                cond,
                then_branch,
                else_branch,
            });
        }
        if let Some((var, rhs)) = text.split_once(":=") {
            let var = var.trim().to_string();
            if !is_ident(&var) {
                return self.err(line, format!("bad variable name `{var}`"));
            }
            let rhs = rhs.trim();
            if let Some(object) = rhs.strip_prefix("read ") {
                return Ok(Instruction::Read {
                    var,
                    object: object.trim().to_string(),
                });
            }
            if let Some(dom) = rhs.strip_prefix("random") {
                let dom = dom.trim();
                let inner = match dom.strip_prefix('{').and_then(|d| d.strip_suffix('}')) {
                    Some(i) => i,
                    None => return self.err(line, "expected `random {v1, v2, ...}`"),
                };
                let mut domain = Vec::new();
                for part in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match part.parse::<i64>() {
                        Ok(v) => domain.push(v),
                        Err(_) => return self.err(line, format!("bad domain value `{part}`")),
                    }
                }
                return Ok(Instruction::Random { var, domain });
            }
            let expr = parse_expr(rhs).or_else(|e| self.err(line, e))?;
            return Ok(Instruction::Assign { var, expr });
        }
        self.err(line, format!("unknown instruction `{text}`"))
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Int(i64),
    Ident(String),
    Op(&'static str),
}

fn tokenize(s: &str) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_digit() {
                i += 1;
            }
            toks.push(Tok::Int(
                s[start..i].parse().map_err(|_| "integer overflow")?,
            ));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            toks.push(Tok::Ident(s[start..i].to_string()));
        } else {
            let two = s.get(i..i + 2).unwrap_or("");
            let op = match two {
                "==" => Some("=="),
                "!=" => Some("!="),
                "&&" => Some("&&"),
                "||" => Some("||"),
                _ => None,
            };
            if let Some(op) = op {
                toks.push(Tok::Op(op));
                i += 2;
                continue;
            }
            let op = match c {
                '+' => "+",
                '-' => "-",
                '!' => "!",
                '(' => "(",
                ')' => ")",
                _ => return Err(format!("unexpected character `{c}`")),
            };
            toks.push(Tok::Op(op));
            i += 1;
        }
    }
    Ok(toks)
}

fn parse_expr(s: &str) -> Result<Expr, String> {
    let toks = tokenize(s)?;
    let mut pos = 0;
    let e = expr_or(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(format!("trailing input in expression `{s}`"));
    }
    Ok(e)
}

fn expr_or(t: &[Tok], pos: &mut usize) -> Result<Expr, String> {
    let mut lhs = expr_and(t, pos)?;
    while t.get(*pos) == Some(&Tok::Op("||")) {
        *pos += 1;
        lhs = Expr::bin(Expr::Or, lhs, expr_and(t, pos)?);
    }
    Ok(lhs)
}

fn expr_and(t: &[Tok], pos: &mut usize) -> Result<Expr, String> {
    let mut lhs = expr_cmp(t, pos)?;
    while t.get(*pos) == Some(&Tok::Op("&&")) {
        *pos += 1;
        lhs = Expr::bin(Expr::And, lhs, expr_cmp(t, pos)?);
    }
    Ok(lhs)
}

fn expr_cmp(t: &[Tok], pos: &mut usize) -> Result<Expr, String> {
    let lhs = expr_add(t, pos)?;
    match t.get(*pos) {
        Some(Tok::Op("==")) => {
            *pos += 1;
            Ok(Expr::bin(Expr::Eq, lhs, expr_add(t, pos)?))
        }
        Some(Tok::Op("!=")) => {
            *pos += 1;
            Ok(Expr::bin(Expr::Ne, lhs, expr_add(t, pos)?))
        }
        _ => Ok(lhs),
    }
}

fn expr_add(t: &[Tok], pos: &mut usize) -> Result<Expr, String> {
    let mut lhs = expr_unary(t, pos)?;
    loop {
        match t.get(*pos) {
            Some(Tok::Op("+")) => {
                *pos += 1;
                lhs = Expr::bin(Expr::Add, lhs, expr_unary(t, pos)?);
            }
            Some(Tok::Op("-")) => {
                *pos += 1;
                lhs = Expr::bin(Expr::Sub, lhs, expr_unary(t, pos)?);
            }
            _ => return Ok(lhs),
        }
    }
}

fn expr_unary(t: &[Tok], pos: &mut usize) -> Result<Expr, String> {
    match t.get(*pos) {
        Some(Tok::Op("!")) => {
            *pos += 1;
            Ok(Expr::Not(Box::new(expr_unary(t, pos)?)))
        }
        Some(Tok::Op("-")) => {
            *pos += 1;
            match expr_unary(t, pos)? {
                Expr::Const(Value::Int(i)) => Ok(Expr::int(-i)),
                e => Ok(Expr::bin(Expr::Sub, Expr::int(0), e)),
            }
        }
        Some(Tok::Op("(")) => {
            *pos += 1;
            let e = expr_or(t, pos)?;
            if t.get(*pos) != Some(&Tok::Op(")")) {
                return Err("missing `)`".into());
            }
            *pos += 1;
            Ok(e)
        }
        Some(Tok::Int(i)) => {
            *pos += 1;
            Ok(Expr::int(*i))
        }
        Some(Tok::Ident(id)) => {
            *pos += 1;
            Ok(match id.as_str() {
                "bot" => Expr::Const(Value::Bot),
                "ok" => Expr::Const(Value::Unit),
                _ => Expr::Var(id.clone()),
            })
        }
        other => Err(format!("unexpected token {other:?}")),
    }
}

/// The three-process weakener: two writers race on `R`, one of them then
/// flips a coin into `C`, and the reader loops forever when its two reads of
/// `R` and its read of `C` line up with the coin.
pub fn weakener() -> Program {
    let w = |o: &str, e: Expr| Instruction::Write {
        object: o.into(),
        value: e,
    };
    let r = |v: &str, o: &str| Instruction::Read {
        var: v.into(),
        object: o.into(),
    };
    let cond = Expr::bin(
        Expr::And,
        Expr::bin(Expr::Eq, Expr::var("u1"), Expr::var("c")),
        Expr::bin(
            Expr::Eq,
            Expr::var("u2"),
            Expr::bin(Expr::Sub, Expr::int(1), Expr::var("c")),
        ),
    );
    Program {
        name: "weakener".into(),
        objects: vec![
            ObjectDecl {
                name: "R".into(),
                init: Value::Bot,
            },
            ObjectDecl {
                name: "C".into(),
                init: Value::Int(-1),
            },
        ],
        processes: vec![
            vec![w("R", Expr::int(0))],
            vec![
                w("R", Expr::int(1)),
                Instruction::Random {
                    var: "coin".into(),
                    domain: vec![0, 1],
                },
                w("C", Expr::var("coin")),
            ],
            vec![
                r("u1", "R"),
                r("u2", "R"),
                r("c", "C"),
                Instruction::If {
                    cond,
                    then_branch: vec![Instruction::LoopForever],
                    else_branch: vec![Instruction::Terminate],
                },
            ],
        ],
    }
}

/// Decides whether an outcome is "bad".
///
/// `decided` may answer early from the invocations that have returned so
/// far; returns only ever accumulate, so an early answer must hold for every
/// extension of the partial outcome.
pub trait BadPredicate: Send + Sync {
    fn name(&self) -> &str;

    fn is_bad(&self, returns: &Returns) -> bool;

    fn decided(&self, returns: &Returns) -> Option<bool> {
        let _ = returns;
        None
    }
}

/// `u1 = c ∧ u2 = 1 − c` over the reader's three invocations.
#[derive(Clone, Debug)]
pub struct WeakenerBad {
    pub u1: InvocationId,
    pub u2: InvocationId,
    pub c: InvocationId,
}

impl WeakenerBad {
    fn check(u1: Option<&Value>, u2: Option<&Value>, c: Option<&Value>) -> Option<bool> {
        let int = |v: Option<&Value>| v.map(|v| v.as_int());
        let (u1, u2, c) = (int(u1), int(u2), int(c));
        // ⊥ or a non-coin value anywhere rules the outcome out
        for v in [u1, u2, c].into_iter().flatten() {
            match v {
                Some(0) | Some(1) => {}
                _ => return Some(false),
            }
        }
        let (u1, u2, c) = (u1.flatten(), u2.flatten(), c.flatten());
        if let (Some(a), Some(b)) = (u1, u2) {
            if b != 1 - a {
                return Some(false);
            }
        }
        if let (Some(a), Some(x)) = (u1, c) {
            if a != x {
                return Some(false);
            }
        }
        if let (Some(b), Some(x)) = (u2, c) {
            if b != 1 - x {
                return Some(false);
            }
        }
        match (u1, u2, c) {
            (Some(_), Some(_), Some(_)) => Some(true),
            _ => None,
        }
    }
}

impl BadPredicate for WeakenerBad {
    fn name(&self) -> &str {
        "weakener-loops"
    }

    fn is_bad(&self, returns: &Returns) -> bool {
        Self::check(
            returns.get(&self.u1),
            returns.get(&self.u2),
            returns.get(&self.c),
        )
        .unwrap_or(false)
    }

    fn decided(&self, returns: &Returns) -> Option<bool> {
        Self::check(
            returns.get(&self.u1),
            returns.get(&self.u2),
            returns.get(&self.c),
        )
    }
}

pub fn weakener_bad() -> WeakenerBad {
    let id = |site| InvocationId {
        proc: 2,
        site,
        occ: 0,
    };
    WeakenerBad {
        u1: id(0),
        u2: id(1),
        c: id(2),
    }
}

/// A predicate given by a closure over complete outcomes; it never decides
/// early.
pub struct FnPredicate<F> {
    name: String,
    f: F,
}

impl<F: Fn(&Returns) -> bool + Send + Sync> FnPredicate<F> {
    pub fn new(name: &str, f: F) -> Self {
        FnPredicate {
            name: name.to_string(),
            f,
        }
    }
}

impl<F: Fn(&Returns) -> bool + Send + Sync> BadPredicate for FnPredicate<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_bad(&self, returns: &Returns) -> bool {
        (self.f)(returns)
    }
}

/// Builds a program where every process runs a fixed list of invocations;
/// used to drive objects in fuzzing and tree enumeration.
///
/// `ops[p]` lists `Some(v)` for a write of `v` and `None` for a read.
pub fn workload(name: &str, object: &str, init: Value, ops: &[Vec<Option<i64>>]) -> Program {
    let processes = ops
        .iter()
        .map(|list| {
            let mut reads = 0;
            list.iter()
                .map(|op| match op {
                    Some(v) => Instruction::Write {
                        object: object.into(),
                        value: Expr::int(*v),
                    },
                    None => {
                        reads += 1;
                        Instruction::Read {
                            var: format!("r{reads}"),
                            object: object.into(),
                        }
                    }
                })
                .collect()
        })
        .collect();
    Program {
        name: name.into(),
        objects: vec![ObjectDecl {
            name: object.into(),
            init,
        }],
        processes,
    }
}

/// Per-process variable names, in first-assignment order.
pub(crate) fn collect_vars(body: &[Instruction], out: &mut BTreeMap<String, usize>) {
    for ins in body {
        let v = match ins {
            Instruction::Read { var, .. }
            | Instruction::Random { var, .. }
            | Instruction::Assign { var, .. } => Some(var),
            _ => None,
        };
        if let Some(v) = v {
            let next = out.len();
            out.entry(v.clone()).or_insert(next);
        }
        if let Instruction::If {
            then_branch,
            else_branch,
            ..
        } = ins
        {
            collect_vars(then_branch, out);
            collect_vars(else_branch, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ret(pairs: &[(u32, Value)]) -> Returns {
        Returns::from_pairs(
            pairs
                .iter()
                .map(|(site, v)| {
                    (
                        InvocationId {
                            proc: 2,
                            site: *site,
                            occ: 0,
                        },
                        v.clone(),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn weakener_shape() {
        let p = weakener();
        assert_eq!(p.n(), 3);
        assert_eq!(p.max_random_steps(), 1);
        let names: Vec<_> = p.objects.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["R", "C"]);
        assert_eq!(p.objects[0].init, Value::Bot);
        assert_eq!(p.objects[1].init, Value::Int(-1));
        p.validate().unwrap();
    }

    #[test]
    fn weakener_bad_predicate() {
        let bad = weakener_bad();
        let i = Value::Int;
        assert!(bad.is_bad(&ret(&[(0, i(0)), (1, i(1)), (2, i(0))])));
        assert!(!bad.is_bad(&ret(&[(0, Value::Bot), (1, i(1)), (2, i(0))])));
        assert!(!bad.is_bad(&ret(&[(0, i(1)), (1, i(1)), (2, i(1))])));
        assert!(!bad.is_bad(&ret(&[(0, i(1)), (1, i(0)), (2, i(-1))])));
        // partial outcomes
        assert_eq!(bad.decided(&ret(&[(0, Value::Bot)])), Some(false));
        assert_eq!(bad.decided(&ret(&[(0, i(0))])), None);
        assert_eq!(bad.decided(&ret(&[(0, i(0)), (1, i(0))])), Some(false));
        assert_eq!(bad.decided(&ret(&[(0, i(0)), (1, i(1))])), None);
        assert_eq!(
            bad.decided(&ret(&[(0, i(1)), (1, i(0)), (2, i(1))])),
            Some(true)
        );
    }

    #[test]
    fn max_random_steps_counts_paths() {
        let none = Program::parse("program p\nobject R = 0\nprocess 0:\n  write R 1\n").unwrap();
        assert_eq!(none.max_random_steps(), 0);
        let two = Program::parse(
            "program p\nobject R = 0\nprocess 0:\n  a := random {0, 1}\n  b := random {0, 1}\n  write R (a + b)\n",
        )
        .unwrap();
        assert_eq!(two.max_random_steps(), 2);
        let branchy = Program::parse(
            "program p\nobject R = 0\nprocess 0:\n  a := random {0, 1}\n  if (a == 0) {\n    b := random {0, 1}\n    c := random {0, 1}\n  } else {\n    loop\n  }\nprocess 1:\n  d := random {2, 3}\n",
        )
        .unwrap();
        assert_eq!(branchy.max_random_steps(), 4);
    }

    #[test]
    fn weakener_text_round_trip() {
        let p = weakener();
        let text = p.to_text();
        let back = Program::parse(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_errors_name_lines() {
        let err =
            Program::parse("program p\nobject R = 0\nprocess 0:\n  frobnicate\n").unwrap_err();
        assert_eq!(
            err,
            DslError::Parse {
                line: 4,
                msg: "unknown instruction `frobnicate`".into()
            }
        );
        let err = Program::parse("program p\nprocess 0:\n  x := read Q\n").unwrap_err();
        assert!(matches!(err, DslError::UnknownObject { .. }));
        let err = Program::parse("program p\nobject R = 0\nprocess 0:\n  write R y\n").unwrap_err();
        assert!(matches!(err, DslError::UnassignedVariable { .. }));
        let err =
            Program::parse("program p\nobject R = 0\nprocess 0:\n  x := random {}\n").unwrap_err();
        assert_eq!(err, DslError::EmptyDomain(0));
    }

    #[test]
    fn expressions_evaluate() {
        let e = parse_expr("(u1 == c) && (u2 == 1 - c)").unwrap();
        let env = |name: &str| match name {
            "u1" => Some(Value::Int(0)),
            "u2" => Some(Value::Int(1)),
            "c" => Some(Value::Int(0)),
            _ => None,
        };
        assert_eq!(e.eval(&env), Value::Int(1));
        assert_eq!(
            parse_expr("!(1 == 2) || 0").unwrap().eval(&env),
            Value::Int(1)
        );
        assert_eq!(parse_expr("bot + 1").unwrap().eval(&env), Value::Bot);
    }
}
