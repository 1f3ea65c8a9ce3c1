//! The deterministic step machine.
//!
//! A [`World`] holds every process's control state, the shared substrate of
//! each object and the network. The adversary drives it one [`Directive`] at
//! a time: either "let process `p` take its next step" or "deliver message
//! `m` to `p`". One directive may log several [`Step`]s (an ABD broadcast
//! logs one send per destination; an atomic register access logs its call,
//! access and return).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryPolicy;
use crate::exec::{
    AccessOp, Effect, ExecError, Execution, InvocationId, LocalOp, Origin, Outcome, ProcFinal,
    ProcessId, RandomSource, Returns, Step, StepKind, TapeEntry, TapeReader, Terminal,
};
use crate::netsim::{Cause, Message, MsgId, Network, Payload, Tag};
use crate::objects::{sites, Binding, Locals, Method, ObjectKind};
use crate::progdsl::{collect_vars, Expr, Instruction, ObjectDecl, Program};
use crate::value::{Timestamp, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "lowercase")]
pub enum Directive {
    Step { proc: ProcessId },
    Deliver { proc: ProcessId, msg: MsgId },
}

impl std::fmt::Display for Directive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Directive::Step { proc } => write!(f, "step(p{proc})"),
            Directive::Deliver { proc, msg } => write!(f, "deliver(p{proc}, m{msg})"),
        }
    }
}

/// What a process would do if scheduled now.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextAction {
    /// Terminated or looping forever.
    Done,
    /// Waiting for messages.
    Blocked,
    /// A step touching only the process itself (including sends).
    Local,
    /// A random step.
    Random,
    /// An access to a shared base object.
    Access,
}

#[derive(Clone, Debug)]
enum OpKind {
    Write { obj: u32, expr: Expr },
    Read { var: u32, obj: u32 },
    Random { var: u32, domain: Vec<i64> },
    Assign { var: u32, expr: Expr },
    Branch { cond: Expr, else_pc: u32 },
    Jump(u32),
    Loop,
    Terminate,
}

#[derive(Clone, Debug)]
struct Op {
    site: u32,
    kind: OpKind,
}

#[derive(Debug)]
struct CompiledProc {
    ops: Vec<Op>,
    vars: Vec<String>,
    sites: usize,
}

#[derive(Debug)]
struct Compiled {
    objects: Vec<ObjectDecl>,
    procs: Vec<CompiledProc>,
}

fn compile(program: &Program) -> Result<Compiled, ExecError> {
    program
        .validate()
        .map_err(|e| ExecError::InvalidInvocation(e.to_string()))?;
    let mut procs = Vec::new();
    for body in &program.processes {
        let mut vars = std::collections::BTreeMap::new();
        collect_vars(body, &mut vars);
        let mut names = vec![String::new(); vars.len()];
        for (name, i) in &vars {
            names[*i] = name.clone();
        }
        let mut ops = Vec::new();
        let mut site = 0u32;
        compile_block(program, body, &names, &mut ops, &mut site);
        ops.push(Op {
            site,
            kind: OpKind::Terminate,
        });
        procs.push(CompiledProc {
            ops,
            vars: names,
            sites: site as usize + 1,
        });
    }
    Ok(Compiled {
        objects: program.objects.clone(),
        procs,
    })
}

fn compile_block(
    program: &Program,
    body: &[Instruction],
    vars: &[String],
    ops: &mut Vec<Op>,
    site: &mut u32,
) {
    let var = |name: &str| vars.iter().position(|v| v == name).unwrap() as u32;
    let obj = |name: &str| program.object_index(name).unwrap() as u32;
    for ins in body {
        let s = *site;
        *site += 1;
        let kind = match ins {
            Instruction::Write { object, value } => OpKind::Write {
                obj: obj(object),
                expr: value.clone(),
            },
            Instruction::Read { var: v, object } => OpKind::Read {
                var: var(v),
                obj: obj(object),
            },
            Instruction::Random { var: v, domain } => OpKind::Random {
                var: var(v),
                domain: domain.clone(),
            },
            Instruction::Assign { var: v, expr } => OpKind::Assign {
                var: var(v),
                expr: expr.clone(),
            },
            Instruction::LoopForever => OpKind::Loop,
            Instruction::Terminate => OpKind::Terminate,
            Instruction::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let branch_at = ops.len();
                ops.push(Op {
                    site: s,
                    kind: OpKind::Branch {
                        cond: cond.clone(),
                        else_pc: 0,
                    },
                });
                compile_block(program, then_branch, vars, ops, site);
                let jump_at = ops.len();
                ops.push(Op {
                    site: s,
                    kind: OpKind::Jump(0),
                });
                let else_pc = ops.len() as u32;
                compile_block(program, else_branch, vars, ops, site);
                let end = ops.len() as u32;
                if let OpKind::Branch { else_pc: e, .. } = &mut ops[branch_at].kind {
                    *e = else_pc;
                }
                ops[jump_at].kind = OpKind::Jump(end);
                continue;
            }
        };
        ops.push(Op { site: s, kind });
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct SnapCell {
    pub value: Value,
    pub seq: u64,
    pub view: Vec<Value>,
}

#[derive(Clone, Debug)]
pub(crate) enum Substrate {
    Atomic(Value),
    Abd {
        servers: Vec<(Value, Timestamp)>,
        sn: Vec<u32>,
    },
    Va(Vec<(Value, Timestamp)>),
    Il {
        val: Vec<(Value, u64)>,
        report: Vec<Vec<(Value, u64)>>,
        seq: u64,
    },
    Snapshot(Vec<SnapCell>),
}

#[derive(Clone, Debug)]
struct ScanState {
    next: u32,
    cur: Vec<SnapCell>,
    prev: Option<Vec<u64>>,
    moved: Vec<bool>,
}

impl ScanState {
    fn new(n: usize) -> Box<ScanState> {
        Box::new(ScanState {
            next: 0,
            cur: Vec::with_capacity(n),
            prev: None,
            moved: vec![false; n],
        })
    }
}

#[derive(Clone, Debug)]
enum Phase {
    AbdStart,
    AbdQuery {
        sn: u32,
        got: u8,
        best: Option<(Value, Timestamp)>,
    },
    AbdUpdStart {
        v: Value,
        ts: Timestamp,
        ret: Value,
    },
    AbdUpd {
        sn: u32,
        got: u8,
        ret: Value,
    },
    VaCollect {
        next: u32,
        best: Option<(Value, Timestamp)>,
    },
    VaWrite {
        v: Value,
        ts: Timestamp,
    },
    IlRead {
        next: u32,
        best: Option<(Value, u64)>,
    },
    IlWrite {
        next: u32,
        v: Value,
        seq: u64,
    },
    IlReport {
        next: u32,
        v: Value,
        seq: u64,
    },
    Scan(Box<ScanState>),
    SnapWrite {
        view: Vec<Value>,
    },
    PreEnd(Locals),
    Choose,
    Ret(Value),
}

#[derive(Clone, Debug)]
struct Active {
    id: InvocationId,
    obj: u32,
    method: Method,
    arg: Value,
    target: Option<u32>,
    k: Option<u32>,
    iter: u32,
    collected: Vec<Locals>,
    in_tail: bool,
    phase: Phase,
}

impl Active {
    fn iter_tag(&self) -> Option<u32> {
        match (self.k, self.in_tail) {
            (Some(_), false) => Some(self.iter),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct ProcState {
    pc: u32,
    vars: Vec<Value>,
    status: Option<Terminal>,
    inv: Option<Box<Active>>,
    visits: Vec<u32>,
}

/// Summary of a process's in-progress invocation, for policies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvocationView {
    pub id: InvocationId,
    pub object: u32,
    pub method: Method,
    pub in_tail: bool,
    /// ABD only: waiting for replies (`Some(Tag::Reply)`) or acks
    /// (`Some(Tag::Ack)`), with the count received so far.
    pub waiting: Option<(Tag, u8)>,
    pub iteration: u32,
}

#[derive(Clone)]
pub struct World {
    prog: Arc<Compiled>,
    bindings: Arc<Vec<Binding>>,
    n: usize,
    quorum: u8,
    procs: Vec<ProcState>,
    objs: Vec<Substrate>,
    net: Network,
    returns: Returns,
    seq: u64,
    observed: Vec<i64>,
    log: Option<Log>,
}

#[derive(Clone, Default)]
struct Log {
    steps: Vec<Step>,
    tape: Vec<TapeEntry>,
    directives: Vec<Directive>,
}

impl World {
    /// `bindings[i]` implements `program.objects[i]`.
    pub fn new(program: &Program, bindings: &[Binding]) -> Result<World, ExecError> {
        if bindings.len() != program.objects.len() {
            return Err(ExecError::InvalidBinding(format!(
                "{} objects but {} bindings",
                program.objects.len(),
                bindings.len()
            )));
        }
        let prog = compile(program)?;
        let n = program.n();
        for (b, o) in bindings.iter().zip(&program.objects) {
            if b.kind == ObjectKind::Atomic && b.k.is_some() {
                return Err(ExecError::InvalidBinding(format!(
                    "atomic object {} cannot be preamble-iterated",
                    o.name
                )));
            }
            if b.kind == ObjectKind::Il && b.writer as usize >= n {
                return Err(ExecError::InvalidBinding(format!(
                    "writer {} of {} is not a process",
                    b.writer, o.name
                )));
            }
        }
        let objs = bindings
            .iter()
            .zip(&program.objects)
            .map(|(b, o)| {
                let init = o.init.clone();
                match b.kind {
                    ObjectKind::Atomic => Substrate::Atomic(init),
                    ObjectKind::Abd => Substrate::Abd {
                        servers: vec![(init, Timestamp::ZERO); n],
                        sn: vec![0; n],
                    },
                    ObjectKind::Va => Substrate::Va(vec![(init, Timestamp::ZERO); n]),
                    ObjectKind::Il => Substrate::Il {
                        val: vec![(init.clone(), 0); n],
                        report: vec![vec![(init, 0); n]; n],
                        seq: 0,
                    },
                    ObjectKind::Snapshot => Substrate::Snapshot(vec![
                        SnapCell {
                            value: init.clone(),
                            seq: 0,
                            view: vec![init; n],
                        };
                        n
                    ]),
                }
            })
            .collect();
        let procs = prog
            .procs
            .iter()
            .map(|cp| ProcState {
                pc: 0,
                vars: vec![Value::Bot; cp.vars.len()],
                status: None,
                inv: None,
                visits: vec![0; cp.sites],
            })
            .collect();
        let mut w = World {
            prog: Arc::new(prog),
            bindings: Arc::new(bindings.to_vec()),
            n,
            quorum: (n / 2 + 1) as u8,
            procs,
            objs,
            net: Network::new(),
            returns: Returns::default(),
            seq: 0,
            observed: Vec::new(),
            log: None,
        };
        for p in 0..n {
            w.skip_jumps(p);
        }
        Ok(w)
    }

    /// Records steps, consumed randomness and directives from now on.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Log::default());
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn quorum(&self) -> usize {
        self.quorum as usize
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn object_name(&self, obj: u32) -> &str {
        &self.prog.objects[obj as usize].name
    }

    pub fn object_index(&self, name: &str) -> Option<u32> {
        self.prog
            .objects
            .iter()
            .position(|o| o.name == name)
            .map(|i| i as u32)
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn returns(&self) -> &Returns {
        &self.returns
    }

    /// Random values consumed so far, both origins, in order.
    pub fn observed(&self) -> &[i64] {
        &self.observed
    }

    pub fn status(&self, p: ProcessId) -> Option<Terminal> {
        self.procs[p as usize].status
    }

    pub fn var(&self, p: ProcessId, name: &str) -> Option<&Value> {
        let cp = &self.prog.procs[p as usize];
        cp.vars
            .iter()
            .position(|v| v == name)
            .map(|i| &self.procs[p as usize].vars[i])
    }

    /// Number of logged steps so far (also the next step's sequence number).
    pub fn step_count(&self) -> u64 {
        self.seq
    }

    pub fn steps(&self) -> &[Step] {
        self.log.as_ref().map(|l| l.steps.as_slice()).unwrap_or(&[])
    }

    pub fn invocation(&self, p: ProcessId) -> Option<InvocationView> {
        let a = self.procs[p as usize].inv.as_ref()?;
        let waiting = match &a.phase {
            Phase::AbdQuery { got, .. } => Some((Tag::Reply, *got)),
            Phase::AbdUpd { got, .. } => Some((Tag::Ack, *got)),
            _ => None,
        };
        Some(InvocationView {
            id: a.id,
            object: a.obj,
            method: a.method,
            in_tail: a.in_tail,
            waiting,
            iteration: a.iter,
        })
    }

    /// ABD server state of process `p` for object `obj`.
    pub fn abd_server(&self, obj: u32, p: ProcessId) -> Option<(Value, Timestamp)> {
        match &self.objs[obj as usize] {
            Substrate::Abd { servers, .. } => Some(servers[p as usize].clone()),
            _ => None,
        }
    }

    pub fn next_action(&self, p: ProcessId) -> NextAction {
        let st = &self.procs[p as usize];
        if st.status.is_some() {
            return NextAction::Done;
        }
        if let Some(a) = &st.inv {
            return match &a.phase {
                Phase::AbdQuery { got, .. } | Phase::AbdUpd { got, .. } => {
                    if *got < self.quorum {
                        NextAction::Blocked
                    } else {
                        NextAction::Local
                    }
                }
                Phase::AbdStart | Phase::AbdUpdStart { .. } | Phase::PreEnd(_) | Phase::Ret(_) => {
                    NextAction::Local
                }
                Phase::Choose => NextAction::Random,
                Phase::VaCollect { .. }
                | Phase::VaWrite { .. }
                | Phase::IlRead { .. }
                | Phase::IlWrite { .. }
                | Phase::IlReport { .. }
                | Phase::Scan(_)
                | Phase::SnapWrite { .. } => NextAction::Access,
            };
        }
        match &self.prog.procs[p as usize].ops[st.pc as usize].kind {
            OpKind::Write { obj, .. } | OpKind::Read { obj, .. } => {
                if self.bindings[*obj as usize].kind == ObjectKind::Atomic {
                    NextAction::Access
                } else {
                    NextAction::Local
                }
            }
            OpKind::Random { .. } => NextAction::Random,
            _ => NextAction::Local,
        }
    }

    /// Domain of `p`'s next step when it is a random step.
    pub fn random_domain(&self, p: ProcessId) -> Option<Vec<i64>> {
        let st = &self.procs[p as usize];
        if st.status.is_some() {
            return None;
        }
        match &st.inv {
            Some(a) => match (&a.phase, a.k) {
                (Phase::Choose, Some(k)) => Some((1..=k as i64).collect()),
                _ => None,
            },
            None => match &self.prog.procs[p as usize].ops[st.pc as usize].kind {
                OpKind::Random { domain, .. } => Some(domain.clone()),
                _ => None,
            },
        }
    }

    /// A copy without the step log, for lookahead.
    pub fn detached(&self) -> World {
        World {
            prog: Arc::clone(&self.prog),
            bindings: Arc::clone(&self.bindings),
            n: self.n,
            quorum: self.quorum,
            procs: self.procs.clone(),
            objs: self.objs.clone(),
            net: self.net.clone(),
            returns: self.returns.clone(),
            seq: self.seq,
            observed: self.observed.clone(),
            log: None,
        }
    }

    pub fn schedulable(&self, p: ProcessId) -> bool {
        !matches!(self.next_action(p), NextAction::Done | NextAction::Blocked)
    }

    pub fn all_done(&self) -> bool {
        self.procs.iter().all(|s| s.status.is_some())
    }

    /// Every directive the engine would accept now.
    pub fn legal(&self) -> Vec<Directive> {
        let mut out: Vec<Directive> = (0..self.n as ProcessId)
            .filter(|p| self.schedulable(*p))
            .map(|proc| Directive::Step { proc })
            .collect();
        out.extend(self.net.in_flight().iter().map(|m| Directive::Deliver {
            proc: m.dest,
            msg: m.id,
        }));
        out
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            returns: self.returns.clone(),
            terminal: self
                .procs
                .iter()
                .map(|s| s.status.unwrap_or(Terminal::Blocked))
                .collect(),
        }
    }

    pub fn into_execution(self) -> Execution {
        let procs = self
            .procs
            .iter()
            .zip(&self.prog.procs)
            .map(|(s, cp)| ProcFinal {
                status: s.status,
                vars: cp
                    .vars
                    .iter()
                    .cloned()
                    .zip(s.vars.iter().cloned())
                    .collect(),
            })
            .collect();
        let log = self.log.unwrap_or_default();
        Execution {
            n: self.n,
            steps: log.steps,
            procs,
            tape: log.tape,
            directives: log.directives,
        }
    }

    pub fn apply(&mut self, d: Directive, rng: &mut dyn RandomSource) -> Result<(), ExecError> {
        let illegal = |reason: &str| ExecError::PolicyIllegalDirective {
            directive: d.to_string(),
            reason: reason.to_string(),
        };
        match d {
            Directive::Step { proc } => {
                if proc as usize >= self.n {
                    return Err(illegal("no such process"));
                }
                match self.next_action(proc) {
                    NextAction::Done => return Err(illegal("process has finished")),
                    NextAction::Blocked => return Err(illegal("process is blocked")),
                    _ => {}
                }
                if let Some(log) = &mut self.log {
                    log.directives.push(d);
                }
                if self.procs[proc as usize].inv.is_some() {
                    self.step_invocation(proc, rng)
                } else {
                    self.step_program(proc, rng)
                }
            }
            Directive::Deliver { proc, msg } => {
                if proc as usize >= self.n {
                    return Err(illegal("no such process"));
                }
                let m = self
                    .net
                    .take(proc, msg)
                    .map_err(|_| illegal("message not in flight to this process"))?;
                if let Some(log) = &mut self.log {
                    log.directives.push(d);
                }
                self.deliver(proc, m);
                Ok(())
            }
        }
    }

    fn emit(
        &mut self,
        proc: ProcessId,
        inv: Option<InvocationId>,
        site: u32,
        iter: Option<u32>,
        kind: impl FnOnce() -> StepKind,
    ) {
        if let Some(log) = &mut self.log {
            log.steps.push(Step {
                seq: self.seq,
                proc,
                inv,
                site,
                kind: kind(),
                iter,
            });
        }
        self.seq += 1;
    }

    fn skip_jumps(&mut self, p: usize) {
        let ops = &self.prog.procs[p].ops;
        let st = &mut self.procs[p];
        while let OpKind::Jump(t) = ops[st.pc as usize].kind {
            st.pc = t;
        }
    }

    fn advance(&mut self, p: usize) {
        self.procs[p].pc += 1;
        self.skip_jumps(p);
    }

    fn eval(&self, p: usize, e: &Expr) -> Value {
        let names = &self.prog.procs[p].vars;
        let vals = &self.procs[p].vars;
        e.eval(&|name| {
            names
                .iter()
                .position(|v| v == name)
                .map(|i| vals[i].clone())
        })
    }

    fn draw(
        &mut self,
        rng: &mut dyn RandomSource,
        domain: &[i64],
        origin: Origin,
    ) -> Result<i64, ExecError> {
        let v = rng.draw(domain, origin)?;
        self.observed.push(v);
        if let Some(log) = &mut self.log {
            log.tape.push(TapeEntry {
                origin,
                domain: domain.to_vec(),
                value: v,
            });
        }
        Ok(v)
    }

    fn step_program(
        &mut self,
        proc: ProcessId,
        rng: &mut dyn RandomSource,
    ) -> Result<(), ExecError> {
        let p = proc as usize;
        let prog = Arc::clone(&self.prog);
        let op = &prog.procs[p].ops[self.procs[p].pc as usize];
        let site = op.site;
        match &op.kind {
            OpKind::Write { obj, .. } | OpKind::Read { obj, .. } => {
                let obj = *obj;
                let binding = self.bindings[obj as usize];
                let (method, arg, target) = match &op.kind {
                    OpKind::Write { expr, .. } => {
                        (binding.kind.write_method(), self.eval(p, expr), None)
                    }
                    OpKind::Read { var, .. } => {
                        (binding.kind.read_method(), Value::Bot, Some(*var))
                    }
                    _ => unreachable!(),
                };
                if binding.kind == ObjectKind::Il
                    && method == Method::Write
                    && proc != binding.writer
                {
                    return Err(ExecError::InvalidInvocation(format!(
                        "process {proc} writes single-writer object {}",
                        self.object_name(obj)
                    )));
                }
                let occ = self.procs[p].visits[site as usize];
                self.procs[p].visits[site as usize] += 1;
                let id = InvocationId { proc, site, occ };
                let name = self.object_name(obj).to_string();
                let (n2, a2) = (name.clone(), arg.clone());
                self.emit(proc, Some(id), 0, None, move || StepKind::Call {
                    object: n2,
                    method,
                    arg: a2,
                });
                if binding.kind == ObjectKind::Atomic {
                    let Substrate::Atomic(cell) = &mut self.objs[obj as usize] else {
                        unreachable!()
                    };
                    let (op, ret, seen) = if method == Method::Write {
                        *cell = arg.clone();
                        (AccessOp::Write, Value::Unit, arg)
                    } else {
                        (AccessOp::Read, cell.clone(), cell.clone())
                    };
                    let n3 = name.clone();
                    self.emit(proc, Some(id), sites::atomic::ACCESS, None, move || {
                        StepKind::Access {
                            object: n3.clone(),
                            cell: n3,
                            op,
                            value: seen,
                        }
                    });
                    self.finish_call(proc, id, obj, method, target, ret, sites::atomic::RETURN);
                    return Ok(());
                }
                let mut a = Box::new(Active {
                    id,
                    obj,
                    method,
                    arg,
                    target,
                    k: binding.k,
                    iter: 1,
                    collected: Vec::new(),
                    in_tail: false,
                    phase: Phase::Choose,
                });
                match self.preamble_start(&binding, method) {
                    Some(ph) => a.phase = ph,
                    None => match binding.k {
                        Some(k) => a.collected = vec![Locals::Empty; k as usize],
                        None => {
                            a.in_tail = true;
                            a.phase = self.tail_start(proc, &a, Locals::Empty);
                        }
                    },
                }
                self.procs[p].inv = Some(a);
            }
            OpKind::Random { var, domain } => {
                let v = self.draw(rng, domain, Origin::Program)?;
                let dom = domain.clone();
                self.emit(proc, None, site, None, move || StepKind::Random {
                    domain: dom,
                    result: v,
                    origin: Origin::Program,
                });
                self.procs[p].vars[*var as usize] = Value::Int(v);
                self.advance(p);
            }
            OpKind::Assign { var, expr } => {
                let v = self.eval(p, expr);
                self.procs[p].vars[*var as usize] = v.clone();
                let name = prog.procs[p].vars[*var as usize].clone();
                self.emit(proc, None, site, None, move || {
                    StepKind::Local(LocalOp::Assign {
                        var: name,
                        value: v,
                    })
                });
                self.advance(p);
            }
            OpKind::Branch { cond, else_pc } => {
                let taken = matches!(self.eval(p, cond), Value::Int(i) if i != 0);
                self.emit(proc, None, site, None, move || {
                    StepKind::Local(LocalOp::Branch { taken })
                });
                if taken {
                    self.advance(p);
                } else {
                    self.procs[p].pc = *else_pc;
                    self.skip_jumps(p);
                }
            }
            OpKind::Loop => {
                self.procs[p].status = Some(Terminal::LoopForever);
                self.emit(proc, None, site, None, || StepKind::Local(LocalOp::Loop));
            }
            OpKind::Terminate => {
                self.procs[p].status = Some(Terminal::Terminated);
                self.emit(proc, None, site, None, || {
                    StepKind::Local(LocalOp::Terminate)
                });
            }
            OpKind::Jump(_) => unreachable!("jumps are skipped eagerly"),
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_call(
        &mut self,
        proc: ProcessId,
        id: InvocationId,
        obj: u32,
        method: Method,
        target: Option<u32>,
        ret: Value,
        site: u32,
    ) {
        let p = proc as usize;
        let name = self.object_name(obj).to_string();
        let r2 = ret.clone();
        self.emit(proc, Some(id), site, None, move || StepKind::Return {
            object: name,
            method,
            value: r2,
        });
        if let Some(t) = target {
            self.procs[p].vars[t as usize] = ret.clone();
        }
        self.returns.insert(id, ret);
        self.procs[p].inv = None;
        self.advance(p);
    }

    fn preamble_start(&self, b: &Binding, method: Method) -> Option<Phase> {
        match (b.kind, method) {
            (ObjectKind::Abd, _) => Some(Phase::AbdStart),
            (ObjectKind::Va, _) => Some(Phase::VaCollect {
                next: 0,
                best: None,
            }),
            (ObjectKind::Il, Method::Read) => Some(Phase::IlRead {
                next: 0,
                best: None,
            }),
            (ObjectKind::Snapshot, Method::Scan) => Some(Phase::Scan(ScanState::new(self.n))),
            (ObjectKind::Snapshot, Method::Update) if b.extended_update => {
                Some(Phase::Scan(ScanState::new(self.n)))
            }
            _ => None,
        }
    }

    fn tail_start(&mut self, proc: ProcessId, a: &Active, locals: Locals) -> Phase {
        let kind = self.bindings[a.obj as usize].kind;
        match (kind, a.method, locals) {
            (ObjectKind::Abd, Method::Read, Locals::Pair { value, ts }) => Phase::AbdUpdStart {
                ret: value.clone(),
                v: value,
                ts,
            },
            (ObjectKind::Abd, Method::Write, Locals::Pair { ts, .. }) => Phase::AbdUpdStart {
                v: a.arg.clone(),
                ts: Timestamp::new(ts.t + 1, proc),
                ret: Value::Unit,
            },
            (ObjectKind::Va, Method::Read, Locals::Pair { value, .. }) => Phase::Ret(value),
            (ObjectKind::Va, Method::Write, Locals::Pair { ts, .. }) => Phase::VaWrite {
                v: a.arg.clone(),
                ts: Timestamp::new(ts.t + 1, proc),
            },
            (ObjectKind::Il, Method::Read, Locals::Seq { value, seq }) => Phase::IlReport {
                next: 0,
                v: value,
                seq,
            },
            (ObjectKind::Il, Method::Write, Locals::Empty) => {
                let Substrate::Il { seq, .. } = &mut self.objs[a.obj as usize] else {
                    unreachable!()
                };
                *seq += 1;
                Phase::IlWrite {
                    next: 0,
                    v: a.arg.clone(),
                    seq: *seq,
                }
            }
            (ObjectKind::Snapshot, Method::Scan, Locals::View { view }) => {
                Phase::Ret(Value::Vector(view))
            }
            (ObjectKind::Snapshot, Method::Update, Locals::View { view }) => {
                Phase::SnapWrite { view }
            }
            (ObjectKind::Snapshot, Method::Update, Locals::Empty) => {
                Phase::Scan(ScanState::new(self.n))
            }
            (kind, method, locals) => {
                unreachable!("no tail for {kind} {method} with {locals:?}")
            }
        }
    }

    fn after_preamble(&mut self, proc: ProcessId, a: &mut Active, locals: Locals) {
        match a.k {
            Some(k) => {
                a.collected.push(locals);
                if (a.collected.len() as u32) < k {
                    a.iter += 1;
                    let b = self.bindings[a.obj as usize];
                    a.phase = self
                        .preamble_start(&b, a.method)
                        .expect("nonempty preamble");
                } else {
                    a.phase = Phase::Choose;
                }
            }
            None => {
                a.in_tail = true;
                a.phase = self.tail_start(proc, a, locals);
            }
        }
    }

    fn step_invocation(
        &mut self,
        proc: ProcessId,
        rng: &mut dyn RandomSource,
    ) -> Result<(), ExecError> {
        let p = proc as usize;
        let mut a = self.procs[p].inv.take().expect("active invocation");
        let kind = self.bindings[a.obj as usize].kind;
        let obj = a.obj as usize;
        let iter = a.iter_tag();
        let id = a.id;
        let n = self.n;
        let oname = self.object_name(a.obj).to_string();
        let phase = std::mem::replace(&mut a.phase, Phase::Choose);
        match phase {
            Phase::AbdStart | Phase::AbdUpdStart { .. } => {
                let Substrate::Abd { sn, .. } = &mut self.objs[obj] else {
                    unreachable!()
                };
                sn[p] += 1;
                let sn = sn[p];
                let cause = Cause {
                    inv: id,
                    seq: self.seq,
                };
                let (payload, site) = match &phase {
                    Phase::AbdUpdStart { v, ts, .. } => (
                        Payload::Update {
                            value: v.clone(),
                            ts: *ts,
                        },
                        sites::abd::UPDATE_SEND,
                    ),
                    _ => (Payload::Query, sites::abd::QUERY_SEND),
                };
                let ids = self.net.broadcast(proc, n, a.obj, sn, payload, cause);
                for mid in ids {
                    let msg = self.net.get(mid).cloned();
                    self.emit(proc, Some(id), site, iter, move || StepKind::Send {
                        msg: msg.unwrap(),
                    });
                }
                a.phase = match phase {
                    Phase::AbdUpdStart { ret, .. } => Phase::AbdUpd { sn, got: 0, ret },
                    _ => Phase::AbdQuery {
                        sn,
                        got: 0,
                        best: None,
                    },
                };
            }
            Phase::AbdQuery { best, .. } => {
                let (value, ts) = best.expect("quorum reached");
                let locals = Locals::Pair { value, ts };
                self.emit_pre_end(proc, id, sites::abd::QUERY_DONE, iter, &locals);
                self.after_preamble(proc, &mut a, locals);
            }
            Phase::AbdUpd { ret, .. } | Phase::Ret(ret) => {
                let site = kind.return_site();
                self.finish_call(proc, id, a.obj, a.method, a.target, ret, site);
                return Ok(());
            }
            Phase::PreEnd(locals) => {
                let site = match kind {
                    ObjectKind::Va => sites::va::PRE_END,
                    ObjectKind::Il => sites::il::PRE_END,
                    _ => sites::snapshot::PRE_END,
                };
                self.emit_pre_end(proc, id, site, iter, &locals);
                self.after_preamble(proc, &mut a, locals);
            }
            Phase::Choose => {
                let k = a.k.expect("iterated binding");
                let domain: Vec<i64> = (1..=k as i64).collect();
                let j = self.draw(rng, &domain, Origin::Object)?;
                let site = match kind {
                    ObjectKind::Il => sites::il::CHOOSE,
                    _ => sites::abd::CHOOSE,
                };
                self.emit(proc, Some(id), site, None, move || StepKind::Random {
                    domain,
                    result: j,
                    origin: Origin::Object,
                });
                let locals = a.collected[(j - 1) as usize].clone();
                a.in_tail = true;
                a.phase = self.tail_start(proc, &a, locals);
            }
            Phase::VaCollect { next, best } => {
                let Substrate::Va(cells) = &self.objs[obj] else {
                    unreachable!()
                };
                let (v, ts) = cells[next as usize].clone();
                let cell = format!("Val[{next}]");
                let seen = v.clone();
                self.emit(proc, Some(id), sites::va::COLLECT, iter, move || {
                    StepKind::Access {
                        object: oname,
                        cell,
                        op: AccessOp::Read,
                        value: seen,
                    }
                });
                let best = match best {
                    Some(b) if b.1 >= ts => {
                        debug_assert!(b.1 != ts || b.0 == v);
                        b
                    }
                    _ => (v, ts),
                };
                a.phase = if next + 1 == n as u32 {
                    Phase::PreEnd(Locals::Pair {
                        value: best.0,
                        ts: best.1,
                    })
                } else {
                    Phase::VaCollect {
                        next: next + 1,
                        best: Some(best),
                    }
                };
            }
            Phase::VaWrite { v, ts } => {
                let Substrate::Va(cells) = &mut self.objs[obj] else {
                    unreachable!()
                };
                cells[p] = (v.clone(), ts);
                let cell = format!("Val[{p}]");
                self.emit(proc, Some(id), sites::va::WRITE, iter, move || {
                    StepKind::Access {
                        object: oname,
                        cell,
                        op: AccessOp::Write,
                        value: v,
                    }
                });
                a.phase = Phase::Ret(Value::Unit);
            }
            Phase::IlRead { next, best } => {
                let Substrate::Il { val, report, .. } = &self.objs[obj] else {
                    unreachable!()
                };
                let (cell, (v, s), site) = if next == 0 {
                    (format!("Val[{p}]"), val[p].clone(), sites::il::READ_VAL)
                } else {
                    let j = next as usize - 1;
                    (
                        format!("Report[{j}][{p}]"),
                        report[j][p].clone(),
                        sites::il::READ_REPORT,
                    )
                };
                let seen = v.clone();
                self.emit(proc, Some(id), site, iter, move || StepKind::Access {
                    object: oname,
                    cell,
                    op: AccessOp::Read,
                    value: seen,
                });
                let best = match best {
                    Some(b) if b.1 >= s => b,
                    _ => (v, s),
                };
                a.phase = if next as usize == n {
                    Phase::PreEnd(Locals::Seq {
                        value: best.0,
                        seq: best.1,
                    })
                } else {
                    Phase::IlRead {
                        next: next + 1,
                        best: Some(best),
                    }
                };
            }
            phase @ (Phase::IlWrite { .. } | Phase::IlReport { .. }) => {
                let is_report = matches!(phase, Phase::IlReport { .. });
                let (Phase::IlWrite { next, v, seq } | Phase::IlReport { next, v, seq }) = phase
                else {
                    unreachable!()
                };
                let Substrate::Il { val, report, .. } = &mut self.objs[obj] else {
                    unreachable!()
                };
                let j = next as usize;
                let (cell, site) = if is_report {
                    report[p][j] = (v.clone(), seq);
                    (format!("Report[{p}][{j}]"), sites::il::WRITE_REPORT)
                } else {
                    val[j] = (v.clone(), seq);
                    (format!("Val[{j}]"), sites::il::WRITE_VAL)
                };
                let seen = v.clone();
                self.emit(proc, Some(id), site, iter, move || StepKind::Access {
                    object: oname,
                    cell,
                    op: AccessOp::Write,
                    value: seen,
                });
                a.phase = if j + 1 < n {
                    if is_report {
                        Phase::IlReport {
                            next: next + 1,
                            v,
                            seq,
                        }
                    } else {
                        Phase::IlWrite {
                            next: next + 1,
                            v,
                            seq,
                        }
                    }
                } else if is_report {
                    Phase::Ret(v)
                } else {
                    Phase::Ret(Value::Unit)
                };
            }
            Phase::Scan(mut st) => {
                let Substrate::Snapshot(cells) = &self.objs[obj] else {
                    unreachable!()
                };
                let j = st.next as usize;
                let c = cells[j].clone();
                let cell = format!("M[{j}]");
                let seen = c.value.clone();
                self.emit(proc, Some(id), sites::snapshot::COLLECT, iter, move || {
                    StepKind::Access {
                        object: oname,
                        cell,
                        op: AccessOp::Read,
                        value: seen,
                    }
                });
                st.cur.push(c);
                st.next += 1;
                a.phase = if st.next as usize == n {
                    match scan_decide(&mut st) {
                        Some(view) if a.in_tail => Phase::SnapWrite { view },
                        Some(view) => Phase::PreEnd(Locals::View { view }),
                        None => {
                            st.prev = Some(st.cur.iter().map(|c| c.seq).collect());
                            st.cur.clear();
                            st.next = 0;
                            Phase::Scan(st)
                        }
                    }
                } else {
                    Phase::Scan(st)
                };
            }
            Phase::SnapWrite { view } => {
                let Substrate::Snapshot(cells) = &mut self.objs[obj] else {
                    unreachable!()
                };
                let seq = cells[p].seq + 1;
                cells[p] = SnapCell {
                    value: a.arg.clone(),
                    seq,
                    view,
                };
                let cell = format!("M[{p}]");
                let seen = a.arg.clone();
                self.emit(proc, Some(id), sites::snapshot::WRITE, iter, move || {
                    StepKind::Access {
                        object: oname,
                        cell,
                        op: AccessOp::Write,
                        value: seen,
                    }
                });
                a.phase = Phase::Ret(Value::Unit);
            }
        }
        self.procs[p].inv = Some(a);
        Ok(())
    }

    fn emit_pre_end(
        &mut self,
        proc: ProcessId,
        id: InvocationId,
        site: u32,
        iter: Option<u32>,
        locals: &Locals,
    ) {
        let l = locals.clone();
        self.emit(proc, Some(id), site, iter, move || {
            StepKind::Local(LocalOp::PreambleEnd { locals: l })
        });
    }

    fn deliver(&mut self, proc: ProcessId, m: Message) {
        let p = proc as usize;
        let obj = m.object as usize;
        let q = self.quorum;
        match &m.payload {
            Payload::Query | Payload::Update { .. } => {
                let Substrate::Abd { servers, .. } = &mut self.objs[obj] else {
                    unreachable!()
                };
                let (effect, reply, site) = match &m.payload {
                    Payload::Query => {
                        let (v, ts) = servers[p].clone();
                        (
                            Effect::Replied,
                            Payload::Reply { value: v, ts },
                            sites::abd::QUERY_HANDLER,
                        )
                    }
                    Payload::Update { value, ts } => {
                        let effect = if servers[p].1 < *ts {
                            servers[p] = (value.clone(), *ts);
                            Effect::Adopted
                        } else {
                            Effect::Kept
                        };
                        (effect, Payload::Ack, sites::abd::UPDATE_HANDLER)
                    }
                    _ => unreachable!(),
                };
                let sent = self
                    .net
                    .send(proc, m.sender, m.object, m.sn, reply, m.cause)
                    .clone();
                self.emit(proc, None, site, None, move || StepKind::Deliver {
                    msg: m,
                    effect,
                });
                self.emit(proc, None, site, None, move || StepKind::Send { msg: sent });
            }
            Payload::Reply { value, ts } => {
                let mut effect = Effect::Stale;
                let mut tag = (None, None);
                if let Some(a) = self.procs[p].inv.as_deref_mut() {
                    if a.obj == m.object {
                        if let Phase::AbdQuery { sn, got, best } = &mut a.phase {
                            if *sn == m.sn && *got < q {
                                *got += 1;
                                match best {
                                    Some(b) if b.1 >= *ts => {
                                        debug_assert!(b.1 != *ts || b.0 == *value);
                                    }
                                    _ => *best = Some((value.clone(), *ts)),
                                }
                                effect = Effect::Counted;
                                tag = (Some(a.id), a.iter_tag());
                            }
                        }
                    }
                }
                self.emit(proc, tag.0, sites::abd::REPLY_RECV, tag.1, move || {
                    StepKind::Deliver { msg: m, effect }
                });
            }
            Payload::Ack => {
                let mut effect = Effect::Stale;
                let mut inv = None;
                if let Some(a) = self.procs[p].inv.as_deref_mut() {
                    if a.obj == m.object {
                        if let Phase::AbdUpd { sn, got, .. } = &mut a.phase {
                            if *sn == m.sn && *got < q {
                                *got += 1;
                                effect = Effect::Counted;
                                inv = Some(a.id);
                            }
                        }
                    }
                }
                self.emit(proc, inv, sites::abd::ACK_RECV, None, move || {
                    StepKind::Deliver { msg: m, effect }
                });
            }
        }
    }

    /// Removes in-flight messages whose delivery can no longer change
    /// anything. Irrelevance is permanent: phases only close and server
    /// timestamps only grow. Meant for search, where such deliveries are
    /// never chosen; the removed messages stop being legal directives.
    pub fn discard_dead_messages(&mut self) {
        let mut net = std::mem::take(&mut self.net);
        net.retain(|m| self.is_relevant(m));
        self.net = net;
    }

    /// True when delivering `m` can still change anything.
    pub fn is_relevant(&self, m: &Message) -> bool {
        let q = self.quorum;
        let phase_open = |p: ProcessId, want_query: bool| -> bool {
            match self.procs[p as usize].inv.as_deref() {
                Some(a) if a.obj == m.object => match (&a.phase, want_query) {
                    (Phase::AbdQuery { sn, got, .. }, true) => *sn == m.sn && *got < q,
                    (Phase::AbdUpd { sn, got, .. }, false) => *sn == m.sn && *got < q,
                    _ => false,
                },
                _ => false,
            }
        };
        match &m.payload {
            Payload::Query => phase_open(m.sender, true),
            Payload::Reply { .. } => phase_open(m.dest, true),
            Payload::Ack => phase_open(m.dest, false),
            Payload::Update { ts, .. } => {
                phase_open(m.sender, false) || self.server_ts(m.object, m.dest) < *ts
            }
        }
    }

    fn server_ts(&self, obj: u32, p: ProcessId) -> Timestamp {
        match &self.objs[obj as usize] {
            Substrate::Abd { servers, .. } => servers[p as usize].1,
            _ => Timestamp::ZERO,
        }
    }

    /// Canonical 128-bit digest of everything that can influence the rest
    /// of the execution: control and local state, substrates, returned
    /// values and relevant in-flight messages. Message ids, sequence numbers
    /// and already-dead messages are left out.
    pub fn digest(&self) -> u128 {
        let mut out = Vec::with_capacity(512);
        for st in &self.procs {
            out.extend_from_slice(&st.pc.to_le_bytes());
            out.push(match st.status {
                None => 0,
                Some(Terminal::Terminated) => 1,
                Some(Terminal::LoopForever) => 2,
                Some(Terminal::Blocked) => 3,
            });
            for v in &st.vars {
                v.encode(&mut out);
            }
            match &st.inv {
                None => out.push(0),
                Some(a) => {
                    out.push(1);
                    encode_active(a, &mut out);
                }
            }
        }
        for s in &self.objs {
            encode_substrate(s, &mut out);
        }
        self.returns.encode(&mut out);
        let mut scratch = Vec::with_capacity(64);
        let mut msgs: Vec<u128> = Vec::with_capacity(self.net.in_flight().len());
        for m in self.net.in_flight() {
            if self.is_relevant(m) {
                scratch.clear();
                self.encode_message(m, &mut scratch);
                msgs.push(xxhash_rust::xxh3::xxh3_128(&scratch));
            }
        }
        msgs.sort_unstable();
        for m in msgs {
            out.extend_from_slice(&m.to_le_bytes());
        }
        xxhash_rust::xxh3::xxh3_128(&out)
    }

    fn encode_message(&self, m: &Message, out: &mut Vec<u8>) {
        out.push(m.tag() as u8);
        out.extend_from_slice(&m.object.to_le_bytes());
        out.extend_from_slice(&m.dest.to_le_bytes());
        match &m.payload {
            Payload::Query => out.extend_from_slice(&m.sender.to_le_bytes()),
            Payload::Reply { value, ts } => {
                value.encode(out);
                out.extend_from_slice(&ts.t.to_le_bytes());
                out.extend_from_slice(&ts.pid.to_le_bytes());
            }
            Payload::Update { value, ts } => {
                value.encode(out);
                out.extend_from_slice(&ts.t.to_le_bytes());
                out.extend_from_slice(&ts.pid.to_le_bytes());
                let q = self.quorum;
                let ack_matters = matches!(
                    self.procs[m.sender as usize].inv.as_deref(),
                    Some(a) if a.obj == m.object
                        && matches!(a.phase, Phase::AbdUpd { sn, got, .. } if sn == m.sn && got < q)
                );
                if ack_matters {
                    out.push(1);
                    out.extend_from_slice(&m.sender.to_le_bytes());
                } else {
                    out.push(0);
                }
            }
            Payload::Ack => {}
        }
    }

    /// Deliveries of relevant messages plus steps of processes that are
    /// about to access a base object.
    pub fn relevant_moves(&self) -> Vec<Directive> {
        let mut out: Vec<Directive> = (0..self.n as ProcessId)
            .filter(|p| self.next_action(*p) == NextAction::Access)
            .map(|proc| Directive::Step { proc })
            .collect();
        out.extend(
            self.net
                .in_flight()
                .iter()
                .filter(|m| self.is_relevant(m))
                .map(|m| Directive::Deliver {
                    proc: m.dest,
                    msg: m.id,
                }),
        );
        out
    }
}

impl World {
    /// Like [`World::relevant_moves`], but a quorum of replies or acks is
    /// delivered as one batch. Receipts that do not complete a quorum only
    /// change the receiving client's private counters, so they can always
    /// be postponed until the receipt that does; acks carry no content, so
    /// any quorum of them is as good as any other.
    pub fn batched_moves(&self) -> Vec<Vec<Directive>> {
        let q = self.quorum as usize;
        let mut out: Vec<Vec<Directive>> = (0..self.n as ProcessId)
            .filter(|p| self.next_action(*p) == NextAction::Access)
            .map(|proc| vec![Directive::Step { proc }])
            .collect();
        let relevant: Vec<&Message> = self
            .net
            .in_flight()
            .iter()
            .filter(|m| self.is_relevant(m))
            .collect();
        for m in &relevant {
            if matches!(m.payload, Payload::Query | Payload::Update { .. }) {
                out.push(vec![Directive::Deliver {
                    proc: m.dest,
                    msg: m.id,
                }]);
            }
        }
        for p in 0..self.n as ProcessId {
            let Some(a) = self.procs[p as usize].inv.as_deref() else {
                continue;
            };
            let (tag, got) = match a.phase {
                Phase::AbdQuery { got, .. } => (Tag::Reply, got as usize),
                Phase::AbdUpd { got, .. } => (Tag::Ack, got as usize),
                _ => continue,
            };
            let need = q.saturating_sub(got);
            let mine: Vec<Directive> = relevant
                .iter()
                .filter(|m| m.dest == p && m.tag() == tag)
                .map(|m| Directive::Deliver { proc: p, msg: m.id })
                .collect();
            if need == 0 || mine.len() < need {
                continue;
            }
            if tag == Tag::Ack {
                out.push(mine[..need].to_vec());
            } else {
                subsets(&mine, need, &mut Vec::new(), 0, &mut out);
            }
        }
        out
    }
}

fn subsets(
    items: &[Directive],
    size: usize,
    cur: &mut Vec<Directive>,
    from: usize,
    out: &mut Vec<Vec<Directive>>,
) {
    if cur.len() == size {
        out.push(cur.clone());
        return;
    }
    for i in from..items.len() {
        cur.push(items[i]);
        subsets(items, size, cur, i + 1, out);
        cur.pop();
    }
}

fn scan_decide(st: &mut ScanState) -> Option<Vec<Value>> {
    let prev = st.prev.as_ref()?;
    let changed: Vec<usize> = (0..prev.len())
        .filter(|j| prev[*j] != st.cur[*j].seq)
        .collect();
    if changed.is_empty() {
        return Some(st.cur.iter().map(|c| c.value.clone()).collect());
    }
    for j in changed {
        if st.moved[j] {
            return Some(st.cur[j].view.clone());
        }
        st.moved[j] = true;
    }
    None
}

fn encode_opt_pair(best: &Option<(Value, Timestamp)>, out: &mut Vec<u8>) {
    match best {
        None => out.push(0),
        Some((v, ts)) => {
            out.push(1);
            v.encode(out);
            out.extend_from_slice(&ts.t.to_le_bytes());
            out.extend_from_slice(&ts.pid.to_le_bytes());
        }
    }
}

fn encode_active(a: &Active, out: &mut Vec<u8>) {
    out.extend_from_slice(&a.obj.to_le_bytes());
    out.push(a.method as u8);
    a.arg.encode(out);
    out.extend_from_slice(&a.iter.to_le_bytes());
    out.push(a.in_tail as u8);
    out.extend_from_slice(&(a.collected.len() as u32).to_le_bytes());
    for l in &a.collected {
        l.encode(out);
    }
    let u32b = |x: u32, out: &mut Vec<u8>| out.extend_from_slice(&x.to_le_bytes());
    match &a.phase {
        Phase::AbdStart => out.push(0),
        Phase::AbdQuery { got, best, .. } => {
            out.push(1);
            out.push(*got);
            encode_opt_pair(best, out);
        }
        Phase::AbdUpdStart { v, ts, ret } => {
            out.push(2);
            v.encode(out);
            out.extend_from_slice(&ts.t.to_le_bytes());
            out.extend_from_slice(&ts.pid.to_le_bytes());
            ret.encode(out);
        }
        Phase::AbdUpd { got, ret, .. } => {
            out.push(3);
            out.push(*got);
            ret.encode(out);
        }
        Phase::VaCollect { next, best } => {
            out.push(4);
            u32b(*next, out);
            encode_opt_pair(best, out);
        }
        Phase::VaWrite { v, ts } => {
            out.push(5);
            v.encode(out);
            out.extend_from_slice(&ts.t.to_le_bytes());
            out.extend_from_slice(&ts.pid.to_le_bytes());
        }
        Phase::IlRead { next, best } => {
            out.push(6);
            u32b(*next, out);
            if let Some((v, s)) = best {
                v.encode(out);
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        Phase::IlWrite { next, v, seq } | Phase::IlReport { next, v, seq } => {
            out.push(if matches!(a.phase, Phase::IlWrite { .. }) {
                7
            } else {
                8
            });
            u32b(*next, out);
            v.encode(out);
            out.extend_from_slice(&seq.to_le_bytes());
        }
        Phase::Scan(st) => {
            out.push(9);
            u32b(st.next, out);
            for c in &st.cur {
                encode_cell(c, out);
            }
            if let Some(prev) = &st.prev {
                for s in prev {
                    out.extend_from_slice(&s.to_le_bytes());
                }
            }
            for m in &st.moved {
                out.push(*m as u8);
            }
        }
        Phase::SnapWrite { view } => {
            out.push(10);
            Value::Vector(view.clone()).encode(out);
        }
        Phase::PreEnd(l) => {
            out.push(11);
            l.encode(out);
        }
        Phase::Choose => out.push(12),
        Phase::Ret(v) => {
            out.push(13);
            v.encode(out);
        }
    }
}

fn encode_cell(c: &SnapCell, out: &mut Vec<u8>) {
    c.value.encode(out);
    out.extend_from_slice(&c.seq.to_le_bytes());
    Value::Vector(c.view.clone()).encode(out);
}

fn encode_substrate(s: &Substrate, out: &mut Vec<u8>) {
    let pair = |v: &Value, ts: &Timestamp, out: &mut Vec<u8>| {
        v.encode(out);
        out.extend_from_slice(&ts.t.to_le_bytes());
        out.extend_from_slice(&ts.pid.to_le_bytes());
    };
    match s {
        Substrate::Atomic(v) => {
            out.push(0);
            v.encode(out);
        }
        Substrate::Abd { servers, .. } => {
            out.push(1);
            for (v, ts) in servers {
                pair(v, ts, out);
            }
        }
        Substrate::Va(cells) => {
            out.push(2);
            for (v, ts) in cells {
                pair(v, ts, out);
            }
        }
        Substrate::Il { val, report, seq } => {
            out.push(3);
            out.extend_from_slice(&seq.to_le_bytes());
            for (v, s) in val.iter().chain(report.iter().flatten()) {
                v.encode(out);
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        Substrate::Snapshot(cells) => {
            out.push(4);
            for c in cells {
                encode_cell(c, out);
            }
        }
    }
}

/// Runs `program` under `policy` until every process is done, no directive
/// is possible, or `budget` directives have been applied.
pub fn run(
    program: &Program,
    bindings: &[Binding],
    policy: &mut dyn AdversaryPolicy,
    tape: crate::exec::RandomTape,
    budget: u64,
) -> Result<Execution, ExecError> {
    let mut world = World::new(program, bindings)?.with_log();
    let mut rng = TapeReader::new(tape);
    let mut applied = 0u64;
    while !world.all_done() {
        if world.legal().is_empty() {
            break;
        }
        if applied == budget {
            return Err(ExecError::BudgetExceeded(budget));
        }
        let d = policy
            .decide(&world)
            .map_err(|e| ExecError::Policy(e.to_string()))?;
        world.apply(d, &mut rng)?;
        applied += 1;
    }
    Ok(world.into_execution())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{outcome_of, project_history, Action, RandomTape};
    use crate::objects::ObjectKind;
    use crate::progdsl::{weakener, workload};

    fn step(w: &mut World, p: ProcessId) {
        w.apply(
            Directive::Step { proc: p },
            &mut TapeReader::new(RandomTape::Fixed(vec![])),
        )
        .unwrap();
    }

    fn deliver_first(w: &mut World, dest: ProcessId, tag: Tag) {
        let m = w
            .net()
            .in_flight()
            .iter()
            .find(|m| m.dest == dest && m.tag() == tag)
            .unwrap()
            .id;
        w.apply(
            Directive::Deliver { proc: dest, msg: m },
            &mut TapeReader::new(RandomTape::Fixed(vec![])),
        )
        .unwrap();
    }

    #[test]
    fn sites_follow_source_order() {
        let w = World::new(&weakener(), &[Binding::plain(ObjectKind::Atomic); 2]).unwrap();
        let p2 = &w.prog.procs[2];
        let sites: Vec<u32> = p2.ops.iter().map(|o| o.site).collect();
        // reads 0..2, the if at 3 (branch and jump), loop 4, terminate 5, end 6
        assert_eq!(sites, vec![0, 1, 2, 3, 4, 3, 5, 6]);
    }

    #[test]
    fn atomic_write_is_call_access_return() {
        let prog = workload("w", "R", Value::Int(0), &[vec![Some(1)]]);
        let mut w = World::new(&prog, &[Binding::plain(ObjectKind::Atomic)])
            .unwrap()
            .with_log();
        step(&mut w, 0);
        let e = w.into_execution();
        let h = project_history(&e);
        assert_eq!(h.actions.len(), 2);
        assert!(matches!(
            &h.actions[0],
            Action::Call {
                method: Method::Write,
                arg: Value::Int(1),
                ..
            }
        ));
        assert!(matches!(
            &h.actions[1],
            Action::Return {
                value: Value::Unit,
                ..
            }
        ));
    }

    #[test]
    fn abd_read_blocks_until_quorum() {
        let prog = workload("r", "R", Value::Bot, &[vec![None], vec![], vec![]]);
        let mut w = World::new(&prog, &[Binding::plain(ObjectKind::Abd)]).unwrap();
        step(&mut w, 0); // call
        step(&mut w, 0); // query broadcast
        assert_eq!(w.net().in_flight().len(), 3);
        assert_eq!(w.next_action(0), NextAction::Blocked);
        deliver_first(&mut w, 1, Tag::Query);
        deliver_first(&mut w, 0, Tag::Reply);
        assert_eq!(w.next_action(0), NextAction::Blocked);
        deliver_first(&mut w, 0, Tag::Query);
        deliver_first(&mut w, 0, Tag::Reply);
        assert_eq!(w.next_action(0), NextAction::Local);
        assert!(w
            .apply(
                Directive::Step { proc: 1 },
                &mut TapeReader::new(RandomTape::Fixed(vec![]))
            )
            .is_ok());
    }

    #[test]
    fn blocked_process_is_not_schedulable() {
        let prog = workload("r", "R", Value::Bot, &[vec![None], vec![], vec![]]);
        let mut w = World::new(&prog, &[Binding::plain(ObjectKind::Abd)]).unwrap();
        step(&mut w, 0);
        step(&mut w, 0);
        let err = w
            .apply(
                Directive::Step { proc: 0 },
                &mut TapeReader::new(RandomTape::Fixed(vec![])),
            )
            .unwrap_err();
        assert!(matches!(err, ExecError::PolicyIllegalDirective { .. }));
    }

    #[test]
    fn update_adopts_only_newer_timestamps() {
        let prog = workload("w", "R", Value::Bot, &[vec![Some(1)], vec![], vec![]]);
        let mut w = World::new(&prog, &[Binding::plain(ObjectKind::Abd)]).unwrap();
        step(&mut w, 0);
        step(&mut w, 0);
        for s in [0, 1] {
            deliver_first(&mut w, s, Tag::Query);
            deliver_first(&mut w, 0, Tag::Reply);
        }
        step(&mut w, 0); // query done
        step(&mut w, 0); // update broadcast
        deliver_first(&mut w, 2, Tag::Update);
        assert_eq!(
            w.abd_server(0, 2),
            Some((Value::Int(1), Timestamp::new(1, 0)))
        );
        assert_eq!(w.abd_server(0, 1), Some((Value::Bot, Timestamp::ZERO)));
    }

    #[test]
    fn sequential_atomic_weakener_terminates() {
        struct RoundRobin;
        impl AdversaryPolicy for RoundRobin {
            fn name(&self) -> &str {
                "rr"
            }
            fn decide(&mut self, w: &World) -> Result<Directive, crate::adversary::PolicyError> {
                Ok(w.legal()[0])
            }
        }
        let e = run(
            &weakener(),
            &[Binding::plain(ObjectKind::Atomic); 2],
            &mut RoundRobin,
            RandomTape::Fixed(vec![0]),
            1000,
        )
        .unwrap();
        let o = outcome_of(&e);
        assert_eq!(o.terminal, vec![Terminal::Terminated; 3]);
        let u1 = o.returns.get(&InvocationId {
            proc: 2,
            site: 0,
            occ: 0,
        });
        let u2 = o.returns.get(&InvocationId {
            proc: 2,
            site: 1,
            occ: 0,
        });
        assert_eq!(u1, u2);
        assert_eq!(
            o.returns.get(&InvocationId {
                proc: 2,
                site: 2,
                occ: 0
            }),
            Some(&Value::Int(0))
        );
    }
}
