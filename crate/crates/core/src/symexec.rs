//! Symbolic execution of CVM programs and extraction of the IML model.
//!
//! Memory holds symbolic expressions per base. Every load and store must be
//! proved in bounds by the solver under the facts collected so far; the first
//! obligation it cannot prove aborts extraction. Labels produced along the
//! single execution path become the prefixes of the extracted process.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::bits::WordParams;
use crate::cvm::{CvmProgram, Dest, Instr, Source, DUMMY};
use crate::expr::{apply_sym, get_len, Expr, PtrBase};
use crate::iml::Process;
use crate::ops::{self, OpSet};
use crate::simplify::simplify;
use crate::solver::{FactSet, Solver};
use crate::syntax::print_expr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExtractOptions {
    /// Emit no conditional for tests that only compare lengths and integers.
    /// The condition still enters the path condition.
    pub drop_arith_guards: bool,
    /// Passed to the solver, see [`Solver::assume_no_overflow`].
    pub assume_no_overflow: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SymLabel {
    In(String),
    New(String, Expr),
    Out(Expr),
    Event(Expr),
    If(Expr),
}

impl SymLabel {
    pub fn render(&self, params: &WordParams) -> String {
        match self {
            SymLabel::In(v) => alloc::format!("in({v})"),
            SymLabel::New(v, l) => alloc::format!("new {v}[{}]", print_expr(l, params)),
            SymLabel::Out(e) => alloc::format!("out({})", print_expr(e, params)),
            SymLabel::Event(e) => alloc::format!("event({})", print_expr(e, params)),
            SymLabel::If(e) => alloc::format!("if {} then", print_expr(e, params)),
        }
    }
}

/// `λ1 … λn 0`
pub fn labels_to_process(labels: &[SymLabel]) -> Arc<Process> {
    labels.iter().rev().fold(Process::nil(), |rest, l| {
        Arc::new(match l {
            SymLabel::In(v) => Process::In(v.clone(), rest),
            SymLabel::New(v, e) => Process::New(v.clone(), e.clone(), rest),
            SymLabel::Out(e) => Process::Out(e.clone(), rest),
            SymLabel::Event(e) => Process::Event(e.clone(), rest),
            SymLabel::If(e) => Process::If(e.clone(), rest, None),
        })
    })
}

/// A running symbolic configuration. `alloc` and `mem` have the same domain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymMemory {
    pub sigma: FactSet,
    pub alloc: BTreeMap<PtrBase, Expr>,
    pub mem: BTreeMap<PtrBase, Expr>,
    /// Top of stack last.
    pub stack: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymError {
    /// Instruction index in the expanded program.
    pub index: usize,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for SymError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed at instruction {}: {}", self.rule, self.index, self.detail)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SymError {}

/// What one instruction did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub index: usize,
    /// New contents of every base that was created or written.
    pub memory: Vec<(PtrBase, Expr)>,
    pub facts: Vec<Expr>,
    pub label: Option<SymLabel>,
}

/// Steps a program symbolically; `step` returns `None` once every
/// instruction has run.
pub struct SymExec<'a> {
    program: &'a CvmProgram,
    solver: Solver<'a>,
    options: ExtractOptions,
    state: SymMemory,
    pc: usize,
    taken: BTreeSet<String>,
}

impl<'a> SymExec<'a> {
    /// Runs the initial step: every memory variable gets an `N`-bit stack cell holding `ε`.
    pub fn new(program: &'a CvmProgram, ops: &'a OpSet, params: WordParams, options: ExtractOptions) -> Self {
        let solver = Solver::new(ops, params).with_no_overflow(options.assume_no_overflow);
        let mut state = SymMemory::default();
        for v in program.memory_vars() {
            state.alloc.insert(PtrBase::Stack(v.clone()), Expr::word(params.width as u64, &params));
            state.mem.insert(PtrBase::Stack(v), Expr::empty());
        }
        let taken = program.instrs.iter().filter_map(|i| if let Instr::Env(v) = i { Some(v.clone()) } else { None }).collect();
        SymExec { program, solver, options, state, pc: 0, taken }
    }

    pub fn state(&self) -> &SymMemory {
        &self.state
    }

    pub fn into_state(self) -> SymMemory {
        self.state
    }

    fn params(&self) -> &WordParams {
        &self.solver.params
    }

    fn fresh(&mut self, v: &str) -> String {
        let mut name = String::from(v);
        let mut n = 1;
        while self.taken.contains(&name) {
            name = alloc::format!("{v}_{n}");
            n += 1;
        }
        self.taken.insert(name.clone());
        name
    }

    pub fn step(&mut self) -> Result<Option<StepRecord>, SymError> {
        let Some(instr) = self.program.instrs.get(self.pc) else { return Ok(None) };
        let index = self.pc;
        let fail = |rule: &'static str, detail: String| SymError { index, rule, detail };
        let mut rec = StepRecord { index, memory: Vec::new(), facts: Vec::new(), label: None };
        let params = *self.params();
        let zero = Expr::word(0, &params);
        macro_rules! pop {
            ($rule:expr) => {
                self.state.stack.pop().ok_or_else(|| fail($rule, String::from("stack underflow")))?
            };
        }
        let ptr_free = |rule: &'static str, e: Expr, what: &str| {
            if e.ptr_free() {
                Ok(e)
            } else {
                Err(fail(rule, alloc::format!("{what} {} contains a pointer", print_expr(&e, &params))))
            }
        };
        match instr {
            Instr::Const(b) => self.state.stack.push(Expr::Const(b.clone())),
            Instr::Ref(v) => self.state.stack.push(Expr::ptr(PtrBase::Stack(v.clone()), zero)),
            Instr::Malloc => {
                let len = ptr_free("S-Malloc", pop!("S-Malloc"), "size")?;
                let i = (1..).find(|i| !self.state.mem.contains_key(&PtrBase::Heap(*i))).unwrap_or(1);
                let base = PtrBase::Heap(i);
                self.state.alloc.insert(base.clone(), len);
                self.state.mem.insert(base.clone(), Expr::empty());
                rec.memory.push((base.clone(), Expr::empty()));
                self.state.stack.push(Expr::ptr(base, zero));
            }
            Instr::Load => {
                let len = ptr_free("S-Load", pop!("S-Load"), "length")?;
                let Expr::Ptr(base, off) = pop!("S-Load") else {
                    return Err(fail("S-Load", String::from("address is not a pointer")));
                };
                let content = self.state.mem.get(&base).ok_or_else(|| fail("S-Load", alloc::format!("{base} is not allocated")))?;
                let ob = Expr::le(Expr::add_n((*off).clone(), len.clone()), get_len(content, &params));
                self.prove("S-Load", index, &ob)?;
                let e = simplify(&self.solver, &self.state.sigma, &Expr::range(content.clone(), *off, len));
                self.state.stack.push(e);
            }
            Instr::In(v, src) => {
                let len = ptr_free("S-In", pop!("S-In"), "length")?;
                let name = self.fresh(v);
                let fact = Expr::eq(Expr::len_of(Expr::var(&name)), len.clone());
                self.state.sigma.add(fact.clone());
                rec.facts.push(fact);
                rec.label = Some(match src {
                    Source::Read => SymLabel::In(name.clone()),
                    Source::Rnd => SymLabel::New(name.clone(), len),
                });
                self.state.stack.push(Expr::var(&name));
            }
            Instr::Env(v) => {
                let e = Expr::var(v);
                self.state.stack.push(e.clone());
                self.state.stack.push(Expr::len_of(e));
            }
            Instr::Apply(op) => {
                let arity = self.solver.ops.get(op).map(|d| d.arity).ok_or_else(|| fail("S-Apply", alloc::format!("unknown operation {op}")))?;
                if self.state.stack.len() < arity {
                    return Err(fail("S-Apply", String::from("stack underflow")));
                }
                let args: Vec<Expr> = (0..arity).map(|_| self.state.stack.pop().unwrap_or_else(Expr::empty)).collect();
                let e = apply_sym(op, args, self.solver.ops).ok_or_else(|| fail("S-Apply", alloc::format!("{op} is undefined on these pointer arguments")))?;
                let len = get_len(&e, &params);
                self.state.stack.push(e);
                self.state.stack.push(len);
            }
            Instr::Out(dest) => {
                let e = ptr_free("S-Out", pop!("S-Out"), "output")?;
                rec.label = Some(match dest {
                    Dest::Write => SymLabel::Out(e),
                    Dest::Event => SymLabel::Event(e),
                });
            }
            Instr::Test => {
                let e = ptr_free("S-Test", pop!("S-Test"), "condition")?;
                let cond = self.compare_rewrite(&e);
                for f in [&e, &cond] {
                    if !self.state.sigma.facts().contains(f) {
                        self.state.sigma.add(f.clone());
                        rec.facts.push(f.clone());
                    }
                }
                if !(self.options.drop_arith_guards && is_arith_guard(&cond)) {
                    rec.label = Some(SymLabel::If(cond));
                }
            }
            Instr::Store => {
                let Expr::Ptr(base, off) = pop!("S-Store") else {
                    return Err(fail("S-Store", String::from("address is not a pointer")));
                };
                let e = pop!("S-Store");
                let held = self.state.mem.get(&base).ok_or_else(|| fail("S-Store", alloc::format!("{base} is not allocated")))?.clone();
                let size = self.state.alloc[&base].clone();
                let held_len = get_len(&held, &params);
                let end = Expr::add_n((*off).clone(), get_len(&e, &params));
                let head = Expr::range(held.clone(), zero.clone(), (*off).clone());
                let inside = Expr::lt(end.clone(), held_len.clone());
                let updated = if self.solver.entails(&self.state.sigma, &inside).is_proved() {
                    let tail = Expr::range(held, end.clone(), Expr::sub_n(held_len, end));
                    Expr::concat(Expr::concat(head, e), tail)
                } else {
                    let append = [Expr::ge(end.clone(), held_len.clone()), Expr::le((*off).clone(), held_len), Expr::le(end, size)];
                    if !self.solver.entails_all(&self.state.sigma, &append).is_proved() {
                        let shown: Vec<String> = append.iter().map(|f| print_expr(f, &params)).collect();
                        return Err(fail("S-Store", alloc::format!("cannot prove {} or {}", print_expr(&inside, &params), shown.join(" and "))));
                    }
                    Expr::concat(head, e)
                };
                let updated = simplify(&self.solver, &self.state.sigma, &updated);
                self.state.mem.insert(base.clone(), updated.clone());
                rec.memory.push((base, updated));
            }
        }
        self.pc += 1;
        Ok(Some(rec))
    }

    fn prove(&self, rule: &'static str, index: usize, phi: &Expr) -> Result<(), SymError> {
        if self.solver.entails(&self.state.sigma, phi).is_proved() {
            Ok(())
        } else {
            Err(SymError { index, rule, detail: alloc::format!("cannot prove {}", print_expr(phi, self.params())) })
        }
    }

    /// `c(a, b) = i0` with `c` a comparison function becomes `a = b`.
    fn compare_rewrite(&self, e: &Expr) -> Expr {
        if let Expr::Op(name, args) = e {
            if name == ops::EQ {
                let zero = Expr::word(0, self.params());
                for (x, y) in [(&args[0], &args[1]), (&args[1], &args[0])] {
                    if let Expr::Op(c, ab) = y {
                        if *x == zero && ab.len() == 2 && self.solver.ops.get(c).is_some_and(|d| d.compare) {
                            return Expr::eq(ab[0].clone(), ab[1].clone());
                        }
                    }
                }
            }
        }
        e.clone()
    }
}

/// Built only from arithmetic, comparisons and connectives over variables,
/// constants and lengths.
pub fn is_arith_guard(e: &Expr) -> bool {
    match e {
        Expr::Const(_) | Expr::Var(_) => true,
        Expr::Len(x) => matches!(**x, Expr::Var(_)),
        Expr::Op(name, args) => {
            let arith = matches!(name.as_str(), ops::ADD_B | ops::SUB_B | ops::MUL_B | ops::ADD_N | ops::SUB_N);
            (arith || ops::is_comparison(name) || ops::is_connective(name)) && args.iter().all(is_arith_guard)
        }
        _ => false,
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub process: Arc<Process>,
    pub labels: Vec<SymLabel>,
    pub steps: Vec<StepRecord>,
    pub last: SymMemory,
}

pub fn extract_model(program: &CvmProgram, ops: &OpSet, params: WordParams, options: ExtractOptions) -> Result<Model, SymError> {
    let mut ex = SymExec::new(program, ops, params, options);
    let mut steps = Vec::new();
    while let Some(rec) = ex.step()? {
        steps.push(rec);
    }
    let labels: Vec<SymLabel> = steps.iter().filter_map(|r| r.label.clone()).collect();
    Ok(Model { process: labels_to_process(&labels), labels, steps, last: ex.into_state() })
}

/// Steps grouped by source line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub instrs: Range<usize>,
    /// Final contents of each base touched in the row, the scratch cell excluded.
    pub memory: Vec<(PtrBase, Expr)>,
    pub facts: Vec<Expr>,
    pub labels: Vec<SymLabel>,
}

/// A row starts at every statement preceded by a comment, or at every
/// statement when the source has no comments.
pub fn trace_rows(program: &CvmProgram, steps: &[StepRecord]) -> Vec<TraceRow> {
    let starts_row = |stmt: usize| if program.commented.is_empty() { true } else { stmt == 0 || program.commented.contains(&stmt) };
    let dummy = PtrBase::Stack(String::from(DUMMY));
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut prev_stmt = None;
    for rec in steps {
        let stmt = program.origin.get(rec.index).copied().unwrap_or(rec.index);
        if rows.is_empty() || (prev_stmt != Some(stmt) && starts_row(stmt)) {
            rows.push(TraceRow { instrs: rec.index..rec.index, memory: Vec::new(), facts: Vec::new(), labels: Vec::new() });
        }
        prev_stmt = Some(stmt);
        let Some(row) = rows.last_mut() else { continue };
        row.instrs.end = rec.index + 1;
        for (b, e) in &rec.memory {
            if *b == dummy {
                continue;
            }
            match row.memory.iter_mut().find(|(x, _)| x == b) {
                Some(slot) => slot.1 = e.clone(),
                None => row.memory.push((b.clone(), e.clone())),
            }
        }
        // a test that becomes an `if` is shown in the IML column only
        if !matches!(rec.label, Some(SymLabel::If(_))) {
            row.facts.extend(rec.facts.iter().cloned());
        }
        row.labels.extend(rec.label.iter().cloned());
    }
    rows
}

/// Tab-separated table: row, instruction range, memory, facts, emitted IML.
pub fn render_trace(rows: &[TraceRow], params: &WordParams) -> String {
    let mut s = String::from("row\tinstrs\tmemory\tfacts\timl\n");
    for (i, r) in rows.iter().enumerate() {
        let mem: Vec<String> = r.memory.iter().map(|(b, e)| alloc::format!("{b} => {}", print_expr(e, params))).collect();
        let facts: Vec<String> = r.facts.iter().map(|f| print_expr(f, params)).collect();
        let labels: Vec<String> = r.labels.iter().map(|l| l.render(params)).collect();
        s.push_str(&alloc::format!(
            "{}\t{}-{}\t{}\t{}\t{}\n",
            i + 1,
            r.instrs.start,
            r.instrs.end.saturating_sub(1),
            mem.join("; "),
            facts.join("; "),
            labels.join("; ")
        ));
    }
    s
}
