//! IML processes: syntax tree, text format, the stepper and embedding of
//! subprocesses into holes.
//!
//! ```text
//! file   := (NAME "=" proc)* proc?
//! proc   := prefix ("|" prefix)*
//! prefix := "0" | "!" prefix | "(" proc ")" | "[]" NUM | NAME
//!         | "new" x "[" expr "]" ";" prefix | "new~" x ";" prefix
//!         | "in" "(" x ")" ";" prefix | "out" "(" expr ")" ";" prefix
//!         | "event" "(" expr ")" ";" prefix
//!         | "if" expr "then" prefix ("else" prefix)?
//!         | "let" x "=" expr "in" prefix ("else" prefix)?
//! ```
//!
//! `else` binds to the nearest open conditional. A `NAME` refers to an earlier
//! definition and is expanded in place.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use crate::bits::{BitString, WordParams};
use crate::eval::{eval, Valuation};
use crate::expr::Expr;
use crate::ops::{OpSet, NONCE};
use crate::pts::{branch, random_bits, History, Input, Kind, Label, Obs, Pts, StepError, Transition};
use crate::syntax::{describe, parse_expr_from, print_expr, ParseError, Tok, TokenStream, KEYWORDS};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Process {
    Nil,
    Repl(Arc<Process>),
    Par(Arc<Process>, Arc<Process>),
    /// Fresh random value of the given length in bits.
    New(String, Expr, Arc<Process>),
    In(String, Arc<Process>),
    Out(Expr, Arc<Process>),
    Event(Expr, Arc<Process>),
    If(Expr, Arc<Process>, Option<Arc<Process>>),
    Let(String, Expr, Arc<Process>, Option<Arc<Process>>),
    Hole(usize),
}

impl Process {
    pub fn nil() -> Arc<Process> {
        Arc::new(Process::Nil)
    }

    pub fn repl(p: Arc<Process>) -> Arc<Process> {
        Arc::new(Process::Repl(p))
    }

    pub fn par(p: Arc<Process>, q: Arc<Process>) -> Arc<Process> {
        Arc::new(Process::Par(p, q))
    }

    /// Name of the raw random value behind `new~ x`.
    pub fn nonce_seed(x: &str) -> String {
        alloc::format!("{x}~")
    }

    /// `new~ x; P`, i.e. `new x~[k0]; let x = nonce(x~) in P`.
    pub fn fresh_nonce(x: &str, k0: usize, params: &WordParams, p: Arc<Process>) -> Arc<Process> {
        let seed = Process::nonce_seed(x);
        let bind = Arc::new(Process::Let(String::from(x), Expr::op(NONCE, alloc::vec![Expr::var(&seed)]), p, None));
        Arc::new(Process::New(seed, Expr::Const(params.bs_usize(k0)), bind))
    }

    /// Hole indices in left-to-right order.
    pub fn holes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk(&mut |p| {
            if let Process::Hole(i) = p {
                out.push(*i);
            }
        });
        out
    }

    pub fn walk(&self, f: &mut dyn FnMut(&Process)) {
        f(self);
        match self {
            Process::Nil | Process::Hole(_) => {}
            Process::Repl(p) | Process::New(_, _, p) | Process::In(_, p) | Process::Out(_, p) | Process::Event(_, p) => p.walk(f),
            Process::Par(p, q) => {
                p.walk(f);
                q.walk(f);
            }
            Process::If(_, p, q) | Process::Let(_, _, p, q) => {
                p.walk(f);
                if let Some(q) = q {
                    q.walk(f);
                }
            }
        }
    }

    /// Every expression in the process, in syntax order.
    pub fn exprs(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn go<'a>(p: &'a Process, out: &mut Vec<&'a Expr>) {
            match p {
                Process::Nil | Process::Hole(_) => {}
                Process::Repl(q) | Process::In(_, q) => go(q, out),
                Process::Par(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                Process::New(_, e, q) | Process::Out(e, q) | Process::Event(e, q) => {
                    out.push(e);
                    go(q, out);
                }
                Process::If(e, a, b) | Process::Let(_, e, a, b) => {
                    out.push(e);
                    go(a, out);
                    if let Some(b) = b {
                        go(b, out);
                    }
                }
            }
        }
        go(self, &mut out);
        out
    }

    /// Number of syntax nodes, counting expressions as one.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }
}

/// A parsed `.iml` file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImlFile {
    /// Definitions in source order, already expanded.
    pub defs: Vec<(String, Arc<Process>)>,
    pub main: Option<Arc<Process>>,
}

impl ImlFile {
    pub fn get(&self, name: &str) -> Option<&Arc<Process>> {
        self.defs.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    /// The main process, or the last definition when there is none.
    pub fn entry(&self) -> Option<&Arc<Process>> {
        self.main.as_ref().or_else(|| self.defs.last().map(|(_, p)| p))
    }
}

/// Word size and nonce length shared by the parser and printer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImlSyntax {
    pub params: WordParams,
    pub k0: usize,
}

struct Parser<'a> {
    ts: TokenStream,
    syn: &'a ImlSyntax,
    defs: BTreeMap<String, Arc<Process>>,
}

impl Parser<'_> {
    fn name(&mut self) -> Result<String, ParseError> {
        match self.ts.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.ts.next();
                Ok(s)
            }
            t => self.ts.error(&alloc::format!("expected a variable name, found {}", describe(&t))),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        parse_expr_from(&mut self.ts, &self.syn.params)
    }

    fn paren_expr(&mut self) -> Result<Expr, ParseError> {
        self.ts.expect_sym("(")?;
        let e = self.expr()?;
        self.ts.expect_sym(")")?;
        Ok(e)
    }

    fn proc(&mut self) -> Result<Arc<Process>, ParseError> {
        let mut p = self.prefix()?;
        while self.ts.eat_sym("|") {
            let q = self.prefix()?;
            p = Process::par(p, q);
        }
        Ok(p)
    }

    fn cont(&mut self) -> Result<Arc<Process>, ParseError> {
        self.ts.expect_sym(";")?;
        self.prefix()
    }

    fn else_branch(&mut self) -> Result<Option<Arc<Process>>, ParseError> {
        if self.ts.eat_ident("else") { Ok(Some(self.prefix()?)) } else { Ok(None) }
    }

    fn prefix(&mut self) -> Result<Arc<Process>, ParseError> {
        let t = self.ts.peek().clone();
        match t {
            Tok::Num(n) if n == "0" => {
                self.ts.next();
                Ok(Process::nil())
            }
            Tok::Sym("!") => {
                self.ts.next();
                Ok(Process::repl(self.prefix()?))
            }
            Tok::Sym("(") => {
                self.ts.next();
                let p = self.proc()?;
                self.ts.expect_sym(")")?;
                Ok(p)
            }
            Tok::Sym("[") => {
                self.ts.next();
                self.ts.expect_sym("]")?;
                if *self.ts.peek() == Tok::Num(String::from("0")) {
                    return self.ts.error("hole indices start at 1");
                }
                let i = self.ts.expect_num()?;
                Ok(Arc::new(Process::Hole(i)))
            }
            Tok::Ident(kw) => match kw.as_str() {
                "new" => {
                    self.ts.next();
                    if self.ts.eat_sym("~") {
                        let x = self.name()?;
                        let p = self.cont()?;
                        return Ok(Process::fresh_nonce(&x, self.syn.k0, &self.syn.params, p));
                    }
                    let x = self.name()?;
                    self.ts.expect_sym("[")?;
                    let e = self.expr()?;
                    self.ts.expect_sym("]")?;
                    Ok(Arc::new(Process::New(x, e, self.cont()?)))
                }
                "in" => {
                    self.ts.next();
                    self.ts.expect_sym("(")?;
                    let x = self.name()?;
                    self.ts.expect_sym(")")?;
                    Ok(Arc::new(Process::In(x, self.cont()?)))
                }
                "out" => {
                    self.ts.next();
                    let e = self.paren_expr()?;
                    Ok(Arc::new(Process::Out(e, self.cont()?)))
                }
                "event" => {
                    self.ts.next();
                    let e = self.paren_expr()?;
                    Ok(Arc::new(Process::Event(e, self.cont()?)))
                }
                "if" => {
                    self.ts.next();
                    let e = self.expr()?;
                    self.ts.expect_keyword("then")?;
                    let p = self.prefix()?;
                    Ok(Arc::new(Process::If(e, p, self.else_branch()?)))
                }
                "let" => {
                    self.ts.next();
                    let x = self.name()?;
                    self.ts.expect_sym("=")?;
                    let e = self.expr()?;
                    self.ts.expect_keyword("in")?;
                    let p = self.prefix()?;
                    Ok(Arc::new(Process::Let(x, e, p, self.else_branch()?)))
                }
                _ if KEYWORDS.contains(&kw.as_str()) => self.ts.error(&alloc::format!("unexpected keyword '{kw}'")),
                _ => match self.defs.get(&kw) {
                    Some(p) => {
                        let p = p.clone();
                        self.ts.next();
                        Ok(p)
                    }
                    None => self.ts.error(&alloc::format!("unknown process '{kw}'")),
                },
            },
            t => self.ts.error(&alloc::format!("expected a process, found {}", describe(&t))),
        }
    }
}

/// Parses a file of definitions with an optional main process.
pub fn parse_iml_file(src: &str, syn: &ImlSyntax) -> Result<ImlFile, ParseError> {
    let mut ps = Parser { ts: TokenStream::new(src)?, syn, defs: BTreeMap::new() };
    let mut file = ImlFile { defs: Vec::new(), main: None };
    while !ps.ts.at_eof() {
        let is_def = matches!(ps.ts.peek(), Tok::Ident(n) if !KEYWORDS.contains(&n.as_str())) && *ps.ts.peek_at(1) == Tok::Sym("=");
        if !is_def {
            file.main = Some(ps.proc()?);
            if !ps.ts.at_eof() {
                return ps.ts.error(&alloc::format!("unexpected {} after the main process", describe(ps.ts.peek())));
            }
            break;
        }
        let Tok::Ident(name) = ps.ts.next() else { unreachable!() };
        ps.ts.next();
        if ps.defs.contains_key(&name) {
            return ps.ts.error(&alloc::format!("process '{name}' is defined twice"));
        }
        let p = ps.proc()?;
        ps.defs.insert(name.clone(), p.clone());
        file.defs.push((name, p));
    }
    Ok(file)
}

/// Parses a single process, possibly preceded by definitions; returns the entry process.
pub fn parse_iml(src: &str, syn: &ImlSyntax) -> Result<Arc<Process>, ParseError> {
    let file = parse_iml_file(src, syn)?;
    file.entry().cloned().ok_or(ParseError { line: 1, col: 1, msg: String::from("no process") })
}

struct Printer<'a> {
    syn: &'a ImlSyntax,
    out: String,
}

impl Printer<'_> {
    /// Recognises the expansion of `new~ x; P`.
    fn sugar<'p>(&self, p: &'p Process) -> Option<(&'p str, &'p Arc<Process>)> {
        let Process::New(seed, len, body) = p else { return None };
        let Process::Let(x, Expr::Op(op, args), q, None) = &**body else { return None };
        let k0 = self.syn.params.bs_usize(self.syn.k0);
        let ok = op == NONCE
            && *seed == Process::nonce_seed(x)
            && matches!(args.as_slice(), [Expr::Var(s)] if s == seed)
            && len.as_const() == Some(&k0);
        ok.then_some((x.as_str(), q))
    }

    /// Whether an `else` printed after `p` would attach inside it.
    fn dangling(&self, p: &Process) -> bool {
        if let Some((_, q)) = self.sugar(p) {
            return self.dangling(q);
        }
        match p {
            Process::Repl(q) | Process::New(_, _, q) | Process::In(_, q) | Process::Out(_, q) | Process::Event(_, q) => self.dangling(q),
            Process::If(_, _, None) | Process::Let(_, _, _, None) => true,
            Process::If(_, _, Some(q)) | Process::Let(_, _, _, Some(q)) => self.dangling(q),
            Process::Nil | Process::Par(..) | Process::Hole(_) => false,
        }
    }

    fn expr(&mut self, e: &Expr) {
        self.out.push_str(&print_expr(e, &self.syn.params));
    }

    fn proc(&mut self, p: &Process) {
        match p {
            Process::Par(a, b) => {
                self.proc(a);
                self.out.push_str(" | ");
                self.prefix(b);
            }
            _ => self.prefix(p),
        }
    }

    fn branches(&mut self, then: &Process, els: &Option<Arc<Process>>) {
        match els {
            Some(q) => {
                if self.dangling(then) {
                    self.out.push('(');
                    self.proc(then);
                    self.out.push(')');
                } else {
                    self.prefix(then);
                }
                self.out.push_str(" else ");
                self.prefix(q);
            }
            None => self.prefix(then),
        }
    }

    fn prefix(&mut self, p: &Process) {
        if let Some((x, q)) = self.sugar(p) {
            self.out.push_str("new~ ");
            self.out.push_str(x);
            self.out.push_str("; ");
            return self.prefix(q);
        }
        match p {
            Process::Nil => self.out.push('0'),
            Process::Hole(i) => {
                let _ = fmt::Write::write_fmt(&mut self.out, format_args!("[]{i}"));
            }
            Process::Repl(q) => {
                self.out.push('!');
                self.prefix(q);
            }
            Process::Par(..) => {
                self.out.push('(');
                self.proc(p);
                self.out.push(')');
            }
            Process::New(x, e, q) => {
                self.out.push_str("new ");
                self.out.push_str(x);
                self.out.push('[');
                self.expr(e);
                self.out.push_str("]; ");
                self.prefix(q);
            }
            Process::In(x, q) => {
                self.out.push_str("in(");
                self.out.push_str(x);
                self.out.push_str("); ");
                self.prefix(q);
            }
            Process::Out(e, q) | Process::Event(e, q) => {
                self.out.push_str(if matches!(p, Process::Out(..)) { "out(" } else { "event(" });
                self.expr(e);
                self.out.push_str("); ");
                self.prefix(q);
            }
            Process::If(e, a, b) => {
                self.out.push_str("if ");
                self.expr(e);
                self.out.push_str(" then ");
                self.branches(a, b);
            }
            Process::Let(x, e, a, b) => {
                self.out.push_str("let ");
                self.out.push_str(x);
                self.out.push_str(" = ");
                self.expr(e);
                self.out.push_str(" in ");
                self.branches(a, b);
            }
        }
    }
}

/// Canonical single-line text of `p`.
pub fn print_iml(p: &Process, syn: &ImlSyntax) -> String {
    let mut pr = Printer { syn, out: String::new() };
    pr.proc(p);
    pr.out
}

/// One `NAME = process` line per definition, then the main process.
pub fn print_iml_file(file: &ImlFile, syn: &ImlSyntax) -> String {
    let mut s = String::new();
    for (name, p) in &file.defs {
        s.push_str(name);
        s.push_str(" = ");
        s.push_str(&print_iml(p, syn));
        s.push('\n');
    }
    if let Some(m) = &file.main {
        s.push_str(&print_iml(m, syn));
        s.push('\n');
    }
    s
}

fn need_ctr(rule: &str, input: Option<&Input>, want: &BitString) -> Result<(), StepError> {
    match input {
        Some(Input::Ctr(b)) if b == want => Ok(()),
        Some(Input::Ctr(b)) => Err(StepError::stuck(rule, alloc::format!("no transition with label ctr {b:?}"))),
        _ => Err(StepError::Malformed(String::from("a control process needs a ctr label"))),
    }
}

/// One IML step of `p` in environment `eta`.
pub fn iml_step(
    p: &Arc<Process>,
    eta: &Valuation,
    input: Option<&Input>,
    rng: &mut dyn RngCore,
    ops: &OpSet,
    params: &WordParams,
) -> Result<Transition<Arc<Process>>, StepError> {
    let ev = |e: &Expr| eval(e, eta, ops, params);
    let emitted = |rule: &str| match input {
        None => Ok(()),
        Some(_) => Err(StepError::Malformed(alloc::format!("{rule} takes no attacker payload"))),
    };
    let with = |x: &str, b: BitString| {
        let mut e2 = eta.clone();
        e2.set(x, b);
        e2
    };
    match &**p {
        Process::Nil | Process::Hole(_) => Err(StepError::Finished),
        Process::Repl(q) => {
            need_ctr("I-Repl", input, &BitString::empty())?;
            Ok(Transition { label: Label::Ctr(BitString::empty()), next: alloc::vec![(eta.clone(), q.clone()), (eta.clone(), p.clone())] })
        }
        Process::Par(a, b) => {
            need_ctr("I-Par", input, &BitString::empty())?;
            Ok(Transition { label: Label::Ctr(BitString::empty()), next: alloc::vec![(eta.clone(), a.clone()), (eta.clone(), b.clone())] })
        }
        Process::New(x, e, q) => {
            emitted("I-Nonce")?;
            let len = ev(e).ok_or_else(|| StepError::stuck("I-Nonce", "length is undefined"))?;
            let len = len.val_usize().ok_or_else(|| StepError::stuck("I-Nonce", "length does not fit"))?;
            let b = random_bits(rng, len).ok_or_else(|| StepError::stuck("I-Nonce", "length exceeds the executor limit"))?;
            Ok(Transition::single(Label::Rnd(b.clone()), with(x, b), q.clone()))
        }
        Process::In(x, q) => match input {
            Some(Input::Read(b)) => Ok(Transition::single(Label::Read(b.clone()), with(x, b.clone()), q.clone())),
            _ => Err(StepError::Malformed(String::from("an input process needs a read label"))),
        },
        Process::Out(e, q) => {
            emitted("I-Out")?;
            let b = ev(e).ok_or_else(|| StepError::stuck("I-Out", "output is undefined"))?;
            Ok(Transition::single(Label::Write(b), eta.clone(), q.clone()))
        }
        Process::Event(e, q) => {
            emitted("I-Event")?;
            let b = ev(e).ok_or_else(|| StepError::stuck("I-Event", "event payload is undefined"))?;
            Ok(Transition::single(Label::Event(b), eta.clone(), q.clone()))
        }
        Process::If(e, a, b) => {
            let v = ev(e);
            let taken = if v.as_ref() == Some(&params.one()) {
                true
            } else if v.as_ref() == Some(&params.zero()) {
                false
            } else {
                return Err(StepError::stuck("I-Cond", "condition is neither i1 nor i0"));
            };
            let rule = if taken { "I-Cond-True" } else { "I-Cond-False" };
            need_ctr(rule, input, &branch(taken))?;
            let next = if taken { a } else { b.as_ref().ok_or_else(|| StepError::stuck(rule, "no else branch"))? };
            Ok(Transition::single(Label::Ctr(branch(taken)), eta.clone(), next.clone()))
        }
        Process::Let(x, e, a, b) => match ev(e) {
            Some(v) => {
                need_ctr("I-Let-True", input, &branch(true))?;
                Ok(Transition::single(Label::Ctr(branch(true)), with(x, v), a.clone()))
            }
            None => {
                need_ctr("I-Let-False", input, &branch(false))?;
                let q = b.as_ref().ok_or_else(|| StepError::stuck("I-Let-False", "no else branch"))?;
                Ok(Transition::single(Label::Ctr(branch(false)), eta.clone(), q.clone()))
            }
        },
    }
}

fn iml_kind(p: &Process, eta: &Valuation, ops: &OpSet, params: &WordParams) -> Option<Kind> {
    match p {
        Process::Nil | Process::Hole(_) => None,
        Process::Repl(_) | Process::Par(..) | Process::If(..) | Process::Let(..) => Some(Kind::Control),
        Process::New(_, e, _) => Some(Kind::Randomising(eval(e, eta, ops, params).and_then(|b| b.val_usize()).unwrap_or(0))),
        Process::In(..) => Some(Kind::Reading),
        Process::Out(..) => Some(Kind::Writing),
        Process::Event(..) => Some(Kind::Event),
    }
}

fn iml_suggest(p: &Process, eta: &Valuation, ops: &OpSet, params: &WordParams) -> Option<Input> {
    let ctr = |b: BitString| Some(Input::Ctr(b));
    match p {
        Process::Repl(_) | Process::Par(..) => ctr(BitString::empty()),
        Process::If(e, _, els) => {
            let v = eval(e, eta, ops, params)?;
            if v == params.one() {
                ctr(branch(true))
            } else if v == params.zero() && els.is_some() {
                ctr(branch(false))
            } else {
                None
            }
        }
        Process::Let(_, e, _, els) => match eval(e, eta, ops, params) {
            Some(_) => ctr(branch(true)),
            None if els.is_some() => ctr(branch(false)),
            None => None,
        },
        _ => None,
    }
}

/// The PTS generated by an IML process.
#[derive(Clone)]
pub struct ImlPts {
    pub process: Arc<Process>,
    pub ops: OpSet,
    pub params: WordParams,
}

impl ImlPts {
    pub fn new(process: Arc<Process>, ops: OpSet, params: WordParams) -> Self {
        ImlPts { process, ops, params }
    }
}

impl Pts for ImlPts {
    type State = Arc<Process>;

    fn initial(&self) -> Arc<Process> {
        self.process.clone()
    }

    fn kind(&self, eta: &Valuation, s: &Arc<Process>) -> Option<Kind> {
        iml_kind(s, eta, &self.ops, &self.params)
    }

    fn suggest(&self, eta: &Valuation, s: &Arc<Process>) -> Option<Input> {
        iml_suggest(s, eta, &self.ops, &self.params)
    }

    fn step(&self, eta: &Valuation, s: &Arc<Process>, input: Option<&Input>, rng: &mut dyn RngCore) -> Result<Transition<Arc<Process>>, StepError> {
        iml_step(s, eta, input, rng, &self.ops, &self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmbedError {
    MissingHole(usize),
    DuplicateHole(usize),
    /// A hole index with no corresponding part.
    ExtraHole(usize),
}

impl fmt::Display for EmbedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedError::MissingHole(i) => write!(f, "no hole []{i} for part {i}"),
            EmbedError::DuplicateHole(i) => write!(f, "hole []{i} occurs more than once"),
            EmbedError::ExtraHole(i) => write!(f, "hole []{i} has no part"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EmbedError {}

/// State of an embedded PTS: either the context or one of the parts.
#[derive(Clone, Debug)]
pub enum Mixed<S> {
    Context(Arc<Process>),
    /// Zero-based part index and the part's state.
    Part(usize, S),
}

/// An IML context whose holes `[]1..[]n` run the given parts.
pub struct Embedding<T: Pts> {
    pub context: ImlPts,
    pub parts: Vec<T>,
}

/// Checks that the holes of `context` are exactly `1..=parts` with no repetition.
pub fn check_holes(context: &Process, parts: usize) -> Result<(), EmbedError> {
    let mut seen = BTreeSet::new();
    for i in context.holes() {
        if !seen.insert(i) {
            return Err(EmbedError::DuplicateHole(i));
        }
        if i > parts {
            return Err(EmbedError::ExtraHole(i));
        }
    }
    match (1..=parts).find(|i| !seen.contains(i)) {
        Some(i) => Err(EmbedError::MissingHole(i)),
        None => Ok(()),
    }
}

impl<T: Pts> Embedding<T> {
    pub fn new(context: ImlPts, parts: Vec<T>) -> Result<Self, EmbedError> {
        check_holes(&context.process, parts.len())?;
        Ok(Embedding { context, parts })
    }

    fn enter(&self, p: Arc<Process>) -> Mixed<T::State> {
        match *p {
            Process::Hole(i) => Mixed::Part(i - 1, self.parts[i - 1].initial()),
            _ => Mixed::Context(p),
        }
    }
}

impl<T: Pts> Pts for Embedding<T> {
    type State = Mixed<T::State>;

    fn initial(&self) -> Self::State {
        self.enter(self.context.process.clone())
    }

    fn kind(&self, eta: &Valuation, s: &Self::State) -> Option<Kind> {
        match s {
            Mixed::Context(p) => self.context.kind(eta, p),
            Mixed::Part(i, s) => self.parts[*i].kind(eta, s),
        }
    }

    fn suggest(&self, eta: &Valuation, s: &Self::State) -> Option<Input> {
        match s {
            Mixed::Context(p) => self.context.suggest(eta, p),
            Mixed::Part(i, s) => self.parts[*i].suggest(eta, s),
        }
    }

    fn step(&self, eta: &Valuation, s: &Self::State, input: Option<&Input>, rng: &mut dyn RngCore) -> Result<Transition<Self::State>, StepError> {
        match s {
            Mixed::Context(p) => {
                let t = self.context.step(eta, p, input, rng)?;
                Ok(Transition { label: t.label, next: t.next.into_iter().map(|(e, p)| (e, self.enter(p))).collect() })
            }
            Mixed::Part(i, s) => {
                let t = self.parts[*i].step(eta, s, input, rng)?;
                Ok(Transition { label: t.label, next: t.next.into_iter().map(|(e, s)| (e, Mixed::Part(*i, s))).collect() })
            }
        }
    }
}

/// Whether following `h` from `p` ends exactly at a hole. Linear in `|p| + |h|`.
pub fn is_hole_history(p: &Process, h: &History) -> bool {
    let mut p = p;
    let mut obs = h.0.iter();
    let eps = BitString::empty();
    loop {
        let Some(first) = obs.next() else {
            return matches!(p, Process::Hole(_));
        };
        // Observation preceding the index, when the step's label is one.
        let (label, index) = match first {
            Obs::Label(l) => match obs.next() {
                Some(Obs::Index(i)) => (Some(l), *i),
                _ => return false,
            },
            Obs::Index(i) => (None, *i),
        };
        let is_ctr = |want: &BitString| matches!(label, Some(Label::Ctr(b)) if b == want);
        p = match p {
            Process::Nil | Process::Hole(_) => return false,
            Process::Repl(q) if is_ctr(&eps) => match index {
                1 => q,
                2 => p,
                _ => return false,
            },
            Process::Par(a, b) if is_ctr(&eps) => match index {
                1 => a,
                2 => b,
                _ => return false,
            },
            Process::New(_, _, q) | Process::Event(_, q) if label.is_none() && index == 1 => q,
            Process::In(_, q) if matches!(label, Some(Label::Read(_))) && index == 1 => q,
            Process::Out(_, q) if matches!(label, Some(Label::Write(_))) && index == 1 => q,
            Process::If(_, a, b) | Process::Let(_, _, a, b) if index == 1 => {
                if is_ctr(&branch(true)) {
                    a
                } else if is_ctr(&branch(false)) {
                    match b {
                        Some(b) => b,
                        None => return false,
                    }
                } else {
                    return false;
                }
            }
            _ => return false,
        };
    }
}
