//! Translation of IML to the applied pi calculus.
//!
//! Bitstring manipulation is hidden inside extracted tupling operations:
//! every let that concatenates becomes an encoder `concN(..)`, every let
//! that slices a single variable becomes a parser `parseN(x)`. Auxiliary
//! conditionals are dropped; those dominating a parser supply its guard.
//! The checks below establish that encoders have disjoint ranges, that each
//! parser inverts a matching encoder and that its guard accepts exactly that
//! encoder's range.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::bits::{BitString, WordParams};
use crate::eval::{eval, Valuation};
use crate::expr::{get_len, Expr};
use crate::iml::{ImlFile, ImlSyntax, Process};
use crate::ops::{self, OpDef, OpSet};
use crate::simplify::simplify;
use crate::solver::{FactSet, Solver};
use crate::syntax::print_expr;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransOptions {
    /// Read machine arithmetic as exact while checking. Machine lengths
    /// never wrap in practice; without this the inverse checks rarely succeed.
    pub assume_no_overflow: bool,
    /// Treat an unproved length-consistency guard as a failure instead of a warning.
    pub strict_len: bool,
    /// Coercions removed before translation.
    pub casts: Vec<String>,
}

impl Default for TransOptions {
    fn default() -> Self {
        TransOptions { assume_no_overflow: true, strict_len: false, casts: alloc::vec![String::from("castToInt")] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransError {
    pub msg: String,
}

impl TransError {
    fn new(msg: impl Into<String>) -> Self {
        TransError { msg: msg.into() }
    }
}

impl fmt::Display for TransError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TransError {}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PiExpr {
    Var(String),
    Op(String, Vec<PiExpr>),
}

impl PiExpr {
    fn from_expr(e: &Expr) -> Option<PiExpr> {
        match e {
            Expr::Var(v) => Some(PiExpr::Var(v.clone())),
            Expr::Op(name, args) => Some(PiExpr::Op(name.clone(), args.iter().map(PiExpr::from_expr).collect::<Option<_>>()?)),
            _ => None,
        }
    }

    fn to_expr(&self) -> Expr {
        match self {
            PiExpr::Var(v) => Expr::var(v),
            PiExpr::Op(name, args) => Expr::op(name, args.iter().map(PiExpr::to_expr).collect()),
        }
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            PiExpr::Var(v) => {
                out.insert(v.clone());
            }
            PiExpr::Op(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    fn collect_ops(&self, out: &mut BTreeMap<String, usize>) {
        if let PiExpr::Op(name, args) = self {
            out.insert(name.clone(), args.len());
            args.iter().for_each(|a| a.collect_ops(out));
        }
    }
}

impl fmt::Display for PiExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PiExpr::Var(v) => f.write_str(v),
            PiExpr::Op(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Name bound by the lets standing for equality tests.
pub const EQ_BINDER: &str = "_";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PiProcess {
    Nil,
    Repl(Box<PiProcess>),
    Par(Box<PiProcess>, Box<PiProcess>),
    /// `new~ x`
    Nonce(String, Box<PiProcess>),
    In(String, Box<PiProcess>),
    Out(String, Box<PiProcess>),
    Event(String, Box<PiProcess>),
    Let(String, PiExpr, Box<PiProcess>, Option<Box<PiProcess>>),
    /// A named top-level definition.
    Def(String),
}

impl PiProcess {
    /// `let _ = eq(a, b) in P`
    pub fn equal(a: &str, b: &str, p: PiProcess) -> PiProcess {
        let test = PiExpr::Op(String::from(ops::EQF), alloc::vec![PiExpr::Var(String::from(a)), PiExpr::Var(String::from(b))]);
        PiProcess::Let(String::from(EQ_BINDER), test, Box::new(p), None)
    }

    /// Back to IML, with nonces expanded and equality binders made distinct.
    pub fn to_iml(&self, k0: usize, params: &WordParams, defs: &BTreeMap<String, Arc<Process>>) -> Arc<Process> {
        let mut n = 0;
        self.to_iml_with(k0, params, defs, &mut n)
    }

    fn to_iml_with(&self, k0: usize, params: &WordParams, defs: &BTreeMap<String, Arc<Process>>, n: &mut usize) -> Arc<Process> {
        let mut go = |p: &PiProcess| p.to_iml_with(k0, params, defs, n);
        match self {
            PiProcess::Nil => Process::nil(),
            PiProcess::Repl(p) => Process::repl(go(p)),
            PiProcess::Par(p, q) => {
                let a = go(p);
                Process::par(a, go(q))
            }
            PiProcess::Nonce(x, p) => Process::fresh_nonce(x, k0, params, go(p)),
            PiProcess::In(x, p) => Arc::new(Process::In(x.clone(), go(p))),
            PiProcess::Out(x, p) => Arc::new(Process::Out(Expr::var(x), go(p))),
            PiProcess::Event(tag, p) => Arc::new(Process::Event(Expr::Const(BitString::from_ascii(tag)), go(p))),
            PiProcess::Let(x, e, p, q) => {
                let then = go(p);
                let other = q.as_ref().map(|q| go(q));
                let name = if x == EQ_BINDER {
                    *n += 1;
                    alloc::format!("_{n}")
                } else {
                    x.clone()
                };
                Arc::new(Process::Let(name, e.to_expr(), then, other))
            }
            PiProcess::Def(name) => defs.get(name).cloned().unwrap_or_else(Process::nil),
        }
    }

    fn walk(&self, f: &mut dyn FnMut(&PiProcess)) {
        f(self);
        match self {
            PiProcess::Nil | PiProcess::Def(_) => {}
            PiProcess::Repl(p) | PiProcess::Nonce(_, p) | PiProcess::In(_, p) | PiProcess::Out(_, p) | PiProcess::Event(_, p) => p.walk(f),
            PiProcess::Par(p, q) => {
                p.walk(f);
                q.walk(f);
            }
            PiProcess::Let(_, _, p, q) => {
                p.walk(f);
                if let Some(q) = q {
                    q.walk(f);
                }
            }
        }
    }

    /// Variables used but not bound.
    pub fn free_vars(&self) -> BTreeSet<String> {
        fn go(p: &PiProcess, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
            let mut use_var = |v: &String, bound: &Vec<String>| {
                if !bound.contains(v) {
                    out.insert(v.clone());
                }
            };
            match p {
                PiProcess::Nil | PiProcess::Def(_) => {}
                PiProcess::Repl(q) => go(q, bound, out),
                PiProcess::Par(a, b) => {
                    go(a, bound, out);
                    go(b, bound, out);
                }
                PiProcess::Nonce(x, q) | PiProcess::In(x, q) => {
                    bound.push(x.clone());
                    go(q, bound, out);
                    bound.pop();
                }
                PiProcess::Out(x, q) => {
                    use_var(x, bound);
                    go(q, bound, out);
                }
                PiProcess::Event(_, q) => go(q, bound, out),
                PiProcess::Let(x, e, q, r) => {
                    let mut vs = BTreeSet::new();
                    e.collect_vars(&mut vs);
                    for v in &vs {
                        use_var(v, bound);
                    }
                    if let Some(r) = r {
                        go(r, bound, out);
                    }
                    bound.push(x.clone());
                    go(q, bound, out);
                    bound.pop();
                }
            }
        }
        let mut out = BTreeSet::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// One prefix per line in display syntax, for reports and tests.
    pub fn render(&self) -> String {
        let mut s = String::new();
        write_pi(&mut s, self, 0, Dialect::Display);
        s
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dialect {
    Display,
    ProVerif,
}

fn write_pi(s: &mut String, p: &PiProcess, indent: usize, d: Dialect) {
    let pad = "  ".repeat(indent);
    let line = |s: &mut String, text: &str| {
        s.push_str(&pad);
        s.push_str(text);
        s.push('\n');
    };
    match p {
        PiProcess::Nil => line(s, "0"),
        PiProcess::Def(name) => line(s, name),
        PiProcess::Repl(q) => match &**q {
            PiProcess::Def(name) => line(s, &alloc::format!("!{name}")),
            _ => {
                line(s, "!");
                write_pi(s, q, indent + 1, d);
            }
        },
        PiProcess::Par(a, b) => {
            line(s, "(");
            write_pi(s, a, indent + 1, d);
            line(s, ") | (");
            write_pi(s, b, indent + 1, d);
            line(s, ")");
        }
        PiProcess::Nonce(x, q) => {
            line(s, &match d {
                Dialect::Display => alloc::format!("new~ {x};"),
                Dialect::ProVerif => alloc::format!("new {x}: bitstring;"),
            });
            write_pi(s, q, indent, d);
        }
        PiProcess::In(x, q) => {
            line(s, &match d {
                Dialect::Display => alloc::format!("in({x});"),
                Dialect::ProVerif => alloc::format!("in(c, {x}: bitstring);"),
            });
            write_pi(s, q, indent, d);
        }
        PiProcess::Out(x, q) => {
            line(s, &match d {
                Dialect::Display => alloc::format!("out({x});"),
                Dialect::ProVerif => alloc::format!("out(c, {x});"),
            });
            write_pi(s, q, indent, d);
        }
        PiProcess::Event(tag, q) => {
            line(s, &alloc::format!("event {tag};"));
            write_pi(s, q, indent, d);
        }
        PiProcess::Let(x, e, q, r) => {
            let head = match (x.as_str(), e) {
                (EQ_BINDER, PiExpr::Op(name, args)) if name == ops::EQF && args.len() == 2 => {
                    alloc::format!("if {} = {} then", args[0], args[1])
                }
                _ => alloc::format!("let {x} = {e} in"),
            };
            line(s, &head);
            match r {
                None => write_pi(s, q, indent, d),
                Some(r) => {
                    write_pi(s, q, indent + 1, d);
                    line(s, "else");
                    write_pi(s, r, indent + 1, d);
                }
            }
        }
    }
}

fn is_bitstring_op(name: &str) -> bool {
    matches!(name, ops::ADD_B | ops::SUB_B | ops::MUL_B | ops::ADD_N | ops::SUB_N) || ops::is_comparison(name) || ops::is_connective(name)
}

fn has_crypto(e: &Expr) -> bool {
    match e {
        Expr::Op(name, _) if !is_bitstring_op(name) => true,
        _ => e.children().into_iter().any(has_crypto),
    }
}

fn has_range(e: &Expr) -> bool {
    matches!(e, Expr::Range(..)) || e.children().into_iter().any(has_range)
}

fn has_concat(e: &Expr) -> bool {
    matches!(e, Expr::Concat(..)) || e.children().into_iter().any(has_concat)
}

/// Variables in order of first occurrence.
fn ordered_vars(e: &Expr) -> Vec<String> {
    fn go(e: &Expr, out: &mut Vec<String>) {
        if let Expr::Var(v) = e {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        for c in e.children() {
            go(c, out);
        }
    }
    let mut out = Vec::new();
    go(e, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IfKind {
    Cryptographic,
    Auxiliary,
}

/// Cryptographic iff an equality whose sides are variables or applications
/// of cryptographic operations.
pub fn classify_if(e: &Expr) -> IfKind {
    let side = |s: &Expr| match s {
        Expr::Var(_) => true,
        Expr::Op(name, _) => !is_bitstring_op(name),
        _ => false,
    };
    match e {
        Expr::Op(name, args) if name == ops::EQ && side(&args[0]) && side(&args[1]) => IfKind::Cryptographic,
        _ => IfKind::Auxiliary,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LetClass {
    Var,
    Encoding,
    Parsing,
    Cryptographic,
}

/// Class of a let body in a normalised process.
pub fn classify_let(e: &Expr) -> Option<LetClass> {
    if let Expr::Var(_) = e {
        return Some(LetClass::Var);
    }
    if has_crypto(e) {
        let pure = |e: &Expr| -> bool {
            fn ok(e: &Expr) -> bool {
                match e {
                    Expr::Var(_) => true,
                    Expr::Op(name, args) => !is_bitstring_op(name) && args.iter().all(ok),
                    _ => false,
                }
            }
            ok(e)
        };
        return pure(e).then_some(LetClass::Cryptographic);
    }
    if has_range(e) {
        return match ordered_vars(e).len() {
            0 => Some(LetClass::Encoding),
            1 if !has_concat(e) => Some(LetClass::Parsing),
            _ => None,
        };
    }
    Some(LetClass::Encoding)
}

/// Replaces every cast application by its argument and counts them.
pub fn strip_casts(p: &Process, casts: &[String], count: &mut usize) -> Arc<Process> {
    fn strip(e: &Expr, casts: &[String], count: &mut usize) -> Expr {
        if let Expr::Op(name, args) = e {
            if args.len() == 1 && casts.contains(name) {
                *count += 1;
                return strip(&args[0], casts, count);
            }
        }
        e.map_children(|c| strip(c, casts, count))
    }
    let go = |q: &Arc<Process>, count: &mut usize| strip_casts(q, casts, count);
    Arc::new(match p {
        Process::Nil | Process::Hole(_) => p.clone(),
        Process::Repl(q) => Process::Repl(go(q, count)),
        Process::Par(a, b) => {
            let a = go(a, count);
            Process::Par(a, go(b, count))
        }
        Process::New(x, l, q) => Process::New(x.clone(), l.clone(), go(q, count)),
        Process::In(x, q) => Process::In(x.clone(), go(q, count)),
        Process::Out(e, q) => Process::Out(strip(e, casts, count), go(q, count)),
        Process::Event(e, q) => Process::Event(strip(e, casts, count), go(q, count)),
        Process::If(e, a, b) => {
            let e = strip(e, casts, count);
            let a = go(a, count);
            Process::If(e, a, b.as_ref().map(|b| go(b, count)))
        }
        Process::Let(x, e, a, b) => {
            let e = strip(e, casts, count);
            let a = go(a, count);
            Process::Let(x.clone(), e, a, b.as_ref().map(|b| go(b, count)))
        }
    })
}

struct Normalizer<'a> {
    syn: &'a ImlSyntax,
    taken: BTreeSet<String>,
    next: usize,
}

fn process_names(p: &Process, out: &mut BTreeSet<String>) {
    p.walk(&mut |q| match q {
        Process::New(x, ..) | Process::In(x, _) | Process::Let(x, ..) => {
            out.insert(x.clone());
        }
        _ => {}
    });
    for e in p.exprs() {
        e.collect_vars(out);
    }
}

impl Normalizer<'_> {
    fn fresh(&mut self) -> String {
        loop {
            self.next += 1;
            let name = alloc::format!("t{}", self.next);
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }

    fn bind_var(&mut self, e: &Expr, lets: &mut Vec<(String, Expr)>) -> Result<Expr, TransError> {
        if let Expr::Var(_) = e {
            return Ok(e.clone());
        }
        let body = self.expr(e, lets)?;
        let t = self.fresh();
        lets.push((t.clone(), body));
        Ok(Expr::var(&t))
    }

    /// Rewrites `e` into one of the let classes, hoisting subterms into `lets`.
    fn expr(&mut self, e: &Expr, lets: &mut Vec<(String, Expr)>) -> Result<Expr, TransError> {
        match e {
            Expr::Var(_) => Ok(e.clone()),
            Expr::Op(name, args) if !is_bitstring_op(name) => {
                let mut out = Vec::new();
                for a in args {
                    out.push(match a {
                        Expr::Var(_) => a.clone(),
                        Expr::Op(n, _) if !is_bitstring_op(n) => self.expr(a, lets)?,
                        _ => self.bind_var(a, lets)?,
                    });
                }
                Ok(Expr::Op(name.clone(), out))
            }
            Expr::Ptr(..) => Err(TransError::new("pointer expression in IML")),
            _ => {
                let e = self.hoist(e, lets, &|x| matches!(x, Expr::Op(n, _) if !is_bitstring_op(n)))?;
                if !has_range(&e) {
                    return Ok(e);
                }
                let e = if let Expr::Concat(..) = e {
                    let mut pieces = Vec::new();
                    for piece in e.concat_pieces() {
                        pieces.push(if has_range(piece) { self.bind_var(piece, lets)? } else { piece.clone() });
                    }
                    Expr::concat_all(pieces)
                } else {
                    self.hoist(&e, lets, &|x| matches!(x, Expr::Concat(..)))?
                };
                match classify_let(&e) {
                    Some(_) => Ok(e),
                    None => Err(TransError::new(alloc::format!(
                        "expression {} is neither encoding, parsing nor cryptographic",
                        print_expr(&e, &self.syn.params)
                    ))),
                }
            }
        }
    }

    /// Replaces maximal subterms matching `pick` by fresh variables.
    fn hoist(&mut self, e: &Expr, lets: &mut Vec<(String, Expr)>, pick: &dyn Fn(&Expr) -> bool) -> Result<Expr, TransError> {
        if pick(e) {
            return self.bind_var(e, lets);
        }
        let mut err = None;
        let out = e.map_children(|c| match self.hoist(c, lets, pick) {
            Ok(x) => x,
            Err(x) => {
                err.get_or_insert(x);
                c.clone()
            }
        });
        match err {
            Some(x) => Err(x),
            None => Ok(out),
        }
    }

    fn wrap(lets: Vec<(String, Expr)>, p: Arc<Process>) -> Arc<Process> {
        lets.into_iter().rev().fold(p, |rest, (x, e)| Arc::new(Process::Let(x, e, rest, None)))
    }

    fn process(&mut self, p: &Process) -> Result<Arc<Process>, TransError> {
        let no_else = |b: &Option<Arc<Process>>| if b.is_some() { Err(TransError::new("else branches are not translated")) } else { Ok(()) };
        Ok(match p {
            Process::Nil => Process::nil(),
            Process::Hole(_) => Arc::new(p.clone()),
            Process::Repl(q) => Process::repl(self.process(q)?),
            Process::Par(a, b) => {
                let a = self.process(a)?;
                Process::par(a, self.process(b)?)
            }
            Process::New(seed, len, q) => match &**q {
                Process::Let(x, Expr::Op(n, args), body, None)
                    if n == ops::NONCE && args.as_slice() == [Expr::var(seed)] && *len == Expr::Const(self.syn.params.bs_usize(self.syn.k0)) =>
                {
                    Process::fresh_nonce(x, self.syn.k0, &self.syn.params, self.process(body)?)
                }
                _ => return Err(TransError::new(alloc::format!("randomness {seed} is not a new~ nonce"))),
            },
            Process::In(x, q) => Arc::new(Process::In(x.clone(), self.process(q)?)),
            Process::Out(e, q) => {
                let mut lets = Vec::new();
                let v = self.bind_var(e, &mut lets)?;
                Self::wrap(lets, Arc::new(Process::Out(v, self.process(q)?)))
            }
            Process::Event(e, q) => Arc::new(Process::Event(e.clone(), self.process(q)?)),
            Process::If(e, q, other) => {
                no_else(other)?;
                match (classify_if(e), e) {
                    (IfKind::Cryptographic, Expr::Op(_, args)) => {
                        let mut lets = Vec::new();
                        let a = self.bind_var(&args[0], &mut lets)?;
                        let b = self.bind_var(&args[1], &mut lets)?;
                        Self::wrap(lets, Arc::new(Process::If(Expr::eq(a, b), self.process(q)?, None)))
                    }
                    _ => Arc::new(Process::If(e.clone(), self.process(q)?, None)),
                }
            }
            Process::Let(x, e, q, other) => {
                no_else(other)?;
                let mut lets = Vec::new();
                let body = self.expr(e, &mut lets)?;
                Self::wrap(lets, Arc::new(Process::Let(x.clone(), body, self.process(q)?, None)))
            }
        })
    }
}

/// Introduces lets so that outputs carry variables, cryptographic
/// conditions compare variables and every let body has a single class.
pub fn normalize(p: &Process, syn: &ImlSyntax) -> Result<Arc<Process>, TransError> {
    let mut taken = BTreeSet::new();
    process_names(p, &mut taken);
    Normalizer { syn, taken, next: 0 }.process(p)
}

/// An extracted encoding operation over parameters `x1 … xn`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub name: String,
    pub params: Vec<String>,
    pub body: Expr,
}

/// An extracted parsing operation over the variable `var`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parser {
    pub name: String,
    pub var: String,
    pub body: Expr,
    /// Auxiliary conditions established before the parser runs, over `var` and other variables.
    pub facts: Vec<Expr>,
    /// Filled in by the checks.
    pub matched: Option<ParserMatch>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParserMatch {
    pub encoder: String,
    /// One-based index of the parameter the parser recovers.
    pub index: usize,
    /// Guard over `var` alone: tag checks and length consistency.
    pub guard: Expr,
    pub len_proved: bool,
}

/// Field layout of an encoder body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Field {
    Param(usize),
    /// Length of the given parameter.
    Len(usize),
    Tag(BitString),
}

/// Checks the shape required for range characterisation: parameters,
/// their lengths and constant tags, with exactly one parameter lacking a
/// length field.
pub fn encoder_fields(enc: &Encoder) -> Result<Vec<Field>, String> {
    let index = |v: &str| enc.params.iter().position(|p| p == v);
    let mut out = Vec::new();
    for piece in enc.body.concat_pieces() {
        out.push(match piece {
            Expr::Var(v) => Field::Param(index(v).ok_or("unknown parameter")?),
            Expr::Len(x) => match &**x {
                Expr::Var(v) => Field::Len(index(v).ok_or("unknown parameter")?),
                _ => return Err(String::from("length of a non-variable")),
            },
            Expr::Const(b) => Field::Tag(b.clone()),
            _ => return Err(alloc::format!("field {} is not a parameter, length or constant", out.len() + 1)),
        });
    }
    let params: Vec<usize> = out.iter().filter_map(|f| if let Field::Param(i) = f { Some(*i) } else { None }).collect();
    let lens: Vec<usize> = out.iter().filter_map(|f| if let Field::Len(i) = f { Some(*i) } else { None }).collect();
    let distinct = |v: &[usize]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
    if !distinct(&params) || !distinct(&lens) {
        return Err(String::from("a parameter or length field repeats"));
    }
    if params.len() != lens.len() + 1 {
        return Err(alloc::format!("{} parameters but {} length fields", params.len(), lens.len()));
    }
    if lens.iter().any(|i| !params.contains(i)) {
        return Err(String::from("length of a missing parameter"));
    }
    Ok(out)
}

/// Tag fields at a fixed offset, as (offset, tag) pairs.
fn fixed_tags(enc: &Encoder, params: &WordParams) -> Vec<(usize, BitString)> {
    let mut out = Vec::new();
    let mut off = Some(0usize);
    for piece in enc.body.concat_pieces() {
        let Some(o) = off else { break };
        match piece {
            Expr::Const(b) => {
                out.push((o, b.clone()));
                off = Some(o + b.len());
            }
            Expr::Len(_) => off = Some(o + params.width()),
            _ => off = None,
        }
    }
    out
}

/// Disjoint encoder ranges: some fixed position holds tags of equal length
/// and pairwise different values in every encoder.
pub fn check_c1(encoders: &[Encoder], params: &WordParams) -> Result<(), String> {
    if encoders.len() < 2 {
        return Ok(());
    }
    let tags: Vec<Vec<(usize, BitString)>> = encoders.iter().map(|e| fixed_tags(e, params)).collect();
    for (o, b) in &tags[0] {
        let at: Vec<Option<&BitString>> = tags.iter().map(|t| t.iter().find(|(o2, b2)| o2 == o && b2.len() == b.len()).map(|x| &x.1)).collect();
        if at.iter().all(Option::is_some) && at.iter().collect::<BTreeSet<_>>().len() == at.len() {
            return Ok(());
        }
    }
    let names: Vec<&str> = encoders.iter().map(|e| e.name.as_str()).collect();
    Err(alloc::format!("no tag position separates {}", names.join(", ")))
}

fn solver<'a>(ops: &'a OpSet, params: WordParams, opts: &TransOptions) -> Solver<'a> {
    Solver::new(ops, params).with_no_overflow(opts.assume_no_overflow)
}

/// `Some(i)` when the parser applied to the encoder body simplifies to parameter `i` (one-based).
pub fn check_c3(enc: &Encoder, parser: &Parser, ops: &OpSet, params: WordParams, opts: &TransOptions) -> Option<usize> {
    let s = solver(ops, params, opts);
    let applied = parser.body.substitute(&parser.var, &enc.body);
    match simplify(&s, &FactSet::new(), &applied) {
        Expr::Var(v) => enc.params.iter().position(|p| *p == v).map(|i| i + 1),
        _ => None,
    }
}

/// Whether `probe` over `var` reads field `i` (zero-based) of the encoder.
fn extracts(probe: &Expr, var: &str, enc: &Encoder, i: usize, s: &Solver<'_>) -> bool {
    let fresh = "x'";
    let mut pieces: Vec<Expr> = enc.body.concat_pieces().into_iter().cloned().collect();
    let len = get_len(&pieces[i], &s.params);
    pieces[i] = Expr::var(fresh);
    let sigma = FactSet::from_facts(alloc::vec![Expr::eq(Expr::len_of(Expr::var(fresh)), len)]);
    simplify(s, &sigma, &probe.substitute(var, &Expr::concat_all(pieces))) == Expr::var(fresh)
}

/// Builds the parser guard from tag and length fields read by subterms of
/// its facts, and checks that the facts imply it.
pub fn check_c2_c4(enc: &Encoder, parser: &Parser, ops: &OpSet, params: WordParams, opts: &TransOptions) -> Result<(Expr, bool), String> {
    let fields = encoder_fields(enc)?;
    let s = solver(ops, params, opts);
    let x = parser.var.as_str();
    let mut probes: Vec<&Expr> = Vec::new();
    for f in &parser.facts {
        for t in f.subterms() {
            if matches!(t, Expr::Range(..)) && t.vars().iter().all(|v| v == x) && !probes.contains(&t) {
                probes.push(t);
            }
        }
    }
    let pieces = enc.body.concat_pieces();
    let mut tag_eqs = Vec::new();
    let mut len_reads = Vec::new();
    let mut fixed = Vec::new();
    for (i, f) in fields.iter().enumerate() {
        if let Field::Param(_) = f {
            continue;
        }
        let probe = probes.iter().find(|p| extracts(p, x, enc, i, &s)).ok_or_else(|| alloc::format!("no condition reads field {} of {}", i + 1, enc.name))?;
        match f {
            Field::Tag(b) => tag_eqs.push(Expr::eq((*probe).clone(), Expr::Const(b.clone()))),
            _ => len_reads.push((*probe).clone()),
        }
        fixed.push(get_len(pieces[i], &params));
    }
    let sum = len_reads.into_iter().chain(fixed).reduce(Expr::add_n).unwrap_or_else(|| Expr::word(0, &params));
    let len_ok = Expr::le(sum, Expr::len_of(Expr::var(x)));
    let sigma = FactSet::from_facts(parser.facts.clone());
    for t in &tag_eqs {
        if !s.entails(&sigma, t).is_proved() {
            return Err(alloc::format!("conditions do not establish {}", print_expr(t, &params)));
        }
    }
    let len_proved = s.entails(&sigma, &len_ok).is_proved();
    if !len_proved && opts.strict_len {
        return Err(alloc::format!("conditions do not establish {}", print_expr(&len_ok, &params)));
    }
    let guard = tag_eqs.into_iter().chain(core::iter::once(len_ok)).reduce(Expr::and).unwrap_or_else(|| Expr::word(1, &params));
    Ok((guard, len_proved))
}

/// The first violation of the key-safe grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyViolation {
    /// Definition the violation occurs in, `None` for the main process.
    pub def: Option<String>,
    /// Prefix number in a depth-first walk of that process, from 1.
    pub step: usize,
    pub at: String,
    pub reason: String,
}

impl fmt::Display for KeyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.def {
            Some(d) => write!(f, "{d}, step {}: `{}`: {}", self.step, self.at, self.reason),
            None => write!(f, "step {}: `{}`: {}", self.step, self.at, self.reason),
        }
    }
}

const KEY_SAFE_OPS: &[&str] = &["pair", "fst", "snd", "isek", "isenc", "ekof", ops::EQF];

struct KeySafety<'a> {
    tupling: &'a BTreeSet<String>,
    step: usize,
    dec_keys: BTreeSet<String>,
    randomness: BTreeSet<String>,
}

type Violation = (usize, String, String);

impl KeySafety<'_> {
    fn expr(&self, e: &PiExpr) -> Result<(), String> {
        match e {
            PiExpr::Var(v) if self.dec_keys.contains(v) => Err(alloc::format!("decryption key {v} used outside decryption")),
            PiExpr::Var(v) if self.randomness.contains(v) => Err(alloc::format!("randomness {v} reused")),
            PiExpr::Var(_) => Ok(()),
            PiExpr::Op(name, args) if name == "D" => match args.as_slice() {
                [PiExpr::Var(k), c] if self.dec_keys.contains(k) => self.expr(c),
                [PiExpr::Var(k), _] => Err(alloc::format!("{k} is not a generated decryption key")),
                _ => Err(String::from("decryption key must be a variable")),
            },
            PiExpr::Op(name, args) if KEY_SAFE_OPS.contains(&name.as_str()) || self.tupling.contains(name) => {
                args.iter().try_for_each(|a| self.expr(a))
            }
            PiExpr::Op(name, _) if matches!(name.as_str(), "ek" | "dk" | "E") => Err(alloc::format!("{name} outside its fresh-randomness idiom")),
            PiExpr::Op(name, _) => Err(alloc::format!("operation {name} is outside the key-safe signature")),
        }
    }

    fn process(&mut self, p: &PiProcess) -> Result<(), Violation> {
        self.step += 1;
        let step = self.step;
        let fail = |at: String, why: String| Err((step, at, why));
        match p {
            PiProcess::Nil | PiProcess::Def(_) => Ok(()),
            PiProcess::Repl(q) => self.process(q),
            PiProcess::Par(a, b) => {
                self.process(a)?;
                self.process(b)
            }
            PiProcess::Nonce(r, q) => {
                // key generation: new~ r; let x = ek(r) in let xd = dk(r) in P
                if let PiProcess::Let(_, PiExpr::Op(ek, a1), rest, None) = &**q {
                    if let PiProcess::Let(xd, PiExpr::Op(dk, a2), body, None) = &**rest {
                        let on_r = |a: &[PiExpr]| a == [PiExpr::Var(r.clone())];
                        if ek == "ek" && dk == "dk" && on_r(a1) && on_r(a2) {
                            self.randomness.insert(r.clone());
                            self.dec_keys.insert(xd.clone());
                            self.step += 2;
                            return self.process(body);
                        }
                    }
                }
                // encryption: new~ r; let x = E(isek(k), m, r) in P [else Q]
                if let PiProcess::Let(_, PiExpr::Op(e, args), then, other) = &**q {
                    if e == "E" {
                        let at = alloc::format!("let {} in", PiExpr::Op(e.clone(), args.clone()));
                        return match args.as_slice() {
                            [PiExpr::Op(isek, k), m, PiExpr::Var(r2)] if isek == "isek" && k.len() == 1 && r2 == r => {
                                self.step += 1;
                                if let Err(why) = self.expr(&k[0]).and_then(|_| self.expr(m)) {
                                    return Err((self.step, at, why));
                                }
                                self.randomness.insert(r.clone());
                                self.process(then)?;
                                match other {
                                    Some(o) => self.process(o),
                                    None => Ok(()),
                                }
                            }
                            _ => Err((step + 1, at, String::from("encryption must be E(isek(key), message, fresh randomness)"))),
                        };
                    }
                }
                self.process(q)
            }
            PiProcess::In(_, q) | PiProcess::Event(_, q) => self.process(q),
            PiProcess::Out(x, q) => {
                if self.dec_keys.contains(x) {
                    return fail(alloc::format!("out({x})"), alloc::format!("decryption key {x} is sent"));
                }
                if self.randomness.contains(x) {
                    return fail(alloc::format!("out({x})"), alloc::format!("randomness {x} is sent"));
                }
                self.process(q)
            }
            PiProcess::Let(x, e, q, r) => {
                if let Err(why) = self.expr(e) {
                    return fail(alloc::format!("let {x} = {e} in"), why);
                }
                self.process(q)?;
                match r {
                    Some(r) => self.process(r),
                    None => Ok(()),
                }
            }
        }
    }
}

/// Checks the process against the key-safe grammar: key pairs and
/// ciphertexts come from fresh randomness used once, decryption uses
/// generated keys only and decryption keys are never output.
pub fn check_key_safe(p: &PiProcess, tupling: &BTreeSet<String>, def: Option<&str>) -> Result<(), KeyViolation> {
    let mut ks = KeySafety { tupling, step: 0, dec_keys: BTreeSet::new(), randomness: BTreeSet::new() };
    ks.process(p).map_err(|(step, at, reason)| KeyViolation { def: def.map(String::from), step, at, reason })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckReport {
    pub c1: Option<String>,
    /// Per parser: the match found, or why none was.
    pub parsers: Vec<(String, Result<ParserMatch, String>)>,
    pub key_safety: Option<KeyViolation>,
    pub warnings: Vec<String>,
    /// Auxiliary conditions removed from the process.
    pub dropped_ifs: Vec<Expr>,
    pub stripped_casts: usize,
}

impl CheckReport {
    /// (C1) to (C4) hold for every encoder and parser.
    pub fn tupling_ok(&self) -> bool {
        self.c1.is_none() && self.parsers.iter().all(|(_, r)| r.is_ok())
    }

    pub fn all_ok(&self) -> bool {
        self.tupling_ok() && self.key_safety.is_none() && self.warnings.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PiModel {
    pub defs: Vec<(String, PiProcess)>,
    pub main: Option<PiProcess>,
    pub encoders: Vec<Encoder>,
    pub parsers: Vec<Parser>,
    /// Constant event names and the IML payloads each stands for.
    pub events: Vec<(String, Vec<Expr>)>,
    pub report: CheckReport,
}

struct Extractor<'a> {
    syn: &'a ImlSyntax,
    next_op: usize,
    encoders: Vec<Encoder>,
    parsers: Vec<Parser>,
    events: Vec<(String, Vec<Expr>)>,
    dropped: Vec<Expr>,
}

impl Extractor<'_> {
    fn event(&mut self, e: &Expr) -> String {
        if let Some((name, _)) = self.events.iter().find(|(_, es)| es.contains(e)) {
            return name.clone();
        }
        let tag = match e {
            Expr::Op(name, args) if args.len() == 1 => Some(name.clone()),
            _ => None,
        };
        if let Some(t) = &tag {
            if let Some((_, es)) = self.events.iter_mut().find(|(n, _)| n == t) {
                es.push(e.clone());
                return t.clone();
            }
        }
        let name = tag.unwrap_or_else(|| alloc::format!("ev{}", self.events.len() + 1));
        self.events.push((name.clone(), alloc::vec![e.clone()]));
        name
    }

    fn encoder(&mut self, e: &Expr) -> PiExpr {
        let vars = ordered_vars(e);
        let params: Vec<String> = (1..=vars.len()).map(|i| alloc::format!("x{i}")).collect();
        let mut body = e.clone();
        // via placeholders, so parameter names cannot capture process variables
        for (i, v) in vars.iter().enumerate() {
            body = body.substitute(v, &Expr::var(&alloc::format!("#{i}")));
        }
        for (i, p) in params.iter().enumerate() {
            body = body.substitute(&alloc::format!("#{i}"), &Expr::var(p));
        }
        let name = match self.encoders.iter().find(|c| c.body == body) {
            Some(c) => c.name.clone(),
            None => {
                self.next_op += 1;
                let name = alloc::format!("conc{}", self.next_op);
                self.encoders.push(Encoder { name: name.clone(), params, body });
                name
            }
        };
        PiExpr::Op(name, vars.into_iter().map(PiExpr::Var).collect())
    }

    fn parser(&mut self, e: &Expr, facts: &[Expr]) -> PiExpr {
        let [v] = ordered_vars(e).try_into().unwrap_or_else(|_| [String::new()]);
        let mut used = BTreeSet::new();
        for f in facts {
            f.collect_vars(&mut used);
        }
        let mut var = String::from("x");
        while used.contains(&var) && var != v {
            var.push('_');
        }
        let body = e.substitute(&v, &Expr::var(&var));
        let facts: Vec<Expr> = facts.iter().map(|f| f.substitute(&v, &Expr::var(&var))).collect();
        let name = match self.parsers.iter().find(|p| p.body == body && p.facts == facts && p.var == var) {
            Some(p) => p.name.clone(),
            None => {
                self.next_op += 1;
                let name = alloc::format!("parse{}", self.next_op);
                self.parsers.push(Parser { name: name.clone(), var, body, facts, matched: None });
                name
            }
        };
        PiExpr::Op(name, alloc::vec![PiExpr::Var(v)])
    }

    fn boxed(&mut self, defs: &[(String, Arc<Process>)], p: &Process, facts: &mut Vec<Expr>) -> Result<Box<PiProcess>, TransError> {
        self.process(p, facts, defs).map(Box::new)
    }

    fn process(&mut self, p: &Process, facts: &mut Vec<Expr>, defs: &[(String, Arc<Process>)]) -> Result<PiProcess, TransError> {
        if let Some((name, _)) = defs.iter().find(|(_, d)| **d == *p) {
            return Ok(PiProcess::Def(name.clone()));
        }
        Ok(match p {
            Process::Nil => PiProcess::Nil,
            Process::Hole(i) => return Err(TransError::new(alloc::format!("hole []{i} in process"))),
            Process::Repl(q) => PiProcess::Repl(self.boxed(defs, q, &mut facts.clone())?),
            Process::Par(a, b) => {
                let a = self.boxed(defs, a, &mut facts.clone())?;
                PiProcess::Par(a, self.boxed(defs, b, &mut facts.clone())?)
            }
            Process::New(_, _, q) => match &**q {
                Process::Let(x, _, body, None) => PiProcess::Nonce(x.clone(), self.boxed(defs, body, facts)?),
                _ => return Err(TransError::new("process is not normalised")),
            },
            Process::In(x, q) => PiProcess::In(x.clone(), self.boxed(defs, q, facts)?),
            Process::Out(Expr::Var(x), q) => PiProcess::Out(x.clone(), self.boxed(defs, q, facts)?),
            Process::Out(..) => return Err(TransError::new("process is not normalised")),
            Process::Event(e, q) => {
                let name = self.event(e);
                PiProcess::Event(name, self.boxed(defs, q, facts)?)
            }
            Process::If(e, q, _) => match (classify_if(e), e) {
                (IfKind::Cryptographic, Expr::Op(_, args)) => match args.as_slice() {
                    [Expr::Var(a), Expr::Var(b)] => PiProcess::equal(a, b, *self.boxed(defs, q, facts)?),
                    _ => return Err(TransError::new("process is not normalised")),
                },
                _ => {
                    self.dropped.push(e.clone());
                    facts.push(e.clone());
                    *self.boxed(defs, q, facts)?
                }
            },
            Process::Let(x, e, q, _) => {
                let body = match classify_let(e) {
                    Some(LetClass::Var) | Some(LetClass::Cryptographic) => PiExpr::from_expr(e).ok_or_else(|| TransError::new("bad let"))?,
                    Some(LetClass::Encoding) => self.encoder(e),
                    Some(LetClass::Parsing) => self.parser(e, facts),
                    None => return Err(TransError::new(alloc::format!("unclassified let {x} = {}", print_expr(e, &self.syn.params)))),
                };
                PiProcess::Let(x.clone(), body, self.boxed(defs, q, facts)?, None)
            }
        })
    }
}

/// Translates every definition and the main process of `file`, then runs the checks.
pub fn translate(file: &ImlFile, ops: &OpSet, syn: &ImlSyntax, opts: &TransOptions) -> Result<PiModel, TransError> {
    let mut stripped = 0;
    let mut ex = Extractor { syn, next_op: 0, encoders: Vec::new(), parsers: Vec::new(), events: Vec::new(), dropped: Vec::new() };
    let mut defs = Vec::new();
    let mut raw: Vec<(String, Arc<Process>)> = Vec::new();
    // definitions appear expanded where they are used; fold them back into references
    let marks = |n: usize| -> Vec<(String, Arc<Process>)> { raw_names(&file.defs[..n]) };
    for (i, (name, p)) in file.defs.iter().enumerate() {
        let folded = fold_defs(p, &raw);
        let n = normalize(&strip_casts(&folded, &opts.casts, &mut stripped), syn)?;
        defs.push((name.clone(), ex.process(&n, &mut Vec::new(), &marks(i))?));
        raw.push((name.clone(), p.clone()));
    }
    let main = match &file.main {
        Some(p) => {
            let folded = fold_defs(p, &raw);
            let n = normalize(&strip_casts(&folded, &opts.casts, &mut stripped), syn)?;
            Some(ex.process(&n, &mut Vec::new(), &marks(raw.len()))?)
        }
        None => None,
    };
    let mut report = CheckReport { stripped_casts: stripped, dropped_ifs: ex.dropped.clone(), ..Default::default() };
    report.c1 = check_c1(&ex.encoders, &syn.params).err();
    let mut parsers = ex.parsers.clone();
    for p in &mut parsers {
        let mut why = Vec::new();
        for c in &ex.encoders {
            let Some(i) = check_c3(c, p, ops, syn.params, opts) else {
                why.push(alloc::format!("{} does not invert {}", p.name, c.name));
                continue;
            };
            match check_c2_c4(c, p, ops, syn.params, opts) {
                Ok((guard, len_proved)) => {
                    if !len_proved {
                        report.warnings.push(alloc::format!("{}: length consistency not proved from its conditions", p.name));
                    }
                    p.matched = Some(ParserMatch { encoder: c.name.clone(), index: i, guard, len_proved });
                    break;
                }
                Err(e) => why.push(alloc::format!("{} against {}: {e}", p.name, c.name)),
            }
        }
        let result = match &p.matched {
            Some(m) => Ok(m.clone()),
            None if why.is_empty() => Err(String::from("no encoder to match")),
            None => Err(why.join("; ")),
        };
        report.parsers.push((p.name.clone(), result));
    }
    let tupling: BTreeSet<String> = ex.encoders.iter().map(|c| c.name.clone()).chain(parsers.iter().map(|p| p.name.clone())).collect();
    let mut violation = None;
    for (name, d) in &defs {
        if let Err(v) = check_key_safe(d, &tupling, Some(name)) {
            violation.get_or_insert(v);
        }
    }
    if let (None, Some(m)) = (&violation, &main) {
        violation = check_key_safe(m, &tupling, None).err();
    }
    report.key_safety = violation;
    Ok(PiModel { defs, main, encoders: ex.encoders, parsers, events: ex.events, report })
}

fn raw_names(defs: &[(String, Arc<Process>)]) -> Vec<(String, Arc<Process>)> {
    defs.iter().enumerate().map(|(i, (n, _))| (n.clone(), Arc::new(Process::Hole(usize::MAX - i)))).collect()
}

/// Replaces subtrees equal to a definition by a marker hole.
fn fold_defs(p: &Arc<Process>, refs: &[(String, Arc<Process>)]) -> Arc<Process> {
    if let Some(i) = refs.iter().position(|(_, d)| d == p) {
        return Arc::new(Process::Hole(usize::MAX - i));
    }
    let go = |q: &Arc<Process>| fold_defs(q, refs);
    Arc::new(match &**p {
        Process::Nil | Process::Hole(_) => return p.clone(),
        Process::Repl(q) => Process::Repl(go(q)),
        Process::Par(a, b) => Process::Par(go(a), go(b)),
        Process::New(x, l, q) => Process::New(x.clone(), l.clone(), go(q)),
        Process::In(x, q) => Process::In(x.clone(), go(q)),
        Process::Out(e, q) => Process::Out(e.clone(), go(q)),
        Process::Event(e, q) => Process::Event(e.clone(), go(q)),
        Process::If(e, a, b) => Process::If(e.clone(), go(a), b.as_ref().map(go)),
        Process::Let(x, e, a, b) => Process::Let(x.clone(), e.clone(), go(a), b.as_ref().map(go)),
    })
}

impl PiModel {
    /// `ops` extended with concrete implementations of the extracted operations.
    pub fn extend_ops(&self, ops: &OpSet) -> OpSet {
        let mut out = ops.clone();
        let base = Arc::new(ops.clone());
        for c in &self.encoders {
            let (body, names, base) = (c.body.clone(), c.params.clone(), base.clone());
            out.insert(OpDef::new(
                &c.name,
                c.params.len(),
                Arc::new(move |args: &[BitString], p: &WordParams| {
                    let mut eta = Valuation::new();
                    for (n, b) in names.iter().zip(args) {
                        eta.set(n, b.clone());
                    }
                    eval(&body, &eta, &base, p)
                }),
            ));
        }
        for q in &self.parsers {
            let (body, var, base) = (q.body.clone(), q.var.clone(), base.clone());
            // an unmatched parser keeps whichever of its conditions it can check alone
            let guard = match &q.matched {
                Some(m) => Some(m.guard.clone()),
                None => q.facts.iter().filter(|f| f.vars().iter().all(|v| *v == q.var)).cloned().reduce(Expr::and),
            };
            out.insert(OpDef::new(
                &q.name,
                1,
                Arc::new(move |args: &[BitString], p: &WordParams| {
                    let eta = Valuation::new().with(&var, args[0].clone());
                    if let Some(g) = &guard {
                        if eval(g, &eta, &base, p)? != p.one() {
                            return None;
                        }
                    }
                    eval(&body, &eta, &base, p)
                }),
            ));
        }
        out
    }

    /// Definitions in IML form, for execution with [`PiModel::extend_ops`].
    pub fn iml_defs(&self, syn: &ImlSyntax) -> BTreeMap<String, Arc<Process>> {
        let mut out = BTreeMap::new();
        for (name, d) in &self.defs {
            let p = d.to_iml(syn.k0, &syn.params, &out);
            out.insert(name.clone(), p);
        }
        out
    }
}

const PRELUDE: &str = "\
free c: channel.

fun ek(bitstring): bitstring.
fun dk(bitstring): bitstring.
fun E(bitstring, bitstring, bitstring): bitstring.
fun pair(bitstring, bitstring): bitstring.
reduc forall t1: bitstring, m: bitstring, t2: bitstring; D(dk(t1), E(ek(t1), m, t2)) = m.
reduc forall t1: bitstring, t2: bitstring, t3: bitstring; isenc(E(ek(t1), t2, t3)) = E(ek(t1), t2, t3).
reduc forall t: bitstring; isek(ek(t)) = ek(t).
reduc forall t1: bitstring, m: bitstring, t2: bitstring; ekof(E(ek(t1), m, t2)) = ek(t1).
reduc forall x: bitstring, y: bitstring; fst(pair(x, y)) = x.
reduc forall x: bitstring, y: bitstring; snd(pair(x, y)) = y.
reduc forall x: bitstring; eq(x, x) = x.
";

const PRELUDE_OPS: &[&str] = &["ek", "dk", "E", "pair", "D", "isenc", "isek", "ekof", "fst", "snd", ops::EQF];

/// Rules for the two-argument public-key operations, emitted when used.
const EXTRA_RULES: &[(&str, &[&str], &str)] = &[
    ("encrypt", &["pk", "encrypt"], "reduc forall t: bitstring, m: bitstring; decrypt(sk(t), encrypt(pk(t), m)) = m."),
    ("decrypt", &["pk", "sk", "encrypt"], "reduc forall t: bitstring, m: bitstring; decrypt(sk(t), encrypt(pk(t), m)) = m."),
];

fn fun_decl(name: &str, arity: usize) -> String {
    let args = alloc::vec!["bitstring"; arity].join(", ");
    alloc::format!("fun {name}({args}): bitstring.\n")
}

/// ProVerif input for the model. The output is a pure function of the model.
pub fn emit_proverif(model: &PiModel) -> String {
    let mut s = String::from(PRELUDE);
    let mut used = BTreeMap::new();
    let procs: Vec<&PiProcess> = model.defs.iter().map(|(_, d)| d).chain(model.main.iter()).collect();
    for p in &procs {
        p.walk(&mut |q| {
            if let PiProcess::Let(_, e, ..) = q {
                e.collect_ops(&mut used);
            }
        });
    }
    let tupling: BTreeSet<&str> = model.encoders.iter().map(|c| c.name.as_str()).chain(model.parsers.iter().map(|p| p.name.as_str())).collect();
    let mut decls = BTreeMap::new();
    let mut rules = BTreeSet::new();
    for (name, arity) in &used {
        if PRELUDE_OPS.contains(&name.as_str()) || tupling.contains(name.as_str()) {
            continue;
        }
        match EXTRA_RULES.iter().find(|(n, ..)| n == name) {
            Some((_, ctors, rule)) => {
                for c in *ctors {
                    decls.insert(String::from(*c), if *c == "encrypt" { 2 } else { 1 });
                }
                rules.insert(*rule);
            }
            None => {
                decls.insert(name.clone(), *arity);
            }
        }
    }
    if !decls.is_empty() || !rules.is_empty() {
        s.push('\n');
    }
    for (name, arity) in &decls {
        s.push_str(&fun_decl(name, *arity));
    }
    for r in &rules {
        s.push_str(r);
        s.push('\n');
    }
    if !model.encoders.is_empty() {
        s.push('\n');
    }
    for c in &model.encoders {
        s.push_str(&fun_decl(&c.name, c.params.len()));
    }
    for p in &model.parsers {
        match &p.matched {
            Some(m) => {
                let Some(c) = model.encoders.iter().find(|c| c.name == m.encoder) else { continue };
                let binders: Vec<String> = c.params.iter().map(|x| alloc::format!("{x}: bitstring")).collect();
                s.push_str(&alloc::format!(
                    "reduc forall {}; {}({}({})) = {}.\n",
                    binders.join(", "),
                    p.name,
                    c.name,
                    c.params.join(", "),
                    c.params[m.index - 1]
                ));
            }
            None => s.push_str(&fun_decl(&p.name, 1)),
        }
    }
    if !model.events.is_empty() {
        s.push('\n');
    }
    for (name, payloads) in &model.events {
        s.push_str(&alloc::format!("event {name}.\n"));
        for e in payloads {
            s.push_str(&alloc::format!("(* {name} stands for {} *)\n", print_expr(e, &WordParams::new(32))));
        }
    }
    let mut free = BTreeSet::new();
    let names: BTreeSet<&str> = model.defs.iter().map(|(n, _)| n.as_str()).collect();
    for p in &procs {
        free.extend(p.free_vars().into_iter().filter(|v| !names.contains(v.as_str())));
    }
    if !free.is_empty() {
        s.push('\n');
    }
    for v in &free {
        s.push_str(&alloc::format!("free {v}: bitstring [private].\n"));
    }
    for (name, d) in &model.defs {
        s.push_str(&alloc::format!("\nlet {name} =\n"));
        write_pi(&mut s, d, 1, Dialect::ProVerif);
        terminate(&mut s);
    }
    s.push_str("\nprocess\n");
    write_pi(&mut s, model.main.as_ref().unwrap_or(&PiProcess::Nil), 1, Dialect::ProVerif);
    s
}

fn terminate(s: &mut String) {
    if s.ends_with('\n') {
        s.pop();
    }
    s.push_str(".\n");
}

#[cfg(test)]
mod tests;
