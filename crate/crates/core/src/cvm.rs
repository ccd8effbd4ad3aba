//! CVM programs: parsing, printing and the concrete machine.
//!
//! A CVM program is a straight-line list of stack instructions. The concrete
//! machine keeps a set of allocated bit addresses, a partial bit memory and a
//! stack of bitstrings; every step is a PTS transition whose label is either
//! chosen by the attacker (control and read labels) or emitted by the machine.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand_core::RngCore;

use crate::bits::{format_literal, parse_literal, BitString, WordParams};
use crate::eval::Valuation;
use crate::ops::OpSet;
use crate::pts::{branch, random_bits, Input, Kind, Label, Pts, StepError, Transition};
use crate::syntax::ParseError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Read,
    Rnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    Write,
    Event,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    Const(BitString),
    Ref(String),
    Malloc,
    Load,
    In(String, Source),
    Env(String),
    Apply(String),
    Out(Dest),
    Test,
    Store,
}

/// Variable written by `Clear`.
pub const DUMMY: &str = "dummy";

impl Instr {
    pub fn render(&self, params: &WordParams) -> String {
        match self {
            Instr::Const(b) => alloc::format!("Const {}", format_literal(b, params)),
            Instr::Ref(v) => alloc::format!("Ref {v}"),
            Instr::Malloc => String::from("Malloc"),
            Instr::Load => String::from("Load"),
            Instr::In(v, Source::Read) => alloc::format!("In {v} read"),
            Instr::In(v, Source::Rnd) => alloc::format!("In {v} rnd"),
            Instr::Env(v) => alloc::format!("Env {v}"),
            Instr::Apply(op) => alloc::format!("Apply {op}"),
            Instr::Out(Dest::Write) => String::from("Out write"),
            Instr::Out(Dest::Event) => String::from("Out event"),
            Instr::Test => String::from("Test"),
            Instr::Store => String::from("Store"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CvmProgram {
    pub instrs: Vec<Instr>,
    /// For each instruction, the index of the source statement it came from.
    pub origin: Vec<usize>,
    /// Number of `;`-terminated statements in the source, before macro expansion.
    pub statements: usize,
    /// Statements directly preceded by a `//` comment.
    pub commented: BTreeSet<usize>,
}

impl CvmProgram {
    pub fn new(instrs: Vec<Instr>) -> Self {
        let origin = (0..instrs.len()).collect();
        let statements = instrs.len();
        CvmProgram { instrs, origin, statements, commented: BTreeSet::new() }
    }

    /// Variables named by `Ref`, `In` and `Env`.
    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for i in &self.instrs {
            if let Instr::Ref(v) | Instr::In(v, _) | Instr::Env(v) = i {
                out.insert(v.clone());
            }
        }
        out
    }

    /// Variables with a memory cell: those named by `Ref`.
    pub fn memory_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for i in &self.instrs {
            if let Instr::Ref(v) = i {
                out.insert(v.clone());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }
}

/// One instruction per line, without macros.
pub fn print_cvm(p: &CvmProgram, params: &WordParams) -> String {
    let mut s = String::new();
    for i in &p.instrs {
        s.push_str(&i.render(params));
        s.push_str(";\n");
    }
    s
}

struct Statement<'a> {
    text: &'a str,
    line: usize,
    col: usize,
    after_comment: bool,
}

/// Splits on `;` outside string literals and drops `//` comments.
fn statements(src: &str) -> Result<Vec<Statement<'_>>, ParseError> {
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut start: Option<(usize, usize, usize)> = None;
    let mut in_str = false;
    let mut escaped = false;
    let mut comment = false;
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if in_str {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_str = false;
            }
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            comment |= start.is_none();
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        } else if c == b'"' {
            in_str = true;
        } else if c == b';' {
            match start.take() {
                Some((s, l, c0)) => {
                    out.push(Statement { text: src[s..i].trim_end(), line: l, col: c0, after_comment: comment });
                    comment = false;
                }
                None => return Err(ParseError { line, col, msg: String::from("empty statement") }),
            }
        }
        if start.is_none() && !c.is_ascii_whitespace() && c != b';' {
            start = Some((i, line, col));
        }
        if c == b'\n' {
            line += 1;
            col = 1;
        } else if c & 0xC0 != 0x80 {
            col += 1;
        }
        i += 1;
    }
    if let Some((_, l, c0)) = start {
        return Err(ParseError { line: l, col: c0, msg: String::from("statement not terminated by `;`") });
    }
    Ok(out)
}

fn is_var_name(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses CVM assembly. Besides the ten instructions, the macros
/// `Clear` (`Ref dummy; Store`), `Env' v`, `Apply' op` (each followed by
/// `Clear`), `Varsize` (`Const iN`) and `Event` (`Out event`) are expanded.
/// Operation names may carry an `/arity` suffix, checked against `ops`.
pub fn parse_cvm(src: &str, ops: &OpSet, params: &WordParams) -> Result<CvmProgram, ParseError> {
    let mut prog = CvmProgram::default();
    for (idx, st) in statements(src)?.into_iter().enumerate() {
        let err = |msg: String| ParseError { line: st.line, col: st.col, msg };
        let (head, rest) = match st.text.find(char::is_whitespace) {
            Some(i) => (&st.text[..i], st.text[i..].trim()),
            None => (st.text, ""),
        };
        let words: Vec<&str> = rest.split_whitespace().collect();
        let var = |w: &[&str]| match w {
            [v] if is_var_name(v) => Ok(String::from(*v)),
            _ => Err(err(alloc::format!("`{head}` expects one variable name, found {rest:?}"))),
        };
        let none = |w: &[&str]| if w.is_empty() { Ok(()) } else { Err(err(alloc::format!("`{head}` takes no argument"))) };
        let op = |w: &[&str]| -> Result<String, ParseError> {
            let [spec] = w else { return Err(err(alloc::format!("`{head}` expects an operation name"))) };
            let (name, arity) = match spec.rsplit_once('/') {
                Some((n, a)) if !n.is_empty() && !a.is_empty() && a.bytes().all(|c| c.is_ascii_digit()) => {
                    (n, Some(a.parse::<usize>().map_err(|_| err(alloc::format!("bad arity in {spec}")))?))
                }
                _ => (*spec, None),
            };
            let def = ops.get(name).ok_or_else(|| err(alloc::format!("unknown operation `{name}`")))?;
            if let Some(a) = arity {
                if a != def.arity {
                    return Err(err(alloc::format!("operation `{name}` has arity {}, not {a}", def.arity)));
                }
            }
            Ok(String::from(name))
        };
        let clear = [Instr::Ref(String::from(DUMMY)), Instr::Store];
        let mut expanded: Vec<Instr> = Vec::new();
        match head {
            "Const" => expanded.push(Instr::Const(parse_literal(rest, params).map_err(|e| err(e.to_string()))?)),
            "Ref" => expanded.push(Instr::Ref(var(&words)?)),
            "Malloc" => none(&words).map(|_| expanded.push(Instr::Malloc))?,
            "Load" => none(&words).map(|_| expanded.push(Instr::Load))?,
            "Test" => none(&words).map(|_| expanded.push(Instr::Test))?,
            "Store" => none(&words).map(|_| expanded.push(Instr::Store))?,
            "In" => {
                let src = match words.get(1) {
                    Some(&"read") => Source::Read,
                    Some(&"rnd") => Source::Rnd,
                    _ => return Err(err(String::from("`In` expects a variable and `read` or `rnd`"))),
                };
                if words.len() != 2 {
                    return Err(err(String::from("`In` expects a variable and `read` or `rnd`")));
                }
                expanded.push(Instr::In(var(&words[..1])?, src));
            }
            "Env" => expanded.push(Instr::Env(var(&words)?)),
            "Env'" => {
                expanded.push(Instr::Env(var(&words)?));
                expanded.extend(clear);
            }
            "Apply" => expanded.push(Instr::Apply(op(&words)?)),
            "Apply'" => {
                expanded.push(Instr::Apply(op(&words)?));
                expanded.extend(clear);
            }
            "Out" => match words.as_slice() {
                ["write"] => expanded.push(Instr::Out(Dest::Write)),
                ["event"] => expanded.push(Instr::Out(Dest::Event)),
                _ => return Err(err(String::from("`Out` expects `write` or `event`"))),
            },
            "Event" => none(&words).map(|_| expanded.push(Instr::Out(Dest::Event)))?,
            "Clear" => none(&words).map(|_| expanded.extend(clear))?,
            "Varsize" => none(&words).map(|_| expanded.push(Instr::Const(params.bs(params.width as u64))))?,
            _ => return Err(err(alloc::format!("unknown instruction `{head}`"))),
        }
        if st.after_comment {
            prog.commented.insert(idx);
        }
        for i in expanded {
            prog.instrs.push(i);
            prog.origin.push(idx);
        }
        prog.statements = idx + 1;
    }
    Ok(prog)
}

/// Start address of each memory variable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AddrMap {
    addrs: BTreeMap<String, u128>,
}

impl AddrMap {
    /// Variables at `1, 1 + N, 1 + 2N, …` in name order.
    pub fn packed<'a>(vars: impl IntoIterator<Item = &'a String>, params: &WordParams) -> Self {
        let n = params.width() as u128;
        let addrs = vars.into_iter().enumerate().map(|(i, v)| (v.clone(), 1 + n * i as u128)).collect();
        AddrMap { addrs }
    }

    pub fn insert(&mut self, v: &str, addr: u128) {
        self.addrs.insert(String::from(v), addr);
    }

    pub fn get(&self, v: &str) -> Option<u128> {
        self.addrs.get(v).copied()
    }

    /// The `N`-bit cells must not overlap.
    pub fn is_disjoint(&self, params: &WordParams) -> bool {
        let n = params.width() as u128;
        let mut starts: Vec<u128> = self.addrs.values().copied().collect();
        starts.sort_unstable();
        starts.windows(2).all(|w| w[0] + n <= w[1])
    }
}

/// Disjoint, sorted, non-adjacent half-open address ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ranges(Vec<(u128, u128)>);

impl Ranges {
    pub fn insert(&mut self, start: u128, len: u128) {
        if len == 0 {
            return;
        }
        let (mut s, mut e) = (start, start + len);
        let mut out = Vec::with_capacity(self.0.len() + 1);
        for &(a, b) in &self.0 {
            if b < s || e < a {
                out.push((a, b));
            } else {
                s = s.min(a);
                e = e.max(b);
            }
        }
        out.push((s, e));
        out.sort_unstable();
        self.0 = out;
    }

    pub fn covers(&self, start: u128, len: u128) -> bool {
        len == 0 || self.0.iter().any(|&(a, b)| a <= start && start + len <= b)
    }

    pub fn meets(&self, start: u128, len: u128) -> bool {
        len > 0 && self.0.iter().any(|&(a, b)| start < b && a < start + len)
    }

    pub fn contains(&self, addr: u128) -> bool {
        self.covers(addr, 1)
    }

    pub fn spans(&self) -> &[(u128, u128)] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Machine {
    pub alloc: Ranges,
    pub mem: BTreeMap<u128, bool>,
    /// Top of stack last.
    pub stack: Vec<BitString>,
    /// Index of the next instruction.
    pub pc: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConcState {
    Init,
    Running(Machine),
}

impl Machine {
    /// `dom(mem) ⊆ alloc`.
    pub fn memory_safe(&self) -> bool {
        self.mem.keys().all(|&a| self.alloc.contains(a))
    }
}

fn val(b: &BitString) -> Option<u128> {
    b.val().to_u128()
}

fn address_space(params: &WordParams) -> (u128, u128) {
    (1, (1u128 << params.width()) - 1)
}

fn in_address_space(start: u128, len: u128, params: &WordParams) -> bool {
    let (lo, hi) = address_space(params);
    len == 0 || (start >= lo && start.checked_add(len - 1).is_some_and(|end| end <= hi))
}

/// The concrete semantics of one CVM program as a PTS.
#[derive(Clone, Debug)]
pub struct CvmPts {
    pub program: CvmProgram,
    pub addr: AddrMap,
    pub ops: OpSet,
    pub params: WordParams,
}

impl CvmPts {
    pub fn new(program: CvmProgram, addr: AddrMap, ops: OpSet, params: WordParams) -> Self {
        CvmPts { program, addr, ops, params }
    }

    /// Uses [`AddrMap::packed`] over the program's memory variables.
    pub fn packed(program: CvmProgram, ops: OpSet, params: WordParams) -> Self {
        let addr = AddrMap::packed(&program.memory_vars(), &params);
        CvmPts { program, addr, ops, params }
    }

    fn snapshot(&self, m: &Machine) -> String {
        let top: Vec<String> = m.stack.iter().rev().take(4).map(|b| format_literal(b, &self.params)).collect();
        alloc::format!(
            "instruction {} `{}`, stack top [{}] (depth {}), {} allocated ranges, {} memory bits",
            m.pc,
            self.program.instrs.get(m.pc).map(|i| i.render(&self.params)).unwrap_or_default(),
            top.join(", "),
            m.stack.len(),
            m.alloc.spans().len(),
            m.mem.len()
        )
    }

    /// Lowest base at which `len` fresh bits fit.
    fn first_fit(&self, m: &Machine, len: u128) -> Option<u128> {
        let (lo, _) = address_space(&self.params);
        let mut cand = lo;
        for &(a, b) in m.alloc.spans() {
            if cand + len <= a || len == 0 {
                break;
            }
            cand = cand.max(b);
        }
        in_address_space(cand, len, &self.params).then_some(cand)
    }
}

fn need_ctr(input: Option<&Input>) -> Result<&BitString, StepError> {
    match input {
        Some(Input::Ctr(b)) => Ok(b),
        _ => Err(StepError::Malformed(String::from("expected a control command"))),
    }
}

fn need_eps(rule: &str, input: Option<&Input>) -> Result<(), StepError> {
    let b = need_ctr(input)?;
    if b.is_empty() {
        Ok(())
    } else {
        Err(StepError::stuck(rule, "label must be ctr eps"))
    }
}

impl Pts for CvmPts {
    type State = ConcState;

    fn initial(&self) -> ConcState {
        ConcState::Init
    }

    fn kind(&self, _eta: &Valuation, s: &ConcState) -> Option<Kind> {
        let m = match s {
            ConcState::Init => return Some(Kind::Control),
            ConcState::Running(m) => m,
        };
        Some(match self.program.instrs.get(m.pc)? {
            Instr::In(_, Source::Read) => Kind::Reading,
            Instr::In(_, Source::Rnd) => {
                Kind::Randomising(m.stack.last().and_then(val).and_then(|n| usize::try_from(n).ok()).unwrap_or(0))
            }
            Instr::Out(Dest::Write) => Kind::Writing,
            Instr::Out(Dest::Event) => Kind::Event,
            _ => Kind::Control,
        })
    }

    /// Besides the forced labels, proposes a default attacker choice: the
    /// lowest fitting base for `Malloc` and an all-zero fill for `Load`.
    fn suggest(&self, _eta: &Valuation, s: &ConcState) -> Option<Input> {
        let eps = Some(Input::Ctr(BitString::empty()));
        let m = match s {
            ConcState::Init => return eps,
            ConcState::Running(m) => m,
        };
        match self.program.instrs.get(m.pc)? {
            Instr::Const(_) | Instr::Ref(_) | Instr::Env(_) | Instr::Apply(_) | Instr::Store => eps,
            Instr::Test => Some(Input::Ctr(branch(true))),
            Instr::Malloc => {
                let len = val(m.stack.last()?)?;
                Some(Input::Ctr(self.params.bs(u64::try_from(self.first_fit(m, len)?).ok()?)))
            }
            Instr::Load => {
                let len = usize::try_from(val(m.stack.last()?)?).ok()?;
                Some(Input::Ctr(BitString::zeros(len)))
            }
            Instr::In(..) | Instr::Out(_) => None,
        }
    }

    fn step(&self, eta: &Valuation, s: &ConcState, input: Option<&Input>, rng: &mut dyn RngCore) -> Result<Transition<ConcState>, StepError> {
        let eps = Label::Ctr(BitString::empty());
        let p = &self.params;
        let m = match s {
            ConcState::Init => {
                need_eps("C-Init", input)?;
                let n = p.width() as u128;
                let mut alloc = Ranges::default();
                for v in self.program.memory_vars() {
                    let a = self.addr.get(&v).ok_or_else(|| StepError::stuck("C-Init", alloc::format!("no address for `{v}`")))?;
                    if !in_address_space(a, n, p) {
                        return Err(StepError::stuck("C-Init", alloc::format!("`{v}` at {a} does not fit the address space")));
                    }
                    alloc.insert(a, n);
                }
                let m = Machine { alloc, mem: BTreeMap::new(), stack: Vec::new(), pc: 0 };
                return Ok(Transition::single(eps, eta.clone(), ConcState::Running(m)));
            }
            ConcState::Running(m) => m,
        };
        let instr = self.program.instrs.get(m.pc).ok_or(StepError::Finished)?;
        let mut next = m.clone();
        next.pc += 1;
        let mut eta2 = eta.clone();
        let stuck = |rule: &str, why: &str| StepError::stuck(rule, alloc::format!("{why}; {}", self.snapshot(m)));
        let pop = |rule: &str, next: &mut Machine| next.stack.pop().ok_or_else(|| stuck(rule, "stack underflow"));
        let label = match instr {
            Instr::Const(b) => {
                need_eps("C-Const", input)?;
                next.stack.push(b.clone());
                eps
            }
            Instr::Ref(v) => {
                need_eps("C-Ref", input)?;
                let a = self.addr.get(v).ok_or_else(|| stuck("C-Ref", "variable has no address"))?;
                next.stack.push(p.bs_big(&BigUint::from(a)));
                eps
            }
            Instr::Malloc => {
                let base = need_ctr(input)?;
                let l = pop("C-Malloc", &mut next)?;
                if base.len() != p.width() {
                    return Err(stuck("C-Malloc", "base address must be an N-bit word"));
                }
                let (start, len) = (val(base).unwrap_or(0), val(&l).ok_or_else(|| stuck("C-Malloc", "size out of range"))?);
                if !in_address_space(start, len, p) || next.alloc.meets(start, len) {
                    return Err(stuck("C-Malloc", "requested range is not free"));
                }
                next.alloc.insert(start, len);
                next.stack.push(base.clone());
                Label::Ctr(base.clone())
            }
            Instr::Load => {
                let fill = need_ctr(input)?;
                let l = pop("C-Load", &mut next)?;
                let ptr = pop("C-Load", &mut next)?;
                let len = val(&l).and_then(|n| usize::try_from(n).ok()).ok_or_else(|| stuck("C-Load", "length out of range"))?;
                if fill.len() != len {
                    return Err(stuck("C-Load", "fill must have exactly the loaded length"));
                }
                let start = val(&ptr).ok_or_else(|| stuck("C-Load", "address out of range"))?;
                let b = BitString::from_bits((0..len).map(|i| m.mem.get(&(start + i as u128)).copied().unwrap_or_else(|| fill.get(i))));
                next.stack.push(b);
                Label::Ctr(fill.clone())
            }
            Instr::In(v, src) => {
                let l = pop("C-In", &mut next)?;
                let len = val(&l).filter(|&n| n < 1u128 << p.width()).and_then(|n| usize::try_from(n).ok());
                let len = len.ok_or_else(|| stuck("C-In", "length must be below 2^N"))?;
                let (b, label) = match (src, input) {
                    (Source::Read, Some(Input::Read(b))) => (b.clone(), Label::Read(b.clone())),
                    (Source::Rnd, None) => {
                        let b = random_bits(rng, len).ok_or_else(|| stuck("C-In", "random length exceeds the executor limit"))?;
                        (b.clone(), Label::Rnd(b))
                    }
                    _ => return Err(StepError::Malformed(String::from("command does not match In"))),
                };
                if b.len() != len {
                    return Err(stuck("C-In", "input length differs from the requested length"));
                }
                eta2.set(v, b.clone());
                next.stack.push(b);
                label
            }
            Instr::Env(v) => {
                need_eps("C-Env", input)?;
                let b = eta.get(v).ok_or_else(|| stuck("C-Env", "variable not in the environment"))?;
                if !p.fits(b.len()) {
                    return Err(stuck("C-Env", "value too long"));
                }
                next.stack.push(b.clone());
                next.stack.push(p.bs_usize(b.len()));
                eps
            }
            Instr::Apply(op) => {
                need_eps("C-Apply", input)?;
                let def = self.ops.get(op).ok_or_else(|| stuck("C-Apply", "unknown operation"))?;
                let mut args = Vec::with_capacity(def.arity);
                for _ in 0..def.arity {
                    args.push(pop("C-Apply", &mut next)?);
                }
                let b = def.apply(&args, p).ok_or_else(|| stuck("C-Apply", "operation undefined on its arguments"))?;
                if !p.fits(b.len()) {
                    return Err(stuck("C-Apply", "result too long"));
                }
                let len = p.bs_usize(b.len());
                next.stack.push(b);
                next.stack.push(len);
                eps
            }
            Instr::Out(dest) => {
                if input.is_some() {
                    return Err(StepError::Malformed(String::from("Out takes an empty command")));
                }
                let b = pop("C-Out", &mut next)?;
                match dest {
                    Dest::Write => Label::Write(b),
                    Dest::Event => Label::Event(b),
                }
            }
            Instr::Test => {
                let c = need_ctr(input)?;
                let b = pop("C-Test", &mut next)?;
                if b != p.one() {
                    return Err(stuck("C-Test", "tested value is not i1"));
                }
                if *c != branch(true) {
                    return Err(stuck("C-Test", "label must be ctr 1"));
                }
                Label::Ctr(branch(true))
            }
            Instr::Store => {
                need_eps("C-Store", input)?;
                let ptr = pop("C-Store", &mut next)?;
                let b = pop("C-Store", &mut next)?;
                let start = val(&ptr).ok_or_else(|| stuck("C-Store", "address out of range"))?;
                if !next.alloc.covers(start, b.len() as u128) {
                    return Err(stuck("C-Store", "target range is not allocated"));
                }
                for (i, bit) in b.bits().enumerate() {
                    next.mem.insert(start + i as u128, bit);
                }
                eps
            }
        };
        Ok(Transition::single(label, eta2, ConcState::Running(next)))
    }
}
