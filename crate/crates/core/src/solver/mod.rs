//! Entailment `Σ ⊢ φ` between facts over bitstring expressions.
//!
//! Terms are abstracted to two nonnegative integer atoms each, their value and
//! their bit length. Terms known to denote equal bitstrings share atoms
//! (congruence closure). Arithmetic builtins become linear constraints: `+N`
//! and `-N` exactly; `+b` and `-b` by a case split on wrap-around whenever
//! the word width is known. The negated goal is then refuted branch by branch
//! with Fourier–Motzkin elimination.
//!
//! Valuations are taken to bind every variable of `Σ ∪ {φ}`. A `Proved`
//! answer also certifies that every subterm of `φ` is defined.

mod linear;
pub mod sampler;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use num_traits::ToPrimitive;

use crate::bits::WordParams;
use crate::eval::{eval, Valuation};
use crate::expr::Expr;
use crate::ops::{self, LenSpec, OpSet};
use crate::syntax::print_expr;

pub use linear::{refutes, Conj, Cons, Dnf, Lin, Rel};
pub use sampler::{enumerate_consistent, sample_consistent, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Proved,
    Unknown,
}

impl Verdict {
    pub fn is_proved(self) -> bool {
        self == Verdict::Proved
    }
}

/// A path condition: facts that evaluate to `i1` in every consistent valuation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FactSet {
    facts: Vec<Expr>,
}

impl FactSet {
    pub fn new() -> Self {
        FactSet::default()
    }

    pub fn from_facts(facts: Vec<Expr>) -> Self {
        let mut s = FactSet::new();
        for f in facts {
            s.add(f);
        }
        s
    }

    pub fn add(&mut self, f: Expr) {
        if !self.facts.contains(&f) {
            self.facts.push(f);
        }
    }

    pub fn facts(&self) -> &[Expr] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for f in &self.facts {
            f.collect_vars(&mut out);
        }
        out
    }

    /// True when every fact holds under `eta`.
    pub fn satisfied_by(&self, eta: &Valuation, ops: &OpSet, params: &WordParams) -> bool {
        self.facts.iter().all(|f| crate::eval::holds(f, eta, ops, params))
    }
}

/// `∀ x1..xn: len(op(x1..xn)) = ...`, generated from an operation's length spec.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LenAxiom {
    pub op: String,
    pub arity: usize,
    pub spec: LenSpec,
}

impl LenAxiom {
    pub fn render(&self) -> String {
        let xs: Vec<String> = (1..=self.arity).map(|i| alloc::format!("x{i}")).collect();
        let app = alloc::format!("{}({})", self.op, xs.join(", "));
        match &self.spec {
            LenSpec::Fixed(k) => alloc::format!("forall {}: len({app}) = i{k}", xs.join(", ")),
            LenSpec::ArgPlus { arg, extra } => {
                alloc::format!("forall {}: len({app}) = len(x{}) +N i{extra}", xs.join(", "), arg + 1)
            }
        }
    }
}

/// The length axioms of every operation carrying a length spec.
pub fn len_axioms(ops: &OpSet) -> Vec<LenAxiom> {
    ops.iter()
        .filter_map(|d| d.len_spec.clone().map(|spec| LenAxiom { op: d.name.clone(), arity: d.arity, spec }))
        .collect()
}

/// Entailment checker bound to an operation set and word width.
#[derive(Clone, Copy)]
pub struct Solver<'a> {
    pub ops: &'a OpSet,
    pub params: WordParams,
    /// Search budget: case-split nodes explored per query.
    pub max_branches: usize,
    /// Read `+b` and `-b` as `+N` and `-N` on in-range operands, ignoring wrap-around,
    /// and take every length to fit in a machine word.
    /// Unsound when machine arithmetic can actually overflow.
    pub assume_no_overflow: bool,
}

const MAX_CONST_BITS: usize = 120;
const MAX_LINKED_FORMULAS: usize = 4;

impl<'a> Solver<'a> {
    pub fn new(ops: &'a OpSet, params: WordParams) -> Self {
        Solver { ops, params, max_branches: 4096, assume_no_overflow: false }
    }

    pub fn with_no_overflow(mut self, on: bool) -> Self {
        self.assume_no_overflow = on;
        self
    }

    /// Decides `Σ ⊢ φ`, soundly but incompletely.
    pub fn entails(&self, sigma: &FactSet, phi: &Expr) -> Verdict {
        let mut ab = Abstraction::new(self, sigma);
        if ab.prove(phi) {
            Verdict::Proved
        } else {
            Verdict::Unknown
        }
    }

    /// Proves every formula in `phis`.
    pub fn entails_all(&self, sigma: &FactSet, phis: &[Expr]) -> Verdict {
        let mut ab = Abstraction::new(self, sigma);
        if phis.iter().all(|p| ab.prove(p)) {
            Verdict::Proved
        } else {
            Verdict::Unknown
        }
    }

    /// The abstracted linear system for `Σ ∧ ¬φ`, one constraint per line.
    pub fn dump(&self, sigma: &FactSet, phi: &Expr) -> String {
        let mut ab = Abstraction::new(self, sigma);
        let folded = ab.fold(phi);
        ab.intern_all(&folded);
        ab.close();
        ab.assume_defined_tree(&folded);
        let mut out = String::new();
        let _ = writeln!(out, "# atoms");
        for (i, t) in ab.terms.iter().enumerate() {
            let text = print_expr(t, &self.params);
            let _ = writeln!(out, "v{i} = val({text}), l{i} = len({text})");
        }
        let name = |v: usize| alloc::format!("{}{}", if v.is_multiple_of(2) { "v" } else { "l" }, v / 2);
        let _ = writeln!(out, "# facts");
        for c in &ab.base {
            let _ = writeln!(out, "{}", linear::render(c, &name));
        }
        for (i, d) in ab.disjunctions.iter().enumerate() {
            for (j, conj) in d.iter().enumerate() {
                for c in conj {
                    let _ = writeln!(out, "case {i}.{j}: {}", linear::render(c, &name));
                }
            }
        }
        let _ = writeln!(out, "# negated goal");
        match ab.formula(&folded, false) {
            Some(dnf) => {
                for (j, conj) in dnf.iter().enumerate() {
                    for c in conj {
                        let _ = writeln!(out, "goal {j}: {}", linear::render(c, &name));
                    }
                }
            }
            None => {
                let _ = writeln!(out, "goal: (not expressible)");
            }
        }
        out
    }

    /// SMT-LIB text of `Σ ∧ ¬φ` over the integer abstraction; unsat means entailed.
    pub fn to_smtlib(&self, sigma: &FactSet, phi: &Expr) -> String {
        let mut ab = Abstraction::new(self, sigma);
        let folded = ab.fold(phi);
        ab.intern_all(&folded);
        ab.close();
        ab.assume_defined_tree(&folded);
        let mut vars = BTreeSet::new();
        let mut collect = |c: &Cons| vars.extend(c.lin.coeffs.keys().copied());
        ab.base.iter().for_each(&mut collect);
        ab.disjunctions.iter().flatten().flatten().for_each(&mut collect);
        let goal = ab.formula(&folded, false).unwrap_or_default();
        goal.iter().flatten().for_each(&mut collect);
        let name = |v: usize| alloc::format!("{}{}", if v.is_multiple_of(2) { "v" } else { "l" }, v / 2);
        let smt_cons = |c: &Cons| {
            let mut s = String::from("(+");
            for (v, k) in &c.lin.coeffs {
                let _ = write!(s, " (* {} {})", smt_int(*k), name(*v));
            }
            let _ = write!(s, " {})", smt_int(c.lin.constant));
            match c.rel {
                Rel::Ge => alloc::format!("(>= {s} 0)"),
                Rel::Eq => alloc::format!("(= {s} 0)"),
            }
        };
        let smt_dnf = |d: &[Conj]| {
            let mut s = String::from("(or");
            for conj in d {
                s.push_str(" (and true");
                for c in conj {
                    s.push(' ');
                    s.push_str(&smt_cons(c));
                }
                s.push(')');
            }
            s.push(')');
            s
        };
        let mut out = String::from("(set-logic QF_LIA)\n");
        for v in &vars {
            let _ = writeln!(out, "(declare-const {} Int)\n(assert (>= {} 0))", name(*v), name(*v));
        }
        for c in &ab.base {
            let _ = writeln!(out, "(assert {})", smt_cons(c));
        }
        for d in &ab.disjunctions {
            let _ = writeln!(out, "(assert {})", smt_dnf(d));
        }
        let _ = writeln!(out, "(assert {})\n(check-sat)", smt_dnf(&goal));
        out
    }
}

fn smt_int(k: i128) -> String {
    if k < 0 {
        alloc::format!("(- {})", -k)
    } else {
        alloc::format!("{k}")
    }
}

fn pow2(w: usize) -> Option<i128> {
    (w <= MAX_CONST_BITS).then(|| 1i128 << w)
}

struct Abstraction<'s, 'a> {
    solver: &'s Solver<'a>,
    terms: Vec<Expr>,
    ids: BTreeMap<Expr, usize>,
    parent: Vec<usize>,
    defined: Vec<bool>,
    emitted: Vec<bool>,
    pins: BTreeMap<usize, u64>,
    /// Top-level facts split into conjuncts.
    roots: Vec<Expr>,
    base: Vec<Cons>,
    disjunctions: Vec<Dnf>,
    linked: usize,
}

fn conjuncts(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Op(n, args) if n == ops::AND && args.len() == 2 => {
            conjuncts(&args[0], out);
            conjuncts(&args[1], out);
        }
        _ => out.push(e.clone()),
    }
}

fn is_formula(e: &Expr) -> bool {
    matches!(e, Expr::Op(n, _) if ops::is_comparison(n) && n != ops::SLT || ops::is_connective(n))
}

impl<'s, 'a> Abstraction<'s, 'a> {
    fn new(solver: &'s Solver<'a>, sigma: &FactSet) -> Self {
        let mut ab = Abstraction {
            solver,
            terms: Vec::new(),
            ids: BTreeMap::new(),
            parent: Vec::new(),
            defined: Vec::new(),
            emitted: Vec::new(),
            pins: BTreeMap::new(),
            roots: Vec::new(),
            base: Vec::new(),
            disjunctions: Vec::new(),
            linked: 0,
        };
        let mut roots = Vec::new();
        for f in sigma.facts() {
            conjuncts(&ab.fold(f), &mut roots);
        }
        for r in &roots {
            let id = ab.intern_all(r);
            ab.mark_defined_tree(id);
        }
        ab.roots = roots;
        ab.close();
        for i in 0..ab.terms.len() {
            if ab.defined[i] {
                ab.emit(i);
            }
        }
        for r in ab.roots.clone() {
            let (v, l) = (ab.val(&r), ab.len(&r));
            ab.add(Cons::eq(&v, &Lin::constant(1)));
            ab.add(Cons::eq(&l, &Lin::constant(solver.params.width as i128)));
            if let Some(dnf) = ab.formula(&r, true) {
                ab.push_dnf(dnf);
            }
        }
        ab
    }

    /// Constant-folds ground subterms.
    fn fold(&self, e: &Expr) -> Expr {
        let folded = e.map_children(|c| self.fold(c));
        let ground = folded.children().iter().all(|c| matches!(c, Expr::Const(_)));
        if ground && !matches!(folded, Expr::Const(_) | Expr::Var(_) | Expr::Ptr(..)) {
            if let Some(b) = eval(&folded, &Valuation::new(), self.solver.ops, &self.solver.params) {
                return Expr::Const(b);
            }
        }
        folded
    }

    fn intern(&mut self, e: &Expr) -> usize {
        if let Some(&i) = self.ids.get(e) {
            return i;
        }
        let i = self.terms.len();
        self.terms.push(e.clone());
        self.ids.insert(e.clone(), i);
        self.parent.push(i);
        self.defined.push(false);
        self.emitted.push(false);
        i
    }

    fn intern_all(&mut self, e: &Expr) -> usize {
        for c in e.children() {
            self.intern_all(c);
        }
        self.intern(e)
    }

    fn id(&self, e: &Expr) -> usize {
        self.ids[e]
    }

    fn find(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        if let Some(p) = self.pins.remove(&hi) {
            self.pins.entry(lo).or_insert(p);
        }
        for k in 0..2 {
            self.base.push(Cons { lin: Lin::var(2 * a + k).minus(&Lin::var(2 * b + k)).expect("unit coefficients"), rel: Rel::Eq });
        }
        true
    }

    fn mark_defined_tree(&mut self, id: usize) {
        self.defined[id] = true;
        for c in self.terms[id].clone().children() {
            let cid = self.id(c);
            self.mark_defined_tree(cid);
        }
    }

    fn class_defined(&self, i: usize) -> bool {
        let r = self.find(i);
        (0..self.terms.len()).any(|j| self.defined[j] && self.find(j) == r)
    }

    /// Congruence closure plus merges from length-compatible equality facts.
    fn close(&mut self) {
        loop {
            self.pins.clear();
            for r in &self.roots {
                if let Expr::Op(n, args) = r {
                    if n == ops::EQ {
                        for (a, b) in [(&args[0], &args[1]), (&args[1], &args[0])] {
                            if let (Expr::Len(x), Expr::Const(c)) = (a, b) {
                                if let Some(k) = c.val_u64() {
                                    let cls = self.find(self.id(x));
                                    self.pins.insert(cls, k);
                                }
                            }
                        }
                    }
                }
            }
            let mut changed = false;
            for r in self.roots.clone() {
                if let Expr::Op(n, args) = &r {
                    if n == ops::EQ {
                        let (a, b) = (self.id(&args[0]), self.id(&args[1]));
                        let (wa, wb) = (self.width(a), self.width(b));
                        if wa.is_some() && wa == wb {
                            changed |= self.union(a, b);
                        }
                    }
                }
            }
            let mut sigs: BTreeMap<(String, Vec<usize>), usize> = BTreeMap::new();
            for i in 0..self.terms.len() {
                let sig = self.signature(i);
                if let Some(sig) = sig {
                    match sigs.get(&sig) {
                        Some(&j) => changed |= self.union(i, j),
                        None => {
                            sigs.insert(sig, i);
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn signature(&self, i: usize) -> Option<(String, Vec<usize>)> {
        let t = &self.terms[i];
        let head = match t {
            Expr::Const(_) | Expr::Var(_) | Expr::Ptr(..) => return None,
            Expr::Op(n, _) if self.solver.ops.get(n).is_some_and(|d| d.deterministic) => alloc::format!("op:{n}"),
            Expr::Op(..) => return None,
            Expr::Concat(..) => String::from("@"),
            Expr::Range(..) => String::from("{}"),
            Expr::Len(_) => String::from("len"),
        };
        Some((head, t.children().into_iter().map(|c| self.find(self.id(c))).collect()))
    }

    /// Bit length of `i` whenever it is defined, when statically known.
    fn width(&self, i: usize) -> Option<u64> {
        self.width_depth(i, 0)
    }

    fn width_depth(&self, i: usize, depth: usize) -> Option<u64> {
        if depth > 64 {
            return None;
        }
        if let Some(&k) = self.pins.get(&self.find(i)) {
            return Some(k);
        }
        let n = self.solver.params.width as u64;
        let w = |e: &Expr| self.width_depth(self.id(e), depth + 1);
        match &self.terms[i] {
            Expr::Const(b) => Some(b.len() as u64),
            Expr::Concat(a, b) => w(a)?.checked_add(w(b)?),
            Expr::Range(_, _, l) => match &**l {
                Expr::Const(c) => c.val_u64(),
                _ => None,
            },
            Expr::Op(name, args) => {
                if is_formula(&self.terms[i]) || name == ops::SLT {
                    return Some(n);
                }
                if matches!(name.as_str(), ops::ADD_B | ops::SUB_B | ops::MUL_B) {
                    return w(&args[0]).or_else(|| w(&args[1]));
                }
                let def = self.solver.ops.get(name)?;
                if def.compare {
                    return Some(n);
                }
                match def.len_spec.as_ref()? {
                    LenSpec::Fixed(k) => Some(*k),
                    LenSpec::ArgPlus { arg, extra } => w(args.get(*arg)?)?.checked_add(*extra),
                }
            }
            Expr::Var(_) | Expr::Len(_) | Expr::Ptr(..) => None,
        }
    }

    fn val(&self, e: &Expr) -> Lin {
        Lin::var(2 * self.id(e))
    }

    fn len(&self, e: &Expr) -> Lin {
        Lin::var(2 * self.id(e) + 1)
    }

    fn push_dnf(&mut self, mut dnf: Dnf) {
        if dnf.len() == 1 {
            self.base.append(&mut dnf[0]);
        } else {
            self.disjunctions.push(dnf);
        }
    }

    /// Constraints that overflow the coefficient range are dropped.
    fn add(&mut self, c: Option<Cons>) {
        if let Some(c) = c {
            self.base.push(c);
        }
    }

    /// Definitional constraints of a term known to be defined.
    fn emit(&mut self, i: usize) {
        if self.emitted[i] {
            return;
        }
        self.emitted[i] = true;
        let t = self.terms[i].clone();
        let p = self.solver.params;
        let n = p.width as i128;
        let (v, l) = (self.val(&t), self.len(&t));
        if let Some(w) = self.width(i) {
            let wl = Lin::constant(w as i128);
            self.add(Cons::eq(&l, &wl));
            if let Some(m) = pow2(w as usize) {
                self.add(Cons::ge(&Lin::constant(m - 1), &v));
            }
        }
        match &t {
            Expr::Const(b) => {
                self.add(Cons::eq(&l, &Lin::constant(b.len() as i128)));
                if b.significant_bits() <= MAX_CONST_BITS {
                    let k = b.val().to_i128().expect("fits");
                    self.add(Cons::eq(&v, &Lin::constant(k)));
                }
            }
            Expr::Var(_) | Expr::Ptr(..) => {}
            Expr::Len(x) => {
                self.add(Cons::eq(&v, &self.len(x)));
                if self.solver.assume_no_overflow {
                    // lengths fit in a machine word
                    self.add(Cons::eq(&l, &Lin::constant(n)));
                    if let Some(m) = pow2(n as usize) {
                        self.add(Cons::ge(&Lin::constant(m - 1), &v));
                    }
                } else {
                    self.add(Cons::ge(&l, &Lin::constant(n)));
                }
            }
            Expr::Concat(a, b) => {
                self.add(self.len(a).plus(&self.len(b)).and_then(|s| Cons::eq(&l, &s)));
                if let Some(m) = self.width(self.id(a)).and_then(|w| pow2(w as usize)) {
                    let rhs = self.val(a).plus_scaled(&self.val(b), m);
                    self.add(rhs.and_then(|r| Cons::eq(&v, &r)));
                }
            }
            Expr::Range(e, o, ln) => {
                self.add(Cons::eq(&l, &self.val(ln)));
                self.add(self.val(o).plus(&self.val(ln)).and_then(|s| Cons::ge(&self.len(e), &s)));
            }
            Expr::Op(name, args) => self.emit_op(i, name, args, &v, &l),
        }
    }

    fn emit_op(&mut self, i: usize, name: &str, args: &[Expr], v: &Lin, l: &Lin) {
        let p = self.solver.params;
        let n = p.width as i128;
        match name {
            ops::ADD_N | ops::SUB_N => {
                let rhs = if name == ops::ADD_N {
                    self.val(&args[0]).plus(&self.val(&args[1]))
                } else {
                    self.val(&args[0]).minus(&self.val(&args[1]))
                };
                self.add(rhs.and_then(|r| Cons::eq(v, &r)));
                self.add(Cons::ge(l, &Lin::constant(n)));
            }
            ops::ADD_B | ops::SUB_B | ops::MUL_B => {
                self.add(Cons::eq(l, &self.len(&args[0])));
                self.add(Cons::eq(l, &self.len(&args[1])));
                if name == ops::MUL_B {
                    return;
                }
                if self.solver.assume_no_overflow {
                    let (a, b) = (self.val(&args[0]), self.val(&args[1]));
                    if name == ops::ADD_B {
                        self.add(a.plus(&b).and_then(|s| Cons::eq(v, &s)));
                    } else {
                        self.add(a.minus(&b).and_then(|d| Cons::eq(v, &d)));
                        self.add(Cons::ge(&a, &b));
                    }
                    return;
                }
                let Some(m) = self.width(i).and_then(|w| pow2(w as usize)) else {
                    return;
                };
                let (a, b) = (self.val(&args[0]), self.val(&args[1]));
                let ml = Lin::constant(m);
                let cases = if name == ops::ADD_B {
                    let sum = a.plus(&b);
                    vec![
                        vec![sum.as_ref().and_then(|s| Cons::eq(v, s)), sum.as_ref().and_then(|s| Cons::gt(&ml, s))],
                        vec![
                            sum.as_ref().and_then(|s| s.offset(-m)).and_then(|s| Cons::eq(v, &s)),
                            sum.as_ref().and_then(|s| Cons::ge(s, &ml)),
                        ],
                    ]
                } else {
                    let diff = a.minus(&b);
                    vec![
                        vec![diff.as_ref().and_then(|d| Cons::eq(v, d)), Cons::ge(&a, &b)],
                        vec![diff.as_ref().and_then(|d| d.offset(m)).and_then(|d| Cons::eq(v, &d)), Cons::gt(&b, &a)],
                    ]
                };
                if let Some(dnf) = cases.into_iter().map(|c| c.into_iter().collect::<Option<Vec<_>>>()).collect::<Option<Vec<_>>>() {
                    self.disjunctions.push(dnf);
                }
            }
            _ if is_formula(&self.terms[i]) => {
                self.add(Cons::ge(&Lin::constant(1), v));
                self.add(Cons::eq(l, &Lin::constant(n)));
                let t = self.terms[i].clone();
                let is_root = self.roots.contains(&t);
                if !is_root && self.linked < MAX_LINKED_FORMULAS {
                    if let (Some(pos), Some(neg)) = (self.formula(&t, true), self.formula(&t, false)) {
                        self.linked += 1;
                        let one = Cons::eq(v, &Lin::constant(1));
                        let zero = Cons::eq(v, &Lin::constant(0));
                        let mut dnf = Vec::new();
                        for mut conj in pos {
                            conj.extend(one.clone());
                            dnf.push(conj);
                        }
                        for mut conj in neg {
                            conj.extend(zero.clone());
                            dnf.push(conj);
                        }
                        self.disjunctions.push(dnf);
                    }
                }
            }
            ops::SLT => {
                self.add(Cons::ge(&Lin::constant(1), v));
            }
            _ => {
                if let Some(def) = self.solver.ops.get(name) {
                    if let Some(LenSpec::ArgPlus { arg, extra }) = &def.len_spec {
                        if let Some(a) = args.get(*arg) {
                            let rhs = self.len(a).offset(*extra as i128);
                            self.add(rhs.and_then(|r| Cons::eq(l, &r)));
                        }
                    }
                }
            }
        }
    }

    /// DNF for `e` holding (`positive`) or failing to hold, with `e` defined.
    fn formula(&self, e: &Expr, positive: bool) -> Option<Dnf> {
        let n = self.solver.params.width as i128;
        if let Expr::Op(name, args) = e {
            let rel = |a: &Expr, b: &Expr, op: &str, pos: bool| -> Option<Dnf> {
                let (va, vb) = (self.val(a), self.val(b));
                // Normalise to a relation between va and vb.
                let r = match (op, pos) {
                    (ops::EQ, true) => vec![vec![Cons::eq(&va, &vb)?]],
                    (ops::EQ, false) => vec![vec![Cons::gt(&va, &vb)?], vec![Cons::gt(&vb, &va)?]],
                    (ops::LE, true) | (ops::GT, false) => vec![vec![Cons::ge(&vb, &va)?]],
                    (ops::LE, false) | (ops::GT, true) => vec![vec![Cons::gt(&va, &vb)?]],
                    (ops::LT, true) | (ops::GE, false) => vec![vec![Cons::gt(&vb, &va)?]],
                    (ops::LT, false) | (ops::GE, true) => vec![vec![Cons::ge(&va, &vb)?]],
                    _ => return None,
                };
                Some(r)
            };
            match name.as_str() {
                ops::EQ | ops::LE | ops::LT | ops::GT | ops::GE => return rel(&args[0], &args[1], name, positive),
                ops::NOT => return self.truthy(&args[0], !positive),
                ops::OR | ops::AND => {
                    let (a, b) = (self.truthy(&args[0], positive)?, self.truthy(&args[1], positive)?);
                    let disjunctive = (name == ops::OR) == positive;
                    return if disjunctive { Some([a, b].concat()) } else { product(&a, &b, self.solver.max_branches) };
                }
                _ => {}
            }
        }
        let (v, l) = (self.val(e), self.len(e));
        if positive {
            Some(vec![vec![Cons::eq(&v, &Lin::constant(1))?, Cons::eq(&l, &Lin::constant(n))?]])
        } else {
            Some(vec![
                vec![Cons::ge(&Lin::constant(0), &v)?],
                vec![Cons::ge(&v, &Lin::constant(2))?],
                vec![Cons::gt(&Lin::constant(n), &l)?],
                vec![Cons::gt(&l, &Lin::constant(n))?],
            ])
        }
    }

    /// DNF for `val(e) != 0` (`truthy`) or `val(e) = 0`.
    fn truthy(&self, e: &Expr, truthy: bool) -> Option<Dnf> {
        if is_formula(e) {
            return self.formula(e, truthy);
        }
        let v = self.val(e);
        Some(vec![vec![if truthy { Cons::ge(&v, &Lin::constant(1))? } else { Cons::eq(&v, &Lin::constant(0))? }]])
    }

    fn assume_defined_tree(&mut self, e: &Expr) {
        let id = self.id(e);
        self.mark_defined_tree(id);
        for i in 0..self.terms.len() {
            if self.defined[i] {
                self.emit(i);
            }
        }
    }

    /// Checks definedness of every subterm of `e`, adding each as it is established.
    fn establish_defined(&mut self, e: &Expr) -> bool {
        for c in e.children() {
            if !self.establish_defined(c) {
                return false;
            }
        }
        let i = self.id(e);
        if self.defined[i] || self.class_defined(i) {
            self.defined[i] = true;
            self.emit(i);
            return true;
        }
        let obligation: Option<Dnf> = match e {
            Expr::Const(_) | Expr::Var(_) | Expr::Concat(..) | Expr::Len(_) => Some(Vec::new()),
            Expr::Ptr(..) => None,
            Expr::Range(x, o, l) => {
                // defined iff val(o) + val(l) <= len(x); refute the opposite
                self.val(o).plus(&self.val(l)).and_then(|s| Cons::gt(&s, &self.len(x))).map(|c| vec![vec![c]])
            }
            Expr::Op(name, args) => match name.as_str() {
                ops::ADD_B | ops::SUB_B | ops::MUL_B => {
                    let (a, b) = (self.len(&args[0]), self.len(&args[1]));
                    match (Cons::gt(&a, &b), Cons::gt(&b, &a)) {
                        (Some(x), Some(y)) => Some(vec![vec![x], vec![y]]),
                        _ => None,
                    }
                }
                ops::SUB_N => Cons::gt(&self.val(&args[1]), &self.val(&args[0])).map(|c| vec![vec![c]]),
                _ => match self.solver.ops.get(name) {
                    Some(d) if d.total && d.arity == args.len() => Some(Vec::new()),
                    _ => None,
                },
            },
        };
        let Some(negated) = obligation else {
            return false;
        };
        if !negated.is_empty() && !self.refute(&negated) {
            return false;
        }
        self.defined[i] = true;
        self.emit(i);
        true
    }

    fn prove(&mut self, phi: &Expr) -> bool {
        let folded = self.fold(phi);
        if let Expr::Const(b) = &folded {
            return *b == self.solver.params.one();
        }
        let mut parts = Vec::new();
        conjuncts(&folded, &mut parts);
        for part in parts {
            self.intern_all(&part);
            self.close();
            if !self.establish_defined(&part) {
                return false;
            }
            let Some(neg) = self.formula(&part, false) else {
                return false;
            };
            if !self.refute(&neg) {
                return false;
            }
        }
        true
    }

    /// True when `base ∧ disjunctions ∧ goal` has no model in any branch.
    fn refute(&self, goal: &[Conj]) -> bool {
        let mut stack: Vec<Cons> = self.base.clone();
        let mut budget = self.solver.max_branches;
        self.refute_rec(0, goal, &mut stack, &mut budget)
    }

    fn refute_rec(&self, k: usize, goal: &[Conj], stack: &mut Vec<Cons>, budget: &mut usize) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        if refutes(stack) {
            return true;
        }
        if k == self.disjunctions.len() {
            return goal.iter().all(|g| {
                let mut all = stack.clone();
                all.extend(g.iter().cloned());
                refutes(&all)
            });
        }
        for case in &self.disjunctions[k] {
            let mark = stack.len();
            stack.extend(case.iter().cloned());
            let ok = self.refute_rec(k + 1, goal, stack, budget);
            stack.truncate(mark);
            if !ok {
                return false;
            }
        }
        true
    }
}

fn product(a: &[Conj], b: &[Conj], cap: usize) -> Option<Dnf> {
    if a.len().saturating_mul(b.len()) > cap {
        return None;
    }
    let mut out = Vec::new();
    for x in a {
        for y in b {
            out.push([x.clone(), y.clone()].concat());
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests;
