//! Symbolic bitstring expressions.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bits::{BitString, WordParams};
use crate::ops::{self, OpSet};

/// Identity of a symbolic memory region.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PtrBase {
    Stack(String),
    Heap(usize),
}

impl core::fmt::Display for PtrBase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PtrBase::Stack(v) => write!(f, "stack {v}"),
            PtrBase::Heap(i) => write!(f, "heap {i}"),
        }
    }
}

/// A symbolic bitstring expression. Expressions without `Ptr` are IML expressions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Const(BitString),
    Var(String),
    Op(String, Vec<Expr>),
    Concat(Box<Expr>, Box<Expr>),
    /// `e{offset, length}`
    Range(Box<Expr>, Box<Expr>, Box<Expr>),
    Len(Box<Expr>),
    Ptr(PtrBase, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(String::from(name))
    }

    pub fn op(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Op(String::from(name), args)
    }

    pub fn op2(name: &str, a: Expr, b: Expr) -> Expr {
        Expr::Op(String::from(name), vec![a, b])
    }

    pub fn concat(a: Expr, b: Expr) -> Expr {
        Expr::Concat(Box::new(a), Box::new(b))
    }

    pub fn range(e: Expr, off: Expr, len: Expr) -> Expr {
        Expr::Range(Box::new(e), Box::new(off), Box::new(len))
    }

    pub fn len_of(e: Expr) -> Expr {
        Expr::Len(Box::new(e))
    }

    pub fn ptr(base: PtrBase, off: Expr) -> Expr {
        Expr::Ptr(base, Box::new(off))
    }

    pub fn word(n: u64, params: &WordParams) -> Expr {
        Expr::Const(params.bs(n))
    }

    pub fn empty() -> Expr {
        Expr::Const(BitString::empty())
    }

    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::EQ, a, b)
    }

    pub fn le(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::LE, a, b)
    }

    pub fn lt(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::LT, a, b)
    }

    pub fn ge(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::GE, a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Expr) -> Expr {
        Expr::op(ops::NOT, vec![a])
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::AND, a, b)
    }

    pub fn add_n(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::ADD_N, a, b)
    }

    pub fn sub_n(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::SUB_N, a, b)
    }

    pub fn add_b(a: Expr, b: Expr) -> Expr {
        Expr::op2(ops::ADD_B, a, b)
    }

    pub fn as_const(&self) -> Option<&BitString> {
        match self {
            Expr::Const(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Expr::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_empty_const(&self) -> bool {
        matches!(self, Expr::Const(b) if b.is_empty())
    }

    /// Direct children, in order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => Vec::new(),
            Expr::Op(_, args) => args.iter().collect(),
            Expr::Concat(a, b) => vec![a, b],
            Expr::Range(e, o, l) => vec![e, o, l],
            Expr::Len(e) => vec![e],
            Expr::Ptr(_, o) => vec![o],
        }
    }

    /// Rebuilds this node with each child replaced by `f(child)`.
    pub fn map_children(&self, mut f: impl FnMut(&Expr) -> Expr) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Op(n, args) => Expr::Op(n.clone(), args.iter().map(&mut f).collect()),
            Expr::Concat(a, b) => Expr::concat(f(a), f(b)),
            Expr::Range(e, o, l) => {
                let e = f(e);
                let o = f(o);
                Expr::range(e, o, f(l))
            }
            Expr::Len(e) => Expr::len_of(f(e)),
            Expr::Ptr(pb, o) => Expr::ptr(pb.clone(), f(o)),
        }
    }

    /// True when no `Ptr` occurs anywhere.
    pub fn ptr_free(&self) -> bool {
        match self {
            Expr::Ptr(..) => false,
            _ => self.children().into_iter().all(Expr::ptr_free),
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<String>) {
        if let Expr::Var(v) = self {
            out.insert(v.clone());
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Expr::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Expr::depth).max().unwrap_or(0)
    }

    /// Replaces every free occurrence of variable `x` by `by`.
    pub fn substitute(&self, x: &str, by: &Expr) -> Expr {
        match self {
            Expr::Var(v) if v == x => by.clone(),
            _ => self.map_children(|c| c.substitute(x, by)),
        }
    }

    /// All subterms in post-order (children before parents), duplicates included.
    pub fn subterms(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        self.push_subterms(&mut out);
        out
    }

    fn push_subterms<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        for c in self.children() {
            c.push_subterms(out);
        }
        out.push(self);
    }

    /// Flattens nested concatenations into their left-to-right pieces.
    pub fn concat_pieces(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn go<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            match e {
                Expr::Concat(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                _ => out.push(e),
            }
        }
        go(self, &mut out);
        out
    }

    /// Right-nested concatenation of `pieces`; `ε` when empty.
    pub fn concat_all(pieces: Vec<Expr>) -> Expr {
        let mut it = pieces.into_iter().rev();
        match it.next() {
            None => Expr::empty(),
            Some(last) => it.fold(last, |acc, p| Expr::concat(p, acc)),
        }
    }
}

/// The symbolic length of `e`.
pub fn get_len(e: &Expr, params: &WordParams) -> Expr {
    match e {
        Expr::Ptr(..) | Expr::Len(_) => Expr::word(params.width as u64, params),
        Expr::Const(b) => Expr::Const(params.bs_usize(b.len())),
        Expr::Var(_) | Expr::Op(..) => Expr::len_of(e.clone()),
        Expr::Concat(a, b) => Expr::add_n(get_len(a, params), get_len(b, params)),
        Expr::Range(_, _, l) => (**l).clone(),
    }
}

/// Pointer-aware application of `op` to `args`; `None` marks an unmodelable pointer computation.
pub fn apply_sym(op: &str, args: Vec<Expr>, ops: &OpSet) -> Option<Expr> {
    if let Some(def) = ops.get(op) {
        if def.arity != args.len() {
            return None;
        }
    }
    if args.iter().all(Expr::ptr_free) {
        return Some(Expr::Op(String::from(op), args));
    }
    match (op, args.as_slice()) {
        (ops::ADD_B, [Expr::Ptr(pb, eo), e]) | (ops::ADD_B, [e, Expr::Ptr(pb, eo)]) if e.ptr_free() => {
            Some(Expr::ptr(pb.clone(), Expr::add_b((**eo).clone(), e.clone())))
        }
        (ops::SUB_B, [Expr::Ptr(pb, eo), Expr::Ptr(pb2, eo2)]) if pb == pb2 => {
            Some(Expr::op2(ops::SUB_B, (**eo).clone(), (**eo2).clone()))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn get_len_cases() {
        let p = WordParams::new(32);
        let ptr = Expr::ptr(PtrBase::Heap(1), Expr::word(0, &p));
        assert_eq!(get_len(&ptr, &p), Expr::word(32, &p));
        assert_eq!(get_len(&Expr::len_of(Expr::var("x")), &p), Expr::word(32, &p));
        assert_eq!(get_len(&Expr::Const(BitString::from_ascii("ab")), &p), Expr::word(16, &p));
        assert_eq!(get_len(&Expr::var("x"), &p), Expr::len_of(Expr::var("x")));
        let r = Expr::range(Expr::var("x"), Expr::var("o"), Expr::var("l"));
        assert_eq!(get_len(&r, &p), Expr::var("l"));
        let c = Expr::concat(Expr::var("x"), Expr::var("y"));
        assert_eq!(get_len(&c, &p), Expr::add_n(Expr::len_of(Expr::var("x")), Expr::len_of(Expr::var("y"))));
    }

    #[test]
    fn apply_sym_pointer_rules() {
        let p = WordParams::new(32);
        let ops = OpSet::standard(&p);
        let h2 = Expr::ptr(PtrBase::Heap(2), Expr::word(0, &p));
        let l = Expr::var("l");
        assert_eq!(
            apply_sym(ops::ADD_B, vec![h2.clone(), l.clone()], &ops),
            Some(Expr::ptr(PtrBase::Heap(2), Expr::add_b(Expr::word(0, &p), l.clone())))
        );
        let h1 = Expr::ptr(PtrBase::Heap(1), Expr::var("a"));
        assert_eq!(apply_sym(ops::SUB_B, vec![h1.clone(), h2.clone()], &ops), None);
        let h1b = Expr::ptr(PtrBase::Heap(1), Expr::var("b"));
        assert_eq!(
            apply_sym(ops::SUB_B, vec![h1.clone(), h1b], &ops),
            Some(Expr::op2(ops::SUB_B, Expr::var("a"), Expr::var("b")))
        );
        let mac = apply_sym("mac", vec![Expr::var("k"), Expr::var("x1")], &ops);
        assert_eq!(mac, Some(Expr::op2("mac", Expr::var("k"), Expr::var("x1"))));
        assert_eq!(apply_sym("mac", vec![h1, l], &ops), None);
    }

    #[test]
    fn concat_pieces_flatten() {
        let e = Expr::concat(Expr::concat(Expr::var("a"), Expr::var("b")), Expr::var("c"));
        let pieces: Vec<Expr> = e.concat_pieces().into_iter().cloned().collect();
        assert_eq!(pieces, vec![Expr::var("a"), Expr::var("b"), Expr::var("c")]);
        assert_eq!(Expr::concat_all(pieces).concat_pieces().len(), 3);
    }
}
