//! Range simplification under a fact set: `cut_left`, `cut_right` and
//! `simplify`.
//!
//! Concatenations are handled as flat chains `e1 @ .. @ en`; a cut searches
//! for the first piece whose span provably contains the cut position.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::bits::WordParams;
use crate::eval::{eval, Valuation};
use crate::expr::{get_len, Expr};
use crate::ops;
use crate::solver::{FactSet, Solver};

/// Extra syntax a concatenation split may introduce, e.g. two field ranges in place of one.
const SPLIT_GROWTH: usize = 2;

/// Simplification context; every rewrite is justified by `solver` under `sigma`.
pub struct Simplifier<'s, 'a> {
    pub solver: &'s Solver<'a>,
    pub sigma: &'s FactSet,
    depth_limit: usize,
    pub depth_hits: core::cell::Cell<usize>,
    /// `len(e) = t` facts with `t` a literal or a variable.
    known_lengths: BTreeMap<Expr, Expr>,
}

impl<'s, 'a> Simplifier<'s, 'a> {
    pub fn new(solver: &'s Solver<'a>, sigma: &'s FactSet) -> Self {
        let mut known_lengths = BTreeMap::new();
        for f in sigma.facts() {
            if let Expr::Op(name, args) = f {
                if name == ops::EQ {
                    for (a, b) in [(&args[0], &args[1]), (&args[1], &args[0])] {
                        if let (Expr::Len(x), Expr::Const(_) | Expr::Var(_)) = (a, b) {
                            known_lengths.entry((**x).clone()).or_insert_with(|| b.clone());
                        }
                    }
                }
            }
        }
        Simplifier { solver, sigma, depth_limit: 64, depth_hits: core::cell::Cell::new(0), known_lengths }
    }

    fn params(&self) -> &WordParams {
        &self.solver.params
    }

    fn proves(&self, phi: &Expr) -> bool {
        self.solver.entails(self.sigma, phi).is_proved()
    }

    fn zero(&self) -> Expr {
        Expr::word(0, self.params())
    }

    /// Folds arithmetic builtins and ranges applied to literals.
    fn fold(&self, e: Expr) -> Expr {
        let foldable = match &e {
            Expr::Op(name, _) => matches!(name.as_str(), ops::ADD_N | ops::SUB_N | ops::ADD_B | ops::SUB_B | ops::MUL_B),
            Expr::Range(..) => true,
            _ => false,
        };
        {
            if foldable && e.children().iter().all(|a| matches!(a, Expr::Const(_))) {
                if let Some(b) = eval(&e, &Valuation::new(), self.solver.ops, self.params()) {
                    return Expr::Const(b);
                }
            }
        }
        e
    }

    fn add_n(&self, a: Expr, b: Expr) -> Expr {
        if a == self.zero() {
            return b;
        }
        if b == self.zero() {
            return a;
        }
        self.fold(Expr::add_n(a, b))
    }

    fn sub_n(&self, a: Expr, b: Expr) -> Expr {
        if b == self.zero() {
            return a;
        }
        if a == b {
            return self.zero();
        }
        self.fold(Expr::sub_n(a, b))
    }

    fn piece_len(&self, e: &Expr) -> Expr {
        if let Some(t) = self.known_lengths.get(e) {
            return t.clone();
        }
        get_len(e, self.params())
    }

    fn chain_len(&self, pieces: &[Expr]) -> Expr {
        pieces.iter().fold(self.zero(), |acc, p| self.add_n(acc, self.piece_len(p)))
    }

    /// Bottom-up simplification.
    pub fn simplify(&self, e: &Expr) -> Expr {
        self.simplify_at(e, 0)
    }

    fn simplify_at(&self, e: &Expr, depth: usize) -> Expr {
        let e = self.fold(e.map_children(|c| self.simplify_at(c, depth + 1)));
        match e {
            Expr::Range(x, o, l) => self.simplify_range(*x, *o, *l, depth),
            Expr::Concat(..) => {
                let pieces: Vec<Expr> = e.concat_pieces().into_iter().filter(|p| !p.is_empty_const()).cloned().collect();
                if pieces.is_empty() { Expr::empty() } else { Expr::concat_all(pieces) }
            }
            _ => e,
        }
    }

    fn simplify_range(&self, x: Expr, o: Expr, l: Expr, depth: usize) -> Expr {
        if depth > self.depth_limit {
            self.depth_hits.set(self.depth_hits.get() + 1);
            return Expr::range(x, o, l);
        }
        let whole = Expr::and(Expr::eq(o.clone(), self.zero()), Expr::eq(l.clone(), self.piece_len(&x)));
        if self.proves(&whole) {
            return x;
        }
        if self.proves(&Expr::eq(l.clone(), self.zero())) {
            return Expr::empty();
        }
        match x {
            Expr::Range(inner, o2, _) => {
                let fused = self.add_n(*o2, o);
                self.simplify_range(*inner, fused, l, depth + 1)
            }
            Expr::Concat(..) => {
                let pieces = flatten(&x);
                let Some(rest) = self.cut_right_chain(&o, &pieces, depth) else {
                    return Expr::range(x, o, l);
                };
                let original_size = 1 + x.size() + o.size() + l.size();
                if let Some(done) = self.cut_left_chain(&l, &rest, depth) {
                    let done = join(done);
                    if done.size() <= original_size + SPLIT_GROWTH {
                        return done;
                    }
                    return Expr::range(x, o, l);
                }
                let partial = if rest.len() == 1 {
                    let piece = rest.into_iter().next().expect("one piece");
                    self.simplify_range(piece, self.zero(), l.clone(), depth + 1)
                } else {
                    Expr::range(join(rest), self.zero(), l.clone())
                };
                if partial.size() <= original_size { partial } else { Expr::range(x, o, l) }
            }
            x => self.fold(Expr::range(x, o, l)),
        }
    }

    fn spans(&self, l: &Expr, prefix: &Expr, piece_len: &Expr) -> bool {
        let lo = Expr::ge(l.clone(), prefix.clone());
        let hi = Expr::le(l.clone(), self.add_n(prefix.clone(), piece_len.clone()));
        self.solver.entails_all(self.sigma, &[lo, hi]).is_proved()
    }

    /// Pieces to the left of position `l`, or `None` when no boundary is provable.
    fn cut_left_chain(&self, l: &Expr, pieces: &[Expr], depth: usize) -> Option<Vec<Expr>> {
        let mut prefix = self.zero();
        for (i, piece) in pieces.iter().enumerate() {
            let pl = self.piece_len(piece);
            if self.spans(l, &prefix, &pl) {
                let mut out: Vec<Expr> = pieces[..i].to_vec();
                let cut = self.sub_n(l.clone(), prefix);
                out.push(self.simplify_range(piece.clone(), self.zero(), cut, depth + 1));
                out.retain(|p| !p.is_empty_const());
                return Some(out);
            }
            prefix = self.add_n(prefix, pl);
        }
        None
    }

    /// Pieces to the right of position `l`, or `None` when no boundary is provable.
    fn cut_right_chain(&self, l: &Expr, pieces: &[Expr], depth: usize) -> Option<Vec<Expr>> {
        let mut prefix = self.zero();
        for (i, piece) in pieces.iter().enumerate() {
            let pl = self.piece_len(piece);
            if self.spans(l, &prefix, &pl) {
                let off = self.sub_n(l.clone(), prefix);
                let keep = self.sub_n(pl, off.clone());
                let mut out = alloc::vec![self.simplify_range(piece.clone(), off, keep, depth + 1)];
                out.extend(pieces[i + 1..].iter().cloned());
                out.retain(|p| !p.is_empty_const());
                return Some(out);
            }
            prefix = self.add_n(prefix, pl);
        }
        None
    }

    /// The part of `e` before position `l`.
    pub fn cut_left(&self, l: &Expr, e: &Expr) -> Expr {
        match self.cut_left_chain(l, &flatten(e), 0) {
            Some(p) => join(p),
            None => Expr::range(e.clone(), self.zero(), l.clone()),
        }
    }

    /// The part of `e` from position `l` on.
    pub fn cut_right(&self, l: &Expr, e: &Expr) -> Expr {
        let pieces = flatten(e);
        match self.cut_right_chain(l, &pieces, 0) {
            Some(p) => join(p),
            None => Expr::range(e.clone(), l.clone(), self.sub_n(self.chain_len(&pieces), l.clone())),
        }
    }
}

fn flatten(e: &Expr) -> Vec<Expr> {
    e.concat_pieces().into_iter().filter(|p| !p.is_empty_const()).cloned().collect()
}

fn join(pieces: Vec<Expr>) -> Expr {
    if pieces.is_empty() {
        Expr::empty()
    } else {
        Expr::concat_all(pieces)
    }
}

/// Simplifies `e` under `sigma`.
pub fn simplify(solver: &Solver<'_>, sigma: &FactSet, e: &Expr) -> Expr {
    Simplifier::new(solver, sigma).simplify(e)
}

pub fn cut_left(solver: &Solver<'_>, sigma: &FactSet, l: &Expr, e: &Expr) -> Expr {
    Simplifier::new(solver, sigma).cut_left(l, e)
}

pub fn cut_right(solver: &Solver<'_>, sigma: &FactSet, l: &Expr, e: &Expr) -> Expr {
    Simplifier::new(solver, sigma).cut_right(l, e)
}
