//! Valuations and concrete evaluation of expressions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::bits::{BitString, WordParams};
use crate::expr::{Expr, PtrBase};
use crate::ops::{self, OpSet};

/// Partial map from variables and pointer bases to bitstrings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Valuation {
    vars: BTreeMap<String, BitString>,
    bases: BTreeMap<PtrBase, BitString>,
}

impl Valuation {
    pub fn new() -> Self {
        Valuation::default()
    }

    pub fn get(&self, v: &str) -> Option<&BitString> {
        self.vars.get(v)
    }

    pub fn base(&self, pb: &PtrBase) -> Option<&BitString> {
        self.bases.get(pb)
    }

    /// Binds `v`; returns false (and leaves the binding alone) if `v` is bound to a different value.
    pub fn bind(&mut self, v: &str, b: BitString) -> bool {
        match self.vars.get(v) {
            Some(old) => *old == b,
            None => {
                self.vars.insert(String::from(v), b);
                true
            }
        }
    }

    /// Binds `v`, replacing any previous value.
    pub fn set(&mut self, v: &str, b: BitString) {
        self.vars.insert(String::from(v), b);
    }

    pub fn bind_base(&mut self, pb: PtrBase, b: BitString) -> bool {
        match self.bases.get(&pb) {
            Some(old) => *old == b,
            None => {
                self.bases.insert(pb, b);
                true
            }
        }
    }

    pub fn with(mut self, v: &str, b: BitString) -> Self {
        self.bind(v, b);
        self
    }

    pub fn contains(&self, v: &str) -> bool {
        self.vars.contains_key(v)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &BitString)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty() && self.bases.is_empty()
    }

    /// True when every binding of `self` is present, unchanged, in `other`.
    pub fn extended_by(&self, other: &Valuation) -> bool {
        self.vars.iter().all(|(k, v)| other.vars.get(k) == Some(v))
            && self.bases.iter().all(|(k, v)| other.bases.get(k) == Some(v))
    }
}

/// Evaluates `e` under `eta`; `None` is the undefined value.
pub fn eval(e: &Expr, eta: &Valuation, ops: &OpSet, params: &WordParams) -> Option<BitString> {
    match e {
        Expr::Const(b) => Some(b.clone()),
        Expr::Var(v) => eta.get(v).cloned(),
        Expr::Op(name, args) => {
            let def = ops.get(name)?;
            let vals = args.iter().map(|a| eval(a, eta, ops, params)).collect::<Option<Vec<_>>>()?;
            def.apply(&vals, params)
        }
        Expr::Concat(a, b) => Some(eval(a, eta, ops, params)?.concat(&eval(b, eta, ops, params)?)),
        Expr::Range(x, o, l) => {
            let x = eval(x, eta, ops, params)?;
            let o = eval(o, eta, ops, params)?.val_usize()?;
            let l = eval(l, eta, ops, params)?.val_usize()?;
            x.sub(o, l)
        }
        Expr::Len(x) => Some(params.bs_usize(eval(x, eta, ops, params)?.len())),
        Expr::Ptr(pb, o) => {
            let base = eta.base(pb)?;
            let o = eval(o, eta, ops, params)?;
            ops.get(ops::ADD_B)?.apply(&[base.clone(), o], params)
        }
    }
}

/// True when `e` evaluates to exactly `i1`.
pub fn holds(e: &Expr, eta: &Valuation, ops: &OpSet, params: &WordParams) -> bool {
    eval(e, eta, ops, params).is_some_and(|b| b == params.one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::get_len;
    use proptest::prelude::*;

    const W: WordParams = WordParams::new(4);

    // Reference interpreter over plain bit vectors, written independently of BitString.
    fn oracle(e: &Expr, env: &BTreeMap<String, Vec<bool>>, w: usize) -> Option<Vec<bool>> {
        let word = |n: u128| -> Vec<bool> {
            let len = core::cmp::max(w, 128 - n.leading_zeros() as usize);
            (0..len).map(|i| (n >> i) & 1 == 1).collect()
        };
        let num = |v: &[bool]| -> Option<u128> {
            let mut n = 0u128;
            for (i, b) in v.iter().enumerate() {
                if *b {
                    if i >= 128 {
                        return None;
                    }
                    n |= 1 << i;
                }
            }
            Some(n)
        };
        match e {
            Expr::Const(b) => Some(b.bits().collect()),
            Expr::Var(v) => env.get(v).cloned(),
            Expr::Concat(a, b) => {
                let mut x = oracle(a, env, w)?;
                x.extend(oracle(b, env, w)?);
                Some(x)
            }
            Expr::Range(x, o, l) => {
                let x = oracle(x, env, w)?;
                let o = num(&oracle(o, env, w)?)? as usize;
                let l = num(&oracle(l, env, w)?)? as usize;
                (o + l <= x.len()).then(|| x[o..o + l].to_vec())
            }
            Expr::Len(x) => Some(word(oracle(x, env, w)?.len() as u128)),
            Expr::Op(n, args) => {
                let a: Vec<Vec<bool>> = args.iter().map(|x| oracle(x, env, w)).collect::<Option<_>>()?;
                let (x, y) = (num(&a[0])?, num(&a[1])?);
                match n.as_str() {
                    ops::ADD_B if a[0].len() == a[1].len() => {
                        let m = 1u128 << a[0].len();
                        Some((0..a[0].len()).map(|i| (((x + y) % m) >> i) & 1 == 1).collect())
                    }
                    ops::ADD_B => None,
                    ops::ADD_N => Some(word(x + y)),
                    ops::SUB_N => x.checked_sub(y).map(word),
                    ops::EQ => Some(word((x == y) as u128)),
                    ops::LT => Some(word((x < y) as u128)),
                    _ => unreachable!(),
                }
            }
            Expr::Ptr(..) => None,
        }
    }

    fn arb_bits() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 0..7)
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u64..16).prop_map(|n| Expr::word(n, &W)),
            arb_bits().prop_map(|b| Expr::Const(BitString::from_bits(b))),
            prop_oneof![Just("x"), Just("y"), Just("z")].prop_map(Expr::var),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::concat(a, b)),
                (inner.clone(), inner.clone(), inner.clone()).prop_map(|(a, b, c)| Expr::range(a, b, c)),
                inner.clone().prop_map(Expr::len_of),
                (prop_oneof![Just(ops::ADD_B), Just(ops::ADD_N), Just(ops::SUB_N), Just(ops::EQ), Just(ops::LT)], inner.clone(), inner)
                    .prop_map(|(n, a, b)| Expr::op2(n, a, b)),
            ]
        })
    }

    fn arb_env() -> impl Strategy<Value = BTreeMap<String, Vec<bool>>> {
        (arb_bits(), arb_bits(), proptest::option::of(arb_bits())).prop_map(|(x, y, z)| {
            let mut m = BTreeMap::new();
            m.insert(String::from("x"), x);
            m.insert(String::from("y"), y);
            if let Some(z) = z {
                m.insert(String::from("z"), z);
            }
            m
        })
    }

    fn to_valuation(env: &BTreeMap<String, Vec<bool>>) -> Valuation {
        let mut eta = Valuation::new();
        for (k, v) in env {
            eta.bind(k, BitString::from_bits(v.iter().copied()));
        }
        eta
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn eval_matches_reference(e in arb_expr(), env in arb_env()) {
            let ops = OpSet::builtins();
            let got = eval(&e, &to_valuation(&env), &ops, &W).map(|b| b.bits().collect::<Vec<_>>());
            prop_assert_eq!(got, oracle(&e, &env, 4));
        }

        #[test]
        fn get_len_sound(e in arb_expr(), env in arb_env()) {
            let ops = OpSet::builtins();
            let eta = to_valuation(&env);
            // bs is only pinned down below 2^N, so every intermediate length must fit
            let fits = e.subterms().iter().all(|s| eval(s, &eta, &ops, &W).is_none_or(|v| W.fits(v.len())));
            if let (Some(v), true) = (eval(&e, &eta, &ops, &W), fits) {
                // lengths agree as numbers; a range reuses its length operand verbatim
                let got = eval(&get_len(&e, &W), &eta, &ops, &W).map(|b| b.val());
                prop_assert_eq!(got, Some(W.bs_usize(v.len()).val()));
            }
        }

        #[test]
        fn eval_monotone(e in arb_expr(), env in arb_env(), extra in arb_bits()) {
            let ops = OpSet::builtins();
            let eta = to_valuation(&env);
            if let Some(v) = eval(&e, &eta, &ops, &W) {
                let mut bigger = eta.clone();
                bigger.bind("z", BitString::from_bits(extra));
                prop_assert!(eta.extended_by(&bigger));
                prop_assert_eq!(eval(&e, &bigger, &ops, &W), Some(v));
            }
        }
    }

    #[test]
    fn unbound_variable_is_undefined() {
        let ops = OpSet::builtins();
        assert_eq!(eval(&Expr::var("x"), &Valuation::new(), &ops, &W), None);
    }

    #[test]
    fn pointer_evaluates_to_base_plus_offset() {
        let ops = OpSet::builtins();
        let mut eta = Valuation::new();
        eta.bind_base(PtrBase::Heap(1), W.bs(5));
        let e = Expr::ptr(PtrBase::Heap(1), Expr::word(3, &W));
        assert_eq!(eval(&e, &eta, &ops, &W), Some(W.bs(8)));
    }
}
