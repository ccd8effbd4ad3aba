//! Linear constraints over nonnegative integer atoms and a Fourier–Motzkin
//! refutation procedure.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

pub type Var = usize;

/// `sum(coeffs[v] * v) + constant`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Lin {
    pub coeffs: BTreeMap<Var, i128>,
    pub constant: i128,
}

impl Lin {
    pub fn var(v: Var) -> Lin {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(v, 1);
        Lin { coeffs, constant: 0 }
    }

    pub fn constant(c: i128) -> Lin {
        Lin { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn add_term(&mut self, v: Var, c: i128) -> Option<()> {
        let e = self.coeffs.entry(v).or_insert(0);
        *e = e.checked_add(c)?;
        if *e == 0 {
            self.coeffs.remove(&v);
        }
        Some(())
    }

    pub fn plus(&self, other: &Lin) -> Option<Lin> {
        self.plus_scaled(other, 1)
    }

    pub fn minus(&self, other: &Lin) -> Option<Lin> {
        self.plus_scaled(other, -1)
    }

    pub fn plus_scaled(&self, other: &Lin, k: i128) -> Option<Lin> {
        let mut out = self.clone();
        for (&v, &c) in &other.coeffs {
            out.add_term(v, c.checked_mul(k)?)?;
        }
        out.constant = out.constant.checked_add(other.constant.checked_mul(k)?)?;
        Some(out)
    }

    pub fn scaled(&self, k: i128) -> Option<Lin> {
        Lin::default().plus_scaled(self, k)
    }

    pub fn offset(&self, c: i128) -> Option<Lin> {
        let mut out = self.clone();
        out.constant = out.constant.checked_add(c)?;
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rel {
    /// `lin >= 0`
    Ge,
    /// `lin == 0`
    Eq,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cons {
    pub lin: Lin,
    pub rel: Rel,
}

impl Cons {
    /// `a >= b`
    pub fn ge(a: &Lin, b: &Lin) -> Option<Cons> {
        Some(Cons { lin: a.minus(b)?, rel: Rel::Ge })
    }

    /// `a > b`, i.e. `a >= b + 1` over the integers.
    pub fn gt(a: &Lin, b: &Lin) -> Option<Cons> {
        Some(Cons { lin: a.minus(b)?.offset(-1)?, rel: Rel::Ge })
    }

    pub fn eq(a: &Lin, b: &Lin) -> Option<Cons> {
        Some(Cons { lin: a.minus(b)?, rel: Rel::Eq })
    }
}

pub type Conj = Vec<Cons>;
pub type Dnf = Vec<Conj>;

/// Upper bound on live inequalities during elimination; beyond it the
/// procedure gives up (reports "not refuted").
const MAX_ROWS: usize = 4000;

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn floor_div(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

/// Normalises `lin >= 0` by the coefficient gcd, rounding the constant down
/// (sound for integer-valued atoms). `None` means trivially false.
fn tighten(mut lin: Lin) -> Option<Lin> {
    let g = lin.coeffs.values().fold(0, |g, &c| gcd(g, c));
    if g == 0 {
        return (lin.constant >= 0).then_some(lin);
    }
    if g > 1 {
        for c in lin.coeffs.values_mut() {
            *c /= g;
        }
        lin.constant = floor_div(lin.constant, g);
    }
    Some(lin)
}

/// Substitutes `v := by` in `lin`.
fn substitute(lin: &Lin, v: Var, by: &Lin) -> Option<Lin> {
    match lin.coeffs.get(&v) {
        None => Some(lin.clone()),
        Some(&c) => {
            let mut rest = lin.clone();
            rest.coeffs.remove(&v);
            rest.plus_scaled(by, c)
        }
    }
}

/// True when the conjunction has no solution over the nonnegative integers.
/// `false` means either satisfiable or beyond the procedure's budget.
pub fn refutes(conj: &[Cons]) -> bool {
    refute_inner(conj).unwrap_or(false)
}

fn refute_inner(conj: &[Cons]) -> Option<bool> {
    let mut vars = BTreeSet::new();
    for c in conj {
        vars.extend(c.lin.coeffs.keys().copied());
    }
    let mut eqs: Vec<Lin> = Vec::new();
    let mut ges: Vec<Lin> = vars.iter().map(|&v| Lin::var(v)).collect();
    for c in conj {
        match c.rel {
            Rel::Eq => eqs.push(c.lin.clone()),
            Rel::Ge => ges.push(c.lin.clone()),
        }
    }

    // Eliminate equalities through unit-coefficient variables.
    loop {
        let mut progress = false;
        let mut i = 0;
        while i < eqs.len() {
            let e = &eqs[i];
            if e.coeffs.is_empty() {
                if e.constant != 0 {
                    return Some(true);
                }
                eqs.swap_remove(i);
                continue;
            }
            let g = e.coeffs.values().fold(0, |g, &c| gcd(g, c));
            if e.constant % g != 0 {
                return Some(true);
            }
            if let Some((&v, &c)) = e.coeffs.iter().find(|(_, c)| c.abs() == 1) {
                // v = -(rest) / c
                let mut rest = e.clone();
                rest.coeffs.remove(&v);
                let by = rest.scaled(-c)?;
                eqs.swap_remove(i);
                for other in eqs.iter_mut() {
                    *other = substitute(other, v, &by)?;
                }
                for other in ges.iter_mut() {
                    *other = substitute(other, v, &by)?;
                }
                progress = true;
                continue;
            }
            i += 1;
        }
        if !progress {
            break;
        }
    }
    for e in eqs {
        ges.push(e.scaled(-1)?);
        ges.push(e);
    }

    let mut rows: BTreeSet<Lin> = BTreeSet::new();
    for g in ges {
        match tighten(g) {
            None => return Some(true),
            Some(l) if l.coeffs.is_empty() => {}
            Some(l) => {
                rows.insert(l);
            }
        }
    }

    loop {
        let mut live = BTreeSet::new();
        for r in &rows {
            live.extend(r.coeffs.keys().copied());
        }
        let Some(&pick) = live.iter().min_by_key(|&&v| {
            let pos = rows.iter().filter(|r| r.coeffs.get(&v).is_some_and(|c| *c > 0)).count();
            let neg = rows.iter().filter(|r| r.coeffs.get(&v).is_some_and(|c| *c < 0)).count();
            pos * neg
        }) else {
            return Some(false);
        };
        let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), BTreeSet::new());
        for r in rows {
            match r.coeffs.get(&pick).copied() {
                Some(c) if c > 0 => pos.push((c, r)),
                Some(c) => neg.push((-c, r)),
                None => {
                    rest.insert(r);
                }
            }
        }
        for (a, p) in &pos {
            for (b, n) in &neg {
                let combined = p.scaled(*b)?.plus_scaled(n, *a)?;
                match tighten(combined) {
                    None => return Some(true),
                    Some(l) if l.coeffs.is_empty() => {}
                    Some(l) => {
                        rest.insert(l);
                    }
                }
                if rest.len() > MAX_ROWS {
                    return None;
                }
            }
        }
        rows = rest;
    }
}

/// Renders `lin >= 0` / `lin = 0` using `name` for atoms.
pub fn render(c: &Cons, name: &dyn Fn(Var) -> String) -> String {
    let mut s = String::new();
    for (i, (&v, &k)) in c.lin.coeffs.iter().enumerate() {
        let sign = if k < 0 { "-" } else if i > 0 { "+" } else { "" };
        if i > 0 {
            s.push(' ');
        }
        s.push_str(sign);
        if i > 0 {
            s.push(' ');
        }
        if k.abs() != 1 {
            let _ = write!(s, "{}*", k.abs());
        }
        s.push_str(&name(v));
    }
    if c.lin.coeffs.is_empty() {
        let _ = write!(s, "{}", c.lin.constant);
    } else if c.lin.constant != 0 {
        let _ = write!(s, " {} {}", if c.lin.constant < 0 { "-" } else { "+" }, c.lin.constant.abs());
    }
    s.push_str(match c.rel {
        Rel::Ge => " >= 0",
        Rel::Eq => " = 0",
    });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(i: Var) -> Lin {
        Lin::var(i)
    }

    fn k(c: i128) -> Lin {
        Lin::constant(c)
    }

    #[test]
    fn simple_contradictions() {
        // x < x
        assert!(refutes(&[Cons::gt(&v(0), &v(0)).unwrap()]));
        // x <= 1000, x + 40 < x
        assert!(refutes(&[Cons::ge(&k(1000), &v(0)).unwrap(), Cons::gt(&v(0), &v(0).offset(40).unwrap()).unwrap()]));
        // x = y, y = z, x > z
        assert!(refutes(&[
            Cons::eq(&v(0), &v(1)).unwrap(),
            Cons::eq(&v(1), &v(2)).unwrap(),
            Cons::gt(&v(0), &v(2)).unwrap()
        ]));
        // 2x = 1 has no integer solution
        assert!(refutes(&[Cons::eq(&v(0).scaled(2).unwrap(), &k(1)).unwrap()]));
        // x < 0 against nonnegativity
        assert!(refutes(&[Cons::gt(&k(0), &v(0)).unwrap()]));
    }

    #[test]
    fn satisfiable_is_not_refuted() {
        assert!(!refutes(&[Cons::ge(&v(0), &v(1)).unwrap()]));
        assert!(!refutes(&[Cons::gt(&v(0), &v(1)).unwrap(), Cons::ge(&k(3), &v(0)).unwrap()]));
        assert!(!refutes(&[]));
    }

    #[test]
    fn brute_force_agreement_on_small_systems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..400 {
            let n = rng.random_range(1..4);
            let conj: Vec<Cons> = (0..n)
                .map(|_| {
                    let mut lin = Lin::constant(rng.random_range(-6..7));
                    for var in 0..3 {
                        lin.add_term(var, rng.random_range(-2..3)).unwrap();
                    }
                    let rel = if rng.random_bool(0.3) { Rel::Eq } else { Rel::Ge };
                    Cons { lin, rel }
                })
                .collect();
            let sat = (0..12i128).any(|a| {
                (0..12i128).any(|b| {
                    (0..12i128).any(|c| {
                        conj.iter().all(|cons| {
                            let x = [a, b, c];
                            let val = cons.lin.constant + cons.lin.coeffs.iter().map(|(&i, &k)| k * x[i]).sum::<i128>();
                            match cons.rel {
                                Rel::Ge => val >= 0,
                                Rel::Eq => val == 0,
                            }
                        })
                    })
                })
            });
            if refutes(&conj) {
                assert!(!sat, "unsound refutation of {conj:?}");
            }
        }
    }
}
