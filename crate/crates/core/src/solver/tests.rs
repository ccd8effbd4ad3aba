use super::*;
use crate::syntax::{parse_expr, parse_facts};
use proptest::prelude::*;

const P: WordParams = WordParams::new(32);

fn check(ops: &OpSet, params: WordParams, facts: &str, goal: &str) -> Verdict {
    let sigma = FactSet::from_facts(parse_facts(facts, &params).unwrap());
    Solver::new(ops, params).entails(&sigma, &parse_expr(goal, &params).unwrap())
}

#[test]
fn bounded_length_allows_growth() {
    let ops = OpSet::standard(&P);
    assert_eq!(check(&ops, P, "not(l > i1000); len(l) = iN", "l <= l +N i40"), Verdict::Proved);
    assert_eq!(check(&ops, P, "not(l > i1000); len(l) = iN", "l <= l +b i40"), Verdict::Proved);
    // without the bound, wrap-around is possible
    assert_eq!(check(&ops, P, "len(l) = iN", "l <= l +b i40"), Verdict::Unknown);
    let sigma = FactSet::from_facts(parse_facts("len(l) = iN", &P).unwrap());
    let goal = parse_expr("l <= l +b i40", &P).unwrap();
    assert!(Solver::new(&ops, P).with_no_overflow(true).entails(&sigma, &goal).is_proved());
}

#[test]
fn reflexivity() {
    let ops = OpSet::standard(&P);
    assert_eq!(check(&ops, P, "", "x = x"), Verdict::Proved);
    assert_eq!(check(&ops, P, "", "mac(k, x @ y) = mac(k, x @ y)"), Verdict::Proved);
}

#[test]
fn range_needs_enough_input() {
    let ops = OpSet::standard(&P);
    assert_eq!(check(&ops, P, "i96 <= len(m1)", "len(m1{i32, i32}) = i32"), Verdict::Proved);
    assert_eq!(check(&ops, P, "i60 <= len(m1)", "len(m1{i32, i32}) = i32"), Verdict::Unknown);
    assert_eq!(check(&ops, P, "", "len(x{i0, i8}) = i8"), Verdict::Unknown);
}

#[test]
fn equalities_propagate_through_functions() {
    let ops = OpSet::standard(&P);
    assert_eq!(check(&ops, P, "x = y; len(x) = i8; len(y) = i8", "mac(k, x) = mac(k, y)"), Verdict::Proved);
    assert_eq!(check(&ops, P, "x = y", "mac(k, x) = mac(k, y)"), Verdict::Unknown);
    assert_eq!(check(&ops, P, "len(x) = i8", "len(mac(k, x) @ x) = i28"), Verdict::Proved);
}

#[test]
fn plain_facts() {
    let ops = OpSet::standard(&P);
    assert_eq!(check(&ops, P, "", "i1"), Verdict::Proved);
    assert_eq!(check(&ops, P, "", "x = y"), Verdict::Unknown);
    assert_eq!(check(&ops, P, "a < b; b < c", "a < c"), Verdict::Proved);
    assert_eq!(check(&ops, P, "a < b; b < c", "c < a"), Verdict::Unknown);
    assert_eq!(check(&ops, P, "x2 = mac(k, x1)", "x2 = mac(k, x1)"), Verdict::Proved);
    assert_eq!(check(&ops, P, "and(a < b, b < c)", "not(c <= a)"), Verdict::Proved);
    assert_eq!(check(&ops, P, "or(a < b, a = b)", "a <= b"), Verdict::Proved);
    assert_eq!(check(&ops, P, "b <= a", "(a -N b) +N b = a"), Verdict::Proved);
    assert_eq!(check(&ops, P, "", "(a -N b) +N b = a"), Verdict::Unknown);
}

#[test]
fn debug_outputs() {
    let ops = OpSet::standard(&P);
    let sigma = FactSet::from_facts(parse_facts("not(l > i1000)", &P).unwrap());
    let goal = parse_expr("l <= l +N i40", &P).unwrap();
    let s = Solver::new(&ops, P);
    let dump = s.dump(&sigma, &goal);
    assert!(dump.contains("goal 0:"), "{dump}");
    assert!(dump.contains("val(l +N i40)"), "{dump}");
    let smt = s.to_smtlib(&sigma, &goal);
    assert!(smt.starts_with("(set-logic QF_LIA)") && smt.trim_end().ends_with("(check-sat)"));
    assert!(len_axioms(&ops).iter().any(|a| a.render() == "forall x1, x2: len(mac(x1, x2)) = i20"));
}

const W: WordParams = WordParams::new(4);

fn arb_term() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(0u64..10).prop_map(|n| Expr::word(n, &W)), Just(Expr::var("x")), Just(Expr::var("y")),];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::concat(a, b)),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(a, b, c)| Expr::range(a, b, c)),
            inner.clone().prop_map(Expr::len_of),
            (prop_oneof![Just(ops::ADD_B), Just(ops::SUB_B), Just(ops::ADD_N), Just(ops::SUB_N)], inner.clone(), inner)
                .prop_map(|(n, a, b)| Expr::op2(n, a, b)),
        ]
    })
}

fn arb_fact() -> impl Strategy<Value = Expr> {
    let cmp = prop_oneof![Just(ops::EQ), Just(ops::LE), Just(ops::LT), Just(ops::GE)];
    let atom = (cmp, arb_term(), arb_term()).prop_map(|(n, a, b)| Expr::op2(n, a, b));
    atom.prop_recursive(1, 3, 2, |inner| {
        prop_oneof![inner.clone().prop_map(Expr::not), (inner.clone(), inner).prop_map(|(a, b)| Expr::op2(ops::OR, a, b))]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    // Every consistent valuation of x and y with at most 4 bits satisfies a proved goal.
    #[test]
    fn proved_goals_hold_in_small_models(facts in prop::collection::vec(arb_fact(), 0..3), goal in arb_fact()) {
        let ops = OpSet::builtins();
        let sigma = FactSet::from_facts(facts);
        if Solver::new(&ops, W).entails(&sigma, &goal).is_proved() {
            let domain = Domain::new(["x", "y"].map(String::from), (0..5).collect());
            for eta in enumerate_consistent(&sigma, &domain, &ops, &W, usize::MAX) {
                prop_assert!(crate::eval::holds(&goal, &eta, &ops, &W), "counterexample {:?} for {:?} |- {:?}", eta, sigma, goal);
            }
        }
    }

    #[test]
    fn adding_facts_keeps_proofs(facts in prop::collection::vec(arb_fact(), 0..3), extra in arb_fact(), goal in arb_fact()) {
        let ops = OpSet::builtins();
        let solver = Solver::new(&ops, W);
        let mut sigma = FactSet::from_facts(facts);
        if solver.entails(&sigma, &goal).is_proved() {
            sigma.add(extra);
            prop_assert!(solver.entails(&sigma, &goal).is_proved());
        }
    }
}

#[test]
fn sampler_finds_models() {
    use rand::SeedableRng;
    let ops = OpSet::builtins();
    let domain = Domain::new([String::from("x")], (0..5).collect());
    let sigma = FactSet::from_facts(parse_facts("len(x) = i3; x +b i1 = i0", &W).unwrap());
    assert!(enumerate_consistent(&sigma, &domain, &ops, &W, 10).is_empty());
    let sigma = FactSet::from_facts(parse_facts("len(x) = i4; x +b i1 = i0", &W).unwrap());
    let all = enumerate_consistent(&sigma, &domain, &ops, &W, 10);
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].get("x"), Some(&W.bs(15)));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let found = sample_consistent(&sigma, &domain, &ops, &W, &mut rng, 5000).unwrap();
    assert_eq!(found.get("x"), Some(&W.bs(15)));
    let never = FactSet::from_facts(parse_facts("x < x", &W).unwrap());
    assert!(sample_consistent(&never, &domain, &ops, &W, &mut rng, 200).is_none());
}

