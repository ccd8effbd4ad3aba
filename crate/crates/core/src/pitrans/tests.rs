use super::*;
use crate::iml::{parse_iml, parse_iml_file, print_iml, ImlPts};
use crate::ops::split_event_tag;
use crate::pts::{execute, parse_script, Execution};
use crate::syntax::parse_expr;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use std::format;

const P: WordParams = WordParams::new(32);
const SYN: ImlSyntax = ImlSyntax { params: P, k0: 64 };
const NSL: &str = include_str!("../../../../fixtures/nsl.iml");
const NSL_PV: &str = include_str!("../../../../fixtures/nsl.pv");
const KEY_SAFE: &str = include_str!("../../../../fixtures/keysafe.iml");

fn ops() -> OpSet {
    OpSet::standard(&P)
}

fn e(s: &str) -> Expr {
    parse_expr(s, &P).unwrap()
}

fn model_with(src: &str, syn: &ImlSyntax) -> PiModel {
    let o = OpSet::standard(&syn.params);
    translate(&parse_iml_file(src, syn).unwrap(), &o, syn, &TransOptions::default()).unwrap()
}

fn model(src: &str) -> PiModel {
    model_with(src, &SYN)
}

fn def<'m>(m: &'m PiModel, name: &str) -> &'m PiProcess {
    &m.defs.iter().find(|(n, _)| n == name).unwrap().1
}

fn random_bits(rng: &mut impl Rng, max: usize) -> BitString {
    let n = rng.random_range(0..=max);
    BitString::from_bits((0..n).map(|_| rng.random::<bool>()))
}

#[test]
fn nsl_translates_to_tupling_operations() {
    let m = model(NSL);
    assert_eq!(
        def(&m, "A").render(),
        "new~ nA;\nlet m1 = conc1(nA, pkA) in\nlet e1 = encrypt(pkX, m1) in\nout(e1);\n0\n"
    );
    assert_eq!(
        def(&m, "B").render(),
        "in(e1);\nlet m1 = decrypt(skB, e1) in\nlet x1 = parse2(m1) in\nif x1 = pkX then\n0\n"
    );
    assert_eq!(m.main.as_ref().unwrap().render(), "(\n  !A\n) | (\n  !B\n)\n");
    assert_eq!(m.encoders.len(), 1);
    assert_eq!(m.encoders[0].body, e("\"msg1\" @ len(x1) @ x1 @ x2"));
    assert_eq!(m.report.dropped_ifs.len(), 2);
    assert!(m.report.tupling_ok(), "{:?}", m.report);
    assert!(m.report.warnings.is_empty());

    let o = ops();
    let opts = TransOptions::default();
    assert_eq!(check_c3(&m.encoders[0], &m.parsers[0], &o, P, &opts), Some(2));
    let matched = m.parsers[0].matched.as_ref().unwrap();
    assert_eq!((matched.encoder.as_str(), matched.index), ("conc1", 2));
    let guard = matched.guard.substitute("x", &Expr::var("m1"));
    let Expr::Op(and, conj) = &guard else { panic!("{guard:?}") };
    assert_eq!(and, ops::AND);
    assert_eq!(conj[0], e("m1{i0, i32} = \"msg1\""));
    assert_eq!(conj[1], e("m1{i32, iN} +N i32 +N iN <= len(m1)"));
}

#[test]
fn tupling_ops_run_concretely() {
    let m = model(NSL);
    let o = m.extend_ops(&ops());
    let (conc, parse) = (o.get("conc1").unwrap(), o.get("parse2").unwrap());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (b1, b2) = (random_bits(&mut rng, 96), random_bits(&mut rng, 96));
        let c = conc.apply(&[b1.clone(), b2.clone()], &P).unwrap();
        let expect = BitString::from_ascii("msg1").concat(&P.bs_usize(b1.len())).concat(&b1).concat(&b2);
        assert_eq!(c, expect);
        assert_eq!(parse.apply(&[c], &P), Some(b2));
    }
    assert_eq!(parse.apply(&[BitString::from_ascii("msg2xxxxxxxx")], &P), None);
}

/// Whether `b` has the form "msg1" @ bs(|b1|) @ b1 @ b2.
fn in_conc1_range(b: &BitString, conc: &OpDef) -> bool {
    let Some(l) = b.sub(32, 32).and_then(|l| l.val_usize()) else { return false };
    let Some(b1) = b.sub(64, l) else { return false };
    let b2 = b.sub(64 + l, b.len() - 64 - l).unwrap();
    conc.apply(&[b1, b2], &P).as_ref() == Some(b)
}

#[test]
fn guard_accepts_exactly_the_encoder_range() {
    let m = model(NSL);
    let o = m.extend_ops(&ops());
    let conc = o.get("conc1").unwrap();
    let guard = &m.parsers[0].matched.as_ref().unwrap().guard;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let (mut members, mut others) = (0, 0);
    for i in 0..2000 {
        let member = conc.apply(&[random_bits(&mut rng, 64), random_bits(&mut rng, 64)], &P).unwrap();
        let b = match i % 4 {
            0 => member,
            1 => {
                let mut b = member;
                let k = rng.random_range(0..b.len());
                b.set(k, !b.get(k));
                b
            }
            2 => member.sub(0, rng.random_range(0..member.len())).unwrap(),
            _ => random_bits(&mut rng, 160),
        };
        let accepted = eval(guard, &Valuation::new().with("x", b.clone()), &o, &P) == Some(P.one());
        let oracle = in_conc1_range(&b, conc);
        assert_eq!(accepted, oracle, "{b:?}");
        if oracle { members += 1 } else { others += 1 }
    }
    assert!(members > 500 && others > 500);
}

#[test]
fn classifies_conditionals() {
    assert_eq!(classify_if(&e("x1 = pkX")), IfKind::Cryptographic);
    assert_eq!(classify_if(&e("mac(k, x1) = x2")), IfKind::Cryptographic);
    assert_eq!(classify_if(&e("m1{i4, iN} +b iN +b i4 <= len(m1)")), IfKind::Auxiliary);
    assert_eq!(classify_if(&e("m1{i0, i4} = \"msg1\"")), IfKind::Auxiliary);
}

#[test]
fn normalisation_hoists_to_single_classes() {
    let p = parse_iml("in(a); in(b); out(mac(a, \"t\" @ b) @ a); if a = mac(b, b @ a) then event(accept(a{i0, i8})); 0", &SYN).unwrap();
    let n = normalize(&p, &SYN).unwrap();
    assert_eq!(
        print_iml(&n, &SYN),
        "in(a); in(b); let t1 = \"t\" @ b in let t2 = mac(a, t1) in let t3 = t2 @ a in out(t3); \
         let t4 = b @ a in let t5 = mac(b, t4) in if a = t5 then event(accept(a{i0, i8})); 0"
    );
    let mut lets = Vec::new();
    n.walk(&mut |q| {
        if let Process::Let(_, body, ..) = q {
            lets.push(body.clone());
        }
    });
    assert!(lets.iter().all(|b| classify_let(b).is_some()));
    assert_eq!(print_iml(&normalize(&parse_iml("in(x); out(x); 0", &SYN).unwrap(), &SYN).unwrap(), &SYN), "in(x); out(x); 0");
}

#[test]
fn unclassifiable_lets_fail() {
    let p = parse_iml("in(a); in(b); let c = a{i0, i8} @ b{i0, i8} @ mac(a, b){i0, i8} in out(c); 0", &SYN).unwrap();
    assert!(normalize(&p, &SYN).is_ok());
    let p = parse_iml("in(a); in(b); let c = a{i0, len(b)} in out(c); 0", &SYN).unwrap();
    assert!(normalize(&p, &SYN).is_err());
    let p = parse_iml("in(a); if a = \"x\" then 0 else 0", &SYN).unwrap();
    assert!(normalize(&p, &SYN).is_err());
}

#[test]
fn without_bitstrings_nothing_is_extracted() {
    let m = model("in(x); let y = hash(x) in if y = x then out(y); 0");
    assert!(m.encoders.is_empty() && m.parsers.is_empty());
    assert_eq!(m.main.unwrap().render(), "in(x);\nlet y = hash(x) in\nif y = x then\nout(y);\n0\n");
}

#[test]
fn c1_needs_a_distinguishing_tag() {
    let m = model("in(a); in(b); let m1 = \"msg1\" @ len(a) @ a @ b in let m2 = \"msg2\" @ b in out(m1); out(m2); 0");
    assert_eq!(m.encoders.len(), 2);
    assert_eq!(m.report.c1, None);
    let single = model("in(a); let m1 = a @ \"t\" in out(m1); 0");
    assert_eq!(single.report.c1, None);
}

#[test]
fn c1_collision_has_a_witness() {
    // tiny words so the range intersection can be searched exhaustively
    let syn = ImlSyntax { params: WordParams::new(4), k0: 8 };
    let p = syn.params;
    let m = model_with("in(a); in(b); let m1 = \"a\" @ a in let m2 = \"a\" @ len(a) @ a @ b in out(m1); out(m2); 0", &syn);
    assert!(m.report.c1.is_some());
    let o = m.extend_ops(&OpSet::standard(&p));
    let all = |max: usize| -> Vec<BitString> {
        (0..=max).flat_map(|n| (0..1u32 << n).map(move |v| BitString::from_bits((0..n).map(|i| v >> i & 1 == 1)))).collect()
    };
    let image1: BTreeSet<BitString> = all(8).into_iter().map(|u| o.get("conc1").unwrap().apply(&[u], &p).unwrap()).collect();
    let small = all(2);
    let witness = small
        .iter()
        .flat_map(|v| small.iter().map(move |w| (v, w)))
        .find_map(|(v, w)| o.get("conc2").unwrap().apply(&[v.clone(), w.clone()], &p).filter(|y| image1.contains(y)));
    assert!(witness.is_some());
}

#[test]
fn c3_finds_the_projection() {
    let o = ops();
    let opts = TransOptions::default();
    let enc = Encoder { name: String::from("conc1"), params: alloc::vec![String::from("x1")], body: e("x1") };
    let parser = Parser { name: String::from("parse2"), var: String::from("x"), body: e("x"), facts: Vec::new(), matched: None };
    assert_eq!(check_c3(&enc, &parser, &o, P, &opts), Some(1));
    let parser = Parser { body: e("x{i0, i8}"), ..parser };
    assert_eq!(check_c3(&enc, &parser, &o, P, &opts), None);
}

#[test]
fn parser_without_conditions_has_no_guard() {
    let m = model(NSL);
    let parser = Parser { facts: Vec::new(), ..m.parsers[0].clone() };
    let err = check_c2_c4(&m.encoders[0], &parser, &ops(), P, &TransOptions::default()).unwrap_err();
    assert!(err.contains("field"), "{err}");
}

#[test]
fn key_safety() {
    let m = model(KEY_SAFE);
    assert_eq!(m.report.key_safety, None);
    assert!(m.report.all_ok(), "{:?}", m.report);
    assert_eq!(check_key_safe(&PiProcess::Nil, &BTreeSet::new(), None), Ok(()));

    let leaky = KEY_SAFE.replace("out(ekR);", "out(ekR); out(dkR);");
    let v = model(&leaky).report.key_safety.unwrap();
    assert_eq!(v.def.as_deref(), Some("R"));
    assert_eq!(v.at, "out(dkR)");
    assert_eq!(v.step, 5);

    let reused = KEY_SAFE.replace("let c1 = E(isek(k), m, s) in", "let c1 = E(isek(k), m, s) in let c2 = E(isek(k), m, s) in");
    assert!(model(&reused).report.key_safety.is_some());
    let v = model(NSL).report.key_safety.unwrap();
    assert!(v.reason.contains("encrypt"), "{v}");
}

#[test]
fn emission_is_stable() {
    let m = model(NSL);
    let text = emit_proverif(&m);
    assert_eq!(text, emit_proverif(&model(NSL)));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/nsl.pv"), &text).unwrap();
    }
    assert_eq!(text, NSL_PV);
    assert!(text.contains("reduc forall x1: bitstring, x2: bitstring; parse2(conc1(x1, x2)) = x2.\n"));
    let empty = emit_proverif(&model("0"));
    assert_eq!(empty, format!("{PRELUDE}\nprocess\n  0\n"));
}

fn run(p: Arc<Process>, o: OpSet, eta: &Valuation, script: &str) -> Execution<Arc<Process>> {
    execute(&ImlPts::new(p, o, P), eta.clone(), &parse_script(script, &P).unwrap(), 200)
}

/// Writes, then event tags, of an execution.
fn observed(ex: &Execution<Arc<Process>>, pi: bool) -> (Vec<BitString>, Vec<String>) {
    let tags = ex
        .events
        .iter()
        .map(|b| if pi { String::from_utf8(b.as_bytes().to_vec()).unwrap() } else { split_event_tag(b).unwrap().0 })
        .collect();
    (ex.outputs.clone(), tags)
}

fn hex(b: &BitString) -> String {
    format!("{b:?}")
}

#[test]
fn translation_preserves_traces() {
    let src = "T = in(y); if y{i0, i32} = \"req1\" then let z = y{i32, len(y) -b i32} in event(accept(z)); \
               let w = \"req1\" @ z in out(w); 0\n";
    let file = format!("{src}{NSL}");
    let m = model(&file);
    assert!(m.report.tupling_ok(), "{:?}", m.report);
    let parsed = parse_iml_file(&file, &SYN).unwrap();
    let pi_ops = m.extend_ops(&ops());
    let pi_defs = m.iml_defs(&SYN);
    let eta = Valuation::new().with("pkA", BitString::from_ascii("A")).with("pkX", BitString::from_ascii("X")).with("skB", BitString::from_ascii("b"));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let mut fired = 0;
    for i in 0..200 {
        let body = random_bits(&mut rng, 40);
        let y = if i % 2 == 0 { BitString::from_ascii("req1").concat(&body) } else { body };
        let script = format!("seed {i}\ndeliver * read {}\nauto *\n", hex(&y));
        for name in ["T", "A"] {
            let script = if name == "A" { format!("seed {i}\nauto *\n") } else { script.clone() };
            let src_run = run(parsed.get(name).unwrap().clone(), ops(), &eta, &script);
            let pi_run = run(pi_defs[name].clone(), pi_ops.clone(), &eta, &script);
            assert_eq!(observed(&src_run, false), observed(&pi_run, true), "{name} {script}");
            fired += src_run.events.len();
        }
    }
    assert!(fired > 50);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalisation_preserves_traces(a in prop::collection::vec(any::<u8>(), 0..6), b in prop::collection::vec(any::<u8>(), 0..6), seed in any::<u64>()) {
        let p = parse_iml("in(a); in(b); out(mac(a, \"t\" @ b) @ a{i0, i8}); if b = mac(a, a @ b) then event(accept(a)); out(hash(b @ a) @ len(b)); 0", &SYN).unwrap();
        let n = normalize(&p, &SYN).unwrap();
        let script = format!("seed {seed}\ndeliver * read {}\ndeliver * read {}\nauto *\n", hex(&BitString::from_bytes(&a)), hex(&BitString::from_bytes(&b)));
        let (x, y) = (run(p, ops(), &Valuation::new(), &script), run(n, ops(), &Valuation::new(), &script));
        prop_assert_eq!(x.actions, y.actions);
        prop_assert_eq!(x.events, y.events);
    }
}
