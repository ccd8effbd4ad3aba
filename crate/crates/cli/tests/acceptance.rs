//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvmx::difftest::{self, DiffConfig, MAX_INSTRS};
use cvmx_core::eval::{eval, holds};
use cvmx_core::iml::{parse_iml, parse_iml_file, print_iml, ImlSyntax};
use cvmx_core::pitrans::{check_c2_c4, check_c3, translate, PiModel, TransOptions};
use cvmx_core::pts::{check_trace, colon_tagging, TraceProperty};
use cvmx_core::solver::{enumerate_consistent, sample_consistent, Domain, FactSet, Solver};
use cvmx_core::syntax::{parse_expr, print_expr};
use cvmx_core::{ops, simplify, BitString, Expr, OpSet, WordParams};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn cvmx(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cvmx")).args(args).output().expect("cvmx runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(t < limit, || format!("{what} took {t:.2?}, limit {limit:?}"))
}

const P32: WordParams = WordParams::new(32);
const P4: WordParams = WordParams::new(4);

fn golden_extraction() -> Outcome {
    let path = fixture("mac_check.cvm");
    let start = Instant::now();
    let (code, out, err) = cvmx(&["symex", "--drop-arith-guards", path.to_str().unwrap()]);
    let t = start.elapsed();
    ensure(code == 0, || format!("exit {code}: {err}"))?;
    let golden = read_fixture("mac_check.iml");
    ensure(out == golden, || format!("output {out:?} differs from golden {golden:?}"))?;
    ensure(golden == "in(l); in(x1); in(x2); if x2 = mac(k, x1) then event(acc(x1)); 0\n", || String::from("golden file drifted"))?;
    let syn = ImlSyntax { params: P32, k0: 64 };
    let back = parse_iml(&out, &syn).map_err(|e| e.to_string())?;
    ensure(print_iml(&back, &syn) == out.trim_end(), || String::from("model does not print back identically"))?;
    within(t, Duration::from_secs(1), "symex")?;
    Ok(format!("byte-exact in {t:.2?}"))
}

fn trace_replay() -> Outcome {
    let path = fixture("mac_check.cvm");
    let (code, out, err) = cvmx(&["symex", "--trace", "--drop-arith-guards", path.to_str().unwrap()]);
    ensure(code == 0, || format!("exit {code}: {err}"))?;
    ensure(out == read_fixture("mac_check.trace.tsv"), || format!("table differs from golden:\n{out}"))?;

    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    ensure(rows.len() == 9, || format!("{} rows", rows.len()))?;
    let cell = |i: usize, col: usize| -> Vec<String> {
        rows[i].get(col).map_or(Vec::new(), |c| c.split("; ").filter(|s| !s.is_empty()).map(String::from).collect())
    };
    let norm = |s: &str| print_expr(&parse_expr(s, &P32).unwrap(), &P32);
    let heap2 = |i: usize| cell(i, 2).iter().find_map(|m| m.strip_prefix("heap 2 => ").map(norm));

    let expected_heap = [(3, "eps"), (4, "x1"), (5, "x1 @ mac(k, x1)"), (6, "x1 @ mac(k, x1) @ x2")];
    for (row, want) in expected_heap {
        ensure(heap2(row) == Some(norm(want)), || format!("row {}: heap 2 is {:?}, want {want}", row + 1, heap2(row)))?;
    }
    ensure(cell(0, 2).contains(&String::from("stack key => ptr(heap 1, i0)")), || String::from("row 1 memory"))?;
    ensure(cell(0, 2).contains(&String::from("heap 1 => k")), || String::from("row 1 memory"))?;
    ensure(cell(0, 2).contains(&String::from("stack keylen => len(k)")), || String::from("row 1 memory"))?;
    ensure(cell(1, 2) == ["stack len => l"], || String::from("row 2 memory"))?;
    ensure(cell(3, 2).contains(&String::from("stack buf => ptr(heap 2, i0)")), || String::from("row 4 memory"))?;

    let facts: Vec<Vec<String>> = (0..9).map(|i| cell(i, 3).iter().map(|f| norm(f)).collect()).collect();
    let want: Vec<Vec<String>> = [vec![], vec!["len(l) = iN"], vec!["not(l > i1000)"], vec![], vec!["len(x1) = l"], vec![], vec!["len(x2) = i20"], vec![], vec![]]
        .into_iter()
        .map(|v| v.into_iter().map(norm).collect())
        .collect();
    ensure(facts == want, || format!("facts column {facts:?}"))?;
    let iml: Vec<String> = (0..9).map(|i| cell(i, 4).join("; ")).collect();
    ensure(iml[1] == "in(l)" && iml[4] == "in(x1)" && iml[6] == "in(x2)", || format!("iml column {iml:?}"))?;
    ensure(iml[7] == "if x2 = mac(k, x1) then" && iml[8] == "event(acc(x1))", || format!("iml column {iml:?}"))?;
    Ok(String::from("9 rows match"))
}

fn simulation() -> Outcome {
    let params = P32;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let n = difftest::generate(&mut rng, params).program.len();
        ensure(n <= MAX_INSTRS, || format!("generated program with {n} instructions"))?;
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let s = difftest::run(&DiffConfig { programs: 500, scripts: 10, seed: 2024, threads, params });
    let t = start.elapsed();
    ensure(s.programs >= 500 && s.runs >= 10 * s.extracted, || format!("{s:?}"))?;
    ensure(s.mismatches.is_empty(), || format!("{} mismatches, first {:#?}", s.mismatches.len(), s.mismatches[0]))?;
    ensure(s.nonempty > 0, || String::from("no compared run produced any action"))?;
    within(t, Duration::from_secs(60), "differential run")?;
    Ok(format!(
        "{} programs, {} extracted, {} runs compared ({} with actions), 0 mismatches in {t:.2?}",
        s.programs, s.extracted, s.compared, s.nonempty
    ))
}

/// Small random expressions over `x` and `y`.
struct Terms<'r> {
    rng: &'r mut ChaCha8Rng,
    params: WordParams,
}

impl Terms<'_> {
    fn term(&mut self, depth: usize) -> Expr {
        let r = if depth == 0 { self.rng.random_range(0..4) } else { self.rng.random_range(0..10) };
        match r {
            0 => Expr::var("x"),
            1 => Expr::var("y"),
            2 => Expr::word(self.rng.random_range(0..16), &self.params),
            3 => Expr::len_of(Expr::var(if self.rng.random() { "x" } else { "y" })),
            4 | 5 => Expr::concat(self.term(depth - 1), self.term(depth - 1)),
            6 | 7 => Expr::range(self.term(depth - 1), self.term(depth - 1), self.term(depth - 1)),
            8 => Expr::len_of(self.term(depth - 1)),
            _ => {
                let op = [ops::ADD_B, ops::SUB_B, ops::ADD_N, ops::SUB_N][self.rng.random_range(0..4)];
                Expr::op2(op, self.term(depth - 1), self.term(depth - 1))
            }
        }
    }

    /// A slice of a concatenation, with offsets and lengths built from the pieces' lengths.
    fn slice(&mut self) -> Expr {
        let pieces: Vec<Expr> = (0..self.rng.random_range(2..4)).map(|_| self.term(0)).collect();
        let whole = pieces.iter().cloned().reduce(Expr::concat).unwrap();
        let measure = |g: &mut Self| {
            let p = pieces[g.rng.random_range(0..pieces.len())].clone();
            match g.rng.random_range(0..4) {
                0 => Expr::word(g.rng.random_range(0..4), &g.params),
                1 => Expr::op2(ops::ADD_B, Expr::len_of(p), Expr::word(g.rng.random_range(0..3), &g.params)),
                _ => Expr::len_of(p),
            }
        };
        let (off, len) = (measure(self), measure(self));
        Expr::range(whole, off, len)
    }

    fn len_fact(&mut self) -> Expr {
        let v = Expr::var(if self.rng.random() { "x" } else { "y" });
        Expr::eq(Expr::len_of(v), Expr::word(self.rng.random_range(0..5), &self.params))
    }

    fn fact(&mut self) -> Expr {
        let cmp = [ops::EQ, ops::LE, ops::LT, ops::GE][self.rng.random_range(0..4)];
        let d = self.rng.random_range(0..3);
        let atom = Expr::op2(cmp, self.term(d), self.term(d));
        match self.rng.random_range(0..6) {
            0 => Expr::not(atom),
            1 => Expr::op2(ops::OR, atom, self.fact()),
            _ => atom,
        }
    }
}

fn simplifier_soundness() -> Outcome {
    let ops = OpSet::builtins();
    let solver = Solver::new(&ops, P4);
    let domain = Domain::new(["x", "y"].map(String::from), (0..=6).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(5);
    let (mut triples, mut defined, mut changed) = (0, 0, 0);
    let start = Instant::now();
    while triples < 10_000 {
        let mut g = Terms { rng: &mut rng, params: P4 };
        let nfacts = g.rng.random_range(0..3);
        let focused = g.rng.random_bool(0.5);
        let sigma = FactSet::from_facts((0..nfacts).map(|_| if focused { g.len_fact() } else { g.fact() }).collect());
        let depth = g.rng.random_range(1..4);
        let e = if focused { g.slice() } else { g.term(depth) };
        let Some(eta) = sample_consistent(&sigma, &domain, &ops, &P4, &mut sample_rng, 200) else { continue };
        triples += 1;
        let s = simplify::simplify(&solver, &sigma, &e);
        if s != e {
            changed += 1;
        }
        if let Some(v) = eval(&e, &eta, &ops, &P4) {
            defined += 1;
            let w = eval(&s, &eta, &ops, &P4);
            ensure(w.as_ref() == Some(&v), || {
                format!("sigma {:?}, eta {eta:?}: {} = {v:?} but simplified {} = {w:?}", sigma.facts(), print_expr(&e, &P4), print_expr(&s, &P4))
            })?;
        }
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(30), "simplifier check")?;
    Ok(format!("{triples} triples, {defined} defined, {changed} rewritten, 0 failures in {t:.2?}"))
}

fn solver_soundness() -> Outcome {
    let ops = OpSet::builtins();
    let solver = Solver::new(&ops, P4);
    let domain = Domain::new(["x", "y"].map(String::from), (0..=4).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut proved = 0;
    for _ in 0..10_000 {
        let mut g = Terms { rng: &mut rng, params: P4 };
        let nfacts = g.rng.random_range(0..3);
        let sigma = FactSet::from_facts((0..nfacts).map(|_| g.fact()).collect());
        let goal = g.fact();
        if !solver.entails(&sigma, &goal).is_proved() {
            continue;
        }
        proved += 1;
        for eta in enumerate_consistent(&sigma, &domain, &ops, &P4, usize::MAX) {
            ensure(holds(&goal, &eta, &ops, &P4), || format!("unsound: {:?} |- {} fails at {eta:?}", sigma.facts(), print_expr(&goal, &P4)))?;
        }
    }
    let ops = OpSet::standard(&P32);
    let sigma = FactSet::from_facts(vec![parse_expr("not(l > i1000)", &P32).unwrap()]);
    let goal = parse_expr("l <= l +N i40", &P32).unwrap();
    ensure(Solver::new(&ops, P32).entails(&sigma, &goal).is_proved(), || String::from("length obligation of the mac example not proved"))?;
    Ok(format!("10000 queries, {proved} proved, all confirmed; mac obligation proved"))
}

fn nsl_model() -> PiModel {
    let syn = ImlSyntax { params: P32, k0: 64 };
    let file = parse_iml_file(&read_fixture("nsl.iml"), &syn).unwrap();
    translate(&file, &OpSet::standard(&P32), &syn, &TransOptions::default()).unwrap()
}

fn def_text(m: &PiModel, name: &str) -> String {
    m.defs.iter().find(|(n, _)| n == name).map(|(_, d)| d.render()).unwrap_or_default()
}

fn random_bits(rng: &mut ChaCha8Rng, max: usize) -> BitString {
    let n = rng.random_range(0..=max);
    BitString::from_bits((0..n).map(|_| rng.random::<bool>()))
}

fn translation() -> Outcome {
    let start = Instant::now();
    let m = nsl_model();
    let a = def_text(&m, "A");
    let b = def_text(&m, "B");
    ensure(a == "new~ nA;\nlet m1 = conc1(nA, pkA) in\nlet e1 = encrypt(pkX, m1) in\nout(e1);\n0\n", || format!("A is\n{a}"))?;
    ensure(b == "in(e1);\nlet m1 = decrypt(skB, e1) in\nlet x1 = parse2(m1) in\nif x1 = pkX then\n0\n", || format!("B is\n{b}"))?;
    ensure(m.report.tupling_ok() && m.report.warnings.is_empty(), || format!("{:?}", m.report))?;

    let ops = OpSet::standard(&P32);
    let opts = TransOptions::default();
    let (enc, parser) = (&m.encoders[0], &m.parsers[0]);
    ensure(check_c3(enc, parser, &ops, P32, &opts) == Some(2), || String::from("parser is not the second projection"))?;
    let (guard, len_proved) = check_c2_c4(enc, parser, &ops, P32, &opts)?;
    let guard = guard.substitute(&parser.var, &Expr::var("m1"));
    let Expr::Op(and, conj) = &guard else { return Err(format!("guard {guard:?}")) };
    let tag = parse_expr("m1{i0, i32} = \"msg1\"", &P32).unwrap();
    ensure(and == ops::AND && conj[0] == tag && len_proved, || format!("guard {}", print_expr(&guard, &P32)))?;

    let o = m.extend_ops(&ops);
    let (conc, parse) = (o.get("conc1").unwrap(), o.get("parse2").unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let (b1, b2) = (random_bits(&mut rng, 128), random_bits(&mut rng, 128));
        let c = conc.apply(&[b1.clone(), b2.clone()], &P32).ok_or("conc1 undefined")?;
        ensure(parse.apply(&[c], &P32) == Some(b2.clone()), || format!("parse2(conc1({b1:?}, {b2:?})) wrong"))?;
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(5), "translation checks")?;
    Ok(format!("conc1/parse2 shape, index 2, tag guard {}, 1000 pairs in {t:.2?}", print_expr(&conj[0], &P32)))
}

fn key_safety() -> Outcome {
    let syn = ImlSyntax { params: P32, k0: 64 };
    let ops = OpSet::standard(&P32);
    let check = |src: &str| {
        let file = parse_iml_file(src, &syn).unwrap();
        translate(&file, &ops, &syn, &TransOptions::default()).unwrap().report
    };
    let src = read_fixture("keysafe.iml");
    let good = check(&src);
    ensure(good.key_safety.is_none() && good.all_ok(), || format!("{good:?}"))?;
    let leaky = src.replace("out(ekR);", "out(ekR);\n  out(dkR);");
    let v = check(&leaky).key_safety.ok_or("leaked decryption key accepted")?;
    ensure(v.def.as_deref() == Some("R") && v.at == "out(dkR)", || format!("{v:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("leaky.iml");
    std::fs::write(&path, &leaky).unwrap();
    let (code, out, _) = cvmx(&["check", path.to_str().unwrap()]);
    ensure(code == 1 && out.contains("out(dkR)"), || format!("check exit {code}:\n{out}"))?;
    let (code, _, _) = cvmx(&["check", fixture("keysafe.iml").to_str().unwrap()]);
    ensure(code == 0, || format!("check on the key-safe fixture exit {code}"))?;
    Ok(format!("fixture passes; leak reported in R at step {} ({})", v.step, v.at))
}

/// Whether every prefix ending in `accept:v` contains an earlier `request:v`.
fn prec_oracle(trace: &[(&str, &str)]) -> bool {
    (1..=trace.len()).all(|n| {
        let prefix = &trace[..n];
        let (tag, arg) = prefix[n - 1];
        tag != "accept" || prefix[..n - 1].contains(&("request", arg))
    })
}

fn trace_properties() -> Outcome {
    let prop = TraceProperty::parse("prec(request, accept)").ok_or("property does not parse")?;
    let alphabets: [[(&str, &str); 3]; 3] = [
        [("request", "a"), ("accept", "a"), ("accept", "b")],
        [("request", "a"), ("request", "b"), ("accept", "a")],
        [("request", "a"), ("accept", "a"), ("other", "a")],
    ];
    let mut checked = 0;
    for alphabet in alphabets {
        let encode = |(tag, arg): (&str, &str)| BitString::from_ascii(&format!("{tag}:{arg}"));
        for len in 0..=5u32 {
            for code in 0..3usize.pow(len) {
                let trace: Vec<(&str, &str)> = (0..len).map(|i| alphabet[code / 3usize.pow(i) % 3]).collect();
                let bits: Vec<BitString> = trace.iter().map(|&e| encode(e)).collect();
                let got = check_trace(&bits, &prop, &colon_tagging);
                ensure(got == prec_oracle(&trace), || format!("{trace:?}: checker {got}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} traces of length up to 5 over 3 alphabets agree"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("golden extraction", golden_extraction),
        ("trace table replay", trace_replay),
        ("simulation", simulation),
        ("simplifier soundness", simplifier_soundness),
        ("solver soundness", solver_soundness),
        ("translation fixture", translation),
        ("key safety", key_safety),
        ("trace property checking", trace_properties),
    ];
    // panics are reported in the criterion line
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
