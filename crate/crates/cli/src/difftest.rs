//! Differential testing of the concrete machine against extracted models.
//!
//! Random straight-line programs are built from small templates that keep a
//! rough picture of the stack, so most of them extract. Each program that
//! extracts is run concretely and as its model under the same scripts; when
//! the concrete run is not stuck, both must produce the same writes and
//! events.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cvmx_core::cvm::{print_cvm, CvmProgram, CvmPts, Dest, Instr, Source, DUMMY};
use cvmx_core::iml::ImlPts;
use cvmx_core::pts::{execute, AttackerScript, Input, Label, ScriptEntry, Selector, StopReason};
use cvmx_core::symexec::{extract_model, ExtractOptions};
use cvmx_core::{ops, BitString, OpSet, Valuation, WordParams};

use crate::config::{OpsProfile, STUBS};

pub const MAX_INSTRS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Word,
    /// Data of known length in bits.
    Data(usize),
}

/// Program plus the read lengths it requests, in order.
#[derive(Clone, Debug)]
pub struct Generated {
    pub program: CvmProgram,
    pub reads: Vec<usize>,
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    params: WordParams,
    instrs: Vec<Instr>,
    stack: Vec<Slot>,
    /// Pointer cells and the length of the data stored behind each.
    cells: Vec<(String, usize, usize)>,
    reads: Vec<usize>,
    names: usize,
}

const BINARY: [&str; 6] = [ops::ADD_B, ops::SUB_B, ops::EQ, ops::LE, ops::LT, ops::AND];

impl Gen<'_> {
    fn word(&self, n: usize) -> Instr {
        Instr::Const(self.params.bs(n as u64))
    }

    fn name(&mut self, prefix: &str) -> String {
        self.names += 1;
        format!("{prefix}{}", self.names)
    }

    fn room(&self, n: usize) -> bool {
        self.instrs.len() + n <= MAX_INSTRS
    }

    fn emit(&mut self, is: impl IntoIterator<Item = Instr>) {
        self.instrs.extend(is);
    }

    fn data_len(&mut self) -> usize {
        8 * self.rng.random_range(0..=3)
    }

    /// Tries one template; returns false when it does not fit.
    fn step(&mut self) -> bool {
        let top = self.stack.last().copied();
        match self.rng.random_range(0..14) {
            0 => {
                let len = self.data_len() / 8;
                let bytes: Vec<u8> = (0..len).map(|_| self.rng.random_range(b'a'..=b'z')).collect();
                self.emit([Instr::Const(BitString::from_bytes(&bytes))]);
                self.stack.push(Slot::Data(len * 8));
            }
            1 => {
                let n = self.rng.random_range(0..=3);
                self.emit([self.word(n)]);
                self.stack.push(Slot::Word);
            }
            2 | 3 if self.room(2) => {
                let len = if self.rng.random_bool(0.3) { self.params.width() } else { self.data_len() };
                let v = self.name("x");
                self.emit([self.word(len), Instr::In(v, Source::Read)]);
                self.reads.push(len);
                self.stack.push(if len == self.params.width() { Slot::Word } else { Slot::Data(len) });
            }
            4 if self.room(2) => {
                let len = self.data_len();
                let v = self.name("r");
                self.emit([self.word(len), Instr::In(v, Source::Rnd)]);
                self.stack.push(Slot::Data(len));
            }
            5 => {
                self.emit([Instr::Env(String::from("k"))]);
                self.stack.extend([Slot::Data(16), Slot::Word]);
            }
            6 | 7 if !self.stack.is_empty() => {
                let stubs: Vec<(&str, usize, usize)> = STUBS.iter().copied().filter(|s| s.1 <= self.stack.len()).collect();
                let (op, arity, out) = if self.rng.random_bool(0.5) && !stubs.is_empty() {
                    *stubs.choose(self.rng).expect("nonempty")
                } else if self.stack.len() >= 2 && self.stack[self.stack.len() - 2..].iter().all(|s| *s == Slot::Word) {
                    (*BINARY.choose(self.rng).expect("nonempty"), 2, self.params.width())
                } else if top == Some(Slot::Word) {
                    (ops::NOT, 1, self.params.width())
                } else {
                    return false;
                };
                self.emit([Instr::Apply(String::from(op))]);
                self.stack.truncate(self.stack.len() - arity);
                self.stack.push(if out == self.params.width() { Slot::Word } else { Slot::Data(out) });
                self.stack.push(Slot::Word);
            }
            8 if top.is_some() => {
                let dest = if self.rng.random_bool(0.5) { Dest::Write } else { Dest::Event };
                self.emit([Instr::Out(dest)]);
                self.stack.pop();
            }
            9 if top == Some(Slot::Word) && self.room(2) => {
                self.emit([Instr::Ref(String::from(DUMMY)), Instr::Store]);
                self.stack.pop();
            }
            10 if self.room(2) => {
                // a true condition, or the last word when there is one
                if top == Some(Slot::Word) && self.rng.random_bool(0.3) {
                    self.emit([Instr::Test]);
                    self.stack.pop();
                } else {
                    self.emit([self.word(1), Instr::Test]);
                }
            }
            11 if self.room(4) && self.cells.len() < 2 => {
                let size = 8 * self.rng.random_range(1..=6);
                let p = self.name("p");
                self.emit([self.word(size), Instr::Malloc, Instr::Ref(p.clone()), Instr::Store]);
                self.cells.push((p, size, 0));
            }
            12 if self.room(4) && !self.cells.is_empty() => {
                let Some(Slot::Data(len)) = top else { return false };
                let i = self.rng.random_range(0..self.cells.len());
                let p = self.cells[i].0.clone();
                self.emit([Instr::Ref(p), self.word(self.params.width()), Instr::Load, Instr::Store]);
                self.cells[i].2 = len;
                self.stack.pop();
            }
            13 if self.room(5) && !self.cells.is_empty() => {
                let i = self.rng.random_range(0..self.cells.len());
                let (p, _, stored) = self.cells[i].clone();
                let len = 8 * self.rng.random_range(0..=stored / 8);
                self.emit([Instr::Ref(p), self.word(self.params.width()), Instr::Load, self.word(len), Instr::Load]);
                self.stack.push(Slot::Data(len));
            }
            _ => return false,
        }
        true
    }
}

/// A random program of at most [`MAX_INSTRS`] instructions.
pub fn generate(rng: &mut ChaCha8Rng, params: WordParams) -> Generated {
    let target = rng.random_range(4..=MAX_INSTRS);
    let mut g = Gen { rng, params, instrs: Vec::new(), stack: Vec::new(), cells: Vec::new(), reads: Vec::new(), names: 0 };
    let mut tries = 0;
    while g.instrs.len() < target && tries < 200 {
        tries += 1;
        g.step();
    }
    Generated { program: CvmProgram::new(g.instrs), reads: g.reads }
}

/// Delivers a value for every read, usually of the requested length.
pub fn make_script(rng: &mut ChaCha8Rng, reads: &[usize], seed: u64) -> AttackerScript {
    let mut entries = vec![ScriptEntry::Auto(Selector::Unique)];
    for &len in reads {
        let len = if rng.random_bool(0.05) { len + 8 } else { len };
        let b = BitString::from_bits((0..len).map(|_| rng.random_bool(0.5)));
        entries.push(ScriptEntry::Deliver(Selector::Unique, Input::Read(b)));
        entries.push(ScriptEntry::Auto(Selector::Unique));
    }
    AttackerScript { entries, seed }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mismatch {
    pub program: String,
    pub model: String,
    pub script_seed: u64,
    pub concrete: Vec<String>,
    pub symbolic: Vec<String>,
    pub concrete_stop: String,
    pub symbolic_stop: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Summary {
    pub programs: usize,
    pub extracted: usize,
    pub runs: usize,
    /// Runs where the concrete machine got stuck; these are not compared.
    pub concrete_stuck: usize,
    pub compared: usize,
    /// Compared runs with at least one write or event.
    pub nonempty: usize,
    pub mismatches: Vec<Mismatch>,
}

#[derive(Clone, Copy, Debug)]
pub struct DiffConfig {
    pub programs: usize,
    pub scripts: usize,
    pub seed: u64,
    pub threads: usize,
    pub params: WordParams,
}

fn observable(actions: &[Label]) -> Vec<Label> {
    actions.iter().filter(|a| matches!(a, Label::Write(_) | Label::Event(_))).cloned().collect()
}

fn stuck(stop: &StopReason) -> bool {
    matches!(stop, StopReason::Stuck(_) | StopReason::Malformed(_))
}

/// Checks one program; returns its contribution to the summary.
pub fn check_program(gen: &Generated, ops: &OpSet, params: WordParams, scripts: usize, rng: &mut ChaCha8Rng) -> Summary {
    let mut s = Summary { programs: 1, ..Default::default() };
    let Ok(model) = extract_model(&gen.program, ops, params, ExtractOptions::default()) else {
        return s;
    };
    s.extracted = 1;
    let concrete = CvmPts::packed(gen.program.clone(), ops.clone(), params);
    let symbolic = ImlPts::new(model.process.clone(), ops.clone(), params);
    for _ in 0..scripts {
        let key = BitString::from_bits((0..16).map(|_| rng.random_bool(0.5)));
        let eta = Valuation::new().with("k", key);
        let seed = rng.random();
        let script = make_script(rng, &gen.reads, seed);
        let c = execute(&concrete, eta.clone(), &script, 1000);
        let m = execute(&symbolic, eta, &script, 1000);
        s.runs += 1;
        if stuck(&c.stop) {
            s.concrete_stuck += 1;
            continue;
        }
        s.compared += 1;
        let (co, so) = (observable(&c.actions), observable(&m.actions));
        if !co.is_empty() {
            s.nonempty += 1;
        }
        if co != so || stuck(&m.stop) {
            s.mismatches.push(Mismatch {
                program: print_cvm(&gen.program, &params),
                model: cvmx_core::iml::print_iml(&model.process, &cvmx_core::iml::ImlSyntax { params, k0: 64 }),
                script_seed: script.seed,
                concrete: co.iter().map(ToString::to_string).collect(),
                symbolic: so.iter().map(ToString::to_string).collect(),
                concrete_stop: c.stop.to_string(),
                symbolic_stop: m.stop.to_string(),
            });
        }
    }
    s
}

impl Summary {
    fn merge(&mut self, o: Summary) {
        self.programs += o.programs;
        self.extracted += o.extracted;
        self.runs += o.runs;
        self.concrete_stuck += o.concrete_stuck;
        self.compared += o.compared;
        self.nonempty += o.nonempty;
        self.mismatches.extend(o.mismatches);
    }
}

/// Runs the differential test. Program `i` depends only on the seed and `i`,
/// so results do not depend on the number of threads.
pub fn run(cfg: &DiffConfig) -> Summary {
    let ops = OpsProfile::Difftest.build(&cfg.params);
    let next = AtomicUsize::new(0);
    let threads = cfg.threads.max(1);
    let parts: Vec<Summary> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut total = Summary::default();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= cfg.programs {
                            break total;
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        let gen = generate(&mut rng, cfg.params);
                        total.merge(check_program(&gen, &ops, cfg.params, cfg.scripts, &mut rng));
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Summary::default();
    for p in parts {
        out.merge(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn programs_fit_the_size_limit() {
        let p = WordParams::new(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert!(generate(&mut rng, p).program.len() <= MAX_INSTRS);
        }
    }

    #[test]
    fn small_run_agrees() {
        let s = run(&DiffConfig { programs: 40, scripts: 4, seed: 3, threads: 2, params: WordParams::new(32) });
        assert_eq!(s.programs, 40);
        assert!(s.mismatches.is_empty(), "{:#?}", s.mismatches.first());
        assert!(s.compared > 0);
    }
}
