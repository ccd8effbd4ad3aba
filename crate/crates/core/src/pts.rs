//! Protocol transition systems and their execution against an attacker.
//!
//! A PTS step takes an executing process `(η, s)` to a multiset of successor
//! processes under a label. Protocol states key executing processes by their
//! observation history; the attacker addresses a process through its history
//! and either supplies the label (read and control steps) or lets the process
//! pick it (random, write and event steps).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::bits::{parse_literal, BitString, WordParams};
use crate::eval::Valuation;
use crate::ops::split_event_tag;
use crate::syntax::ParseError;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Read(BitString),
    Ctr(BitString),
    Rnd(BitString),
    Write(BitString),
    Event(BitString),
}

impl Label {
    /// Read, control and write labels are visible in process histories.
    pub fn is_observation(&self) -> bool {
        matches!(self, Label::Read(_) | Label::Ctr(_) | Label::Write(_))
    }

    pub fn payload(&self) -> &BitString {
        match self {
            Label::Read(b) | Label::Ctr(b) | Label::Rnd(b) | Label::Write(b) | Label::Event(b) => b,
        }
    }

    fn keyword(&self) -> &'static str {
        match self {
            Label::Read(_) => "read",
            Label::Ctr(_) => "ctr",
            Label::Rnd(_) => "rnd",
            Label::Write(_) => "write",
            Label::Event(_) => "event",
        }
    }
}

fn short(b: &BitString) -> String {
    if b.is_empty() {
        String::from("eps")
    } else {
        alloc::format!("{b:?}")
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.keyword(), short(self.payload()))
    }
}

/// Classification of an executing process by its outgoing transitions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Kind {
    Reading,
    Control,
    /// Random payloads of the given length.
    Randomising(usize),
    Writing,
    Event,
}

/// Label chosen by the attacker for a reading or control process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    Read(BitString),
    Ctr(BitString),
}

impl Input {
    pub fn into_label(self) -> Label {
        match self {
            Input::Read(b) => Label::Read(b),
            Input::Ctr(b) => Label::Ctr(b),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transition<S> {
    pub label: Label,
    pub next: Vec<(Valuation, S)>,
}

impl<S> Transition<S> {
    pub fn single(label: Label, eta: Valuation, s: S) -> Self {
        Transition { label, next: alloc::vec![(eta, s)] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepError {
    /// The command does not fit the process (wrong label kind, missing payload).
    Malformed(String),
    /// No transition: a rule premise failed.
    Stuck { rule: String, detail: String },
    /// The process has finished and has no transitions.
    Finished,
}

impl StepError {
    pub fn stuck(rule: &str, detail: impl Into<String>) -> Self {
        StepError::Stuck { rule: String::from(rule), detail: detail.into() }
    }
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::Malformed(m) => write!(f, "malformed command: {m}"),
            StepError::Stuck { rule, detail } => write!(f, "stuck in {rule}: {detail}"),
            StepError::Finished => f.write_str("process has finished"),
        }
    }
}

pub trait Pts {
    type State: Clone + fmt::Debug;

    fn initial(&self) -> Self::State;

    /// `None` for processes without transitions.
    fn kind(&self, eta: &Valuation, s: &Self::State) -> Option<Kind>;

    /// The only control label this process can take, when it does not depend on
    /// an attacker choice.
    fn suggest(&self, _eta: &Valuation, _s: &Self::State) -> Option<Input> {
        None
    }

    fn step(
        &self,
        eta: &Valuation,
        s: &Self::State,
        input: Option<&Input>,
        rng: &mut dyn RngCore,
    ) -> Result<Transition<Self::State>, StepError>;
}

/// Payload of the control label that reveals which branch a conditional took.
pub fn branch(taken: bool) -> BitString {
    BitString::from_bits([taken])
}

/// Largest random payload the executor will draw, in bits.
pub const MAX_RANDOM_BITS: usize = 1 << 24;

/// Uniformly random bitstring of `len` bits; `None` above [`MAX_RANDOM_BITS`].
pub fn random_bits(rng: &mut dyn RngCore, len: usize) -> Option<BitString> {
    if len > MAX_RANDOM_BITS {
        return None;
    }
    let mut bytes = alloc::vec![0u8; len.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    BitString::from_bytes(&bytes).sub(0, len)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Obs {
    Index(usize),
    Label(Label),
}

/// Sequence of observations identifying one executing process.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct History(pub Vec<Obs>);

impl History {
    pub fn root() -> Self {
        History(Vec::new())
    }

    pub fn extend(&self, label: &Label, index: usize) -> History {
        let mut v = self.0.clone();
        if label.is_observation() {
            v.push(Obs::Label(label.clone()));
        }
        v.push(Obs::Index(index));
        History(v)
    }
}

/// `.` for the root, otherwise observations joined by `/`, e.g. `ctr:eps/1/read:x"01"/1`.
impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(".");
        }
        for (i, o) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            match o {
                Obs::Index(n) => write!(f, "{n}")?,
                Obs::Label(l) => write!(f, "{l}")?,
            }
        }
        Ok(())
    }
}

/// Executing processes keyed by history.
#[derive(Clone, Debug)]
pub struct ProtocolState<S> {
    pub procs: BTreeMap<History, (Valuation, S)>,
}

impl<S> ProtocolState<S> {
    pub fn new(eta: Valuation, s: S) -> Self {
        let mut procs = BTreeMap::new();
        procs.insert(History::root(), (eta, s));
        ProtocolState { procs }
    }

    pub fn histories(&self) -> impl Iterator<Item = &History> {
        self.procs.keys()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selector {
    /// The single live process.
    Unique,
    /// The single live process whose history text ends with the suffix.
    Suffix(String),
    Exact(String),
}

impl Selector {
    pub fn parse(s: &str) -> Selector {
        match s {
            "*" => Selector::Unique,
            _ => match s.strip_prefix('*') {
                Some(rest) => Selector::Suffix(String::from(rest)),
                None => Selector::Exact(String::from(s)),
            },
        }
    }

    pub fn resolve<S>(&self, state: &ProtocolState<S>) -> Result<History, String> {
        let hits: Vec<&History> = state
            .procs
            .keys()
            .filter(|h| match self {
                Selector::Unique => true,
                Selector::Suffix(suf) => h.to_string().ends_with(suf.as_str()),
                Selector::Exact(t) => h.to_string() == *t,
            })
            .collect();
        match hits.as_slice() {
            [h] => Ok((*h).clone()),
            [] => Err(alloc::format!("selector {self:?} matches no live process")),
            _ => Err(alloc::format!("selector {self:?} matches {} processes", hits.len())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptEntry {
    Deliver(Selector, Input),
    /// Command with empty payload, for random, write and event steps.
    Step(Selector),
    /// Steps the process for as long as its next label needs no attacker choice.
    Auto(Selector),
    /// The most recent write must carry this payload.
    Expect(BitString),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttackerScript {
    pub entries: Vec<ScriptEntry>,
    pub seed: u64,
}

/// Parses the line-oriented script format:
///
/// ```text
/// # comment
/// seed 7
/// deliver * read x"0102"
/// deliver */1 ctr i1
/// step *
/// auto *
/// expect "ok"
/// ```
pub fn parse_script(text: &str, params: &WordParams) -> Result<AttackerScript, ParseError> {
    let mut script = AttackerScript::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| ParseError { line: n + 1, col: raw.len() - raw.trim_start().len() + 1, msg };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (cmd, rest) = split_word(line);
        let lit = |s: &str| parse_literal(s.trim(), params).map_err(|e| err(e.to_string()));
        match cmd {
            "seed" => script.seed = rest.trim().parse().map_err(|_| err(alloc::format!("bad seed {rest:?}")))?,
            "deliver" => {
                let (sel, rest) = split_word(rest);
                let (kind, payload) = split_word(rest);
                let b = lit(payload)?;
                let input = match kind {
                    "read" => Input::Read(b),
                    "ctr" => Input::Ctr(b),
                    _ => return Err(err(alloc::format!("expected read or ctr, found {kind:?}"))),
                };
                script.entries.push(ScriptEntry::Deliver(Selector::parse(sel), input));
            }
            "step" | "auto" if !rest.trim().is_empty() => {
                let sel = Selector::parse(rest.trim());
                script.entries.push(if cmd == "step" { ScriptEntry::Step(sel) } else { ScriptEntry::Auto(sel) });
            }
            "expect" => script.entries.push(ScriptEntry::Expect(lit(rest)?)),
            _ => return Err(err(alloc::format!("unknown script command {line:?}"))),
        }
    }
    Ok(script)
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    ScriptEnd,
    Bound,
    Malformed(String),
    Stuck(String),
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::ScriptEnd => f.write_str("script end"),
            StopReason::Bound => f.write_str("step bound reached"),
            StopReason::Malformed(m) => write!(f, "malformed: {m}"),
            StopReason::Stuck(m) => write!(f, "stuck: {m}"),
        }
    }
}

/// Outcome of running a script.
#[derive(Clone, Debug)]
pub struct Execution<S> {
    pub events: Vec<BitString>,
    pub outputs: Vec<BitString>,
    /// Write, event and random labels in order.
    pub actions: Vec<Label>,
    pub state: ProtocolState<S>,
    pub stop: StopReason,
    pub steps: usize,
}

impl<S> Execution<S> {
    /// One `event <hex>` line per event; non-byte-aligned payloads get a `/bits` suffix.
    pub fn trace_text(&self) -> String {
        render_trace(&self.events)
    }

    /// Write and event actions only.
    pub fn observable(&self) -> Vec<Label> {
        self.actions.iter().filter(|a| !matches!(a, Label::Rnd(_))).cloned().collect()
    }
}

pub fn render_trace(events: &[BitString]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str("event ");
        s.push_str(&e.to_hex());
        if !e.is_byte_aligned() {
            s.push_str(&alloc::format!("/{}", e.len()));
        }
        s.push('\n');
    }
    s
}

/// Protocol execution driven command by command.
pub struct Runner<'t, T: Pts> {
    pts: &'t T,
    pub state: ProtocolState<T::State>,
    pub events: Vec<BitString>,
    pub outputs: Vec<BitString>,
    pub actions: Vec<Label>,
    pub steps: usize,
    rng: ChaCha8Rng,
}

/// Upper bound on consecutive steps taken by one `auto` entry.
const AUTO_LIMIT: usize = 100_000;

impl<'t, T: Pts> Runner<'t, T> {
    pub fn new(pts: &'t T, eta: Valuation, seed: u64) -> Self {
        Runner {
            pts,
            state: ProtocolState::new(eta, pts.initial()),
            events: Vec::new(),
            outputs: Vec::new(),
            actions: Vec::new(),
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kind(&self, h: &History) -> Option<Kind> {
        let (eta, s) = self.state.procs.get(h)?;
        self.pts.kind(eta, s)
    }

    pub fn suggest(&self, h: &History) -> Option<Input> {
        let (eta, s) = self.state.procs.get(h)?;
        self.pts.suggest(eta, s)
    }

    pub fn get(&self, h: &History) -> Option<&(Valuation, T::State)> {
        self.state.procs.get(h)
    }

    /// Executes the command `(h, input)`; returns the successor histories.
    pub fn command(&mut self, h: &History, input: Option<&Input>) -> Result<Vec<History>, StopReason> {
        let Some((eta, s)) = self.state.procs.get(h) else {
            return Err(StopReason::Malformed(alloc::format!("no live process at {h}")));
        };
        let t = match self.pts.step(eta, s, input, &mut self.rng) {
            Ok(t) => t,
            Err(StepError::Malformed(m)) => return Err(StopReason::Malformed(m)),
            Err(e) => return Err(StopReason::Stuck(alloc::format!("{e} (at {h})"))),
        };
        let attacker_label = matches!(t.label, Label::Read(_) | Label::Ctr(_));
        if attacker_label != input.is_some() {
            return Err(StopReason::Malformed(alloc::format!("label {} does not match command at {h}", t.label)));
        }
        self.steps += 1;
        self.state.procs.remove(h);
        let mut out = Vec::new();
        for (i, (eta, s)) in t.next.into_iter().enumerate() {
            let nh = h.extend(&t.label, i + 1);
            debug_assert!(!self.state.procs.contains_key(&nh), "history collision");
            self.state.procs.insert(nh.clone(), (eta, s));
            out.push(nh);
        }
        match &t.label {
            Label::Write(b) => {
                self.outputs.push(b.clone());
                self.actions.push(t.label.clone());
            }
            Label::Event(b) => {
                self.events.push(b.clone());
                self.actions.push(t.label.clone());
            }
            Label::Rnd(_) => self.actions.push(t.label.clone()),
            _ => {}
        }
        Ok(out)
    }

    /// Steps `h` while its next label needs no attacker choice. Stops at a
    /// process waiting for the attacker, or right after a step with several
    /// successors; returns the live histories reached.
    pub fn auto(&mut self, h: &History, bound: usize) -> Result<Vec<History>, StopReason> {
        let mut h = h.clone();
        for _ in 0..AUTO_LIMIT {
            if self.steps >= bound {
                return Err(StopReason::Bound);
            }
            let input = match self.kind(&h) {
                None | Some(Kind::Reading) => return Ok(alloc::vec![h]),
                Some(Kind::Control) => match self.suggest(&h) {
                    Some(i) => Some(i),
                    None => return Ok(alloc::vec![h]),
                },
                Some(_) => None,
            };
            let mut next = self.command(&h, input.as_ref())?;
            if next.len() != 1 {
                return Ok(next);
            }
            h = next.remove(0);
        }
        Ok(alloc::vec![h])
    }

    pub fn run_script(&mut self, script: &AttackerScript, bound: usize) -> StopReason {
        for entry in &script.entries {
            if self.steps >= bound {
                return StopReason::Bound;
            }
            let result = match entry {
                ScriptEntry::Deliver(sel, input) => sel
                    .resolve(&self.state)
                    .map_err(StopReason::Malformed)
                    .and_then(|h| self.command(&h, Some(input)).map(|_| ())),
                ScriptEntry::Step(sel) => sel
                    .resolve(&self.state)
                    .map_err(StopReason::Malformed)
                    .and_then(|h| self.command(&h, None).map(|_| ())),
                ScriptEntry::Auto(sel) => sel
                    .resolve(&self.state)
                    .map_err(StopReason::Malformed)
                    .and_then(|h| self.auto(&h, bound).map(|_| ())),
                ScriptEntry::Expect(b) => match self.outputs.last() {
                    Some(o) if o == b => Ok(()),
                    other => Err(StopReason::Malformed(alloc::format!("expected write {b:?}, last write {other:?}"))),
                },
            };
            if let Err(stop) = result {
                return stop;
            }
        }
        StopReason::ScriptEnd
    }

    pub fn finish(self, stop: StopReason) -> Execution<T::State> {
        Execution { events: self.events, outputs: self.outputs, actions: self.actions, state: self.state, stop, steps: self.steps }
    }
}

/// Runs `script` against `pts` from `{ε ↦ (eta, s_I)}` for at most `bound` steps.
pub fn execute<T: Pts>(pts: &T, eta: Valuation, script: &AttackerScript, bound: usize) -> Execution<T::State> {
    let mut r = Runner::new(pts, eta, script.seed);
    let stop = r.run_script(script, bound);
    r.finish(stop)
}

pub type TracePredicate = Arc<dyn Fn(&[BitString]) -> bool + Send + Sync>;

/// A prefix-closed set of event sequences.
#[derive(Clone)]
pub enum TraceProperty {
    /// Every `body(x)` event is preceded by a `head(x)` event.
    Prec { head: String, body: String },
    /// Caller-supplied membership test; it must describe a prefix-closed set.
    Predicate(TracePredicate),
}

impl fmt::Debug for TraceProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceProperty::Prec { head, body } => write!(f, "prec({head}, {body})"),
            TraceProperty::Predicate(_) => f.write_str("predicate"),
        }
    }
}

impl TraceProperty {
    pub fn prec(head: &str, body: &str) -> Self {
        TraceProperty::Prec { head: String::from(head), body: String::from(body) }
    }

    /// Parses `prec(head, body)`.
    pub fn parse(s: &str) -> Option<Self> {
        let inner = s.trim().strip_prefix("prec(")?.strip_suffix(')')?;
        let (a, b) = inner.split_once(',')?;
        let ok = |t: &str| !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        let (a, b) = (a.trim(), b.trim());
        (ok(a) && ok(b)).then(|| TraceProperty::prec(a, b))
    }
}

/// Splits an event payload into tag and argument.
pub type Tagging<'a> = &'a dyn Fn(&BitString) -> Option<(String, BitString)>;

/// The default tagging: payloads of the form `tag:x`.
pub fn colon_tagging(b: &BitString) -> Option<(String, BitString)> {
    split_event_tag(b)
}

pub fn check_trace(trace: &[BitString], property: &TraceProperty, tagging: Tagging<'_>) -> bool {
    match property {
        TraceProperty::Prec { head, body } => {
            let mut seen: Vec<BitString> = Vec::new();
            for e in trace {
                if let Some((tag, x)) = tagging(e) {
                    if tag == *head {
                        seen.push(x);
                    } else if tag == *body && !seen.contains(&x) {
                        return false;
                    }
                }
            }
            true
        }
        TraceProperty::Predicate(p) => p(trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: WordParams = WordParams::new(32);

    /// `!(in(x); out(x))` as a hand-written PTS.
    struct Echo;

    #[derive(Clone, Debug, PartialEq)]
    enum EchoState {
        Repl,
        Waiting,
        Echo,
        Done,
    }

    impl Pts for Echo {
        type State = EchoState;

        fn initial(&self) -> EchoState {
            EchoState::Repl
        }

        fn kind(&self, _: &Valuation, s: &EchoState) -> Option<Kind> {
            match s {
                EchoState::Repl => Some(Kind::Control),
                EchoState::Waiting => Some(Kind::Reading),
                EchoState::Echo => Some(Kind::Writing),
                EchoState::Done => None,
            }
        }

        fn step(&self, eta: &Valuation, s: &EchoState, input: Option<&Input>, _: &mut dyn RngCore) -> Result<Transition<EchoState>, StepError> {
            match (s, input) {
                (EchoState::Repl, Some(Input::Ctr(b))) if b.is_empty() => Ok(Transition {
                    label: Label::Ctr(BitString::empty()),
                    next: alloc::vec![(eta.clone(), EchoState::Waiting), (eta.clone(), EchoState::Repl)],
                }),
                (EchoState::Waiting, Some(Input::Read(b))) => {
                    let mut eta = eta.clone();
                    eta.set("x", b.clone());
                    Ok(Transition::single(Label::Read(b.clone()), eta, EchoState::Echo))
                }
                (EchoState::Echo, None) => {
                    Ok(Transition::single(Label::Write(eta.get("x").cloned().unwrap()), eta.clone(), EchoState::Done))
                }
                (EchoState::Done, _) => Err(StepError::Finished),
                _ => Err(StepError::Malformed(String::from("unexpected command"))),
            }
        }
    }

    #[test]
    fn replication_successors_are_indexed() {
        let script = parse_script(
            "deliver . ctr eps\n\
             deliver ctr:eps/2 ctr eps\n\
             deliver ctr:eps/1 read \"hi\"\n\
             step *read:x\"6869\"/1\n",
            &P,
        )
        .unwrap();
        let ex = execute(&Echo, Valuation::new(), &script, 100);
        assert_eq!(ex.stop, StopReason::ScriptEnd);
        assert_eq!(ex.outputs, alloc::vec![BitString::from_ascii("hi")]);
        let live: Vec<String> = ex.state.histories().map(|h| h.to_string()).collect();
        assert_eq!(
            live,
            ["ctr:eps/1/read:x\"6869\"/1/write:x\"6869\"/1", "ctr:eps/2/ctr:eps/1", "ctr:eps/2/ctr:eps/2"]
        );
    }

    #[test]
    fn empty_script_and_malformed_commands() {
        let ex = execute(&Echo, Valuation::new(), &AttackerScript::default(), 10);
        assert_eq!(ex.stop, StopReason::ScriptEnd);
        assert!(ex.events.is_empty());
        assert_eq!(ex.state.procs.len(), 1);
        let script = parse_script("deliver * read x\"00\"", &P).unwrap();
        assert!(matches!(execute(&Echo, Valuation::new(), &script, 10).stop, StopReason::Malformed(_)));
        let script = parse_script("deliver * ctr eps\ndeliver * ctr eps", &P).unwrap();
        assert!(matches!(execute(&Echo, Valuation::new(), &script, 10).stop, StopReason::Malformed(_)));
        assert!(parse_script("fly away", &P).is_err());
        assert_eq!(parse_script("seed 9\n# hi", &P).unwrap().seed, 9);
    }

    #[test]
    fn prec_examples() {
        let ev = |t: &str, x: &str| BitString::from_ascii(&alloc::format!("{t}:{x}"));
        let prop = TraceProperty::parse("prec(request, accept)").unwrap();
        assert!(check_trace(&[], &prop, &colon_tagging));
        assert!(check_trace(&[ev("request", "b"), ev("accept", "b")], &prop, &colon_tagging));
        assert!(!check_trace(&[ev("accept", "b")], &prop, &colon_tagging));
        assert!(!check_trace(&[ev("request", "a"), ev("accept", "b")], &prop, &colon_tagging));
        assert!(TraceProperty::parse("prec(a b, c)").is_none());
    }

    #[test]
    fn trace_rendering() {
        let t = render_trace(&[BitString::from_ascii("a"), BitString::from_bits([true, false, true])]);
        assert_eq!(t, "event 61\nevent 05/3\n");
    }
}
