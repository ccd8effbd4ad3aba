//! The command-line verbs. Each returns an exit status; artifacts go to `out`,
//! diagnostics to `err`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cvmx_core::bits::parse_literal;
use cvmx_core::cvm::{parse_cvm, CvmProgram, CvmPts};
use cvmx_core::iml::{check_holes, parse_iml_file, print_iml, Embedding, ImlFile, ImlPts};
use cvmx_core::pitrans::{emit_proverif, translate, CheckReport, PiModel, TransOptions};
use cvmx_core::pts::{check_trace, colon_tagging, execute, parse_script, AttackerScript, Execution, Pts, StopReason, TraceProperty};
use cvmx_core::solver::{FactSet, Solver};
use cvmx_core::symexec::{labels_to_process, render_trace, trace_rows, ExtractOptions, SymExec, SymMemory};
use cvmx_core::syntax::{parse_expr, print_expr};
use cvmx_core::{simplify, Valuation, WordParams};

use crate::config::{Format, OpsProfile, Overrides, RunConfig};
use crate::difftest::{self, DiffConfig};
use crate::error::{read_file, write_file, CliError, EXIT_FAILED, EXIT_VIOLATED};

pub const SCHEMA: &str = "cvmx/1";

#[derive(Debug, Parser)]
#[command(name = "cvmx", version, about = "Model extraction and checking for CVM protocol code")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine word width in bits.
    #[arg(long, global = true)]
    pub width: Option<u32>,
    /// Nonce length in bits.
    #[arg(long, global = true)]
    pub k0: Option<usize>,
    /// Operation profile: builtins, standard or difftest.
    #[arg(long, global = true)]
    pub ops: Option<OpsProfile>,
    /// Attacker script for `run`.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    /// Step bound for `run`.
    #[arg(long, global = true)]
    pub bound: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// text or json.
    #[arg(long, global = true)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a CVM program or IML process against a script and print its events.
    Run {
        file: PathBuf,
        /// CVM program filling the next hole of an IML context.
        #[arg(long)]
        embed: Vec<PathBuf>,
        /// Environment entry, `name=literal`.
        #[arg(long)]
        env: Vec<String>,
        /// Trace property to check, `prec(head,body)`.
        #[arg(long)]
        property: Option<String>,
    },
    /// Extract an IML model from a CVM program.
    Symex {
        file: PathBuf,
        /// Print the per-statement symbolic execution table instead of the model.
        #[arg(long)]
        trace: bool,
        /// Leave arithmetic-only conditions out of the model.
        #[arg(long)]
        drop_arith_guards: bool,
    },
    /// Simplify an expression under a set of facts.
    Simplify {
        expr: String,
        #[arg(long = "fact")]
        facts: Vec<String>,
        /// Treat machine arithmetic as exact.
        #[arg(long)]
        no_overflow: bool,
    },
    /// Translate an IML file to a ProVerif model.
    Translate {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write the check results as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Emit the model even when checks fail.
        #[arg(long)]
        force: bool,
        /// Fail when a length-consistency guard cannot be proved.
        #[arg(long)]
        strict_len: bool,
    },
    /// Report the tupling and key-safety checks for an IML file.
    Check {
        file: PathBuf,
        #[arg(long)]
        strict_len: bool,
    },
    /// Compare concrete and extracted runs of random programs.
    Difftest {
        #[arg(long, default_value_t = 500)]
        programs: usize,
        #[arg(long, default_value_t = 10)]
        scripts: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            width: self.width,
            k0: self.k0,
            ops: self.ops,
            script: self.script.clone(),
            bound: self.bound,
            seed: self.seed,
            format: self.format,
        }
    }
}

pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

impl Io<'_> {
    fn emit(&mut self, text: &str) -> Result<(), CliError> {
        self.out.write_all(text.as_bytes()).map_err(|source| CliError::Write { path: PathBuf::from("<stdout>"), source })
    }

    fn json(&mut self, mut v: Value) -> Result<(), CliError> {
        if let Value::Object(m) = &mut v {
            m.insert(String::from("schema"), json!(SCHEMA));
        }
        let text = serde_json::to_string_pretty(&v).expect("json values serialize");
        self.emit(&text)?;
        self.emit("\n")
    }

    fn note(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.err, "{msg}");
    }
}

/// Parses `args` (program name first) and runs the verb.
pub fn main_with<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILED } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = io.err.write_all(text.as_bytes());
            } else {
                let _ = io.out.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(&cli, io) {
        Ok(code) => code,
        Err(e) => {
            io.note(format_args!("error: {e}"));
            EXIT_FAILED
        }
    }
}

fn dispatch(cli: &Cli, io: &mut Io<'_>) -> Result<i32, CliError> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides())?;
    match &cli.command {
        Command::Run { file, embed, env, property } => cmd_run(&cfg, file, embed, env, property.as_deref(), io),
        Command::Symex { file, trace, drop_arith_guards } => cmd_symex(&cfg, file, *trace, *drop_arith_guards, io),
        Command::Simplify { expr, facts, no_overflow } => cmd_simplify(&cfg, expr, facts, *no_overflow, io),
        Command::Translate { file, output, report, force, strict_len } => {
            cmd_translate(&cfg, file, output.as_deref(), report.as_deref(), *force, *strict_len, io)
        }
        Command::Check { file, strict_len } => cmd_check(&cfg, file, *strict_len, io),
        Command::Difftest { programs, scripts, threads } => {
            let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            cmd_difftest(&cfg, *programs, *scripts, threads, io)
        }
    }
}

fn load_cvm(path: &Path, cfg: &RunConfig) -> Result<CvmProgram, CliError> {
    parse_cvm(&read_file(path)?, &cfg.opset(), &cfg.params()).map_err(|e| CliError::parse(path, e))
}

fn load_iml(path: &Path, cfg: &RunConfig) -> Result<ImlFile, CliError> {
    parse_iml_file(&read_file(path)?, &cfg.syntax()).map_err(|e| CliError::parse(path, e))
}

fn is_cvm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "cvm")
}

fn parse_env(entries: &[String], params: &WordParams) -> Result<Valuation, CliError> {
    let mut eta = Valuation::new();
    for entry in entries {
        let (name, lit) = entry.split_once('=').ok_or_else(|| CliError::Usage(format!("--env {entry:?}: expected name=literal")))?;
        let b = parse_literal(lit.trim(), params).map_err(|e| CliError::Usage(format!("--env {name}: {e}")))?;
        eta.set(name.trim(), b);
    }
    Ok(eta)
}

fn is_failure(stop: &StopReason) -> bool {
    matches!(stop, StopReason::Stuck(_) | StopReason::Malformed(_))
}

/// Stuck messages end with the process history, which grows with the run.
fn elide_history(msg: &str) -> String {
    const KEEP: usize = 120;
    match msg.rfind(" (at ") {
        Some(i) if msg.len() - i > KEEP + 8 => {
            let tail = &msg[msg.len() - KEEP..];
            let cut = tail.find('/').map_or(tail, |j| &tail[j..]);
            format!("{} (at ...{cut}", &msg[..i])
        }
        _ => msg.to_owned(),
    }
}

fn cmd_run(cfg: &RunConfig, file: &Path, embed: &[PathBuf], env: &[String], property: Option<&str>, io: &mut Io<'_>) -> Result<i32, CliError> {
    let params = cfg.params();
    let ops = cfg.opset();
    let property = match property {
        Some(p) => Some(TraceProperty::parse(p).ok_or_else(|| CliError::Usage(format!("bad property {p:?}; expected prec(head,body)")))?),
        None => None,
    };
    let script = match &cfg.script {
        Some(path) => parse_script(&read_file(path)?, &params).map_err(|e| CliError::parse(path, e))?,
        None => AttackerScript::default(),
    };
    let eta = parse_env(env, &params)?;

    fn go<T: Pts>(pts: &T, eta: Valuation, script: &AttackerScript, bound: usize) -> Execution<T::State> {
        execute(pts, eta, script, bound)
    }
    let (events, actions, stop, steps) = if is_cvm(file) {
        if !embed.is_empty() {
            return Err(CliError::Usage(String::from("--embed needs an IML context")));
        }
        let ex = go(&CvmPts::packed(load_cvm(file, cfg)?, ops, params), eta, &script, cfg.bound);
        (ex.events, ex.actions, ex.stop, ex.steps)
    } else {
        let iml = load_iml(file, cfg)?;
        let entry = iml.entry().cloned().ok_or_else(|| CliError::Usage(format!("{} has no process to run", file.display())))?;
        if embed.is_empty() {
            check_holes(&entry, 0).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        let context = ImlPts::new(entry, ops.clone(), params);
        if embed.is_empty() {
            let ex = go(&context, eta, &script, cfg.bound);
            (ex.events, ex.actions, ex.stop, ex.steps)
        } else {
            let parts = embed.iter().map(|p| Ok(CvmPts::packed(load_cvm(p, cfg)?, ops.clone(), params))).collect::<Result<Vec<_>, CliError>>()?;
            let emb = Embedding::new(context, parts).map_err(|e| CliError::Usage(e.to_string()))?;
            let ex = go(&emb, eta, &script, cfg.bound);
            (ex.events, ex.actions, ex.stop, ex.steps)
        }
    };

    let holds = property.as_ref().map(|p| check_trace(&events, p, &colon_tagging));
    let code = if holds == Some(false) {
        EXIT_VIOLATED
    } else if is_failure(&stop) {
        EXIT_FAILED
    } else {
        0
    };
    match cfg.format {
        Format::Text => {
            io.emit(&cvmx_core::pts::render_trace(&events))?;
            if is_failure(&stop) || stop == StopReason::Bound {
                io.note(elide_history(&stop.to_string()));
            }
            if let (Some(p), Some(h)) = (&property, holds) {
                io.note(format_args!("{p:?}: {}", if h { "holds" } else { "violated" }));
            }
        }
        Format::Json => io.json(json!({
            "events": events.iter().map(|e| e.to_hex()).collect::<Vec<_>>(),
            "actions": actions.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "stop": stop.to_string(),
            "steps": steps,
            "property": property.as_ref().map(|p| json!({ "property": format!("{p:?}"), "holds": holds })),
            "exit": code,
        }))?,
    }
    Ok(code)
}

fn dump_state(state: &SymMemory, params: &WordParams) -> String {
    let mut s = String::from("path condition:\n");
    for f in state.sigma.facts() {
        s.push_str(&format!("  {}\n", print_expr(f, params)));
    }
    s.push_str("memory:\n");
    for (b, e) in &state.mem {
        let size = state.alloc.get(b).map_or_else(|| String::from("?"), |a| print_expr(a, params));
        s.push_str(&format!("  {b} [{size}] => {}\n", print_expr(e, params)));
    }
    s.push_str("stack:\n");
    for e in state.stack.iter().rev() {
        s.push_str(&format!("  {}\n", print_expr(e, params)));
    }
    s
}

fn cmd_symex(cfg: &RunConfig, file: &Path, trace: bool, drop_arith_guards: bool, io: &mut Io<'_>) -> Result<i32, CliError> {
    let params = cfg.params();
    let ops = cfg.opset();
    let program = load_cvm(file, cfg)?;
    let options = ExtractOptions { drop_arith_guards, ..Default::default() };
    let mut ex = SymExec::new(&program, &ops, params, options);
    let mut steps = Vec::new();
    loop {
        match ex.step() {
            Ok(Some(rec)) => steps.push(rec),
            Ok(None) => break,
            Err(e) => {
                let at = program.origin.get(e.index).map_or_else(String::new, |s| format!(" (statement {})", s + 1));
                io.note(format_args!("error: {e}{at}"));
                let _ = io.err.write_all(dump_state(ex.state(), &params).as_bytes());
                return Ok(EXIT_FAILED);
            }
        }
    }
    let labels: Vec<_> = steps.iter().filter_map(|r| r.label.clone()).collect();
    let model = print_iml(&labels_to_process(&labels), &cfg.syntax());
    let rows = trace_rows(&program, &steps);
    match cfg.format {
        Format::Text if trace => io.emit(&render_trace(&rows, &params))?,
        Format::Text => io.emit(&format!("{model}\n"))?,
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "instrs": [r.instrs.start, r.instrs.end],
                        "memory": r.memory.iter().map(|(b, e)| json!({ "base": b.to_string(), "value": print_expr(e, &params) })).collect::<Vec<_>>(),
                        "facts": r.facts.iter().map(|f| print_expr(f, &params)).collect::<Vec<_>>(),
                        "iml": r.labels.iter().map(|l| l.render(&params)).collect::<Vec<_>>(),
                    })
                })
                .collect();
            io.json(json!({ "model": model, "trace": rows }))?;
        }
    }
    Ok(0)
}

fn cmd_simplify(cfg: &RunConfig, expr: &str, facts: &[String], no_overflow: bool, io: &mut Io<'_>) -> Result<i32, CliError> {
    let params = cfg.params();
    let ops = cfg.opset();
    let parse = |s: &str| parse_expr(s, &params).map_err(|e| CliError::parse("<argument>", e));
    let e = parse(expr)?;
    let sigma = FactSet::from_facts(facts.iter().map(|f| parse(f)).collect::<Result<Vec<_>, _>>()?);
    let solver = Solver::new(&ops, params).with_no_overflow(no_overflow);
    let out = print_expr(&simplify::simplify(&solver, &sigma, &e), &params);
    match cfg.format {
        Format::Text => io.emit(&format!("{out}\n"))?,
        Format::Json => io.json(json!({ "input": print_expr(&e, &params), "simplified": out }))?,
    }
    Ok(0)
}

fn translate_file(cfg: &RunConfig, file: &Path, strict_len: bool) -> Result<PiModel, CliError> {
    let iml = load_iml(file, cfg)?;
    let opts = TransOptions { strict_len, ..Default::default() };
    translate(&iml, &cfg.opset(), &cfg.syntax(), &opts).map_err(|e| CliError::Translate(e.msg))
}

/// The check results as JSON, without the schema tag.
pub fn report_json(model: &PiModel, params: &WordParams) -> Value {
    let r = &model.report;
    let parsers: Vec<Value> = r
        .parsers
        .iter()
        .map(|(name, res)| match res {
            Ok(m) => json!({
                "name": name, "ok": true, "encoder": m.encoder, "index": m.index,
                "guard": print_expr(&m.guard, params), "len_proved": m.len_proved,
            }),
            Err(why) => json!({ "name": name, "ok": false, "error": why }),
        })
        .collect();
    json!({
        "ok": r.all_ok(),
        "encoders": model.encoders.iter().map(|e| json!({ "name": e.name, "params": e.params, "body": print_expr(&e.body, params) })).collect::<Vec<_>>(),
        "c1": { "ok": r.c1.is_none(), "error": r.c1 },
        "parsers": parsers,
        "key_safety": match &r.key_safety {
            None => json!({ "ok": true }),
            Some(v) => json!({ "ok": false, "def": v.def, "step": v.step, "at": v.at, "reason": v.reason }),
        },
        "warnings": r.warnings,
        "dropped_ifs": r.dropped_ifs.iter().map(|e| print_expr(e, params)).collect::<Vec<_>>(),
        "stripped_casts": r.stripped_casts,
    })
}

/// Human-readable check results, one line per check.
pub fn report_text(model: &PiModel, params: &WordParams) -> String {
    let r: &CheckReport = &model.report;
    let mut s = String::new();
    let mark = |ok: bool| if ok { "ok  " } else { "FAIL" };
    for e in &model.encoders {
        s.push_str(&format!("encoder {}({}) = {}\n", e.name, e.params.join(", "), print_expr(&e.body, params)));
    }
    match &r.c1 {
        None => s.push_str(&format!("{} C1 encoder ranges are disjoint\n", mark(true))),
        Some(why) => s.push_str(&format!("{} C1 {why}\n", mark(false))),
    }
    for (name, res) in &r.parsers {
        match res {
            Ok(m) => s.push_str(&format!(
                "{} C2-C4 {name} inverts {} at {}; guard {}{}\n",
                mark(true),
                m.encoder,
                m.index,
                print_expr(&m.guard, params),
                if m.len_proved { "" } else { " (length part unproved)" }
            )),
            Err(why) => s.push_str(&format!("{} C2-C4 {name}: {why}\n", mark(false))),
        }
    }
    match &r.key_safety {
        None => s.push_str(&format!("{} key safety\n", mark(true))),
        Some(v) => s.push_str(&format!(
            "{} key safety: {} at step {} ({}): {}\n",
            mark(false),
            v.def.as_deref().unwrap_or("main process"),
            v.step,
            v.at,
            v.reason
        )),
    }
    for w in &r.warnings {
        s.push_str(&format!("warn {w}\n"));
    }
    for e in &r.dropped_ifs {
        s.push_str(&format!("note dropped auxiliary condition {}\n", print_expr(e, params)));
    }
    if r.stripped_casts > 0 {
        s.push_str(&format!("note removed {} casts\n", r.stripped_casts));
    }
    s
}

fn cmd_translate(
    cfg: &RunConfig,
    file: &Path,
    output: Option<&Path>,
    report: Option<&Path>,
    force: bool,
    strict_len: bool,
    io: &mut Io<'_>,
) -> Result<i32, CliError> {
    let params = cfg.params();
    let model = translate_file(cfg, file, strict_len)?;
    if let Some(path) = report {
        let mut v = report_json(&model, &params);
        v["schema"] = json!(SCHEMA);
        write_file(path, &format!("{}\n", serde_json::to_string_pretty(&v).expect("json values serialize")))?;
    }
    // key safety concerns the soundness of the result, not the translation, so it only warns
    let r = &model.report;
    if !r.all_ok() {
        let _ = io.err.write_all(report_text(&model, &params).as_bytes());
        if !force && !(r.tupling_ok() && r.warnings.is_empty()) {
            io.note("error: checks failed; no model written (use --force to write it anyway)");
            return Ok(EXIT_VIOLATED);
        }
    }
    let pv = emit_proverif(&model);
    match output {
        Some(path) => write_file(path, &pv)?,
        None => io.emit(&pv)?,
    }
    Ok(0)
}

fn cmd_check(cfg: &RunConfig, file: &Path, strict_len: bool, io: &mut Io<'_>) -> Result<i32, CliError> {
    let params = cfg.params();
    let model = translate_file(cfg, file, strict_len)?;
    match cfg.format {
        Format::Text => io.emit(&report_text(&model, &params))?,
        Format::Json => io.json(report_json(&model, &params))?,
    }
    Ok(if model.report.all_ok() { 0 } else { EXIT_VIOLATED })
}

fn cmd_difftest(cfg: &RunConfig, programs: usize, scripts: usize, threads: usize, io: &mut Io<'_>) -> Result<i32, CliError> {
    let start = std::time::Instant::now();
    let s = difftest::run(&DiffConfig { programs, scripts, seed: cfg.seed, threads, params: cfg.params() });
    let secs = start.elapsed().as_secs_f64();
    match cfg.format {
        Format::Text => {
            io.emit(&format!(
                "programs {}\nextracted {}\nruns {}\nconcrete stuck {}\ncompared {}\nwith actions {}\nmismatches {}\nseconds {secs:.2}\n",
                s.programs,
                s.extracted,
                s.runs,
                s.concrete_stuck,
                s.compared,
                s.nonempty,
                s.mismatches.len()
            ))?;
            for m in s.mismatches.iter().take(3) {
                io.note(format_args!("mismatch:\n{m:#?}"));
            }
        }
        Format::Json => {
            let mut v = serde_json::to_value(&s).expect("summary serializes");
            v["seconds"] = json!(secs);
            io.json(v)?;
        }
    }
    Ok(if s.mismatches.is_empty() { 0 } else { EXIT_VIOLATED })
}

