//! Command-line driver: run programs under the three semantics, explore
//! final-state sets, check serializability properties, verify and infer
//! commute conditions, and apply the lock-synthesis transformations.

use clap::{Args, Parser, Subcommand};
use commute_core::ast::{Program, Stmt, Type};
use commute_core::commutativity::infer::{infer_condition, InferBudget};
use commute_core::commutativity::solver::SolverConfig;
use commute_core::commutativity::verify::{verify_condition, CondVerdict, VerifyMode};
use commute_core::commutativity::{extract_sites, CommuteSite};
use commute_core::explorer::{
    check_inclusion, check_nd_determinism, Budget, DomainSpec, Semantics,
};
use commute_core::par::{parse_trace, render_trace, run_recorded, RunError, Scheduler};
use commute_core::printer::{print_expr, print_program, print_stmt};
use commute_core::serializability::{
    check_main_theorem, is_adapted_serial, is_program_scoped_serializable, is_scoped_serial,
    MainTheoremVerdict, Verdict,
};
use commute_core::state::ScopedState;
use commute_core::stepper::{run_seq, StepConfig};
use commute_core::typecheck::typecheck;
use commute_core::value::Value;
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Duration;

const EXIT_OK: u8 = 0;
const EXIT_PARSE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_DEADLOCK_OR_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "commute")]
#[command(about = "Interpreter and analysis toolkit for programs with commute blocks")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Program file
    file: String,
    /// Input-variable domain, e.g. "x:int[-2..2], b:bool,
    /// t:table(int[0..1]->int[0..1])"; overrides the @domain header
    #[arg(long)]
    domain: Option<String>,
    /// Concrete initial bindings, e.g. "x=1,y=0"
    #[arg(long)]
    init: Option<String>,
    /// Per-path step budget
    #[arg(long, default_value_t = 100_000)]
    budget: usize,
    /// Visited-state cap for exhaustive exploration
    #[arg(long, default_value_t = 1_000_000)]
    max_states: usize,
    /// Machine-readable JSON output
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program and print its final state
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Execution semantics
        #[arg(long, default_value = "par")]
        semantics: String,
        /// Force every commute guard to false (sequential execution)
        #[arg(long)]
        force_seq: bool,
        /// Seed for the random scheduler
        #[arg(long)]
        seed: Option<u64>,
        /// File of scheduler choice indices (whitespace-separated)
        #[arg(long)]
        choices: Option<String>,
        /// Write the trace dump to this file
        #[arg(long)]
        trace: Option<String>,
        /// Include state snapshots in the trace
        #[arg(long)]
        snapshots: bool,
        /// Use the multi-worker runtime with this many workers
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Exhaustively enumerate final states and check seq ⊆ nd ⊆ par
    Explore {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Decide a property: scoped-ser | adapted-ser | nd-det | main-theorem
    Check {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        property: String,
        /// Analyze a dumped trace file instead of exploring the program
        #[arg(long)]
        from_trace: Option<String>,
        /// Write the counterexample trace here
        #[arg(long)]
        trace_out: Option<String>,
    },
    /// Verify a commutativity condition for one site
    Verify {
        #[command(flatten)]
        common: CommonOpts,
        /// Site id (see `sites`)
        #[arg(long, default_value_t = 0)]
        site: usize,
        /// Candidate condition, e.g. "c > a"
        #[arg(long)]
        condition: String,
        /// oracle | solver | both
        #[arg(long, default_value = "both")]
        mode: String,
        /// Solver command, e.g. "z3" (defaults to probing the PATH)
        #[arg(long)]
        solver_cmd: Option<String>,
        /// Dump the generated SMT-LIB query to this file
        #[arg(long)]
        emit_query: Option<String>,
    },
    /// Infer a commutativity condition for one site
    Infer {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 0)]
        site: usize,
        /// Candidate-clause budget
        #[arg(long = "candidates", default_value_t = 2_000)]
        candidates: usize,
        #[arg(long)]
        solver_cmd: Option<String>,
    },
    /// Apply lock-synthesis transformations to every site
    Transform {
        #[command(flatten)]
        common: CommonOpts,
        /// auto | naive | snapshot | narrow
        #[arg(long, default_value = "auto")]
        pattern: String,
        /// Write the transformed program here (stdout otherwise)
        #[arg(short, long)]
        output: Option<String>,
    },
    /// List the commute sites of a program
    Sites {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

struct CmdError {
    msg: String,
    code: u8,
}

fn fail(code: u8, msg: impl Into<String>) -> CmdError {
    CmdError {
        msg: msg.into(),
        code,
    }
}

struct Loaded {
    program: Program,
    domain: DomainSpec,
    /// Initial states: one from --init, or the domain enumeration, or one
    /// empty state.
    initials: Vec<ScopedState>,
    inputs: Vec<(String, Type)>,
}

fn load(common: &CommonOpts) -> Result<Loaded, CmdError> {
    let source = std::fs::read_to_string(&common.file)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", common.file)))?;
    let program = commute_core::parser::parse_program(&source).map_err(|errs| {
        fail(
            EXIT_PARSE,
            errs.iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("\n"),
        )
    })?;
    let domain_text = common
        .domain
        .clone()
        .or_else(|| program.domain.as_ref().map(|d| d.text.clone()));
    let domain = match domain_text {
        Some(t) => DomainSpec::parse(&t).map_err(|e| fail(EXIT_PARSE, e.to_string()))?,
        None => DomainSpec::default(),
    };
    let (initials, inputs) = match &common.init {
        Some(text) => {
            let (state, inputs) = parse_init(text)?;
            (vec![state], inputs)
        }
        None => {
            let inputs = domain.inputs();
            let initials = domain
                .enumerate(common.max_states)
                .map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
            (initials, inputs)
        }
    };
    typecheck(&program, &inputs).map_err(|e| fail(EXIT_PARSE, format!("type error: {e}")))?;
    Ok(Loaded {
        program,
        domain,
        initials,
        inputs,
    })
}

fn parse_init(text: &str) -> Result<(ScopedState, Vec<(String, Type)>), CmdError> {
    let mut state = ScopedState::new();
    let mut inputs = Vec::new();
    for entry in text.split(',') {
        let entry = entry.trim();
        if entry.is_empty() {
            continue;
        }
        let (name, value) = entry
            .split_once('=')
            .ok_or_else(|| fail(EXIT_PARSE, format!("malformed --init entry `{entry}`")))?;
        let expr = commute_core::parser::parse_expression(value.trim())
            .map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
        let v = expr.as_const().cloned().ok_or_else(|| {
            fail(EXIT_PARSE, format!("--init value `{value}` must be a literal"))
        })?;
        let ty = match &v {
            Value::Int(_) => Type::Int,
            Value::Bool(_) => Type::Bool,
            Value::Str(_) => Type::Str,
            other => {
                return Err(fail(
                    EXIT_PARSE,
                    format!("--init value of kind `{}` not supported", other.kind()),
                ))
            }
        };
        inputs.push((name.trim().to_string(), ty));
        state.declare(name.trim(), v);
    }
    Ok((state, inputs))
}

fn single_initial(loaded: &Loaded) -> Result<ScopedState, CmdError> {
    if loaded.initials.len() != 1 {
        return Err(fail(
            EXIT_PARSE,
            format!(
                "this command runs one initial state; the domain enumerates {} (use --init)",
                loaded.initials.len()
            ),
        ));
    }
    Ok(loaded.initials[0].clone())
}

fn force_guards_false(s: &Stmt) -> Stmt {
    match s {
        Stmt::Seq(a, b) => Stmt::seq(force_guards_false(a), force_guards_false(b)),
        Stmt::If(c, t, e) => Stmt::If(
            c.clone(),
            Box::new(force_guards_false(t)),
            Box::new(force_guards_false(e)),
        ),
        Stmt::While(c, b, sm) => {
            Stmt::While(c.clone(), Box::new(force_guards_false(b)), sm.clone())
        }
        Stmt::Commute {
            keyword,
            left,
            right,
            ..
        } => Stmt::Commute {
            keyword: *keyword,
            guard: commute_core::ast::Expr::bool(false),
            left: Box::new(force_guards_false(left)),
            right: Box::new(force_guards_false(right)),
        },
        other => other.clone(),
    }
}

fn state_json(state: &ScopedState) -> Json {
    let map: BTreeMap<String, String> = state
        .render_lines()
        .into_iter()
        .filter_map(|line| {
            line.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect();
    json!(map)
}

fn budget_of(common: &CommonOpts) -> Budget {
    Budget {
        max_steps: common.budget,
        max_visited: common.max_states,
    }
}

fn solver_of(cmd: &Option<String>) -> Option<SolverConfig> {
    match cmd {
        Some(c) => SolverConfig::from_command(c),
        None => SolverConfig::discover(),
    }
}

fn dispatch(cli: Cli) -> Result<u8, CmdError> {
    match cli.command {
        Command::Run {
            common,
            semantics,
            force_seq,
            seed,
            choices,
            trace,
            snapshots,
            workers,
        } => cmd_run(
            common, &semantics, force_seq, seed, choices, trace, snapshots, workers,
        ),
        Command::Explore { common } => cmd_explore(common),
        Command::Check {
            common,
            property,
            from_trace,
            trace_out,
        } => cmd_check(common, &property, from_trace, trace_out),
        Command::Verify {
            common,
            site,
            condition,
            mode,
            solver_cmd,
            emit_query,
        } => cmd_verify(common, site, &condition, &mode, solver_cmd, emit_query),
        Command::Infer {
            common,
            site,
            candidates,
            solver_cmd,
        } => cmd_infer(common, site, candidates, solver_cmd),
        Command::Transform {
            common,
            pattern,
            output,
        } => cmd_transform(common, &pattern, output),
        Command::Sites { common } => cmd_sites(common),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    common: CommonOpts,
    semantics: &str,
    force_seq: bool,
    seed: Option<u64>,
    choices: Option<String>,
    trace: Option<String>,
    snapshots: bool,
    workers: Option<usize>,
) -> Result<u8, CmdError> {
    let loaded = load(&common)?;
    let initial = single_initial(&loaded)?;
    let sem = Semantics::parse(semantics)
        .ok_or_else(|| fail(EXIT_PARSE, format!("unknown semantics `{semantics}`")))?;
    let body = if force_seq {
        force_guards_false(&loaded.program.body)
    } else {
        loaded.program.body.clone()
    };
    let cfg = StepConfig::default();

    let final_state = if let Some(workers) = workers {
        if trace.is_some() || choices.is_some() {
            return Err(fail(
                EXIT_PARSE,
                "--workers uses the fast runtime, which does not record traces",
            ));
        }
        let out = commute_core::runtime::run_parallel(
            &body,
            initial,
            workers,
            false,
            Duration::from_secs(120),
        )
        .map_err(|e| match e {
            commute_core::runtime::ParallelError::LockTimeout(_)
            | commute_core::runtime::ParallelError::Timeout => {
                fail(EXIT_DEADLOCK_OR_BUDGET, e.to_string())
            }
            other => fail(EXIT_RUNTIME, other.to_string()),
        })?;
        if !common.json {
            eprintln!("# duration: {:?}", out.duration);
        }
        out.state
    } else {
        match sem {
            Semantics::Seq => run_seq(&body, initial, &cfg, common.budget)
                .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?,
            Semantics::Nd => {
                // drive the flat nd relation; a seed picks among the two
                // orders at each true-guarded commute
                let mut rng = seed.map(rand_like);
                let mut stmt = body.clone();
                let mut state = initial;
                let mut steps = 0usize;
                loop {
                    if steps > common.budget {
                        return Err(fail(EXIT_DEADLOCK_OR_BUDGET, "step budget exhausted"));
                    }
                    steps += 1;
                    use commute_core::stepper::{step_nd, BlockReason, StepResult};
                    match step_nd(&stmt, &state, &cfg)
                        .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?
                    {
                        StepResult::Done => break state,
                        StepResult::Blocked(BlockReason::LockHeld(n)) => {
                            return Err(fail(
                                EXIT_DEADLOCK_OR_BUDGET,
                                format!("deadlock: lock({n}) already held"),
                            ))
                        }
                        StepResult::Blocked(BlockReason::AssumeFalse) => {
                            return Err(fail(EXIT_RUNTIME, "assumption failed"))
                        }
                        StepResult::Next(mut outs) => {
                            let idx = match (&mut rng, outs.len()) {
                                (_, 1) => 0,
                                (Some(r), n) => {
                                    use rand::Rng;
                                    r.gen_range(0..n)
                                }
                                (None, _) => 0,
                            };
                            let out = outs.swap_remove(idx);
                            stmt = out.stmt;
                            state = out.state;
                        }
                    }
                }
            }
            Semantics::Par => {
                let scheduler = if let Some(path) = &choices {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| fail(EXIT_PARSE, format!("{path}: {e}")))?;
                    let list: Vec<usize> = text
                        .split_whitespace()
                        .map(|t| {
                            t.parse()
                                .map_err(|_| fail(EXIT_PARSE, "bad choice index"))
                        })
                        .collect::<Result<_, _>>()?;
                    Scheduler::Choices(list)
                } else if let Some(seed) = seed {
                    Scheduler::Seeded(seed)
                } else {
                    Scheduler::Leftmost
                };
                let exec = run_recorded(&body, initial, scheduler, &cfg, common.budget)
                    .map_err(|e| match e {
                        RunError::Deadlock { .. } | RunError::BudgetExhausted(_) => {
                            fail(EXIT_DEADLOCK_OR_BUDGET, e.to_string())
                        }
                        RunError::Runtime(r) => fail(EXIT_RUNTIME, r.to_string()),
                    })?;
                if let Some(path) = &trace {
                    std::fs::write(path, render_trace(&exec, snapshots))
                        .map_err(|e| fail(EXIT_RUNTIME, format!("{path}: {e}")))?;
                }
                exec.final_config()
                    .final_state()
                    .ok_or_else(|| fail(EXIT_RUNTIME, "execution did not finish"))?
            }
        }
    };

    if common.json {
        println!("{}", json!({ "final": state_json(&final_state) }));
    } else {
        for line in final_state.render_lines() {
            println!("{line}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_explore(common: CommonOpts) -> Result<u8, CmdError> {
    let loaded = load(&common)?;
    let cfg = StepConfig::default();
    let budget = budget_of(&common);
    let mut all_hold = true;
    for initial in &loaded.initials {
        let rep = check_inclusion(&loaded.program.body, initial, budget, &cfg);
        if common.json {
            for (sem, r) in [("seq", &rep.seq), ("nd", &rep.nd), ("par", &rep.par)] {
                for state in r.finals.values() {
                    println!(
                        "{}",
                        json!({
                            "type": "final",
                            "semantics": sem,
                            "initial": state_json(initial),
                            "state": state_json(state),
                            "complete": r.complete,
                        })
                    );
                }
            }
            println!(
                "{}",
                json!({
                    "type": "inclusion",
                    "initial": state_json(initial),
                    "seq_in_nd": rep.seq_in_nd,
                    "nd_in_par": rep.nd_in_par,
                    "seq_singleton": rep.seq_singleton,
                    "witnesses": rep.witnesses,
                })
            );
        } else {
            println!(
                "initial {{{}}}: |seq|={} |nd|={} |par|={} inclusion={}",
                initial,
                rep.seq.finals.len(),
                rep.nd.finals.len(),
                rep.par.finals.len(),
                if rep.holds() { "ok" } else { "VIOLATED" }
            );
            if !rep.holds() {
                for w in &rep.witnesses {
                    println!("  witness: {w}");
                }
            }
        }
        all_hold &= rep.holds();
    }
    if all_hold {
        Ok(EXIT_OK)
    } else {
        Err(fail(EXIT_RUNTIME, "inclusion violated (toolkit bug)"))
    }
}

fn cmd_check(
    common: CommonOpts,
    property: &str,
    from_trace: Option<String>,
    trace_out: Option<String>,
) -> Result<u8, CmdError> {
    let cfg = StepConfig::default();
    if let Some(path) = &from_trace {
        let text = std::fs::read_to_string(path)
            .map_err(|e| fail(EXIT_PARSE, format!("{path}: {e}")))?;
        let records = parse_trace(&text).map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
        let labels: Vec<_> = records.into_iter().map(|r| r.fr).collect();
        let verdict = match property {
            "scoped-ser" => is_scoped_serial(&labels),
            "adapted-ser" => is_adapted_serial(&labels),
            other => {
                return Err(fail(
                    EXIT_PARSE,
                    format!("property `{other}` is not a trace-level property"),
                ))
            }
        };
        let rec = json!({
            "property": property,
            "verdict": verdict.serial,
            "witness": verdict.violation.as_ref().map(|v| json!({
                "prefix": v.prefix, "index": v.index,
                "steps": [v.first + 1, v.middle + 1, v.last + 1],
            })),
        });
        println!("{rec}");
        return Ok(EXIT_OK);
    }

    let loaded = load(&common)?;
    let budget = budget_of(&common);
    let record = match property {
        "scoped-ser" => {
            let mut verdict = Verdict::True;
            let mut witness = Json::Null;
            for initial in &loaded.initials {
                let rep =
                    is_program_scoped_serializable(&loaded.program.body, initial, budget, &cfg);
                match rep.verdict {
                    Verdict::True => {}
                    v => {
                        verdict = v;
                        if let Some(cex) = &rep.counterexample {
                            let text = render_trace(cex, false);
                            if let Some(path) = &trace_out {
                                std::fs::write(path, &text)
                                    .map_err(|e| fail(EXIT_RUNTIME, format!("{path}: {e}")))?;
                                witness = json!({ "trace": path, "note": rep.note });
                            } else {
                                witness = json!({
                                    "labels": cex.labels().iter()
                                        .map(|l| l.fr.render()).collect::<Vec<_>>(),
                                    "note": rep.note,
                                });
                            }
                        } else {
                            witness = json!({ "note": rep.note });
                        }
                        break;
                    }
                }
            }
            json!({ "property": "scoped-ser", "verdict": verdict.as_str(), "witness": witness })
        }
        "nd-det" => {
            let rep = check_nd_determinism(&loaded.program.body, &loaded.initials, budget, &cfg);
            json!({
                "property": "nd-det",
                "verdict": if rep.deterministic { "true" } else { "false" },
                "witness": rep.witness.map(|(init, finals)| json!({
                    "initial": init, "finals": finals,
                })),
                "states_checked": rep.states_checked,
            })
        }
        "main-theorem" => {
            let sites = extract_sites(&loaded.program.body, &loaded.inputs)
                .map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
            let rep = check_main_theorem(
                &loaded.program.body,
                &sites,
                &loaded.domain,
                &loaded.initials,
                budget,
                &cfg,
            );
            let (verdict, detail) = match &rep.verdict {
                MainTheoremVerdict::Confirmed => ("confirmed".to_string(), Json::Null),
                MainTheoremVerdict::HypothesisFailed(h) => {
                    ("hypothesis-failed".to_string(), json!(h))
                }
                MainTheoremVerdict::Violation(v) => ("VIOLATION".to_string(), json!(v)),
                MainTheoremVerdict::Unknown(u) => ("unknown".to_string(), json!(u)),
            };
            json!({
                "property": "main-theorem",
                "verdict": verdict,
                "witness": detail,
                "conditions_valid": rep.conditions_valid.as_str(),
                "scoped_serializable": rep.scoped_serializable.as_str(),
                "seq_eq_par": rep.seq_eq_par.as_str(),
            })
        }
        "adapted-ser" => {
            return Err(fail(
                EXIT_PARSE,
                "adapted-ser is a trace-level property; pass --from-trace",
            ))
        }
        other => return Err(fail(EXIT_PARSE, format!("unknown property `{other}`"))),
    };
    println!("{record}");
    Ok(EXIT_OK)
}

fn site_by_id(loaded: &Loaded, id: usize) -> Result<CommuteSite, CmdError> {
    let sites = extract_sites(&loaded.program.body, &loaded.inputs)
        .map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
    sites
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| fail(EXIT_PARSE, format!("no site {id}; run `sites` to list them")))
}

fn cmd_verify(
    common: CommonOpts,
    site_id: usize,
    condition: &str,
    mode: &str,
    solver_cmd: Option<String>,
    emit_query: Option<String>,
) -> Result<u8, CmdError> {
    let loaded = load(&common)?;
    let site = site_by_id(&loaded, site_id)?;
    let phi = commute_core::parser::parse_expression(condition)
        .map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
    let mode = VerifyMode::parse(mode)
        .ok_or_else(|| fail(EXIT_PARSE, format!("unknown mode `{mode}`")))?;
    let solver = solver_of(&solver_cmd);
    if mode != VerifyMode::Oracle && solver.is_none() {
        eprintln!("warning: no SMT solver found; falling back to the oracle");
    }
    if let Some(path) = &emit_query {
        let inst = commute_core::commutativity::verify::instrumented_site(&site)
            .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
        let adt = commute_core::commutativity::embed::embed(&inst, &loaded.domain)
            .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
        let pre: BTreeMap<String, String> = adt
            .state
            .iter()
            .flat_map(|sv| sv.pieces.iter())
            .map(|p| (p.base.clone(), p.base.clone()))
            .collect();
        let phi_f = commute_core::commutativity::embed::translate_condition(&adt, &phi, &pre)
            .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
        let query = commute_core::commutativity::verify::emit_commutativity_query(&adt, &phi_f)
            .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
        std::fs::write(path, query).map_err(|e| fail(EXIT_RUNTIME, format!("{path}: {e}")))?;
    }
    let report = verify_condition(
        &site,
        &phi,
        mode,
        &loaded.domain,
        solver.as_ref(),
        &StepConfig::for_analysis(),
    )
    .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    let record = json!({
        "site": site_id,
        "condition": condition,
        "verdict": report.verdict.as_str(),
        "complete": report.complete,
        "witness": report.witness,
        "oracle_states": report.oracle_states,
        "solver": report.solver_result,
        "agreement": report.agreement,
        "notes": report.notes,
    });
    if common.json {
        println!("{record}");
    } else {
        println!(
            "site {site_id}: condition `{condition}` is {}",
            report.verdict.as_str()
        );
        if let Some(w) = &report.witness {
            println!("  witness: {w}");
        }
        if let Some(c) = report.complete {
            println!("  complete: {c}");
        }
        for n in &report.notes {
            println!("  note: {n}");
        }
    }
    if report.agreement == Some(false) {
        return Err(fail(
            EXIT_RUNTIME,
            "oracle and solver disagree: embedding bug",
        ));
    }
    Ok(EXIT_OK)
}

fn cmd_infer(
    common: CommonOpts,
    site_id: usize,
    candidates: usize,
    solver_cmd: Option<String>,
) -> Result<u8, CmdError> {
    let loaded = load(&common)?;
    let site = site_by_id(&loaded, site_id)?;
    let solver = solver_of(&solver_cmd);
    let budget = InferBudget {
        max_candidates: candidates,
        ..Default::default()
    };
    let out = infer_condition(
        &site,
        &loaded.domain,
        &budget,
        solver.as_ref(),
        &StepConfig::for_analysis(),
    )
    .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    let condition_text = print_expr(&out.condition);
    if common.json {
        println!(
            "{}",
            json!({
                "site": site_id,
                "condition": condition_text,
                "verified": out.verification.verdict.as_str(),
                "complete": out.verification.complete,
                "pool_size": out.pool_size,
                "candidates_tried": out.candidates_tried,
                "pruned_by_witness": out.pruned_by_witness,
                "timed_out": out.timed_out,
            })
        );
    } else {
        println!("site {site_id}: inferred condition `{condition_text}`");
        println!(
            "  verified: {} (pool {}, tried {}, pruned {}{})",
            out.verification.verdict.as_str(),
            out.pool_size,
            out.candidates_tried,
            out.pruned_by_witness,
            if out.timed_out { ", budget hit" } else { "" }
        );
    }
    if out.verification.verdict != CondVerdict::Valid {
        return Err(fail(
            EXIT_RUNTIME,
            "inference returned an unverified condition",
        ));
    }
    Ok(EXIT_OK)
}

fn cmd_transform(
    common: CommonOpts,
    pattern: &str,
    output: Option<String>,
) -> Result<u8, CmdError> {
    let loaded = load(&common)?;
    let mode = commute_core::locksynth::PatternMode::parse(pattern)
        .ok_or_else(|| fail(EXIT_PARSE, format!("unknown pattern `{pattern}`")))?;
    let result =
        commute_core::locksynth::transform_program(&loaded.program.body, &loaded.inputs, mode)
            .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    let mut transformed = loaded.program.clone();
    transformed.body = result.body;
    let source = print_program(&transformed);
    match &output {
        Some(path) => std::fs::write(path, &source)
            .map_err(|e| fail(EXIT_RUNTIME, format!("{path}: {e}")))?,
        None => print!("{source}"),
    }
    let reports: Vec<Json> = result
        .reports
        .iter()
        .map(|r| {
            json!({
                "site": r.site,
                "pattern": r.pattern,
                "con": r.con,
                "lock": r.lock,
                "snapshots": r.snapshots,
                "note": r.note,
            })
        })
        .collect();
    if common.json {
        println!("{}", json!({ "sites": reports }));
    } else {
        for r in &result.reports {
            eprintln!(
                "site {}: {} (con: {:?}{})",
                r.site,
                r.pattern,
                r.con,
                r.lock.map(|l| format!(", lock {l}")).unwrap_or_default()
            );
        }
    }
    Ok(EXIT_OK)
}

fn cmd_sites(common: CommonOpts) -> Result<u8, CmdError> {
    let loaded = load(&common)?;
    let sites = extract_sites(&loaded.program.body, &loaded.inputs)
        .map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
    if common.json {
        let records: Vec<Json> = sites
            .iter()
            .map(|s| {
                json!({
                    "id": s.id,
                    "guard": print_expr(&s.guard),
                    "env": s.env.iter()
                        .map(|(n, t)| format!("{n}: {t}"))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        println!("{}", json!({ "sites": records }));
    } else {
        for s in &sites {
            println!("site {}: commute ({})", s.id, print_expr(&s.guard));
            println!("  left:  {}", first_line(&print_stmt(&s.left, 0)));
            println!("  right: {}", first_line(&print_stmt(&s.right, 0)));
            let env: Vec<String> = s.env.iter().map(|(n, t)| format!("{n}: {t}")).collect();
            println!("  env:   {}", env.join(", "));
        }
    }
    Ok(EXIT_OK)
}

fn rand_like(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn first_line(s: &str) -> String {
    let mut line = s.lines().next().unwrap_or("").trim().to_string();
    if s.lines().count() > 1 {
        line.push_str(" ...");
    }
    line
}
