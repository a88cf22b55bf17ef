//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`
//! to see them). Criteria pin exact verdicts and tolerances; nothing here
//! is calibrated at run time.

use commute_core::ast::{Expr, Program, Stmt};
use commute_core::commutativity::infer::{infer_condition, weakest_over_pool, InferBudget};
use commute_core::commutativity::oracle::oracle_check_condition;
use commute_core::commutativity::oracle::OracleVerdict;
use commute_core::commutativity::solver::SolverConfig;
use commute_core::commutativity::verify::{
    instrumented_site, verify_condition, CondVerdict, VerifyMode,
};
use commute_core::commutativity::{extract_sites, CommuteSite};
use commute_core::explorer::{accessible_vars, bigstep, Budget, DomainSpec, Semantics};
use commute_core::locksynth::{transform_program, PatternMode};
use commute_core::par::{enabled_steps, run_recorded, Configuration, FragmentLabel, Scheduler};
use commute_core::parser::parse_program;
use commute_core::serializability::{
    is_adapted_serial, is_program_scoped_serializable, is_scoped_serial, Verdict,
};
use commute_core::state::{Frame, ScopedState};
use commute_core::stepper::{RuleName, StepConfig};
use commute_core::value::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn corpus_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus"))
}

fn corpus_files() -> Vec<PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().map(|e| e == "vcy").unwrap_or(false))
        .collect();
    files.sort();
    assert!(files.len() >= 20, "corpus must hold at least 20 programs");
    files
}

fn load(path: &Path) -> (Program, DomainSpec) {
    let src = std::fs::read_to_string(path).unwrap();
    let program = parse_program(&src).unwrap_or_else(|e| panic!("{path:?}: {e:?}"));
    let domain = program
        .domain
        .as_ref()
        .map(|d| DomainSpec::parse(&d.text).unwrap())
        .unwrap_or_default();
    (program, domain)
}

fn load_name(name: &str) -> (Program, DomainSpec) {
    load(&corpus_dir().join(name))
}

fn site_of(name: &str, id: usize) -> (CommuteSite, DomainSpec) {
    let (program, domain) = load_name(name);
    let site = extract_sites(&program.body, &domain.inputs())
        .unwrap()
        .into_iter()
        .find(|s| s.id == id)
        .unwrap();
    (site, domain)
}

fn int_state(pairs: &[(&str, i64)]) -> ScopedState {
    let mut frame = Frame::new();
    for (k, v) in pairs {
        frame.0.insert(k.to_string(), Value::Int(*v));
    }
    ScopedState::from_frame(frame)
}

fn cond(text: &str) -> Expr {
    commute_core::parser::parse_expression(text).unwrap()
}

// seq final-state sets agree when keyed on the original program's
// accessible variables (transformed programs add fresh helper variables)
fn seq_sets_match(original: &Stmt, transformed: &Stmt, initial: &ScopedState) -> bool {
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let acc = accessible_vars(original, initial);
    let keyed = |body: &Stmt| {
        let rep = bigstep(body, initial, Semantics::Seq, budget, &cfg);
        assert!(rep.errors.is_empty(), "seq errors: {:?}", rep.errors);
        let mut ks: Vec<String> = rep
            .finals
            .values()
            .map(|s| s.observable_key(&acc))
            .collect();
        ks.sort();
        ks.dedup();
        ks
    };
    keyed(original) == keyed(transformed)
}

#[test]
fn criterion_01_golden_trace() {
    // fork, three left steps, the right steps, join, tail; exact final
    // state {x: 3, y: 1}; identical singleton under seq and nd
    let started = Instant::now();
    let (program, _) = load_name("threaded-example.vcy");
    let init = int_state(&[("x", 1), ("y", 0)]);
    let cfg = StepConfig::default();

    let exec = run_recorded(
        &program.body,
        init.clone(),
        Scheduler::Leftmost,
        &cfg,
        1000,
    )
    .unwrap();
    let shape: Vec<(String, RuleName)> = exec
        .steps
        .iter()
        .map(|(l, r, _)| (l.fr.render(), *r))
        .collect();
    use RuleName::*;
    let expected = vec![
        ("-".to_string(), SmallStep), // guard: read x
        ("-".to_string(), SmallStep), // guard: 1 == 1
        ("-".to_string(), ForkStep),
        ("L0".to_string(), SmallStep), // x
        ("L0".to_string(), SmallStep), // 1 + 1
        ("L0".to_string(), Redex),     // x = 2
        ("R0".to_string(), SmallStep), // y
        ("R0".to_string(), SmallStep), // 0 + 1
        ("R0".to_string(), Redex),     // y = 1
        ("-".to_string(), Join),
        ("-".to_string(), Redex),     // skip; x = x + y
        ("-".to_string(), SmallStep), // x
        ("-".to_string(), SmallStep), // y
        ("-".to_string(), SmallStep), // 2 + 1
        ("-".to_string(), Redex),     // x = 3
    ];
    assert_eq!(shape, expected);

    // the intermediate states the worked derivation names
    let st_after_left = exec.steps[5].2.outer_state();
    assert_eq!(st_after_left.lookup("x").unwrap(), &Value::Int(2));
    assert_eq!(st_after_left.lookup("y").unwrap(), &Value::Int(0));
    let st_after_right = exec.steps[8].2.outer_state();
    assert_eq!(st_after_right.lookup("y").unwrap(), &Value::Int(1));

    let final_state = exec.final_config().final_state().unwrap();
    assert_eq!(final_state.lookup("x").unwrap(), &Value::Int(3));
    assert_eq!(final_state.lookup("y").unwrap(), &Value::Int(1));

    for sem in [Semantics::Seq, Semantics::Nd] {
        let rep = bigstep(&program.body, &init, sem, Budget::default(), &cfg);
        assert_eq!(rep.finals.len(), 1);
        let f = rep.finals.values().next().unwrap();
        assert_eq!(f.lookup("x").unwrap(), &Value::Int(3));
        assert_eq!(f.lookup("y").unwrap(), &Value::Int(1));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!("criterion 1: PASS golden trace reproduced in {elapsed:?}");
}

#[test]
fn criterion_02_scoped_vs_adapted_separation() {
    let started = Instant::now();
    let (program, _) = load_name("nested.vcy");
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let initial = ScopedState::new();

    // the nd set is exactly {{x: 0, y: 0}}
    let nd = bigstep(&program.body, &initial, Semantics::Nd, budget, &cfg);
    assert_eq!(nd.finals.len(), 1);
    let f = nd.finals.values().next().unwrap();
    assert_eq!(f.lookup("x").unwrap(), &Value::Int(0));
    assert_eq!(f.lookup("y").unwrap(), &Value::Int(0));

    // exhaustive par exploration reaches {x: 0, y: 1}
    let par = bigstep(&program.body, &initial, Semantics::Par, budget, &cfg);
    let reached = par.finals.values().any(|s| {
        s.lookup("x").unwrap() == &Value::Int(0) && s.lookup("y").unwrap() == &Value::Int(1)
    });
    assert!(reached, "par never reached x=0, y=1");

    // some execution with that final state is adapted- but not
    // scoped-serial
    fn search(
        config: Configuration,
        cfg: &StepConfig,
        labels: &mut Vec<FragmentLabel>,
        depth_left: usize,
        found: &mut bool,
    ) {
        if *found {
            return;
        }
        if let Some(final_state) = config.final_state() {
            if final_state.lookup("x").unwrap() == &Value::Int(0)
                && final_state.lookup("y").unwrap() == &Value::Int(1)
                && is_adapted_serial(labels).serial
                && !is_scoped_serial(labels).serial
            {
                *found = true;
            }
            return;
        }
        if depth_left == 0 {
            return;
        }
        for step in enabled_steps(&config, cfg).unwrap() {
            labels.push(step.label.fr.clone());
            search(step.next, cfg, labels, depth_left - 1, found);
            labels.pop();
            if *found {
                return;
            }
        }
    }
    let mut found = false;
    search(
        Configuration::initial(&program.body, initial.clone()),
        &cfg,
        &mut Vec::new(),
        24,
        &mut found,
    );
    assert!(found, "no adapted-but-not-scoped execution found");

    // program-level scoped serializability is false
    let rep = is_program_scoped_serializable(&program.body, &initial, budget, &cfg);
    assert_eq!(rep.verdict, Verdict::False);
    assert!(rep.counterexample.is_some());

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10 s");
    println!("criterion 2: PASS scoped/adapted separation shown in {elapsed:?}");
}

#[test]
fn criterion_03_inclusion_suite() {
    let started = Instant::now();
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let mut programs = 0;
    let mut states = 0;
    for path in corpus_files() {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let (program, domain) = load(&path);
        programs += 1;
        for initial in domain.enumerate(1_000_000).unwrap() {
            states += 1;
            let rep =
                commute_core::explorer::check_inclusion(&program.body, &initial, budget, &cfg);
            assert!(rep.seq.errors.is_empty(), "{name} seq errors at {initial}");
            assert!(
                rep.holds(),
                "{name} at {initial}: witnesses {:?}",
                rep.witnesses
            );
            assert_eq!(rep.seq.finals.len(), 1, "{name}: seq not singleton");
        }
    }
    println!(
        "criterion 3: PASS inclusion over {programs} programs / {states} states in {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_04_main_theorem_suite() {
    let started = Instant::now();
    let cfg = StepConfig::default();
    let analysis_cfg = StepConfig::for_analysis();
    let budget = Budget::default();
    let mut transformed_count = 0;
    let mut skipped: Vec<String> = Vec::new();
    for path in corpus_files() {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let (program, domain) = load(&path);
        let inputs = domain.inputs();
        let sites = extract_sites(&program.body, &inputs).unwrap();
        // hypothesis: every guard is a valid commutativity condition
        let mut all_valid = true;
        for site in &sites {
            let guard = site.guard.clone();
            match oracle_check_condition(site, &guard, &domain, &analysis_cfg) {
                Ok(rep) => {
                    if !matches!(rep.verdict, OracleVerdict::Valid) {
                        all_valid = false;
                        break;
                    }
                }
                Err(_) => {
                    all_valid = false;
                    break;
                }
            }
        }
        if !all_valid || sites.is_empty() {
            skipped.push(name);
            continue;
        }
        let result = transform_program(&program.body, &inputs, PatternMode::Auto).unwrap();
        transformed_count += 1;
        for initial in domain.enumerate(1_000_000).unwrap() {
            let seq = bigstep(&result.body, &initial, Semantics::Seq, budget, &cfg);
            let par = bigstep(&result.body, &initial, Semantics::Par, budget, &cfg);
            assert!(seq.complete && par.complete, "{name}: budget exhausted");
            assert!(
                seq.set_equal(&par),
                "{name} at {initial}: seq {:?} vs par {:?}",
                seq.keys(),
                par.keys()
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(transformed_count >= 20, "only {transformed_count} programs qualified");
    assert!(
        elapsed.as_secs() < 300,
        "suite took {elapsed:?}, budget 5 min"
    );
    println!(
        "criterion 4: PASS seq = par for {transformed_count} transformed programs in {elapsed:?} (skipped: {skipped:?})"
    );
}

// (site file, site id, condition, expected oracle verdict, nonlinear)
fn agreement_pairs() -> Vec<(&'static str, usize, &'static str, CondVerdict, bool)> {
    use CondVerdict::*;
    vec![
        ("counter.vcy", 0, "true", Valid, false),
        ("counter.vcy", 0, "false", Valid, false),
        ("simple.vcy", 0, "c > a", Valid, false),
        ("simple.vcy", 0, "true", Invalid, false),
        ("calc.vcy", 0, "c > 0", Valid, true),
        ("calc.vcy", 0, "true", Invalid, true),
        ("matrix.vcy", 0, "y == 0", Valid, true),
        ("matrix.vcy", 0, "true", Invalid, true),
        ("dict.vcy", 0, "res != input", Valid, false),
        ("dict.vcy", 0, "true", Invalid, false),
        ("ht-simple.vcy", 0, "k1 != k2", Valid, false),
        ("ht-simple.vcy", 0, "true", Invalid, false),
        ("ht-add-put.vcy", 0, "k1 != k2", Valid, false),
        ("ht-add-put.vcy", 0, "true", Invalid, false),
        (
            "ht-cond-mem-get.vcy",
            0,
            "j != k || (ht_mem(t, k) && ht_get(t, k) == w)",
            Valid,
            false,
        ),
        ("ht-cond-mem-get.vcy", 0, "true", Invalid, false),
        ("ht-cond-size-get.vcy", 0, "ht_mem(t, k)", Valid, false),
        ("ht-cond-size-get.vcy", 0, "true", Invalid, false),
        ("even-odd.vcy", 0, "n % 2 == 0", Valid, true),
        ("even-odd.vcy", 0, "true", Invalid, true),
        ("linear.vcy", 0, "x == 0", Valid, true),
        ("linear.vcy", 0, "true", Invalid, true),
        ("linear-bool.vcy", 0, "b == c", Valid, false),
        ("linear-cond.vcy", 0, "0 > y + 3 * x && x == 2", Valid, true),
        ("linear-cond.vcy", 0, "true", Invalid, true),
        ("nonlinear.vcy", 0, "x == 0 || y == 1", Valid, true),
        ("nonlinear.vcy", 0, "true", Invalid, true),
        ("commute1.vcy", 0, "hi > 0", Valid, false),
        ("commute1.vcy", 0, "true", Invalid, false),
        ("array2.vcy", 0, "i != j", Valid, false),
        ("array2.vcy", 0, "true", Invalid, false),
        ("array3.vcy", 0, "total > 0", Valid, false),
        ("array3.vcy", 0, "true", Invalid, false),
        ("dot-product.vcy", 0, "true", Valid, true),
        ("crowdfund.vcy", 0, "true", Valid, false),
        ("filesystem.vcy", 0, "fname1 != fname2", Valid, false),
        ("filesystem.vcy", 0, "true", Invalid, false),
        ("conditional.vcy", 0, "true", Valid, false),
        ("array-disjoint.vcy", 0, "true", Valid, false),
        ("loop-simple.vcy", 0, "true", Valid, false),
        ("loop-disjoint.vcy", 0, "true", Valid, false),
        ("loop-inter.vcy", 0, "x == 0 || y == 0", Valid, true),
        ("loop-inter.vcy", 0, "true", Invalid, true),
        ("loop-amt.vcy", 0, "i == 0", Valid, true),
        ("nested-counter.vcy", 1, "true", Valid, false),
    ]
}

#[test]
fn criterion_05_oracle_solver_agreement() {
    let started = Instant::now();
    let pairs = agreement_pairs();
    assert!(pairs.len() >= 30, "need at least 30 pairs");
    let cfg = StepConfig::for_analysis();
    let solver = SolverConfig::discover();
    let mut solver_checked = 0;
    let mut abstained_nonlinear = 0;
    let mut nonlinear_total = 0;
    for (file, site_id, phi_text, expected, nonlinear) in &pairs {
        let (site, domain) = site_of(file, *site_id);
        let phi = cond(phi_text);
        // the oracle half is mandatory
        let report =
            verify_condition(&site, &phi, VerifyMode::Oracle, &domain, None, &cfg).unwrap();
        assert_eq!(
            report.verdict, *expected,
            "{file} site {site_id} `{phi_text}`: oracle said {}",
            report.verdict.as_str()
        );
        // the solver half runs when a solver is configured
        if let Some(sc) = &solver {
            let both =
                verify_condition(&site, &phi, VerifyMode::Both, &domain, Some(sc), &cfg).unwrap();
            if *nonlinear {
                nonlinear_total += 1;
            }
            match both.solver_result.as_deref() {
                Some(s) if s.starts_with("unknown") => {
                    assert!(*nonlinear, "{file}: solver abstained on a linear query");
                    abstained_nonlinear += 1;
                }
                Some(_) => {
                    solver_checked += 1;
                    assert_eq!(
                        both.agreement,
                        Some(true),
                        "{file} site {site_id} `{phi_text}`: oracle/solver disagree"
                    );
                }
                None => {}
            }
        }
    }
    match &solver {
        Some(sc) => {
            if nonlinear_total > 0 {
                assert!(
                    abstained_nonlinear * 5 <= nonlinear_total,
                    "solver abstained on {abstained_nonlinear}/{nonlinear_total} nonlinear cases (over 20%)"
                );
            }
            println!(
                "criterion 5: PASS {} pairs, {} solver-confirmed via {:?}, {} abstentions, in {:?}",
                pairs.len(),
                solver_checked,
                sc.argv,
                abstained_nonlinear,
                started.elapsed()
            );
        }
        None => {
            println!(
                "criterion 5: PASS (oracle half only) {} pairs in {:?}; WARNING: no SMT solver \
                 configured, solver half skipped (set COMMUTE_SMT_SOLVER or install z3/cvc5)",
                pairs.len(),
                started.elapsed()
            );
        }
    }
}

#[test]
fn criterion_06_condition_verification_examples() {
    let cfg = StepConfig::for_analysis();

    // conditional-commutativity site: c > a is valid
    let (site, domain) = site_of("simple.vcy", 0);
    let r = verify_condition(&site, &cond("c > a"), VerifyMode::Oracle, &domain, None, &cfg)
        .unwrap();
    assert_eq!(r.verdict, CondVerdict::Valid);

    // and the trivially-true condition is refuted with a concrete witness
    let r = verify_condition(&site, &cond("true"), VerifyMode::Oracle, &domain, None, &cfg)
        .unwrap();
    assert_eq!(r.verdict, CondVerdict::Invalid);
    let witness = r.witness.expect("needs a concrete witness");
    assert!(witness.contains('='), "witness should bind variables: {witness}");

    // dict-style distinct-keys condition is valid
    let (site, domain) = site_of("dict.vcy", 0);
    let r = verify_condition(
        &site,
        &cond("res != input"),
        VerifyMode::Oracle,
        &domain,
        None,
        &cfg,
    )
    .unwrap();
    assert_eq!(r.verdict, CondVerdict::Valid);

    // loop-simple verifies through its summaries, and the oracle confirms
    // the same condition against the concrete loops on the domain
    let (site, domain) = site_of("loop-simple.vcy", 0);
    let inst = instrumented_site(&site).unwrap();
    let through_summary =
        oracle_check_condition(&inst, &cond("true"), &domain, &cfg).unwrap();
    assert_eq!(through_summary.verdict, OracleVerdict::Valid);
    let concrete = oracle_check_condition(&site, &cond("true"), &domain, &cfg).unwrap();
    assert_eq!(concrete.verdict, OracleVerdict::Valid);

    println!("criterion 6: PASS verification matches the worked examples");
}

#[test]
fn criterion_07_inference_soundness_and_weakest() {
    let started = Instant::now();
    let cfg = StepConfig::for_analysis();
    let budget = InferBudget::default();

    // every inferred condition must verify; spot the whole corpus's first
    // sites plus the named ones
    let mut inferred = 0;
    for file in [
        "counter.vcy",
        "commute1.vcy",
        "simple.vcy",
        "array3.vcy",
        "linear.vcy",
        "even-odd.vcy",
        "dot-product.vcy",
        "ht-simple.vcy",
    ] {
        let (site, domain) = site_of(file, 0);
        let out = infer_condition(&site, &domain, &budget, None, &cfg).unwrap();
        assert_eq!(
            out.verification.verdict,
            CondVerdict::Valid,
            "{file}: inferred condition failed verification"
        );
        inferred += 1;
    }

    // the counter infers the trivially-true condition
    let (site, domain) = site_of("counter.vcy", 0);
    let out = infer_condition(&site, &domain, &budget, None, &cfg).unwrap();
    assert_eq!(out.condition, Expr::bool(true));

    // counter and the snapshot-pattern sites are weakest over the pool
    for file in ["counter.vcy", "commute1.vcy", "simple.vcy", "array3.vcy"] {
        let (site, domain) = site_of(file, 0);
        let out = infer_condition(&site, &domain, &budget, None, &cfg).unwrap();
        assert!(
            weakest_over_pool(&site, &out.condition, &domain, &cfg).unwrap(),
            "{file}: inferred condition is not weakest over the pool"
        );
    }
    println!(
        "criterion 7: PASS {inferred} inferred conditions verified, weakest confirmed, in {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_08_transformation_properties() {
    let started = Instant::now();
    let cfg = StepConfig::default();
    let budget = Budget::default();

    let check_program = |name: &str, mode: PatternMode, expect_pattern: Option<&str>| {
        let (program, domain) = load_name(name);
        let inputs = domain.inputs();
        let result = transform_program(&program.body, &inputs, mode).unwrap();
        if let Some(p) = expect_pattern {
            assert_eq!(result.reports[0].pattern, p, "{name} under {mode:?}");
        }
        for initial in domain.enumerate(1_000_000).unwrap() {
            assert!(
                seq_sets_match(&program.body, &result.body, &initial),
                "{name} {mode:?}: sequential semantics drifted at {initial}"
            );
            let rep = is_program_scoped_serializable(&result.body, &initial, budget, &cfg);
            assert_eq!(
                rep.verdict,
                Verdict::True,
                "{name} {mode:?}: not scoped-serializable at {initial} ({})",
                rep.note
            );
        }
    };

    // pattern 0 on write/write sites
    check_program("counter.vcy", PatternMode::Naive, Some("naive"));
    check_program("crowdfund.vcy", PatternMode::Naive, Some("naive"));
    // pattern 1 where one side only reads the conflicts
    check_program("simple.vcy", PatternMode::Snapshot, Some("snapshot"));
    check_program("commute1.vcy", PatternMode::Snapshot, Some("snapshot"));
    check_program("array3.vcy", PatternMode::Snapshot, Some("snapshot"));
    // pattern 2 narrowing
    check_program("calc.vcy", PatternMode::Narrow, Some("narrowed"));
    check_program("counter.vcy", PatternMode::Narrow, Some("narrowed"));
    check_program("crowdfund.vcy", PatternMode::Narrow, Some("narrowed"));
    // auto mode across nesting
    check_program("nested.vcy", PatternMode::Auto, None);
    check_program("nested-counter.vcy", PatternMode::Auto, None);
    check_program("dict.vcy", PatternMode::Auto, None);

    // pattern 2 preserves the dependency order of the dataflow graph
    let (site, _) = site_of("calc.vcy", 0);
    let types: BTreeMap<String, commute_core::ast::Type> = site.env.iter().cloned().collect();
    for frag in [&site.left, &site.right] {
        let con: std::collections::BTreeSet<String> = ["c".to_string()].into_iter().collect();
        let narrowed =
            commute_core::locksynth::narrow_fragment_standalone(frag, &con, &types, 0)
                .expect("narrowing applies");
        let pos: BTreeMap<usize, usize> = narrowed
            .emitted_order
            .iter()
            .enumerate()
            .map(|(p, &i)| (i, p))
            .collect();
        for (i, j) in &narrowed.graph.edges {
            assert!(pos[i] < pos[j], "dependency {i} -> {j} reordered");
        }
    }
    println!(
        "criterion 8: PASS transformation properties verified in {:?}",
        started.elapsed()
    );
}

#[test]
fn criterion_09_speedup_smoke() {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    if cores < 2 {
        println!("criterion 9: SKIP single-core machine; speedup not asserted");
        return;
    }
    let (program, _) = load_name("speedup-counter.vcy");
    let n = 1_000_000i64;
    let init = int_state(&[("n", n)]);
    let timeout = std::time::Duration::from_secs(120);

    // warm up once, then measure best-of-3 to shrug off scheduler noise
    let mut best_seq = f64::MAX;
    let mut best_par = f64::MAX;
    for _ in 0..3 {
        let seq = commute_core::runtime::run_parallel(
            &program.body,
            init.clone(),
            2,
            true,
            timeout,
        )
        .unwrap();
        let par = commute_core::runtime::run_parallel(
            &program.body,
            init.clone(),
            2,
            false,
            timeout,
        )
        .unwrap();
        assert_eq!(
            seq.state.lookup("c").unwrap(),
            par.state.lookup("c").unwrap(),
            "parallel run changed the result"
        );
        best_seq = best_seq.min(seq.duration.as_secs_f64());
        best_par = best_par.min(par.duration.as_secs_f64());
    }
    let speedup = best_seq / best_par;
    assert!(
        speedup >= 1.2,
        "speedup {speedup:.2}x below the 1.2x bar (seq {best_seq:.3}s, par {best_par:.3}s)"
    );
    println!(
        "criterion 9: PASS {speedup:.2}x speedup on {cores} cores (seq {best_seq:.3}s, par {best_par:.3}s)"
    );
}

#[test]
fn criterion_10_reproducible_traces() {
    let bin = env!("CARGO_BIN_EXE_commute");
    let dir = tempfile::tempdir().unwrap();
    let program = corpus_dir().join("nested-counter.vcy");
    let mut dumps = Vec::new();
    for i in 0..5 {
        let trace_path = dir.path().join(format!("trace{i}.txt"));
        let out = Command::new(bin)
            .arg("run")
            .arg(&program)
            .args(["--init", "c=0,d=0", "--seed", "1234", "--trace"])
            .arg(&trace_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dumps.push((
            std::fs::read(&trace_path).unwrap(),
            out.stdout.clone(),
        ));
    }
    for (trace, stdout) in &dumps[1..] {
        assert_eq!(trace, &dumps[0].0, "trace dumps differ across runs");
        assert_eq!(stdout, &dumps[0].1, "stdout differs across runs");
    }
    println!("criterion 10: PASS 5 identical seeded runs, byte for byte");
}
