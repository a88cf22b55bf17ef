//! Cross-module analyses over the corpus: the scoped-serial/nd agreement,
//! the nested-block separation story, loop-summary cross-checks, and
//! transformation correctness on representative sites.

use commute_core::commutativity::extract_sites;
use commute_core::commutativity::oracle::{commutes_at, oracle_check_condition, OracleVerdict};
use commute_core::commutativity::verify::instrumented_site;
use commute_core::explorer::{accessible_vars, bigstep, Budget, DomainSpec, Semantics};
use commute_core::par::{enabled_steps, Configuration, FragmentLabel};
use commute_core::parser::parse_program;
use commute_core::printer::print_program;
use commute_core::serializability::{
    is_adapted_serial, is_program_scoped_serializable, is_scoped_serial, scoped_serial_finals,
    Verdict,
};
use commute_core::state::ScopedState;
use commute_core::stepper::StepConfig;
use commute_core::value::Value;

fn corpus_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus"))
}

fn corpus_files() -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().map(|e| e == "vcy").unwrap_or(false))
        .collect();
    files.sort();
    files
}

fn load(path: &std::path::Path) -> (commute_core::ast::Program, DomainSpec) {
    let src = std::fs::read_to_string(path).unwrap();
    let program = parse_program(&src).unwrap_or_else(|e| panic!("{path:?}: {e:?}"));
    let domain = program
        .domain
        .as_ref()
        .map(|d| DomainSpec::parse(&d.text).unwrap())
        .unwrap_or_default();
    (program, domain)
}

#[test]
fn corpus_parses_prints_and_reparses_stably() {
    for path in corpus_files() {
        let (p1, _) = load(&path);
        let printed = print_program(&p1);
        let p2 = parse_program(&printed)
            .unwrap_or_else(|e| panic!("{path:?} reparse: {e:?}\n{printed}"));
        assert_eq!(p1, p2, "{path:?} round trip");
    }
}

#[test]
fn scoped_serial_finals_equal_nd_finals_on_corpus() {
    // the final states of scoped-serial executions coincide with the nd
    // denotation; checked extensionally per initial state
    let cfg = StepConfig::default();
    let budget = Budget::default();
    for path in corpus_files() {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let (program, domain) = load(&path);
        let initials = domain.enumerate(100_000).unwrap();
        for initial in initials.iter().take(8) {
            let nd = bigstep(&program.body, initial, Semantics::Nd, budget, &cfg);
            let ordered = scoped_serial_finals(&program.body, initial, budget, &cfg);
            let nd_keys: Vec<_> = nd.finals.keys().collect();
            let ordered_keys: Vec<_> = ordered.finals.keys().collect();
            assert_eq!(nd_keys, ordered_keys, "{name} at {initial}");
        }
    }
}

fn drive_label(text: &str) -> FragmentLabel {
    FragmentLabel::parse(text).unwrap()
}

// Depth-first enumeration of complete executions with their label history
// (dedup-free: the property is about executions, not states).
fn executions_with<F: FnMut(&[FragmentLabel], &ScopedState)>(
    config: Configuration,
    cfg: &StepConfig,
    labels: &mut Vec<FragmentLabel>,
    depth_left: usize,
    visit: &mut F,
) {
    if let Some(final_state) = config.final_state() {
        visit(labels, &final_state);
        return;
    }
    if depth_left == 0 {
        return;
    }
    for step in enabled_steps(&config, cfg).unwrap() {
        labels.push(step.label.fr.clone());
        executions_with(step.next, cfg, labels, depth_left - 1, visit);
        labels.pop();
    }
}

#[test]
fn nested_block_separates_scoped_from_adapted_serializability() {
    let (program, _) = load(&corpus_dir().join("nested.vcy"));
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let initial = ScopedState::new();

    // nd keeps the final state unique
    let nd = bigstep(&program.body, &initial, Semantics::Nd, budget, &cfg);
    assert_eq!(nd.finals.len(), 1);
    let nd_final = nd.finals.values().next().unwrap();
    assert_eq!(nd_final.lookup("x").unwrap(), &Value::Int(0));
    assert_eq!(nd_final.lookup("y").unwrap(), &Value::Int(0));

    // par reaches a state nd cannot; some such execution keeps each
    // fragment contiguous (adapted-serial) while interleaving the nested
    // scopes (not scoped-serial)
    let mut found = false;
    let mut labels = Vec::new();
    executions_with(
        Configuration::initial(&program.body, initial.clone()),
        &cfg,
        &mut labels,
        24,
        &mut |labels, final_state| {
            if found {
                return;
            }
            let x = final_state.lookup("x").unwrap().clone();
            let y = final_state.lookup("y").unwrap().clone();
            if x == Value::Int(0) && y == Value::Int(1) {
                let scoped = is_scoped_serial(labels);
                let adapted = is_adapted_serial(labels);
                if adapted.serial && !scoped.serial {
                    found = true;
                }
            }
        },
    );
    assert!(
        found,
        "no adapted-but-not-scoped execution ending x=0, y=1 found"
    );

    // and the program as a whole is not scoped-serializable
    let rep = is_program_scoped_serializable(&program.body, &initial, budget, &cfg);
    assert_eq!(rep.verdict, Verdict::False);
    assert!(rep.counterexample.is_some());
}

#[test]
fn execution_level_scoped_serializability_verdicts() {
    use commute_core::par::{run_recorded, Scheduler};
    use commute_core::serializability::is_scoped_serializable_execution;
    let (program, _) = load(&corpus_dir().join("nested.vcy"));
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let initial = ScopedState::new();

    // a left-to-completion run is its own scoped-serial witness
    let serial = run_recorded(&program.body, initial.clone(), Scheduler::Leftmost, &cfg, 1000)
        .unwrap();
    assert_eq!(
        is_scoped_serializable_execution(&serial, &program.body, &initial, budget, &cfg),
        Verdict::True
    );

    // hunt a seeded run that lands in the par-only final state; its
    // execution is not scoped-serializable
    let mut refuted = false;
    for seed in 0..500 {
        let exec = run_recorded(
            &program.body,
            initial.clone(),
            Scheduler::Seeded(seed),
            &cfg,
            1000,
        )
        .unwrap();
        let f = exec.final_config().final_state().unwrap();
        if f.lookup("y").unwrap() == &Value::Int(1) {
            assert_eq!(
                is_scoped_serializable_execution(&exec, &program.body, &initial, budget, &cfg),
                Verdict::False
            );
            refuted = true;
            break;
        }
    }
    assert!(refuted, "no seeded run reached the par-only final state");
}

#[test]
fn scoped_serial_check_ignores_effect_payloads() {
    // the published interleaving shape: one inner-fragment step, the
    // co-fragment's steps, then the other inner fragment
    let trace = [
        drive_label("-"),
        drive_label("L0R0"),
        drive_label("R0"),
        drive_label("R0"),
        drive_label("L0L0"),
    ];
    let v = is_scoped_serial(&trace);
    assert!(!v.serial);
    let violation = v.violation.unwrap();
    assert_eq!((violation.prefix.as_str(), violation.index), ("-", 0));
    assert!(is_adapted_serial(&trace).serial);
}

#[test]
fn loop_summaries_agree_with_concrete_loops_on_their_domain() {
    let (program, domain) = load(&corpus_dir().join("loop-simple.vcy"));
    let cfg = StepConfig::for_analysis();
    let site = extract_sites(&program.body, &domain.inputs())
        .unwrap()
        .remove(0);
    let inst = instrumented_site(&site).unwrap();
    // the instrumented site must agree with the concrete loops on every
    // domain state and either fragment order
    let states = commute_core::commutativity::oracle::enumerate_site_states(&site, &domain)
        .unwrap();
    for st in &states {
        let concrete = commutes_at(&site, st, &cfg);
        let summarized = commutes_at(&inst, st, &cfg);
        assert_eq!(concrete, summarized, "at {st}");
    }
    // and the trivially-true condition verifies both ways
    for s in [&site, &inst] {
        let r = oracle_check_condition(s, &commute_core::ast::Expr::bool(true), &domain, &cfg)
            .unwrap();
        assert_eq!(r.verdict, OracleVerdict::Valid);
    }
}

#[test]
fn imprecise_summary_is_rejected_rather_than_trusted() {
    // a summary that under-constrains the result makes the embedded
    // fragment nondeterministic, so even the concrete-commutative pair
    // fails the instrumented oracle check
    let src = "// @domain x:int[0..2], k:int[0..1]\n\
               commute(true) { {\n\
               // @summary modifies x: x >= 0\n\
               while (x > 0) { x = x - 1; }\n\
               } { k = k + 1; } }";
    let program = parse_program(src).unwrap();
    let domain = DomainSpec::parse("x:int[0..2], k:int[0..1]").unwrap();
    let site = extract_sites(&program.body, &domain.inputs())
        .unwrap()
        .remove(0);
    let cfg = StepConfig::for_analysis();
    // concrete loops: always commute
    let concrete = oracle_check_condition(
        &site,
        &commute_core::ast::Expr::bool(true),
        &domain,
        &cfg,
    )
    .unwrap();
    assert_eq!(concrete.verdict, OracleVerdict::Valid);
    // summarized: x is only constrained to be non-negative, so the two
    // orders can disagree and verification fails
    let inst = instrumented_site(&site).unwrap();
    let summarized =
        oracle_check_condition(&inst, &commute_core::ast::Expr::bool(true), &domain, &cfg)
            .unwrap();
    assert!(matches!(summarized.verdict, OracleVerdict::Invalid { .. }));
}

#[test]
fn transformed_simple_site_keeps_seq_semantics_and_gains_scoped_ser() {
    let (program, domain) = load(&corpus_dir().join("simple.vcy"));
    let inputs = domain.inputs();
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let result = commute_core::locksynth::transform_program(
        &program.body,
        &inputs,
        commute_core::locksynth::PatternMode::Auto,
    )
    .unwrap();
    assert_eq!(result.reports[0].pattern, "snapshot");
    let initials = domain.enumerate(100_000).unwrap();
    for initial in &initials {
        let before = bigstep(&program.body, initial, Semantics::Seq, budget, &cfg);
        let after = bigstep(&result.body, initial, Semantics::Seq, budget, &cfg);
        // snapshot variables are fresh, so they are outside the original's
        // accessible set; compare on the original's variables
        let acc = accessible_vars(&program.body, initial);
        let keys = |r: &commute_core::explorer::BigstepReport| {
            let mut ks: Vec<String> =
                r.finals.values().map(|s| s.observable_key(&acc)).collect();
            ks.sort();
            ks.dedup();
            ks
        };
        assert_eq!(keys(&before), keys(&after), "seq drift at {initial}");
        let rep = is_program_scoped_serializable(&result.body, initial, budget, &cfg);
        assert_eq!(rep.verdict, Verdict::True, "not serializable at {initial}");
    }
}

#[test]
fn dedup_exploration_matches_naive_tree_enumeration() {
    // memoizing on configurations must not change the final-state set;
    // cross-checked against a dedup-free depth-first enumeration
    let cfg = StepConfig::default();
    let budget = Budget::default();
    let cases = [
        ("nested.vcy", 0usize),
        ("counter.vcy", 3),
        ("linear-bool.vcy", 3),
        ("dot-product.vcy", 2),
    ];
    for (name, take) in cases {
        let (program, domain) = load(&corpus_dir().join(name));
        let initials = domain.enumerate(100_000).unwrap();
        let picked: Vec<ScopedState> = if take == 0 {
            vec![ScopedState::new()]
        } else {
            initials.into_iter().take(take).collect()
        };
        for initial in picked {
            let deduped = bigstep(&program.body, &initial, Semantics::Par, budget, &cfg);
            let acc = accessible_vars(&program.body, &initial);
            let mut naive: Vec<String> = Vec::new();
            let mut labels = Vec::new();
            executions_with(
                Configuration::initial(&program.body, initial.clone()),
                &cfg,
                &mut labels,
                60,
                &mut |_, final_state| {
                    naive.push(final_state.observable_key(&acc));
                },
            );
            naive.sort();
            naive.dedup();
            let mut deduped_keys: Vec<String> = deduped.finals.keys().cloned().collect();
            deduped_keys.sort();
            assert_eq!(deduped_keys, naive, "{name} at {initial}");
        }
    }
}

#[test]
fn valid_conditions_make_nd_deterministic_across_corpus() {
    // when every guard is a verified commutativity condition, the nd
    // final-state set is a singleton from every start
    let cfg = StepConfig::for_analysis();
    let budget = Budget::default();
    for path in corpus_files() {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let (program, domain) = load(&path);
        let sites = extract_sites(&program.body, &domain.inputs()).unwrap();
        if sites.is_empty() {
            continue;
        }
        let all_valid = sites.iter().all(|site| {
            matches!(
                oracle_check_condition(site, &site.guard.clone(), &domain, &cfg),
                Ok(rep) if matches!(rep.verdict, OracleVerdict::Valid)
            )
        });
        if !all_valid {
            continue;
        }
        let initials = domain.enumerate(100_000).unwrap();
        let rep = commute_core::explorer::check_nd_determinism(
            &program.body,
            &initials,
            budget,
            &StepConfig::default(),
        );
        assert!(rep.deterministic, "{name}: witness {:?}", rep.witness);
    }
}

#[test]
fn condition_validity_is_monotone() {
    // strengthening a valid condition keeps it valid (spot checks)
    let cfg = StepConfig::default();
    let cases = [
        ("counter.vcy", "true", "c > 0"),
        ("simple.vcy", "c > a", "c > a && b > 0"),
        ("dict.vcy", "res != input", "res != input && x == 0"),
    ];
    for (file, weaker, stronger) in cases {
        let (program, domain) = load(&corpus_dir().join(file));
        let site = extract_sites(&program.body, &domain.inputs())
            .unwrap()
            .remove(0);
        for phi in [weaker, stronger] {
            let phi = commute_core::parser::parse_expression(phi).unwrap();
            let rep = oracle_check_condition(&site, &phi, &domain, &cfg).unwrap();
            assert_eq!(rep.verdict, OracleVerdict::Valid, "{file}: {phi:?}");
        }
    }
}

#[test]
fn fast_runtime_final_state_is_par_reachable() {
    // at small problem sizes the multi-worker runtime must land inside
    // the exhaustively enumerated par final-state set
    let (program, _) = load(&corpus_dir().join("speedup-counter.vcy"));
    let cfg = StepConfig::default();
    let mut init = ScopedState::new();
    init.declare("n", Value::Int(2));
    let par = bigstep(&program.body, &init, Semantics::Par, Budget::default(), &cfg);
    let acc = accessible_vars(&program.body, &init);
    for workers in [1, 2, 4] {
        let out = commute_core::runtime::run_parallel(
            &program.body,
            init.clone(),
            workers,
            false,
            std::time::Duration::from_secs(30),
        )
        .unwrap();
        let key = out.state.observable_key(&acc);
        assert!(
            par.finals.values().any(|s| s.observable_key(&acc) == key),
            "workers={workers}: state {key} not par-reachable"
        );
    }
}

#[test]
fn oracle_confirms_guard_validity_across_hashtable_sites() {
    let cfg = StepConfig::default();
    for name in ["ht-simple.vcy", "ht-add-put.vcy", "ht-cond-size-get.vcy"] {
        let (program, domain) = load(&corpus_dir().join(name));
        let site = extract_sites(&program.body, &domain.inputs())
            .unwrap()
            .remove(0);
        let guard = site.guard.clone();
        let r = oracle_check_condition(&site, &guard, &domain, &cfg).unwrap();
        assert_eq!(r.verdict, OracleVerdict::Valid, "{name}");
        let r = oracle_check_condition(
            &site,
            &commute_core::ast::Expr::bool(true),
            &domain,
            &cfg,
        )
        .unwrap();
        assert!(
            matches!(r.verdict, OracleVerdict::Invalid { .. }),
            "{name} should not commute unconditionally"
        );
    }
}
