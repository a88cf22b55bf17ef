//! Scoped-serial and adapted-serial trace analyses, the bounded decision
//! procedures for scoped serializability of executions and programs, and the
//! desk-scale main-theorem check.

use crate::ast::Stmt;
use crate::commutativity::oracle::{oracle_check_condition, OracleVerdict};
use crate::commutativity::{extract_sites, CommuteSite};
use crate::explorer::{bigstep, Budget, DomainSpec, Semantics};
use crate::par::{
    enabled_steps, Configuration, Execution, FragmentLabel, LabelToken, Side, TransitionLabel,
};
use crate::state::ScopedState;
use crate::stepper::{
    apply_redex, decompose, plug, CommuteRule, Decomposition, Redex, Reduced, RuleName, StepConfig, StepResult,
};
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

/// Positions witnessing an interleaving: two same-group steps with an
/// opposite-group step between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialViolation {
    pub prefix: String,
    pub index: u32,
    pub first: usize,
    pub middle: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialVerdict {
    pub serial: bool,
    pub violation: Option<SerialViolation>,
}

/// Scoped-serial check over fragment labels only: for every prefix `p` and
/// subscript `k`, all steps under `p·L_k` precede all steps under `p·R_k`,
/// or the other way around. Prefixes that never occur hold vacuously.
pub fn is_scoped_serial(labels: &[FragmentLabel]) -> SerialVerdict {
    // group step positions by (prefix, subscript at that depth, side)
    type Key = (Vec<LabelToken>, u32);
    let mut groups: BTreeMap<Key, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (pos, label) in labels.iter().enumerate() {
        for depth in 0..label.0.len() {
            let prefix = label.0[..depth].to_vec();
            let tok = label.0[depth];
            let entry = groups.entry((prefix, tok.index)).or_default();
            match tok.side {
                Side::Left => entry.0.push(pos),
                Side::Right => entry.1.push(pos),
            }
        }
    }
    for ((prefix, index), (ls, rs)) in &groups {
        if let Some(v) = interleaving_witness(ls, rs) {
            return SerialVerdict {
                serial: false,
                violation: Some(SerialViolation {
                    prefix: FragmentLabel(prefix.clone()).render(),
                    index: *index,
                    first: v.0,
                    middle: v.1,
                    last: v.2,
                }),
            };
        }
    }
    SerialVerdict {
        serial: true,
        violation: None,
    }
}

/// Serializability adapted to nesting: for every two label paths where
/// neither is a prefix of the other, one path's steps all precede the
/// other's. Transitions whose label properly prefixes another occurring
/// label belong to a thread with children; such a thread necessarily
/// brackets its children's steps, so only maximal (leaf-thread) labels are
/// compared.
pub fn is_adapted_serial(labels: &[FragmentLabel]) -> SerialVerdict {
    let mut positions: BTreeMap<&FragmentLabel, Vec<usize>> = BTreeMap::new();
    for (pos, label) in labels.iter().enumerate() {
        if !label.is_top() {
            positions.entry(label).or_default().push(pos);
        }
    }
    let interior: Vec<&FragmentLabel> = positions
        .keys()
        .filter(|p| {
            positions
                .keys()
                .any(|q| q.0.len() > p.0.len() && q.has_prefix(&p.0))
        })
        .copied()
        .collect();
    for p in interior {
        positions.remove(p);
    }
    let keys: Vec<&FragmentLabel> = positions.keys().copied().collect();
    for (i, p) in keys.iter().enumerate() {
        for q in keys.iter().skip(i + 1) {
            if p.has_prefix(&q.0) || q.has_prefix(&p.0) {
                continue;
            }
            if let Some(v) = interleaving_witness(&positions[*p], &positions[*q]) {
                return SerialVerdict {
                    serial: false,
                    violation: Some(SerialViolation {
                        prefix: format!("{} / {}", p.render(), q.render()),
                        index: 0,
                        first: v.0,
                        middle: v.1,
                        last: v.2,
                    }),
                };
            }
        }
    }
    SerialVerdict {
        serial: true,
        violation: None,
    }
}

// Returns (first, middle, last) positions when the two groups interleave.
fn interleaving_witness(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (amin, amax) = (*a.iter().min().unwrap(), *a.iter().max().unwrap());
    let (bmin, bmax) = (*b.iter().min().unwrap(), *b.iter().max().unwrap());
    if amax < bmin || bmax < amin {
        return None;
    }
    // one group straddles a step of the other
    if let Some(&mid) = b.iter().find(|&&p| amin < p && p < amax) {
        let last = *a.iter().find(|&&p| p > mid).unwrap();
        return Some((amin, mid, last));
    }
    if let Some(&mid) = a.iter().find(|&&p| bmin < p && p < bmax) {
        let last = *b.iter().find(|&&p| p > mid).unwrap();
        return Some((bmin, mid, last));
    }
    // groups overlap without straddling: adjacent mins/maxes interleave
    if amin < bmin {
        Some((amin, bmin, amax))
    } else {
        Some((bmin, amin, bmax))
    }
}

pub fn execution_labels(execution: &Execution) -> Vec<FragmentLabel> {
    execution
        .steps
        .iter()
        .map(|(l, _, _)| l.fr.clone())
        .collect()
}

// ---- scoped-serial final states ----

#[derive(Debug, Clone, Default)]
pub struct OrderedFinals {
    pub finals: BTreeMap<String, ScopedState>,
    pub complete: bool,
    pub errors: Vec<String>,
}

struct Fuel {
    left: usize,
    incomplete: bool,
}

/// Final states of all scoped-serial executions: at every fork, one
/// fragment runs to completion in a fresh scope before its co-fragment
/// starts, in either order. This is the honest enumeration the scoped
/// serializability decisions compare against.
pub fn scoped_serial_finals(
    program: &Stmt,
    initial: &ScopedState,
    budget: Budget,
    cfg: &StepConfig,
) -> OrderedFinals {
    let accessible = crate::explorer::accessible_vars(program, initial);
    let mut fuel = Fuel {
        left: budget.max_steps.saturating_mul(4),
        incomplete: false,
    };
    let mut out = OrderedFinals {
        complete: true,
        ..Default::default()
    };
    let finals = run_ordered(program, initial.clone(), cfg, &mut fuel, &mut out.errors);
    for st in finals {
        out.finals.entry(st.observable_key(&accessible)).or_insert(st);
    }
    out.complete = !fuel.incomplete;
    out
}

fn run_ordered(
    stmt: &Stmt,
    state: ScopedState,
    cfg: &StepConfig,
    fuel: &mut Fuel,
    errors: &mut Vec<String>,
) -> Vec<ScopedState> {
    let mut finals = Vec::new();
    let mut worklist: Vec<(Stmt, ScopedState)> = vec![(stmt.clone(), state)];
    while let Some((s, st)) = worklist.pop() {
        if fuel.left == 0 {
            fuel.incomplete = true;
            return finals;
        }
        fuel.left -= 1;
        let (ctx, redex) = match decompose(&s) {
            Decomposition::AlreadyValue => {
                finals.push(st);
                continue;
            }
            Decomposition::Stuck(msg) => {
                push_error(errors, msg);
                continue;
            }
            Decomposition::Redex(ctx, r) => (ctx, r),
        };
        if let Redex::CommuteTrue { left, right, .. } = &redex {
            let cont = plug(&ctx, Reduced::S(Stmt::Skip));
            for (first, second) in [(left, right), (right, left)] {
                for mid in run_fragment(first, &st, cfg, fuel, errors) {
                    for done in run_fragment(second, &mid, cfg, fuel, errors) {
                        worklist.push((cont.clone(), done));
                    }
                }
            }
            continue;
        }
        match apply_redex(&ctx, &redex, &st, cfg, CommuteRule::SeqOnly) {
            Ok(StepResult::Done) => finals.push(st),
            Ok(StepResult::Blocked(_)) => {}
            Ok(StepResult::Next(outs)) => {
                for o in outs {
                    worklist.push((o.stmt, o.state));
                }
            }
            Err(e) => push_error(errors, e.to_string()),
        }
    }
    finals
}

// Run one fragment to completion inside a fresh scope that is discarded on
// exit, mirroring fork-then-immediate-join of that fragment.
fn run_fragment(
    frag: &Stmt,
    state: &ScopedState,
    cfg: &StepConfig,
    fuel: &mut Fuel,
    errors: &mut Vec<String>,
) -> Vec<ScopedState> {
    let mut st = state.clone();
    st.push_frame();
    run_ordered(frag, st, cfg, fuel, errors)
        .into_iter()
        .map(|mut s| {
            s.pop_frame();
            s
        })
        .collect()
}

fn push_error(errors: &mut Vec<String>, msg: String) {
    if !errors.contains(&msg) {
        errors.push(msg);
    }
}

// ---- execution- and program-level decisions ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    True,
    False,
    Unknown,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::True => "true",
            Verdict::False => "false",
            Verdict::Unknown => "unknown",
        }
    }
}

/// Is the final state of `execution` matched by some scoped-serial
/// execution of the same program from the same start?
pub fn is_scoped_serializable_execution(
    execution: &Execution,
    program: &Stmt,
    initial: &ScopedState,
    budget: Budget,
    cfg: &StepConfig,
) -> Verdict {
    let final_state = match execution.final_config().final_state() {
        Some(st) => st,
        None => return Verdict::Unknown,
    };
    let accessible = crate::explorer::accessible_vars(program, initial);
    let ordered = scoped_serial_finals(program, initial, budget, cfg);
    if ordered.finals.contains_key(&final_state.observable_key(&accessible)) {
        Verdict::True
    } else if ordered.complete {
        Verdict::False
    } else {
        Verdict::Unknown
    }
}

#[derive(Debug, Clone)]
pub struct ProgramScopedSerReport {
    pub verdict: Verdict,
    /// Shortest counterexample execution found (BFS order).
    pub counterexample: Option<Execution>,
    pub explored: usize,
    pub note: String,
}

/// Exhaustive bounded check that every par execution's final state is
/// matched by a scoped-serial execution.
pub fn is_program_scoped_serializable(
    program: &Stmt,
    initial: &ScopedState,
    budget: Budget,
    cfg: &StepConfig,
) -> ProgramScopedSerReport {
    let accessible = crate::explorer::accessible_vars(program, initial);
    let ordered = scoped_serial_finals(program, initial, budget, cfg);
    let start = Configuration::initial(program, initial.clone());
    let start_key = start.dedup_key();

    // BFS with parent pointers so the first bad final yields a shortest
    // counterexample execution.
    let mut parents: HashMap<String, (String, TransitionLabel, RuleName, Configuration)> =
        HashMap::new();
    let mut visited: HashSet<String> = HashSet::new();
    let mut frontier = VecDeque::new();
    visited.insert(start_key.clone());
    frontier.push_back((start.clone(), start_key.clone(), 0usize));
    let mut explored = 0usize;
    let mut complete = ordered.complete;

    while let Some((config, key, depth)) = frontier.pop_front() {
        explored += 1;
        if explored > budget.max_visited {
            complete = false;
            break;
        }
        if let Some(final_state) = config.final_state() {
            if !ordered.finals.contains_key(&final_state.observable_key(&accessible)) {
                let exec = reconstruct(&parents, &start, key);
                return ProgramScopedSerReport {
                    verdict: Verdict::False,
                    counterexample: Some(exec),
                    explored,
                    note: format!(
                        "final state {} unreachable by any scoped-serial execution",
                        final_state.observable_key(&accessible)
                    ),
                };
            }
            continue;
        }
        if depth >= budget.max_steps {
            complete = false;
            continue;
        }
        match enabled_steps(&config, cfg) {
            Ok(steps) => {
                for s in steps {
                    let k = s.next.dedup_key();
                    if visited.insert(k.clone()) {
                        parents.insert(
                            k.clone(),
                            (key.clone(), s.label.clone(), s.rule, s.next.clone()),
                        );
                        frontier.push_back((s.next, k, depth + 1));
                    }
                }
            }
            Err(e) => {
                return ProgramScopedSerReport {
                    verdict: Verdict::Unknown,
                    counterexample: None,
                    explored,
                    note: format!("runtime error during exploration: {e}"),
                };
            }
        }
    }
    ProgramScopedSerReport {
        verdict: if complete { Verdict::True } else { Verdict::Unknown },
        counterexample: None,
        explored,
        note: if complete {
            "all par finals matched by scoped-serial executions".to_string()
        } else {
            "budget exhausted before the state space was covered".to_string()
        },
    }
}

fn reconstruct(
    parents: &HashMap<String, (String, TransitionLabel, RuleName, Configuration)>,
    start: &Configuration,
    mut key: String,
) -> Execution {
    let mut rev = Vec::new();
    while let Some((pkey, label, rule, config)) = parents.get(&key) {
        rev.push((label.clone(), *rule, config.clone()));
        key = pkey.clone();
    }
    rev.reverse();
    Execution {
        initial: start.clone(),
        steps: rev,
    }
}

// ---- main theorem at desk scale ----

#[derive(Debug, Clone)]
pub struct MainTheoremReport {
    pub conditions_valid: Verdict,
    pub condition_witness: Option<String>,
    pub scoped_serializable: Verdict,
    pub seq_eq_par: Verdict,
    pub verdict: MainTheoremVerdict,
    pub states_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MainTheoremVerdict {
    /// Hypotheses hold and the conclusion was confirmed on the domain.
    Confirmed,
    /// A hypothesis failed; the theorem makes no claim.
    HypothesisFailed(String),
    /// Hypotheses hold but seq and par disagree: a toolkit bug.
    Violation(String),
    Unknown(String),
}

/// Check the sufficient condition for parallelizability on a finite domain:
/// if every commute guard is a valid commutativity condition and the
/// program is scoped-serializable, then the seq and par final-state sets
/// must coincide.
pub fn check_main_theorem(
    program: &Stmt,
    sites: &[CommuteSite],
    domain: &DomainSpec,
    initials: &[ScopedState],
    budget: Budget,
    cfg: &StepConfig,
) -> MainTheoremReport {
    let mut report = MainTheoremReport {
        conditions_valid: Verdict::True,
        condition_witness: None,
        scoped_serializable: Verdict::True,
        seq_eq_par: Verdict::Unknown,
        verdict: MainTheoremVerdict::Unknown(String::new()),
        states_checked: initials.len(),
    };

    for site in sites {
        match oracle_check_condition(site, &site.guard.clone(), domain, cfg) {
            Ok(r) => {
                if let OracleVerdict::Invalid { witness, .. } = r.verdict {
                    report.conditions_valid = Verdict::False;
                    report.condition_witness =
                        Some(format!("site {}: guard fails from {}", site.id, witness));
                    report.verdict = MainTheoremVerdict::HypothesisFailed(format!(
                        "commutativity condition of site {} is not valid",
                        site.id
                    ));
                    return report;
                }
            }
            Err(e) => {
                report.conditions_valid = Verdict::Unknown;
                report.verdict =
                    MainTheoremVerdict::Unknown(format!("oracle failed on site {}: {e}", site.id));
                return report;
            }
        }
    }

    for init in initials {
        let ser = is_program_scoped_serializable(program, init, budget, cfg);
        match ser.verdict {
            Verdict::False => {
                report.scoped_serializable = Verdict::False;
                report.verdict = MainTheoremVerdict::HypothesisFailed(
                    "program is not scoped-serializable".to_string(),
                );
                return report;
            }
            Verdict::Unknown => {
                report.scoped_serializable = Verdict::Unknown;
                report.verdict = MainTheoremVerdict::Unknown(ser.note);
                return report;
            }
            Verdict::True => {}
        }
    }

    for init in initials {
        let seq = bigstep(program, init, Semantics::Seq, budget, cfg);
        let par = bigstep(program, init, Semantics::Par, budget, cfg);
        if !seq.complete || !par.complete {
            report.seq_eq_par = Verdict::Unknown;
            report.verdict =
                MainTheoremVerdict::Unknown("budget exhausted comparing seq and par".to_string());
            return report;
        }
        if !seq.set_equal(&par) {
            report.seq_eq_par = Verdict::False;
            report.verdict = MainTheoremVerdict::Violation(format!(
                "seq finals {:?} differ from par finals {:?} at {}",
                seq.keys(),
                par.keys(),
                init.canonical_key()
            ));
            return report;
        }
    }
    report.seq_eq_par = Verdict::True;
    report.verdict = MainTheoremVerdict::Confirmed;
    report
}

/// Convenience wrapper extracting sites from a program body.
pub fn sites_of(program: &Stmt, inputs: &[(String, crate::ast::Type)]) -> Vec<CommuteSite> {
    extract_sites(program, inputs).unwrap_or_default()
}
