//! Bounded exhaustive enumeration of executions under the three semantics,
//! big-step denotations as final-state sets, the inclusion check, and the
//! finite input-domain mini-language.

use crate::ast::{Stmt, Type};
use crate::par::{enabled_steps, Configuration};
use crate::state::{Frame, ScopedState};
use crate::stepper::{step, CommuteRule, StepConfig, StepResult};
use crate::value::{HeapObject, Value};
use std::collections::{BTreeMap, HashSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    Seq,
    Nd,
    Par,
}

impl Semantics {
    pub fn parse(s: &str) -> Option<Semantics> {
        match s {
            "seq" => Some(Semantics::Seq),
            "nd" => Some(Semantics::Nd),
            "par" => Some(Semantics::Par),
            _ => None,
        }
    }
}

/// Exploration limits: per-path step budget and total visited-state cap.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub max_steps: usize,
    pub max_visited: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_steps: 100_000,
            max_visited: 1_000_000,
        }
    }
}

/// Final-state set of a bounded exhaustive exploration.
#[derive(Debug, Clone, Default)]
pub struct BigstepReport {
    /// Canonical key to a representative state.
    pub finals: BTreeMap<String, ScopedState>,
    pub complete: bool,
    pub visited: usize,
    pub deadlocks: usize,
    pub errors: Vec<String>,
}

/// Variables accessible at program end: the initially bound ones plus
/// every declaration outside commute fragments. State equality for
/// final-state sets is over these (fragment locals are out of scope, and
/// under nd they linger in the frame where par discards them).
pub fn accessible_vars(program: &Stmt, initial: &ScopedState) -> Vec<String> {
    let mut out: Vec<String> = initial.visible_vars().keys().cloned().collect();
    fn walk(s: &Stmt, out: &mut Vec<String>) {
        match s {
            Stmt::Seq(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            Stmt::If(_, t, e) => {
                walk(t, out);
                walk(e, out);
            }
            Stmt::While(_, b, _) => walk(b, out),
            Stmt::For(decls, _, upd, b) => {
                for (_, n, _) in decls {
                    out.push(n.clone());
                }
                walk(upd, out);
                walk(b, out);
            }
            Stmt::Decl(_, n, _) => out.push(n.clone()),
            // fragment-local declarations go out of scope at the join
            Stmt::Commute { .. } => {}
            _ => {}
        }
    }
    walk(program, &mut out);
    out.sort();
    out.dedup();
    out
}

impl BigstepReport {
    pub fn keys(&self) -> Vec<&String> {
        self.finals.keys().collect()
    }

    pub fn is_subset_of(&self, other: &BigstepReport) -> bool {
        self.finals.keys().all(|k| other.finals.contains_key(k))
    }

    pub fn set_equal(&self, other: &BigstepReport) -> bool {
        self.is_subset_of(other) && other.is_subset_of(self)
    }
}

/// The exact set of final states reachable within the budget.
pub fn bigstep(
    program: &Stmt,
    initial: &ScopedState,
    semantics: Semantics,
    budget: Budget,
    cfg: &StepConfig,
) -> BigstepReport {
    match semantics {
        Semantics::Seq => bigstep_flat(program, initial, CommuteRule::SeqOnly, budget, cfg),
        Semantics::Nd => bigstep_flat(program, initial, CommuteRule::BothOrders, budget, cfg),
        Semantics::Par => bigstep_par(program, initial, budget, cfg),
    }
}

fn bigstep_flat(
    program: &Stmt,
    initial: &ScopedState,
    rule: CommuteRule,
    budget: Budget,
    cfg: &StepConfig,
) -> BigstepReport {
    let accessible = accessible_vars(program, initial);
    let mut report = BigstepReport {
        complete: true,
        ..Default::default()
    };
    let mut visited: HashSet<String> = HashSet::new();
    let mut frontier: VecDeque<(Stmt, ScopedState, usize)> = VecDeque::new();
    frontier.push_back((program.clone(), initial.clone(), 0));
    while let Some((stmt, state, depth)) = frontier.pop_front() {
        // structural formatting: the pretty-printer is not injective
        // (-1 prints like the negation of 1)
        let key = format!(
            "{:?}\u{1}{:?}\u{1}{:?}\u{1}{:?}",
            stmt, state.frames, state.globals.heap.objects, state.globals.locks
        );
        if !visited.insert(key) {
            continue;
        }
        report.visited += 1;
        if report.visited > budget.max_visited {
            report.complete = false;
            break;
        }
        if depth >= budget.max_steps {
            report.complete = false;
            continue;
        }
        match step(&stmt, &state, cfg, rule) {
            Ok(StepResult::Done) => {
                report
                    .finals
                    .entry(state.observable_key(&accessible))
                    .or_insert(state);
            }
            Ok(StepResult::Blocked(reason)) => {
                // a failed assume filters the path; a held lock in a single
                // thread of control is a deadlock
                if matches!(reason, crate::stepper::BlockReason::LockHeld(_)) {
                    report.deadlocks += 1;
                }
            }
            Ok(StepResult::Next(outs)) => {
                for out in outs {
                    frontier.push_back((out.stmt, out.state, depth + 1));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                if !report.errors.contains(&msg) {
                    report.errors.push(msg);
                }
            }
        }
    }
    report
}

fn bigstep_par(
    program: &Stmt,
    initial: &ScopedState,
    budget: Budget,
    cfg: &StepConfig,
) -> BigstepReport {
    let accessible = accessible_vars(program, initial);
    let mut report = BigstepReport {
        complete: true,
        ..Default::default()
    };
    let mut visited: HashSet<String> = HashSet::new();
    let mut frontier: VecDeque<(Configuration, usize)> = VecDeque::new();
    frontier.push_back((Configuration::initial(program, initial.clone()), 0));
    while let Some((config, depth)) = frontier.pop_front() {
        if !visited.insert(config.dedup_key()) {
            continue;
        }
        report.visited += 1;
        if report.visited > budget.max_visited {
            report.complete = false;
            break;
        }
        if let Some(final_state) = config.final_state() {
            report
                .finals
                .entry(final_state.observable_key(&accessible))
                .or_insert(final_state);
            continue;
        }
        if depth >= budget.max_steps {
            report.complete = false;
            continue;
        }
        match enabled_steps(&config, cfg) {
            Ok(steps) => {
                if steps.is_empty() {
                    report.deadlocks += 1;
                } else {
                    for s in steps {
                        frontier.push_back((s.next, depth + 1));
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string();
                if !report.errors.contains(&msg) {
                    report.errors.push(msg);
                }
            }
        }
    }
    report
}

/// Inclusion verdict for one initial state: `seq ⊆ nd ⊆ par`, with set
/// witnesses on violation (a violation indicates a toolkit bug).
#[derive(Debug, Clone)]
pub struct InclusionReport {
    pub seq: BigstepReport,
    pub nd: BigstepReport,
    pub par: BigstepReport,
    pub seq_in_nd: bool,
    pub nd_in_par: bool,
    pub seq_singleton: bool,
    pub witnesses: Vec<String>,
}

impl InclusionReport {
    pub fn holds(&self) -> bool {
        self.seq_in_nd && self.nd_in_par && self.seq_singleton
    }
}

pub fn check_inclusion(
    program: &Stmt,
    initial: &ScopedState,
    budget: Budget,
    cfg: &StepConfig,
) -> InclusionReport {
    let seq = bigstep(program, initial, Semantics::Seq, budget, cfg);
    let nd = bigstep(program, initial, Semantics::Nd, budget, cfg);
    let par = bigstep(program, initial, Semantics::Par, budget, cfg);
    let seq_in_nd = seq.is_subset_of(&nd);
    let nd_in_par = nd.is_subset_of(&par);
    let seq_singleton = seq.finals.len() == 1 || !seq.errors.is_empty();
    let mut witnesses = Vec::new();
    if !seq_in_nd {
        for k in seq.finals.keys() {
            if !nd.finals.contains_key(k) {
                witnesses.push(format!("seq-only final: {k}"));
            }
        }
    }
    if !nd_in_par {
        for k in nd.finals.keys() {
            if !par.finals.contains_key(k) {
                witnesses.push(format!("nd-only final: {k}"));
            }
        }
    }
    InclusionReport {
        seq,
        nd,
        par,
        seq_in_nd,
        nd_in_par,
        seq_singleton,
        witnesses,
    }
}

/// ND-determinism over a domain of initial states: the nd final-state set
/// must be a singleton from every starting state.
#[derive(Debug, Clone)]
pub struct NdDeterminismReport {
    pub deterministic: bool,
    pub states_checked: usize,
    pub witness: Option<(String, Vec<String>)>,
    pub complete: bool,
}

pub fn check_nd_determinism(
    program: &Stmt,
    initials: &[ScopedState],
    budget: Budget,
    cfg: &StepConfig,
) -> NdDeterminismReport {
    let mut complete = true;
    for init in initials {
        let nd = bigstep(program, init, Semantics::Nd, budget, cfg);
        complete &= nd.complete;
        if nd.finals.len() > 1 {
            return NdDeterminismReport {
                deterministic: false,
                states_checked: initials.len(),
                witness: Some((
                    init.canonical_key(),
                    nd.finals.keys().cloned().collect(),
                )),
                complete,
            };
        }
    }
    NdDeterminismReport {
        deterministic: true,
        states_checked: initials.len(),
        witness: None,
        complete,
    }
}

// ---- input domains ----

#[derive(Debug, Clone, PartialEq)]
pub enum VarDomain {
    Int(Vec<i64>),
    Bool,
    Str(Vec<String>),
    Table {
        key: Box<VarDomain>,
        val: Box<VarDomain>,
        max_keys: usize,
    },
}

impl VarDomain {
    pub fn ty(&self) -> Type {
        match self {
            VarDomain::Int(_) => Type::Int,
            VarDomain::Bool => Type::Bool,
            VarDomain::Str(_) => Type::Str,
            VarDomain::Table { key, val, .. } => {
                Type::Hashtable(Box::new(key.ty()), Box::new(val.ty()))
            }
        }
    }

    fn scalar_values(&self) -> Vec<Value> {
        match self {
            VarDomain::Int(ns) => ns.iter().map(|n| Value::Int(*n)).collect(),
            VarDomain::Bool => vec![Value::Bool(false), Value::Bool(true)],
            VarDomain::Str(ss) => ss.iter().map(|s| Value::Str(s.clone())).collect(),
            VarDomain::Table { .. } => Vec::new(),
        }
    }

    /// Key universe of a table domain.
    pub fn table_keys(&self) -> Vec<Value> {
        match self {
            VarDomain::Table { key, .. } => key.scalar_values(),
            _ => Vec::new(),
        }
    }

    pub fn table_vals(&self) -> Vec<Value> {
        match self {
            VarDomain::Table { val, .. } => val.scalar_values(),
            _ => Vec::new(),
        }
    }
}

/// A finite domain for a set of input variables, e.g.
/// `x:int[-2..2], b:bool, t:table(int[0..1]->int[0..1]), s:string{"a","b"}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DomainSpec {
    pub vars: Vec<(String, VarDomain)>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DomainError {
    #[error("malformed domain entry `{0}`, expected `name:domain`")]
    BadEntry(String),
    #[error("unknown domain `{0}`")]
    BadDomain(String),
    #[error("malformed range in `{0}`, expected `[lo..hi]`")]
    BadRange(String),
    #[error("domain enumerates {0} states, over the {1} cap")]
    TooLarge(usize, usize),
}

impl DomainSpec {
    pub fn parse(text: &str) -> Result<DomainSpec, DomainError> {
        let mut vars = Vec::new();
        for entry in split_top_level(text) {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let (name, dom) = entry
                .split_once(':')
                .ok_or_else(|| DomainError::BadEntry(entry.to_string()))?;
            vars.push((name.trim().to_string(), parse_domain(dom.trim())?));
        }
        Ok(DomainSpec { vars })
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Input typing for the static checker.
    pub fn inputs(&self) -> Vec<(String, Type)> {
        self.vars
            .iter()
            .map(|(n, d)| (n.clone(), d.ty()))
            .collect()
    }

    /// Enumerate every initial state in the domain (cartesian product).
    pub fn enumerate(&self, cap: usize) -> Result<Vec<ScopedState>, DomainError> {
        let mut states = vec![ScopedState::from_frame(Frame::new())];
        for (name, dom) in &self.vars {
            let mut next = Vec::new();
            match dom {
                VarDomain::Table { max_keys, .. } => {
                    let keys = dom.table_keys();
                    let vals = dom.table_vals();
                    let default = crate::value::default_value(&match dom {
                        VarDomain::Table { val, .. } => val.ty(),
                        _ => unreachable!(),
                    });
                    let contents = enumerate_tables(&keys, &vals, *max_keys);
                    for st in &states {
                        for content in &contents {
                            let mut st = st.clone();
                            let loc = st.globals.heap.alloc(HeapObject::Table {
                                map: content.clone(),
                                default: default.clone(),
                            });
                            st.declare(name, Value::Ref(loc));
                            next.push(st);
                        }
                    }
                }
                scalar => {
                    for st in &states {
                        for v in scalar.scalar_values() {
                            let mut st = st.clone();
                            st.declare(name, v);
                            next.push(st);
                        }
                    }
                }
            }
            if next.len() > cap {
                return Err(DomainError::TooLarge(next.len(), cap));
            }
            states = next;
        }
        Ok(states)
    }
}

fn enumerate_tables(
    keys: &[Value],
    vals: &[Value],
    max_keys: usize,
) -> Vec<BTreeMap<Value, Value>> {
    let mut out = vec![BTreeMap::new()];
    // grow by deciding, key by key, absence or each value
    for k in keys {
        let mut next = Vec::new();
        for m in &out {
            next.push(m.clone());
            if m.len() < max_keys {
                for v in vals {
                    let mut m2 = m.clone();
                    m2.insert(k.clone(), v.clone());
                    next.push(m2);
                }
            }
        }
        out = next;
    }
    out
}

fn split_top_level(text: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0;
    let mut in_str = false;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '"' => {
                in_str = !in_str;
                cur.push(c);
            }
            '(' | '[' | '{' if !in_str => {
                depth += 1;
                cur.push(c);
            }
            ')' | ']' | '}' if !in_str => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 && !in_str => {
                parts.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        parts.push(cur);
    }
    parts
}

fn parse_domain(text: &str) -> Result<VarDomain, DomainError> {
    if text == "bool" {
        return Ok(VarDomain::Bool);
    }
    if let Some(rest) = text.strip_prefix("int") {
        let rest = rest.trim();
        if rest.is_empty() {
            return Ok(VarDomain::Int((-2..=2).collect()));
        }
        let inner = rest
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| DomainError::BadRange(text.to_string()))?;
        let (lo, hi) = inner
            .split_once("..")
            .ok_or_else(|| DomainError::BadRange(text.to_string()))?;
        let lo: i64 = lo
            .trim()
            .parse()
            .map_err(|_| DomainError::BadRange(text.to_string()))?;
        let hi: i64 = hi
            .trim()
            .parse()
            .map_err(|_| DomainError::BadRange(text.to_string()))?;
        return Ok(VarDomain::Int((lo..=hi).collect()));
    }
    if let Some(rest) = text.strip_prefix("string") {
        let inner = rest
            .trim()
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| DomainError::BadDomain(text.to_string()))?;
        let items = split_top_level(inner)
            .into_iter()
            .map(|s| s.trim().trim_matches('"').to_string())
            .collect();
        return Ok(VarDomain::Str(items));
    }
    if let Some(rest) = text.strip_prefix("table") {
        let inner = rest
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| DomainError::BadDomain(text.to_string()))?;
        let (k, v) = inner
            .split_once("->")
            .ok_or_else(|| DomainError::BadDomain(text.to_string()))?;
        return Ok(VarDomain::Table {
            key: Box::new(parse_domain(k.trim())?),
            val: Box::new(parse_domain(v.trim())?),
            max_keys: 2,
        });
    }
    Err(DomainError::BadDomain(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn program(src: &str) -> Stmt {
        parse_program(src).expect("parse").body
    }

    fn int_state(pairs: &[(&str, i64)]) -> ScopedState {
        let mut st = ScopedState::new();
        for (k, v) in pairs {
            st.declare(k, Value::Int(*v));
        }
        st
    }

    #[test]
    fn skip_denotes_initial_state() {
        let report = bigstep(
            &Stmt::Skip,
            &int_state(&[("x", 1)]),
            Semantics::Nd,
            Budget::default(),
            &StepConfig::default(),
        );
        assert_eq!(report.finals.len(), 1);
        assert!(report.complete);
    }

    #[test]
    fn counter_commute_is_deterministic_under_nd() {
        let p = program("commute(true) { { c = c - x; } { c = c + y; } }");
        let init = int_state(&[("c", 5), ("x", 1), ("y", 2)]);
        let nd = bigstep(&p, &init, Semantics::Nd, Budget::default(), &StepConfig::default());
        assert_eq!(nd.finals.len(), 1);
        let final_state = nd.finals.values().next().unwrap();
        assert_eq!(final_state.lookup("c").unwrap(), &Value::Int(6));
    }

    #[test]
    fn nd_order_split_is_visible() {
        // orders give x=2 and x=1: nondeterministic
        let p = program("commute(true) { { x = 1; } { x = x * 2; } }");
        let init = int_state(&[("x", 1)]);
        let nd = bigstep(&p, &init, Semantics::Nd, Budget::default(), &StepConfig::default());
        assert_eq!(nd.finals.len(), 2);
    }

    #[test]
    fn inclusion_holds_on_a_racy_program() {
        let p = program(
            "commute(true) { { commute(true) { { x = 0; } { x = x * 2; } } } { if (x > 2) { y = 1; } } }",
        );
        let init = int_state(&[("x", 2), ("y", 0)]);
        let rep = check_inclusion(&p, &init, Budget::default(), &StepConfig::default());
        assert!(rep.holds(), "witnesses: {:?}", rep.witnesses);
        // the par set strictly exceeds the nd set here
        assert_eq!(rep.nd.finals.len(), 1);
        assert!(rep.par.finals.len() > rep.nd.finals.len());
    }

    #[test]
    fn domain_parsing_and_enumeration() {
        let d = DomainSpec::parse("x:int[-1..1], b:bool").unwrap();
        let states = d.enumerate(1000).unwrap();
        assert_eq!(states.len(), 6);

        let d = DomainSpec::parse("t:table(int[0..1]->int[0..1])").unwrap();
        let states = d.enumerate(1000).unwrap();
        // {}, {0:_}x2, {1:_}x2, {0:_,1:_}x4
        assert_eq!(states.len(), 9);
    }

    #[test]
    fn havoc_branches_over_domain_in_big_step() {
        let p = program("int x = 0; commute(true) { { havoc x; assume(x >= 0); } { skip; } }");
        let init = ScopedState::new();
        let nd = bigstep(&p, &init, Semantics::Nd, Budget::default(), &StepConfig::default());
        // x in {0, 1, 2} after the assume filter
        assert_eq!(nd.finals.len(), 3);
    }
}
