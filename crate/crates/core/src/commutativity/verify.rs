//! Condition verification: emit the two-order commutativity query, run the
//! oracle and/or an external solver, decode witnesses, and check condition
//! completeness. An unsat answer to the emitted query certifies the
//! condition; a model decodes to a starting state under which the two
//! orders end differently.

use crate::ast::{Expr, Type};
use crate::commutativity::embed::{embed, spec_of, translate_condition, EmbedError, LogicalAdt};
use crate::commutativity::formula::{Formula, Sort};
use crate::commutativity::oracle::{
    commutes_at, oracle_check_condition, OracleError, OracleVerdict,
};
use crate::commutativity::solver::{
    run_query, ModelValue, SolverConfig, SolverError, SolverOutcome,
};
use crate::commutativity::summaries::{collect_idents, instrument_loop_summaries, SummaryError};
use crate::commutativity::CommuteSite;
use crate::explorer::DomainSpec;
use crate::state::ScopedState;
use crate::stepper::StepConfig;
use crate::value::{HeapObject, Value};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    Oracle,
    Solver,
    Both,
}

impl VerifyMode {
    pub fn parse(s: &str) -> Option<VerifyMode> {
        match s {
            "oracle" => Some(VerifyMode::Oracle),
            "solver" => Some(VerifyMode::Solver),
            "both" => Some(VerifyMode::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondVerdict {
    Valid,
    Invalid,
    Unknown,
}

impl CondVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            CondVerdict::Valid => "valid",
            CondVerdict::Invalid => "invalid",
            CondVerdict::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub verdict: CondVerdict,
    pub witness: Option<String>,
    /// Whether the negation of the condition admits only non-commuting
    /// states.
    pub complete: Option<bool>,
    pub oracle_states: Option<usize>,
    pub solver_result: Option<String>,
    /// Oracle/solver agreement in `both` mode; disagreement is an
    /// embedding bug and is reported loudly.
    pub agreement: Option<bool>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
}

// Symbol suffixes for the four post-states of the two orders.
const AB_MID: &str = "__ab";
const AB_FIN: &str = "__abf";
const BA_MID: &str = "__ba";
const BA_FIN: &str = "__baf";

fn syms(adt: &LogicalAdt, suffix: &str) -> BTreeMap<String, String> {
    adt.state
        .iter()
        .flat_map(|sv| sv.pieces.iter())
        .map(|p| (p.base.clone(), format!("{}{}", p.base, suffix)))
        .collect()
}

fn value_literal(v: &Value) -> Formula {
    match v {
        Value::Int(n) => Formula::IntLit(*n),
        Value::Bool(true) => Formula::True,
        Value::Bool(false) => Formula::False,
        Value::Str(s) => Formula::StrLit(s.clone()),
        _ => Formula::IntLit(0),
    }
}

// Declarations plus grounding assertions for the shared pre-state.
fn declare_pre_state(adt: &LogicalAdt, out: &mut String) {
    for sv in &adt.state {
        match &sv.ty {
            Type::Hashtable(k, v) => {
                let name = &sv.source;
                let keys = adt.universes.get(name).cloned().unwrap_or_default();
                let ks = crate::commutativity::embed::sort_of_scalar(k).unwrap();
                let vs = crate::commutativity::embed::sort_of_scalar(v).unwrap();
                let karr = Sort::Arr(Box::new(ks.clone()), Box::new(Sort::Bool));
                let marr = Sort::Arr(Box::new(ks.clone()), Box::new(vs.clone()));
                let mut k_term = Formula::App(
                    format!("(as const {})", karr.render()),
                    vec![Formula::False],
                );
                let mut m_term = Formula::App(
                    format!("(as const {})", marr.render()),
                    vec![vs.default_literal()],
                );
                let mut size_terms = Vec::new();
                for (i, key) in keys.iter().enumerate() {
                    let has = format!("{name}_has_{i}");
                    let val = format!("{name}_val_{i}");
                    out.push_str(&format!("(declare-const {has} Bool)\n"));
                    out.push_str(&format!("(declare-const {val} {})\n", vs.render()));
                    k_term =
                        Formula::store(k_term, value_literal(key), Formula::sym(has.clone()));
                    m_term = Formula::store(m_term, value_literal(key), Formula::sym(val));
                    size_terms.push(Formula::ite(
                        Formula::sym(has),
                        Formula::IntLit(1),
                        Formula::IntLit(0),
                    ));
                }
                out.push_str(&format!("(declare-const {name}K {})\n", karr.render()));
                out.push_str(&format!("(declare-const {name}S Int)\n"));
                out.push_str(&format!("(declare-const {name}M {})\n", marr.render()));
                // ground the initial table to the finite key universe so
                // size, key set, and map stay mutually consistent
                out.push_str(&format!("(assert (= {name}K {}))\n", k_term.render()));
                out.push_str(&format!("(assert (= {name}M {}))\n", m_term.render()));
                let size = if size_terms.is_empty() {
                    Formula::IntLit(0)
                } else if size_terms.len() == 1 {
                    size_terms.into_iter().next().unwrap()
                } else {
                    Formula::App("+".into(), size_terms)
                };
                out.push_str(&format!("(assert (= {name}S {}))\n", size.render()));
            }
            Type::Array(elem) => {
                let name = &sv.source;
                let len = adt.array_lens.get(name).copied().unwrap_or(2);
                let es = crate::commutativity::embed::sort_of_scalar(elem).unwrap();
                let marr = Sort::Arr(Box::new(Sort::Int), Box::new(es.clone()));
                let mut m_term = Formula::App(
                    format!("(as const {})", marr.render()),
                    vec![es.default_literal()],
                );
                for i in 0..len {
                    let cell = format!("{name}_cell_{i}");
                    out.push_str(&format!("(declare-const {cell} {})\n", es.render()));
                    m_term = Formula::store(m_term, Formula::IntLit(i), Formula::sym(cell));
                }
                out.push_str(&format!("(declare-const {name}M {})\n", marr.render()));
                out.push_str(&format!("(declare-const {name}L Int)\n"));
                out.push_str(&format!("(assert (= {name}M {}))\n", m_term.render()));
                out.push_str(&format!("(assert (= {name}L {len}))\n"));
            }
            _ => {
                for p in &sv.pieces {
                    out.push_str(&format!(
                        "(declare-const {} {})\n",
                        p.base,
                        p.sort.render()
                    ));
                }
            }
        }
    }
}

fn declare_suffixed(adt: &LogicalAdt, suffix: &str, out: &mut String) {
    for sv in &adt.state {
        for p in &sv.pieces {
            out.push_str(&format!(
                "(declare-const {}{} {})\n",
                p.base,
                suffix,
                p.sort.render()
            ));
        }
    }
}

fn final_states_equal(adt: &LogicalAdt) -> Formula {
    let eqs: Vec<Formula> = adt
        .state
        .iter()
        .flat_map(|sv| sv.pieces.iter())
        .map(|p| {
            Formula::eq(
                Formula::sym(format!("{}{}", p.base, AB_FIN)),
                Formula::sym(format!("{}{}", p.base, BA_FIN)),
            )
        })
        .collect();
    Formula::and(eqs)
}

fn emit_query(
    adt: &LogicalAdt,
    condition: &Formula,
    negate_condition: bool,
    finals_differ: bool,
) -> Result<String, EmbedError> {
    let pre = syms(adt, "");
    let ab_mid = syms(adt, AB_MID);
    let ab_fin = syms(adt, AB_FIN);
    let ba_mid = syms(adt, BA_MID);
    let ba_fin = syms(adt, BA_FIN);

    let mut fresh = 0usize;
    let q_left_first = spec_of(&adt.clone(), &adt.site.left, &pre, &ab_mid, &mut fresh)?;
    let q_right_second = spec_of(adt, &adt.site.right, &ab_mid, &ab_fin, &mut fresh)?;
    let q_right_first = spec_of(adt, &adt.site.right, &pre, &ba_mid, &mut fresh)?;
    let q_left_second = spec_of(adt, &adt.site.left, &ba_mid, &ba_fin, &mut fresh)?;

    let mut out = String::new();
    out.push_str("(set-logic ALL)\n");
    out.push_str("(set-option :produce-models true)\n");
    out.push_str("; pre-state\n");
    declare_pre_state(adt, &mut out);
    out.push_str("; post-states of both method orders\n");
    declare_suffixed(adt, AB_MID, &mut out);
    declare_suffixed(adt, AB_FIN, &mut out);
    declare_suffixed(adt, BA_MID, &mut out);
    declare_suffixed(adt, BA_FIN, &mut out);
    if negate_condition {
        out.push_str(&format!(
            "(assert (not {}))\n",
            condition.render()
        ));
    } else {
        out.push_str(&format!("(assert {})\n", condition.render()));
    }
    out.push_str("; first order\n");
    out.push_str(&format!("(assert {})\n", q_left_first.render()));
    out.push_str(&format!("(assert {})\n", q_right_second.render()));
    out.push_str("; second order\n");
    out.push_str(&format!("(assert {})\n", q_right_first.render()));
    out.push_str(&format!("(assert {})\n", q_left_second.render()));
    let eq = final_states_equal(adt);
    if finals_differ {
        out.push_str(&format!("(assert (not {}))\n", eq.render()));
    } else {
        out.push_str(&format!("(assert {})\n", eq.render()));
    }
    out.push_str("(check-sat)\n(get-model)\n");
    Ok(out)
}

/// The commutativity query: unsat certifies the condition, a model is a
/// candidate non-commuting pre-state.
pub fn emit_commutativity_query(
    adt: &LogicalAdt,
    condition: &Formula,
) -> Result<String, EmbedError> {
    emit_query(adt, condition, false, true)
}

/// The completeness query: unsat means no state outside the condition
/// commutes.
pub fn emit_completeness_query(
    adt: &LogicalAdt,
    condition: &Formula,
) -> Result<String, EmbedError> {
    emit_query(adt, condition, true, false)
}

/// Instrument annotated loops inside the site's fragments, leaving the
/// environment untouched (snapshot variables are fragment-local).
pub fn instrumented_site(site: &CommuteSite) -> Result<CommuteSite, SummaryError> {
    let mut types: BTreeMap<String, Type> = site.env.iter().cloned().collect();
    // fragment-local declarations may also be modified by loops
    for frag in [&site.left, &site.right] {
        frag.walk(&mut |s| {
            if let crate::ast::Stmt::Decl(ty, n, _) = s {
                types.entry(n.clone()).or_insert_with(|| ty.clone());
            }
        });
    }
    let mut used: BTreeSet<String> = types.keys().cloned().collect();
    collect_idents(&site.left, &mut used);
    collect_idents(&site.right, &mut used);
    Ok(CommuteSite {
        id: site.id,
        guard: site.guard.clone(),
        left: instrument_loop_summaries(&site.left, &types, &mut used)?,
        right: instrument_loop_summaries(&site.right, &types, &mut used)?,
        env: site.env.clone(),
    })
}

/// Decode a model back into a starting state over the site environment.
pub fn decode_witness(
    adt: &LogicalAdt,
    model: &BTreeMap<String, ModelValue>,
) -> Option<ScopedState> {
    let mut st = ScopedState::new();
    for sv in &adt.state {
        match &sv.ty {
            Type::Hashtable(_, v) => {
                let keys = adt.universes.get(&sv.source)?;
                let mut map = std::collections::BTreeMap::new();
                for (i, key) in keys.iter().enumerate() {
                    let has = model.get(&format!("{}_has_{i}", sv.source));
                    if matches!(has, Some(ModelValue::Bool(true))) {
                        let val = decode_scalar(model.get(&format!("{}_val_{i}", sv.source))?)?;
                        map.insert(key.clone(), val);
                    }
                }
                let loc = st.globals.heap.alloc(HeapObject::Table {
                    map,
                    default: crate::value::default_value(v),
                });
                st.declare(&sv.source, Value::Ref(loc));
            }
            Type::Array(_) => {
                let len = adt.array_lens.get(&sv.source).copied().unwrap_or(2);
                let mut cells = Vec::new();
                for i in 0..len {
                    cells.push(decode_scalar(
                        model.get(&format!("{}_cell_{i}", sv.source))?,
                    )?);
                }
                let loc = st.globals.heap.alloc(HeapObject::Array(cells));
                st.declare(&sv.source, Value::Ref(loc));
            }
            _ => {
                let v = decode_scalar(model.get(&sv.source)?)?;
                st.declare(&sv.source, v);
            }
        }
    }
    Some(st)
}

fn decode_scalar(mv: &ModelValue) -> Option<Value> {
    match mv {
        ModelValue::Int(n) => Some(Value::Int(*n)),
        ModelValue::Bool(b) => Some(Value::Bool(*b)),
        ModelValue::Str(s) => Some(Value::Str(s.clone())),
        ModelValue::Opaque(_) => None,
    }
}

/// Verify a condition against a site. In `both` mode the oracle and solver
/// verdicts must agree on the finite domain; disagreement is flagged as an
/// embedding bug.
pub fn verify_condition(
    site: &CommuteSite,
    condition: &Expr,
    mode: VerifyMode,
    domain: &DomainSpec,
    solver: Option<&SolverConfig>,
    cfg: &StepConfig,
) -> Result<VerifyReport, VerifyError> {
    let mut report = VerifyReport {
        verdict: CondVerdict::Unknown,
        witness: None,
        complete: None,
        oracle_states: None,
        solver_result: None,
        agreement: None,
        notes: Vec::new(),
    };

    let mut oracle_verdict: Option<CondVerdict> = None;
    if mode != VerifyMode::Solver {
        let r = oracle_check_condition(site, condition, domain, cfg)?;
        report.oracle_states = Some(r.states_checked);
        report.complete = Some(r.complete);
        match r.verdict {
            OracleVerdict::Valid => oracle_verdict = Some(CondVerdict::Valid),
            OracleVerdict::Invalid { witness, detail } => {
                oracle_verdict = Some(CondVerdict::Invalid);
                report.witness = Some(witness);
                report.notes.push(detail);
            }
        }
    }

    let mut solver_verdict: Option<CondVerdict> = None;
    // solver unavailable degrades to oracle-only, with a note
    let effective_mode = match (mode, solver) {
        (VerifyMode::Oracle, _) => VerifyMode::Oracle,
        (_, None) => {
            report
                .notes
                .push("no SMT solver configured; oracle verdict only".to_string());
            VerifyMode::Oracle
        }
        (m, Some(_)) => m,
    };
    if mode == VerifyMode::Solver && effective_mode == VerifyMode::Oracle {
        let r = oracle_check_condition(site, condition, domain, cfg)?;
        report.oracle_states = Some(r.states_checked);
        report.complete = Some(r.complete);
        report.verdict = match r.verdict {
            OracleVerdict::Valid => CondVerdict::Valid,
            OracleVerdict::Invalid { witness, detail } => {
                report.witness = Some(witness);
                report.notes.push(detail);
                CondVerdict::Invalid
            }
        };
        return Ok(report);
    }

    if effective_mode != VerifyMode::Oracle {
        let solver = solver.expect("solver checked above");
        match solver_leg(site, condition, domain, solver) {
            Ok((verdict, result, witness, complete)) => {
                solver_verdict = Some(verdict);
                report.solver_result = Some(result);
                if report.witness.is_none() {
                    report.witness = witness;
                }
                if report.complete.is_none() {
                    report.complete = complete;
                }
            }
            Err(VerifyError::Embed(e)) => {
                report
                    .notes
                    .push(format!("embedding unavailable: {e}; oracle verdict only"));
            }
            Err(e) => return Err(e),
        }
    }

    report.verdict = match (oracle_verdict, solver_verdict) {
        (Some(o), Some(s)) => {
            let agree = o == s || s == CondVerdict::Unknown;
            report.agreement = Some(agree);
            if !agree {
                report.notes.push(format!(
                    "EMBEDDING BUG: oracle says {}, solver says {}",
                    o.as_str(),
                    s.as_str()
                ));
            }
            o
        }
        (Some(o), None) => o,
        (None, Some(s)) => s,
        (None, None) => CondVerdict::Unknown,
    };
    Ok(report)
}

fn solver_leg(
    site: &CommuteSite,
    condition: &Expr,
    domain: &DomainSpec,
    solver: &SolverConfig,
) -> Result<(CondVerdict, String, Option<String>, Option<bool>), VerifyError> {
    let inst = instrumented_site(site)?;
    let adt = embed(&inst, domain)?;
    let pre = syms(&adt, "");
    let phi = translate_condition(&adt, condition, &pre)?;
    let query = emit_commutativity_query(&adt, &phi)?;
    let outcome = run_query(solver, &query)?;
    let (verdict, result, witness) = match outcome {
        SolverOutcome::Unsat => (CondVerdict::Valid, "unsat".to_string(), None),
        SolverOutcome::Sat(model) => {
            let witness = decode_witness(&adt, &model).map(|st| st.to_string());
            (CondVerdict::Invalid, "sat".to_string(), witness)
        }
        SolverOutcome::Unknown(reason) => (
            CondVerdict::Unknown,
            format!("unknown ({reason})"),
            None,
        ),
    };
    // completeness via the second query (approximate when havoc is present)
    let complete = match run_query(solver, &emit_completeness_query(&adt, &phi)?) {
        Ok(SolverOutcome::Unsat) => Some(true),
        Ok(SolverOutcome::Sat(_)) => Some(false),
        _ => None,
    };
    Ok((verdict, result, witness, complete))
}

/// Confirm a decoded solver witness against the oracle.
pub fn confirm_witness(
    site: &CommuteSite,
    witness: &ScopedState,
    cfg: &StepConfig,
) -> Option<bool> {
    commutes_at(site, witness, cfg).map(|c| !c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commutativity::extract_sites;
    use crate::parser::{parse_expression, parse_program};

    fn site_of(src: &str, inputs: &[(&str, Type)]) -> CommuteSite {
        let p = parse_program(src).expect("parse");
        let inputs: Vec<(String, Type)> = inputs
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        extract_sites(&p.body, &inputs).expect("sites").remove(0)
    }

    #[test]
    fn query_emission_is_deterministic_and_wellformed() {
        let site = site_of(
            "commute(c > 0) { { c = c + 1; } { if (c > 0) { tbl[c] = 5; c = c - 1; } } }",
            &[
                ("c", Type::Int),
                (
                    "tbl",
                    Type::Hashtable(Box::new(Type::Int), Box::new(Type::Int)),
                ),
            ],
        );
        let adt = embed(&site, &DomainSpec::default()).unwrap();
        let pre = syms(&adt, "");
        let phi = translate_condition(&adt, &parse_expression("c > 0").unwrap(), &pre).unwrap();
        let q1 = emit_commutativity_query(&adt, &phi).unwrap();
        let q2 = emit_commutativity_query(&adt, &phi).unwrap();
        assert_eq!(q1, q2);
        assert!(q1.contains("(set-logic ALL)"));
        assert!(q1.contains("(check-sat)"));
        assert!(q1.contains("(get-model)"));
        // the put axioms for the table survive into the query
        assert!(q1.contains("store tblM"));
        // size grounding ties tblS to the key indicators
        assert!(q1.contains("(assert (= tblS"));
        // balanced parens
        let open = q1.matches('(').count();
        let close = q1.matches(')').count();
        assert_eq!(open, close);
    }

    #[test]
    fn vacuous_condition_yields_trivially_unsat_query_shape() {
        let site = site_of(
            "commute(true) { { x = 1; } { x = x * 2; } }",
            &[("x", Type::Int)],
        );
        let adt = embed(&site, &DomainSpec::default()).unwrap();
        let q = emit_commutativity_query(&adt, &Formula::False).unwrap();
        assert!(q.contains("(assert false)"));
    }

    #[test]
    fn oracle_mode_verifies_without_a_solver() {
        let site = site_of(
            "commute(true) { { c = c - x; } { c = c + y; } }",
            &[("c", Type::Int), ("x", Type::Int), ("y", Type::Int)],
        );
        let report = verify_condition(
            &site,
            &Expr::bool(true),
            VerifyMode::Oracle,
            &DomainSpec::default(),
            None,
            &StepConfig::default(),
        )
        .unwrap();
        assert_eq!(report.verdict, CondVerdict::Valid);
        assert_eq!(report.complete, Some(true));
    }

    #[test]
    fn both_mode_without_solver_degrades_with_note() {
        let site = site_of(
            "commute(true) { { x = 1; } { x = x * 2; } }",
            &[("x", Type::Int)],
        );
        let report = verify_condition(
            &site,
            &Expr::bool(true),
            VerifyMode::Both,
            &DomainSpec::default(),
            None,
            &StepConfig::default(),
        )
        .unwrap();
        assert_eq!(report.verdict, CondVerdict::Invalid);
        assert!(report
            .notes
            .iter()
            .any(|n| n.contains("no SMT solver configured")));
    }
}
