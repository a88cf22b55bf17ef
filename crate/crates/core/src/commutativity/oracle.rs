//! Brute-force commutativity oracle: enumerate a finite domain of initial
//! states and compare the final states of the two fragment orders under the
//! sequential semantics. Runs where either order errors or is filtered by an
//! assume impose no constraint.

use crate::ast::{Expr, Type};
use crate::commutativity::CommuteSite;
use crate::explorer::{bigstep, Budget, DomainSpec, Semantics, VarDomain};
use crate::state::ScopedState;
use crate::stepper::{eval_pure_expr, StepConfig};
use crate::value::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error("domain error: {0}")]
    Domain(#[from] crate::explorer::DomainError),
    #[error("condition evaluation failed at {state}: {msg}")]
    BadCondition { state: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleVerdict {
    Valid,
    Invalid {
        /// Rendered witness state.
        witness: String,
        detail: String,
    },
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub verdict: OracleVerdict,
    pub states_checked: usize,
    /// States where the condition was false.
    pub vacuous: usize,
    /// States where some order produced no final (error or failed assume).
    pub error_states: usize,
    /// Whether the negation of the condition admits only non-commuting
    /// states (the completeness flag).
    pub complete: bool,
    pub budget_exceeded: bool,
}

/// Per-state commutation outcome: `None` when either order has no final
/// states (vacuous), otherwise whether all outcomes of both orders agree.
pub fn commutes_at(
    site: &CommuteSite,
    state: &ScopedState,
    cfg: &StepConfig,
) -> Option<bool> {
    let env_names: Vec<String> = site.env.iter().map(|(n, _)| n.clone()).collect();
    let budget = Budget {
        max_steps: 20_000,
        max_visited: 100_000,
    };
    let firsts = run_fragment(&site.left, state, cfg, budget);
    let mut ab: Vec<String> = Vec::new();
    for mid in &firsts {
        for fin in run_fragment(&site.right, mid, cfg, budget) {
            ab.push(fin.observable_key(&env_names));
        }
    }
    let firsts = run_fragment(&site.right, state, cfg, budget);
    let mut ba: Vec<String> = Vec::new();
    for mid in &firsts {
        for fin in run_fragment(&site.left, mid, cfg, budget) {
            ba.push(fin.observable_key(&env_names));
        }
    }
    if ab.is_empty() || ba.is_empty() {
        return None;
    }
    let witness = &ab[0];
    Some(ab.iter().chain(ba.iter()).all(|k| k == witness))
}

// One fragment in a fresh scope under seq (nested commute blocks sequence in
// written order; havoc enumerates; assume filters).
fn run_fragment(
    frag: &crate::ast::Stmt,
    state: &ScopedState,
    cfg: &StepConfig,
    budget: Budget,
) -> Vec<ScopedState> {
    let mut st = state.clone();
    st.push_frame();
    let report = bigstep(frag, &st, Semantics::Seq, budget, cfg);
    report
        .finals
        .into_values()
        .map(|mut s| {
            s.pop_frame();
            s
        })
        .collect()
}

/// Fill in default domains for site variables the caller's domain does not
/// mention.
pub fn effective_domain(site: &CommuteSite, domain: &DomainSpec) -> DomainSpec {
    let mut vars = Vec::new();
    for (name, ty) in &site.env {
        let dom = domain
            .vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.clone())
            .unwrap_or_else(|| default_domain(ty));
        vars.push((name.clone(), dom));
    }
    DomainSpec { vars }
}

pub fn default_domain(ty: &Type) -> VarDomain {
    match ty {
        Type::Int => VarDomain::Int((-2..=2).collect()),
        Type::Bool => VarDomain::Bool,
        Type::Str => VarDomain::Str(vec!["a".to_string(), "b".to_string()]),
        Type::Hashtable(k, v) => VarDomain::Table {
            key: Box::new(default_key_domain(k)),
            val: Box::new(default_key_domain(v)),
            max_keys: 2,
        },
        Type::Array(elem) => {
            // arrays enumerate as 2-cell contents
            VarDomain::Table {
                key: Box::new(VarDomain::Int(vec![0, 1])),
                val: Box::new(default_key_domain(elem)),
                max_keys: 2,
            }
        }
        Type::Unit | Type::Ref(_) => VarDomain::Int(vec![0]),
    }
}

fn default_key_domain(ty: &Type) -> VarDomain {
    match ty {
        Type::Int => VarDomain::Int((0..=1).collect()),
        Type::Bool => VarDomain::Bool,
        Type::Str => VarDomain::Str(vec!["a".to_string(), "b".to_string()]),
        _ => VarDomain::Int(vec![0]),
    }
}

/// Enumerate the site's input domain. Array-typed inputs enumerate as
/// fixed-length arrays over the value domain.
pub fn enumerate_site_states(
    site: &CommuteSite,
    domain: &DomainSpec,
) -> Result<Vec<ScopedState>, OracleError> {
    let eff = effective_domain(site, domain);
    // array inputs need array heap objects rather than tables
    let mut states = eff.enumerate(500_000)?;
    for (name, ty) in &site.env {
        if let Type::Array(_) = ty {
            for st in &mut states {
                let loc = st.lookup(name).ok().and_then(|v| v.as_ref_loc());
                if let Some(loc) = loc {
                    if let Some(crate::value::HeapObject::Table { map, default }) =
                        st.globals.heap.get(loc).cloned()
                    {
                        let cells = vec![
                            map.get(&Value::Int(0)).cloned().unwrap_or(default.clone()),
                            map.get(&Value::Int(1)).cloned().unwrap_or(default.clone()),
                        ];
                        *st.globals.heap.get_mut(loc).unwrap() =
                            crate::value::HeapObject::Array(cells);
                    }
                }
            }
        }
    }
    Ok(states)
}

/// Decide whether `condition` is a sufficient commutativity condition for
/// the site on the finite domain, and whether it is complete.
pub fn oracle_check_condition(
    site: &CommuteSite,
    condition: &Expr,
    domain: &DomainSpec,
    cfg: &StepConfig,
) -> Result<OracleReport, OracleError> {
    let states = enumerate_site_states(site, domain)?;
    let mut report = OracleReport {
        verdict: OracleVerdict::Valid,
        states_checked: 0,
        vacuous: 0,
        error_states: 0,
        complete: true,
        budget_exceeded: false,
    };
    for st in &states {
        report.states_checked += 1;
        let holds = match eval_pure_expr(condition, st) {
            Ok(Value::Bool(b)) => b,
            Ok(v) => {
                return Err(OracleError::BadCondition {
                    state: st.to_string(),
                    msg: format!("condition evaluated to {}", v.kind()),
                })
            }
            Err(e) => {
                return Err(OracleError::BadCondition {
                    state: st.to_string(),
                    msg: e.to_string(),
                })
            }
        };
        match commutes_at(site, st, cfg) {
            None => report.error_states += 1,
            Some(true) => {
                if !holds {
                    // a commuting state outside the condition: not complete
                    report.complete = false;
                    report.vacuous += 1;
                }
            }
            Some(false) => {
                if holds {
                    report.verdict = OracleVerdict::Invalid {
                        witness: st.to_string(),
                        detail: "fragment orders reach different final states".to_string(),
                    };
                    return Ok(report);
                }
                report.vacuous += 1;
            }
        }
    }
    Ok(report)
}
