//! Loop-summary instrumentation: a `@summary`-annotated loop is replaced by
//! pre-loop snapshots of its `old(v)` variables, a havoc of the modified
//! variables, and an assume of the summary relation. Verification and
//! inference embed instrumented fragments; imprecise summaries make the
//! exact-equality post-state check fail rather than pass unsoundly.

use crate::ast::{Expr, LoopSummary, Stmt, Type};
use crate::parser::rename_vars;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SummaryError {
    #[error("summary references unknown variable `{0}`")]
    UnknownVar(String),
    #[error("summary modifies `{0}`, which is not int or bool")]
    BadModifiedType(String),
}

/// Replace every annotated loop in `stmt`. `types` must cover the modified
/// and `old()` variables; `used` is the identifier pool for fresh snapshot
/// names.
pub fn instrument_loop_summaries(
    stmt: &Stmt,
    types: &BTreeMap<String, Type>,
    used: &mut BTreeSet<String>,
) -> Result<Stmt, SummaryError> {
    Ok(match stmt {
        Stmt::Seq(a, b) => Stmt::seq(
            instrument_loop_summaries(a, types, used)?,
            instrument_loop_summaries(b, types, used)?,
        ),
        Stmt::If(c, t, e) => Stmt::If(
            c.clone(),
            Box::new(instrument_loop_summaries(t, types, used)?),
            Box::new(instrument_loop_summaries(e, types, used)?),
        ),
        Stmt::While(_, _, Some(summary)) => expand_summary(summary, types, used)?,
        Stmt::While(c, b, None) => Stmt::While(
            c.clone(),
            Box::new(instrument_loop_summaries(b, types, used)?),
            None,
        ),
        Stmt::Commute {
            keyword,
            guard,
            left,
            right,
        } => Stmt::Commute {
            keyword: *keyword,
            guard: guard.clone(),
            left: Box::new(instrument_loop_summaries(left, types, used)?),
            right: Box::new(instrument_loop_summaries(right, types, used)?),
        },
        other => other.clone(),
    })
}

fn expand_summary(
    summary: &LoopSummary,
    types: &BTreeMap<String, Type>,
    used: &mut BTreeSet<String>,
) -> Result<Stmt, SummaryError> {
    for v in &summary.modifies {
        match types.get(v) {
            None => return Err(SummaryError::UnknownVar(v.clone())),
            Some(Type::Int) | Some(Type::Bool) => {}
            Some(_) => return Err(SummaryError::BadModifiedType(v.clone())),
        }
    }
    // snapshot each old(v) into a fresh pre-loop local
    let old_vars = collect_old_vars(&summary.relation);
    let mut snapshots = Vec::new();
    let mut renames: HashMap<String, String> = HashMap::new();
    for v in &old_vars {
        let ty = types
            .get(v)
            .cloned()
            .ok_or_else(|| SummaryError::UnknownVar(v.clone()))?;
        let fresh = fresh_name(&format!("{v}_old"), used);
        snapshots.push(Stmt::Decl(ty, fresh.clone(), Expr::var(v)));
        renames.insert(v.clone(), fresh);
    }
    let relation = strip_old(summary.relation.clone(), &renames)?;
    let mut stmts = snapshots;
    stmts.push(Stmt::Havoc(summary.modifies.clone()));
    stmts.push(Stmt::Assume(relation));
    Ok(Stmt::seq_all(stmts))
}

fn fresh_name(base: &str, used: &mut BTreeSet<String>) -> String {
    if used.insert(base.to_string()) {
        return base.to_string();
    }
    let mut n = 1;
    loop {
        let cand = format!("{base}{n}");
        if used.insert(cand.clone()) {
            return cand;
        }
        n += 1;
    }
}

fn collect_old_vars(e: &Expr) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(e: &Expr, out: &mut Vec<String>) {
        match e {
            Expr::Call(name, args) if name == "old" => {
                if let Some(Expr::Var(v)) = args.first() {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
            Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
            Expr::Unop(_, a) | Expr::Deref(a) | Expr::NewArray(_, a) | Expr::Field(a, _) => {
                walk(a, out)
            }
            Expr::Binop(a, _, b) | Expr::Index(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            Expr::Ternary(c, a, b) => {
                walk(c, out);
                walk(a, out);
                walk(b, out);
            }
            Expr::Const(_) | Expr::Var(_) | Expr::NewHashtable(_, _) => {}
        }
    }
    walk(e, &mut out);
    out
}

// old(v) -> snapshot variable
fn strip_old(e: Expr, renames: &HashMap<String, String>) -> Result<Expr, SummaryError> {
    Ok(match e {
        Expr::Call(name, mut args) if name == "old" => match args.pop() {
            Some(Expr::Var(v)) => {
                let fresh = renames
                    .get(&v)
                    .ok_or_else(|| SummaryError::UnknownVar(v.clone()))?;
                Expr::Var(fresh.clone())
            }
            _ => return Err(SummaryError::UnknownVar("old(..)".to_string())),
        },
        Expr::Call(n, args) => Expr::Call(
            n,
            args.into_iter()
                .map(|a| strip_old(a, renames))
                .collect::<Result<_, _>>()?,
        ),
        Expr::Unop(op, a) => Expr::Unop(op, Box::new(strip_old(*a, renames)?)),
        Expr::Binop(a, op, b) => Expr::Binop(
            Box::new(strip_old(*a, renames)?),
            op,
            Box::new(strip_old(*b, renames)?),
        ),
        Expr::Ternary(c, a, b) => Expr::Ternary(
            Box::new(strip_old(*c, renames)?),
            Box::new(strip_old(*a, renames)?),
            Box::new(strip_old(*b, renames)?),
        ),
        Expr::Index(a, b) => Expr::Index(
            Box::new(strip_old(*a, renames)?),
            Box::new(strip_old(*b, renames)?),
        ),
        other => {
            // plain vars inside the relation refer to post-loop values
            let _ = &renames;
            match other {
                Expr::Var(v) => Expr::Var(v),
                e => rename_vars(e, &HashMap::new()),
            }
        }
    })
}

/// Identifiers appearing anywhere in a statement, used to seed fresh-name
/// pools.
pub fn collect_idents(stmt: &Stmt, out: &mut BTreeSet<String>) {
    stmt.walk(&mut |s| match s {
        Stmt::Assign(lv, e) => {
            out.insert(lv.base_name().to_string());
            collect_expr_idents(e, out);
            if let crate::ast::LValue::Index(_, i) = lv {
                collect_expr_idents(i, out);
            }
        }
        Stmt::Decl(_, n, e) => {
            out.insert(n.clone());
            collect_expr_idents(e, out);
        }
        Stmt::If(c, _, _) | Stmt::While(c, _, _) | Stmt::Assume(c) | Stmt::Lock(c)
        | Stmt::Unlock(c) => collect_expr_idents(c, out),
        Stmt::Commute { guard, .. } => collect_expr_idents(guard, out),
        Stmt::Havoc(ns) => {
            for n in ns {
                out.insert(n.clone());
            }
        }
        _ => {}
    });
}

pub fn collect_expr_idents(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::Var(v) => {
            out.insert(v.clone());
        }
        Expr::Const(_) | Expr::NewHashtable(_, _) => {}
        Expr::Deref(a) | Expr::Unop(_, a) | Expr::NewArray(_, a) | Expr::Field(a, _) => {
            collect_expr_idents(a, out)
        }
        Expr::Index(a, b) | Expr::Binop(a, _, b) => {
            collect_expr_idents(a, out);
            collect_expr_idents(b, out);
        }
        Expr::Ternary(c, a, b) => {
            collect_expr_idents(c, out);
            collect_expr_idents(a, out);
            collect_expr_idents(b, out);
        }
        Expr::Call(_, args) => args.iter().for_each(|a| collect_expr_idents(a, out)),
    }
}
