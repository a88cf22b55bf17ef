//! Embedding of commute fragments as logically specified two-method
//! objects. Each fragment becomes a postcondition over the site's context:
//! an SSA-style let-chain introducing an indexed binding per mutation, an
//! innermost constraint relating each post-state variable to its last
//! binding, and side conditions that hold exactly when the run is
//! error-free (division defined, array accesses in bounds, assumes passed).
//!
//! Tables expand to three state pieces: the key set (array to Bool), the
//! size (Int), and the finite map (array). Table reads of absent keys are
//! the value sort's default, matching the interpreter.

use crate::ast::{BinOp, Expr, LValue, Stmt, Type, UnOp};
use crate::commutativity::formula::{Formula, Sort};
use crate::commutativity::CommuteSite;
use crate::explorer::DomainSpec;
use crate::value::Value;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed {0}")]
    Unembeddable(String),
    #[error("unknown variable `{0}` in embedding")]
    UnknownVar(String),
    #[error("{0}")]
    Bad(String),
}

/// One SMT-level piece of a program variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub base: String,
    pub sort: Sort,
}

/// A program variable with its SMT pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVar {
    pub source: String,
    pub ty: Type,
    pub pieces: Vec<Piece>,
}

/// The logically specified object for one commute site: state variables,
/// two unit methods (one per fragment) whose preconditions are trivially
/// true, and state equality as piecewise equality.
#[derive(Debug, Clone)]
pub struct LogicalAdt {
    pub state: Vec<StateVar>,
    pub site: CommuteSite,
    /// Key universes for table/array grounding, from the input domain.
    pub universes: BTreeMap<String, Vec<Value>>,
    /// Fixed lengths for array-typed inputs.
    pub array_lens: BTreeMap<String, i64>,
}

pub fn sort_of_scalar(ty: &Type) -> Result<Sort, EmbedError> {
    match ty {
        Type::Int => Ok(Sort::Int),
        Type::Bool => Ok(Sort::Bool),
        Type::Str => Ok(Sort::Str),
        other => Err(EmbedError::Bad(format!("no scalar sort for {other}"))),
    }
}

pub fn pieces_of(name: &str, ty: &Type) -> Result<Vec<Piece>, EmbedError> {
    Ok(match ty {
        Type::Int | Type::Bool | Type::Str => vec![Piece {
            base: name.to_string(),
            sort: sort_of_scalar(ty)?,
        }],
        Type::Hashtable(k, v) => {
            let ks = sort_of_scalar(k)?;
            let vs = sort_of_scalar(v)?;
            vec![
                Piece {
                    base: format!("{name}K"),
                    sort: Sort::Arr(Box::new(ks.clone()), Box::new(Sort::Bool)),
                },
                Piece {
                    base: format!("{name}S"),
                    sort: Sort::Int,
                },
                Piece {
                    base: format!("{name}M"),
                    sort: Sort::Arr(Box::new(ks), Box::new(vs)),
                },
            ]
        }
        Type::Array(elem) => {
            let es = sort_of_scalar(elem)?;
            vec![
                Piece {
                    base: format!("{name}M"),
                    sort: Sort::Arr(Box::new(Sort::Int), Box::new(es)),
                },
                Piece {
                    base: format!("{name}L"),
                    sort: Sort::Int,
                },
            ]
        }
        other => return Err(EmbedError::Unembeddable(format!("variable of type {other}"))),
    })
}

/// Build the logical object for a site. The domain supplies table key
/// universes (used to ground initial table states) and array lengths.
pub fn embed(site: &CommuteSite, domain: &DomainSpec) -> Result<LogicalAdt, EmbedError> {
    let mut state = Vec::new();
    let mut universes = BTreeMap::new();
    let mut array_lens = BTreeMap::new();
    let eff = crate::commutativity::oracle::effective_domain(site, domain);
    for (name, ty) in &site.env {
        state.push(StateVar {
            source: name.clone(),
            ty: ty.clone(),
            pieces: pieces_of(name, ty)?,
        });
        match ty {
            Type::Hashtable(_, _) => {
                let dom = eff.vars.iter().find(|(n, _)| n == name).map(|(_, d)| d);
                let keys = dom.map(|d| d.table_keys()).unwrap_or_default();
                universes.insert(name.clone(), keys);
            }
            Type::Array(_) => {
                universes.insert(name.clone(), vec![Value::Int(0), Value::Int(1)]);
                array_lens.insert(name.clone(), 2);
            }
            _ => {}
        }
    }
    // distinct pieces must not collide (e.g. a scalar literally named "tK"
    // next to a table "t")
    let mut seen = BTreeMap::new();
    for sv in &state {
        for p in &sv.pieces {
            if let Some(prev) = seen.insert(p.base.clone(), sv.source.clone()) {
                return Err(EmbedError::Bad(format!(
                    "state piece `{}` of `{}` collides with `{}`",
                    p.base, sv.source, prev
                )));
            }
        }
    }
    Ok(LogicalAdt {
        state,
        site: site.clone(),
        universes,
        array_lens,
    })
}

// ---- specOf ----

#[derive(Clone)]
struct Ids {
    /// piece base -> current symbol
    cur: BTreeMap<String, String>,
    /// program var -> type (env plus fragment locals)
    types: BTreeMap<String, Type>,
    /// fragment locals (no post-state equation)
    locals: BTreeMap<String, bool>,
}

/// Translate one fragment into its postcondition formula. `pre` and `post`
/// give the SMT symbols standing for each piece before and after the
/// method; `fresh` seeds the internal SSA counter.
pub fn spec_of(
    adt: &LogicalAdt,
    fragment: &Stmt,
    pre: &BTreeMap<String, String>,
    post: &BTreeMap<String, String>,
    fresh: &mut usize,
) -> Result<Formula, EmbedError> {
    let mut ids = Ids {
        cur: BTreeMap::new(),
        types: BTreeMap::new(),
        locals: BTreeMap::new(),
    };
    for sv in &adt.state {
        ids.types.insert(sv.source.clone(), sv.ty.clone());
        for p in &sv.pieces {
            let sym = pre
                .get(&p.base)
                .ok_or_else(|| EmbedError::UnknownVar(p.base.clone()))?;
            ids.cur.insert(p.base.clone(), sym.clone());
        }
    }
    let stmts = fragment.flatten();
    tr_stmts(adt, &stmts, ids, post, fresh)
}

fn next_sym(base: &str, fresh: &mut usize) -> String {
    *fresh += 1;
    format!("{base}_{fresh}")
}

fn tr_stmts(
    adt: &LogicalAdt,
    stmts: &[&Stmt],
    mut ids: Ids,
    post: &BTreeMap<String, String>,
    fresh: &mut usize,
) -> Result<Formula, EmbedError> {
    let Some((head, tail)) = stmts.split_first() else {
        // innermost constraint: relate each post-state piece to its most
        // recent binding (fragment locals carry no constraint)
        let mut eqs = Vec::new();
        for sv in &adt.state {
            for p in &sv.pieces {
                let post_sym = post
                    .get(&p.base)
                    .ok_or_else(|| EmbedError::UnknownVar(p.base.clone()))?;
                eqs.push(Formula::eq(
                    Formula::sym(post_sym.clone()),
                    Formula::sym(ids.cur[&p.base].clone()),
                ));
            }
        }
        return Ok(Formula::and(eqs));
    };
    match head {
        Stmt::Skip => tr_stmts(adt, tail, ids, post, fresh),
        Stmt::Seq(..) => {
            let mut flat = head.flatten();
            flat.extend_from_slice(tail);
            tr_stmts(adt, &flat, ids, post, fresh)
        }
        Stmt::Decl(ty, name, e) => {
            if ty.is_container() {
                return Err(EmbedError::Unembeddable(format!(
                    "container declaration of `{name}` inside a fragment"
                )));
            }
            let (gamma, defs) = tr_expr(e, &ids)?;
            let sym = next_sym(name, fresh);
            ids.types.insert(name.clone(), ty.clone());
            ids.locals.insert(name.clone(), true);
            ids.cur.insert(name.clone(), sym.clone());
            let cont = tr_stmts(adt, tail, ids, post, fresh)?;
            Ok(Formula::Let(
                vec![(sym, gamma)],
                Box::new(Formula::and(with_defs(defs, cont))),
            ))
        }
        Stmt::Assign(LValue::Var(name), e) => {
            let ty = ids
                .types
                .get(name)
                .cloned()
                .ok_or_else(|| EmbedError::UnknownVar(name.clone()))?;
            if ty.is_container() {
                return Err(EmbedError::Unembeddable(format!(
                    "assignment aliasing container `{name}`"
                )));
            }
            let (gamma, defs) = tr_expr(e, &ids)?;
            let sym = next_sym(name, fresh);
            ids.cur.insert(name.clone(), sym.clone());
            let cont = tr_stmts(adt, tail, ids, post, fresh)?;
            Ok(Formula::Let(
                vec![(sym, gamma)],
                Box::new(Formula::and(with_defs(defs, cont))),
            ))
        }
        Stmt::Assign(LValue::Index(name, key), e) => {
            let ty = ids
                .types
                .get(name)
                .cloned()
                .ok_or_else(|| EmbedError::UnknownVar(name.clone()))?;
            let (gk, mut defs) = tr_expr(key, &ids)?;
            let (gv, defs_v) = tr_expr(e, &ids)?;
            defs.extend(defs_v);
            match ty {
                Type::Hashtable(_, _) => {
                    let k0 = Formula::sym(ids.cur[&format!("{name}K")].clone());
                    let s0 = Formula::sym(ids.cur[&format!("{name}S")].clone());
                    let m0 = Formula::sym(ids.cur[&format!("{name}M")].clone());
                    let mem = Formula::select(k0.clone(), gk.clone());
                    let k1 = next_sym(&format!("{name}K"), fresh);
                    let s1 = next_sym(&format!("{name}S"), fresh);
                    let m1 = next_sym(&format!("{name}M"), fresh);
                    let ret = next_sym(&format!("{name}P"), fresh);
                    // put's return: whether the table contents changed
                    let phi_put = Formula::ite(
                        mem.clone(),
                        Formula::App(
                            "distinct".into(),
                            vec![gv.clone(), Formula::select(m0.clone(), gk.clone())],
                        ),
                        Formula::True,
                    );
                    let binds = vec![
                        (
                            k1.clone(),
                            Formula::ite(
                                mem.clone(),
                                k0.clone(),
                                Formula::store(k0.clone(), gk.clone(), Formula::True),
                            ),
                        ),
                        (
                            s1.clone(),
                            Formula::ite(
                                mem.clone(),
                                s0.clone(),
                                Formula::App("+".into(), vec![s0.clone(), Formula::IntLit(1)]),
                            ),
                        ),
                        (
                            m1.clone(),
                            Formula::ite(
                                mem.clone(),
                                Formula::ite(
                                    Formula::eq(
                                        Formula::select(m0.clone(), gk.clone()),
                                        gv.clone(),
                                    ),
                                    m0.clone(),
                                    Formula::store(m0.clone(), gk.clone(), gv.clone()),
                                ),
                                Formula::store(m0.clone(), gk.clone(), gv.clone()),
                            ),
                        ),
                        (ret, phi_put),
                    ];
                    ids.cur.insert(format!("{name}K"), k1);
                    ids.cur.insert(format!("{name}S"), s1);
                    ids.cur.insert(format!("{name}M"), m1);
                    let cont = tr_stmts(adt, tail, ids, post, fresh)?;
                    Ok(Formula::Let(
                        binds,
                        Box::new(Formula::and(with_defs(defs, cont))),
                    ))
                }
                Type::Array(_) => {
                    let m0 = Formula::sym(ids.cur[&format!("{name}M")].clone());
                    let len = Formula::sym(ids.cur[&format!("{name}L")].clone());
                    defs.push(in_bounds(&gk, &len));
                    let m1 = next_sym(&format!("{name}M"), fresh);
                    let binds = vec![(m1.clone(), Formula::store(m0, gk, gv))];
                    ids.cur.insert(format!("{name}M"), m1);
                    let cont = tr_stmts(adt, tail, ids, post, fresh)?;
                    Ok(Formula::Let(
                        binds,
                        Box::new(Formula::and(with_defs(defs, cont))),
                    ))
                }
                other => Err(EmbedError::Unembeddable(format!(
                    "indexed write into {other}"
                ))),
            }
        }
        Stmt::If(c, t, e) => {
            let (gc, defs) = tr_expr(c, &ids)?;
            let mut then_list = t.flatten();
            then_list.extend_from_slice(tail);
            let mut else_list = e.flatten();
            else_list.extend_from_slice(tail);
            let then_f = tr_stmts(adt, &then_list, ids.clone(), post, fresh)?;
            let else_f = tr_stmts(adt, &else_list, ids, post, fresh)?;
            Ok(Formula::and(with_defs(
                defs,
                Formula::ite(gc, then_f, else_f),
            )))
        }
        Stmt::While(..) => Err(EmbedError::Unembeddable(
            "loop without an instrumented summary".to_string(),
        )),
        Stmt::For(..) => Err(EmbedError::Unembeddable("for loop".to_string())),
        Stmt::Commute { left, right, .. } => {
            // nested commute blocks embed as sequential composition
            let mut flat = left.flatten();
            flat.extend(right.flatten());
            flat.extend_from_slice(tail);
            tr_stmts(adt, &flat, ids, post, fresh)
        }
        // lock/unlock only gate scheduling; sequentially they are no-ops
        Stmt::Lock(_) | Stmt::Unlock(_) => tr_stmts(adt, tail, ids, post, fresh),
        Stmt::Havoc(names) => {
            let mut bound = Vec::new();
            for n in names {
                let ty = ids
                    .types
                    .get(n)
                    .cloned()
                    .ok_or_else(|| EmbedError::UnknownVar(n.clone()))?;
                let sort = sort_of_scalar(&ty)
                    .map_err(|_| EmbedError::Unembeddable(format!("havoc on container `{n}`")))?;
                let sym = next_sym(n, fresh);
                ids.cur.insert(n.clone(), sym.clone());
                bound.push((sym, sort));
            }
            let cont = tr_stmts(adt, tail, ids, post, fresh)?;
            Ok(Formula::Exists(bound, Box::new(cont)))
        }
        Stmt::Assume(e) => {
            let (g, defs) = tr_expr(e, &ids)?;
            let cont = tr_stmts(adt, tail, ids, post, fresh)?;
            Ok(Formula::and(with_defs(defs, Formula::and(vec![g, cont]))))
        }
    }
}

fn with_defs(mut defs: Vec<Formula>, cont: Formula) -> Vec<Formula> {
    defs.push(cont);
    defs
}

fn in_bounds(idx: &Formula, len: &Formula) -> Formula {
    Formula::and(vec![
        Formula::App("<=".into(), vec![Formula::IntLit(0), idx.clone()]),
        Formula::App("<".into(), vec![idx.clone(), len.clone()]),
    ])
}

fn tr_expr(e: &Expr, ids: &Ids) -> Result<(Formula, Vec<Formula>), EmbedError> {
    Ok(match e {
        Expr::Const(Value::Int(n)) => (Formula::IntLit(*n), vec![]),
        Expr::Const(Value::Bool(true)) => (Formula::True, vec![]),
        Expr::Const(Value::Bool(false)) => (Formula::False, vec![]),
        Expr::Const(Value::Str(s)) => (Formula::StrLit(s.clone()), vec![]),
        Expr::Const(v) => {
            return Err(EmbedError::Unembeddable(format!(
                "{} constant",
                v.kind()
            )))
        }
        Expr::Var(n) => {
            let ty = ids
                .types
                .get(n)
                .ok_or_else(|| EmbedError::UnknownVar(n.clone()))?;
            if ty.is_container() {
                return Err(EmbedError::Unembeddable(format!(
                    "container `{n}` used as a value"
                )));
            }
            (Formula::sym(ids.cur[n].clone()), vec![])
        }
        Expr::Unop(UnOp::Neg, inner) => {
            let (g, defs) = tr_expr(inner, ids)?;
            (Formula::App("-".into(), vec![g]), defs)
        }
        Expr::Unop(UnOp::Not, inner) => {
            let (g, defs) = tr_expr(inner, ids)?;
            (Formula::negate(g), defs)
        }
        Expr::Binop(a, op, b) => {
            let (ga, mut defs) = tr_expr(a, ids)?;
            let (gb, defs_b) = tr_expr(b, ids)?;
            defs.extend(defs_b);
            let f = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "div",
                BinOp::Mod => "mod",
                BinOp::Eq => "=",
                BinOp::Ne => "distinct",
                BinOp::Lt => "<",
                BinOp::Le => "<=",
                BinOp::Gt => ">",
                BinOp::Ge => ">=",
                BinOp::And => "and",
                BinOp::Or => "or",
            };
            if matches!(op, BinOp::Div | BinOp::Mod) {
                defs.push(Formula::negate(Formula::eq(gb.clone(), Formula::IntLit(0))));
            }
            (Formula::App(f.into(), vec![ga, gb]), defs)
        }
        Expr::Ternary(c, a, b) => {
            let (gc, mut defs) = tr_expr(c, ids)?;
            let (ga, defs_a) = tr_expr(a, ids)?;
            let (gb, defs_b) = tr_expr(b, ids)?;
            // branch definedness only matters on the taken branch
            if !defs_a.is_empty() || !defs_b.is_empty() {
                defs.push(Formula::ite(
                    gc.clone(),
                    Formula::and(defs_a),
                    Formula::and(defs_b),
                ));
            }
            (Formula::ite(gc, ga, gb), defs)
        }
        Expr::Index(base, idx) => {
            let name = match &**base {
                Expr::Var(n) => n.clone(),
                _ => {
                    return Err(EmbedError::Unembeddable(
                        "indexing a non-variable".to_string(),
                    ))
                }
            };
            let ty = ids
                .types
                .get(&name)
                .cloned()
                .ok_or_else(|| EmbedError::UnknownVar(name.clone()))?;
            let (gk, mut defs) = tr_expr(idx, ids)?;
            match ty {
                Type::Hashtable(_, v) => {
                    let k0 = Formula::sym(ids.cur[&format!("{name}K")].clone());
                    let m0 = Formula::sym(ids.cur[&format!("{name}M")].clone());
                    let vs = sort_of_scalar(&v)?;
                    (
                        Formula::ite(
                            Formula::select(k0, gk.clone()),
                            Formula::select(m0, gk),
                            vs.default_literal(),
                        ),
                        defs,
                    )
                }
                Type::Array(_) => {
                    let m0 = Formula::sym(ids.cur[&format!("{name}M")].clone());
                    let len = Formula::sym(ids.cur[&format!("{name}L")].clone());
                    defs.push(in_bounds(&gk, &len));
                    (Formula::select(m0, gk), defs)
                }
                other => {
                    return Err(EmbedError::Unembeddable(format!("indexing into {other}")))
                }
            }
        }
        Expr::Call(name, args) if name == "ht_mem" => {
            let table = table_name(&args[0])?;
            let (gk, defs) = tr_expr(&args[1], ids)?;
            let k0 = Formula::sym(
                ids.cur
                    .get(&format!("{table}K"))
                    .ok_or_else(|| EmbedError::UnknownVar(table.clone()))?
                    .clone(),
            );
            (Formula::select(k0, gk), defs)
        }
        Expr::Call(name, args) if name == "ht_size" => {
            let table = table_name(&args[0])?;
            let s0 = Formula::sym(
                ids.cur
                    .get(&format!("{table}S"))
                    .ok_or_else(|| EmbedError::UnknownVar(table.clone()))?
                    .clone(),
            );
            (s0, vec![])
        }
        Expr::Call(name, _) => {
            return Err(EmbedError::Unembeddable(format!("call to `{name}`")))
        }
        Expr::Deref(_) => return Err(EmbedError::Unembeddable("deref".to_string())),
        Expr::Field(_, f) => {
            return Err(EmbedError::Unembeddable(format!("field access .{f}")))
        }
        Expr::NewArray(..) | Expr::NewHashtable(..) => {
            return Err(EmbedError::Unembeddable("allocation".to_string()))
        }
    })
}

fn table_name(e: &Expr) -> Result<String, EmbedError> {
    match e {
        Expr::Var(n) => Ok(n.clone()),
        _ => Err(EmbedError::Unembeddable(
            "table builtin on a non-variable".to_string(),
        )),
    }
}

/// Translate a source-syntax condition over the site's pre-state into a
/// formula; definedness side conditions are conjoined.
pub fn translate_condition(
    adt: &LogicalAdt,
    condition: &Expr,
    pre: &BTreeMap<String, String>,
) -> Result<Formula, EmbedError> {
    let mut ids = Ids {
        cur: BTreeMap::new(),
        types: BTreeMap::new(),
        locals: BTreeMap::new(),
    };
    for sv in &adt.state {
        ids.types.insert(sv.source.clone(), sv.ty.clone());
        for p in &sv.pieces {
            ids.cur.insert(p.base.clone(), pre[&p.base].clone());
        }
    }
    let (g, defs) = tr_expr(condition, &ids)?;
    Ok(Formula::and(with_defs(defs, g)))
}
