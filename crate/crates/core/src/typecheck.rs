//! Lightweight static checks run before execution: obvious type errors,
//! unbound variables, container element restrictions, and placement rules
//! for havoc/assume. Also records the typed environment visible at each
//! commute site, numbered in source order.

use crate::ast::*;
use crate::parser::is_builtin_call;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TypeError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("`{name}` has type {found}, expected {expected}")]
    Mismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("operator `{op}` cannot be applied to {lhs} and {rhs}")]
    BadBinop { op: String, lhs: String, rhs: String },
    #[error("operator `{op}` cannot be applied to {arg}")]
    BadUnop { op: String, arg: String },
    #[error("condition must be bool, found {0}")]
    CondNotBool(String),
    #[error("cannot index into {0}")]
    NotIndexable(String),
    #[error("index has type {found}, expected {expected}")]
    BadIndex { expected: String, found: String },
    #[error("container elements must be int, bool, or string; found {0}")]
    BadElemType(String),
    #[error("redeclaration of `{0}` with a different type")]
    Redeclaration(String),
    #[error("`{0}` is only allowed inside commute fragments")]
    OutsideFragment(String),
    #[error("unknown function `{0}`")]
    UnknownCall(String),
    #[error("`{0}` expects a hashtable argument")]
    NotATable(String),
    #[error("field access `.{0}` is not available in source programs")]
    NoFields(String),
    #[error("deref is not available in source programs")]
    NoDeref,
    #[error("lock index must be int, found {0}")]
    BadLockIndex(String),
    #[error("havoc variable `{0}` must be int or bool")]
    BadHavocType(String),
}

/// Result of checking: per-site visible environments (source order) and the
/// overall declared variable types.
#[derive(Debug, Clone, Default)]
pub struct TypeInfo {
    pub site_envs: Vec<Vec<(String, Type)>>,
    pub var_types: BTreeMap<String, Type>,
}

struct Checker {
    scopes: Vec<BTreeMap<String, Type>>,
    info: TypeInfo,
    fragment_depth: usize,
}

/// Check a program body against a set of pre-bound input variables.
pub fn typecheck(program: &Program, inputs: &[(String, Type)]) -> Result<TypeInfo, TypeError> {
    typecheck_stmt(&program.body, inputs)
}

pub fn typecheck_stmt(body: &Stmt, inputs: &[(String, Type)]) -> Result<TypeInfo, TypeError> {
    let mut base = BTreeMap::new();
    for (n, t) in inputs {
        base.insert(n.clone(), t.clone());
    }
    let mut ck = Checker {
        scopes: vec![base],
        info: TypeInfo::default(),
        fragment_depth: 0,
    };
    for (n, t) in inputs {
        ck.info.var_types.insert(n.clone(), t.clone());
    }
    ck.stmt(body)?;
    Ok(ck.info)
}

impl Checker {
    fn lookup(&self, name: &str) -> Option<&Type> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn declare(&mut self, name: &str, ty: Type) -> Result<(), TypeError> {
        let scope = self.scopes.last_mut().unwrap();
        if let Some(prev) = scope.get(name) {
            if *prev != ty {
                return Err(TypeError::Redeclaration(name.to_string()));
            }
        }
        scope.insert(name.to_string(), ty.clone());
        self.info.var_types.entry(name.to_string()).or_insert(ty);
        Ok(())
    }

    fn visible_env(&self) -> Vec<(String, Type)> {
        let mut flat: BTreeMap<String, Type> = BTreeMap::new();
        for scope in &self.scopes {
            for (k, v) in scope {
                flat.insert(k.clone(), v.clone());
            }
        }
        flat.into_iter().collect()
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), TypeError> {
        match s {
            Stmt::Skip => Ok(()),
            Stmt::Seq(a, b) => {
                self.stmt(a)?;
                self.stmt(b)
            }
            Stmt::Assign(LValue::Var(name), e) => {
                let ty = self
                    .lookup(name)
                    .cloned()
                    .ok_or_else(|| TypeError::Unbound(name.clone()))?;
                let et = self.expr(e)?;
                if et != ty {
                    return Err(TypeError::Mismatch {
                        name: name.clone(),
                        expected: ty.to_string(),
                        found: et.to_string(),
                    });
                }
                Ok(())
            }
            Stmt::Assign(LValue::Index(name, idx), e) => {
                let ty = self
                    .lookup(name)
                    .cloned()
                    .ok_or_else(|| TypeError::Unbound(name.clone()))?;
                let (key_ty, val_ty) = match &ty {
                    Type::Array(elem) => (Type::Int, (**elem).clone()),
                    Type::Hashtable(k, v) => ((**k).clone(), (**v).clone()),
                    other => return Err(TypeError::NotIndexable(other.to_string())),
                };
                let it = self.expr(idx)?;
                if it != key_ty {
                    return Err(TypeError::BadIndex {
                        expected: key_ty.to_string(),
                        found: it.to_string(),
                    });
                }
                let et = self.expr(e)?;
                if et != val_ty {
                    return Err(TypeError::Mismatch {
                        name: format!("{name}[..]"),
                        expected: val_ty.to_string(),
                        found: et.to_string(),
                    });
                }
                Ok(())
            }
            Stmt::Decl(ty, name, e) => {
                match ty {
                    Type::Array(elem) if !elem.is_scalar() => {
                        return Err(TypeError::BadElemType(elem.to_string()))
                    }
                    Type::Hashtable(k, v) if !k.is_scalar() || !v.is_scalar() => {
                        return Err(TypeError::BadElemType(format!("{k}/{v}")))
                    }
                    _ => {}
                }
                let et = self.expr(e)?;
                if et != *ty {
                    return Err(TypeError::Mismatch {
                        name: name.clone(),
                        expected: ty.to_string(),
                        found: et.to_string(),
                    });
                }
                self.declare(name, ty.clone())
            }
            Stmt::If(c, t, e) => {
                let ct = self.expr(c)?;
                if ct != Type::Bool {
                    return Err(TypeError::CondNotBool(ct.to_string()));
                }
                self.stmt(t)?;
                self.stmt(e)
            }
            Stmt::While(c, b, _) => {
                let ct = self.expr(c)?;
                if ct != Type::Bool {
                    return Err(TypeError::CondNotBool(ct.to_string()));
                }
                self.stmt(b)
            }
            Stmt::For(..) => unreachable!("for loops desugar at parse time"),
            Stmt::Commute {
                guard, left, right, ..
            } => {
                let gt = self.expr(guard)?;
                if gt != Type::Bool {
                    return Err(TypeError::CondNotBool(gt.to_string()));
                }
                self.info.site_envs.push(self.visible_env());
                self.fragment_depth += 1;
                self.scopes.push(BTreeMap::new());
                self.stmt(left)?;
                self.scopes.pop();
                self.scopes.push(BTreeMap::new());
                self.stmt(right)?;
                self.scopes.pop();
                self.fragment_depth -= 1;
                Ok(())
            }
            Stmt::Lock(e) | Stmt::Unlock(e) => {
                let ty = self.expr(e)?;
                if ty != Type::Int {
                    return Err(TypeError::BadLockIndex(ty.to_string()));
                }
                Ok(())
            }
            Stmt::Havoc(names) => {
                if self.fragment_depth == 0 {
                    return Err(TypeError::OutsideFragment("havoc".to_string()));
                }
                for n in names {
                    match self.lookup(n) {
                        None => return Err(TypeError::Unbound(n.clone())),
                        Some(Type::Int) | Some(Type::Bool) => {}
                        Some(_) => return Err(TypeError::BadHavocType(n.clone())),
                    }
                }
                Ok(())
            }
            Stmt::Assume(e) => {
                if self.fragment_depth == 0 {
                    return Err(TypeError::OutsideFragment("assume".to_string()));
                }
                let ty = self.expr(e)?;
                if ty != Type::Bool {
                    return Err(TypeError::CondNotBool(ty.to_string()));
                }
                Ok(())
            }
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<Type, TypeError> {
        use crate::value::Value;
        Ok(match e {
            Expr::Const(v) => match v {
                Value::Int(_) => Type::Int,
                Value::Bool(_) => Type::Bool,
                Value::Str(_) => Type::Str,
                Value::Unit => Type::Unit,
                Value::Ref(_) => Type::Unit, // no surface syntax produces this
            },
            Expr::Var(n) => self
                .lookup(n)
                .cloned()
                .ok_or_else(|| TypeError::Unbound(n.clone()))?,
            Expr::Deref(_) => return Err(TypeError::NoDeref),
            Expr::Index(base, idx) => {
                let bt = self.expr(base)?;
                let (key_ty, val_ty) = match &bt {
                    Type::Array(elem) => (Type::Int, (**elem).clone()),
                    Type::Hashtable(k, v) => ((**k).clone(), (**v).clone()),
                    other => return Err(TypeError::NotIndexable(other.to_string())),
                };
                let it = self.expr(idx)?;
                if it != key_ty {
                    return Err(TypeError::BadIndex {
                        expected: key_ty.to_string(),
                        found: it.to_string(),
                    });
                }
                val_ty
            }
            Expr::NewArray(elem, len) => {
                if !elem.is_scalar() {
                    return Err(TypeError::BadElemType(elem.to_string()));
                }
                let lt = self.expr(len)?;
                if lt != Type::Int {
                    return Err(TypeError::BadIndex {
                        expected: "int".to_string(),
                        found: lt.to_string(),
                    });
                }
                Type::Array(Box::new(elem.clone()))
            }
            Expr::NewHashtable(k, v) => {
                if !k.is_scalar() || !v.is_scalar() {
                    return Err(TypeError::BadElemType(format!("{k}/{v}")));
                }
                Type::Hashtable(Box::new(k.clone()), Box::new(v.clone()))
            }
            Expr::Unop(UnOp::Neg, e) => {
                let t = self.expr(e)?;
                if t != Type::Int {
                    return Err(TypeError::BadUnop {
                        op: "-".to_string(),
                        arg: t.to_string(),
                    });
                }
                Type::Int
            }
            Expr::Unop(UnOp::Not, e) => {
                let t = self.expr(e)?;
                if t != Type::Bool {
                    return Err(TypeError::BadUnop {
                        op: "!".to_string(),
                        arg: t.to_string(),
                    });
                }
                Type::Bool
            }
            Expr::Binop(a, op, b) => {
                let ta = self.expr(a)?;
                let tb = self.expr(b)?;
                let err = || TypeError::BadBinop {
                    op: op.to_string(),
                    lhs: ta.to_string(),
                    rhs: tb.to_string(),
                };
                match op {
                    op if op.is_arith() => {
                        if ta == Type::Int && tb == Type::Int {
                            Type::Int
                        } else {
                            return Err(err());
                        }
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if ta == tb && ta.is_scalar() {
                            Type::Bool
                        } else {
                            return Err(err());
                        }
                    }
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                        if ta == Type::Int && tb == Type::Int {
                            Type::Bool
                        } else {
                            return Err(err());
                        }
                    }
                    _ => {
                        // && and ||
                        if ta == Type::Bool && tb == Type::Bool {
                            Type::Bool
                        } else {
                            return Err(err());
                        }
                    }
                }
            }
            Expr::Ternary(c, a, b) => {
                let ct = self.expr(c)?;
                if ct != Type::Bool {
                    return Err(TypeError::CondNotBool(ct.to_string()));
                }
                let ta = self.expr(a)?;
                let tb = self.expr(b)?;
                if ta != tb {
                    return Err(TypeError::Mismatch {
                        name: "ternary branches".to_string(),
                        expected: ta.to_string(),
                        found: tb.to_string(),
                    });
                }
                ta
            }
            Expr::Field(_, f) => return Err(TypeError::NoFields(f.clone())),
            Expr::Call(name, args) => {
                if !is_builtin_call(name) {
                    return Err(TypeError::UnknownCall(name.clone()));
                }
                match name.as_str() {
                    "ht_mem" => {
                        if args.len() != 2 {
                            return Err(TypeError::UnknownCall("ht_mem/arity".to_string()));
                        }
                        let tt = self.expr(&args[0])?;
                        let kt = match &tt {
                            Type::Hashtable(k, _) => (**k).clone(),
                            other => return Err(TypeError::NotATable(other.to_string())),
                        };
                        let at = self.expr(&args[1])?;
                        if at != kt {
                            return Err(TypeError::BadIndex {
                                expected: kt.to_string(),
                                found: at.to_string(),
                            });
                        }
                        Type::Bool
                    }
                    "ht_size" => {
                        if args.len() != 1 {
                            return Err(TypeError::UnknownCall("ht_size/arity".to_string()));
                        }
                        match self.expr(&args[0])? {
                            Type::Hashtable(_, _) => Type::Int,
                            other => return Err(TypeError::NotATable(other.to_string())),
                        }
                    }
                    other => return Err(TypeError::UnknownCall(other.to_string())),
                }
            }
        })
    }
}
