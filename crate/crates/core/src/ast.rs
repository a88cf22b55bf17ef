//! Abstract syntax for the source language: types, expressions, statements,
//! function definitions, and whole programs.

use crate::value::Value;
use serde::Serialize;
use std::fmt;

/// Source-language types.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Type {
    Int,
    Bool,
    Str,
    Unit,
    Array(Box<Type>),
    Hashtable(Box<Type>, Box<Type>),
    Ref(Box<Type>),
}

impl Type {
    /// Element types of containers must be scalar: no refs, no unit.
    pub fn is_scalar(&self) -> bool {
        matches!(self, Type::Int | Type::Bool | Type::Str)
    }

    pub fn is_container(&self) -> bool {
        matches!(self, Type::Array(_) | Type::Hashtable(_, _))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => write!(f, "int"),
            Type::Bool => write!(f, "bool"),
            Type::Str => write!(f, "string"),
            Type::Unit => write!(f, "unit"),
            Type::Array(t) => write!(f, "{t}[]"),
            Type::Hashtable(k, v) => write!(f, "hashtable[{k},{v}]"),
            Type::Ref(t) => write!(f, "ref[{t}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum UnOp {
    Neg,
    Not,
}

impl fmt::Display for UnOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnOp::Neg => write!(f, "-"),
            UnOp::Not => write!(f, "!"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn is_comparison(&self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }

    pub fn is_arith(&self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Mod
        )
    }

    pub fn is_logic(&self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        };
        write!(f, "{s}")
    }
}

/// Expressions. `Call` survives past parsing only for the table builtins
/// (`ht_mem`, `ht_size`) and `old` inside summary annotations; user function
/// calls are inlined by the parser.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    Const(Value),
    Var(String),
    Deref(Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    NewArray(Type, Box<Expr>),
    NewHashtable(Type, Type),
    Unop(UnOp, Box<Expr>),
    Binop(Box<Expr>, BinOp, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Field(Box<Expr>, String),
    Call(String, Vec<Expr>),
}

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::Const(Value::Int(n))
    }

    pub fn bool(b: bool) -> Expr {
        Expr::Const(Value::Bool(b))
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn binop(lhs: Expr, op: BinOp, rhs: Expr) -> Expr {
        Expr::Binop(Box::new(lhs), op, Box::new(rhs))
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Expr::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Free variables, in first-occurrence order.
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) | Expr::NewHashtable(_, _) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Deref(e) | Expr::Unop(_, e) | Expr::NewArray(_, e) | Expr::Field(e, _) => {
                e.collect_vars(out)
            }
            Expr::Index(a, b) | Expr::Binop(a, _, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Ternary(c, a, b) => {
                c.collect_vars(out);
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
        }
    }
}

/// Assignment targets: a plain variable or a one-level container index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LValue {
    Var(String),
    Index(String, Expr),
}

impl LValue {
    pub fn base_name(&self) -> &str {
        match self {
            LValue::Var(n) | LValue::Index(n, _) => n,
        }
    }
}

/// Which keyword introduced a commute block. All three are semantically
/// identical; the flag selecting seq/nd/par semantics is global per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CommuteKeyword {
    Plain,
    Seq,
    Par,
}

impl CommuteKeyword {
    pub fn text(&self) -> &'static str {
        match self {
            CommuteKeyword::Plain => "commute",
            CommuteKeyword::Seq => "commute_seq",
            CommuteKeyword::Par => "commute_par",
        }
    }
}

/// A loop summary annotation: `// @summary modifies x, y: <relation>`.
/// `old(v)` inside the relation refers to the pre-loop value of `v`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopSummary {
    pub modifies: Vec<String>,
    pub relation: Expr,
}

/// Statements. `For` never escapes the parser: it desugars into its
/// declarations followed by a `while` with the update appended to the body.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Stmt {
    Skip,
    Seq(Box<Stmt>, Box<Stmt>),
    Assign(LValue, Expr),
    Decl(Type, String, Expr),
    If(Expr, Box<Stmt>, Box<Stmt>),
    While(Expr, Box<Stmt>, Option<Box<LoopSummary>>),
    For(Vec<(Type, String, Expr)>, Expr, Box<Stmt>, Box<Stmt>),
    Commute {
        keyword: CommuteKeyword,
        guard: Expr,
        left: Box<Stmt>,
        right: Box<Stmt>,
    },
    Lock(Expr),
    Unlock(Expr),
    Havoc(Vec<String>),
    Assume(Expr),
}

impl Stmt {
    pub fn seq(a: Stmt, b: Stmt) -> Stmt {
        Stmt::Seq(Box::new(a), Box::new(b))
    }

    /// Right-nested sequence of statements; empty list is `skip`.
    pub fn seq_all(stmts: Vec<Stmt>) -> Stmt {
        let mut it = stmts.into_iter().rev();
        match it.next() {
            None => Stmt::Skip,
            Some(last) => it.fold(last, |acc, s| Stmt::seq(s, acc)),
        }
    }

    /// Flatten a sequence tree into a statement list, dropping `skip`s.
    pub fn flatten(&self) -> Vec<&Stmt> {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        out
    }

    fn flatten_into<'a>(&'a self, out: &mut Vec<&'a Stmt>) {
        match self {
            Stmt::Skip => {}
            Stmt::Seq(a, b) => {
                a.flatten_into(out);
                b.flatten_into(out);
            }
            other => out.push(other),
        }
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, Stmt::Skip)
    }

    /// Visit every statement node, outer before inner.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        match self {
            Stmt::Seq(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Stmt::If(_, t, e) => {
                t.walk(f);
                e.walk(f);
            }
            Stmt::While(_, b, _) => b.walk(f),
            Stmt::For(_, _, upd, b) => {
                upd.walk(f);
                b.walk(f);
            }
            Stmt::Commute { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            _ => {}
        }
    }
}

/// A user function: pure by convention, non-recursive, inlined at parse time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunDef {
    pub ret: Type,
    pub name: String,
    pub params: Vec<(Type, String)>,
    pub locals: Vec<(Type, String, Expr)>,
    pub body: Expr,
}

/// Input-variable domain declared in a program header (`// @domain ...`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainDecl {
    pub text: String,
}

/// A parsed program: top-level statement with all calls inlined and all
/// `for` loops desugared, plus header metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Program {
    pub body: Stmt,
    pub functions: Vec<FunDef>,
    pub domain: Option<DomainDecl>,
}
