//! Redex/context decomposition and the base small-step relation, plus the
//! seq and nd lifting rules. Every non-skip statement decomposes into a
//! unique evaluation context and redex; a redex reduces in one step and
//! touches at most one state element.

use crate::ast::*;
use crate::state::{ScopedState, StateError};
use crate::value::{HeapObject, Loc, Value};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RuntimeError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("array index {idx} out of bounds (length {len})")]
    IndexOutOfBounds { idx: i64, len: usize },
    #[error("array length must be non-negative, got {0}")]
    NegativeArrayLength(i64),
    #[error("lock index must be non-negative, got {0}")]
    NegativeLockIndex(i64),
    #[error("dangling reference {0}")]
    DanglingRef(Loc),
    #[error("no field `{0}` on this value")]
    NoSuchField(String),
    #[error("deref has no runtime meaning for container references")]
    DerefUnsupported,
    #[error("call to `{0}` survived parsing; calls must be inlined")]
    CallNotInlined(String),
    #[error("stuck term: {0}")]
    Stuck(String),
    #[error("havoc on `{0}` requires an int or bool variable")]
    HavocBadType(String),
    #[error("program is nondeterministic under seq (havoc present)")]
    NondetInSeq,
}

impl From<StateError> for RuntimeError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Unbound(n) => RuntimeError::Unbound(n),
        }
    }
}

/// Atomically reducible sub-terms, one variant per reduction-table row.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Redex {
    VarRead(String),
    Deref(Value),
    IndexConst(Value, Value),
    NewArray(Type, Value),
    NewHashtable(Type, Type),
    UnopConst(UnOp, Value),
    BinopConsts(Value, BinOp, Value),
    TernaryResolved(Value, Expr, Expr),
    FieldConst(Value, String),
    /// Table builtin observers (`ht_mem`, `ht_size`) with constant args.
    CallBuiltin(String, Vec<Value>),
    /// `lval = c` with a variable or resolved-cell target.
    AssignConst(AssignTarget, Value),
    DeclConst(Type, String, Value),
    IfResolved(Value, Stmt, Stmt),
    WhileUnroll(Expr, Stmt, Option<Box<LoopSummary>>),
    SkipSeq(Stmt),
    CommuteFalse(CommuteKeyword, Stmt, Stmt),
    CommuteTrue {
        keyword: CommuteKeyword,
        left: Stmt,
        right: Stmt,
    },
    Lock(Value),
    Unlock(Value),
    Havoc(Vec<String>),
    Assume(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignTarget {
    Var(String),
    Cell(String, Value),
}

/// One context frame; a context is the path from the program root to the
/// hole.
#[derive(Debug, Clone, PartialEq)]
pub enum CtxFrame {
    SeqLeft(Stmt),
    UnopArg(UnOp),
    BinopLeft(BinOp, Expr),
    BinopRight(Value, BinOp),
    TernaryCond(Expr, Expr),
    IndexBase(Expr),
    IndexIdx(Value),
    FieldBase(String),
    NewArrayLen(Type),
    DerefArg,
    CallArg {
        name: String,
        done: Vec<Value>,
        rest: Vec<Expr>,
    },
    AssignRhs(LValue),
    AssignIdx {
        base: String,
        rhs: Expr,
    },
    DeclRhs(Type, String),
    IfCond(Stmt, Stmt),
    CommuteGuard {
        keyword: CommuteKeyword,
        left: Stmt,
        right: Stmt,
    },
    LockArg,
    UnlockArg,
    AssumeArg,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Context(pub Vec<CtxFrame>);

impl Context {
    pub fn is_hole(&self) -> bool {
        self.0.is_empty()
    }
}

/// A term produced by reduction: either an expression (possibly a value) or
/// a statement.
#[derive(Debug, Clone, PartialEq)]
pub enum Reduced {
    E(Expr),
    S(Stmt),
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Decomposition {
    /// The statement is `skip`: nothing to reduce.
    AlreadyValue,
    Redex(Context, Redex),
    /// Grammatically irreducible but not a value (type-incorrect term).
    Stuck(String),
}

/// State effect of a single step, `ε` or one element update.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    None,
    Var(String, Value),
    Cell(Loc, Value, Value),
    Alloc(Loc, String),
    LockBit(u64, bool),
}

impl Effect {
    pub fn render(&self) -> String {
        match self {
            Effect::None => "-".to_string(),
            Effect::Var(n, v) => format!("{n}={v}"),
            Effect::Cell(loc, k, v) => format!("{loc}[{k}]={v}"),
            Effect::Alloc(loc, obj) => format!("{loc}={obj}"),
            Effect::LockBit(n, b) => format!("lock({n})={b}"),
        }
    }
}

/// Name of the rule that justified a step, as printed in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleName {
    Redex,
    SmallStep,
    ForkStep,
    Join,
    Lock,
    Unlock,
}

impl fmt::Display for RuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RuleName::Redex => "Redex",
            RuleName::SmallStep => "Small-Step",
            RuleName::ForkStep => "Fork-Step",
            RuleName::Join => "Join",
            RuleName::Lock => "Lock",
            RuleName::Unlock => "Unlock",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub stmt: Stmt,
    pub state: ScopedState,
    pub effect: Effect,
    pub rule: RuleName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockReason {
    LockHeld(u64),
    AssumeFalse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepResult {
    Done,
    Blocked(BlockReason),
    Next(Vec<StepOutcome>),
}

/// Which reduction applies to `commute(true)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommuteRule {
    /// Sequential composition in the written order only.
    SeqOnly,
    /// Both orders (the nd semantics).
    BothOrders,
}

/// Interpreter knobs: the finite domains havoc draws from.
#[derive(Debug, Clone)]
pub struct StepConfig {
    pub havoc_ints: Vec<i64>,
    pub havoc_bools: Vec<bool>,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            havoc_ints: (-2..=2).collect(),
            havoc_bools: vec![false, true],
        }
    }
}

impl StepConfig {
    /// Wider havoc range for summary-instrumented fragments, whose
    /// assumed relations can name values outside the base domain (sums of
    /// two domain variables, say).
    pub fn for_analysis() -> Self {
        StepConfig {
            havoc_ints: (-10..=10).collect(),
            havoc_bools: vec![false, true],
        }
    }
}

// ---- decomposition ----

/// Split a statement into its unique evaluation context and redex.
pub fn decompose(s: &Stmt) -> Decomposition {
    let mut frames = Vec::new();
    match decompose_stmt(s, &mut frames) {
        Ok(Some(r)) => Decomposition::Redex(Context(frames), r),
        Ok(None) => Decomposition::AlreadyValue,
        Err(msg) => Decomposition::Stuck(msg),
    }
}

fn decompose_stmt(s: &Stmt, frames: &mut Vec<CtxFrame>) -> Result<Option<Redex>, String> {
    match s {
        Stmt::Skip => Ok(None),
        Stmt::Seq(a, b) => {
            if a.is_skip() {
                Ok(Some(Redex::SkipSeq((**b).clone())))
            } else {
                frames.push(CtxFrame::SeqLeft((**b).clone()));
                decompose_stmt(a, frames)
            }
        }
        Stmt::Assign(lval, rhs) => match lval {
            LValue::Var(name) => match rhs.as_const() {
                Some(v) => Ok(Some(Redex::AssignConst(
                    AssignTarget::Var(name.clone()),
                    v.clone(),
                ))),
                None => {
                    frames.push(CtxFrame::AssignRhs(lval.clone()));
                    decompose_expr(rhs, frames).map(Some)
                }
            },
            LValue::Index(name, idx) => match idx.as_const() {
                None => {
                    frames.push(CtxFrame::AssignIdx {
                        base: name.clone(),
                        rhs: rhs.clone(),
                    });
                    decompose_expr(idx, frames).map(Some)
                }
                Some(k) => match rhs.as_const() {
                    Some(v) => Ok(Some(Redex::AssignConst(
                        AssignTarget::Cell(name.clone(), k.clone()),
                        v.clone(),
                    ))),
                    None => {
                        frames.push(CtxFrame::AssignRhs(lval.clone()));
                        decompose_expr(rhs, frames).map(Some)
                    }
                },
            },
        },
        Stmt::Decl(ty, name, rhs) => match rhs.as_const() {
            Some(v) => Ok(Some(Redex::DeclConst(ty.clone(), name.clone(), v.clone()))),
            None => {
                frames.push(CtxFrame::DeclRhs(ty.clone(), name.clone()));
                decompose_expr(rhs, frames).map(Some)
            }
        },
        Stmt::If(c, t, e) => match c.as_const() {
            Some(v @ Value::Bool(_)) => Ok(Some(Redex::IfResolved(
                v.clone(),
                (**t).clone(),
                (**e).clone(),
            ))),
            Some(v) => Err(format!("if condition is {}, not bool", v.kind())),
            None => {
                frames.push(CtxFrame::IfCond((**t).clone(), (**e).clone()));
                decompose_expr(c, frames).map(Some)
            }
        },
        Stmt::While(c, b, summary) => Ok(Some(Redex::WhileUnroll(
            c.clone(),
            (**b).clone(),
            summary.clone(),
        ))),
        Stmt::For(..) => Err("for loop survived parsing".to_string()),
        Stmt::Commute {
            keyword,
            guard,
            left,
            right,
        } => match guard.as_const() {
            Some(Value::Bool(true)) => Ok(Some(Redex::CommuteTrue {
                keyword: *keyword,
                left: (**left).clone(),
                right: (**right).clone(),
            })),
            Some(Value::Bool(false)) => Ok(Some(Redex::CommuteFalse(
                *keyword,
                (**left).clone(),
                (**right).clone(),
            ))),
            Some(v) => Err(format!("commute guard is {}, not bool", v.kind())),
            None => {
                frames.push(CtxFrame::CommuteGuard {
                    keyword: *keyword,
                    left: (**left).clone(),
                    right: (**right).clone(),
                });
                decompose_expr(guard, frames).map(Some)
            }
        },
        Stmt::Lock(e) => match e.as_const() {
            Some(v @ Value::Int(_)) => Ok(Some(Redex::Lock(v.clone()))),
            Some(v) => Err(format!("lock index is {}, not int", v.kind())),
            None => {
                frames.push(CtxFrame::LockArg);
                decompose_expr(e, frames).map(Some)
            }
        },
        Stmt::Unlock(e) => match e.as_const() {
            Some(v @ Value::Int(_)) => Ok(Some(Redex::Unlock(v.clone()))),
            Some(v) => Err(format!("unlock index is {}, not int", v.kind())),
            None => {
                frames.push(CtxFrame::UnlockArg);
                decompose_expr(e, frames).map(Some)
            }
        },
        Stmt::Havoc(names) => Ok(Some(Redex::Havoc(names.clone()))),
        Stmt::Assume(e) => match e.as_const() {
            Some(v @ Value::Bool(_)) => Ok(Some(Redex::Assume(v.clone()))),
            Some(v) => Err(format!("assume condition is {}, not bool", v.kind())),
            None => {
                frames.push(CtxFrame::AssumeArg);
                decompose_expr(e, frames).map(Some)
            }
        },
    }
}

fn decompose_expr(e: &Expr, frames: &mut Vec<CtxFrame>) -> Result<Redex, String> {
    match e {
        Expr::Const(_) => Err("constant is not reducible".to_string()),
        Expr::Var(n) => Ok(Redex::VarRead(n.clone())),
        Expr::Deref(inner) => match inner.as_const() {
            Some(v) => Ok(Redex::Deref(v.clone())),
            None => {
                frames.push(CtxFrame::DerefArg);
                decompose_expr(inner, frames)
            }
        },
        Expr::Index(base, idx) => match base.as_const() {
            None => {
                frames.push(CtxFrame::IndexBase((**idx).clone()));
                decompose_expr(base, frames)
            }
            Some(b) => match idx.as_const() {
                None => {
                    frames.push(CtxFrame::IndexIdx(b.clone()));
                    decompose_expr(idx, frames)
                }
                Some(i) => {
                    if b.as_ref_loc().is_none() {
                        Err(format!("indexing into {}", b.kind()))
                    } else {
                        Ok(Redex::IndexConst(b.clone(), i.clone()))
                    }
                }
            },
        },
        Expr::NewArray(ty, len) => match len.as_const() {
            Some(v @ Value::Int(_)) => Ok(Redex::NewArray(ty.clone(), v.clone())),
            Some(v) => Err(format!("array length is {}, not int", v.kind())),
            None => {
                frames.push(CtxFrame::NewArrayLen(ty.clone()));
                decompose_expr(len, frames)
            }
        },
        Expr::NewHashtable(k, v) => Ok(Redex::NewHashtable(k.clone(), v.clone())),
        Expr::Unop(op, inner) => match inner.as_const() {
            Some(v) => {
                check_unop(*op, v)?;
                Ok(Redex::UnopConst(*op, v.clone()))
            }
            None => {
                frames.push(CtxFrame::UnopArg(*op));
                decompose_expr(inner, frames)
            }
        },
        Expr::Binop(lhs, op, rhs) => match lhs.as_const() {
            None => {
                frames.push(CtxFrame::BinopLeft(*op, (**rhs).clone()));
                decompose_expr(lhs, frames)
            }
            Some(l) => match rhs.as_const() {
                None => {
                    frames.push(CtxFrame::BinopRight(l.clone(), *op));
                    decompose_expr(rhs, frames)
                }
                Some(r) => {
                    check_binop(l, *op, r)?;
                    Ok(Redex::BinopConsts(l.clone(), *op, r.clone()))
                }
            },
        },
        Expr::Ternary(c, a, b) => match c.as_const() {
            Some(v @ Value::Bool(_)) => {
                Ok(Redex::TernaryResolved(v.clone(), (**a).clone(), (**b).clone()))
            }
            Some(v) => Err(format!("ternary condition is {}, not bool", v.kind())),
            None => {
                frames.push(CtxFrame::TernaryCond((**a).clone(), (**b).clone()));
                decompose_expr(c, frames)
            }
        },
        Expr::Field(base, f) => match base.as_const() {
            Some(v) => Ok(Redex::FieldConst(v.clone(), f.clone())),
            None => {
                frames.push(CtxFrame::FieldBase(f.clone()));
                decompose_expr(base, frames)
            }
        },
        Expr::Call(name, args) => {
            if !crate::parser::is_builtin_call(name) {
                return Err(format!("call to `{name}` is not reducible"));
            }
            let mut done = Vec::new();
            for (i, a) in args.iter().enumerate() {
                match a.as_const() {
                    Some(v) => done.push(v.clone()),
                    None => {
                        let rest: Vec<Expr> = args[i + 1..].to_vec();
                        frames.push(CtxFrame::CallArg {
                            name: name.clone(),
                            done,
                            rest,
                        });
                        return decompose_expr(a, frames);
                    }
                }
            }
            Ok(Redex::CallBuiltin(name.clone(), done))
        }
    }
}

fn check_unop(op: UnOp, v: &Value) -> Result<(), String> {
    match (op, v) {
        (UnOp::Neg, Value::Int(_)) | (UnOp::Not, Value::Bool(_)) => Ok(()),
        _ => Err(format!("`{op}` applied to {}", v.kind())),
    }
}

fn check_binop(l: &Value, op: BinOp, r: &Value) -> Result<(), String> {
    let ok = match op {
        op if op.is_arith() => matches!((l, r), (Value::Int(_), Value::Int(_))),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            matches!((l, r), (Value::Int(_), Value::Int(_)))
        }
        BinOp::Eq | BinOp::Ne => l.kind() == r.kind(),
        _ => matches!((l, r), (Value::Bool(_), Value::Bool(_))),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("`{op}` applied to {} and {}", l.kind(), r.kind()))
    }
}

// ---- plugging ----

/// Rebuild the statement with the hole of `ctx` filled by `term`.
pub fn plug(ctx: &Context, term: Reduced) -> Stmt {
    let mut cur = term;
    for frame in ctx.0.iter().rev() {
        cur = plug_frame(frame, cur);
    }
    match cur {
        Reduced::S(s) => s,
        Reduced::E(e) => panic!("context root is an expression: {e:?}"),
    }
}

fn plug_frame(frame: &CtxFrame, term: Reduced) -> Reduced {
    match frame {
        CtxFrame::SeqLeft(s) => {
            Reduced::S(Stmt::seq(term.into_stmt(), s.clone()))
        }
        CtxFrame::UnopArg(op) => Reduced::E(Expr::Unop(*op, Box::new(term.into_expr()))),
        CtxFrame::BinopLeft(op, rhs) => Reduced::E(Expr::Binop(
            Box::new(term.into_expr()),
            *op,
            Box::new(rhs.clone()),
        )),
        CtxFrame::BinopRight(l, op) => Reduced::E(Expr::Binop(
            Box::new(Expr::Const(l.clone())),
            *op,
            Box::new(term.into_expr()),
        )),
        CtxFrame::TernaryCond(a, b) => Reduced::E(Expr::Ternary(
            Box::new(term.into_expr()),
            Box::new(a.clone()),
            Box::new(b.clone()),
        )),
        CtxFrame::IndexBase(idx) => Reduced::E(Expr::Index(
            Box::new(term.into_expr()),
            Box::new(idx.clone()),
        )),
        CtxFrame::IndexIdx(base) => Reduced::E(Expr::Index(
            Box::new(Expr::Const(base.clone())),
            Box::new(term.into_expr()),
        )),
        CtxFrame::FieldBase(f) => {
            Reduced::E(Expr::Field(Box::new(term.into_expr()), f.clone()))
        }
        CtxFrame::NewArrayLen(ty) => {
            Reduced::E(Expr::NewArray(ty.clone(), Box::new(term.into_expr())))
        }
        CtxFrame::DerefArg => Reduced::E(Expr::Deref(Box::new(term.into_expr()))),
        CtxFrame::CallArg { name, done, rest } => {
            let mut args: Vec<Expr> = done.iter().map(|v| Expr::Const(v.clone())).collect();
            args.push(term.into_expr());
            args.extend(rest.iter().cloned());
            Reduced::E(Expr::Call(name.clone(), args))
        }
        CtxFrame::AssignRhs(lval) => {
            Reduced::S(Stmt::Assign(lval.clone(), term.into_expr()))
        }
        CtxFrame::AssignIdx { base, rhs } => Reduced::S(Stmt::Assign(
            LValue::Index(base.clone(), term.into_expr()),
            rhs.clone(),
        )),
        CtxFrame::DeclRhs(ty, name) => {
            Reduced::S(Stmt::Decl(ty.clone(), name.clone(), term.into_expr()))
        }
        CtxFrame::IfCond(t, e) => Reduced::S(Stmt::If(
            term.into_expr(),
            Box::new(t.clone()),
            Box::new(e.clone()),
        )),
        CtxFrame::CommuteGuard {
            keyword,
            left,
            right,
        } => Reduced::S(Stmt::Commute {
            keyword: *keyword,
            guard: term.into_expr(),
            left: Box::new(left.clone()),
            right: Box::new(right.clone()),
        }),
        CtxFrame::LockArg => Reduced::S(Stmt::Lock(term.into_expr())),
        CtxFrame::UnlockArg => Reduced::S(Stmt::Unlock(term.into_expr())),
        CtxFrame::AssumeArg => Reduced::S(Stmt::Assume(term.into_expr())),
    }
}

impl Reduced {
    fn into_expr(self) -> Expr {
        match self {
            Reduced::E(e) => e,
            Reduced::S(s) => panic!("expected expression in context hole, got {s:?}"),
        }
    }

    fn into_stmt(self) -> Stmt {
        match self {
            Reduced::S(s) => s,
            Reduced::E(e) => panic!("expected statement in context hole, got {e:?}"),
        }
    }
}

/// The redex written back as a term, for the `plug(H, r) = s` identity.
pub fn redex_to_term(r: &Redex) -> Reduced {
    match r {
        Redex::VarRead(n) => Reduced::E(Expr::Var(n.clone())),
        Redex::Deref(v) => Reduced::E(Expr::Deref(Box::new(Expr::Const(v.clone())))),
        Redex::IndexConst(b, i) => Reduced::E(Expr::Index(
            Box::new(Expr::Const(b.clone())),
            Box::new(Expr::Const(i.clone())),
        )),
        Redex::NewArray(t, l) => {
            Reduced::E(Expr::NewArray(t.clone(), Box::new(Expr::Const(l.clone()))))
        }
        Redex::NewHashtable(k, v) => Reduced::E(Expr::NewHashtable(k.clone(), v.clone())),
        Redex::UnopConst(op, v) => {
            Reduced::E(Expr::Unop(*op, Box::new(Expr::Const(v.clone()))))
        }
        Redex::BinopConsts(l, op, r) => Reduced::E(Expr::Binop(
            Box::new(Expr::Const(l.clone())),
            *op,
            Box::new(Expr::Const(r.clone())),
        )),
        Redex::TernaryResolved(c, a, b) => Reduced::E(Expr::Ternary(
            Box::new(Expr::Const(c.clone())),
            Box::new(a.clone()),
            Box::new(b.clone()),
        )),
        Redex::FieldConst(v, f) => {
            Reduced::E(Expr::Field(Box::new(Expr::Const(v.clone())), f.clone()))
        }
        Redex::CallBuiltin(n, args) => Reduced::E(Expr::Call(
            n.clone(),
            args.iter().map(|v| Expr::Const(v.clone())).collect(),
        )),
        Redex::AssignConst(target, v) => {
            let lval = match target {
                AssignTarget::Var(n) => LValue::Var(n.clone()),
                AssignTarget::Cell(n, k) => LValue::Index(n.clone(), Expr::Const(k.clone())),
            };
            Reduced::S(Stmt::Assign(lval, Expr::Const(v.clone())))
        }
        Redex::DeclConst(t, n, v) => {
            Reduced::S(Stmt::Decl(t.clone(), n.clone(), Expr::Const(v.clone())))
        }
        Redex::IfResolved(c, t, e) => Reduced::S(Stmt::If(
            Expr::Const(c.clone()),
            Box::new(t.clone()),
            Box::new(e.clone()),
        )),
        Redex::WhileUnroll(c, b, summary) => Reduced::S(Stmt::While(
            c.clone(),
            Box::new(b.clone()),
            summary.clone(),
        )),
        Redex::SkipSeq(s) => Reduced::S(Stmt::seq(Stmt::Skip, s.clone())),
        Redex::CommuteFalse(kw, l, r) => Reduced::S(Stmt::Commute {
            keyword: *kw,
            guard: Expr::bool(false),
            left: Box::new(l.clone()),
            right: Box::new(r.clone()),
        }),
        Redex::CommuteTrue {
            keyword,
            left,
            right,
        } => Reduced::S(Stmt::Commute {
            keyword: *keyword,
            guard: Expr::bool(true),
            left: Box::new(left.clone()),
            right: Box::new(right.clone()),
        }),
        Redex::Lock(v) => Reduced::S(Stmt::Lock(Expr::Const(v.clone()))),
        Redex::Unlock(v) => Reduced::S(Stmt::Unlock(Expr::Const(v.clone()))),
        Redex::Havoc(ns) => Reduced::S(Stmt::Havoc(ns.clone())),
        Redex::Assume(v) => Reduced::S(Stmt::Assume(Expr::Const(v.clone()))),
    }
}

// ---- redex reduction ----

#[allow(clippy::large_enum_variant)]
pub enum RedexOutcome {
    Step(Reduced, ScopedState, Effect),
    NotEnabled(BlockReason),
}

/// Apply one reduction-table row. Returns `NotEnabled` for a lock acquire on
/// a held lock and for a false assume.
pub fn reduce_redex(
    r: &Redex,
    state: &ScopedState,
) -> Result<RedexOutcome, RuntimeError> {
    use RedexOutcome::Step;
    let ok = |term: Reduced, state: ScopedState, eff: Effect| Ok(Step(term, state, eff));
    match r {
        Redex::VarRead(n) => {
            let v = state.lookup(n)?.clone();
            ok(Reduced::E(Expr::Const(v)), state.clone(), Effect::None)
        }
        Redex::Deref(_) => Err(RuntimeError::DerefUnsupported),
        Redex::IndexConst(base, idx) => {
            let loc = base
                .as_ref_loc()
                .ok_or_else(|| RuntimeError::Stuck(format!("indexing into {}", base.kind())))?;
            let obj = state
                .globals
                .heap
                .get(loc)
                .ok_or(RuntimeError::DanglingRef(loc))?;
            let v = match obj {
                HeapObject::Array(cells) => {
                    let i = idx
                        .as_int()
                        .ok_or_else(|| RuntimeError::Stuck("array index not int".into()))?;
                    if i < 0 || i as usize >= cells.len() {
                        return Err(RuntimeError::IndexOutOfBounds {
                            idx: i,
                            len: cells.len(),
                        });
                    }
                    cells[i as usize].clone()
                }
                HeapObject::Table { map, default } => {
                    map.get(idx).cloned().unwrap_or_else(|| default.clone())
                }
            };
            ok(Reduced::E(Expr::Const(v)), state.clone(), Effect::None)
        }
        Redex::NewArray(ty, len) => {
            let n = len.as_int().unwrap_or(0);
            if n < 0 {
                return Err(RuntimeError::NegativeArrayLength(n));
            }
            let mut st = state.clone();
            let cells = vec![crate::value::default_value(ty); n as usize];
            let obj = HeapObject::Array(cells);
            let rendered = obj.render();
            let loc = st.globals.heap.alloc(obj);
            ok(
                Reduced::E(Expr::Const(Value::Ref(loc))),
                st,
                Effect::Alloc(loc, rendered),
            )
        }
        Redex::NewHashtable(_k, v) => {
            let mut st = state.clone();
            let obj = HeapObject::Table {
                map: Default::default(),
                default: crate::value::default_value(v),
            };
            let rendered = obj.render();
            let loc = st.globals.heap.alloc(obj);
            ok(
                Reduced::E(Expr::Const(Value::Ref(loc))),
                st,
                Effect::Alloc(loc, rendered),
            )
        }
        Redex::UnopConst(op, v) => {
            let out = eval_unop(*op, v)?;
            ok(Reduced::E(Expr::Const(out)), state.clone(), Effect::None)
        }
        Redex::BinopConsts(l, op, r) => {
            let out = eval_binop(l, *op, r)?;
            ok(Reduced::E(Expr::Const(out)), state.clone(), Effect::None)
        }
        Redex::TernaryResolved(c, a, b) => {
            let cond = c
                .as_bool()
                .ok_or_else(|| RuntimeError::Stuck("ternary condition not bool".into()))?;
            let branch = if cond { a.clone() } else { b.clone() };
            ok(Reduced::E(branch), state.clone(), Effect::None)
        }
        Redex::FieldConst(_, f) => Err(RuntimeError::NoSuchField(f.clone())),
        Redex::CallBuiltin(name, args) => {
            let v = eval_builtin(name, args, state)?;
            ok(Reduced::E(Expr::Const(v)), state.clone(), Effect::None)
        }
        Redex::AssignConst(target, v) => match target {
            AssignTarget::Var(name) => {
                let mut st = state.clone();
                st.update(name, v.clone())?;
                ok(
                    Reduced::S(Stmt::Skip),
                    st,
                    Effect::Var(name.clone(), v.clone()),
                )
            }
            AssignTarget::Cell(name, key) => {
                let loc = state
                    .lookup(name)?
                    .as_ref_loc()
                    .ok_or_else(|| RuntimeError::Stuck(format!("`{name}` is not a container")))?;
                let mut st = state.clone();
                let obj = st
                    .globals
                    .heap
                    .get_mut(loc)
                    .ok_or(RuntimeError::DanglingRef(loc))?;
                match obj {
                    HeapObject::Array(cells) => {
                        let i = key
                            .as_int()
                            .ok_or_else(|| RuntimeError::Stuck("array index not int".into()))?;
                        if i < 0 || i as usize >= cells.len() {
                            return Err(RuntimeError::IndexOutOfBounds {
                                idx: i,
                                len: cells.len(),
                            });
                        }
                        cells[i as usize] = v.clone();
                    }
                    HeapObject::Table { map, .. } => {
                        map.insert(key.clone(), v.clone());
                    }
                }
                ok(
                    Reduced::S(Stmt::Skip),
                    st,
                    Effect::Cell(loc, key.clone(), v.clone()),
                )
            }
        },
        Redex::DeclConst(_ty, name, v) => {
            let mut st = state.clone();
            st.declare(name, v.clone());
            ok(
                Reduced::S(Stmt::Skip),
                st,
                Effect::Var(name.clone(), v.clone()),
            )
        }
        Redex::IfResolved(c, t, e) => {
            let cond = c
                .as_bool()
                .ok_or_else(|| RuntimeError::Stuck("if condition not bool".into()))?;
            let branch = if cond { t.clone() } else { e.clone() };
            ok(Reduced::S(branch), state.clone(), Effect::None)
        }
        Redex::WhileUnroll(c, b, summary) => {
            let unrolled = Stmt::If(
                c.clone(),
                Box::new(Stmt::seq(
                    b.clone(),
                    Stmt::While(c.clone(), Box::new(b.clone()), summary.clone()),
                )),
                Box::new(Stmt::Skip),
            );
            ok(Reduced::S(unrolled), state.clone(), Effect::None)
        }
        Redex::SkipSeq(s) => ok(Reduced::S(s.clone()), state.clone(), Effect::None),
        Redex::CommuteFalse(_, l, r) => ok(
            Reduced::S(Stmt::seq(l.clone(), r.clone())),
            state.clone(),
            Effect::None,
        ),
        Redex::CommuteTrue { .. } => Err(RuntimeError::Stuck(
            "commute(true) reduction is semantics-specific".into(),
        )),
        Redex::Lock(v) => {
            let n = v.as_int().unwrap_or(-1);
            if n < 0 {
                return Err(RuntimeError::NegativeLockIndex(n));
            }
            let n = n as u64;
            if state.globals.lock_held(n) {
                return Ok(RedexOutcome::NotEnabled(BlockReason::LockHeld(n)));
            }
            let mut st = state.clone();
            st.globals.locks.insert(n, true);
            ok(Reduced::S(Stmt::Skip), st, Effect::LockBit(n, true))
        }
        Redex::Unlock(v) => {
            let n = v.as_int().unwrap_or(-1);
            if n < 0 {
                return Err(RuntimeError::NegativeLockIndex(n));
            }
            let n = n as u64;
            let mut st = state.clone();
            st.globals.locks.insert(n, false);
            ok(Reduced::S(Stmt::Skip), st, Effect::LockBit(n, false))
        }
        Redex::Havoc(_) | Redex::Assume(_) => Err(RuntimeError::Stuck(
            "havoc/assume handled by the step relation".into(),
        )),
    }
}

pub(crate) fn eval_unop(op: UnOp, v: &Value) -> Result<Value, RuntimeError> {
    match (op, v) {
        (UnOp::Neg, Value::Int(n)) => Ok(Value::Int(n.wrapping_neg())),
        (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
        _ => Err(RuntimeError::Stuck(format!(
            "`{op}` applied to {}",
            v.kind()
        ))),
    }
}

/// Integer division and modulo are Euclidean (the remainder is never
/// negative), matching the logical embedding exactly.
pub(crate) fn eval_binop(l: &Value, op: BinOp, r: &Value) -> Result<Value, RuntimeError> {
    use BinOp::*;
    use Value::*;
    Ok(match (l, op, r) {
        (Int(a), Add, Int(b)) => Int(a.wrapping_add(*b)),
        (Int(a), Sub, Int(b)) => Int(a.wrapping_sub(*b)),
        (Int(a), Mul, Int(b)) => Int(a.wrapping_mul(*b)),
        (Int(a), Div, Int(b)) => {
            if *b == 0 {
                return Err(RuntimeError::DivisionByZero);
            }
            Int(a.wrapping_div_euclid(*b))
        }
        (Int(a), Mod, Int(b)) => {
            if *b == 0 {
                return Err(RuntimeError::DivisionByZero);
            }
            Int(a.wrapping_rem_euclid(*b))
        }
        (Int(a), Lt, Int(b)) => Bool(a < b),
        (Int(a), Le, Int(b)) => Bool(a <= b),
        (Int(a), Gt, Int(b)) => Bool(a > b),
        (Int(a), Ge, Int(b)) => Bool(a >= b),
        (a, Eq, b) if a.kind() == b.kind() => Bool(a == b),
        (a, Ne, b) if a.kind() == b.kind() => Bool(a != b),
        (Bool(a), And, Bool(b)) => Bool(*a && *b),
        (Bool(a), Or, Bool(b)) => Bool(*a || *b),
        (a, op, b) => {
            return Err(RuntimeError::Stuck(format!(
                "`{op}` applied to {} and {}",
                a.kind(),
                b.kind()
            )))
        }
    })
}

fn eval_builtin(name: &str, args: &[Value], state: &ScopedState) -> Result<Value, RuntimeError> {
    let table = |v: &Value| -> Result<Loc, RuntimeError> {
        v.as_ref_loc()
            .ok_or_else(|| RuntimeError::Stuck(format!("{name} expects a table, got {}", v.kind())))
    };
    match name {
        "ht_mem" => {
            let loc = table(&args[0])?;
            match state.globals.heap.get(loc) {
                Some(HeapObject::Table { map, .. }) => Ok(Value::Bool(map.contains_key(&args[1]))),
                Some(_) => Err(RuntimeError::Stuck("ht_mem on a non-table".into())),
                None => Err(RuntimeError::DanglingRef(loc)),
            }
        }
        "ht_size" => {
            let loc = table(&args[0])?;
            match state.globals.heap.get(loc) {
                Some(HeapObject::Table { map, .. }) => Ok(Value::Int(map.len() as i64)),
                Some(_) => Err(RuntimeError::Stuck("ht_size on a non-table".into())),
                None => Err(RuntimeError::DanglingRef(loc)),
            }
        }
        other => Err(RuntimeError::CallNotInlined(other.to_string())),
    }
}

// ---- step relations ----

/// Apply one step to `⟨stmt, state⟩` given a decomposition policy for
/// `commute(true)`. Havoc branches over the configured finite domain.
pub fn step(
    stmt: &Stmt,
    state: &ScopedState,
    cfg: &StepConfig,
    commute: CommuteRule,
) -> Result<StepResult, RuntimeError> {
    let (ctx, redex) = match decompose(stmt) {
        Decomposition::AlreadyValue => return Ok(StepResult::Done),
        Decomposition::Stuck(msg) => return Err(RuntimeError::Stuck(msg)),
        Decomposition::Redex(ctx, r) => (ctx, r),
    };
    apply_redex(&ctx, &redex, state, cfg, commute)
}

/// Reduce an already-located redex under its context.
pub fn apply_redex(
    ctx: &Context,
    redex: &Redex,
    state: &ScopedState,
    cfg: &StepConfig,
    commute: CommuteRule,
) -> Result<StepResult, RuntimeError> {
    let base_rule = |r: &Redex| match r {
        Redex::Lock(_) => RuleName::Lock,
        Redex::Unlock(_) => RuleName::Unlock,
        _ if ctx.is_hole() => RuleName::Redex,
        _ => RuleName::SmallStep,
    };
    match redex {
        Redex::CommuteTrue { left, right, .. } => {
            let mut outs = vec![StepOutcome {
                stmt: plug(ctx, Reduced::S(Stmt::seq(left.clone(), right.clone()))),
                state: state.clone(),
                effect: Effect::None,
                rule: base_rule(redex),
            }];
            if commute == CommuteRule::BothOrders {
                outs.push(StepOutcome {
                    stmt: plug(ctx, Reduced::S(Stmt::seq(right.clone(), left.clone()))),
                    state: state.clone(),
                    effect: Effect::None,
                    rule: base_rule(redex),
                });
            }
            Ok(StepResult::Next(outs))
        }
        Redex::Havoc(names) => {
            let (first, rest) = names
                .split_first()
                .expect("parser guarantees nonempty havoc");
            let current = state.lookup(first)?.clone();
            let choices: Vec<Value> = match current {
                Value::Int(_) => cfg.havoc_ints.iter().map(|n| Value::Int(*n)).collect(),
                Value::Bool(_) => cfg.havoc_bools.iter().map(|b| Value::Bool(*b)).collect(),
                _ => return Err(RuntimeError::HavocBadType(first.clone())),
            };
            let next_stmt = if rest.is_empty() {
                Stmt::Skip
            } else {
                Stmt::Havoc(rest.to_vec())
            };
            let outs = choices
                .into_iter()
                .map(|v| {
                    let mut st = state.clone();
                    st.update(first, v.clone())?;
                    Ok(StepOutcome {
                        stmt: plug(ctx, Reduced::S(next_stmt.clone())),
                        state: st,
                        effect: Effect::Var(first.clone(), v),
                        rule: base_rule(redex),
                    })
                })
                .collect::<Result<Vec<_>, RuntimeError>>()?;
            Ok(StepResult::Next(outs))
        }
        Redex::Assume(v) => {
            if v.as_bool() == Some(true) {
                Ok(StepResult::Next(vec![StepOutcome {
                    stmt: plug(ctx, Reduced::S(Stmt::Skip)),
                    state: state.clone(),
                    effect: Effect::None,
                    rule: base_rule(redex),
                }]))
            } else {
                Ok(StepResult::Blocked(BlockReason::AssumeFalse))
            }
        }
        _ => match reduce_redex(redex, state)? {
            RedexOutcome::Step(term, st, eff) => Ok(StepResult::Next(vec![StepOutcome {
                stmt: plug(ctx, term),
                state: st,
                effect: eff,
                rule: base_rule(redex),
            }])),
            RedexOutcome::NotEnabled(reason) => Ok(StepResult::Blocked(reason)),
        },
    }
}

/// Deterministic sequential step: `commute(true)` sequences in written
/// order. Errors on havoc, which has no deterministic reading.
pub fn step_seq(
    stmt: &Stmt,
    state: &ScopedState,
    cfg: &StepConfig,
) -> Result<StepResult, RuntimeError> {
    if let Decomposition::Redex(_, Redex::Havoc(_)) = decompose(stmt) {
        return Err(RuntimeError::NondetInSeq);
    }
    let r = step(stmt, state, cfg, CommuteRule::SeqOnly)?;
    if let StepResult::Next(outs) = &r {
        debug_assert_eq!(outs.len(), 1);
    }
    Ok(r)
}

/// Nondeterministic step: all successors under the nd semantics.
pub fn step_nd(
    stmt: &Stmt,
    state: &ScopedState,
    cfg: &StepConfig,
) -> Result<StepResult, RuntimeError> {
    step(stmt, state, cfg, CommuteRule::BothOrders)
}

/// Evaluate a side-effect-free expression in one go: reads state but cannot
/// allocate or call. Lazy ternary, total `&&`/`||`, Euclidean division,
/// exactly as the stepper reduces.
pub fn eval_pure_expr(e: &Expr, state: &ScopedState) -> Result<Value, RuntimeError> {
    match e {
        Expr::Const(v) => Ok(v.clone()),
        Expr::Var(n) => Ok(state.lookup(n)?.clone()),
        Expr::Deref(_) => Err(RuntimeError::DerefUnsupported),
        Expr::Index(base, idx) => {
            let b = eval_pure_expr(base, state)?;
            let i = eval_pure_expr(idx, state)?;
            match reduce_redex(&Redex::IndexConst(b, i), state)? {
                RedexOutcome::Step(Reduced::E(Expr::Const(v)), _, _) => Ok(v),
                _ => Err(RuntimeError::Stuck("index read".into())),
            }
        }
        Expr::NewArray(..) | Expr::NewHashtable(..) => Err(RuntimeError::Stuck(
            "allocation in a pure-expression position".into(),
        )),
        Expr::Unop(op, inner) => eval_unop(*op, &eval_pure_expr(inner, state)?),
        Expr::Binop(a, op, b) => {
            let l = eval_pure_expr(a, state)?;
            let r = eval_pure_expr(b, state)?;
            eval_binop(&l, *op, &r)
        }
        Expr::Ternary(c, a, b) => {
            let cond = eval_pure_expr(c, state)?
                .as_bool()
                .ok_or_else(|| RuntimeError::Stuck("ternary condition not bool".into()))?;
            if cond {
                eval_pure_expr(a, state)
            } else {
                eval_pure_expr(b, state)
            }
        }
        Expr::Field(_, f) => Err(RuntimeError::NoSuchField(f.clone())),
        Expr::Call(name, args) => {
            if !crate::parser::is_builtin_call(name) {
                return Err(RuntimeError::CallNotInlined(name.clone()));
            }
            let vals = args
                .iter()
                .map(|a| eval_pure_expr(a, state))
                .collect::<Result<Vec<_>, _>>()?;
            eval_builtin(name, &vals, state)
        }
    }
}

/// Run a statement to completion under seq, with a step budget.
pub fn run_seq(
    stmt: &Stmt,
    state: ScopedState,
    cfg: &StepConfig,
    max_steps: usize,
) -> Result<ScopedState, RuntimeError> {
    let mut cur_stmt = stmt.clone();
    let mut cur_state = state;
    for _ in 0..max_steps {
        match step_seq(&cur_stmt, &cur_state, cfg)? {
            StepResult::Done => return Ok(cur_state),
            StepResult::Blocked(BlockReason::LockHeld(n)) => {
                return Err(RuntimeError::Stuck(format!(
                    "deadlock: lock({n}) already held"
                )))
            }
            StepResult::Blocked(BlockReason::AssumeFalse) => {
                return Err(RuntimeError::Stuck("assumption failed".into()))
            }
            StepResult::Next(mut outs) => {
                let out = outs.remove(0);
                cur_stmt = out.stmt;
                cur_state = out.state;
            }
        }
    }
    Err(RuntimeError::Stuck("step budget exhausted".into()))
}
