//! Interpreter and analysis toolkit for a small imperative language with
//! `commute` blocks: sequential, nondeterministic, and parallel semantics;
//! scoped-serializability checking; commutativity-condition verification and
//! inference; and lock-synthesis program transformations.

pub mod ast;
pub mod lexer;
pub mod locksynth;
pub mod parser;
pub mod printer;
pub mod state;
pub mod stepper;
pub mod typecheck;
pub mod value;

pub mod commutativity;
pub mod explorer;
pub mod par;
pub mod runtime;
pub mod serializability;

pub use ast::{BinOp, Expr, LValue, Program, Stmt, Type, UnOp};
pub use state::{Frame, Globals, ScopedState};
pub use value::{Heap, HeapObject, Loc, Value};
