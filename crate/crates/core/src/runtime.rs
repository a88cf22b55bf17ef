//! Fast multi-worker runtime. Fragments of a true-guarded commute block run
//! on OS threads spawned at the fork and joined at the block's end. Scopes
//! visible to both fragments are shared behind per-variable mutexes, so
//! every state-element access is its own atomic step; the heap and the lock
//! map are global, with table operations atomic under the heap guard.

use crate::ast::{Expr, LValue, Stmt};
use crate::state::{Frame, Globals, ScopedState};
use crate::stepper::{eval_binop, eval_unop, RuntimeError};
use crate::value::{HeapObject, Loc, Value};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum ParallelError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("deadlock: lock({0}) not released within the timeout")]
    LockTimeout(u64),
    #[error("wall-clock timeout exceeded")]
    Timeout,
    #[error("havoc/assume are analysis constructs; the parallel runtime does not execute them")]
    AnalysisConstruct,
}

#[derive(Debug)]
pub struct ParallelOutcome {
    pub state: ScopedState,
    pub duration: Duration,
}

struct SharedHeap {
    objects: Mutex<HashMap<u64, HeapObject>>,
    next: AtomicU64,
}

struct SharedLocks {
    map: Mutex<HashMap<u64, bool>>,
    cv: Condvar,
}

// slots are RwLocks so concurrent pure reads of shared variables do not
// serialize the fragments
struct SharedFrame {
    slots: BTreeMap<String, RwLock<Value>>,
}

struct Ctx {
    /// Thread-local scopes, innermost first.
    locals: Vec<BTreeMap<String, Value>>,
    /// Scopes shared with sibling fragments, innermost first.
    shared: Vec<Arc<SharedFrame>>,
    heap: Arc<SharedHeap>,
    locks: Arc<SharedLocks>,
    force_seq: bool,
    spawn: bool,
    deadline: Instant,
}

/// Run a program on up to `workers` OS threads (2 or more enables
/// spawning). With `force_seq`, every commute guard is treated as false and
/// the fragments run sequentially in written order.
pub fn run_parallel(
    program: &Stmt,
    initial: ScopedState,
    workers: usize,
    force_seq: bool,
    timeout: Duration,
) -> Result<ParallelOutcome, ParallelError> {
    let heap = Arc::new(SharedHeap {
        objects: Mutex::new(
            initial
                .globals
                .heap
                .objects
                .iter()
                .map(|(l, o)| (l.0, o.clone()))
                .collect(),
        ),
        next: AtomicU64::new(initial.globals.heap.next),
    });
    let locks = Arc::new(SharedLocks {
        map: Mutex::new(
            initial
                .globals
                .locks
                .iter()
                .map(|(n, b)| (*n, *b))
                .collect(),
        ),
        cv: Condvar::new(),
    });
    let mut ctx = Ctx {
        locals: initial.frames.into_iter().map(|f| f.0).collect(),
        shared: Vec::new(),
        heap,
        locks,
        force_seq,
        spawn: workers >= 2,
        deadline: Instant::now() + timeout,
    };
    let start = Instant::now();
    eval_stmt(&mut ctx, program)?;
    let duration = start.elapsed();

    let heap_objects = ctx.heap.objects.lock().unwrap();
    let globals = Globals {
        heap: crate::value::Heap {
            objects: heap_objects
                .iter()
                .map(|(l, o)| (Loc(*l), o.clone()))
                .collect(),
            next: ctx.heap.next.load(Ordering::SeqCst),
        },
        locks: ctx.locks.map.lock().unwrap().iter().map(|(n, b)| (*n, *b)).collect(),
    };
    Ok(ParallelOutcome {
        state: ScopedState {
            frames: ctx.locals.into_iter().map(Frame).collect(),
            globals,
        },
        duration,
    })
}

fn eval_stmt(ctx: &mut Ctx, s: &Stmt) -> Result<(), ParallelError> {
    match s {
        Stmt::Skip => Ok(()),
        Stmt::Seq(a, b) => {
            eval_stmt(ctx, a)?;
            eval_stmt(ctx, b)
        }
        Stmt::Decl(_, name, e) => {
            let v = eval_expr(ctx, e)?;
            ctx.locals[0].insert(name.clone(), v);
            Ok(())
        }
        Stmt::Assign(LValue::Var(name), e) => {
            let v = eval_expr(ctx, e)?;
            write_var(ctx, name, v)
        }
        Stmt::Assign(LValue::Index(name, idx), e) => {
            let i = eval_expr(ctx, idx)?;
            let v = eval_expr(ctx, e)?;
            let loc = read_var(ctx, name)?
                .as_ref_loc()
                .ok_or_else(|| RuntimeError::Stuck(format!("`{name}` is not a container")))?;
            let mut objects = ctx.heap.objects.lock().unwrap();
            match objects.get_mut(&loc.0) {
                Some(HeapObject::Array(cells)) => {
                    let ix = i
                        .as_int()
                        .ok_or_else(|| RuntimeError::Stuck("array index not int".into()))?;
                    if ix < 0 || ix as usize >= cells.len() {
                        return Err(RuntimeError::IndexOutOfBounds {
                            idx: ix,
                            len: cells.len(),
                        }
                        .into());
                    }
                    cells[ix as usize] = v;
                }
                Some(HeapObject::Table { map, .. }) => {
                    map.insert(i, v);
                }
                None => return Err(RuntimeError::DanglingRef(loc).into()),
            }
            Ok(())
        }
        Stmt::If(c, t, e) => {
            if truthy(ctx, c)? {
                eval_stmt(ctx, t)
            } else {
                eval_stmt(ctx, e)
            }
        }
        Stmt::While(c, b, _) => {
            while truthy(ctx, c)? {
                if Instant::now() > ctx.deadline {
                    return Err(ParallelError::Timeout);
                }
                eval_stmt(ctx, b)?;
            }
            Ok(())
        }
        Stmt::For(..) => Err(RuntimeError::Stuck("for survived parsing".into()).into()),
        Stmt::Commute {
            guard, left, right, ..
        } => {
            let go = !ctx.force_seq && truthy(ctx, guard)?;
            if !go || !ctx.spawn {
                // sequential composition; still a valid par interleaving
                // when the guard was true
                run_fragment_sequential(ctx, left)?;
                run_fragment_sequential(ctx, right)?;
                return Ok(());
            }
            // promote this thread's scopes to shared frames for the children
            let promoted: Vec<Arc<SharedFrame>> = ctx
                .locals
                .drain(..)
                .map(|frame| {
                    Arc::new(SharedFrame {
                        slots: frame
                            .into_iter()
                            .map(|(k, v)| (k, RwLock::new(v)))
                            .collect(),
                    })
                })
                .collect();
            let mut child_shared = promoted.clone();
            child_shared.extend(ctx.shared.iter().cloned());

            let spawn_child = |frag: Stmt| {
                let mut child = Ctx {
                    locals: vec![BTreeMap::new()],
                    shared: child_shared.clone(),
                    heap: Arc::clone(&ctx.heap),
                    locks: Arc::clone(&ctx.locks),
                    force_seq: ctx.force_seq,
                    spawn: ctx.spawn,
                    deadline: ctx.deadline,
                };
                move || -> Result<(), ParallelError> { eval_stmt(&mut child, &frag) }
            };
            let left_job = spawn_child((**left).clone());
            let right_job = spawn_child((**right).clone());
            drop(child_shared);
            let (r1, r2) = std::thread::scope(|scope| {
                let h1 = scope.spawn(left_job);
                let h2 = scope.spawn(right_job);
                (
                    h1.join().unwrap_or_else(|_| {
                        Err(RuntimeError::Stuck("fragment thread panicked".into()).into())
                    }),
                    h2.join().unwrap_or_else(|_| {
                        Err(RuntimeError::Stuck("fragment thread panicked".into()).into())
                    }),
                )
            });
            // reclaim the promoted scopes
            ctx.locals = promoted
                .into_iter()
                .map(|arc| {
                    let frame = Arc::try_unwrap(arc)
                        .ok()
                        .expect("children released their scope handles");
                    frame
                        .slots
                        .into_iter()
                        .map(|(k, m)| (k, m.into_inner().unwrap()))
                        .collect()
                })
                .collect();
            r1?;
            r2
        }
        Stmt::Lock(e) => {
            let n = lock_index(ctx, e)?;
            let mut map = ctx.locks.map.lock().unwrap();
            loop {
                if !map.get(&n).copied().unwrap_or(false) {
                    map.insert(n, true);
                    return Ok(());
                }
                let now = Instant::now();
                if now >= ctx.deadline {
                    return Err(ParallelError::LockTimeout(n));
                }
                let (m, timeout) = ctx
                    .locks
                    .cv
                    .wait_timeout(map, ctx.deadline - now)
                    .unwrap();
                map = m;
                if timeout.timed_out() && map.get(&n).copied().unwrap_or(false) {
                    return Err(ParallelError::LockTimeout(n));
                }
            }
        }
        Stmt::Unlock(e) => {
            let n = lock_index(ctx, e)?;
            ctx.locks.map.lock().unwrap().insert(n, false);
            ctx.locks.cv.notify_all();
            Ok(())
        }
        Stmt::Havoc(_) | Stmt::Assume(_) => Err(ParallelError::AnalysisConstruct),
    }
}

// Fragments get their own scope even when run in place, so locals stay
// fragment-private exactly as under the fork.
fn run_fragment_sequential(ctx: &mut Ctx, frag: &Stmt) -> Result<(), ParallelError> {
    ctx.locals.insert(0, BTreeMap::new());
    let r = eval_stmt(ctx, frag);
    ctx.locals.remove(0);
    r
}

fn lock_index(ctx: &mut Ctx, e: &Expr) -> Result<u64, ParallelError> {
    let n = eval_expr(ctx, e)?
        .as_int()
        .ok_or_else(|| RuntimeError::Stuck("lock index not int".into()))?;
    if n < 0 {
        return Err(RuntimeError::NegativeLockIndex(n).into());
    }
    Ok(n as u64)
}

fn truthy(ctx: &mut Ctx, e: &Expr) -> Result<bool, ParallelError> {
    eval_expr(ctx, e)?
        .as_bool()
        .ok_or_else(|| RuntimeError::Stuck("condition not bool".into()).into())
}

fn read_var(ctx: &Ctx, name: &str) -> Result<Value, RuntimeError> {
    for frame in &ctx.locals {
        if let Some(v) = frame.get(name) {
            return Ok(v.clone());
        }
    }
    for frame in &ctx.shared {
        if let Some(slot) = frame.slots.get(name) {
            return Ok(slot.read().unwrap().clone());
        }
    }
    Err(RuntimeError::Unbound(name.to_string()))
}

fn write_var(ctx: &mut Ctx, name: &str, v: Value) -> Result<(), ParallelError> {
    for frame in ctx.locals.iter_mut() {
        if let Some(slot) = frame.get_mut(name) {
            *slot = v;
            return Ok(());
        }
    }
    for frame in &ctx.shared {
        if let Some(slot) = frame.slots.get(name) {
            *slot.write().unwrap() = v;
            return Ok(());
        }
    }
    Err(RuntimeError::Unbound(name.to_string()).into())
}

fn eval_expr(ctx: &mut Ctx, e: &Expr) -> Result<Value, ParallelError> {
    Ok(match e {
        Expr::Const(v) => v.clone(),
        Expr::Var(n) => read_var(ctx, n)?,
        Expr::Deref(_) => return Err(RuntimeError::DerefUnsupported.into()),
        Expr::Index(base, idx) => {
            let b = eval_expr(ctx, base)?;
            let i = eval_expr(ctx, idx)?;
            let loc = b
                .as_ref_loc()
                .ok_or_else(|| RuntimeError::Stuck(format!("indexing into {}", b.kind())))?;
            let objects = ctx.heap.objects.lock().unwrap();
            match objects.get(&loc.0) {
                Some(HeapObject::Array(cells)) => {
                    let ix = i
                        .as_int()
                        .ok_or_else(|| RuntimeError::Stuck("array index not int".into()))?;
                    if ix < 0 || ix as usize >= cells.len() {
                        return Err(RuntimeError::IndexOutOfBounds {
                            idx: ix,
                            len: cells.len(),
                        }
                        .into());
                    }
                    cells[ix as usize].clone()
                }
                Some(HeapObject::Table { map, default }) => {
                    map.get(&i).cloned().unwrap_or_else(|| default.clone())
                }
                None => return Err(RuntimeError::DanglingRef(loc).into()),
            }
        }
        Expr::NewArray(ty, len) => {
            let n = eval_expr(ctx, len)?
                .as_int()
                .ok_or_else(|| RuntimeError::Stuck("array length not int".into()))?;
            if n < 0 {
                return Err(RuntimeError::NegativeArrayLength(n).into());
            }
            let cells = vec![crate::value::default_value(ty); n as usize];
            let loc = ctx.heap.next.fetch_add(1, Ordering::SeqCst);
            ctx.heap
                .objects
                .lock()
                .unwrap()
                .insert(loc, HeapObject::Array(cells));
            Value::Ref(Loc(loc))
        }
        Expr::NewHashtable(_, v) => {
            let loc = ctx.heap.next.fetch_add(1, Ordering::SeqCst);
            ctx.heap.objects.lock().unwrap().insert(
                loc,
                HeapObject::Table {
                    map: BTreeMap::new(),
                    default: crate::value::default_value(v),
                },
            );
            Value::Ref(Loc(loc))
        }
        Expr::Unop(op, inner) => {
            let v = eval_expr(ctx, inner)?;
            eval_unop(*op, &v)?
        }
        Expr::Binop(a, op, b) => {
            let l = eval_expr(ctx, a)?;
            let r = eval_expr(ctx, b)?;
            eval_binop(&l, *op, &r)?
        }
        Expr::Ternary(c, a, b) => {
            if truthy(ctx, c)? {
                eval_expr(ctx, a)?
            } else {
                eval_expr(ctx, b)?
            }
        }
        Expr::Field(_, f) => return Err(RuntimeError::NoSuchField(f.clone()).into()),
        Expr::Call(name, args) if name == "ht_mem" => {
            let t = eval_expr(ctx, &args[0])?;
            let k = eval_expr(ctx, &args[1])?;
            let loc = t
                .as_ref_loc()
                .ok_or_else(|| RuntimeError::Stuck("ht_mem expects a table".into()))?;
            let objects = ctx.heap.objects.lock().unwrap();
            match objects.get(&loc.0) {
                Some(HeapObject::Table { map, .. }) => Value::Bool(map.contains_key(&k)),
                _ => return Err(RuntimeError::Stuck("ht_mem on a non-table".into()).into()),
            }
        }
        Expr::Call(name, args) if name == "ht_size" => {
            let t = eval_expr(ctx, &args[0])?;
            let loc = t
                .as_ref_loc()
                .ok_or_else(|| RuntimeError::Stuck("ht_size expects a table".into()))?;
            let objects = ctx.heap.objects.lock().unwrap();
            match objects.get(&loc.0) {
                Some(HeapObject::Table { map, .. }) => Value::Int(map.len() as i64),
                _ => return Err(RuntimeError::Stuck("ht_size on a non-table".into()).into()),
            }
        }
        Expr::Call(name, _) => return Err(RuntimeError::CallNotInlined(name.clone()).into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn run(src: &str, pairs: &[(&str, i64)], workers: usize, force_seq: bool) -> ScopedState {
        let p = parse_program(src).expect("parse").body;
        let mut init = ScopedState::new();
        for (k, v) in pairs {
            init.declare(k, Value::Int(*v));
        }
        run_parallel(&p, init, workers, force_seq, Duration::from_secs(20))
            .expect("run")
            .state
    }

    #[test]
    fn threaded_example_ends_in_the_expected_state() {
        let src = "commute_par(x == 1) { { x = x + 1; } { y = y + 1; } } x = x + y;";
        for workers in [1, 2, 4] {
            let st = run(src, &[("x", 1), ("y", 0)], workers, false);
            assert_eq!(st.lookup("x").unwrap(), &Value::Int(3));
            assert_eq!(st.lookup("y").unwrap(), &Value::Int(1));
        }
    }

    #[test]
    fn force_seq_matches_sequential_semantics() {
        let src = "commute(true) { { c = c - x; } { c = c + y; } }";
        let st = run(src, &[("c", 5), ("x", 1), ("y", 2)], 4, true);
        assert_eq!(st.lookup("c").unwrap(), &Value::Int(6));
    }

    #[test]
    fn fragment_locals_are_dropped_after_join() {
        let src = "commute(true) { { int t = 1; x = x + t; } { int u = 2; y = y + u; } }";
        let st = run(src, &[("x", 0), ("y", 0)], 2, false);
        assert_eq!(st.lookup("x").unwrap(), &Value::Int(1));
        assert_eq!(st.lookup("y").unwrap(), &Value::Int(2));
        assert!(st.lookup("t").is_err());
        assert!(st.lookup("u").is_err());
    }

    #[test]
    fn locked_counter_is_exact_under_contention() {
        let src = "commute(true) { \
                     { int i = 0; while (i < 2000) { lock(0); c = c + 1; unlock(0); i = i + 1; } } \
                     { int j = 0; while (j < 2000) { lock(0); c = c + 1; unlock(0); j = j + 1; } } \
                   }";
        let st = run(src, &[("c", 0)], 2, false);
        assert_eq!(st.lookup("c").unwrap(), &Value::Int(4000));
    }

    #[test]
    fn tables_are_linearizable_under_the_heap_guard() {
        let src = "hashtable[int,int] t = new hashtable[int,int];\n\
                   commute(true) { \
                     { int i = 0; while (i < 500) { t[i * 2] = i; i = i + 1; } } \
                     { int j = 0; while (j < 500) { t[j * 2 + 1] = j; j = j + 1; } } \
                   }\n\
                   int n = ht_size(t);";
        let st = run(src, &[], 2, false);
        assert_eq!(st.lookup("n").unwrap(), &Value::Int(1000));
    }

    #[test]
    fn deadlock_reports_instead_of_hanging() {
        let p = parse_program("lock(0); lock(0);").unwrap().body;
        let err = run_parallel(
            &p,
            ScopedState::new(),
            2,
            false,
            Duration::from_millis(200),
        )
        .unwrap_err();
        assert!(matches!(err, ParallelError::LockTimeout(0)));
    }
}
