//! Read/write-set analysis and the enforcement transformations for pairwise
//! (hence scoped) serializability: naive locking, snapshotting for
//! write/read-only conflicts, and lock narrowing over a dataflow graph.

use crate::ast::{CommuteKeyword, Expr, LValue, Stmt, Type};
use crate::commutativity::summaries::collect_idents;
use crate::typecheck::{typecheck_stmt, TypeError};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransformError {
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Abstract locations: scalar variable names and container roots after
/// alias resolution.
pub type AliasMap = BTreeMap<String, String>;

/// Variables written and read by a statement, collapsed to container roots.
/// A builtin-table method invocation puts the table in both sets.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AccessSets {
    pub wr: BTreeSet<String>,
    pub rd: BTreeSet<String>,
}

fn root(aliases: &AliasMap, name: &str) -> String {
    aliases
        .get(name)
        .cloned()
        .unwrap_or_else(|| name.to_string())
}

/// Alias classes for container variables: copies merge, allocations are
/// fresh roots, anything murkier merges conservatively.
pub fn alias_map(body: &Stmt, inputs: &[(String, Type)]) -> AliasMap {
    let mut parent: BTreeMap<String, String> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<String, String>, x: &str) -> String {
        let p = parent.entry(x.to_string()).or_insert_with(|| x.to_string());
        if p == x {
            return x.to_string();
        }
        let r = {
            let p = p.clone();
            find(parent, &p)
        };
        parent.insert(x.to_string(), r.clone());
        r
    }
    fn union(parent: &mut BTreeMap<String, String>, a: &str, b: &str) {
        let ra = find(parent, a);
        let rb = find(parent, b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent.insert(hi, lo);
        }
    }
    let mut containers: BTreeSet<String> = inputs
        .iter()
        .filter(|(_, t)| t.is_container())
        .map(|(n, _)| n.clone())
        .collect();
    body.walk(&mut |s| match s {
        Stmt::Decl(ty, v, e) if ty.is_container() => {
            containers.insert(v.clone());
            match e {
                Expr::Var(w) => union(&mut parent, v, w),
                Expr::NewArray(..) | Expr::NewHashtable(..) => {}
                other => {
                    // unknown source: merge with every container mentioned
                    let mut seen = BTreeSet::new();
                    crate::commutativity::summaries::collect_expr_idents(other, &mut seen);
                    for w in seen {
                        union(&mut parent, v, &w);
                    }
                }
            }
        }
        Stmt::Assign(LValue::Var(v), Expr::Var(w)) if containers.contains(v) => {
            union(&mut parent, v, w);
        }
        _ => {}
    });
    let names: Vec<String> = parent.keys().cloned().collect();
    let mut out = BTreeMap::new();
    for n in names {
        let r = find(&mut parent, &n);
        out.insert(n, r);
    }
    out
}

/// wr/rd sets of a statement. Array and table accesses collapse to the
/// container root; invoking any table builtin puts the root in both sets.
pub fn access_sets(s: &Stmt, aliases: &AliasMap) -> AccessSets {
    let mut sets = AccessSets::default();
    collect_stmt(s, aliases, &mut sets);
    sets
}

fn collect_stmt(s: &Stmt, aliases: &AliasMap, sets: &mut AccessSets) {
    match s {
        Stmt::Skip => {}
        Stmt::Seq(a, b) => {
            collect_stmt(a, aliases, sets);
            collect_stmt(b, aliases, sets);
        }
        Stmt::Assign(LValue::Var(v), e) => {
            sets.wr.insert(root(aliases, v));
            collect_expr(e, aliases, sets);
        }
        Stmt::Assign(LValue::Index(v, i), e) => {
            let r = root(aliases, v);
            sets.wr.insert(r.clone());
            sets.rd.insert(r);
            collect_expr(i, aliases, sets);
            collect_expr(e, aliases, sets);
        }
        Stmt::Decl(_, v, e) => {
            sets.wr.insert(root(aliases, v));
            collect_expr(e, aliases, sets);
        }
        Stmt::If(c, t, e) => {
            collect_expr(c, aliases, sets);
            collect_stmt(t, aliases, sets);
            collect_stmt(e, aliases, sets);
        }
        Stmt::While(c, b, _) => {
            collect_expr(c, aliases, sets);
            collect_stmt(b, aliases, sets);
        }
        Stmt::For(decls, c, upd, b) => {
            for (_, v, e) in decls {
                sets.wr.insert(root(aliases, v));
                collect_expr(e, aliases, sets);
            }
            collect_expr(c, aliases, sets);
            collect_stmt(upd, aliases, sets);
            collect_stmt(b, aliases, sets);
        }
        Stmt::Commute {
            guard, left, right, ..
        } => {
            collect_expr(guard, aliases, sets);
            collect_stmt(left, aliases, sets);
            collect_stmt(right, aliases, sets);
        }
        Stmt::Lock(e) | Stmt::Unlock(e) | Stmt::Assume(e) => collect_expr(e, aliases, sets),
        Stmt::Havoc(ns) => {
            for n in ns {
                sets.wr.insert(root(aliases, n));
            }
        }
    }
}

fn collect_expr(e: &Expr, aliases: &AliasMap, sets: &mut AccessSets) {
    match e {
        Expr::Var(v) => {
            sets.rd.insert(root(aliases, v));
        }
        Expr::Const(_) | Expr::NewHashtable(_, _) => {}
        Expr::Index(base, idx) => {
            if let Expr::Var(v) = &**base {
                let r = root(aliases, v);
                // table reads go through the builtin, hitting both sets
                sets.rd.insert(r.clone());
                sets.wr.insert(r);
            } else {
                collect_expr(base, aliases, sets);
            }
            collect_expr(idx, aliases, sets);
        }
        Expr::Call(name, args) if crate::parser::is_builtin_call(name) => {
            if let Some(Expr::Var(v)) = args.first() {
                let r = root(aliases, v);
                sets.rd.insert(r.clone());
                sets.wr.insert(r);
            }
            for a in args.iter().skip(1) {
                collect_expr(a, aliases, sets);
            }
        }
        Expr::Call(_, args) => args.iter().for_each(|a| collect_expr(a, aliases, sets)),
        Expr::Deref(a) | Expr::Unop(_, a) | Expr::NewArray(_, a) | Expr::Field(a, _) => {
            collect_expr(a, aliases, sets)
        }
        Expr::Binop(a, _, b) => {
            collect_expr(a, aliases, sets);
            collect_expr(b, aliases, sets);
        }
        Expr::Ternary(c, a, b) => {
            collect_expr(c, aliases, sets);
            collect_expr(a, aliases, sets);
            collect_expr(b, aliases, sets);
        }
    }
}

/// `con(s0, s1) = [wr0 ∩ wr1] ∪ [wr0 ∩ rd1] ∪ [rd0 ∩ wr1]`.
pub fn conflict_set(s0: &Stmt, s1: &Stmt, aliases: &AliasMap) -> BTreeSet<String> {
    let a = access_sets(s0, aliases);
    let b = access_sets(s1, aliases);
    let mut con: BTreeSet<String> = a.wr.intersection(&b.wr).cloned().collect();
    con.extend(a.wr.intersection(&b.rd).cloned());
    con.extend(a.rd.intersection(&b.wr).cloned());
    con
}

// Array reads are not table-builtin invocations; compute a read-only view
// for the index-read case used by pattern 1's applicability test.
fn array_reads_fixup(s: &Stmt, aliases: &AliasMap, types: &BTreeMap<String, Type>) -> AccessSets {
    let mut sets = access_sets(s, aliases);
    // pure array index reads were conservatively added to wr by the table
    // rule; remove roots that are arrays and are never actually written
    let mut actually_written = BTreeSet::new();
    s.walk(&mut |st| match st {
        Stmt::Assign(LValue::Index(v, _), _) => {
            actually_written.insert(root(aliases, v));
        }
        Stmt::Assign(LValue::Var(v), _) | Stmt::Decl(_, v, _) => {
            actually_written.insert(root(aliases, v));
        }
        Stmt::Havoc(ns) => {
            for n in ns {
                actually_written.insert(root(aliases, n));
            }
        }
        _ => {}
    });
    let arrays: BTreeSet<String> = types
        .iter()
        .filter(|(_, t)| matches!(t, Type::Array(_)))
        .map(|(n, _)| root(aliases, n))
        .collect();
    sets.wr
        .retain(|r| !arrays.contains(r) || actually_written.contains(r));
    sets
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PatternKind {
    Unchanged,
    Naive,
    Snapshot,
    Narrowed,
}

impl PatternKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::Unchanged => "unchanged",
            PatternKind::Naive => "naive",
            PatternKind::Snapshot => "snapshot",
            PatternKind::Narrowed => "narrowed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternMode {
    Auto,
    Naive,
    Snapshot,
    Narrow,
}

impl PatternMode {
    pub fn parse(s: &str) -> Option<PatternMode> {
        match s {
            "auto" => Some(PatternMode::Auto),
            "naive" => Some(PatternMode::Naive),
            "snapshot" => Some(PatternMode::Snapshot),
            "narrow" => Some(PatternMode::Narrow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteReport {
    pub site: usize,
    pub pattern: String,
    pub con: Vec<String>,
    pub lock: Option<u64>,
    pub snapshots: Vec<String>,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct TransformResult {
    pub body: Stmt,
    pub reports: Vec<SiteReport>,
}

/// Transform every commute site of a program body. Sites are processed
/// inner-first; lock indices count up per locked site, deterministically.
pub fn transform_program(
    body: &Stmt,
    inputs: &[(String, Type)],
    mode: PatternMode,
) -> Result<TransformResult, TransformError> {
    let info = typecheck_stmt(body, inputs)?;
    let aliases = alias_map(body, inputs);
    let mut used = BTreeSet::new();
    collect_idents(body, &mut used);
    for (n, _) in inputs {
        used.insert(n.clone());
    }
    let mut ctx = TransformCtx {
        aliases,
        types: info.var_types,
        used,
        mode,
        next_lock: 0,
        next_site: 0,
        reports: Vec::new(),
    };
    let new_body = ctx.transform(body);
    Ok(TransformResult {
        body: new_body,
        reports: ctx.reports,
    })
}

struct TransformCtx {
    aliases: AliasMap,
    types: BTreeMap<String, Type>,
    used: BTreeSet<String>,
    mode: PatternMode,
    next_lock: u64,
    next_site: usize,
    reports: Vec<SiteReport>,
}

impl TransformCtx {
    fn fresh(&mut self, base: &str) -> String {
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        let mut n = 1;
        loop {
            let cand = format!("{base}{n}");
            if self.used.insert(cand.clone()) {
                return cand;
            }
            n += 1;
        }
    }

    fn transform(&mut self, s: &Stmt) -> Stmt {
        match s {
            Stmt::Seq(a, b) => Stmt::seq(self.transform(a), self.transform(b)),
            Stmt::If(c, t, e) => Stmt::If(
                c.clone(),
                Box::new(self.transform(t)),
                Box::new(self.transform(e)),
            ),
            Stmt::While(c, b, sm) => {
                Stmt::While(c.clone(), Box::new(self.transform(b)), sm.clone())
            }
            Stmt::Commute {
                keyword,
                guard,
                left,
                right,
            } => {
                let id = self.next_site;
                self.next_site += 1;
                // inner sites first, so the outer analysis sees their locks
                let left = self.transform(left);
                let right = self.transform(right);
                self.apply_site(id, *keyword, guard.clone(), left, right)
            }
            other => other.clone(),
        }
    }

    fn apply_site(
        &mut self,
        id: usize,
        keyword: CommuteKeyword,
        guard: Expr,
        left: Stmt,
        right: Stmt,
    ) -> Stmt {
        let con = conflict_set(&left, &right, &self.aliases);
        let rebuild = |l: Stmt, r: Stmt| Stmt::Commute {
            keyword,
            guard: guard.clone(),
            left: Box::new(l),
            right: Box::new(r),
        };
        if con.is_empty() {
            self.reports.push(SiteReport {
                site: id,
                pattern: PatternKind::Unchanged.as_str().to_string(),
                con: vec![],
                lock: None,
                snapshots: vec![],
                note: "no conflicting variables".to_string(),
            });
            return rebuild(left, right);
        }
        match self.mode {
            PatternMode::Naive => self.naive(id, keyword, guard, left, right, con),
            PatternMode::Snapshot => {
                match self.snapshot(id, keyword, guard.clone(), &left, &right, &con) {
                    Some(s) => s,
                    None => {
                        self.reports.push(SiteReport {
                            site: id,
                            pattern: PatternKind::Unchanged.as_str().to_string(),
                            con: con.iter().cloned().collect(),
                            lock: None,
                            snapshots: vec![],
                            note: "snapshot pattern not applicable".to_string(),
                        });
                        rebuild(left, right)
                    }
                }
            }
            PatternMode::Narrow => match self.narrowed(id, keyword, guard.clone(), &left, &right, &con)
            {
                Some(s) => s,
                None => self.naive(id, keyword, guard, left, right, con),
            },
            PatternMode::Auto => {
                if let Some(s) = self.snapshot(id, keyword, guard.clone(), &left, &right, &con) {
                    return s;
                }
                if let Some(s) = self.narrowed(id, keyword, guard.clone(), &left, &right, &con) {
                    return s;
                }
                self.naive(id, keyword, guard, left, right, con)
            }
        }
    }

    // Pattern 0: lock from the first conflicting access to the last, in
    // each fragment.
    fn naive(
        &mut self,
        id: usize,
        keyword: CommuteKeyword,
        guard: Expr,
        left: Stmt,
        right: Stmt,
        con: BTreeSet<String>,
    ) -> Stmt {
        let lock = self.next_lock;
        self.next_lock += 1;
        let wrap = |this: &TransformCtx, frag: Stmt| -> Stmt {
            let stmts: Vec<Stmt> = frag.flatten().into_iter().cloned().collect();
            if stmts.is_empty() {
                return frag;
            }
            let touches: Vec<bool> = stmts
                .iter()
                .map(|s| {
                    let sets = access_sets(s, &this.aliases);
                    con.iter().any(|v| sets.wr.contains(v) || sets.rd.contains(v))
                })
                .collect();
            let first = touches.iter().position(|t| *t);
            let last = touches.iter().rposition(|t| *t);
            let (Some(first), Some(last)) = (first, last) else {
                return Stmt::seq_all(stmts);
            };
            let mut out = Vec::new();
            for (i, s) in stmts.into_iter().enumerate() {
                if i == first {
                    out.push(Stmt::Lock(Expr::int(lock as i64)));
                }
                out.push(s);
                if i == last {
                    out.push(Stmt::Unlock(Expr::int(lock as i64)));
                }
            }
            Stmt::seq_all(out)
        };
        let left = wrap(self, left);
        let right = wrap(self, right);
        self.reports.push(SiteReport {
            site: id,
            pattern: PatternKind::Naive.as_str().to_string(),
            con: con.iter().cloned().collect(),
            lock: Some(lock),
            snapshots: vec![],
            note: "mutual exclusion over the conflicting span".to_string(),
        });
        Stmt::Commute {
            keyword,
            guard,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    // Pattern 1: when one fragment only reads the conflicting variables,
    // snapshot them before the block and redirect that fragment's reads.
    // The original reader is kept behind a stable guard copy so the
    // sequential (guard-false) path is untouched.
    fn snapshot(
        &mut self,
        id: usize,
        keyword: CommuteKeyword,
        guard: Expr,
        left: &Stmt,
        right: &Stmt,
        con: &BTreeSet<String>,
    ) -> Option<Stmt> {
        let a = array_reads_fixup(left, &self.aliases, &self.types);
        let b = array_reads_fixup(right, &self.aliases, &self.types);
        let a_all: BTreeSet<String> = a.wr.union(&a.rd).cloned().collect();
        let b_all: BTreeSet<String> = b.wr.union(&b.rd).cloned().collect();
        let (_writer, reader, reader_is_right) = if a_all.intersection(&b.wr).count() == 0 {
            (left, right, true)
        } else if b_all.intersection(&a.wr).count() == 0 {
            (right, left, false)
        } else {
            return None;
        };
        // only scalar conflicts can be value-snapshotted
        if con.iter().any(|v| {
            self.types
                .get(v)
                .map(|t| t.is_container())
                .unwrap_or(true)
        }) {
            return None;
        }
        let mut pre = Vec::new();
        let mut renames: std::collections::HashMap<String, String> =
            std::collections::HashMap::new();
        let mut snapshot_names = Vec::new();
        for v in con {
            let ty = self.types.get(v).cloned().unwrap_or(Type::Int);
            let name = self.fresh(&format!("{v}_0"));
            pre.push(Stmt::Decl(ty, name.clone(), Expr::var(v)));
            renames.insert(v.clone(), name.clone());
            snapshot_names.push(name);
        }
        let guard_copy = self.fresh("g_0");
        pre.push(Stmt::Decl(Type::Bool, guard_copy.clone(), guard.clone()));
        let rewritten = rename_reads(reader, &renames);
        let guarded_reader = Stmt::If(
            Expr::var(&guard_copy),
            Box::new(rewritten),
            Box::new(reader.clone()),
        );
        let (new_left, new_right) = if reader_is_right {
            (left.clone(), guarded_reader)
        } else {
            (guarded_reader, right.clone())
        };
        self.reports.push(SiteReport {
            site: id,
            pattern: PatternKind::Snapshot.as_str().to_string(),
            con: con.iter().cloned().collect(),
            lock: None,
            snapshots: snapshot_names,
            note: "reader redirected to pre-block snapshots; no locks".to_string(),
        });
        let commute = Stmt::Commute {
            keyword,
            guard: Expr::var(&guard_copy),
            left: Box::new(new_left),
            right: Box::new(new_right),
        };
        pre.push(commute);
        Some(Stmt::seq_all(pre))
    }

    // Pattern 2: reorder each fragment around the conflicting instructions
    // so the lock covers only the conflict spine.
    fn narrowed(
        &mut self,
        id: usize,
        keyword: CommuteKeyword,
        guard: Expr,
        left: &Stmt,
        right: &Stmt,
        con: &BTreeSet<String>,
    ) -> Option<Stmt> {
        let lock = self.next_lock;
        let nl = narrow_fragment(left, con, self, lock, false)?;
        let nr = narrow_fragment(right, con, self, lock, true)?;
        self.next_lock += 1;
        let mut snapshots = nl.snapshots.clone();
        snapshots.extend(nr.snapshots.clone());
        self.reports.push(SiteReport {
            site: id,
            pattern: PatternKind::Narrowed.as_str().to_string(),
            con: con.iter().cloned().collect(),
            lock: Some(lock),
            snapshots,
            note: "lock narrowed to the conflict spine".to_string(),
        });
        Some(Stmt::Commute {
            keyword,
            guard,
            left: Box::new(nl.stmt),
            right: Box::new(nr.stmt),
        })
    }
}

fn rename_reads(s: &Stmt, renames: &std::collections::HashMap<String, String>) -> Stmt {
    use crate::parser::rename_vars;
    match s {
        Stmt::Skip => Stmt::Skip,
        Stmt::Seq(a, b) => Stmt::seq(rename_reads(a, renames), rename_reads(b, renames)),
        Stmt::Assign(lv, e) => {
            let lv = match lv {
                LValue::Var(v) => LValue::Var(v.clone()),
                LValue::Index(v, i) => {
                    LValue::Index(v.clone(), rename_vars(i.clone(), renames))
                }
            };
            Stmt::Assign(lv, rename_vars(e.clone(), renames))
        }
        Stmt::Decl(t, v, e) => Stmt::Decl(t.clone(), v.clone(), rename_vars(e.clone(), renames)),
        Stmt::If(c, t, e) => Stmt::If(
            rename_vars(c.clone(), renames),
            Box::new(rename_reads(t, renames)),
            Box::new(rename_reads(e, renames)),
        ),
        Stmt::While(c, b, sm) => Stmt::While(
            rename_vars(c.clone(), renames),
            Box::new(rename_reads(b, renames)),
            sm.clone(),
        ),
        Stmt::For(..) => s.clone(),
        Stmt::Commute {
            keyword,
            guard,
            left,
            right,
        } => Stmt::Commute {
            keyword: *keyword,
            guard: rename_vars(guard.clone(), renames),
            left: Box::new(rename_reads(left, renames)),
            right: Box::new(rename_reads(right, renames)),
        },
        Stmt::Lock(e) => Stmt::Lock(rename_vars(e.clone(), renames)),
        Stmt::Unlock(e) => Stmt::Unlock(rename_vars(e.clone(), renames)),
        Stmt::Havoc(ns) => Stmt::Havoc(ns.clone()),
        Stmt::Assume(e) => Stmt::Assume(rename_vars(e.clone(), renames)),
    }
}

/// Standalone entry to the pattern-2 fragment narrowing, exposing the
/// dataflow graph and emitted order for dependency-preservation checks.
pub fn narrow_fragment_standalone(
    frag: &Stmt,
    con: &BTreeSet<String>,
    types: &BTreeMap<String, Type>,
    lock: u64,
) -> Option<NarrowedFragment> {
    let mut ctx = TransformCtx {
        aliases: AliasMap::new(),
        types: types.clone(),
        used: {
            let mut u = BTreeSet::new();
            collect_idents(frag, &mut u);
            u
        },
        mode: PatternMode::Narrow,
        next_lock: lock,
        next_site: 0,
        reports: Vec::new(),
    };
    narrow_fragment(frag, con, &mut ctx, lock, false)
}

/// Dataflow graph over a fragment's top-level instructions.
#[derive(Debug, Clone)]
pub struct DataflowGraph {
    pub nodes: Vec<AccessSets>,
    /// i -> j with i before j and a def-use, anti, or output dependency.
    pub edges: Vec<(usize, usize)>,
}

impl DataflowGraph {
    pub fn build(stmts: &[Stmt], aliases: &AliasMap) -> DataflowGraph {
        let nodes: Vec<AccessSets> = stmts.iter().map(|s| access_sets(s, aliases)).collect();
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                let dep = nodes[i].wr.iter().any(|v| {
                    nodes[j].rd.contains(v) || nodes[j].wr.contains(v)
                }) || nodes[i].rd.iter().any(|v| nodes[j].wr.contains(v));
                if dep {
                    edges.push((i, j));
                }
            }
        }
        DataflowGraph { nodes, edges }
    }

    fn reach_from(&self, seeds: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = seeds.clone();
        // edges point forward, so one forward sweep reaches the closure
        for &(i, j) in &self.edges {
            if out.contains(&i) {
                out.insert(j);
            }
        }
        out
    }

    fn reach_to(&self, seeds: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = seeds.clone();
        for &(i, j) in self.edges.iter().rev() {
            if out.contains(&j) {
                out.insert(i);
            }
        }
        out
    }
}

pub struct NarrowedFragment {
    pub stmt: Stmt,
    /// Original instruction indices in emitted order.
    pub emitted_order: Vec<usize>,
    pub graph: DataflowGraph,
    pub snapshots: Vec<String>,
}

fn narrow_fragment(
    frag: &Stmt,
    con: &BTreeSet<String>,
    ctx: &mut TransformCtx,
    lock: u64,
    favor_independent_first: bool,
) -> Option<NarrowedFragment> {
    // bail on constructs the reordering cannot reason about
    let mut bail = false;
    frag.walk(&mut |s| {
        if matches!(
            s,
            Stmt::Lock(_) | Stmt::Unlock(_) | Stmt::Havoc(_) | Stmt::Assume(_)
        ) {
            bail = true;
        }
    });
    if bail {
        return None;
    }
    let mut stmts: Vec<Stmt> = frag.flatten().into_iter().cloned().collect();
    // if-convert small scalar branches so conflict accesses inside them can
    // be isolated; ternaries are lazy, so predication is safe
    let mut converted = Vec::new();
    for s in stmts.drain(..) {
        match try_if_convert(&s, ctx) {
            Some(mut seq) => converted.append(&mut seq),
            None => converted.push(s),
        }
    }
    let stmts = converted;

    // redirect eligible conflict readers to in-lock snapshots: the node
    // must not write any conflict variable, and every conflict variable it
    // reads must be past its last write in this fragment
    let graph0 = DataflowGraph::build(&stmts, &ctx.aliases);
    let mut renames: std::collections::HashMap<String, String> = Default::default();
    let mut snapshot_decls: Vec<Stmt> = Vec::new();
    let mut snapshot_names: Vec<String> = Vec::new();
    let mut stmts = stmts;
    for i in 0..stmts.len() {
        let sets = &graph0.nodes[i];
        let writes_con = con.iter().any(|v| sets.wr.contains(v));
        let reads: Vec<String> = con
            .iter()
            .filter(|v| sets.rd.contains(*v))
            .cloned()
            .collect();
        if writes_con || reads.is_empty() {
            continue;
        }
        let all_scalar = reads.iter().all(|v| {
            ctx.types
                .get(v)
                .map(|t| t.is_scalar())
                .unwrap_or(false)
        });
        if !all_scalar {
            continue;
        }
        let no_later_writes = reads.iter().all(|v| {
            (i + 1..stmts.len()).all(|j| !graph0.nodes[j].wr.contains(v))
        });
        if !no_later_writes {
            continue;
        }
        for v in reads {
            let name = renames.entry(v.clone()).or_insert_with(|| {
                let n = ctx.fresh(&format!("{v}_snap"));
                snapshot_names.push(n.clone());
                snapshot_decls.push(Stmt::Decl(
                    ctx.types.get(&v).cloned().unwrap_or(Type::Int),
                    n.clone(),
                    Expr::var(&v),
                ));
                n
            });
            let _ = name;
        }
        stmts[i] = rename_reads(&stmts[i], &renames);
    }

    let graph = DataflowGraph::build(&stmts, &ctx.aliases);
    let ci: BTreeSet<usize> = (0..stmts.len())
        .filter(|&i| {
            con.iter().any(|v| {
                graph.nodes[i].wr.contains(v) || graph.nodes[i].rd.contains(v)
            })
        })
        .collect();
    if ci.is_empty() {
        // no lock needed at all
        return Some(NarrowedFragment {
            stmt: Stmt::seq_all(stmts),
            emitted_order: (0..graph.nodes.len()).collect(),
            graph,
            snapshots: snapshot_names,
        });
    }
    let ancestors = graph.reach_to(&ci);
    let descendants = graph.reach_from(&ci);
    let mut g1 = Vec::new();
    let mut spine = Vec::new();
    let mut g6 = Vec::new();
    let mut g7 = Vec::new();
    for i in 0..stmts.len() {
        let anc = ancestors.contains(&i) && !ci.contains(&i);
        let desc = descendants.contains(&i) && !ci.contains(&i);
        if ci.contains(&i) || (anc && desc) {
            spine.push(i);
        } else if anc {
            g1.push(i);
        } else if desc {
            g6.push(i);
        } else {
            g7.push(i);
        }
    }
    // load balancing: lead with the independent group when nothing flows
    // into it
    let g7_first = favor_independent_first
        && !g7.is_empty()
        && !graph
            .edges
            .iter()
            .any(|(i, j)| g7.contains(j) && !g7.contains(i));

    let mut order: Vec<usize> = Vec::new();
    if g7_first {
        order.extend(&g7);
    }
    order.extend(&g1);
    let lock_at = order.len();
    order.extend(&spine);
    let unlock_at = order.len();
    order.extend(&g6);
    if !g7_first {
        order.extend(&g7);
    }

    let mut out: Vec<Stmt> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos == lock_at {
            out.push(Stmt::Lock(Expr::int(lock as i64)));
        }
        if pos == unlock_at {
            out.extend(snapshot_decls.iter().cloned());
            out.push(Stmt::Unlock(Expr::int(lock as i64)));
        }
        out.push(stmts[i].clone());
    }
    if unlock_at == order.len() {
        out.extend(snapshot_decls.iter().cloned());
        out.push(Stmt::Unlock(Expr::int(lock as i64)));
    }
    if lock_at == order.len() && unlock_at == order.len() {
        // cannot happen (ci nonempty), kept for clarity
        out.push(Stmt::Lock(Expr::int(lock as i64)));
        out.push(Stmt::Unlock(Expr::int(lock as i64)));
    }
    Some(NarrowedFragment {
        stmt: Stmt::seq_all(out),
        emitted_order: order,
        graph,
        snapshots: snapshot_names,
    })
}

// if (c) { scalar assigns } else { scalar assigns }  ~>  bool p = c;
// per-variable lazy ternary assignments composed by substitution.
fn try_if_convert(s: &Stmt, ctx: &mut TransformCtx) -> Option<Vec<Stmt>> {
    let Stmt::If(cond, t, e) = s else {
        return None;
    };
    let then_assigns = scalar_assigns(t)?;
    let else_assigns = scalar_assigns(e)?;
    if then_assigns.is_empty() && else_assigns.is_empty() {
        return Some(vec![]);
    }
    // compose each branch into one expression per written variable
    let then_map = compose_assigns(&then_assigns)?;
    let else_map = compose_assigns(&else_assigns)?;
    let mut written: Vec<String> = then_map.keys().chain(else_map.keys()).cloned().collect();
    written.sort();
    written.dedup();
    // cap expression growth from substitution
    let total: usize = then_map.values().chain(else_map.values()).map(expr_size).sum();
    if total > 200 {
        return None;
    }
    let p = ctx.fresh("p_0");
    let mut out = vec![Stmt::Decl(Type::Bool, p.clone(), cond.clone())];
    for v in written {
        let t_expr = then_map.get(&v).cloned().unwrap_or_else(|| Expr::var(&v));
        let e_expr = else_map.get(&v).cloned().unwrap_or_else(|| Expr::var(&v));
        out.push(Stmt::Assign(
            LValue::Var(v),
            Expr::Ternary(
                Box::new(Expr::var(&p)),
                Box::new(t_expr),
                Box::new(e_expr),
            ),
        ));
    }
    Some(out)
}

fn scalar_assigns(s: &Stmt) -> Option<Vec<(String, Expr)>> {
    let mut out = Vec::new();
    for st in s.flatten() {
        match st {
            Stmt::Assign(LValue::Var(v), e) => out.push((v.clone(), e.clone())),
            _ => return None,
        }
    }
    Some(out)
}

// forward-substitute a straight line of scalar assignments into one
// expression per variable
fn compose_assigns(assigns: &[(String, Expr)]) -> Option<BTreeMap<String, Expr>> {
    let mut map: BTreeMap<String, Expr> = BTreeMap::new();
    for (v, e) in assigns {
        let substituted = subst_expr(e, &map)?;
        map.insert(v.clone(), substituted);
    }
    Some(map)
}

fn subst_expr(e: &Expr, map: &BTreeMap<String, Expr>) -> Option<Expr> {
    Some(match e {
        Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| Expr::var(v)),
        Expr::Const(_) | Expr::NewHashtable(_, _) => e.clone(),
        Expr::Unop(op, a) => Expr::Unop(*op, Box::new(subst_expr(a, map)?)),
        Expr::Binop(a, op, b) => Expr::Binop(
            Box::new(subst_expr(a, map)?),
            *op,
            Box::new(subst_expr(b, map)?),
        ),
        Expr::Ternary(c, a, b) => Expr::Ternary(
            Box::new(subst_expr(c, map)?),
            Box::new(subst_expr(a, map)?),
            Box::new(subst_expr(b, map)?),
        ),
        Expr::Index(a, b) => Expr::Index(
            Box::new(subst_expr(a, map)?),
            Box::new(subst_expr(b, map)?),
        ),
        Expr::Call(n, args) => Expr::Call(
            n.clone(),
            args.iter()
                .map(|a| subst_expr(a, map))
                .collect::<Option<Vec<_>>>()?,
        ),
        Expr::Deref(_) | Expr::NewArray(..) | Expr::Field(..) => return None,
    })
}

fn expr_size(e: &Expr) -> usize {
    match e {
        Expr::Const(_) | Expr::Var(_) | Expr::NewHashtable(_, _) => 1,
        Expr::Deref(a) | Expr::Unop(_, a) | Expr::NewArray(_, a) | Expr::Field(a, _) => {
            1 + expr_size(a)
        }
        Expr::Index(a, b) | Expr::Binop(a, _, b) => 1 + expr_size(a) + expr_size(b),
        Expr::Ternary(c, a, b) => 1 + expr_size(c) + expr_size(a) + expr_size(b),
        Expr::Call(_, args) => 1 + args.iter().map(expr_size).sum::<usize>(),
    }
}
