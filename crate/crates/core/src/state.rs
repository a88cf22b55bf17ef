//! Scoped program states: a stack of variable frames over a shared heap and
//! lock map, plus canonical rendering for state-set comparison.

use crate::value::{Heap, HeapObject, Loc, Value};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StateError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

/// One variable scope.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Frame(pub BTreeMap<String, Value>);

impl Frame {
    pub fn new() -> Self {
        Frame::default()
    }

    pub fn from_pairs(pairs: &[(&str, Value)]) -> Self {
        Frame(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        )
    }
}

/// Shared, scope-independent parts of a state. There is a single global heap
/// and a single global lock map regardless of scope nesting.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Globals {
    pub heap: Heap,
    /// Lock map; absent entries mean "not held".
    pub locks: BTreeMap<u64, bool>,
}

impl Globals {
    pub fn lock_held(&self, n: u64) -> bool {
        self.locks.get(&n).copied().unwrap_or(false)
    }

    pub fn held_locks(&self) -> Vec<u64> {
        self.locks
            .iter()
            .filter(|(_, held)| **held)
            .map(|(n, _)| *n)
            .collect()
    }
}

/// A scoped state: frames ordered innermost first, over the global heap and
/// lock map.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScopedState {
    pub frames: Vec<Frame>,
    pub globals: Globals,
}

impl ScopedState {
    pub fn new() -> Self {
        ScopedState {
            frames: vec![Frame::new()],
            globals: Globals::default(),
        }
    }

    pub fn from_frame(frame: Frame) -> Self {
        ScopedState {
            frames: vec![frame],
            globals: Globals::default(),
        }
    }

    /// Value of `name` in the innermost frame that binds it.
    pub fn lookup(&self, name: &str) -> Result<&Value, StateError> {
        self.frames
            .iter()
            .find_map(|f| f.0.get(name))
            .ok_or_else(|| StateError::Unbound(name.to_string()))
    }

    /// Write `name` in the innermost frame that already binds it. Existing
    /// outer bindings take priority over creating a new inner mapping.
    pub fn update(&mut self, name: &str, value: Value) -> Result<(), StateError> {
        for frame in self.frames.iter_mut() {
            if let Some(slot) = frame.0.get_mut(name) {
                *slot = value;
                return Ok(());
            }
        }
        Err(StateError::Unbound(name.to_string()))
    }

    /// Bind `name` in the innermost frame, shadowing any outer binding.
    pub fn declare(&mut self, name: &str, value: Value) {
        self.frames[0].0.insert(name.to_string(), value);
    }

    pub fn is_bound(&self, name: &str) -> bool {
        self.frames.iter().any(|f| f.0.contains_key(name))
    }

    /// State append: `self` frames become inner relative to `outer` frames.
    pub fn append_frames(&mut self, outer: &[Frame]) {
        self.frames.extend(outer.iter().cloned());
    }

    /// Split the frame stack back into an inner part of `n` frames and the
    /// remaining outer frames.
    pub fn split_frames(mut self, n: usize) -> (Vec<Frame>, Vec<Frame>, Globals) {
        let outer = self.frames.split_off(n);
        (self.frames, outer, self.globals)
    }

    /// Push a fresh empty innermost frame.
    pub fn push_frame(&mut self) {
        self.frames.insert(0, Frame::new());
    }

    /// Drop the innermost frame.
    pub fn pop_frame(&mut self) -> Option<Frame> {
        if self.frames.is_empty() {
            None
        } else {
            Some(self.frames.remove(0))
        }
    }

    /// All visible variable names, innermost binding winning.
    pub fn visible_vars(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        for frame in self.frames.iter().rev() {
            for (k, v) in &frame.0 {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }

    /// Canonical rendering of the state. Heap locations are renumbered in
    /// the order they are reached from visible variables (sorted by name),
    /// so two states that differ only in allocation order compare equal;
    /// unreachable heap objects are garbage and excluded.
    pub fn canonical_key(&self) -> String {
        let mut renumber: BTreeMap<Loc, usize> = BTreeMap::new();
        let mut reached: Vec<Loc> = Vec::new();
        let mut out = String::new();
        for (i, frame) in self.frames.iter().enumerate() {
            out.push_str(&format!("f{i}{{"));
            for (name, value) in &frame.0 {
                out.push_str(name);
                out.push('=');
                out.push_str(&render_value(value, &mut renumber, &mut reached));
                out.push(';');
            }
            out.push('}');
        }
        out.push_str("|heap{");
        for loc in reached {
            let id = renumber[&loc];
            match self.globals.heap.get(loc) {
                Some(obj) => out.push_str(&format!("@{id}={};", render_object(obj))),
                None => out.push_str(&format!("@{id}=dangling;")),
            }
        }
        out.push_str("}|locks{");
        for n in self.globals.held_locks() {
            out.push_str(&format!("{n};"));
        }
        out.push('}');
        out
    }

    /// Observable equality on a set of visible variables: compares the named
    /// variables and the heap reachable from them, up to location renaming.
    pub fn observable_key(&self, vars: &[String]) -> String {
        let mut renumber: BTreeMap<Loc, usize> = BTreeMap::new();
        let mut reached: Vec<Loc> = Vec::new();
        let mut out = String::new();
        let mut sorted: Vec<&String> = vars.iter().collect();
        sorted.sort();
        sorted.dedup();
        for name in sorted {
            out.push_str(name);
            out.push('=');
            match self.lookup(name) {
                Ok(v) => out.push_str(&render_value(v, &mut renumber, &mut reached)),
                Err(_) => out.push_str("<unbound>"),
            }
            out.push(';');
        }
        out.push_str("|heap{");
        for loc in reached {
            let id = renumber[&loc];
            match self.globals.heap.get(loc) {
                Some(obj) => out.push_str(&format!("@{id}={};", render_object(obj))),
                None => out.push_str(&format!("@{id}=dangling;")),
            }
        }
        out.push_str("}|locks{");
        for n in self.globals.held_locks() {
            out.push_str(&format!("{n};"));
        }
        out.push('}');
        out
    }

    /// Human-readable `name=value` lines, one per visible variable, sorted.
    /// Refs print their target object.
    pub fn render_lines(&self) -> Vec<String> {
        self.visible_vars()
            .iter()
            .map(|(name, value)| match value {
                Value::Ref(loc) => match self.globals.heap.get(*loc) {
                    Some(obj) => format!("{name}={}", obj.render()),
                    None => format!("{name}=<dangling {loc}>"),
                },
                v => format!("{name}={v}"),
            })
            .collect()
    }
}

fn render_value(
    value: &Value,
    renumber: &mut BTreeMap<Loc, usize>,
    reached: &mut Vec<Loc>,
) -> String {
    match value {
        Value::Ref(loc) => {
            let id = *renumber.entry(*loc).or_insert_with(|| {
                reached.push(*loc);
                reached.len() - 1
            });
            format!("@{id}")
        }
        v => v.to_string(),
    }
}

// Container elements are scalars, so no nested refs to chase here.
fn render_object(obj: &HeapObject) -> String {
    obj.render()
}

impl fmt::Display for ScopedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render_lines().join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(stack: Vec<Vec<(&str, i64)>>) -> ScopedState {
        ScopedState {
            frames: stack
                .into_iter()
                .map(|pairs| {
                    Frame(
                        pairs
                            .into_iter()
                            .map(|(k, v)| (k.to_string(), Value::Int(v)))
                            .collect(),
                    )
                })
                .collect(),
            globals: Globals::default(),
        }
    }

    #[test]
    fn lookup_resolves_innermost_binding() {
        let s = frames(vec![vec![], vec![("x", 1)]]);
        assert_eq!(s.lookup("x").unwrap(), &Value::Int(1));

        let s = frames(vec![vec![("x", 5)], vec![("x", 1)]]);
        assert_eq!(s.lookup("x").unwrap(), &Value::Int(5));
    }

    #[test]
    fn lookup_unbound_is_an_error() {
        let s = frames(vec![vec![]]);
        assert_eq!(
            s.lookup("x"),
            Err(StateError::Unbound("x".to_string()))
        );
    }

    #[test]
    fn update_prefers_existing_outer_binding() {
        // Mirrors updating through an empty fragment scope into the outer
        // state rather than creating a new inner mapping.
        let mut s = frames(vec![vec![], vec![("x", 1), ("y", 0)]]);
        s.update("x", Value::Int(2)).unwrap();
        assert!(s.frames[0].0.is_empty());
        assert_eq!(s.frames[1].0["x"], Value::Int(2));
        assert_eq!(s.frames[1].0["y"], Value::Int(0));
        assert_eq!(s.lookup("x").unwrap(), &Value::Int(2));
    }

    #[test]
    fn update_writes_innermost_binding_frame_only() {
        let mut s = frames(vec![vec![("x", 0)], vec![("x", 1)]]);
        s.update("x", Value::Int(9)).unwrap();
        assert_eq!(s.frames[0].0["x"], Value::Int(9));
        assert_eq!(s.frames[1].0["x"], Value::Int(1));
    }

    #[test]
    fn update_unbound_is_an_error() {
        let mut s = frames(vec![vec![]]);
        assert!(s.update("x", Value::Int(1)).is_err());
    }

    #[test]
    fn exactly_one_frame_changes_per_update() {
        let mut s = frames(vec![vec![("a", 1)], vec![("x", 1)], vec![("x", 2), ("b", 3)]]);
        let before = s.frames.clone();
        s.update("x", Value::Int(7)).unwrap();
        let changed: Vec<usize> = (0..before.len())
            .filter(|&i| before[i] != s.frames[i])
            .collect();
        assert_eq!(changed, vec![1]);
    }

    #[test]
    fn append_keeps_left_frames_inner() {
        let mut inner = frames(vec![vec![("t", 9)]]);
        let outer = frames(vec![vec![("x", 1)], vec![("x", 2)]]);
        inner.append_frames(&outer.frames);
        assert_eq!(inner.frames.len(), 3);
        assert_eq!(inner.lookup("t").unwrap(), &Value::Int(9));
        assert_eq!(inner.lookup("x").unwrap(), &Value::Int(1));
    }

    #[test]
    fn append_is_associative_for_lookup() {
        let a = frames(vec![vec![("x", 1)]]);
        let b = frames(vec![vec![("x", 2), ("y", 2)]]);
        let c = frames(vec![vec![("y", 3), ("z", 3)]]);

        let mut ab = a.clone();
        ab.append_frames(&b.frames);
        let mut ab_c = ab.clone();
        ab_c.append_frames(&c.frames);

        let mut bc = b.clone();
        bc.append_frames(&c.frames);
        let mut a_bc = a.clone();
        a_bc.append_frames(&bc.frames);

        for name in ["x", "y", "z"] {
            assert_eq!(ab_c.lookup(name).ok(), a_bc.lookup(name).ok());
        }
    }

    #[test]
    fn canonical_key_is_allocation_order_independent() {
        use crate::value::HeapObject;
        let mut s1 = ScopedState::new();
        let a = s1.globals.heap.alloc(HeapObject::Array(vec![Value::Int(1)]));
        let b = s1.globals.heap.alloc(HeapObject::Array(vec![Value::Int(2)]));
        s1.declare("p", Value::Ref(a));
        s1.declare("q", Value::Ref(b));

        let mut s2 = ScopedState::new();
        let b2 = s2.globals.heap.alloc(HeapObject::Array(vec![Value::Int(2)]));
        let a2 = s2.globals.heap.alloc(HeapObject::Array(vec![Value::Int(1)]));
        s2.declare("p", Value::Ref(a2));
        s2.declare("q", Value::Ref(b2));

        assert_eq!(s1.canonical_key(), s2.canonical_key());
    }

    #[test]
    fn canonical_key_excludes_garbage() {
        use crate::value::HeapObject;
        let mut s1 = ScopedState::new();
        s1.declare("x", Value::Int(3));
        let mut s2 = s1.clone();
        s2.globals.heap.alloc(HeapObject::Array(vec![Value::Int(9)]));
        assert_eq!(s1.canonical_key(), s2.canonical_key());
    }
}
