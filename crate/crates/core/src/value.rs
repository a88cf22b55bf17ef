//! Runtime values and heap objects.

use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// A heap location. Fresh locations come from the heap's counter, so ids are
/// deterministic per execution path but not canonical across paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Loc(pub u64);

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// First-class values. Arrays and tables live on the heap behind `Ref`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(String),
    Unit,
    Ref(Loc),
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::Unit => "unit",
            Value::Ref(_) => "ref",
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_ref_loc(&self) -> Option<Loc> {
        match self {
            Value::Ref(l) => Some(*l),
            _ => None,
        }
    }
}

// Total order so values can key a BTreeMap. Variants order by tag first;
// table keys are scalars so cross-variant comparisons never matter there.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        fn tag(v: &Value) -> u8 {
            match v {
                Value::Int(_) => 0,
                Value::Bool(_) => 1,
                Value::Str(_) => 2,
                Value::Unit => 3,
                Value::Ref(_) => 4,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Unit, Value::Unit) => Ordering::Equal,
            (Value::Ref(a), Value::Ref(b)) => a.cmp(b),
            (a, b) => tag(a).cmp(&tag(b)),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Unit => write!(f, "()"),
            Value::Ref(l) => write!(f, "{l}"),
        }
    }
}

/// Heap-resident objects. A table is its finite map plus the default its
/// value type reads at absent keys; the key set and the size are derived
/// views, which keeps the size/key-set/map agreement invariant true by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum HeapObject {
    Array(Vec<Value>),
    Table {
        map: BTreeMap<Value, Value>,
        default: Value,
    },
}

impl HeapObject {
    pub fn table_size(&self) -> Option<usize> {
        match self {
            HeapObject::Table { map, .. } => Some(map.len()),
            _ => None,
        }
    }

    pub fn table_keys(&self) -> Option<impl Iterator<Item = &Value>> {
        match self {
            HeapObject::Table { map, .. } => Some(map.keys()),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            HeapObject::Array(vs) => {
                let items: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                format!("[{}]", items.join(","))
            }
            HeapObject::Table { map, .. } => {
                let items: Vec<String> = map.iter().map(|(k, v)| format!("{k}:{v}")).collect();
                format!("{{{}}}", items.join(","))
            }
        }
    }
}

/// The heap: a location-to-object map plus a fresh-location counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Heap {
    pub objects: BTreeMap<Loc, HeapObject>,
    pub next: u64,
}

impl Heap {
    pub fn new() -> Self {
        Heap::default()
    }

    pub fn alloc(&mut self, obj: HeapObject) -> Loc {
        let loc = Loc(self.next);
        self.next += 1;
        self.objects.insert(loc, obj);
        loc
    }

    pub fn get(&self, loc: Loc) -> Option<&HeapObject> {
        self.objects.get(&loc)
    }

    pub fn get_mut(&mut self, loc: Loc) -> Option<&mut HeapObject> {
        self.objects.get_mut(&loc)
    }
}

/// Default element value per scalar type, used for table reads of absent
/// keys and fresh array cells.
pub fn default_value(ty: &crate::ast::Type) -> Value {
    use crate::ast::Type;
    match ty {
        Type::Int => Value::Int(0),
        Type::Bool => Value::Bool(false),
        Type::Str => Value::Str(String::new()),
        Type::Unit => Value::Unit,
        Type::Array(_) | Type::Hashtable(_, _) | Type::Ref(_) => Value::Unit,
    }
}
