//! Runtime values.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use crate::ast::FnDef;

pub type Slot = Rc<RefCell<Value>>;
pub type ScopeRef = Rc<RefCell<Scope>>;

/// Lexical scope: a frame owns a chain of these; closures capture the chain.
pub struct Scope {
    pub vars: Vec<(Rc<str>, Slot)>,
    pub parent: Option<ScopeRef>,
}

impl Scope {
    pub fn child(parent: &ScopeRef) -> ScopeRef {
        Rc::new(RefCell::new(Scope { vars: Vec::new(), parent: Some(parent.clone()) }))
    }

    pub fn root() -> ScopeRef {
        Rc::new(RefCell::new(Scope { vars: Vec::new(), parent: None }))
    }

    pub fn declare(&mut self, name: &str, v: Value) {
        self.vars.push((name.into(), Rc::new(RefCell::new(v))));
    }

    pub fn lookup(scope: &ScopeRef, name: &str) -> Option<Slot> {
        let mut cur = Some(scope.clone());
        while let Some(s) = cur {
            let b = s.borrow();
            // Innermost shadowing declaration wins.
            if let Some((_, slot)) = b.vars.iter().rev().find(|(n, _)| &**n == name) {
                return Some(slot.clone());
            }
            cur = b.parent.clone();
        }
        None
    }
}

#[derive(Clone)]
pub enum Value {
    Nil,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Rc<str>),
    Slice(Rc<RefCell<Vec<Value>>>),
    Map(Rc<RefCell<GoMap>>),
    Struct(Rc<RefCell<StructVal>>),
    Chan(Rc<RefCell<ChanVal>>),
    Func(Rc<FuncVal>),
    Builtin(&'static str),
    Bound(Rc<(Value, String)>),
    Pkg(&'static str),
    Time(i64),
    Duration(i64),
    GoErr(Rc<str>),
    WaitGroup(Rc<RefCell<i64>>),
    Mutex,
    Testing(Rc<RefCell<TState>>),
    Tuple(Rc<Vec<Value>>),
}

impl Value {
    pub fn str(s: impl AsRef<str>) -> Value {
        Value::Str(s.as_ref().into())
    }

    pub fn truthy(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Nil => "nil",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float64",
            Value::Str(_) => "string",
            Value::Slice(_) => "slice",
            Value::Map(_) => "map",
            Value::Struct(_) => "struct",
            Value::Chan(_) => "chan",
            Value::Func(_) | Value::Builtin(_) | Value::Bound(_) => "func",
            Value::Pkg(_) => "package",
            Value::Time(_) => "time.Time",
            Value::Duration(_) => "time.Duration",
            Value::GoErr(_) => "error",
            Value::WaitGroup(_) => "sync.WaitGroup",
            Value::Mutex => "sync.Mutex",
            Value::Testing(_) => "*testing.T",
            Value::Tuple(_) => "tuple",
        }
    }
}

pub struct FuncVal {
    pub def: Rc<FnDef>,
    pub captured: Option<ScopeRef>,
    pub recv: Option<Value>,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum MapKey {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl MapKey {
    pub fn from_value(v: &Value) -> Option<MapKey> {
        match v {
            Value::Bool(b) => Some(MapKey::Bool(*b)),
            Value::Int(i) => Some(MapKey::Int(*i)),
            Value::Str(s) => Some(MapKey::Str(s.to_string())),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            MapKey::Bool(b) => Value::Bool(*b),
            MapKey::Int(i) => Value::Int(*i),
            MapKey::Str(s) => Value::str(s),
        }
    }

    pub fn display(&self) -> String {
        match self {
            MapKey::Bool(b) => b.to_string(),
            MapKey::Int(i) => i.to_string(),
            MapKey::Str(s) => s.clone(),
        }
    }
}

/// Zero value produced by lookups of missing map keys.
#[derive(Clone, Copy, Default, PartialEq, Eq)]
pub enum ZeroKind {
    #[default]
    Nil,
    Bool,
    Int,
    Str,
}

impl ZeroKind {
    pub fn value(self) -> Value {
        match self {
            ZeroKind::Nil => Value::Nil,
            ZeroKind::Bool => Value::Bool(false),
            ZeroKind::Int => Value::Int(0),
            ZeroKind::Str => Value::str(""),
        }
    }
}

/// Insertion-ordered map; iteration order is shuffled by the interpreter.
#[derive(Default)]
pub struct GoMap {
    pub entries: Vec<(MapKey, Value)>,
    pub zero: ZeroKind,
}

impl GoMap {
    pub fn get(&self, k: &MapKey) -> Option<Value> {
        self.entries.iter().find(|(ek, _)| ek == k).map(|(_, v)| v.clone())
    }

    pub fn set(&mut self, k: MapKey, v: Value) {
        if let Some(e) = self.entries.iter_mut().find(|(ek, _)| *ek == k) {
            e.1 = v;
        } else {
            self.entries.push((k, v));
        }
    }

    pub fn remove(&mut self, k: &MapKey) {
        self.entries.retain(|(ek, _)| ek != k);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct StructVal {
    pub type_name: Rc<str>,
    pub fields: Vec<(Rc<str>, Value)>,
}

impl StructVal {
    pub fn get(&self, name: &str) -> Option<Value> {
        self.fields.iter().find(|(n, _)| &**n == name).map(|(_, v)| v.clone())
    }

    pub fn set(&mut self, name: &str, v: Value) -> bool {
        if let Some(f) = self.fields.iter_mut().find(|(n, _)| &**n == name) {
            f.1 = v;
            true
        } else {
            false
        }
    }
}

#[derive(Default)]
pub struct ChanVal {
    pub q: VecDeque<Value>,
    /// `time.After` channel: fires once when the virtual clock reaches it.
    pub timer_at: Option<i64>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Verdict {
    Pass,
    Fail,
    Timeout,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Timeout => "TIMEOUT",
        }
    }
}

/// Result of one test function or subtest, rendered after its parent's verdict line.
pub struct ResultBlock {
    pub path: String,
    pub verdict: Verdict,
    pub dur_ns: i64,
    pub details: Vec<String>,
    pub children: Vec<ResultBlock>,
}

/// State behind a `*testing.T` handle.
pub struct TState {
    pub path: String,
    pub failed: bool,
    pub timed_out: bool,
    pub details: Vec<String>,
    pub children: Vec<ResultBlock>,
    pub env_restore: Vec<(String, Option<String>)>,
    pub start_ns: i64,
}

impl TState {
    pub fn new(path: String, start_ns: i64) -> TState {
        TState {
            path,
            failed: false,
            timed_out: false,
            details: Vec::new(),
            children: Vec::new(),
            env_restore: Vec::new(),
            start_ns,
        }
    }

    pub fn verdict(&self) -> Verdict {
        if self.timed_out {
            Verdict::Timeout
        } else if self.failed {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }

    pub fn into_block(self, end_ns: i64) -> ResultBlock {
        let verdict = self.verdict();
        ResultBlock {
            path: self.path,
            verdict,
            dur_ns: end_ns - self.start_ns,
            details: self.details,
            children: self.children,
        }
    }
}

pub fn deep_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Nil, Value::Nil) => true,
        (Value::Nil, Value::GoErr(_)) | (Value::GoErr(_), Value::Nil) => false,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Float(x), Value::Float(y)) => x == y,
        (Value::Int(x), Value::Float(y)) | (Value::Float(y), Value::Int(x)) => *x as f64 == *y,
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::Time(x), Value::Time(y)) => x == y,
        (Value::Duration(x), Value::Duration(y)) => x == y,
        (Value::GoErr(x), Value::GoErr(y)) => x == y,
        (Value::Slice(x), Value::Slice(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(a, b)| deep_eq(a, b))
        }
        (Value::Map(x), Value::Map(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len()
                && x.entries.iter().all(|(k, v)| y.get(k).map(|w| deep_eq(v, &w)).unwrap_or(false))
        }
        (Value::Struct(x), Value::Struct(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.type_name == y.type_name
                && x.fields.len() == y.fields.len()
                && x.fields
                    .iter()
                    .zip(y.fields.iter())
                    .all(|((n1, v1), (n2, v2))| n1 == n2 && deep_eq(v1, v2))
        }
        (Value::Chan(x), Value::Chan(y)) => Rc::ptr_eq(x, y),
        (Value::Func(x), Value::Func(y)) => Rc::ptr_eq(x, y),
        (Value::Nil, _) | (_, Value::Nil) => false,
        _ => false,
    }
}

/// `%v`-style rendering.
pub fn display_value(v: &Value) -> String {
    match v {
        Value::Nil => "<nil>".to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format_float(*f),
        Value::Str(s) => s.to_string(),
        Value::Slice(xs) => {
            let xs = xs.borrow();
            let inner: Vec<String> = xs.iter().map(display_value).collect();
            format!("[{}]", inner.join(" "))
        }
        Value::Map(m) => {
            let m = m.borrow();
            let mut pairs: Vec<(MapKey, String)> = m
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), format!("{}:{}", k.display(), display_value(v))))
                .collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            let inner: Vec<String> = pairs.into_iter().map(|(_, s)| s).collect();
            format!("map[{}]", inner.join(" "))
        }
        Value::Struct(s) => {
            let s = s.borrow();
            let inner: Vec<String> = s.fields.iter().map(|(_, v)| display_value(v)).collect();
            format!("{{{}}}", inner.join(" "))
        }
        Value::Chan(_) => "<chan>".to_string(),
        Value::Func(_) | Value::Builtin(_) | Value::Bound(_) => "<func>".to_string(),
        Value::Pkg(p) => format!("<package {p}>"),
        Value::Time(ns) => display_time(*ns),
        Value::Duration(ns) => display_duration(*ns),
        Value::GoErr(msg) => msg.to_string(),
        Value::WaitGroup(_) => "<waitgroup>".to_string(),
        Value::Mutex => "<mutex>".to_string(),
        Value::Testing(_) => "<*testing.T>".to_string(),
        Value::Tuple(xs) => {
            let inner: Vec<String> = xs.iter().map(display_value).collect();
            format!("({})", inner.join(", "))
        }
    }
}

fn format_float(f: f64) -> String {
    if f == f.trunc() && f.abs() < 1e15 {
        format!("{:.1}", f)
    } else {
        format!("{}", f)
    }
}

pub fn display_duration(ns: i64) -> String {
    let neg = ns < 0;
    let a = ns.unsigned_abs();
    let body = if a == 0 {
        "0s".to_string()
    } else if a < 1_000 {
        format!("{a}ns")
    } else if a < 1_000_000 {
        trim_unit(a as f64 / 1e3, "µs")
    } else if a < 1_000_000_000 {
        trim_unit(a as f64 / 1e6, "ms")
    } else {
        let secs = a as f64 / 1e9;
        if secs < 60.0 {
            trim_unit(secs, "s")
        } else {
            let m = (a / 1_000_000_000) / 60;
            let rem = a as f64 / 1e9 - (m * 60) as f64;
            format!("{}m{}", m, trim_unit(rem, "s"))
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn trim_unit(x: f64, unit: &str) -> String {
    let mut s = format!("{:.9}", x);
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    format!("{s}{unit}")
}

/// Render nanoseconds since the Unix epoch the way `go` prints a `time.Time`.
pub fn display_time(ns: i64) -> String {
    let (secs, sub) = (ns.div_euclid(1_000_000_000), ns.rem_euclid(1_000_000_000));
    let days = secs.div_euclid(86_400);
    let tod = secs.rem_euclid(86_400);
    let (y, m, d) = civil_from_days(days);
    let (hh, mm, ss) = (tod / 3600, (tod % 3600) / 60, tod % 60);
    let mut frac = String::new();
    if sub > 0 {
        let mut digits = format!("{sub:09}");
        while digits.ends_with('0') {
            digits.pop();
        }
        frac = format!(".{digits}");
    }
    format!("{y:04}-{m:02}-{d:02} {hh:02}:{mm:02}:{ss:02}{frac} +0000 UTC")
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// `%q`-style quoting.
pub fn quote_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
