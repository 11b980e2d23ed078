//! Standard-library surface: time/os/strings/fmt/assert/testing/sync/runtime.

use std::cell::RefCell;
use std::rc::Rc;

use crate::ast::Pos;
use crate::interp::{CallSite, Interrupt, IResult, Machine, PendingGo};
use crate::value::*;

pub fn static_name(name: &str) -> &'static str {
    match name {
        "len" => "len",
        "append" => "append",
        "delete" => "delete",
        "panic" => "panic",
        "cap" => "cap",
        "int" => "int",
        "int64" => "int64",
        "int32" => "int32",
        "float64" => "float64",
        "string" => "string",
        "bool" => "bool",
        "byte" => "byte",
        "rune" => "rune",
        _ => "unknown",
    }
}

/// Resolve `pkg.field`: a constant value or a builtin function handle.
pub fn pkg_member(m: &Machine, pkg: &str, field: &str, pos: Pos) -> IResult<Value> {
    let handle = |n: &'static str| Ok(Value::Builtin(n));
    match (pkg, field) {
        ("time", "Nanosecond") => Ok(Value::Duration(1)),
        ("time", "Microsecond") => Ok(Value::Duration(1_000)),
        ("time", "Millisecond") => Ok(Value::Duration(1_000_000)),
        ("time", "Second") => Ok(Value::Duration(1_000_000_000)),
        ("time", "Minute") => Ok(Value::Duration(60_000_000_000)),
        ("time", "Hour") => Ok(Value::Duration(3_600_000_000_000)),
        ("time", "Now") => handle("time.Now"),
        ("time", "Sleep") => handle("time.Sleep"),
        ("time", "Since") => handle("time.Since"),
        ("time", "After") => handle("time.After"),
        ("time", "Unix") => handle("time.Unix"),
        ("os", "Getenv") => handle("os.Getenv"),
        ("os", "Setenv") => handle("os.Setenv"),
        ("os", "Unsetenv") => handle("os.Unsetenv"),
        ("os", "AppendLine") => handle("os.AppendLine"),
        ("strings", "Join") => handle("strings.Join"),
        ("strings", "Split") => handle("strings.Split"),
        ("strings", "Contains") => handle("strings.Contains"),
        ("strings", "HasPrefix") => handle("strings.HasPrefix"),
        ("strings", "HasSuffix") => handle("strings.HasSuffix"),
        ("strings", "TrimSpace") => handle("strings.TrimSpace"),
        ("strings", "Repeat") => handle("strings.Repeat"),
        ("strings", "ReplaceAll") => handle("strings.ReplaceAll"),
        ("strings", "ToUpper") => handle("strings.ToUpper"),
        ("strings", "ToLower") => handle("strings.ToLower"),
        ("strconv", "Itoa") => handle("strconv.Itoa"),
        ("strconv", "Atoi") => handle("strconv.Atoi"),
        ("fmt", "Sprintf") => handle("fmt.Sprintf"),
        ("fmt", "Sprint") => handle("fmt.Sprint"),
        ("fmt", "Errorf") => handle("fmt.Errorf"),
        ("fmt", "Println") => handle("fmt.Println"),
        ("fmt", "Printf") => handle("fmt.Printf"),
        ("errors", "New") => handle("errors.New"),
        ("sort", "Strings") => handle("sort.Strings"),
        ("sort", "Ints") => handle("sort.Ints"),
        ("runtime", "Caller") => handle("runtime.Caller"),
        ("runtime", "Gosched") => handle("runtime.Gosched"),
        ("assert", "Equal") => handle("assert.Equal"),
        ("assert", "NotEqual") => handle("assert.NotEqual"),
        ("assert", "NoError") => handle("assert.NoError"),
        ("assert", "Error") => handle("assert.Error"),
        ("assert", "True") => handle("assert.True"),
        ("assert", "False") => handle("assert.False"),
        ("assert", "Nil") => handle("assert.Nil"),
        ("assert", "NotNil") => handle("assert.NotNil"),
        ("assert", "ElementsMatch") => handle("assert.ElementsMatch"),
        ("assert", "Len") => handle("assert.Len"),
        ("assert", "Contains") => handle("assert.Contains"),
        _ => rt(m, pos, format!("undefined: {pkg}.{field}")),
    }
}

fn rt<T>(m: &Machine, pos: Pos, msg: impl Into<String>) -> IResult<T> {
    let msg = msg.into();
    let stack: Vec<String> = m
        .frames
        .borrow()
        .iter()
        .rev()
        .map(|f| format!("  {} ({}:{})", f.name, f.file, f.decl_line))
        .collect();
    let _ = pos;
    Err(Interrupt::Panic { msg, stack })
}

fn want_str(m: &Machine, v: &Value, pos: Pos) -> IResult<String> {
    match v {
        Value::Str(s) => Ok(s.to_string()),
        other => rt(m, pos, format!("expected string, got {}", other.type_name())),
    }
}

fn want_int(m: &Machine, v: &Value, pos: Pos) -> IResult<i64> {
    match v {
        Value::Int(i) => Ok(*i),
        other => rt(m, pos, format!("expected int, got {}", other.type_name())),
    }
}

fn want_duration(m: &Machine, v: &Value, pos: Pos) -> IResult<i64> {
    match v {
        Value::Duration(d) => Ok(*d),
        Value::Int(i) => Ok(*i),
        other => rt(m, pos, format!("expected duration, got {}", other.type_name())),
    }
}

fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn tstate<'v>(m: &Machine, v: &'v Value, pos: Pos) -> IResult<Rc<RefCell<TState>>> {
    match v {
        Value::Testing(t) => Ok(t.clone()),
        other => rt(m, pos, format!("expected *testing.T, got {}", other.type_name())),
    }
}

fn record_failure(t: &Rc<RefCell<TState>>, site: &CallSite, msg: String) {
    let mut tb = t.borrow_mut();
    tb.failed = true;
    tb.details.push(format!("{}:{}: {}", basename(&site.file), site.line, msg));
}

fn record_log(t: &Rc<RefCell<TState>>, site: &CallSite, msg: String) {
    t.borrow_mut().details.push(format!("{}:{}: {}", basename(&site.file), site.line, msg));
}

fn render_operand(v: &Value) -> String {
    match v {
        Value::Str(s) => quote_string(s),
        other => display_value(other),
    }
}

pub fn call_builtin(
    m: &Machine,
    name: &str,
    mut args: Vec<Value>,
    site: CallSite,
    pos: Pos,
) -> IResult<Value> {
    match name {
        "len" => {
            let n = match args.first() {
                Some(Value::Str(s)) => s.len() as i64,
                Some(Value::Slice(xs)) => xs.borrow().len() as i64,
                Some(Value::Map(mm)) => mm.borrow().len() as i64,
                Some(Value::Chan(c)) => c.borrow().q.len() as i64,
                Some(Value::Nil) => 0,
                _ => return rt(m, pos, "invalid argument to len"),
            };
            Ok(Value::Int(n))
        }
        "cap" => call_builtin(m, "len", args, site, pos),
        "append" => {
            if args.is_empty() {
                return rt(m, pos, "append needs a slice");
            }
            let rest = args.split_off(1);
            let base = match args.pop().unwrap() {
                Value::Slice(xs) => xs.borrow().clone(),
                Value::Nil => Vec::new(),
                other => return rt(m, pos, format!("append to {}", other.type_name())),
            };
            let mut out = base;
            out.extend(rest);
            Ok(Value::Slice(Rc::new(RefCell::new(out))))
        }
        "delete" => {
            let (mm, k) = match (args.first(), args.get(1)) {
                (Some(Value::Map(mm)), Some(k)) => (mm.clone(), k.clone()),
                _ => return rt(m, pos, "invalid arguments to delete"),
            };
            if let Some(key) = MapKey::from_value(&k) {
                mm.borrow_mut().remove(&key);
            }
            Ok(Value::Nil)
        }
        "panic" => {
            let msg = args.first().map(display_value).unwrap_or_default();
            rt(m, pos, msg)
        }
        "int" | "int64" | "int32" | "byte" | "rune" => match args.first() {
            Some(Value::Int(i)) => Ok(Value::Int(*i)),
            Some(Value::Float(f)) => Ok(Value::Int(*f as i64)),
            Some(Value::Duration(d)) => Ok(Value::Int(*d)),
            _ => rt(m, pos, "invalid integer conversion"),
        },
        "float64" => match args.first() {
            Some(Value::Int(i)) => Ok(Value::Float(*i as f64)),
            Some(Value::Float(f)) => Ok(Value::Float(*f)),
            _ => rt(m, pos, "invalid float conversion"),
        },
        "string" => match args.first() {
            Some(Value::Str(s)) => Ok(Value::str(s)),
            Some(Value::Int(i)) => {
                let c = char::from_u32(*i as u32).unwrap_or('\u{FFFD}');
                Ok(Value::str(c.to_string()))
            }
            _ => rt(m, pos, "invalid string conversion"),
        },
        "bool" => args.first().cloned().ok_or(()).or_else(|_| rt(m, pos, "bool conversion")),

        // ---- time ----
        "time.Now" => {
            // Successive reads must differ, like a real clock.
            m.advance_by(1_000 + m.rand(40_000) as i64);
            Ok(Value::Time(m.clock.get()))
        }
        "time.Sleep" => {
            let d = want_duration(m, args.first().unwrap_or(&Value::Nil), pos)?;
            m.drain_pending()?;
            m.advance_by(d);
            Ok(Value::Nil)
        }
        "time.Since" => match args.first() {
            Some(Value::Time(t)) => Ok(Value::Duration(m.clock.get() - t)),
            _ => rt(m, pos, "time.Since needs a Time"),
        },
        "time.After" => {
            let d = want_duration(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::Chan(Rc::new(RefCell::new(ChanVal {
                q: Default::default(),
                timer_at: Some(m.clock.get() + d),
            }))))
        }
        "time.Unix" => {
            let sec = want_int(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let nsec = want_int(m, args.get(1).unwrap_or(&Value::Int(0)), pos)?;
            Ok(Value::Time(sec * 1_000_000_000 + nsec))
        }

        // ---- os ----
        "os.Getenv" => {
            let k = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let v = m.env.borrow().get(&k).cloned().unwrap_or_default();
            Ok(Value::str(v))
        }
        "os.Setenv" => {
            let k = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let v = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            m.env.borrow_mut().insert(k, v);
            Ok(Value::Nil)
        }
        "os.Unsetenv" => {
            let k = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            m.env.borrow_mut().remove(&k);
            Ok(Value::Nil)
        }
        "os.AppendLine" => {
            use std::io::Write;
            let path = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let line = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            let ok = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| writeln!(f, "{line}"))
                .is_ok();
            Ok(Value::Bool(ok))
        }

        // ---- strings ----
        "strings.Join" => {
            let parts = match args.first() {
                Some(Value::Slice(xs)) => xs
                    .borrow()
                    .iter()
                    .map(display_value)
                    .collect::<Vec<_>>(),
                _ => return rt(m, pos, "strings.Join needs a slice"),
            };
            let sep = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(parts.join(&sep)))
        }
        "strings.Split" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let sep = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            let parts: Vec<Value> = if sep.is_empty() {
                s.chars().map(|c| Value::str(c.to_string())).collect()
            } else {
                s.split(&sep).map(Value::str).collect()
            };
            Ok(Value::Slice(Rc::new(RefCell::new(parts))))
        }
        "strings.Contains" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let sub = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            Ok(Value::Bool(s.contains(&sub)))
        }
        "strings.HasPrefix" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let p = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            Ok(Value::Bool(s.starts_with(&p)))
        }
        "strings.HasSuffix" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let p = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            Ok(Value::Bool(s.ends_with(&p)))
        }
        "strings.TrimSpace" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(s.trim()))
        }
        "strings.Repeat" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let n = want_int(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(s.repeat(n.max(0) as usize)))
        }
        "strings.ReplaceAll" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let from = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            let to = want_str(m, args.get(2).unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(s.replace(&from, &to)))
        }
        "strings.ToUpper" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(s.to_uppercase()))
        }
        "strings.ToLower" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(s.to_lowercase()))
        }

        // ---- strconv ----
        "strconv.Itoa" => {
            let i = want_int(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(i.to_string()))
        }
        "strconv.Atoi" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            match s.trim().parse::<i64>() {
                Ok(i) => Ok(Value::Tuple(Rc::new(vec![Value::Int(i), Value::Nil]))),
                Err(_) => Ok(Value::Tuple(Rc::new(vec![
                    Value::Int(0),
                    Value::GoErr(format!("strconv.Atoi: parsing {s:?}: invalid syntax").into()),
                ]))),
            }
        }

        // ---- fmt / errors ----
        "fmt.Sprintf" => {
            let f = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::str(sprintf(&f, &args[1..])))
        }
        "fmt.Sprint" => {
            let s: Vec<String> = args.iter().map(display_value).collect();
            Ok(Value::str(s.join("")))
        }
        "fmt.Errorf" => {
            let f = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::GoErr(sprintf(&f, &args[1..]).into()))
        }
        "fmt.Println" => {
            let s: Vec<String> = args.iter().map(display_value).collect();
            m.emit(s.join(" "));
            Ok(Value::Nil)
        }
        "fmt.Printf" => {
            let f = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let text = sprintf(&f, &args[1..]);
            for line in text.trim_end_matches('\n').split('\n') {
                m.emit(line.to_string());
            }
            Ok(Value::Nil)
        }
        "errors.New" => {
            let s = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            Ok(Value::GoErr(s.into()))
        }

        // ---- sort ----
        "sort.Strings" => {
            if let Some(Value::Slice(xs)) = args.first() {
                xs.borrow_mut().sort_by_key(display_value);
            }
            Ok(Value::Nil)
        }
        "sort.Ints" => {
            if let Some(Value::Slice(xs)) = args.first() {
                xs.borrow_mut().sort_by_key(|v| match v {
                    Value::Int(i) => *i,
                    _ => 0,
                });
            }
            Ok(Value::Nil)
        }

        // ---- runtime ----
        "runtime.Caller" => {
            let skip = want_int(m, args.first().unwrap_or(&Value::Int(0)), pos)?;
            let frames = m.frames.borrow();
            let idx = frames.len() as i64 - 1 - skip;
            if idx < 0 || idx >= frames.len() as i64 {
                return Ok(Value::Tuple(Rc::new(vec![
                    Value::str(""),
                    Value::Int(0),
                    Value::str(""),
                    Value::Bool(false),
                ])));
            }
            let f = &frames[idx as usize];
            Ok(Value::Tuple(Rc::new(vec![
                Value::str(&*f.file),
                Value::Int(f.decl_line as i64),
                Value::str(&*f.name),
                Value::Bool(true),
            ])))
        }
        "runtime.Gosched" => {
            let picked = {
                let mut pending = m.pending.borrow_mut();
                if pending.is_empty() {
                    None
                } else {
                    let idx = m.rand(pending.len() as u64) as usize;
                    Some(pending.remove(idx))
                }
            };
            if let Some(g) = picked {
                m.run_goroutine(g)?;
            }
            Ok(Value::Nil)
        }

        // ---- assert ----
        _ if name.starts_with("assert.") => call_assert(m, name, args, site, pos),

        other => rt(m, pos, format!("unknown builtin {other}")),
    }
}

fn call_assert(
    m: &Machine,
    name: &str,
    args: Vec<Value>,
    site: CallSite,
    pos: Pos,
) -> IResult<Value> {
    let t = tstate(m, args.first().unwrap_or(&Value::Nil), pos)?;
    let pass = match name {
        "assert.Equal" => {
            let (want, got) = (args.get(1).unwrap_or(&Value::Nil), args.get(2).unwrap_or(&Value::Nil));
            if deep_eq(want, got) {
                true
            } else {
                record_failure(
                    &t,
                    &site,
                    format!(
                        "Not equal: expected: {} actual: {}",
                        render_operand(want),
                        render_operand(got)
                    ),
                );
                false
            }
        }
        "assert.NotEqual" => {
            let (want, got) = (args.get(1).unwrap_or(&Value::Nil), args.get(2).unwrap_or(&Value::Nil));
            if !deep_eq(want, got) {
                true
            } else {
                record_failure(
                    &t,
                    &site,
                    format!("Should not be: {}", render_operand(got)),
                );
                false
            }
        }
        "assert.NoError" => match args.get(1) {
            Some(Value::Nil) | None => true,
            Some(Value::GoErr(e)) => {
                record_failure(&t, &site, format!("Received unexpected error: {e}"));
                false
            }
            Some(other) => {
                record_failure(
                    &t,
                    &site,
                    format!("Received unexpected error: {}", display_value(other)),
                );
                false
            }
        },
        "assert.Error" => match args.get(1) {
            Some(Value::GoErr(_)) => true,
            _ => {
                record_failure(&t, &site, "An error is expected but got nil.".to_string());
                false
            }
        },
        "assert.True" => match args.get(1).and_then(|v| v.truthy()) {
            Some(true) => true,
            _ => {
                record_failure(&t, &site, "Should be true".to_string());
                false
            }
        },
        "assert.False" => match args.get(1).and_then(|v| v.truthy()) {
            Some(false) => true,
            _ => {
                record_failure(&t, &site, "Should be false".to_string());
                false
            }
        },
        "assert.Nil" => match args.get(1) {
            Some(Value::Nil) | None => true,
            Some(v) => {
                record_failure(&t, &site, format!("Expected nil, but got: {}", render_operand(v)));
                false
            }
        },
        "assert.NotNil" => match args.get(1) {
            Some(Value::Nil) | None => {
                record_failure(&t, &site, "Expected value not to be nil.".to_string());
                false
            }
            Some(_) => true,
        },
        "assert.ElementsMatch" => {
            let render_sorted = |v: &Value| -> Option<Vec<String>> {
                match v {
                    Value::Slice(xs) => {
                        let mut items: Vec<String> =
                            xs.borrow().iter().map(display_value).collect();
                        items.sort();
                        Some(items)
                    }
                    _ => None,
                }
            };
            let a = render_sorted(args.get(1).unwrap_or(&Value::Nil));
            let b = render_sorted(args.get(2).unwrap_or(&Value::Nil));
            match (a, b) {
                (Some(a), Some(b)) if a == b => true,
                (a, b) => {
                    record_failure(
                        &t,
                        &site,
                        format!(
                            "elements differ: listA: [{}] listB: [{}]",
                            a.map(|x| x.join(" ")).unwrap_or_default(),
                            b.map(|x| x.join(" ")).unwrap_or_default()
                        ),
                    );
                    false
                }
            }
        }
        "assert.Len" => {
            let obj = args.get(1).unwrap_or(&Value::Nil);
            let want = want_int(m, args.get(2).unwrap_or(&Value::Nil), pos)?;
            let got = match obj {
                Value::Str(s) => s.len() as i64,
                Value::Slice(xs) => xs.borrow().len() as i64,
                Value::Map(mm) => mm.borrow().len() as i64,
                _ => -1,
            };
            if got == want {
                true
            } else {
                record_failure(
                    &t,
                    &site,
                    format!(
                        "\"{}\" should have {} item(s), but has {}",
                        display_value(obj),
                        want,
                        got
                    ),
                );
                false
            }
        }
        "assert.Contains" => {
            let (container, elem) =
                (args.get(1).unwrap_or(&Value::Nil), args.get(2).unwrap_or(&Value::Nil));
            let found = match container {
                Value::Str(s) => match elem {
                    Value::Str(sub) => s.contains(&**sub),
                    _ => false,
                },
                Value::Slice(xs) => xs.borrow().iter().any(|v| deep_eq(v, elem)),
                Value::Map(mm) => MapKey::from_value(elem)
                    .map(|k| mm.borrow().get(&k).is_some())
                    .unwrap_or(false),
                _ => false,
            };
            if found {
                true
            } else {
                record_failure(
                    &t,
                    &site,
                    format!(
                        "{} does not contain {}",
                        render_operand(container),
                        render_operand(elem)
                    ),
                );
                false
            }
        }
        other => return rt(m, pos, format!("unknown builtin {other}")),
    };
    Ok(Value::Bool(pass))
}

pub fn call_method(
    m: &Machine,
    recv: &Value,
    name: &str,
    args: Vec<Value>,
    site: CallSite,
    pos: Pos,
) -> IResult<Value> {
    match recv {
        Value::Time(ns) => {
            let ns = *ns;
            match name {
                "Truncate" => {
                    let d = want_duration(m, args.first().unwrap_or(&Value::Nil), pos)?;
                    if d <= 0 {
                        return Ok(Value::Time(ns));
                    }
                    Ok(Value::Time(ns - ns.rem_euclid(d)))
                }
                "Add" => {
                    let d = want_duration(m, args.first().unwrap_or(&Value::Nil), pos)?;
                    Ok(Value::Time(ns + d))
                }
                "Before" => match args.first() {
                    Some(Value::Time(o)) => Ok(Value::Bool(ns < *o)),
                    _ => rt(m, pos, "Before needs a Time"),
                },
                "After" => match args.first() {
                    Some(Value::Time(o)) => Ok(Value::Bool(ns > *o)),
                    _ => rt(m, pos, "After needs a Time"),
                },
                "Sub" => match args.first() {
                    Some(Value::Time(o)) => Ok(Value::Duration(ns - *o)),
                    _ => rt(m, pos, "Sub needs a Time"),
                },
                "Equal" => match args.first() {
                    Some(Value::Time(o)) => Ok(Value::Bool(ns == *o)),
                    _ => rt(m, pos, "Equal needs a Time"),
                },
                "Unix" => Ok(Value::Int(ns.div_euclid(1_000_000_000))),
                "UnixNano" => Ok(Value::Int(ns)),
                "UnixMilli" => Ok(Value::Int(ns.div_euclid(1_000_000))),
                "IsZero" => Ok(Value::Bool(ns == 0)),
                "String" => Ok(Value::str(display_time(ns))),
                _ => rt(m, pos, format!("unknown method time.Time.{name}")),
            }
        }
        Value::Duration(d) => match name {
            "Seconds" => Ok(Value::Float(*d as f64 / 1e9)),
            "Milliseconds" => Ok(Value::Int(d / 1_000_000)),
            "Nanoseconds" => Ok(Value::Int(*d)),
            "String" => Ok(Value::str(display_duration(*d))),
            _ => rt(m, pos, format!("unknown method time.Duration.{name}")),
        },
        Value::WaitGroup(c) => match name {
            "Add" => {
                let n = want_int(m, args.first().unwrap_or(&Value::Int(1)), pos)?;
                *c.borrow_mut() += n;
                Ok(Value::Nil)
            }
            "Done" => {
                let v = {
                    let mut b = c.borrow_mut();
                    *b -= 1;
                    *b
                };
                if v < 0 {
                    return rt(m, pos, "sync: negative WaitGroup counter");
                }
                Ok(Value::Nil)
            }
            "Wait" => {
                loop {
                    if *c.borrow() <= 0 {
                        return Ok(Value::Nil);
                    }
                    let picked = {
                        let mut pending = m.pending.borrow_mut();
                        if pending.is_empty() {
                            None
                        } else {
                            let idx = m.rand(pending.len() as u64) as usize;
                            Some(pending.remove(idx))
                        }
                    };
                    match picked {
                        Some(g) => m.run_goroutine(g)?,
                        None => return rt(m, pos, "all goroutines are asleep - deadlock!"),
                    }
                }
            }
            _ => rt(m, pos, format!("unknown method sync.WaitGroup.{name}")),
        },
        Value::Mutex => match name {
            "Lock" | "Unlock" => Ok(Value::Nil),
            _ => rt(m, pos, format!("unknown method sync.Mutex.{name}")),
        },
        Value::GoErr(e) => match name {
            "Error" => Ok(Value::str(&**e)),
            _ => rt(m, pos, format!("unknown method error.{name}")),
        },
        Value::Testing(t) => call_testing(m, t, name, args, site, pos),
        other => rt(m, pos, format!("no method {name} on {}", other.type_name())),
    }
}

fn call_testing(
    m: &Machine,
    t: &Rc<RefCell<TState>>,
    name: &str,
    args: Vec<Value>,
    site: CallSite,
    pos: Pos,
) -> IResult<Value> {
    match name {
        "Run" => {
            let sub = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let f = args.get(1).cloned().unwrap_or(Value::Nil);
            let sub = sub.replace(' ', "_");
            let parent_path = t.borrow().path.clone();
            if !parent_path.contains('/') {
                if let Some(filter) = m.case_filter.borrow().as_ref() {
                    if *filter != sub {
                        return Ok(Value::Bool(true));
                    }
                }
            }
            let child_path = format!("{parent_path}/{sub}");
            let block = run_test_call(m, child_path, &f);
            let verdict = block.verdict;
            {
                let mut tb = t.borrow_mut();
                if verdict != Verdict::Pass {
                    tb.failed = true;
                }
                if verdict == Verdict::Timeout {
                    tb.timed_out = true;
                }
                tb.children.push(block);
            }
            if verdict == Verdict::Timeout {
                return Err(Interrupt::Timeout);
            }
            Ok(Value::Bool(verdict == Verdict::Pass))
        }
        "Errorf" | "Error" => {
            let msg = testing_message(name == "Errorf", &args);
            record_failure(t, &site, msg);
            Ok(Value::Nil)
        }
        "Fatalf" | "Fatal" => {
            let msg = testing_message(name == "Fatalf", &args);
            record_failure(t, &site, msg);
            Err(Interrupt::Fatal)
        }
        "Logf" | "Log" => {
            let msg = testing_message(name == "Logf", &args);
            record_log(t, &site, msg);
            Ok(Value::Nil)
        }
        "Setenv" => {
            let k = want_str(m, args.first().unwrap_or(&Value::Nil), pos)?;
            let v = want_str(m, args.get(1).unwrap_or(&Value::Nil), pos)?;
            let old = m.env.borrow().get(&k).cloned();
            t.borrow_mut().env_restore.push((k.clone(), old));
            m.env.borrow_mut().insert(k, v);
            Ok(Value::Nil)
        }
        "Name" => Ok(Value::str(t.borrow().path.clone())),
        "Fail" => {
            t.borrow_mut().failed = true;
            Ok(Value::Nil)
        }
        "FailNow" => {
            t.borrow_mut().failed = true;
            Err(Interrupt::Fatal)
        }
        "Failed" => Ok(Value::Bool(t.borrow().failed)),
        "Helper" | "Parallel" => Ok(Value::Nil),
        _ => rt(m, pos, format!("unknown method testing.T.{name}")),
    }
}

fn testing_message(formatted: bool, args: &[Value]) -> String {
    if formatted {
        match args.first() {
            Some(Value::Str(f)) => sprintf(f, &args[1..]),
            _ => String::new(),
        }
    } else {
        args.iter().map(display_value).collect::<Vec<_>>().join(" ")
    }
}

/// Execute one test function or subtest body: emits the RUN line, drains
/// late goroutines after the verdict, restores t.Setenv mutations.
pub fn run_test_call(m: &Machine, path: String, f: &Value) -> ResultBlock {
    m.emit(format!("=== RUN   {path}"));
    let t = Rc::new(RefCell::new(TState::new(path, m.clock.get())));
    let prev = m.current_t.replace(Some(t.clone()));
    let r = m.call_function(f, vec![Value::Testing(t.clone())], None, Pos { line: 0, col: 0 });
    match r {
        Ok(_) | Err(Interrupt::Fatal) => {}
        Err(Interrupt::Timeout) => t.borrow_mut().timed_out = true,
        Err(Interrupt::Panic { msg, stack }) => {
            let mut tb = t.borrow_mut();
            tb.failed = true;
            tb.details.push(format!("panic: {msg}"));
            tb.details.extend(stack);
        }
    }
    if let Err(Interrupt::Timeout) = m.drain_pending() {
        t.borrow_mut().timed_out = true;
    }
    let restores: Vec<(String, Option<String>)> = {
        let mut tb = t.borrow_mut();
        tb.env_restore.drain(..).collect()
    };
    for (k, old) in restores.into_iter().rev() {
        match old {
            Some(v) => {
                m.env.borrow_mut().insert(k, v);
            }
            None => {
                m.env.borrow_mut().remove(&k);
            }
        }
    }
    *m.current_t.borrow_mut() = prev;
    let end = m.clock.get();
    let mut tb = t.borrow_mut();
    ResultBlock {
        path: tb.path.clone(),
        verdict: tb.verdict(),
        dur_ns: end - tb.start_ns,
        details: std::mem::take(&mut tb.details),
        children: std::mem::take(&mut tb.children),
    }
}

/// `fmt`-style formatting for the supported verb subset.
pub fn sprintf(f: &str, args: &[Value]) -> String {
    let mut out = String::with_capacity(f.len() + 16);
    let mut chars = f.chars().peekable();
    let mut idx = 0;
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        let mut spec = String::new();
        let mut verb = None;
        while let Some(&n) = chars.peek() {
            if n.is_ascii_digit() || n == '.' || n == '-' || n == '+' || n == '#' || n == '0' {
                spec.push(n);
                chars.next();
            } else {
                verb = Some(n);
                chars.next();
                break;
            }
        }
        let Some(verb) = verb else {
            out.push('%');
            out.push_str(&spec);
            break;
        };
        if verb == '%' {
            out.push('%');
            continue;
        }
        let arg = args.get(idx).cloned().unwrap_or(Value::Nil);
        idx += 1;
        match verb {
            's' => out.push_str(&display_value(&arg)),
            'v' => out.push_str(&display_value(&arg)),
            'q' => out.push_str(&quote_string(&display_value(&arg))),
            'd' => {
                let i = match arg {
                    Value::Int(i) => i,
                    Value::Duration(d) => d,
                    other => {
                        out.push_str(&format!("%!d({})", display_value(&other)));
                        continue;
                    }
                };
                if let Some(width) = spec.strip_prefix('0').and_then(|w| w.parse::<usize>().ok()) {
                    out.push_str(&format!("{i:0width$}"));
                } else {
                    out.push_str(&i.to_string());
                }
            }
            't' => out.push_str(&display_value(&arg)),
            'f' => {
                let x = match arg {
                    Value::Float(x) => x,
                    Value::Int(i) => i as f64,
                    _ => 0.0,
                };
                let prec = spec
                    .strip_prefix('.')
                    .and_then(|p| p.parse::<usize>().ok())
                    .unwrap_or(6);
                out.push_str(&format!("{x:.prec$}"));
            }
            'x' => match arg {
                Value::Int(i) => out.push_str(&format!("{i:x}")),
                other => out.push_str(&display_value(&other)),
            },
            other => {
                out.push_str(&format!("%!{other}({})", display_value(&arg)));
            }
        }
    }
    out
}

/// Schedule a pending goroutine list entry directly (used by the runner).
pub fn spawn(m: &Machine, f: Value, args: Vec<Value>) {
    m.pending.borrow_mut().push(PendingGo { f, args });
}

#[cfg(test)]
mod tests {
    use super::sprintf;
    use crate::value::Value;

    #[test]
    fn sprintf_covers_common_verbs() {
        assert_eq!(sprintf("%s=%d", &[Value::Str("n".into()), Value::Int(3)]), "n=3");
        assert_eq!(sprintf("%q", &[Value::Str("a b".into())]), "\"a b\"");
        assert_eq!(sprintf("%05d", &[Value::Int(42)]), "00042");
        assert_eq!(sprintf("%t", &[Value::Bool(true)]), "true");
        assert_eq!(sprintf("%.2f", &[Value::Float(1.5)]), "1.50");
        assert_eq!(sprintf("%v", &[Value::Nil]), "<nil>");
        assert_eq!(sprintf("100%%", &[]), "100%");
    }
}
