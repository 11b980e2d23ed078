//! Test discovery, per-run machines, and go-test-shaped output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{Duration, Instant};

use crate::ast::{lower_files, Program, SourceFile};
use crate::builtins::run_test_call;
use crate::check::check_program;
use crate::interp::{mix_seed, Machine};
use crate::value::{FuncVal, ResultBlock, Value, Verdict};
use crate::Diagnostic;

pub struct RunOptions {
    pub selector: String,
    pub count: u32,
    pub race: bool,
    pub timeout: Duration,
    pub seed: u64,
}

pub struct Selector {
    pub dir: String,
    pub func: Option<String>,
    pub case: Option<String>,
}

pub fn parse_selector(s: &str) -> Selector {
    match s.split_once(':') {
        Some((dir, rest)) => match rest.split_once('/') {
            Some((func, case)) => Selector {
                dir: dir.to_string(),
                func: Some(func.to_string()),
                case: Some(case.to_string()),
            },
            None => Selector { dir: dir.to_string(), func: Some(rest.to_string()), case: None },
        },
        None => Selector { dir: s.to_string(), func: None, case: None },
    }
}

fn go_files_in(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_file() && p.extension().map(|x| x == "go").unwrap_or(false) {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn rel_display(path: &Path) -> String {
    let s = path.display().to_string();
    s.strip_prefix("./").unwrap_or(&s).to_string()
}

/// A compilation unit: the target directory's files plus workspace-root
/// support files (shared helpers live at the root).
fn load_unit(dir: &str) -> Result<Vec<SourceFile>, String> {
    let dir_path = Path::new(dir);
    if !dir_path.is_dir() {
        return Err(format!("no such test target: {dir}"));
    }
    let mut paths = go_files_in(dir_path);
    let root = Path::new(".");
    if dir_path.canonicalize().ok() != root.canonicalize().ok() {
        paths.extend(go_files_in(root));
    }
    let mut seen = BTreeSet::new();
    let mut files = Vec::new();
    for p in paths {
        let rel = rel_display(&p);
        if !seen.insert(rel.clone()) {
            continue;
        }
        let src = std::fs::read_to_string(&p).map_err(|e| format!("read {rel}: {e}"))?;
        files.push(SourceFile { path: rel, src });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

fn build_unit(files: Vec<SourceFile>) -> Result<Program, Vec<Diagnostic>> {
    let (prog, mut diags) = lower_files(files);
    diags.extend(check_program(&prog));
    if diags.is_empty() {
        Ok(prog)
    } else {
        diags.sort_by(|a, b| (&a.file, a.line, a.col).cmp(&(&b.file, b.line, b.col)));
        diags.dedup_by(|a, b| a.to_string() == b.to_string());
        Err(diags)
    }
}

/// `build`: check every directory containing .go files. Exit 0 or 2.
pub fn run_build(dir: &str) -> i32 {
    let mut units = Vec::new();
    collect_dirs(Path::new(dir), &mut units);
    if units.is_empty() {
        units.push(PathBuf::from(dir));
    }
    let mut all: Vec<Diagnostic> = Vec::new();
    for unit in units {
        let dir = rel_display(&unit);
        let files = match load_unit(&dir) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{e}");
                return 2;
            }
        };
        if files.is_empty() {
            continue;
        }
        if let Err(diags) = build_unit(files) {
            all.extend(diags);
        }
    }
    all.sort_by(|a, b| (&a.file, a.line, a.col, &a.message).cmp(&(&b.file, b.line, b.col, &b.message)));
    all.dedup();
    if all.is_empty() {
        0
    } else {
        for d in &all {
            eprintln!("{d}");
        }
        2
    }
}

fn collect_dirs(dir: &Path, out: &mut Vec<PathBuf>) {
    if !go_files_in(dir).is_empty() {
        out.push(dir.to_path_buf());
    }
    if let Ok(entries) = std::fs::read_dir(dir) {
        let mut subdirs: Vec<PathBuf> = entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir() && !p.file_name().map(|n| n.to_string_lossy().starts_with('.')).unwrap_or(false))
            .collect();
        subdirs.sort();
        for s in subdirs {
            collect_dirs(&s, out);
        }
    }
}

/// `test`: run the selected tests `count` times with seeded nondeterminism.
pub fn run_tests(opts: &RunOptions) -> i32 {
    let sel = parse_selector(&opts.selector);
    let files = match load_unit(&sel.dir) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let prog = match build_unit(files) {
        Ok(p) => p,
        Err(diags) => {
            for d in diags {
                eprintln!("{d}");
            }
            return 2;
        }
    };

    let dir_prefix = {
        let d = sel.dir.trim_start_matches("./").trim_end_matches('/');
        if d == "." || d.is_empty() {
            String::new()
        } else {
            format!("{d}/")
        }
    };
    let mut tests: Vec<(&String, &Rc<crate::ast::FnDef>)> = prog
        .funcs
        .iter()
        .filter(|(name, def)| {
            let file = &prog.files[def.file_idx].path;
            name.starts_with("Test")
                && def.params.len() == 1
                && file.ends_with("_test.go")
                && (dir_prefix.is_empty() || file.starts_with(&dir_prefix))
                && !file.trim_start_matches(&dir_prefix.as_str()).contains('/')
        })
        .collect();
    tests.sort_by_key(|(_, def)| (prog.files[def.file_idx].path.clone(), def.decl_line));
    if let Some(f) = &sel.func {
        tests.retain(|(name, _)| *name == f);
    }
    if tests.is_empty() {
        println!("testing: warning: no tests to run");
        println!("ok  \t{}\t0.000s", sel.dir);
        return 0;
    }

    let base_env: BTreeMap<String, String> = std::env::vars().collect();
    let mut any_fail = false;
    let mut total_virtual_ns: i64 = 0;

    'runs: for run_idx in 0..opts.count {
        let seed = mix_seed(opts.seed, run_idx as u64);
        let deadline = Instant::now() + opts.timeout;
        // Programs can read MINIGO_RUN to tell repeated -count runs apart.
        let mut env = base_env.clone();
        env.insert("MINIGO_RUN".to_string(), run_idx.to_string());
        let m = Machine::new(&prog, seed, opts.race, Some(deadline), env);
        *m.case_filter.borrow_mut() = sel.case.clone();
        if let Err(e) = m.init_globals() {
            match e {
                crate::interp::Interrupt::Panic { msg, .. } => eprintln!("panic: {msg}"),
                _ => eprintln!("panic: initialization aborted"),
            }
            return 2;
        }
        let run_start = m.clock.get();
        for (name, def) in &tests {
            let f = Value::Func(Rc::new(FuncVal {
                def: (*def).clone(),
                captured: None,
                recv: None,
            }));
            let block = run_test_call(&m, (*name).clone(), &f);
            let verdict = block.verdict;
            flush_output(&m);
            let mut lines = Vec::new();
            render_block(&block, 0, &mut lines);
            for l in lines {
                println!("{l}");
            }
            if verdict != Verdict::Pass {
                any_fail = true;
            }
            if verdict == Verdict::Timeout {
                total_virtual_ns += m.clock.get() - run_start;
                break 'runs;
            }
        }
        total_virtual_ns += m.clock.get() - run_start;
    }

    let secs = total_virtual_ns as f64 / 1e9;
    if any_fail {
        println!("FAIL");
        println!("FAIL\t{}\t{:.3}s", sel.dir, secs);
        1
    } else {
        println!("PASS");
        println!("ok  \t{}\t{:.3}s", sel.dir, secs);
        0
    }
}

fn flush_output(m: &Machine) {
    for line in m.out.borrow_mut().drain(..) {
        println!("{line}");
    }
}

fn render_block(b: &ResultBlock, level: usize, out: &mut Vec<String>) {
    let indent = "    ".repeat(level);
    out.push(format!(
        "{indent}--- {}: {} ({:.2}s)",
        b.verdict.label(),
        b.path,
        b.dur_ns as f64 / 1e9
    ));
    for d in &b.details {
        out.push(format!("{indent}    {d}"));
    }
    for c in &b.children {
        render_block(c, level + 1, out);
    }
}
