//! Ticket intake and failure reproduction: rerun the test until it
//! fails, then squeeze structured failure information out of the raw
//! runner output (regex library first, one LLM call as a last resort).

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, Scope, SubjectAdapter, Verdict};
use crate::gateway::Backend;
use crate::goparse;
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestId {
    pub target: String,
    pub func: String,
    pub case: String,
}

impl TestId {
    pub fn render(&self) -> String {
        format!("{}/{}/{}", self.target, self.func, self.case)
    }

    /// Directory-safe name for per-ticket artifact folders.
    pub fn slug(&self) -> String {
        let mut out = String::new();
        for ch in self.render().chars() {
            if ch.is_ascii_alphanumeric() || ch == '-' || ch == '.' {
                out.push(ch);
            } else if !out.ends_with('_') {
                out.push('_');
            }
        }
        out.trim_matches('_').to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub message: String,
    pub stack_trace: String,
    pub assertion_file: String,
    pub assertion_line: u32,
    pub test_func_file: String,
    pub assertion_stmt: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproductionReport {
    pub test: TestId,
    pub attempted_runs: u32,
    pub failures: Vec<FailureRecord>,
    pub scope_used: Scope,
    pub reproduced: bool,
}

#[derive(Debug, Error)]
pub enum ReproduceError {
    #[error("malformed ticket `{0}`: expected target/test_func/test_case")]
    MalformedTicket(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("workspace does not build: {0}")]
    BuildFailed(String),
    #[error("could not extract failure information from run output")]
    ExtractionFailed,
    #[error("test function {0} not found under its target directory")]
    TestFuncNotFound(String),
}

/// Split on '/' from the right: last segment is the case, the one before
/// it the function, everything else the target (targets contain '/').
pub fn parse_ticket(raw: &str) -> Result<TestId, ReproduceError> {
    let raw = raw.trim();
    let parts: Vec<&str> = raw.split('/').collect();
    if parts.len() < 2 {
        return Err(ReproduceError::MalformedTicket(raw.to_string()));
    }
    let case = parts[parts.len() - 1];
    let func = parts[parts.len() - 2];
    let target = parts[..parts.len() - 2].join("/");
    if func.is_empty() || target.is_empty() {
        return Err(ReproduceError::MalformedTicket(raw.to_string()));
    }
    Ok(TestId {
        target,
        func: func.to_string(),
        case: case.to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct PatternSpec {
    family: String,
    pattern: String,
    #[serde(default)]
    site: Option<String>,
    #[serde(default)]
    stack: Option<String>,
}

struct Family {
    name: String,
    pattern: Regex,
    site: Option<Regex>,
    stack: Option<Regex>,
}

fn families() -> &'static [Family] {
    static FAMILIES: OnceLock<Vec<Family>> = OnceLock::new();
    FAMILIES.get_or_init(|| {
        let specs: Vec<PatternSpec> =
            serde_json::from_str(include_str!("../assets/failure_patterns.json"))
                .expect("failure pattern file parses");
        specs
            .into_iter()
            .map(|s| Family {
                name: s.family,
                pattern: Regex::new(&s.pattern).expect("family pattern compiles"),
                site: s.site.map(|p| Regex::new(&p).expect("site pattern compiles")),
                stack: s.stack.map(|p| Regex::new(&p).expect("stack pattern compiles")),
            })
            .collect()
    })
}

/// Resolve a (possibly bare-basename) path from runner output to a
/// workspace-relative file that actually exists.
fn resolve_file(workspace: &Path, target_dir: &str, reported: &str) -> Option<String> {
    let direct = workspace.join(reported);
    if direct.is_file() {
        return Some(reported.to_string());
    }
    let basename = Path::new(reported).file_name()?.to_string_lossy().to_string();
    let in_target = format!("{target_dir}/{basename}");
    if workspace.join(&in_target).is_file() {
        return Some(in_target);
    }
    let mut matches = Vec::new();
    for entry in walkdir::WalkDir::new(workspace).into_iter().flatten() {
        if entry.file_type().is_file() && entry.file_name().to_string_lossy() == basename {
            let rel = entry
                .path()
                .strip_prefix(workspace)
                .ok()?
                .to_string_lossy()
                .to_string();
            matches.push(rel);
        }
    }
    if matches.len() == 1 {
        matches.pop()
    } else {
        None
    }
}

fn locate_test_func(
    workspace: &Path,
    target_dir: &str,
    func: &str,
) -> Option<(String, u32)> {
    let dir = workspace.join(target_dir);
    let mut entries: Vec<_> = std::fs::read_dir(dir).ok()?.flatten().collect();
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().to_string();
        if !name.ends_with("_test.go") {
            continue;
        }
        let text = std::fs::read_to_string(entry.path()).ok()?;
        let rel = format!("{target_dir}/{name}");
        if let Ok(fns) = goparse::parse_functions(&text, &rel) {
            if let Some(f) = fns.iter().find(|f| f.name == func) {
                return Some((rel, f.decl_line));
            }
        }
    }
    None
}

pub fn read_assertion_statement(
    workspace: &Path,
    file: &str,
    line: u32,
) -> Result<String, goparse::StatementError> {
    let text = std::fs::read_to_string(workspace.join(file))
        .map_err(|_| goparse::StatementError::NoStatementAtLine(line))?;
    goparse::statement_at_line(&text, line).map(|(stmt, _)| stmt)
}

fn parse_extraction(response: &str) -> Option<(String, String, u32)> {
    let mut message = None;
    let mut file = None;
    let mut line = None;
    for l in response.lines() {
        let t = l.trim();
        if let Some(rest) = t.strip_prefix("MESSAGE:") {
            message = Some(rest.trim().to_string());
        } else if let Some(rest) = t.strip_prefix("FILE:") {
            file = Some(rest.trim().to_string());
        } else if let Some(rest) = t.strip_prefix("LINE:") {
            line = rest.trim().parse().ok();
        }
    }
    Some((message?, file?, line?))
}

/// Regex pass over the failing run's output, ordered by failure family;
/// when the mandatory fields stay unfilled and a fallback backend is
/// given, one LLM call gets to try. Extracted locations are only
/// accepted after checking them against the workspace.
pub fn extract_failure_info(
    raw_output: &str,
    workspace: &Path,
    test: &TestId,
    fallback: Option<&dyn Backend>,
) -> Result<FailureRecord, ReproduceError> {
    let target_dir = crate::adapter::target_dir(&test.target);
    let mut message = None;
    let mut file = None;
    let mut line: Option<u32> = None;
    let mut stack = String::new();

    for family in families() {
        let Some(caps) = family.pattern.captures(raw_output) else {
            continue;
        };
        message = caps.name("message").map(|m| m.as_str().trim().to_string());
        file = caps.name("file").map(|m| m.as_str().to_string());
        line = caps.name("line").and_then(|m| m.as_str().parse().ok());
        if let Some(site) = &family.site {
            if let Some(sc) = site.captures(raw_output) {
                file = file.or_else(|| sc.name("file").map(|m| m.as_str().to_string()));
                let at = sc.name("atline").and_then(|m| m.as_str().parse().ok());
                let decl = sc.name("line").and_then(|m| m.as_str().parse().ok());
                line = line.or(at).or(decl);
            }
        }
        if let Some(stack_re) = &family.stack {
            stack = stack_re
                .find_iter(raw_output)
                .map(|m| m.as_str().trim_end().to_string())
                .collect::<Vec<_>>()
                .join("\n");
        }
        let _ = &family.name;
        break;
    }

    let mut resolved =
        file.as_deref().and_then(|f| resolve_file(workspace, target_dir, f));
    if message.is_none() || resolved.is_none() || line.is_none() {
        if let Some(backend) = fallback {
            let prompt = prompts::extraction(raw_output);
            if let Ok(response) = crate::gateway::complete(&prompt, backend) {
                if let Some((m, f, l)) = parse_extraction(&response) {
                    message = Some(m);
                    resolved = resolve_file(workspace, target_dir, &f);
                    line = Some(l);
                }
            }
        }
    }

    let (Some(message), Some(assertion_file), Some(assertion_line)) =
        (message, resolved, line)
    else {
        return Err(ReproduceError::ExtractionFailed);
    };
    let file_text = std::fs::read_to_string(workspace.join(&assertion_file))
        .map_err(|_| ReproduceError::ExtractionFailed)?;
    let line_count = file_text.lines().count() as u32;
    if assertion_line == 0 || assertion_line > line_count {
        return Err(ReproduceError::ExtractionFailed);
    }
    let assertion_stmt = goparse::statement_at_line(&file_text, assertion_line)
        .map(|(stmt, _)| stmt)
        .unwrap_or_else(|_| {
            file_text
                .lines()
                .nth(assertion_line as usize - 1)
                .unwrap_or_default()
                .trim()
                .to_string()
        });
    let test_func_file = locate_test_func(workspace, target_dir, &test.func)
        .map(|(f, _)| f)
        .unwrap_or_else(|| assertion_file.clone());
    Ok(FailureRecord {
        message,
        stack_trace: stack,
        assertion_file,
        assertion_line,
        test_func_file,
        assertion_stmt,
    })
}

/// Case scope first; only when that stays green is the whole target
/// rerun to look for interference from sibling tests. Failing runs whose
/// output defeats extraction still count for reproduction: they get a
/// minimal record pointing at the test function itself.
pub fn reproduce(
    adapter: &SubjectAdapter,
    test: &TestId,
    runs: u32,
    race: bool,
    timeout: Duration,
    fallback: Option<&dyn Backend>,
) -> Result<ReproductionReport, ReproduceError> {
    let mut scope_used = Scope::Case;
    let mut outcomes = adapter.run_test(test, Scope::Case, runs, race, timeout)?;
    if let Some(be) = outcomes.iter().find(|o| o.verdict == Verdict::BuildError) {
        return Err(ReproduceError::BuildFailed(be.raw_output.clone()));
    }
    if outcomes.iter().all(|o| o.verdict == Verdict::Pass) {
        scope_used = Scope::Target;
        outcomes = adapter.run_test(test, Scope::Target, runs, race, timeout)?;
    }

    let workspace = adapter.workspace();
    let mut failures = Vec::new();
    for outcome in &outcomes {
        if outcome.verdict == Verdict::Pass {
            continue;
        }
        match extract_failure_info(&outcome.raw_output, workspace, test, fallback) {
            Ok(record) => failures.push(record),
            Err(_) => {
                let target = crate::adapter::target_dir(&test.target);
                let (file, decl_line) = locate_test_func(workspace, target, &test.func)
                    .ok_or_else(|| ReproduceError::TestFuncNotFound(test.func.clone()))?;
                let stmt = read_assertion_statement(workspace, &file, decl_line)
                    .unwrap_or_default();
                failures.push(FailureRecord {
                    message: outcome
                        .raw_output
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("test failed")
                        .trim()
                        .to_string(),
                    stack_trace: String::new(),
                    assertion_file: file.clone(),
                    assertion_line: decl_line,
                    test_func_file: file,
                    assertion_stmt: stmt,
                });
            }
        }
    }

    Ok(ReproductionReport {
        test: test.clone(),
        attempted_runs: runs,
        reproduced: !failures.is_empty(),
        failures,
        scope_used,
    })
}

/// The failure handed to downstream stages: most frequent distinct
/// (message, assertion_line) pair, first occurrence breaking ties.
pub fn pick_primary(failures: &[FailureRecord]) -> Option<&FailureRecord> {
    let mut counts: HashMap<(&str, u32), usize> = HashMap::new();
    for f in failures {
        *counts.entry((f.message.as_str(), f.assertion_line)).or_default() += 1;
    }
    failures.iter().max_by_key(|f| {
        let count = counts[&(f.message.as_str(), f.assertion_line)];
        // Stable max: later entries never beat earlier ones on ties.
        (count, std::cmp::Reverse(failures.iter().position(|g| g == *f).unwrap()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tid(target: &str, func: &str, case: &str) -> TestId {
        TestId {
            target: target.to_string(),
            func: func.to_string(),
            case: case.to_string(),
        }
    }

    #[test]
    fn tickets_right_split() {
        let t = parse_ticket("pkg/payments:unit/TestRefund/negative amount").unwrap();
        assert_eq!(t.target, "pkg/payments:unit");
        assert_eq!(t.func, "TestRefund");
        assert_eq!(t.case, "negative amount");

        let t = parse_ticket("x/y/z/TestF/c").unwrap();
        assert_eq!(t.target, "x/y/z");
        assert_eq!(t.func, "TestF");
        assert_eq!(t.case, "c");

        let t = parse_ticket("envpoll/TestDisplayWindow/").unwrap();
        assert_eq!(t.case, "");

        assert!(matches!(
            parse_ticket("a/b"),
            Err(ReproduceError::MalformedTicket(_))
        ));
        assert!(matches!(
            parse_ticket("loneword"),
            Err(ReproduceError::MalformedTicket(_))
        ));
        assert!(matches!(
            parse_ticket("x//c"),
            Err(ReproduceError::MalformedTicket(_))
        ));
    }

    #[test]
    fn ticket_round_trips_through_render() {
        for raw in ["calc/TestAdd/both positive", "a/b:lbl/TestX/", "x/y/z/TestF/c"] {
            let t = parse_ticket(raw).unwrap();
            assert_eq!(parse_ticket(&t.render()).unwrap(), t);
        }
    }

    #[test]
    fn slug_is_path_safe() {
        let t = tid("pkg/pay:unit", "TestRefund", "negative amount");
        assert_eq!(t.slug(), "pkg_pay_unit_TestRefund_negative_amount");
    }

    #[test]
    fn primary_failure_is_most_frequent() {
        let mk = |msg: &str, line: u32| FailureRecord {
            message: msg.to_string(),
            stack_trace: String::new(),
            assertion_file: "f.go".to_string(),
            assertion_line: line,
            test_func_file: "f.go".to_string(),
            assertion_stmt: String::new(),
        };
        let failures = vec![mk("a", 1), mk("b", 2), mk("b", 2), mk("a", 3)];
        let primary = pick_primary(&failures).unwrap();
        assert_eq!((primary.message.as_str(), primary.assertion_line), ("b", 2));
        let tie = vec![mk("x", 1), mk("y", 2)];
        assert_eq!(pick_primary(&tie).unwrap().message, "x");
        assert!(pick_primary(&[]).is_none());
    }
}
