//! Subject-toolchain boundary. Everything the pipeline knows about the
//! codebase under repair goes through here: parsing its sources, building
//! a workspace snapshot, and running tests with a configurable runner
//! command. The pipeline itself never links against the toolchain.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::goparse::{
    find_async_launches, parse_functions, AsyncLaunchSite, FnKind, ParseError, SubjectFunction,
};
use crate::reproduce::TestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Case,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    UnusedVariable,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileDiagnostic {
    pub file: String,
    pub line: u32,
    pub message: String,
    pub kind: DiagnosticKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Timeout,
    BuildError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub test: TestId,
    pub run_index: u32,
    pub verdict: Verdict,
    pub raw_output: String,
    pub duration: f64,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("subject toolchain not found: {0}")]
    ToolchainMissing(String),
    #[error("subject toolchain crashed: {0}")]
    ToolchainCrashed(String),
    #[error("selector `{0}` matched no tests")]
    SelectorNotFound(String),
    #[error("bad subject config: {0}")]
    BadConfig(String),
}

/// Runner/build command templates. `{target}` `{runcount}` `{raceflag}`
/// `{timeout}` are substituted per invocation; an argument that collapses
/// to the empty string is dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectConfig {
    pub build_cmd: Vec<String>,
    pub test_cmd: Vec<String>,
    #[serde(default)]
    pub env: Vec<(String, String)>,
    pub unused_pattern: String,
}

pub struct SubjectAdapter {
    workspace: PathBuf,
    cfg: SubjectConfig,
    unused_re: Regex,
}

pub fn target_dir(target: &str) -> &str {
    target.split(':').next().unwrap_or(target)
}

pub fn sanitize_case(case: &str) -> String {
    case.replace(' ', "_")
}

/// Runner selector for a test at the given scope: `dir` for the whole
/// target, `dir:Func` or `dir:Func/case` otherwise.
pub fn selector_for(test: &TestId, scope: Scope) -> String {
    let dir = target_dir(&test.target);
    match scope {
        Scope::Target => dir.to_string(),
        Scope::Case if test.case.is_empty() => format!("{dir}:{}", test.func),
        Scope::Case => format!("{dir}:{}/{}", test.func, sanitize_case(&test.case)),
    }
}

impl SubjectAdapter {
    pub fn new(workspace: &Path, cfg: SubjectConfig) -> Result<Self, AdapterError> {
        let unused_re = Regex::new(&cfg.unused_pattern)
            .map_err(|e| AdapterError::BadConfig(format!("unused_pattern: {e}")))?;
        Ok(SubjectAdapter {
            workspace: workspace.to_path_buf(),
            cfg,
            unused_re,
        })
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    pub fn config(&self) -> &SubjectConfig {
        &self.cfg
    }

    fn invoke(
        &self,
        template: &[String],
        subs: &HashMap<&str, String>,
        extra_env: &[(&str, &str)],
    ) -> Result<std::process::Output, AdapterError> {
        let mut argv = Vec::new();
        for arg in template {
            let mut expanded = arg.clone();
            for (key, value) in subs {
                expanded = expanded.replace(&format!("{{{key}}}"), value);
            }
            if !expanded.is_empty() {
                argv.push(expanded);
            }
        }
        if argv.is_empty() {
            return Err(AdapterError::BadConfig("empty command template".into()));
        }
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]).current_dir(&self.workspace);
        for (k, v) in self
            .cfg
            .env
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .chain(extra_env.iter().copied())
        {
            cmd.env(k, v);
        }
        cmd.output().map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                AdapterError::ToolchainMissing(argv[0].clone())
            } else {
                AdapterError::ToolchainCrashed(e.to_string())
            }
        })
    }

    /// Build the whole workspace snapshot; empty result means success.
    pub fn compile(&self) -> Result<Vec<CompileDiagnostic>, AdapterError> {
        let subs = HashMap::from([("target", ".".to_string())]);
        let out = self.invoke(&self.cfg.build_cmd, &subs, &[])?;
        let stderr = String::from_utf8_lossy(&out.stderr);
        match out.status.code() {
            Some(0) => Ok(Vec::new()),
            Some(2) => Ok(self.parse_diagnostics(&stderr)),
            code => Err(AdapterError::ToolchainCrashed(format!(
                "build exited with {code:?}: {}",
                stderr.trim()
            ))),
        }
    }

    fn parse_diagnostics(&self, stderr: &str) -> Vec<CompileDiagnostic> {
        let loc = Regex::new(r"^(?P<file>[^\s:]+):(?P<line>\d+):(?P<col>\d+): (?P<msg>.+)$")
            .expect("diagnostic regex");
        let mut out = Vec::new();
        for line in stderr.lines() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (file, lineno, message) = match loc.captures(line) {
                Some(c) => (
                    c["file"].to_string(),
                    c["line"].parse().unwrap_or(0),
                    c["msg"].to_string(),
                ),
                None => (String::new(), 0, line.to_string()),
            };
            let kind = if self.unused_re.is_match(&message) {
                DiagnosticKind::UnusedVariable
            } else {
                DiagnosticKind::Other
            };
            out.push(CompileDiagnostic {
                file,
                line: lineno,
                message,
                kind,
            });
        }
        if out.is_empty() {
            out.push(CompileDiagnostic {
                file: String::new(),
                line: 0,
                message: "build failed without diagnostics".to_string(),
                kind: DiagnosticKind::Other,
            });
        }
        out
    }

    pub fn run_test(
        &self,
        test: &TestId,
        scope: Scope,
        runs: u32,
        race: bool,
        timeout: Duration,
    ) -> Result<Vec<RunOutcome>, AdapterError> {
        self.run_test_with_env(test, scope, runs, race, timeout, &[])
    }

    /// Like `run_test` but with extra environment entries, used to point
    /// instrumented code at per-invocation log paths.
    pub fn run_test_with_env(
        &self,
        test: &TestId,
        scope: Scope,
        runs: u32,
        race: bool,
        timeout: Duration,
        extra_env: &[(&str, &str)],
    ) -> Result<Vec<RunOutcome>, AdapterError> {
        assert!(runs >= 1, "runs must be at least 1");
        let selector = selector_for(test, scope);
        let subs = HashMap::from([
            ("target", selector.clone()),
            ("runcount", runs.to_string()),
            (
                "raceflag",
                if race { "--race".to_string() } else { String::new() },
            ),
            ("timeout", timeout.as_secs().to_string()),
        ]);
        let out = self.invoke(&self.cfg.test_cmd, &subs, extra_env)?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        let stderr = String::from_utf8_lossy(&out.stderr);
        match out.status.code() {
            Some(0) | Some(1) => {
                if stdout.contains("warning: no tests to run") {
                    return Err(AdapterError::SelectorNotFound(selector));
                }
                Ok(parse_outcomes(&stdout, test))
            }
            Some(2) => Ok(vec![RunOutcome {
                test: test.clone(),
                run_index: 0,
                verdict: Verdict::BuildError,
                raw_output: stderr.to_string(),
                duration: 0.0,
            }]),
            code => Err(AdapterError::ToolchainCrashed(format!(
                "test run exited with {code:?}: {}",
                stderr.trim()
            ))),
        }
    }
}

struct Block<'a> {
    verdict: Verdict,
    path: &'a str,
    duration: f64,
    indent: usize,
}

fn parse_block_line(line: &str) -> Option<Block<'_>> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    let rest = &line[indent..];
    let rest = rest.strip_prefix("--- ")?;
    let (label, rest) = rest.split_once(": ")?;
    let verdict = match label {
        "PASS" => Verdict::Pass,
        "FAIL" => Verdict::Fail,
        "TIMEOUT" => Verdict::Timeout,
        _ => return None,
    };
    let open = rest.rfind(" (")?;
    let path = &rest[..open];
    let duration = rest[open + 2..]
        .trim_end_matches(')')
        .trim_end_matches('s')
        .parse()
        .ok()?;
    Some(Block {
        verdict,
        path,
        duration,
        indent,
    })
}

/// Split runner output into per-repetition outcomes for `test`. A new
/// repetition starts when the first top-level `=== RUN` header comes
/// around again; within each repetition the verdict is taken from the
/// deepest result block matching the test (its case when one is named,
/// the function block otherwise).
pub fn parse_outcomes(stdout: &str, test: &TestId) -> Vec<RunOutcome> {
    let lines: Vec<&str> = stdout.lines().collect();
    let mut first_header: Option<&str> = None;
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if let Some(name) = line.strip_prefix("=== RUN   ") {
            if name.contains('/') {
                continue;
            }
            match first_header {
                None => {
                    first_header = Some(name);
                    segments.push((i, lines.len()));
                }
                Some(first) if first == name => segments.push((i, lines.len())),
                Some(_) => {}
            }
        }
    }
    for i in 0..segments.len().saturating_sub(1) {
        segments[i].1 = segments[i + 1].0;
    }

    let case_path = if test.case.is_empty() {
        None
    } else {
        Some(format!("{}/{}", test.func, sanitize_case(&test.case)))
    };
    let mut outcomes = Vec::new();
    for (run_index, &(start, end)) in segments.iter().enumerate() {
        let segment = &lines[start..end];
        let mut func_block = None;
        let mut case_block = None;
        for line in segment {
            if let Some(b) = parse_block_line(line) {
                if b.indent == 0 && b.path == test.func {
                    func_block = Some((b.verdict, b.duration));
                } else if case_path.as_deref() == Some(b.path) {
                    case_block = Some((b.verdict, b.duration));
                }
            }
        }
        let Some((verdict, duration)) = case_block.or(func_block) else {
            continue;
        };
        outcomes.push(RunOutcome {
            test: test.clone(),
            run_index: run_index as u32,
            verdict,
            raw_output: segment.join("\n"),
            duration,
        });
    }
    outcomes
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
    fn selector_shapes() {
        assert_eq!(target_dir("pkg/payments:unit"), "pkg/payments");
        assert_eq!(target_dir("calc"), "calc");
        let t = tid("calc:unit", "TestAdd", "negative numbers");
        assert_eq!(selector_for(&t, Scope::Target), "calc");
        assert_eq!(selector_for(&t, Scope::Case), "calc:TestAdd/negative_numbers");
        let plain = tid("calc", "TestAdd", "");
        assert_eq!(selector_for(&plain, Scope::Case), "calc:TestAdd");
    }

    #[test]
    fn outcome_parsing_handles_subtests_and_multiple_runs() {
        let stdout = "\
=== RUN   TestX
=== RUN   TestX/alpha
--- FAIL: TestX (0.01s)
    --- FAIL: TestX/alpha (0.01s)
        x_test.go:9: boom
=== RUN   TestX
=== RUN   TestX/alpha
--- PASS: TestX (0.00s)
    --- PASS: TestX/alpha (0.00s)
FAIL
FAIL\tpkg\t0.010s
";
        let t = tid("pkg", "TestX", "alpha");
        let outs = parse_outcomes(stdout, &t);
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[0].verdict, Verdict::Fail);
        assert!(outs[0].raw_output.contains("x_test.go:9: boom"));
        assert_eq!(outs[1].verdict, Verdict::Pass);
        assert_eq!(outs[1].run_index, 1);
    }

    #[test]
    fn outcome_parsing_filters_other_tests_at_target_scope() {
        let stdout = "\
=== RUN   TestA
--- PASS: TestA (0.00s)
=== RUN   TestB
--- FAIL: TestB (0.02s)
    b_test.go:4: nope
=== RUN   TestA
--- PASS: TestA (0.00s)
=== RUN   TestB
--- PASS: TestB (0.00s)
";
        let t = tid("pkg", "TestB", "");
        let outs = parse_outcomes(stdout, &t);
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[0].verdict, Verdict::Fail);
        assert_eq!(outs[0].duration, 0.02);
        assert_eq!(outs[1].verdict, Verdict::Pass);
    }

}
