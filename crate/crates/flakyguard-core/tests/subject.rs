//! Adapter and reproducer behavior against staged fixture workspaces.

use std::time::Duration;

use flakyguard_core::adapter::{
    parse_functions, AdapterError, DiagnosticKind, Scope, SubjectAdapter, Verdict,
};
use flakyguard_core::gateway::Purpose;
use flakyguard_core::goparse::StatementError;
use flakyguard_core::reproduce::{
    extract_failure_info, pick_primary, read_assertion_statement, reproduce, ReproduceError,
    TestId,
};
use flakyguard_testkit::{stage_fixture, subject_config, ScriptedBackend};

fn tid(target: &str, func: &str, case: &str) -> TestId {
    TestId {
        target: target.to_string(),
        func: func.to_string(),
        case: case.to_string(),
    }
}

const TIMEOUT: Duration = Duration::from_secs(60);

#[test]
fn pristine_fixture_compiles_clean() {
    let ws = stage_fixture("calc");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    assert_eq!(adapter.compile().unwrap(), Vec::new());
}

#[test]
fn unused_local_is_classified() {
    let ws = stage_fixture("calc");
    let path = ws.path().join("calc/calc.go");
    let src = std::fs::read_to_string(&path).unwrap();
    let src = src.replace(
        "func Add(a, b int) int {",
        "func Add(a, b int) int {\n\tleftover := 1",
    );
    std::fs::write(&path, src).unwrap();
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let diags = adapter.compile().unwrap();
    assert_eq!(diags.len(), 1);
    assert_eq!(diags[0].kind, DiagnosticKind::UnusedVariable);
    assert_eq!(diags[0].file, "calc/calc.go");
    assert!(diags[0].message.contains("leftover"));
}

#[test]
fn syntax_error_is_other() {
    let ws = stage_fixture("calc");
    let path = ws.path().join("calc/calc.go");
    let mut src = std::fs::read_to_string(&path).unwrap();
    src.push_str("\nfunc Broken( {\n");
    std::fs::write(&path, src).unwrap();
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let diags = adapter.compile().unwrap();
    assert!(!diags.is_empty());
    assert!(diags.iter().all(|d| d.kind == DiagnosticKind::Other));
}

#[test]
fn passing_fixture_yields_all_passes() {
    let ws = stage_fixture("calc");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("calc", "TestAdd", "both positive");
    let outs = adapter.run_test(&t, Scope::Case, 10, false, TIMEOUT).unwrap();
    assert_eq!(outs.len(), 10);
    assert!(outs.iter().all(|o| o.verdict == Verdict::Pass));
    assert_eq!(outs[3].run_index, 3);
}

#[test]
fn flaky_fixture_fails_within_hundred_runs() {
    let ws = stage_fixture("flaky5");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("maporder", "TestRegionRollup", "two regions");
    let outs = adapter.run_test(&t, Scope::Case, 100, true, TIMEOUT).unwrap();
    assert_eq!(outs.len(), 100);
    let fails = outs.iter().filter(|o| o.verdict == Verdict::Fail).count();
    assert!(fails >= 1, "expected at least one failure, saw {fails}");
    let failing = outs.iter().find(|o| o.verdict == Verdict::Fail).unwrap();
    assert!(!failing.raw_output.is_empty());
}

#[test]
fn interference_needs_target_scope() {
    let ws = stage_fixture("flaky5");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("envpoll", "TestDisplayWindow", "");
    let solo = adapter.run_test(&t, Scope::Case, 50, false, TIMEOUT).unwrap();
    assert!(solo.iter().all(|o| o.verdict == Verdict::Pass));
    let full = adapter.run_test(&t, Scope::Target, 50, false, TIMEOUT).unwrap();
    assert_eq!(full.len(), 50, "target scope filters to the selected test");
    assert!(full.iter().any(|o| o.verdict == Verdict::Fail));
}

#[test]
fn unbuildable_workspace_reports_build_error() {
    let ws = stage_fixture("calc");
    let path = ws.path().join("calc/calc.go");
    let mut src = std::fs::read_to_string(&path).unwrap();
    src.push_str("\nfunc Broken( {\n");
    std::fs::write(&path, src).unwrap();
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("calc", "TestAdd", "");
    let outs = adapter.run_test(&t, Scope::Case, 5, false, TIMEOUT).unwrap();
    assert_eq!(outs.len(), 1);
    assert_eq!(outs[0].verdict, Verdict::BuildError);
    assert!(!outs[0].raw_output.is_empty());
}

#[test]
fn missing_selector_is_an_error() {
    let ws = stage_fixture("calc");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("calc", "TestNoSuchThing", "");
    match adapter.run_test(&t, Scope::Case, 1, false, TIMEOUT) {
        Err(AdapterError::SelectorNotFound(sel)) => assert_eq!(sel, "calc:TestNoSuchThing"),
        other => panic!("expected SelectorNotFound, got {other:?}"),
    }
}

#[test]
fn missing_toolchain_is_reported() {
    let ws = stage_fixture("calc");
    let mut cfg = subject_config(7);
    cfg.build_cmd[0] = "/nonexistent/toolchain".to_string();
    let adapter = SubjectAdapter::new(ws.path(), cfg).unwrap();
    assert!(matches!(
        adapter.compile(),
        Err(AdapterError::ToolchainMissing(_))
    ));
}

#[test]
fn identical_seeds_give_identical_outcomes() {
    let ws = stage_fixture("flaky5");
    let t = tid("maporder", "TestRegionRollup", "two regions");
    let observe = |seed: u64| {
        let adapter = SubjectAdapter::new(ws.path(), subject_config(seed)).unwrap();
        adapter
            .run_test(&t, Scope::Case, 40, true, TIMEOUT)
            .unwrap()
            .iter()
            .map(|o| o.verdict)
            .collect::<Vec<_>>()
    };
    assert_eq!(observe(11), observe(11));
}

#[test]
fn parsed_functions_have_unique_decl_lines() {
    let ws = stage_fixture("flaky5");
    for entry in walkdir::WalkDir::new(ws.path()) {
        let entry = entry.unwrap();
        if entry.path().extension().map(|e| e == "go").unwrap_or(false) {
            let text = std::fs::read_to_string(entry.path()).unwrap();
            let fns = parse_functions(&text, &entry.path().to_string_lossy()).unwrap();
            let mut keys: Vec<(String, u32)> =
                fns.iter().map(|f| (f.file.clone(), f.decl_line)).collect();
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), fns.len(), "{:?}", entry.path());
        }
    }
}

#[test]
fn assertion_failure_extracts_without_fallback() {
    let ws = stage_fixture("flaky5");
    let raw = "=== RUN   TestRegionRollup\n=== RUN   TestRegionRollup/two_regions\n--- FAIL: TestRegionRollup (0.00s)\n    --- FAIL: TestRegionRollup/two_regions (0.00s)\n        rollup_test.go:22: Not equal: expected: [{eu 3} {us 5}] actual: [{us 5} {eu 3}]\n";
    let t = tid("maporder", "TestRegionRollup", "two regions");
    let rec = extract_failure_info(raw, ws.path(), &t, None).unwrap();
    assert!(rec.message.starts_with("Not equal"));
    assert_eq!(rec.assertion_file, "maporder/rollup_test.go");
    assert_eq!(rec.assertion_line, 22);
    assert_eq!(rec.test_func_file, "maporder/rollup_test.go");
    assert!(rec.assertion_stmt.contains("assert.Equal"));
    assert!(rec.stack_trace.is_empty());
}

#[test]
fn empty_output_fails_extraction() {
    let ws = stage_fixture("calc");
    let t = tid("calc", "TestAdd", "");
    assert!(matches!(
        extract_failure_info("", ws.path(), &t, None),
        Err(ReproduceError::ExtractionFailed)
    ));
}

#[test]
fn mock_verification_message_wins_over_site_prefix() {
    let ws = stage_fixture("calc");
    let raw = "--- FAIL: TestAdd (0.00s)\n    calc_test.go:20: Not all calls expected by the mock for UpdateInfo were made\n";
    let t = tid("calc", "TestAdd", "");
    let rec = extract_failure_info(raw, ws.path(), &t, None).unwrap();
    assert_eq!(
        rec.message,
        "Not all calls expected by the mock for UpdateInfo were made"
    );
    assert_eq!(rec.assertion_file, "calc/calc_test.go");
    assert_eq!(rec.assertion_line, 20);
    assert!(rec.stack_trace.is_empty());
}

#[test]
fn panic_extracts_frame_site_and_stack() {
    let ws = stage_fixture("calc");
    let raw = "--- FAIL: TestAdd (0.00s)\n    panic: runtime error: index out of range\n      Add (calc/calc.go:3) at line 4\n      TestAdd (calc/calc_test.go:9)\n";
    let t = tid("calc", "TestAdd", "");
    let rec = extract_failure_info(raw, ws.path(), &t, None).unwrap();
    assert_eq!(rec.message, "runtime error: index out of range");
    assert_eq!(rec.assertion_file, "calc/calc.go");
    assert_eq!(rec.assertion_line, 4);
    assert_eq!(rec.stack_trace.lines().count(), 2);
    assert!(rec.stack_trace.contains("Add (calc/calc.go:3)"));
}

#[test]
fn fallback_backend_rescues_odd_output() {
    let ws = stage_fixture("calc");
    let t = tid("calc", "TestAdd", "");
    let backend = ScriptedBackend::new().rule(
        Purpose::Extract,
        "exotic harness said",
        "MESSAGE: totals diverged\nFILE: calc_test.go\nLINE: 14",
    );
    let raw = "exotic harness said: totals diverged somewhere";
    let rec = extract_failure_info(raw, ws.path(), &t, Some(&backend)).unwrap();
    assert_eq!(rec.message, "totals diverged");
    assert_eq!(rec.assertion_file, "calc/calc_test.go");
    assert_eq!(rec.assertion_line, 14);
    assert_eq!(backend.calls().len(), 1);
}

#[test]
fn fallback_answers_are_validated_against_workspace() {
    let ws = stage_fixture("calc");
    let t = tid("calc", "TestAdd", "");
    let backend = ScriptedBackend::new().rule(
        Purpose::Extract,
        "",
        "MESSAGE: m\nFILE: no_such_file.go\nLINE: 3",
    );
    assert!(matches!(
        extract_failure_info("weird", ws.path(), &t, Some(&backend)),
        Err(ReproduceError::ExtractionFailed)
    ));
    let backend = ScriptedBackend::new().rule(
        Purpose::Extract,
        "",
        "MESSAGE: m\nFILE: calc_test.go\nLINE: 9999",
    );
    assert!(matches!(
        extract_failure_info("weird", ws.path(), &t, Some(&backend)),
        Err(ReproduceError::ExtractionFailed)
    ));
}

#[test]
fn statement_reading_returns_covering_statement() {
    let ws = stage_fixture("calc");
    let stmt = read_assertion_statement(ws.path(), "calc/calc_test.go", 20).unwrap();
    assert!(stmt.contains("assert.Equal"), "got {stmt}");
    assert!(matches!(
        read_assertion_statement(ws.path(), "calc/calc_test.go", 2),
        Err(StatementError::NoStatementAtLine(2))
    ));
}

#[test]
fn flaky_case_reproduces_at_case_scope() {
    let ws = stage_fixture("flaky5");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("maporder", "TestRegionRollup", "two regions");
    let report = reproduce(&adapter, &t, 60, true, TIMEOUT, None).unwrap();
    assert!(report.reproduced);
    assert_eq!(report.scope_used, Scope::Case);
    assert_eq!(report.attempted_runs, 60);
    assert!(!report.failures.is_empty());
    let primary = pick_primary(&report.failures).unwrap();
    assert_eq!(primary.assertion_file, "maporder/rollup_test.go");
}

#[test]
fn stable_test_does_not_reproduce() {
    let ws = stage_fixture("calc");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("calc", "TestAdd", "both positive");
    let report = reproduce(&adapter, &t, 30, true, TIMEOUT, None).unwrap();
    assert!(!report.reproduced);
    assert_eq!(report.scope_used, Scope::Target);
    assert!(report.failures.is_empty());
}

#[test]
fn interference_escalates_to_target_scope() {
    let ws = stage_fixture("flaky5");
    let adapter = SubjectAdapter::new(ws.path(), subject_config(7)).unwrap();
    let t = tid("envpoll", "TestDisplayWindow", "");
    let report = reproduce(&adapter, &t, 30, false, TIMEOUT, None).unwrap();
    assert!(report.reproduced);
    assert_eq!(report.scope_used, Scope::Target);
    let primary = pick_primary(&report.failures).unwrap();
    assert_eq!(primary.assertion_file, "envpoll/window_test.go");
}
