//! Prompt construction. Each helper returns a finished PromptBundle so
//! callers never assemble prompt text ad hoc; keeping the wording here
//! makes transcript hashes stable across the codebase.

use crate::gateway::{PromptBundle, Purpose};
use crate::orchestrate::{RootCauseCategory, Thought, ThoughtHistory};
use crate::reproduce::{FailureRecord, TestId};

const EXTRACT_SYSTEM: &str = "You analyze raw test-runner output. Extract the failure details \
and answer with exactly three lines:\nMESSAGE: <one-line failure message>\nFILE: <source file the failing \
assertion or crash points at>\nLINE: <line number in that file>\nDo not add anything else.";

pub fn extraction(raw_output: &str) -> PromptBundle {
    let user = format!(
        "Test runner output of a failing run:\n\n{raw_output}\n\nExtract the failure message and its source location."
    );
    PromptBundle::new(EXTRACT_SYSTEM, user, Purpose::Extract)
}

/// Canonical text form of a reproduced failure; every downstream prompt
/// embeds this same rendering so the model sees one consistent story.
pub fn render_evidence(test: &TestId, failure: &FailureRecord) -> String {
    let mut out = format!(
        "Flaky test: {} (case \"{}\" of {})\nFailure message: {}\nFailing assertion at {}:{}:\n    {}\n",
        test.render(),
        test.case,
        test.func,
        failure.message,
        failure.assertion_file,
        failure.assertion_line,
        failure.assertion_stmt,
    );
    if !failure.stack_trace.is_empty() {
        out.push_str("Stack:\n");
        for line in failure.stack_trace.lines() {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

const SELECT_SYSTEM: &str = "You triage a flaky test by walking its dynamic call graph. \
Given the failure evidence and a numbered list of functions called by one node, pick the \
candidates most likely to explain the failure. Answer with the chosen numbers only, \
separated by commas. Never pick more than the stated limit.";

pub fn select_children(rendered: &str, parent_name: &str, k: usize) -> PromptBundle {
    let user = format!(
        "{rendered}\nThe candidates above are called by `{parent_name}`. Choose at most {k} of them by number."
    );
    PromptBundle::new(SELECT_SYSTEM, user, Purpose::Select)
}

const FILTER_SYSTEM: &str = "You trim collected context for a flaky-test repair prompt. \
From the numbered functions, keep the ones most useful for diagnosing and fixing the \
failure. Answer with the chosen numbers only, separated by commas. Never pick more than \
the stated limit.";

pub fn filter_nodes(rendered: &str, cap: usize) -> PromptBundle {
    let user = format!("{rendered}\nKeep at most {cap} of the candidates above, by number.");
    PromptBundle::new(FILTER_SYSTEM, user, Purpose::Filter)
}

const THOUGHT_SYSTEM: &str = "You are an expert in fixing flaky tests. Only make changes \
to the test code, never the production code. Study the failure and the collected context, \
then answer with exactly three labeled sections:\nCATEGORY: <one of the known categories, \
or a short new label>\nEXPLANATION: <why the test is flaky>\nPLAN: <how the test should \
be changed>";

fn render_thought(thought: &Thought, indent: &str) -> String {
    format!(
        "{indent}CATEGORY: {}\n{indent}EXPLANATION: {}\n{indent}PLAN: {}\n",
        thought.category.label(),
        thought.explanation,
        thought.plan,
    )
}

pub fn thought(evidence: &str, context: &str, history: &ThoughtHistory) -> PromptBundle {
    let mut user = format!(
        "{}\n\nCollected context:\n\n{}\n\nKnown flakiness categories:\n",
        evidence.trim_end(),
        context.trim_end(),
    );
    for (label, description) in RootCauseCategory::taxonomy() {
        user.push_str(&format!("- {label}: {description}\n"));
    }
    if !history.is_empty() {
        user.push_str("\nThoughts that already failed; avoid their strategies:\n");
        for (i, (failed, summaries)) in history.failed.iter().enumerate() {
            user.push_str(&format!("\n{}. ", i + 1));
            user.push_str(render_thought(failed, "   ").trim_start());
            if !summaries.is_empty() {
                user.push_str(&format!("   Outcome: {}\n", summaries.join("; ")));
            }
        }
    }
    user.push_str("\nGive your diagnosis now.");
    PromptBundle::new(THOUGHT_SYSTEM, user, Purpose::Thought)
}

const FIX_SYSTEM: &str = "You are an expert in fixing flaky tests. Only make changes to \
the test code, never the production code. Apply the given plan to the test function. \
Reply with the complete rewritten function in a single fenced code block and nothing \
else; keep the function name and signature unchanged.";

pub fn fix(
    evidence: &str,
    context: &str,
    thought: &Thought,
    func_name: &str,
    test_source: &str,
) -> PromptBundle {
    let user = format!(
        "{}\n\nCollected context:\n\n{}\n\nDiagnosis:\n{}\nTest function to rewrite:\n\n```go\n{}\n```\n\nRewrite `{func_name}` according to the plan.",
        evidence.trim_end(),
        context.trim_end(),
        render_thought(thought, ""),
        test_source.trim_end(),
    );
    PromptBundle::new(FIX_SYSTEM, user, Purpose::Fix)
}

const REPAIR_SYSTEM: &str = "You are an expert in fixing flaky tests. Your previous \
rewrite of a test function does not compile. Only make changes to the test code. Reply \
with the complete corrected function in a single fenced code block and nothing else.";

pub fn repair(original: &str, modified: &str, diagnostics: &str) -> PromptBundle {
    let user = format!(
        "Original function:\n\n```go\n{}\n```\n\nModified function (does not compile):\n\n```go\n{}\n```\n\nCompiler diagnostics:\n{}\n\nReturn the corrected function.",
        original.trim_end(),
        modified.trim_end(),
        diagnostics.trim_end(),
    );
    PromptBundle::new(REPAIR_SYSTEM, user, Purpose::Repair)
}
