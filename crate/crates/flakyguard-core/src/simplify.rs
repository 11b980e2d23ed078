//! Table-driven test reduction. Keeps only the targeted case, records
//! every change as a byte-offset edit so the transplanter can reason
//! about what moved, and neutralizes declarations orphaned by the
//! removals until the workspace compiles again.

use std::ops::Range;

use thiserror::Error;

use crate::adapter::{sanitize_case, AdapterError, DiagnosticKind, SubjectAdapter};
use crate::goparse::{self, parse_functions, parse_tree, FnKind};

/// Prefix for commented-out declarations; the original line follows verbatim.
pub const RESTORE_MARKER: &str = "// FLAKYGUARD-RESTORE ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditTag {
    Removal,
    Neutralize,
    Other,
}

/// One tracked change. `span` is interpreted against the pre-edit text,
/// so a batch of edits stays valid no matter the application order.
#[derive(Debug, Clone, PartialEq)]
pub struct Edit {
    pub span: Range<usize>,
    pub replacement: String,
    pub tag: EditTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplifiedTest {
    /// Original function text and its byte span within the source file.
    pub t_orig: String,
    pub fn_span: Range<usize>,
    pub t_simp: String,
    pub tracker: Vec<Edit>,
    pub target_case: String,
    /// Span of the case table within `t_orig`; None when the test did
    /// not match a recognized table pattern.
    pub table_span: Option<Range<usize>>,
    pub simplified: bool,
}

#[derive(Debug, Error)]
pub enum SimplifyError {
    #[error("test function `{0}` not found")]
    FunctionNotFound(String),
    #[error("case `{case}` not found in `{func}`")]
    CaseNotFound { func: String, case: String },
    #[error("edits overlap at byte {0}")]
    OverlappingEdits(usize),
    #[error("edit span {start}..{end} invalid for the source text")]
    SpanOutOfRange { start: usize, end: usize },
    #[error("neutralization diverged: {0}")]
    NeutralizationDiverged(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Parse(#[from] goparse::ParseError),
}

/// Applies non-overlapping edits whose spans all reference `source`'s
/// original byte offsets. Descending-order application preserves the
/// validity of the remaining offsets.
pub fn apply_edits(source: &str, edits: &[Edit]) -> Result<String, SimplifyError> {
    let mut ordered: Vec<&Edit> = edits.iter().collect();
    ordered.sort_by_key(|e| (e.span.start, e.span.end));
    for pair in ordered.windows(2) {
        if pair[1].span.start < pair[0].span.end {
            return Err(SimplifyError::OverlappingEdits(pair[1].span.start));
        }
    }
    for e in &ordered {
        let Range { start, end } = e.span;
        if start > end
            || end > source.len()
            || !source.is_char_boundary(start)
            || !source.is_char_boundary(end)
        {
            return Err(SimplifyError::SpanOutOfRange { start, end });
        }
    }
    let mut out = source.to_string();
    for e in ordered.iter().rev() {
        out.replace_range(e.span.clone(), &e.replacement);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableShape {
    /// Slice-of-cases literal iterated with a per-case subtest call.
    CaseSlice,
    /// A sequence of inline `Run("name", func(...){...})` statements.
    InlineRuns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseEntry {
    pub name: String,
    /// Span of the case's element node within the function text.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseTable {
    pub shape: TableShape,
    pub span: Range<usize>,
    pub cases: Vec<CaseEntry>,
}

const WRAP_PREFIX: &str = "package p\n\n";

/// Recognizes the case table inside a test function's text. Spans are
/// relative to `fn_text`.
pub fn find_case_table(fn_text: &str) -> Option<CaseTable> {
    let wrapped = format!("{WRAP_PREFIX}{fn_text}");
    let tree = parse_tree(&wrapped)?;
    let root = tree.root_node();
    let mut cursor = root.walk();
    let decl = root
        .named_children(&mut cursor)
        .find(|n| n.kind() == "function_declaration")?;
    let body = decl.child_by_field_name("body")?;

    if let Some(table) = find_case_slice(body, &wrapped) {
        return Some(shift(table, WRAP_PREFIX.len()));
    }
    if let Some(table) = find_inline_runs(body, &wrapped) {
        return Some(shift(table, WRAP_PREFIX.len()));
    }
    None
}

fn shift(mut table: CaseTable, by: usize) -> CaseTable {
    table.span = table.span.start - by..table.span.end - by;
    for c in &mut table.cases {
        c.span = c.span.start - by..c.span.end - by;
    }
    table
}

fn node_text<'a>(node: tree_sitter::Node, src: &'a str) -> &'a str {
    &src[node.byte_range()]
}

fn first_string_literal(node: tree_sitter::Node, src: &str) -> Option<String> {
    let mut found = None;
    visit(node, &mut |n| {
        if found.is_none()
            && (n.kind() == "interpreted_string_literal" || n.kind() == "raw_string_literal")
        {
            let text = node_text(n, src);
            found = Some(text[1..text.len() - 1].to_string());
        }
    });
    found
}

fn visit<'t>(node: tree_sitter::Node<'t>, f: &mut impl FnMut(tree_sitter::Node<'t>)) {
    f(node);
    let mut cursor = node.walk();
    let children: Vec<tree_sitter::Node> = node.named_children(&mut cursor).collect();
    for child in children {
        visit(child, f);
    }
}

/// A `Run(...)` call whose receiver is anything (usually `t`); the case
/// name is the first string argument.
fn is_run_call(node: tree_sitter::Node, src: &str) -> bool {
    node.kind() == "call_expression"
        && node
            .child_by_field_name("function")
            .map(|f| f.kind() == "selector_expression" && node_text(f, src).ends_with(".Run"))
            .unwrap_or(false)
}

fn find_case_slice(body: tree_sitter::Node, src: &str) -> Option<CaseTable> {
    // Candidate tables: `name := []T{ {...}, {...} }` declarations.
    let mut candidates: Vec<(String, tree_sitter::Node)> = Vec::new();
    visit(body, &mut |n| {
        if n.kind() != "short_var_declaration" && n.kind() != "var_declaration" {
            return;
        }
        let text = node_text(n, src);
        let Some(eq) = text.find(":=").or_else(|| text.find('=')) else {
            return;
        };
        let name = text[..eq]
            .trim()
            .trim_start_matches("var ")
            .trim()
            .to_string();
        let mut lit = None;
        visit(n, &mut |m| {
            if lit.is_none()
                && m.kind() == "composite_literal"
                && m.child_by_field_name("type")
                    .map(|t| t.kind() == "slice_type")
                    .unwrap_or(false)
            {
                lit = Some(m);
            }
        });
        if let Some(lit) = lit {
            candidates.push((name, lit));
        }
    });

    for (var, lit) in candidates {
        if !ranged_with_run(body, src, &var) {
            continue;
        }
        let value = lit.child_by_field_name("body")?;
        let mut cases = Vec::new();
        let mut cursor = value.walk();
        for el in value.named_children(&mut cursor) {
            if el.kind() != "literal_element" && el.kind() != "keyed_element" {
                continue;
            }
            let Some(name) = first_string_literal(el, src) else {
                continue;
            };
            cases.push(CaseEntry {
                name,
                span: el.byte_range(),
            });
        }
        if !cases.is_empty() {
            return Some(CaseTable {
                shape: TableShape::CaseSlice,
                span: lit.byte_range(),
                cases,
            });
        }
    }
    None
}

fn ranged_with_run(body: tree_sitter::Node, src: &str, var: &str) -> bool {
    let mut hit = false;
    visit(body, &mut |n| {
        if hit || n.kind() != "for_statement" {
            return;
        }
        let ranges_var = n
            .named_children(&mut n.walk())
            .find(|c| c.kind() == "range_clause")
            .and_then(|rc| rc.child_by_field_name("right"))
            .map(|r| node_text(r, src) == var)
            .unwrap_or(false);
        if !ranges_var {
            return;
        }
        visit(n, &mut |m| {
            if is_run_call(m, src) {
                hit = true;
            }
        });
    });
    hit
}

fn find_inline_runs(body: tree_sitter::Node, src: &str) -> Option<CaseTable> {
    let mut cases = Vec::new();
    let mut cursor = body.walk();
    for stmt in body.named_children(&mut cursor) {
        if stmt.kind() != "expression_statement" {
            continue;
        }
        let call = stmt.named_child(0)?;
        if !is_run_call(call, src) {
            continue;
        }
        let Some(name) = first_string_literal(call, src) else {
            continue;
        };
        cases.push(CaseEntry {
            name,
            span: stmt.byte_range(),
        });
    }
    if cases.is_empty() {
        return None;
    }
    let span = cases.first().unwrap().span.start..cases.last().unwrap().span.end;
    Some(CaseTable {
        shape: TableShape::InlineRuns,
        span,
        cases,
    })
}

/// Matches the reproducer's case name against table entries: exact
/// first, then modulo the runner's space normalization, then unique
/// substring. Ambiguity counts as not found.
pub fn match_case<'t>(cases: &'t [CaseEntry], target: &str) -> Option<&'t CaseEntry> {
    if let Some(c) = cases.iter().find(|c| c.name == target) {
        return Some(c);
    }
    let want = sanitize_case(target);
    let normalized: Vec<&CaseEntry> = cases
        .iter()
        .filter(|c| sanitize_case(&c.name) == want)
        .collect();
    if normalized.len() == 1 {
        return Some(normalized[0]);
    }
    let substrings: Vec<&CaseEntry> = cases
        .iter()
        .filter(|c| c.name.contains(target) || target.contains(&c.name))
        .collect();
    if substrings.len() == 1 {
        return Some(substrings[0]);
    }
    None
}

/// Widens a case-element span to swallow its separator comma and, when
/// the removal leaves an all-whitespace line, the whole line.
fn removal_span(text: &str, span: &Range<usize>) -> Range<usize> {
    let bytes = text.as_bytes();
    let mut start = span.start;
    let mut end = span.end;

    let mut j = end;
    while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
        j += 1;
    }
    if j < bytes.len() && bytes[j] == b',' {
        end = j + 1;
    } else {
        let mut i = start;
        while i > 0 && (bytes[i - 1] == b' ' || bytes[i - 1] == b'\t') {
            i -= 1;
        }
        if i > 0 && bytes[i - 1] == b',' {
            start = i - 1;
        }
    }

    let mut ls = start;
    while ls > 0 && (bytes[ls - 1] == b' ' || bytes[ls - 1] == b'\t') {
        ls -= 1;
    }
    let lead_clean = ls == 0 || bytes[ls - 1] == b'\n';
    let mut le = end;
    while le < bytes.len() && (bytes[le] == b' ' || bytes[le] == b'\t') {
        le += 1;
    }
    let trail_clean = le >= bytes.len() || bytes[le] == b'\n';
    if lead_clean && trail_clean {
        start = ls;
        end = (le + 1).min(bytes.len());
    }
    start..end
}

/// Reduces `func` in `file_text` to only `case`. An unrecognized test
/// shape is not an error: the result comes back unsimplified and the
/// pipeline proceeds on the full test.
pub fn simplify_test(
    file_text: &str,
    path: &str,
    func: &str,
    case: &str,
) -> Result<SimplifiedTest, SimplifyError> {
    let functions = parse_functions(file_text, path)?;
    let f = functions
        .iter()
        .find(|f| f.kind == FnKind::Named && f.name == func)
        .ok_or_else(|| SimplifyError::FunctionNotFound(func.to_string()))?;
    let t_orig = f.source.clone();
    let fn_span = f.body_span.clone();

    let Some(table) = find_case_table(&t_orig) else {
        return Ok(SimplifiedTest {
            t_orig: t_orig.clone(),
            fn_span,
            t_simp: t_orig,
            tracker: Vec::new(),
            target_case: case.to_string(),
            table_span: None,
            simplified: false,
        });
    };
    let target = match_case(&table.cases, case).ok_or_else(|| SimplifyError::CaseNotFound {
        func: func.to_string(),
        case: case.to_string(),
    })?;
    let target_span = target.span.clone();
    let target_name = target.name.clone();

    let tracker: Vec<Edit> = table
        .cases
        .iter()
        .filter(|c| c.span != target_span)
        .map(|c| Edit {
            span: removal_span(&t_orig, &c.span),
            replacement: String::new(),
            tag: EditTag::Removal,
        })
        .collect();
    let t_simp = apply_edits(&t_orig, &tracker)?;
    debug_assert!(
        find_case_table(&t_simp)
            .map(|t| t.cases.len() == 1 && t.cases[0].name == target_name)
            .unwrap_or(false),
        "reduction must leave exactly the target case"
    );

    Ok(SimplifiedTest {
        t_orig,
        fn_span,
        t_simp,
        tracker,
        target_case: target_name,
        table_span: Some(table.span),
        simplified: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeutralizeReport {
    /// 1-based lines that got commented out (stable across iterations —
    /// the marker is a prefix, never a new line).
    pub neutralized_lines: Vec<u32>,
    pub iterations: u32,
}

/// Compile loop: comment out declarations the toolchain reports as
/// unused in `file_rel` until the workspace builds, annotating each for
/// later restoration. Bails if anything other than unused-variable
/// diagnostics in that file shows up.
pub fn neutralize_unused(
    adapter: &SubjectAdapter,
    file_rel: &str,
) -> Result<NeutralizeReport, SimplifyError> {
    let path = adapter.workspace().join(file_rel);
    let mut report = NeutralizeReport {
        neutralized_lines: Vec::new(),
        iterations: 0,
    };
    for _ in 0..10 {
        report.iterations += 1;
        let diags = adapter.compile()?;
        if diags.is_empty() {
            return Ok(report);
        }
        let foreign: Vec<String> = diags
            .iter()
            .filter(|d| d.kind != DiagnosticKind::UnusedVariable || d.file != file_rel)
            .map(|d| format!("{}:{}: {}", d.file, d.line, d.message))
            .collect();
        if !foreign.is_empty() {
            return Err(SimplifyError::NeutralizationDiverged(foreign.join("; ")));
        }

        let text = std::fs::read_to_string(&path)
            .map_err(|e| SimplifyError::NeutralizationDiverged(e.to_string()))?;
        let mut lines_to_comment: Vec<u32> = Vec::new();
        for d in &diags {
            match goparse::statement_at_line(&text, d.line) {
                Ok((_, span)) => {
                    let first = 1 + text[..span.start].matches('\n').count() as u32;
                    let last = 1 + text[..span.end].matches('\n').count() as u32;
                    lines_to_comment.extend(first..=last);
                }
                Err(_) => lines_to_comment.push(d.line),
            }
        }
        lines_to_comment.sort_unstable();
        lines_to_comment.dedup();

        let edits: Vec<Edit> = line_starts(&text)
            .into_iter()
            .enumerate()
            .filter(|(idx, _)| lines_to_comment.contains(&(*idx as u32 + 1)))
            .map(|(_, offset)| Edit {
                span: offset..offset,
                replacement: RESTORE_MARKER.to_string(),
                tag: EditTag::Neutralize,
            })
            .collect();
        if edits.is_empty() {
            return Err(SimplifyError::NeutralizationDiverged(
                "diagnostics resolved to no lines".to_string(),
            ));
        }
        let updated = apply_edits(&text, &edits)?;
        std::fs::write(&path, updated)
            .map_err(|e| SimplifyError::NeutralizationDiverged(e.to_string()))?;
        report.neutralized_lines.extend(lines_to_comment);
    }
    Err(SimplifyError::NeutralizationDiverged(
        "unused declarations remained after 10 iterations".to_string(),
    ))
}

fn line_starts(text: &str) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
    if starts.last() == Some(&text.len()) && !text.is_empty() {
        starts.pop();
    }
    starts
}

/// Undoes every neutralization annotation, byte-for-byte.
pub fn strip_markers(text: &str) -> String {
    text.lines()
        .map(|l| l.strip_prefix(RESTORE_MARKER).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
        + if text.ends_with('\n') { "\n" } else { "" }
}
