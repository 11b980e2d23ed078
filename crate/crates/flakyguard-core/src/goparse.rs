//! Source-level analysis of subject code via tree-sitter.
//!
//! Everything downstream — instrumentation, graph node binding, test
//! simplification — keys functions by `(file, decl_line)`, so the parse
//! must be deterministic and the synthesized names for anonymous
//! functions stable: `<enclosing>$anon<N>` with N counting lexical order
//! from 1 within the innermost enclosing function.

use std::ops::Range;

use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at {file}:{line}:{col}")]
    Syntax { file: String, line: u32, col: u32 },
    #[error("parser failed to produce a tree for {0}")]
    NoTree(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnKind {
    Named,
    Method,
    Anonymous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectFunction {
    pub name: String,
    pub file: String,
    pub decl_line: u32,
    pub body_span: Range<usize>,
    pub source: String,
    pub kind: FnKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsyncLaunchSite {
    pub enclosing: String,
    pub callee_name: String,
    pub file: String,
    pub line: u32,
}

pub(crate) fn parse_tree(src: &str) -> Option<Tree> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_go::language())
        .expect("go grammar");
    parser.parse(src, None)
}

fn first_error(node: Node) -> Option<(u32, u32)> {
    if node.is_error() || node.is_missing() {
        let p = node.start_position();
        return Some((p.row as u32 + 1, p.column as u32 + 1));
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if child.has_error() {
            if let Some(hit) = first_error(child) {
                return Some(hit);
            }
        }
    }
    None
}

fn node_text<'a>(node: Node, src: &'a str) -> &'a str {
    &src[node.byte_range()]
}

fn receiver_type_name(recv: Node, src: &str) -> Option<String> {
    // parameter_list > parameter_declaration > type, unwrapping `*`.
    let mut cursor = recv.walk();
    for child in recv.named_children(&mut cursor) {
        if child.kind() == "parameter_declaration" {
            if let Some(ty) = child.child_by_field_name("type") {
                let inner = if ty.kind() == "pointer_type" {
                    ty.named_child(0).unwrap_or(ty)
                } else {
                    ty
                };
                return Some(node_text(inner, src).to_string());
            }
        }
    }
    None
}

/// Every named function, method, and anonymous function literal in the
/// file, ordered by start offset. Spans cover the whole declaration
/// (`func` keyword through closing brace), so sibling spans never
/// overlap and nested literals sit inside their enclosing function.
pub fn parse_functions(file_text: &str, path: &str) -> Result<Vec<SubjectFunction>, ParseError> {
    let tree = parse_tree(file_text).ok_or_else(|| ParseError::NoTree(path.to_string()))?;
    let root = tree.root_node();
    if root.has_error() {
        let (line, col) = first_error(root).unwrap_or((1, 1));
        return Err(ParseError::Syntax {
            file: path.to_string(),
            line,
            col,
        });
    }

    let mut out = Vec::new();
    let mut cursor = root.walk();
    for decl in root.named_children(&mut cursor) {
        match decl.kind() {
            "function_declaration" => {
                let name = decl
                    .child_by_field_name("name")
                    .map(|n| node_text(n, file_text).to_string())
                    .unwrap_or_default();
                push_function(&mut out, decl, name, FnKind::Named, file_text, path);
            }
            "method_declaration" => {
                let method = decl
                    .child_by_field_name("name")
                    .map(|n| node_text(n, file_text).to_string())
                    .unwrap_or_default();
                let recv = decl
                    .child_by_field_name("receiver")
                    .and_then(|r| receiver_type_name(r, file_text))
                    .unwrap_or_default();
                let name = if recv.is_empty() {
                    method
                } else {
                    format!("{recv}.{method}")
                };
                push_function(&mut out, decl, name, FnKind::Method, file_text, path);
            }
            _ => {}
        }
    }
    out.sort_by_key(|f| f.body_span.start);
    Ok(out)
}

fn push_function(
    out: &mut Vec<SubjectFunction>,
    node: Node,
    name: String,
    kind: FnKind,
    src: &str,
    path: &str,
) {
    out.push(SubjectFunction {
        name: name.clone(),
        file: path.to_string(),
        decl_line: node.start_position().row as u32 + 1,
        body_span: node.byte_range(),
        source: node_text(node, src).to_string(),
        kind,
    });
    // Literals directly inside this function get `<name>$anonN`; literals
    // inside those are numbered against the literal, recursively.
    let mut counter = 0u32;
    collect_literals(out, node, &name, &mut counter, src, path);
}

fn collect_literals(
    out: &mut Vec<SubjectFunction>,
    scope: Node,
    scope_name: &str,
    counter: &mut u32,
    src: &str,
    path: &str,
) {
    let mut cursor = scope.walk();
    let mut stack: Vec<Node> = scope.named_children(&mut cursor).collect();
    // Depth-first in source order: children pushed reversed so the
    // leftmost node pops first.
    stack.reverse();
    while let Some(node) = stack.pop() {
        if node.kind() == "func_literal" {
            *counter += 1;
            let name = format!("{scope_name}$anon{counter}");
            out.push(SubjectFunction {
                name: name.clone(),
                file: path.to_string(),
                decl_line: node.start_position().row as u32 + 1,
                body_span: node.byte_range(),
                source: node_text(node, src).to_string(),
                kind: FnKind::Anonymous,
            });
            let mut inner = 0u32;
            collect_literals(out, node, &name, &mut inner, src, path);
            continue;
        }
        let mut c = node.walk();
        let children: Vec<Node> = node.named_children(&mut c).collect();
        for child in children.into_iter().rev() {
            stack.push(child);
        }
    }
}

/// Asynchronous-launch statements whose innermost enclosing function is
/// `fn_`. Method-call targets resolve to the final selector segment;
/// launched literals get the same `$anonN` name `parse_functions` would
/// assign them.
pub fn find_async_launches(fn_: &SubjectFunction) -> Vec<AsyncLaunchSite> {
    // A bare literal is not a valid top-level declaration; anchor it.
    let (prefix, text) = match fn_.kind {
        FnKind::Anonymous => ("var _ = ", format!("var _ = {}", fn_.source)),
        _ => ("", fn_.source.clone()),
    };
    let tree = match parse_tree(&text) {
        Some(t) => t,
        None => return Vec::new(),
    };
    let root = tree.root_node();

    // The node standing in for fn_ itself: for anonymous functions the
    // first func_literal, otherwise the declaration node.
    let own = find_first(root, |n| {
        matches!(
            n.kind(),
            "function_declaration" | "method_declaration" | "func_literal"
        )
    });
    let own = match own {
        Some(n) => n,
        None => return Vec::new(),
    };

    let mut literal_index = 0u32;
    let mut sites = Vec::new();
    walk_launches(
        own,
        own,
        fn_,
        prefix.len(),
        &text,
        &mut literal_index,
        &mut sites,
    );
    sites
}

fn find_first<'t>(node: Node<'t>, pred: impl Fn(Node) -> bool + Copy) -> Option<Node<'t>> {
    if pred(node) {
        return Some(node);
    }
    let mut cursor = node.walk();
    let children: Vec<Node> = node.named_children(&mut cursor).collect();
    for child in children {
        if let Some(hit) = find_first(child, pred) {
            return Some(hit);
        }
    }
    None
}

fn walk_launches(
    node: Node,
    own: Node,
    fn_: &SubjectFunction,
    prefix_len: usize,
    text: &str,
    literal_index: &mut u32,
    sites: &mut Vec<AsyncLaunchSite>,
) {
    let mut cursor = node.walk();
    let children: Vec<Node> = node.named_children(&mut cursor).collect();
    for child in children {
        if child.kind() == "func_literal" && child.id() != own.id() {
            // Nested function: its launches belong to it, but keep the
            // lexical literal counter in sync for naming launched IIFEs.
            *literal_index += 1;
            continue;
        }
        if child.kind() == "go_statement" {
            if let Some(callee) = launch_callee(child, fn_, text, literal_index) {
                sites.push(AsyncLaunchSite {
                    enclosing: fn_.name.clone(),
                    callee_name: callee,
                    file: fn_.file.clone(),
                    line: fn_.decl_line + child.start_position().row as u32,
                });
            }
            // Arguments of the launch may still contain literals.
            let _ = prefix_len;
        }
        walk_launches(child, own, fn_, prefix_len, text, literal_index, sites);
    }
}

fn launch_callee(
    go_stmt: Node,
    fn_: &SubjectFunction,
    text: &str,
    literal_index: &mut u32,
) -> Option<String> {
    let call = find_first(go_stmt, |n| n.kind() == "call_expression")?;
    let mut target = call.child_by_field_name("function")?;
    while target.kind() == "parenthesized_expression" {
        target = target.named_child(0)?;
    }
    match target.kind() {
        "identifier" => Some(node_text(target, text).to_string()),
        "selector_expression" => target
            .child_by_field_name("field")
            .map(|f| node_text(f, text).to_string()),
        "func_literal" => {
            *literal_index += 1;
            Some(format!("{}$anon{}", fn_.name, literal_index))
        }
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum StatementError {
    #[error("no statement at line {0}")]
    NoStatementAtLine(u32),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

const STATEMENT_KINDS: &[&str] = &[
    "short_var_declaration",
    "var_declaration",
    "const_declaration",
    "assignment_statement",
    "expression_statement",
    "return_statement",
    "if_statement",
    "for_statement",
    "go_statement",
    "defer_statement",
    "send_statement",
    "inc_statement",
    "dec_statement",
    "select_statement",
    "break_statement",
    "continue_statement",
];

/// The smallest complete statement whose span covers the 1-based `line`.
/// Multi-line statements come back whole, with their byte span.
pub fn statement_at_line(
    file_text: &str,
    line: u32,
) -> Result<(String, Range<usize>), StatementError> {
    let tree = parse_tree(file_text).ok_or(ParseError::NoTree(String::new()))?;
    let row = line.saturating_sub(1) as usize;
    let mut best: Option<Node> = None;
    find_covering(tree.root_node(), row, &mut best);
    match best {
        Some(node) => Ok((
            node_text(node, file_text).to_string(),
            node.byte_range(),
        )),
        None => Err(StatementError::NoStatementAtLine(line)),
    }
}

fn find_covering<'t>(node: Node<'t>, row: usize, best: &mut Option<Node<'t>>) {
    if node.start_position().row > row || node.end_position().row < row {
        return;
    }
    if STATEMENT_KINDS.contains(&node.kind()) {
        let better = match best {
            Some(b) => node.byte_range().len() <= b.byte_range().len(),
            None => true,
        };
        if better {
            *best = Some(node);
        }
    }
    let mut cursor = node.walk();
    let children: Vec<Node> = node.named_children(&mut cursor).collect();
    for child in children {
        find_covering(child, row, best);
    }
}

/// Byte offset just after the `{` of the function's body block, plus
/// whether the block already has content on the brace line and whether
/// it is empty. Used by the instrumenter to inject without moving lines.
pub struct BodyProbe {
    pub insert_at: usize,
    pub same_line_content: bool,
    pub empty: bool,
}

pub fn probe_body(file_text: &str, fn_span: &Range<usize>) -> Option<BodyProbe> {
    let tree = parse_tree(file_text)?;
    let node = tree
        .root_node()
        .descendant_for_byte_range(fn_span.start, fn_span.end)?;
    let fn_node = if node.byte_range() == *fn_span {
        node
    } else {
        find_first(tree.root_node(), |n| n.byte_range() == *fn_span)?
    };
    let body = fn_node.child_by_field_name("body")?;
    let open = body.start_byte();
    let rest = &file_text[open + 1..body.end_byte()];
    let empty = body.named_child_count() == 0;
    let same_line_content = !rest.trim_start_matches([' ', '\t']).starts_with('\n');
    Some(BodyProbe {
        insert_at: open + 1,
        same_line_content,
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_FUNCS: &str = "package p\n\nfunc A() int {\n\treturn 1\n}\n\nfunc B() int {\n\treturn 2\n}\n";

    #[test]
    fn lists_top_level_functions_in_order() {
        let fns = parse_functions(TWO_FUNCS, "p/p.go").unwrap();
        let names: Vec<&str> = fns.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["A", "B"]);
        assert_eq!(fns[0].decl_line, 3);
        assert_eq!(fns[1].decl_line, 7);
        assert!(fns[0].body_span.end <= fns[1].body_span.start);
        assert_eq!(&TWO_FUNCS[fns[0].body_span.clone()], fns[0].source);
    }

    #[test]
    fn empty_file_yields_no_functions() {
        assert!(parse_functions("package p\n", "p.go").unwrap().is_empty());
    }

    #[test]
    fn anonymous_functions_get_lexical_names() {
        let src = "package p\n\nfunc Foo() {\n\tgo func() {\n\t\t_ = func() int { return 1 }\n\t}()\n\th := func() {}\n\t_ = h\n}\n";
        let fns = parse_functions(src, "p.go").unwrap();
        let names: Vec<&str> = fns.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["Foo", "Foo$anon1", "Foo$anon1$anon1", "Foo$anon2"]);
        assert_eq!(fns[1].kind, FnKind::Anonymous);
    }

    #[test]
    fn methods_are_qualified_by_receiver_type() {
        let src = "package p\n\ntype store struct{}\n\nfunc (s *store) UpdateInfo(name string) {\n\t_ = name\n}\n";
        let fns = parse_functions(src, "svc.go").unwrap();
        assert_eq!(fns[0].name, "store.UpdateInfo");
        assert_eq!(fns[0].kind, FnKind::Method);
        assert_eq!(fns[0].decl_line, 5);
    }

    #[test]
    fn syntax_errors_are_located() {
        let err = parse_functions("package p\n\nfunc Bad( {\n}\n", "bad.go").unwrap_err();
        match err {
            ParseError::Syntax { file, line, .. } => {
                assert_eq!(file, "bad.go");
                assert!(line >= 3);
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_functions(TWO_FUNCS, "p.go").unwrap();
        let b = parse_functions(TWO_FUNCS, "p.go").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn finds_plain_async_launch() {
        let src = "package p\n\nfunc A() {\n\tgo B()\n}\n\nfunc B() {}\n";
        let fns = parse_functions(src, "p.go").unwrap();
        let sites = find_async_launches(&fns[0]);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].callee_name, "B");
        assert_eq!(sites[0].enclosing, "A");
        assert_eq!(sites[0].line, 4);
    }

    #[test]
    fn method_launch_uses_final_selector_segment() {
        let src = "package p\n\nfunc (c *controller) ValidateIdentity(ctx string, data int) {\n\tgo c.db.UpdateInfo(ctx, data)\n}\n";
        let fns = parse_functions(src, "svc.go").unwrap();
        let sites = find_async_launches(&fns[0]);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].callee_name, "UpdateInfo");
    }

    #[test]
    fn no_launches_means_empty_list() {
        let fns = parse_functions(TWO_FUNCS, "p.go").unwrap();
        assert!(find_async_launches(&fns[0]).is_empty());
    }

    #[test]
    fn launch_inside_nested_literal_belongs_to_the_literal() {
        let src = "package p\n\nfunc Outer() {\n\tf := func() {\n\t\tgo Work()\n\t}\n\tf()\n}\n\nfunc Work() {}\n";
        let fns = parse_functions(src, "p.go").unwrap();
        let outer = fns.iter().find(|f| f.name == "Outer").unwrap();
        assert!(find_async_launches(outer).is_empty());
        let lit = fns.iter().find(|f| f.name == "Outer$anon1").unwrap();
        let sites = find_async_launches(lit);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].callee_name, "Work");
        assert_eq!(sites[0].enclosing, "Outer$anon1");
        assert_eq!(sites[0].line, 5);
    }

    #[test]
    fn launched_literal_gets_anon_name() {
        let src = "package p\n\nfunc A() {\n\tgo func() {\n\t\twork()\n\t}()\n}\n\nfunc work() {}\n";
        let fns = parse_functions(src, "p.go").unwrap();
        let sites = find_async_launches(&fns[0]);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].callee_name, "A$anon1");
    }

    #[test]
    fn statement_extraction_returns_single_line() {
        let src = "package p\n\nfunc T() {\n\tassert.NoError(t, err)\n}\n";
        let (stmt, _) = statement_at_line(src, 4).unwrap();
        assert_eq!(stmt, "assert.NoError(t, err)");
    }

    #[test]
    fn statement_extraction_returns_multiline_whole() {
        let src = "package p\n\nfunc T() {\n\tresult := compute(\n\t\t1,\n\t\t2)\n\t_ = result\n}\n";
        let (stmt, _) = statement_at_line(src, 5).unwrap();
        assert_eq!(stmt, "result := compute(\n\t\t1,\n\t\t2)");
    }

    #[test]
    fn blank_line_has_no_statement() {
        let src = "package p\n\nfunc T() {\n\n\t_ = 1\n}\n";
        assert!(matches!(
            statement_at_line(src, 4),
            Err(StatementError::NoStatementAtLine(4))
        ));
    }
}
