//! Dynamic call graph: parsed edge logs bound to AST functions, with
//! name-inferred edges for asynchronous launches.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::goparse::{self, find_async_launches, parse_functions, SubjectFunction};

/// Graph nodes are function declarations keyed by where they live.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub file: String,
    pub line: u32,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Runtime,
    AsyncInferred,
}

/// `caller = None` is the root sentinel: entries with no user-code frame
/// above them (test entry points, goroutine bodies).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallEdge {
    pub caller: Option<NodeId>,
    pub callee: NodeId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEdge {
    pub callee_file: String,
    pub callee_line: u32,
    pub callee_name: String,
    /// None when the log carried the `-, 0, -` sentinel.
    pub caller: Option<(String, u32, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLog {
    pub edges: Vec<RawEdge>,
    pub malformed: u32,
    pub recorder_errors: u32,
}

#[derive(Debug, Error)]
pub enum DcgError {
    #[error("malformed edge record at line {line_no}: {content}")]
    MalformedLine { line_no: usize, content: String },
    #[error("edge record references no known declaration: {record} ({file}:{line})")]
    UnresolvedNode {
        file: String,
        line: u32,
        record: String,
    },
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Parse(#[from] goparse::ParseError),
}

fn split_triplet(s: &str) -> Option<(String, u32, String)> {
    let mut parts = s.splitn(3, ", ");
    let file = parts.next()?.to_string();
    let line: u32 = parts.next()?.parse().ok()?;
    let name = parts.next()?.to_string();
    if file.is_empty() || name.is_empty() || name.contains(',') {
        return None;
    }
    Some((file, line, name))
}

fn parse_line(line: &str) -> Option<RawEdge> {
    let rest = line.strip_prefix("MethodEntry: ")?;
    let (callee_part, caller_part) = rest.split_once(" Caller: ")?;
    let (callee_file, callee_line, callee_name) = split_triplet(callee_part)?;
    let caller = if caller_part == "-, 0, -" {
        None
    } else {
        Some(split_triplet(caller_part)?)
    };
    Some(RawEdge {
        callee_file,
        callee_line,
        callee_name,
        caller,
    })
}

/// One raw edge per record, in order. `RECORDER-ERROR` lines are counted
/// and skipped. Anything else malformed aborts in strict mode and is
/// counted in lenient mode.
pub fn parse_log(text: &str, strict: bool) -> Result<ParsedLog, DcgError> {
    let mut out = ParsedLog::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if line == "RECORDER-ERROR" {
            out.recorder_errors += 1;
            continue;
        }
        match parse_line(line) {
            Some(edge) => out.edges.push(edge),
            None if strict => {
                return Err(DcgError::MalformedLine {
                    line_no: idx + 1,
                    content: line.to_string(),
                })
            }
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

/// Inverse of `parse_log` for valid edges; the round-trip is exact.
pub fn render_log(edges: &[RawEdge]) -> String {
    let mut out = String::new();
    for e in edges {
        out.push_str("MethodEntry: ");
        out.push_str(&format!("{}, {}, {}", e.callee_file, e.callee_line, e.callee_name));
        out.push_str(" Caller: ");
        match &e.caller {
            Some((f, l, n)) => out.push_str(&format!("{f}, {l}, {n}")),
            None => out.push_str("-, 0, -"),
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct DynamicCallGraph {
    pub nodes: HashMap<NodeId, SubjectFunction>,
    /// Set semantics with deterministic first-appearance order — child
    /// candidate order downstream is the order edges entered the log.
    pub edges: Vec<CallEdge>,
    /// No incoming edge of either kind; test function first, then by
    /// first appearance in the log.
    pub roots: Vec<NodeId>,
}

impl DynamicCallGraph {
    pub fn children(&self, id: &NodeId) -> Vec<&NodeId> {
        self.edges
            .iter()
            .filter(|e| e.caller.as_ref() == Some(id))
            .map(|e| &e.callee)
            .collect()
    }

    fn has_edge(&self, edge: &CallEdge) -> bool {
        self.edges.contains(edge)
    }

    fn recompute_roots(&mut self, appearance: &[NodeId], test_func: Option<&str>) {
        let mut roots: Vec<NodeId> = appearance
            .iter()
            .filter(|id| {
                !self
                    .edges
                    .iter()
                    .any(|e| e.caller.is_some() && &e.callee == *id)
            })
            .cloned()
            .collect();
        if let Some(tf) = test_func {
            if let Some(pos) = roots.iter().position(|id| {
                self.nodes
                    .get(id)
                    .map(|f| f.name == tf)
                    .unwrap_or(false)
            }) {
                let tf_root = roots.remove(pos);
                roots.insert(0, tf_root);
            }
        }
        self.roots = roots;
    }
}

/// Parses each referenced file once and indexes declarations by line.
struct AstIndex<'w> {
    workspace: &'w Path,
    files: HashMap<String, HashMap<u32, SubjectFunction>>,
}

impl<'w> AstIndex<'w> {
    fn new(workspace: &'w Path) -> Self {
        AstIndex {
            workspace,
            files: HashMap::new(),
        }
    }

    fn resolve(
        &mut self,
        file: &str,
        line: u32,
        record: &RawEdge,
    ) -> Result<SubjectFunction, DcgError> {
        if !self.files.contains_key(file) {
            let text = std::fs::read_to_string(self.workspace.join(file)).map_err(|e| {
                DcgError::UnresolvedNode {
                    file: file.to_string(),
                    line,
                    record: format!("{record:?}: {e}"),
                }
            })?;
            let map = parse_functions(&text, file)?
                .into_iter()
                .map(|f| (f.decl_line, f))
                .collect();
            self.files.insert(file.to_string(), map);
        }
        self.files[file]
            .get(&line)
            .cloned()
            .ok_or_else(|| DcgError::UnresolvedNode {
                file: file.to_string(),
                line,
                record: format!("{record:?}"),
            })
    }
}

/// Binds raw edges to declarations parsed from the (pristine) workspace.
/// Nodes appear on first mention; duplicate edges collapse.
pub fn build_graph(
    raw: &[RawEdge],
    workspace: &Path,
    test_func: Option<&str>,
) -> Result<DynamicCallGraph, DcgError> {
    let mut index = AstIndex::new(workspace);
    let mut graph = DynamicCallGraph {
        nodes: HashMap::new(),
        edges: Vec::new(),
        roots: Vec::new(),
    };
    let mut appearance: Vec<NodeId> = Vec::new();
    let touch = |graph: &mut DynamicCallGraph,
                     appearance: &mut Vec<NodeId>,
                     index: &mut AstIndex,
                     file: &str,
                     line: u32,
                     record: &RawEdge|
     -> Result<NodeId, DcgError> {
        let id = NodeId {
            file: file.to_string(),
            line,
        };
        if !graph.nodes.contains_key(&id) {
            let f = index.resolve(file, line, record)?;
            graph.nodes.insert(id.clone(), f);
            appearance.push(id.clone());
        }
        Ok(id)
    };

    for r in raw {
        let callee = touch(
            &mut graph,
            &mut appearance,
            &mut index,
            &r.callee_file,
            r.callee_line,
            r,
        )?;
        let caller = match &r.caller {
            Some((f, l, _)) => Some(touch(&mut graph, &mut appearance, &mut index, f, *l, r)?),
            None => None,
        };
        let edge = CallEdge {
            caller,
            callee,
            kind: EdgeKind::Runtime,
        };
        if !graph.has_edge(&edge) {
            graph.edges.push(edge);
        }
    }
    graph.recompute_roots(&appearance, test_func);
    Ok(graph)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsyncAmbiguity {
    pub launcher: NodeId,
    pub callee_name: String,
    pub matches: usize,
}

/// Adds an async-inferred edge wherever a node's body launches a callee
/// whose name matches exactly one graph node. Ambiguous or unmatched
/// launches are reported, never guessed. Idempotent.
pub fn infer_async_edges(graph: &mut DynamicCallGraph, test_func: Option<&str>) -> Vec<AsyncAmbiguity> {
    let mut ambiguities = Vec::new();
    let appearance: Vec<NodeId> = {
        // Preserve current root ordering basis: first-appearance order is
        // edge order; fall back to sorted for isolated nodes.
        let mut seen = Vec::new();
        for e in &graph.edges {
            for id in std::iter::once(&e.callee).chain(e.caller.as_ref()) {
                if !seen.contains(id) {
                    seen.push(id.clone());
                }
            }
        }
        let mut rest: Vec<NodeId> = graph
            .nodes
            .keys()
            .filter(|id| !seen.contains(*id))
            .cloned()
            .collect();
        rest.sort();
        seen.extend(rest);
        seen
    };

    let snapshot: Vec<(NodeId, SubjectFunction)> = appearance
        .iter()
        .filter_map(|id| graph.nodes.get(id).map(|f| (id.clone(), f.clone())))
        .collect();
    for (launcher, f) in &snapshot {
        for site in find_async_launches(f) {
            let matches: Vec<NodeId> = snapshot
                .iter()
                .filter(|(_, g)| {
                    g.name == site.callee_name
                        || g.name.rsplit('.').next() == Some(site.callee_name.as_str())
                })
                .map(|(id, _)| id.clone())
                .collect();
            if matches.len() != 1 {
                ambiguities.push(AsyncAmbiguity {
                    launcher: launcher.clone(),
                    callee_name: site.callee_name.clone(),
                    matches: matches.len(),
                });
                continue;
            }
            let edge = CallEdge {
                caller: Some(launcher.clone()),
                callee: matches[0].clone(),
                kind: EdgeKind::AsyncInferred,
            };
            if !graph.has_edge(&edge) {
                graph.edges.push(edge);
            }
        }
    }
    graph.recompute_roots(&appearance, test_func);
    ambiguities
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    /// Longest acyclic root-to-leaf path, in edges.
    pub max_depth: usize,
}

pub fn graph_stats(graph: &DynamicCallGraph) -> GraphStats {
    fn deepest(
        graph: &DynamicCallGraph,
        id: &NodeId,
        on_path: &mut Vec<NodeId>,
    ) -> usize {
        let mut best = 0;
        for child in graph.children(id) {
            if on_path.contains(child) {
                continue;
            }
            on_path.push(child.clone());
            best = best.max(1 + deepest(graph, child, on_path));
            on_path.pop();
        }
        best
    }
    let max_depth = graph
        .roots
        .iter()
        .map(|r| deepest(graph, r, &mut vec![r.clone()]))
        .max()
        .unwrap_or(0);
    GraphStats {
        node_count: graph.nodes.len(),
        edge_count: graph.edges.len(),
        max_depth,
    }
}

/// DOT dump for the CLI: `name@file:line` labels, dashed async edges.
pub fn to_dot(graph: &DynamicCallGraph) -> String {
    let mut out = String::from("digraph dcg {\n");
    let mut ids: Vec<&NodeId> = graph.nodes.keys().collect();
    ids.sort();
    let label = |id: &NodeId| {
        let name = graph
            .nodes
            .get(id)
            .map(|f| f.name.as_str())
            .unwrap_or("?");
        format!("{name}@{id}")
    };
    for id in &ids {
        out.push_str(&format!("  \"{}\";\n", label(id)));
    }
    for e in &graph.edges {
        let from = match &e.caller {
            Some(c) => label(c),
            None => "ROOT".to_string(),
        };
        let style = match e.kind {
            EdgeKind::Runtime => "",
            EdgeKind::AsyncInferred => " [style=dashed]",
        };
        out.push_str(&format!("  \"{}\" -> \"{}\"{};\n", from, label(&e.callee), style));
    }
    out.push_str("}\n");
    out
}
