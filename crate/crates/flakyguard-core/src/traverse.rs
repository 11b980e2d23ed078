//! Context collection over the dynamic call graph: an oracle-guided
//! breadth-first walk that keeps at most k children per expanded node,
//! followed by a global filter capping kept context at F functions
//! beyond the always-included roots.
//!
//! The walk deviates from a plain BFS in one documented way: a visited
//! set stops any node already selected from being offered or enqueued
//! again, so traversal terminates on cyclic graphs and the oracle's
//! per-node budget is spent on new nodes only.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcg::{DynamicCallGraph, NodeId};
use crate::gateway::{complete, parse_selection, Backend};
use crate::goparse::SubjectFunction;
use crate::prompts;

/// Attempts per selection before the deterministic fallback kicks in:
/// one initial call plus this many retries.
const ORACLE_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Oracle picks at most k children per node.
    Guided,
    /// Every child is taken; the oracle is never consulted during the
    /// walk. Exists as a baseline for comparing against plain BFS.
    BfsAll,
}

#[derive(Debug, Clone)]
pub struct TraversalConfig {
    /// Maximum expansion depth; `None` leaves the walk unbounded.
    pub depth_limit: Option<u32>,
    /// Children the oracle may keep per expanded node.
    pub k: usize,
    /// Functions the global filter may keep beyond the roots.
    pub filter_cap: usize,
    pub strategy: Strategy,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        TraversalConfig {
            depth_limit: None,
            k: 3,
            filter_cap: 5,
            strategy: Strategy::Guided,
        }
    }
}

#[derive(Debug, Error)]
#[error("oracle selection failed: {0}")]
pub struct OracleError(pub String);

/// Chooses candidates by their 1-based index in a rendered list. The
/// rendered text already carries the failure evidence followed by the
/// numbered candidates, so implementations need no other inputs.
pub trait SelectionOracle {
    fn select_children(
        &mut self,
        parent: &SubjectFunction,
        rendered: &str,
        n_candidates: usize,
        cap: usize,
    ) -> Result<Vec<usize>, OracleError>;

    /// Post-traversal pass over everything selected so far.
    fn select_global(
        &mut self,
        rendered: &str,
        n_candidates: usize,
        cap: usize,
    ) -> Result<Vec<usize>, OracleError>;
}

/// Oracle backed by the completion gateway; selections are parsed and
/// clamped by `parse_selection`.
pub struct GatewayOracle<'a> {
    backend: &'a dyn Backend,
}

impl<'a> GatewayOracle<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        GatewayOracle { backend }
    }
}

impl SelectionOracle for GatewayOracle<'_> {
    fn select_children(
        &mut self,
        parent: &SubjectFunction,
        rendered: &str,
        n_candidates: usize,
        cap: usize,
    ) -> Result<Vec<usize>, OracleError> {
        let bundle = prompts::select_children(rendered, &parent.name, cap);
        let response =
            complete(&bundle, self.backend).map_err(|e| OracleError(e.to_string()))?;
        parse_selection(&response, n_candidates, cap).map_err(|e| OracleError(e.to_string()))
    }

    fn select_global(
        &mut self,
        rendered: &str,
        n_candidates: usize,
        cap: usize,
    ) -> Result<Vec<usize>, OracleError> {
        let bundle = prompts::filter_nodes(rendered, cap);
        let response =
            complete(&bundle, self.backend).map_err(|e| OracleError(e.to_string()))?;
        parse_selection(&response, n_candidates, cap).map_err(|e| OracleError(e.to_string()))
    }
}

/// A selection that fell back to the deterministic default after the
/// oracle failed its retry budget. `parent` is `None` when the global
/// filter was the one that fell back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleFallback {
    pub parent: Option<NodeId>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Traversal {
    /// Selected nodes in visitation order; starts with the roots.
    pub ordered: Vec<NodeId>,
    pub fallbacks: Vec<OracleFallback>,
}

#[derive(Debug, Clone)]
pub struct ContextBundle {
    /// Full traversal selection, for the record.
    pub ordered: Vec<NodeId>,
    /// Roots first, then the filtered picks in traversal order.
    pub final_nodes: Vec<NodeId>,
    /// Labeled source blocks for the final nodes.
    pub rendered: String,
    pub fallbacks: Vec<OracleFallback>,
}

#[derive(Debug, Error)]
pub enum TraverseError {
    #[error("call graph has no nodes")]
    EmptyGraph,
    #[error("call graph has no roots")]
    NoRoots,
}

/// Numbered candidate list shown to the oracle: failure evidence first,
/// then one entry per candidate with the head of its source.
pub fn render_candidates(children: &[&SubjectFunction], evidence: &str) -> String {
    let mut out = String::from(evidence.trim_end());
    out.push_str("\n\nCandidates:\n");
    for (i, f) in children.iter().enumerate() {
        out.push_str(&format!("\n{}. {} ({}:{})\n", i + 1, f.name, f.file, f.decl_line));
        for line in f.source.lines().take(5) {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
        if f.source.lines().count() > 5 {
            out.push_str("    ...\n");
        }
    }
    out
}

/// Labeled full-source blocks, one per node, in the order given.
pub fn render_nodes(graph: &DynamicCallGraph, nodes: &[NodeId]) -> String {
    let mut out = String::new();
    for id in nodes {
        let f = &graph.nodes[id];
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("=== {} ({}:{}) ===\n", f.name, f.file, f.decl_line));
        out.push_str(&f.source);
        if !f.source.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

/// Distinct in-range indices in response order, clamped to `cap`.
fn sanitize(indices: Vec<usize>, n: usize, cap: usize) -> Vec<usize> {
    let mut clean: Vec<usize> = Vec::new();
    for i in indices {
        if (1..=n).contains(&i) && !clean.contains(&i) {
            clean.push(i);
        }
    }
    clean.truncate(cap);
    clean
}

/// Runs one selection with the retry budget; `Err` carries the last
/// failure reason once the budget is spent. Empty or fully out-of-range
/// answers count as failures.
fn select_with_retry(
    mut call: impl FnMut() -> Result<Vec<usize>, OracleError>,
    n: usize,
    cap: usize,
) -> Result<Vec<usize>, String> {
    let mut last = String::new();
    for _ in 0..=ORACLE_RETRIES {
        match call() {
            Ok(raw) => {
                let clean = sanitize(raw, n, cap);
                if !clean.is_empty() {
                    return Ok(clean);
                }
                last = "selection empty after range check".to_string();
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

/// Breadth-first walk from the roots where the oracle keeps at most
/// `cfg.k` children per expanded node. Expansion stops at the depth
/// limit; nodes already selected are never offered again. Oracle
/// failures past the retry budget fall back to the first
/// `min(k, candidates)` children and are recorded.
pub fn collect_context(
    graph: &DynamicCallGraph,
    cfg: &TraversalConfig,
    oracle: &mut dyn SelectionOracle,
    evidence: &str,
) -> Result<Traversal, TraverseError> {
    if graph.nodes.is_empty() {
        return Err(TraverseError::EmptyGraph);
    }
    if graph.roots.is_empty() {
        return Err(TraverseError::NoRoots);
    }
    debug_assert!(cfg.k >= 1, "traversal requires k >= 1");

    let mut ordered: Vec<NodeId> = graph.roots.clone();
    let mut selected: HashSet<NodeId> = ordered.iter().cloned().collect();
    let mut queue: VecDeque<(NodeId, u32)> =
        ordered.iter().map(|id| (id.clone(), 0)).collect();
    let mut fallbacks = Vec::new();

    while let Some((node, depth)) = queue.pop_front() {
        if let Some(limit) = cfg.depth_limit {
            if depth >= limit {
                continue;
            }
        }
        let mut candidates: Vec<NodeId> = Vec::new();
        for child in graph.children(&node) {
            if !selected.contains(child) && !candidates.contains(child) {
                candidates.push(child.clone());
            }
        }
        if candidates.is_empty() {
            continue;
        }

        let picks = match cfg.strategy {
            Strategy::BfsAll => (1..=candidates.len()).collect(),
            Strategy::Guided => {
                let shown: Vec<&SubjectFunction> =
                    candidates.iter().map(|id| &graph.nodes[id]).collect();
                let rendered = render_candidates(&shown, evidence);
                let parent = &graph.nodes[&node];
                match select_with_retry(
                    || oracle.select_children(parent, &rendered, candidates.len(), cfg.k),
                    candidates.len(),
                    cfg.k,
                ) {
                    Ok(picks) => picks,
                    Err(reason) => {
                        fallbacks.push(OracleFallback {
                            parent: Some(node.clone()),
                            reason,
                        });
                        (1..=candidates.len().min(cfg.k)).collect()
                    }
                }
            }
        };
        for idx in picks {
            let child = candidates[idx - 1].clone();
            if selected.insert(child.clone()) {
                ordered.push(child.clone());
                queue.push_back((child, depth + 1));
            }
        }
    }
    Ok(Traversal { ordered, fallbacks })
}

/// Post-traversal filter: the oracle keeps at most `cfg.filter_cap`
/// non-root nodes; roots always survive. When the selection already
/// fits the cap the oracle is still consulted but cannot drop anything.
pub fn global_filter(
    traversal: &Traversal,
    graph: &DynamicCallGraph,
    cfg: &TraversalConfig,
    oracle: &mut dyn SelectionOracle,
    evidence: &str,
) -> ContextBundle {
    let root_set: HashSet<&NodeId> = graph.roots.iter().collect();
    let rest: Vec<NodeId> = traversal
        .ordered
        .iter()
        .filter(|id| !root_set.contains(id))
        .cloned()
        .collect();
    let mut fallbacks = traversal.fallbacks.clone();

    let picked: Vec<NodeId> = if cfg.filter_cap == 0 || rest.is_empty() {
        Vec::new()
    } else {
        let shown: Vec<&SubjectFunction> = rest.iter().map(|id| &graph.nodes[id]).collect();
        let rendered = render_candidates(&shown, evidence);
        let outcome = select_with_retry(
            || oracle.select_global(&rendered, rest.len(), cfg.filter_cap),
            rest.len(),
            cfg.filter_cap,
        );
        if let Err(reason) = &outcome {
            fallbacks.push(OracleFallback {
                parent: None,
                reason: reason.clone(),
            });
        }
        if rest.len() <= cfg.filter_cap {
            rest.clone()
        } else {
            match outcome {
                Ok(mut picks) => {
                    picks.sort_unstable();
                    picks.into_iter().map(|i| rest[i - 1].clone()).collect()
                }
                Err(_) => rest[..cfg.filter_cap].to_vec(),
            }
        }
    };

    let mut final_nodes = graph.roots.clone();
    final_nodes.extend(picked);
    let rendered = render_nodes(graph, &final_nodes);
    ContextBundle {
        ordered: traversal.ordered.clone(),
        final_nodes,
        rendered,
        fallbacks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goparse::FnKind;
    use std::collections::HashMap;

    use crate::dcg::{CallEdge, EdgeKind};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Just};
    use proptest::strategy::Strategy as PropStrategy;

    fn node(i: usize) -> NodeId {
        NodeId {
            file: "g.go".to_string(),
            line: (i + 1) as u32,
        }
    }

    fn function(name: &str, id: &NodeId) -> SubjectFunction {
        let source = format!("func {name}() {{\n\tstep()\n\tstep()\n}}");
        SubjectFunction {
            name: name.to_string(),
            file: id.file.clone(),
            decl_line: id.line,
            body_span: 0..source.len(),
            source,
            kind: FnKind::Named,
        }
    }

    /// Nodes named by index; edges in the order given, which fixes both
    /// candidate order and root order.
    fn make_graph(n: usize, edges: &[(usize, usize)]) -> DynamicCallGraph {
        let mut nodes = HashMap::new();
        for i in 0..n {
            let id = node(i);
            nodes.insert(id.clone(), function(&format!("F{i}"), &id));
        }
        let call_edges: Vec<CallEdge> = edges
            .iter()
            .map(|(a, b)| CallEdge {
                caller: Some(node(*a)),
                callee: node(*b),
                kind: EdgeKind::Runtime,
            })
            .collect();
        let callees: HashSet<usize> = edges.iter().map(|(_, b)| *b).collect();
        let roots: Vec<NodeId> = (0..n).filter(|i| !callees.contains(i)).map(node).collect();
        DynamicCallGraph {
            nodes,
            edges: call_edges,
            roots,
        }
    }

    struct ScriptedOracle {
        script: VecDeque<Result<Vec<usize>, &'static str>>,
        calls: usize,
    }

    impl ScriptedOracle {
        fn new(script: Vec<Result<Vec<usize>, &'static str>>) -> Self {
            ScriptedOracle {
                script: script.into(),
                calls: 0,
            }
        }

        fn next(&mut self) -> Result<Vec<usize>, OracleError> {
            self.calls += 1;
            match self.script.pop_front() {
                Some(Ok(v)) => Ok(v),
                Some(Err(msg)) => Err(OracleError(msg.to_string())),
                None => panic!("oracle consulted more often than scripted"),
            }
        }
    }

    impl SelectionOracle for ScriptedOracle {
        fn select_children(
            &mut self,
            _parent: &SubjectFunction,
            _rendered: &str,
            _n: usize,
            _cap: usize,
        ) -> Result<Vec<usize>, OracleError> {
            self.next()
        }

        fn select_global(
            &mut self,
            _rendered: &str,
            _n: usize,
            _cap: usize,
        ) -> Result<Vec<usize>, OracleError> {
            self.next()
        }
    }

    struct PanicOracle;

    impl SelectionOracle for PanicOracle {
        fn select_children(
            &mut self,
            _parent: &SubjectFunction,
            _rendered: &str,
            _n: usize,
            _cap: usize,
        ) -> Result<Vec<usize>, OracleError> {
            panic!("oracle must not be consulted");
        }

        fn select_global(
            &mut self,
            _rendered: &str,
            _n: usize,
            _cap: usize,
        ) -> Result<Vec<usize>, OracleError> {
            panic!("oracle must not be consulted");
        }
    }

    fn cfg(strategy: Strategy) -> TraversalConfig {
        TraversalConfig {
            strategy,
            ..TraversalConfig::default()
        }
    }

    /// Textbook BFS from the roots: visited marked at enqueue time,
    /// children in graph order.
    fn brute_force_bfs(graph: &DynamicCallGraph) -> Vec<NodeId> {
        let mut order = graph.roots.clone();
        let mut seen: HashSet<NodeId> = order.iter().cloned().collect();
        let mut queue: VecDeque<NodeId> = order.iter().cloned().collect();
        while let Some(n) = queue.pop_front() {
            for child in graph.children(&n) {
                if seen.insert(child.clone()) {
                    order.push(child.clone());
                    queue.push_back(child.clone());
                }
            }
        }
        order
    }

    #[test]
    fn depth_zero_selects_roots_only() {
        let graph = make_graph(3, &[(0, 1), (1, 2)]);
        let config = TraversalConfig {
            depth_limit: Some(0),
            ..cfg(Strategy::Guided)
        };
        let out = collect_context(&graph, &config, &mut PanicOracle, "ev").unwrap();
        assert_eq!(out.ordered, graph.roots);
        assert!(out.fallbacks.is_empty());
    }

    #[test]
    fn bfs_all_never_consults_and_matches_textbook_order() {
        let graph = make_graph(
            10,
            &[
                (0, 1),
                (0, 2),
                (1, 3),
                (2, 3),
                (2, 4),
                (3, 5),
                (4, 6),
                (5, 7),
                (5, 8),
                (6, 9),
            ],
        );
        let out = collect_context(&graph, &cfg(Strategy::BfsAll), &mut PanicOracle, "ev").unwrap();
        assert_eq!(out.ordered, brute_force_bfs(&graph));
        assert_eq!(out.ordered.len(), 10);
    }

    #[test]
    fn guided_walk_follows_oracle_down_a_chain() {
        // Chain 0->1->2->3->4 with a distractor child at every level.
        let graph = make_graph(
            9,
            &[
                (0, 1),
                (0, 5),
                (1, 2),
                (1, 6),
                (2, 3),
                (2, 7),
                (3, 4),
                (3, 8),
            ],
        );
        let mut oracle =
            ScriptedOracle::new(vec![Ok(vec![1]), Ok(vec![1]), Ok(vec![1]), Ok(vec![1])]);
        let out = collect_context(&graph, &cfg(Strategy::Guided), &mut oracle, "ev").unwrap();
        assert_eq!(
            out.ordered,
            vec![node(0), node(1), node(2), node(3), node(4)]
        );
        assert!(out.fallbacks.is_empty());

        // A depth-1 cutoff cannot reach the leaf the oracle was chasing.
        let shallow = TraversalConfig {
            depth_limit: Some(1),
            ..cfg(Strategy::Guided)
        };
        let mut oracle = ScriptedOracle::new(vec![Ok(vec![1])]);
        let out = collect_context(&graph, &shallow, &mut oracle, "ev").unwrap();
        assert_eq!(out.ordered, vec![node(0), node(1)]);
        assert!(!out.ordered.contains(&node(4)));
    }

    #[test]
    fn failed_oracle_retries_twice_then_falls_back_to_first_k() {
        let graph = make_graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let config = TraversalConfig {
            k: 2,
            ..cfg(Strategy::Guided)
        };
        let mut oracle = ScriptedOracle::new(vec![
            Ok(vec![9]),  // out of range, sanitizes to empty
            Ok(vec![]),   // empty
            Err("backend down"),
        ]);
        let out = collect_context(&graph, &config, &mut oracle, "ev").unwrap();
        assert_eq!(oracle.calls, 3);
        assert_eq!(out.ordered, vec![node(0), node(1), node(2)]);
        assert_eq!(
            out.fallbacks,
            vec![OracleFallback {
                parent: Some(node(0)),
                reason: "oracle selection failed: backend down".to_string(),
            }]
        );
    }

    #[test]
    fn cycle_terminates_and_visited_nodes_are_not_reoffered() {
        let graph = make_graph(2, &[(0, 1), (1, 0)]);
        // Node 0 is never a root (it has an incoming edge), so roots
        // would be empty; force one for the cyclic case.
        let mut graph = graph;
        graph.roots = vec![node(0)];
        let out = collect_context(&graph, &cfg(Strategy::BfsAll), &mut PanicOracle, "ev").unwrap();
        assert_eq!(out.ordered, vec![node(0), node(1)]);

        // Guided: expanding node 1 finds only already-selected children,
        // so the oracle hears about node 0's children and nothing else.
        let mut oracle = ScriptedOracle::new(vec![Ok(vec![1])]);
        let out = collect_context(&graph, &cfg(Strategy::Guided), &mut oracle, "ev").unwrap();
        assert_eq!(out.ordered, vec![node(0), node(1)]);
        assert_eq!(oracle.calls, 1);
    }

    #[test]
    fn oversized_and_duplicate_picks_are_clamped() {
        let graph = make_graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let config = TraversalConfig {
            k: 2,
            ..cfg(Strategy::Guided)
        };
        let mut oracle = ScriptedOracle::new(vec![Ok(vec![3, 3, 1, 2, 4])]);
        let out = collect_context(&graph, &config, &mut oracle, "ev").unwrap();
        assert_eq!(out.ordered, vec![node(0), node(3), node(1)]);
        assert!(out.fallbacks.is_empty());
    }

    #[test]
    fn empty_graph_and_rootless_graph_are_rejected() {
        let empty = DynamicCallGraph {
            nodes: HashMap::new(),
            edges: Vec::new(),
            roots: Vec::new(),
        };
        assert!(matches!(
            collect_context(&empty, &cfg(Strategy::BfsAll), &mut PanicOracle, "ev"),
            Err(TraverseError::EmptyGraph)
        ));

        let mut rootless = make_graph(2, &[(0, 1), (1, 0)]);
        rootless.roots.clear();
        assert!(matches!(
            collect_context(&rootless, &cfg(Strategy::BfsAll), &mut PanicOracle, "ev"),
            Err(TraverseError::NoRoots)
        ));
    }

    #[test]
    fn small_selection_is_kept_whole_but_oracle_still_consulted() {
        let graph = make_graph(3, &[(0, 1), (1, 2)]);
        let traversal = Traversal {
            ordered: vec![node(0), node(1), node(2)],
            fallbacks: Vec::new(),
        };
        let mut oracle = ScriptedOracle::new(vec![Ok(vec![1])]);
        let bundle = global_filter(&traversal, &graph, &cfg(Strategy::Guided), &mut oracle, "ev");
        assert_eq!(oracle.calls, 1);
        assert_eq!(bundle.final_nodes, vec![node(0), node(1), node(2)]);
        assert!(bundle.fallbacks.is_empty());
    }

    #[test]
    fn filter_shrinks_to_cap_in_traversal_order() {
        let graph = make_graph(
            9,
            &[
                (0, 1),
                (0, 2),
                (0, 3),
                (0, 4),
                (0, 5),
                (0, 6),
                (0, 7),
                (0, 8),
            ],
        );
        let traversal = Traversal {
            ordered: (0..9).map(node).collect(),
            fallbacks: Vec::new(),
        };
        let config = TraversalConfig {
            filter_cap: 3,
            ..cfg(Strategy::Guided)
        };
        let mut oracle = ScriptedOracle::new(vec![Ok(vec![7, 2, 5])]);
        let bundle = global_filter(&traversal, &graph, &config, &mut oracle, "ev");
        assert_eq!(
            bundle.final_nodes,
            vec![node(0), node(2), node(5), node(7)]
        );
        assert_eq!(bundle.ordered, traversal.ordered);
    }

    #[test]
    fn zero_cap_keeps_roots_without_consulting() {
        let graph = make_graph(3, &[(0, 1), (0, 2)]);
        let traversal = Traversal {
            ordered: vec![node(0), node(1), node(2)],
            fallbacks: Vec::new(),
        };
        let config = TraversalConfig {
            filter_cap: 0,
            ..cfg(Strategy::Guided)
        };
        let bundle = global_filter(&traversal, &graph, &config, &mut PanicOracle, "ev");
        assert_eq!(bundle.final_nodes, graph.roots);
        assert_eq!(bundle.rendered, render_nodes(&graph, &graph.roots));
    }

    #[test]
    fn filter_failure_keeps_first_cap_and_is_recorded() {
        let graph = make_graph(
            6,
            &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)],
        );
        let traversal = Traversal {
            ordered: (0..6).map(node).collect(),
            fallbacks: Vec::new(),
        };
        let config = TraversalConfig {
            filter_cap: 2,
            ..cfg(Strategy::Guided)
        };
        let mut oracle =
            ScriptedOracle::new(vec![Err("no"), Err("no"), Err("still no")]);
        let bundle = global_filter(&traversal, &graph, &config, &mut oracle, "ev");
        assert_eq!(bundle.final_nodes, vec![node(0), node(1), node(2)]);
        assert_eq!(
            bundle.fallbacks,
            vec![OracleFallback {
                parent: None,
                reason: "oracle selection failed: still no".to_string(),
            }]
        );
    }

    #[test]
    fn rendered_candidates_lead_with_evidence_and_number_entries() {
        let graph = make_graph(13, &[]);
        let shown: Vec<&SubjectFunction> =
            (1..13).map(|i| &graph.nodes[&node(i)]).collect();
        let text = render_candidates(&shown, "assert failed: want 3 got 2");
        assert!(text.starts_with("assert failed: want 3 got 2\n\nCandidates:\n"));
        for (i, f) in shown.iter().enumerate() {
            let header = format!("{}. {} (g.go:{})", i + 1, f.name, f.decl_line);
            assert!(text.contains(&header), "missing entry {header}");
        }
        // Four-line sources fit under the head limit whole.
        assert!(text.contains("    func F1() {\n"));
        assert!(text.contains("    }\n"));
        assert!(!text.contains("..."));
    }

    #[test]
    fn long_sources_are_cut_to_five_lines() {
        let id = node(0);
        let mut f = function("Big", &id);
        f.source = (0..9).map(|i| format!("line{i}\n")).collect();
        let text = render_candidates(&[&f], "ev");
        assert!(text.contains("    line4\n    ...\n"));
        assert!(!text.contains("line5"));
    }

    #[test]
    fn bundle_rendering_labels_full_sources() {
        let graph = make_graph(2, &[(0, 1)]);
        let rendered = render_nodes(&graph, &[node(0), node(1)]);
        let expected = "=== F0 (g.go:1) ===\nfunc F0() {\n\tstep()\n\tstep()\n}\n\n\
                        === F1 (g.go:2) ===\nfunc F1() {\n\tstep()\n\tstep()\n}\n";
        assert_eq!(rendered, expected);
    }

    /// Random DAG: edges only from lower to higher index, so roots are
    /// guaranteed and the graph is acyclic.
    fn dag_strategy() -> impl proptest::strategy::Strategy<Value = DynamicCallGraph> {
        (2usize..12)
            .prop_flat_map(|n| {
                let pairs: Vec<(usize, usize)> = (0..n)
                    .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
                    .collect();
                (
                    Just(n),
                    proptest::collection::vec(proptest::bool::ANY, pairs.len()),
                    Just(pairs),
                )
            })
            .prop_map(|(n, mask, pairs)| {
                let edges: Vec<(usize, usize)> = pairs
                    .into_iter()
                    .zip(mask)
                    .filter(|(_, keep)| *keep)
                    .map(|(pair, _)| pair)
                    .collect();
                make_graph(n, &edges)
            })
    }

    proptest! {
        #[test]
        fn bfs_all_equals_brute_force_on_random_dags(graph in dag_strategy()) {
            let out = collect_context(&graph, &cfg(Strategy::BfsAll), &mut PanicOracle, "ev").unwrap();
            prop_assert_eq!(out.ordered, brute_force_bfs(&graph));
        }

        #[test]
        fn guided_selection_is_connected_and_depth_bounded(
            graph in dag_strategy(),
            picks in proptest::collection::vec(proptest::collection::vec(1usize..6, 0..4), 0..40),
            depth in proptest::option::of(0u32..4),
        ) {
            struct LoopingOracle {
                script: Vec<Vec<usize>>,
                at: usize,
            }
            impl SelectionOracle for LoopingOracle {
                fn select_children(
                    &mut self,
                    _parent: &SubjectFunction,
                    _rendered: &str,
                    _n: usize,
                    _cap: usize,
                ) -> Result<Vec<usize>, OracleError> {
                    if self.script.is_empty() {
                        return Err(OracleError("script empty".into()));
                    }
                    let v = self.script[self.at % self.script.len()].clone();
                    self.at += 1;
                    Ok(v)
                }
                fn select_global(
                    &mut self,
                    _rendered: &str,
                    _n: usize,
                    _cap: usize,
                ) -> Result<Vec<usize>, OracleError> {
                    Err(OracleError("unused".into()))
                }
            }

            let config = TraversalConfig {
                depth_limit: depth,
                k: 2,
                ..cfg(Strategy::Guided)
            };
            let mut oracle = LoopingOracle { script: picks, at: 0 };
            let out = collect_context(&graph, &config, &mut oracle, "ev").unwrap();

            // Connectedness: every non-root pick has a selected parent.
            let chosen: HashSet<&NodeId> = out.ordered.iter().collect();
            for id in &out.ordered {
                if graph.roots.contains(id) {
                    continue;
                }
                let has_parent = graph.edges.iter().any(|e| {
                    e.callee == *id
                        && e.caller.as_ref().map(|c| chosen.contains(c)).unwrap_or(false)
                });
                prop_assert!(has_parent, "{id} selected without a selected caller");
            }

            // Depth bound: min BFS distance within the limit.
            if let Some(limit) = depth {
                let mut dist: HashMap<NodeId, u32> = graph
                    .roots
                    .iter()
                    .map(|r| (r.clone(), 0))
                    .collect();
                let mut queue: VecDeque<NodeId> = graph.roots.clone().into();
                while let Some(n) = queue.pop_front() {
                    let d = dist[&n];
                    for child in graph.children(&n) {
                        if !dist.contains_key(child) {
                            dist.insert(child.clone(), d + 1);
                            queue.push_back(child.clone());
                        }
                    }
                }
                for id in &out.ordered {
                    prop_assert!(dist[id] <= limit, "{id} beyond depth {limit}");
                }
            }
        }
    }
}
