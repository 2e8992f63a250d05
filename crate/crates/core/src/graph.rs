//! Finite directed graphs with named vertices.
//!
//! Vertices are identified by string names at the boundary and by dense
//! [`VertexId`] indices internally. Names are sorted at construction time, so
//! `VertexId` order agrees with name order and every traversal that explores
//! neighbors in ascending id order is reproducible across runs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a vertex inside one graph. Ordered by vertex name.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VertexId(pub u32);

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ordered pair of endpoints. At most one edge per pair may exist in a graph.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Edge {
    pub from: VertexId,
    pub to: VertexId,
}

impl Edge {
    pub fn new(from: VertexId, to: VertexId) -> Self {
        Edge { from, to }
    }

    /// The same edge traversed backwards.
    pub fn reversed(self) -> Self {
        Edge {
            from: self.to,
            to: self.from,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("vertex set is empty")]
    EmptyVertexSet,
    #[error("duplicate vertex {0:?}")]
    DuplicateVertex(String),
    #[error("duplicate edge {0}")]
    DuplicateEdge(String),
    #[error("unknown vertex {0:?}")]
    UnknownVertex(String),
    #[error("invalid graph JSON: {0}")]
    InvalidJson(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("not a path: {0}")]
    NotAPath(String),
    #[error("more than {0} simple cycles")]
    TooManyCycles(usize),
}

/// Immutable directed graph without multiple edges.
///
/// Out- and in-adjacency lists are kept sorted; all algorithms that walk them
/// inherit a canonical vertex order from that.
#[derive(Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    names: Vec<String>,
    edges: Vec<Edge>,
    out_adj: Vec<Vec<u32>>,
    in_adj: Vec<Vec<u32>>,
}

impl fmt::Debug for DirectedGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DirectedGraph({} vertices: ", self.names.len())?;
        let labels: Vec<String> = self.edges.iter().map(|&e| self.edge_name(e)).collect();
        write!(f, "{})", labels.join(", "))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSpec {
    vertices: Vec<String>,
    edges: Vec<(String, String)>,
}

/// Builds a validated graph from vertex names and ordered name pairs.
///
/// Self-loops are allowed here; callers that cannot handle them (everything
/// downstream of environment reversal) must gate on [`DirectedGraph::has_self_loops`].
pub fn build_graph<S: AsRef<str>>(
    vertices: &[S],
    edges: &[(S, S)],
) -> Result<DirectedGraph, GraphError> {
    if vertices.is_empty() {
        return Err(GraphError::EmptyVertexSet);
    }
    let mut names: Vec<String> = vertices.iter().map(|s| s.as_ref().to_owned()).collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(GraphError::DuplicateVertex(w[0].clone()));
    }
    let lookup = |name: &str| -> Result<VertexId, GraphError> {
        names
            .binary_search_by(|n| n.as_str().cmp(name))
            .map(|i| VertexId(i as u32))
            .map_err(|_| GraphError::UnknownVertex(name.to_owned()))
    };
    let mut edge_list = Vec::with_capacity(edges.len());
    for (from, to) in edges {
        edge_list.push(Edge::new(lookup(from.as_ref())?, lookup(to.as_ref())?));
    }
    edge_list.sort();
    if let Some(w) = edge_list.windows(2).find(|w| w[0] == w[1]) {
        let label = format!("{}->{}", names[w[0].from.index()], names[w[0].to.index()]);
        return Err(GraphError::DuplicateEdge(label));
    }
    let mut out_adj = vec![Vec::new(); names.len()];
    let mut in_adj = vec![Vec::new(); names.len()];
    for (i, e) in edge_list.iter().enumerate() {
        out_adj[e.from.index()].push(i as u32);
        in_adj[e.to.index()].push(i as u32);
    }
    // edge_list is sorted by (from, to), so each out_adj row is already in
    // ascending target order; in_adj rows need a sort by source.
    for row in &mut in_adj {
        row.sort_by_key(|&i| edge_list[i as usize].from);
    }
    Ok(DirectedGraph {
        names,
        edges: edge_list,
        out_adj,
        in_adj,
    })
}

impl DirectedGraph {
    pub fn vertex_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.names.len() as u32).map(VertexId)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn name(&self, v: VertexId) -> &str {
        &self.names[v.index()]
    }

    pub fn vertex(&self, name: &str) -> Option<VertexId> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| VertexId(i as u32))
    }

    /// Like [`vertex`](Self::vertex) but with a typed error for unknown names.
    pub fn require_vertex(&self, name: &str) -> Result<VertexId, GraphError> {
        self.vertex(name)
            .ok_or_else(|| GraphError::UnknownVertex(name.to_owned()))
    }

    pub fn has_edge(&self, from: VertexId, to: VertexId) -> bool {
        self.edge_index(Edge::new(from, to)).is_some()
    }

    /// Position of `e` in the canonical (sorted) edge list.
    pub fn edge_index(&self, e: Edge) -> Option<usize> {
        self.edges.binary_search(&e).ok()
    }

    /// Edges leaving `v`, ascending by target.
    pub fn out_edges(&self, v: VertexId) -> impl Iterator<Item = Edge> + '_ {
        self.out_adj[v.index()].iter().map(|&i| self.edges[i as usize])
    }

    /// Edges entering `v`, ascending by source.
    pub fn in_edges(&self, v: VertexId) -> impl Iterator<Item = Edge> + '_ {
        self.in_adj[v.index()].iter().map(|&i| self.edges[i as usize])
    }

    pub fn out_degree(&self, v: VertexId) -> usize {
        self.out_adj[v.index()].len()
    }

    pub fn in_degree(&self, v: VertexId) -> usize {
        self.in_adj[v.index()].len()
    }

    pub fn out_neighbors(&self, v: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.out_edges(v).map(|e| e.to)
    }

    pub fn in_neighbors(&self, v: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.in_edges(v).map(|e| e.from)
    }

    pub fn has_self_loops(&self) -> bool {
        self.edges.iter().any(|e| e.from == e.to)
    }

    /// Canonical `"from->to"` label used in reports and flow keys.
    pub fn edge_name(&self, e: Edge) -> String {
        format!("{}->{}", self.name(e.from), self.name(e.to))
    }

    /// Parses a `"from->to"` label produced by [`edge_name`](Self::edge_name).
    pub fn parse_edge_name(&self, label: &str) -> Result<Edge, GraphError> {
        let (from, to) = label
            .split_once("->")
            .ok_or_else(|| GraphError::InvalidJson(format!("bad edge label {label:?}")))?;
        let e = Edge::new(self.require_vertex(from)?, self.require_vertex(to)?);
        if self.edge_index(e).is_none() {
            return Err(GraphError::UnknownVertex(format!(
                "edge {label:?} not in graph"
            )));
        }
        Ok(e)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let spec: GraphSpec =
            serde_json::from_str(text).map_err(|e| GraphError::InvalidJson(e.to_string()))?;
        build_graph(&spec.vertices, &spec.edges)
    }

    pub fn to_json(&self) -> String {
        let spec = GraphSpec {
            vertices: self.names.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| (self.name(e.from).to_owned(), self.name(e.to).to_owned()))
                .collect(),
        };
        serde_json::to_string_pretty(&spec).expect("graph spec serializes")
    }
}

/// Same vertices, every edge flipped. Involutive.
pub fn reverse_graph(g: &DirectedGraph) -> DirectedGraph {
    let pairs: Vec<(String, String)> = g
        .edges
        .iter()
        .map(|e| (g.name(e.to).to_owned(), g.name(e.from).to_owned()))
        .collect();
    build_graph(&g.names, &pairs).expect("reversal preserves validity")
}

/// Breadth-first reachability restricted to `alive` vertices.
fn reachable_masked(g: &DirectedGraph, alive: &[bool], start: VertexId, forward: bool) -> Vec<bool> {
    let mut seen = vec![false; g.vertex_count()];
    if !alive[start.index()] {
        return seen;
    }
    seen[start.index()] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let next: Vec<VertexId> = if forward {
            g.out_neighbors(v).collect()
        } else {
            g.in_neighbors(v).collect()
        };
        for w in next {
            if alive[w.index()] && !seen[w.index()] {
                seen[w.index()] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Strong connectivity of the subgraph induced by `alive`. Empty and
/// single-vertex subgraphs count as strongly connected.
pub(crate) fn strongly_connected_masked(g: &DirectedGraph, alive: &[bool]) -> bool {
    let live: Vec<VertexId> = g.vertices().filter(|v| alive[v.index()]).collect();
    if live.len() <= 1 {
        return true;
    }
    let start = live[0];
    let fwd = reachable_masked(g, alive, start, true);
    let bwd = reachable_masked(g, alive, start, false);
    live.iter().all(|v| fwd[v.index()] && bwd[v.index()])
}

/// True iff every ordered vertex pair is joined by a directed path.
pub fn is_strongly_connected(g: &DirectedGraph) -> bool {
    strongly_connected_masked(g, &vec![true; g.vertex_count()])
}

/// True iff the graph is strongly connected and stays so after deleting any
/// single vertex together with its edges.
pub fn is_two_connected(g: &DirectedGraph) -> bool {
    if !is_strongly_connected(g) {
        return false;
    }
    let mut alive = vec![true; g.vertex_count()];
    for v in 0..g.vertex_count() {
        alive[v] = false;
        if !strongly_connected_masked(g, &alive) {
            return false;
        }
        alive[v] = true;
    }
    true
}

/// Nonempty vertex sequence whose consecutive pairs are edges of one graph.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Path {
    vertices: Vec<VertexId>,
}

impl Path {
    pub fn new(g: &DirectedGraph, vertices: Vec<VertexId>) -> Result<Self, GraphError> {
        if vertices.is_empty() {
            return Err(GraphError::NotAPath("empty vertex sequence".into()));
        }
        for w in vertices.windows(2) {
            if !g.has_edge(w[0], w[1]) {
                return Err(GraphError::NotAPath(format!(
                    "missing edge {}->{}",
                    g.name(w[0]),
                    g.name(w[1])
                )));
            }
        }
        Ok(Path { vertices })
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn first(&self) -> VertexId {
        self.vertices[0]
    }

    pub fn last(&self) -> VertexId {
        *self.vertices.last().expect("path is nonempty")
    }

    /// Number of edges traversed; a single-vertex path has length 0.
    pub fn edge_count(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.vertices.windows(2).map(|w| Edge::new(w[0], w[1]))
    }

    /// No vertex visited twice.
    pub fn is_simple(&self) -> bool {
        let set: BTreeSet<VertexId> = self.vertices.iter().copied().collect();
        set.len() == self.vertices.len()
    }

    /// First vertex equals last, no other repetition, at least one edge.
    pub fn is_simple_cycle(&self) -> bool {
        if self.vertices.len() < 2 || self.first() != self.last() {
            return false;
        }
        let interior = &self.vertices[..self.vertices.len() - 1];
        let set: BTreeSet<VertexId> = interior.iter().copied().collect();
        set.len() == interior.len()
    }

    pub fn names(&self, g: &DirectedGraph) -> Vec<String> {
        self.vertices.iter().map(|&v| g.name(v).to_owned()).collect()
    }
}

/// A closed path that repeats only its endpoint.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SimpleCycle(Path);

impl SimpleCycle {
    pub fn new(g: &DirectedGraph, vertices: Vec<VertexId>) -> Result<Self, GraphError> {
        let path = Path::new(g, vertices)?;
        if !path.is_simple_cycle() {
            return Err(GraphError::NotAPath("not a simple cycle".into()));
        }
        Ok(SimpleCycle(path))
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.0.edges()
    }
}

/// Deterministic shortest path in the subgraph induced by `alive`, exploring
/// neighbors in ascending id order.
pub(crate) fn bfs_path_masked(
    g: &DirectedGraph,
    alive: &[bool],
    from: VertexId,
    to: VertexId,
) -> Option<Vec<VertexId>> {
    if !alive[from.index()] || !alive[to.index()] {
        return None;
    }
    if from == to {
        return Some(vec![from]);
    }
    let mut parent: Vec<Option<VertexId>> = vec![None; g.vertex_count()];
    let mut seen = vec![false; g.vertex_count()];
    seen[from.index()] = true;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        for w in g.out_neighbors(v).collect::<Vec<_>>() {
            if !alive[w.index()] || seen[w.index()] {
                continue;
            }
            seen[w.index()] = true;
            parent[w.index()] = Some(v);
            if w == to {
                let mut rev = vec![to];
                let mut cur = to;
                while let Some(p) = parent[cur.index()] {
                    rev.push(p);
                    cur = p;
                }
                rev.reverse();
                return Some(rev);
            }
            queue.push_back(w);
        }
    }
    None
}

/// Deterministic simple path found by depth-first search exploring neighbors
/// in descending id order. Used as an alternative canonical path choice when
/// re-verifying path-independent products; BFS and this tend to disagree on
/// any graph with enough room.
pub(crate) fn dfs_path_descending(
    g: &DirectedGraph,
    from: VertexId,
    to: VertexId,
) -> Option<Vec<VertexId>> {
    fn go(
        g: &DirectedGraph,
        v: VertexId,
        to: VertexId,
        on_path: &mut Vec<bool>,
        path: &mut Vec<VertexId>,
    ) -> bool {
        if v == to {
            return true;
        }
        let mut nbrs: Vec<VertexId> = g.out_neighbors(v).collect();
        nbrs.reverse();
        for w in nbrs {
            if on_path[w.index()] {
                continue;
            }
            on_path[w.index()] = true;
            path.push(w);
            if go(g, w, to, on_path, path) {
                return true;
            }
            path.pop();
            on_path[w.index()] = false;
        }
        false
    }
    let mut on_path = vec![false; g.vertex_count()];
    on_path[from.index()] = true;
    let mut path = vec![from];
    go(g, from, to, &mut on_path, &mut path).then_some(path)
}

/// Every simple directed cycle, reported once, rooted at its smallest vertex,
/// in deterministic order (root ascending, then depth-first with ascending
/// neighbors). Fails once more than `max_cycles` are found.
pub fn all_simple_cycles(
    g: &DirectedGraph,
    max_cycles: usize,
) -> Result<Vec<SimpleCycle>, GraphError> {
    fn descend(
        g: &DirectedGraph,
        root: VertexId,
        v: VertexId,
        stack: &mut Vec<VertexId>,
        on_path: &mut Vec<bool>,
        out: &mut Vec<SimpleCycle>,
        max_cycles: usize,
    ) -> Result<(), GraphError> {
        for w in g.out_neighbors(v).collect::<Vec<_>>() {
            if w == root {
                if out.len() == max_cycles {
                    return Err(GraphError::TooManyCycles(max_cycles));
                }
                let mut vertices = stack.clone();
                vertices.push(root);
                out.push(SimpleCycle::new(g, vertices).expect("stack is a simple cycle"));
            } else if w > root && !on_path[w.index()] {
                on_path[w.index()] = true;
                stack.push(w);
                descend(g, root, w, stack, on_path, out, max_cycles)?;
                stack.pop();
                on_path[w.index()] = false;
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; g.vertex_count()];
    for root in g.vertices() {
        on_path[root.index()] = true;
        let mut stack = vec![root];
        descend(g, root, root, &mut stack, &mut on_path, &mut out, max_cycles)?;
        on_path[root.index()] = false;
    }
    Ok(out)
}

/// State of the path-pair search: two disjoint trunks meeting at `meet`, plus
/// the shared tail from `meet` to the target. The three legs pairwise share
/// only `meet`.
struct Triple {
    trunk1: Vec<VertexId>,
    trunk2: Vec<VertexId>,
    tail: Vec<VertexId>,
}

/// Two simple paths from `x1` and `x2` to `y` whose vertex sets intersect
/// exactly in `{y}`.
///
/// Starts from canonical shortest paths; while they share more than the
/// target, a detour that avoids the current meeting point is spliced in,
/// strictly shortening the shared tail each round, so the loop terminates.
pub fn disjoint_paths_to_target(
    g: &DirectedGraph,
    x1: VertexId,
    x2: VertexId,
    y: VertexId,
) -> Result<(Path, Path), GraphError> {
    if x1 == x2 || x1 == y || x2 == y {
        return Err(GraphError::PreconditionViolated(
            "x1, x2, y must be pairwise distinct".into(),
        ));
    }
    if !is_two_connected(g) {
        return Err(GraphError::PreconditionViolated(
            "graph is not 2-connected".into(),
        ));
    }
    let all = vec![true; g.vertex_count()];
    let p1 = bfs_path_masked(g, &all, x1, y).expect("2-connected implies reachable");
    let p2 = bfs_path_masked(g, &all, x2, y).expect("2-connected implies reachable");

    let mut triple = initial_triple(p1, p2);
    while triple.tail.len() > 1 {
        shorten_tail(g, &mut triple);
    }
    // tail is the single vertex y; the trunks are the answer.
    debug_assert_eq!(triple.tail[0], y);
    let a = Path::new(g, triple.trunk1)?;
    let b = Path::new(g, triple.trunk2)?;
    debug_assert!(disjoint_paths_hold(&a, &b, x1, x2, y));
    Ok((a, b))
}

/// Truncates the two starting paths at their first shared vertex; everything
/// after it along the first path becomes the shared tail.
fn initial_triple(p1: Vec<VertexId>, p2: Vec<VertexId>) -> Triple {
    let on_p1: BTreeSet<VertexId> = p1.iter().copied().collect();
    let t2 = p2
        .iter()
        .position(|v| on_p1.contains(v))
        .expect("both paths end at the target");
    let t1 = p1
        .iter()
        .position(|&v| v == p2[t2])
        .expect("shared vertex lies on the first path");
    Triple {
        tail: p1[t1..].to_vec(),
        trunk1: p1[..=t1].to_vec(),
        trunk2: p2[..=t2].to_vec(),
    }
}

/// One shortening round: route a detour from one of the sources to the target
/// around the meeting point, then splice it into the triple. The meeting
/// point moves strictly closer to the target along the tail.
fn shorten_tail(g: &DirectedGraph, triple: &mut Triple) {
    let meet = triple.tail[0];
    let target = *triple.tail.last().expect("tail is nonempty");
    debug_assert_ne!(meet, target);

    // The detour starts at whichever source is not the meeting point itself.
    let source = if triple.trunk1[0] != meet {
        triple.trunk1[0]
    } else {
        triple.trunk2[0]
    };
    let mut alive = vec![true; g.vertex_count()];
    alive[meet.index()] = false;
    let detour = bfs_path_masked(g, &alive, source, target)
        .expect("2-connected graph stays connected after one deletion");

    let on_trunk1: BTreeSet<VertexId> = triple.trunk1.iter().copied().collect();
    let on_trunk2: BTreeSet<VertexId> = triple.trunk2.iter().copied().collect();
    let on_tail: BTreeSet<VertexId> = triple.tail.iter().copied().collect();

    // Last detour vertex still touching either trunk (the detour starts on
    // one of them), then its first tail contact strictly after that.
    let leave = detour
        .iter()
        .rposition(|v| on_trunk1.contains(v) || on_trunk2.contains(v))
        .expect("detour starts on a trunk");
    let join = (leave + 1..detour.len())
        .find(|&i| on_tail.contains(&detour[i]))
        .expect("detour ends at the target, which lies on the tail");

    let (stay, swap) = if on_trunk1.contains(&detour[leave]) {
        (&mut triple.trunk1, &mut triple.trunk2)
    } else {
        (&mut triple.trunk2, &mut triple.trunk1)
    };
    // Rebuilt trunk: old trunk up to the leave point, then the detour until
    // it joins the tail.
    let cut = stay
        .iter()
        .position(|&v| v == detour[leave])
        .expect("leave point lies on this trunk");
    stay.truncate(cut + 1);
    stay.extend_from_slice(&detour[leave + 1..=join]);

    // The other trunk absorbs the tail up to the new meeting point.
    let new_meet = detour[join];
    let absorb = triple
        .tail
        .iter()
        .position(|&v| v == new_meet)
        .expect("join point lies on the tail");
    debug_assert!(absorb >= 1, "detour avoids the old meeting point");
    swap.extend_from_slice(&triple.tail[1..=absorb]);
    triple.tail.drain(..absorb);
}

/// Postcondition predicate: simple paths, right endpoints, intersection {y}.
/// Kept independent of the construction so tests can call it as an oracle.
pub fn disjoint_paths_hold(a: &Path, b: &Path, x1: VertexId, x2: VertexId, y: VertexId) -> bool {
    if !a.is_simple() || !b.is_simple() {
        return false;
    }
    if a.first() != x1 || b.first() != x2 || a.last() != y || b.last() != y {
        return false;
    }
    let set_a: BTreeSet<VertexId> = a.vertices().iter().copied().collect();
    b.vertices()
        .iter()
        .filter(|v| set_a.contains(v))
        .all(|&v| v == y)
}
