//! Nonnegative integer edge flows, their divergence, enumeration of
//! circulations up to a total budget, and greedy cycle decomposition.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{DirectedGraph, Edge, SimpleCycle, VertexId};

/// Output cap for [`enumerate_null_flows`]; guards against runaway budgets on
/// dense graphs.
pub const DEFAULT_FLOW_CAP: usize = 1_000_000;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("flow is not of null divergence: {0}")]
    NotNullDivergence(String),
    #[error("enumeration exceeds the cap of {cap} flows")]
    BudgetExceeded { cap: usize },
    #[error("invalid flow JSON: {0}")]
    InvalidJson(String),
}

/// Edge labeling by nonnegative integers. Only nonzero values are stored;
/// every absent edge implicitly carries 0.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Default)]
pub struct IntFlow {
    values: BTreeMap<Edge, u64>,
}

impl IntFlow {
    pub fn zero() -> Self {
        IntFlow::default()
    }

    /// Builds a flow, summing repeated edges and dropping zeros. Fails if an
    /// edge is not part of `g`.
    pub fn from_pairs(
        g: &DirectedGraph,
        pairs: impl IntoIterator<Item = (Edge, u64)>,
    ) -> Result<Self, FlowError> {
        let mut values = BTreeMap::new();
        for (e, k) in pairs {
            if g.edge_index(e).is_none() {
                return Err(FlowError::UnknownEdge(describe_edge(g, e)));
            }
            if k > 0 {
                *values.entry(e).or_insert(0) += k;
            }
        }
        Ok(IntFlow { values })
    }

    pub fn get(&self, e: Edge) -> u64 {
        self.values.get(&e).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.values.values().sum()
    }

    /// Edges with nonzero value, in canonical edge order.
    pub fn support(&self) -> impl Iterator<Item = (Edge, u64)> + '_ {
        self.values.iter().map(|(&e, &k)| (e, k))
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&self, other: &IntFlow) -> IntFlow {
        let mut values = self.values.clone();
        for (e, k) in other.support() {
            *values.entry(e).or_insert(0) += k;
        }
        IntFlow { values }
    }

    /// Unit flow along the edges of a simple cycle.
    pub fn cycle_indicator(g: &DirectedGraph, cycle: &SimpleCycle) -> Self {
        IntFlow::from_pairs(g, cycle.edges().map(|e| (e, 1)))
            .expect("cycle edges belong to the graph")
    }

    /// Parses `{"a->b": 2, ...}`; omitted edges mean 0.
    pub fn from_json(g: &DirectedGraph, text: &str) -> Result<Self, FlowError> {
        let raw: BTreeMap<String, u64> =
            serde_json::from_str(text).map_err(|e| FlowError::InvalidJson(e.to_string()))?;
        let mut values = BTreeMap::new();
        for (label, k) in raw {
            let e = g
                .parse_edge_name(&label)
                .map_err(|_| FlowError::UnknownEdge(label))?;
            if k > 0 {
                values.insert(e, k);
            }
        }
        Ok(IntFlow { values })
    }

    pub fn to_json(&self, g: &DirectedGraph) -> String {
        let raw: BTreeMap<String, u64> = self
            .support()
            .map(|(e, k)| (g.edge_name(e), k))
            .collect();
        serde_json::to_string(&raw).expect("flow map serializes")
    }
}

fn describe_edge(g: &DirectedGraph, e: Edge) -> String {
    let n = g.vertex_count();
    if e.from.index() < n && e.to.index() < n {
        g.edge_name(e)
    } else {
        format!("{:?}", e)
    }
}

/// Per-vertex out-minus-in sum. All-zero exactly when the flow is a
/// circulation.
pub fn divergence(
    g: &DirectedGraph,
    n: &IntFlow,
) -> Result<BTreeMap<VertexId, i64>, FlowError> {
    let mut div: BTreeMap<VertexId, i64> = g.vertices().map(|v| (v, 0)).collect();
    for (e, k) in n.support() {
        if g.edge_index(e).is_none() {
            return Err(FlowError::UnknownEdge(describe_edge(g, e)));
        }
        *div.get_mut(&e.from).expect("endpoint exists") += k as i64;
        *div.get_mut(&e.to).expect("endpoint exists") -= k as i64;
    }
    Ok(div)
}

/// An [`IntFlow`] that has been checked to have zero divergence everywhere.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct NullDivergenceFlow {
    flow: IntFlow,
}

impl NullDivergenceFlow {
    pub fn new(g: &DirectedGraph, flow: IntFlow) -> Result<Self, FlowError> {
        let div = divergence(g, &flow)?;
        if let Some((&v, &d)) = div.iter().find(|(_, &d)| d != 0) {
            return Err(FlowError::NotNullDivergence(format!(
                "vertex {} has divergence {d}",
                g.name(v)
            )));
        }
        Ok(NullDivergenceFlow { flow })
    }

    pub fn zero() -> Self {
        NullDivergenceFlow {
            flow: IntFlow::zero(),
        }
    }

    pub fn flow(&self) -> &IntFlow {
        &self.flow
    }

    pub fn into_flow(self) -> IntFlow {
        self.flow
    }
}

/// All circulations with total at most `max_total`, capped at
/// [`DEFAULT_FLOW_CAP`] outputs.
pub fn enumerate_null_flows(
    g: &DirectedGraph,
    max_total: u64,
) -> Result<Vec<NullDivergenceFlow>, FlowError> {
    enumerate_null_flows_capped(g, max_total, DEFAULT_FLOW_CAP)
}

/// All circulations with total at most `max_total`, ordered by total first
/// and lexicographically in canonical edge order second, so the list for a
/// smaller budget is always a prefix of the list for a larger one. The zero
/// flow comes first.
pub fn enumerate_null_flows_capped(
    g: &DirectedGraph,
    max_total: u64,
    cap: usize,
) -> Result<Vec<NullDivergenceFlow>, FlowError> {
    let m = g.edge_count();
    // Position of the last edge incident to each vertex; once the DFS moves
    // past it, that vertex's divergence is final and must already be zero.
    let mut last_touch: Vec<usize> = vec![usize::MAX; g.vertex_count()];
    for (i, e) in g.edges().iter().enumerate() {
        last_touch[e.from.index()] = i;
        last_touch[e.to.index()] = i;
    }

    let mut counts: Vec<u64> = vec![0; m];
    let mut div: Vec<i64> = vec![0; g.vertex_count()];
    let mut found: Vec<(u64, Vec<u64>)> = Vec::new();

    // Depth-first assignment in canonical edge order, values ascending, so
    // results come out in lexicographic order for each fixed total.
    #[allow(clippy::too_many_arguments)]
    fn descend(
        g: &DirectedGraph,
        max_total: u64,
        cap: usize,
        last_touch: &[usize],
        pos: usize,
        budget: u64,
        counts: &mut Vec<u64>,
        div: &mut Vec<i64>,
        found: &mut Vec<(u64, Vec<u64>)>,
    ) -> Result<(), FlowError> {
        if pos == g.edge_count() {
            if div.iter().all(|&d| d == 0) {
                if found.len() == cap {
                    return Err(FlowError::BudgetExceeded { cap });
                }
                found.push((max_total - budget, counts.clone()));
            }
            return Ok(());
        }
        let e = g.edges()[pos];
        for k in 0..=budget {
            counts[pos] = k;
            div[e.from.index()] += k as i64;
            div[e.to.index()] -= k as i64;

            // Every unit of remaining budget can cancel at most one unit of
            // positive divergence, and closed-out vertices get no more edges.
            let remaining = budget - k;
            let deficit: i64 = div.iter().map(|&d| d.max(0)).sum();
            let closed_ok = || {
                let mut ok = true;
                for v in [e.from, e.to] {
                    if last_touch[v.index()] == pos && div[v.index()] != 0 {
                        ok = false;
                    }
                }
                ok
            };
            if deficit <= remaining as i64 && closed_ok() {
                descend(
                    g, max_total, cap, last_touch, pos + 1, remaining, counts, div, found,
                )?;
            }

            div[e.from.index()] -= k as i64;
            div[e.to.index()] += k as i64;
            counts[pos] = 0;
        }
        Ok(())
    }

    descend(
        g,
        max_total,
        cap,
        &last_touch,
        0,
        max_total,
        &mut counts,
        &mut div,
        &mut found,
    )?;
    found.sort();

    let mut flows = Vec::with_capacity(found.len());
    for (_, counts) in found {
        let pairs = g
            .edges()
            .iter()
            .zip(&counts)
            .map(|(&e, &k)| (e, k))
            .filter(|&(_, k)| k > 0);
        let flow = IntFlow::from_pairs(g, pairs).expect("enumerated edges belong to the graph");
        flows.push(NullDivergenceFlow { flow });
    }
    Ok(flows)
}

/// Greedy decomposition of a circulation into simple cycles whose indicator
/// sum reproduces the input exactly.
///
/// The walk starts at the smallest vertex with positive out-flow and always
/// follows the smallest positive edge; the first repeated vertex closes a
/// cycle, which is subtracted. Total strictly decreases, so this terminates.
pub fn decompose_into_cycles(
    g: &DirectedGraph,
    n: &NullDivergenceFlow,
) -> Result<Vec<SimpleCycle>, FlowError> {
    // Revalidate against this graph; the flow may have been built elsewhere.
    let checked = NullDivergenceFlow::new(g, n.flow().clone())?;
    let mut residual: Vec<u64> = g
        .edges()
        .iter()
        .map(|&e| checked.flow().get(e))
        .collect();

    let out_flow = |residual: &[u64], v: VertexId| -> u64 {
        g.out_edges(v)
            .map(|e| residual[g.edge_index(e).expect("graph edge")])
            .sum()
    };

    let mut cycles = Vec::new();
    loop {
        let start = match g.vertices().find(|&v| out_flow(&residual, v) > 0) {
            Some(v) => v,
            None => break,
        };
        let mut walk = vec![start];
        let mut seen_at: BTreeMap<VertexId, usize> = BTreeMap::from([(start, 0)]);
        let cycle = loop {
            let here = *walk.last().expect("walk is nonempty");
            let step = g
                .out_edges(here)
                .find(|&e| residual[g.edge_index(e).expect("graph edge")] > 0)
                .expect("positive in-flow implies positive out-flow on a circulation");
            let next = step.to;
            if let Some(&first) = seen_at.get(&next) {
                let mut cycle = walk[first..].to_vec();
                cycle.push(next);
                break cycle;
            }
            seen_at.insert(next, walk.len());
            walk.push(next);
        };
        for w in cycle.windows(2) {
            let idx = g
                .edge_index(Edge::new(w[0], w[1]))
                .expect("walked along graph edges");
            residual[idx] -= 1;
        }
        cycles.push(SimpleCycle::new(g, cycle).expect("first repeat closes a simple cycle"));
    }
    Ok(cycles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn k3() -> DirectedGraph {
        build_graph(
            &["a", "b", "c"],
            &[
                ("a", "b"),
                ("b", "a"),
                ("a", "c"),
                ("c", "a"),
                ("b", "c"),
                ("c", "b"),
            ],
        )
        .unwrap()
    }

    fn c3() -> DirectedGraph {
        build_graph(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("c", "a")]).unwrap()
    }

    fn k4() -> DirectedGraph {
        let names = ["a", "b", "c", "d"];
        let mut edges = Vec::new();
        for &x in &names {
            for &y in &names {
                if x != y {
                    edges.push((x, y));
                }
            }
        }
        build_graph(&names, &edges).unwrap()
    }

    fn edge(g: &DirectedGraph, from: &str, to: &str) -> Edge {
        Edge::new(g.vertex(from).unwrap(), g.vertex(to).unwrap())
    }

    /// Brute force over all labelings with values <= max_total, summing
    /// in/out contributions directly. Independent of the DFS pruning.
    fn enumerate_oracle(g: &DirectedGraph, max_total: u64) -> Vec<Vec<u64>> {
        let m = g.edge_count();
        let mut out = Vec::new();
        let mut counts = vec![0u64; m];
        loop {
            if counts.iter().sum::<u64>() <= max_total {
                let mut div = vec![0i64; g.vertex_count()];
                for (i, e) in g.edges().iter().enumerate() {
                    div[e.from.index()] += counts[i] as i64;
                    div[e.to.index()] -= counts[i] as i64;
                }
                if div.iter().all(|&d| d == 0) {
                    out.push(counts.clone());
                }
            }
            // odometer increment, base max_total + 1
            let mut i = 0;
            loop {
                if i == m {
                    out.sort_by_key(|c| (c.iter().sum::<u64>(), c.clone()));
                    return out;
                }
                if counts[i] < max_total {
                    counts[i] += 1;
                    break;
                }
                counts[i] = 0;
                i += 1;
            }
        }
    }

    fn as_counts(g: &DirectedGraph, f: &NullDivergenceFlow) -> Vec<u64> {
        g.edges().iter().map(|&e| f.flow().get(e)).collect()
    }

    #[test]
    fn divergence_of_cycle_is_zero() {
        let g = c3();
        let f = IntFlow::from_pairs(
            &g,
            [
                (edge(&g, "a", "b"), 1),
                (edge(&g, "b", "c"), 1),
                (edge(&g, "c", "a"), 1),
            ],
        )
        .unwrap();
        assert!(divergence(&g, &f).unwrap().values().all(|&d| d == 0));
        assert!(NullDivergenceFlow::new(&g, f).is_ok());
    }

    #[test]
    fn divergence_of_single_edge() {
        let g = k3();
        let f = IntFlow::from_pairs(&g, [(edge(&g, "a", "b"), 1)]).unwrap();
        let div = divergence(&g, &f).unwrap();
        assert_eq!(div[&g.vertex("a").unwrap()], 1);
        assert_eq!(div[&g.vertex("b").unwrap()], -1);
        assert_eq!(div[&g.vertex("c").unwrap()], 0);
        assert!(matches!(
            NullDivergenceFlow::new(&g, f),
            Err(FlowError::NotNullDivergence(_))
        ));
    }

    #[test]
    fn divergence_is_additive_on_cycles() {
        let g = k3();
        let f1 = IntFlow::from_pairs(
            &g,
            [(edge(&g, "a", "b"), 1), (edge(&g, "b", "a"), 1)],
        )
        .unwrap();
        let f2 = IntFlow::from_pairs(
            &g,
            [(edge(&g, "a", "c"), 1), (edge(&g, "c", "a"), 1)],
        )
        .unwrap();
        let sum = f1.add(&f2);
        assert_eq!(sum.total(), 4);
        assert!(divergence(&g, &sum).unwrap().values().all(|&d| d == 0));
    }

    #[test]
    fn divergence_rejects_foreign_edges() {
        let g = c3();
        let f = IntFlow {
            values: BTreeMap::from([(edge(&k3(), "b", "a"), 1)]),
        };
        assert!(matches!(
            divergence(&g, &f),
            Err(FlowError::UnknownEdge(_))
        ));
    }

    #[test]
    fn enumerate_c3_small_budget() {
        let g = c3();
        let flows = enumerate_null_flows(&g, 3).unwrap();
        // zero flow and the unit flow around the cycle
        assert_eq!(flows.len(), 2);
        assert!(flows[0].flow().is_zero());
        assert_eq!(as_counts(&g, &flows[1]), [1, 1, 1]);
    }

    #[test]
    fn enumerate_budget_zero_is_only_the_zero_flow() {
        for g in [c3(), k3(), k4()] {
            let flows = enumerate_null_flows(&g, 0).unwrap();
            assert_eq!(flows.len(), 1);
            assert!(flows[0].flow().is_zero());
        }
    }

    #[test]
    fn enumerate_matches_oracle() {
        for (g, max_total) in [(c3(), 4), (k3(), 3), (k4(), 2)] {
            let got: Vec<Vec<u64>> = enumerate_null_flows(&g, max_total)
                .unwrap()
                .iter()
                .map(|f| as_counts(&g, f))
                .collect();
            assert_eq!(got, enumerate_oracle(&g, max_total));
        }
    }

    #[test]
    fn enumerate_k3_counts_are_stable() {
        // 1 zero flow, 3 two-cycles, then 2 unit three-cycles at total 3
        let g = k3();
        assert_eq!(enumerate_null_flows(&g, 2).unwrap().len(), 4);
        assert_eq!(enumerate_null_flows(&g, 3).unwrap().len(), 6);
    }

    #[test]
    fn enumerate_smaller_budget_is_a_prefix() {
        let g = k3();
        let small = enumerate_null_flows(&g, 2).unwrap();
        let large = enumerate_null_flows(&g, 4).unwrap();
        assert!(small.len() < large.len());
        assert_eq!(&large[..small.len()], &small[..]);
    }

    #[test]
    fn enumerate_respects_cap() {
        let g = k4();
        assert!(matches!(
            enumerate_null_flows_capped(&g, 4, 5),
            Err(FlowError::BudgetExceeded { cap: 5 })
        ));
    }

    #[test]
    fn enumerated_flows_are_closed_under_addition() {
        let g = k3();
        let flows = enumerate_null_flows(&g, 4).unwrap();
        for f1 in &flows {
            for f2 in &flows {
                if f1.flow().total() + f2.flow().total() <= 4 {
                    let sum = f1.flow().add(f2.flow());
                    assert!(
                        flows.iter().any(|f| *f.flow() == sum),
                        "{} + {} missing",
                        f1.flow().to_json(&g),
                        f2.flow().to_json(&g)
                    );
                }
            }
        }
    }

    #[test]
    fn decompose_simple_cycle_returns_it() {
        let g = c3();
        let ids: Vec<_> = ["a", "b", "c", "a"]
            .iter()
            .map(|s| g.vertex(s).unwrap())
            .collect();
        let cycle = SimpleCycle::new(&g, ids).unwrap();
        let f = NullDivergenceFlow::new(&g, IntFlow::cycle_indicator(&g, &cycle)).unwrap();
        let parts = decompose_into_cycles(&g, &f).unwrap();
        assert_eq!(parts, vec![cycle]);
    }

    #[test]
    fn decompose_zero_flow_is_empty() {
        let g = k3();
        assert!(decompose_into_cycles(&g, &NullDivergenceFlow::zero())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn decompose_two_two_cycles() {
        let g = k3();
        let f = IntFlow::from_pairs(
            &g,
            [
                (edge(&g, "a", "b"), 1),
                (edge(&g, "b", "a"), 1),
                (edge(&g, "a", "c"), 1),
                (edge(&g, "c", "a"), 1),
            ],
        )
        .unwrap();
        let f = NullDivergenceFlow::new(&g, f).unwrap();
        let parts = decompose_into_cycles(&g, &f).unwrap();
        assert_eq!(parts.len(), 2);
        let resummed = parts
            .iter()
            .fold(IntFlow::zero(), |acc, c| acc.add(&IntFlow::cycle_indicator(&g, c)));
        assert_eq!(resummed, *f.flow());
    }

    #[test]
    fn decompose_then_resum_is_identity_on_all_enumerated_flows() {
        for g in [c3(), k3(), k4()] {
            let budget = if g.edge_count() > 6 { 4 } else { 6 };
            for f in enumerate_null_flows(&g, budget).unwrap() {
                let parts = decompose_into_cycles(&g, &f).unwrap();
                let resummed = parts
                    .iter()
                    .fold(IntFlow::zero(), |acc, c| {
                        acc.add(&IntFlow::cycle_indicator(&g, c))
                    });
                assert_eq!(resummed, *f.flow(), "on {g:?}");
                assert!(parts.iter().all(|c| c.path().is_simple_cycle()));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let g = k3();
        let f = IntFlow::from_pairs(
            &g,
            [(edge(&g, "a", "b"), 2), (edge(&g, "b", "a"), 1)],
        )
        .unwrap();
        let text = f.to_json(&g);
        assert_eq!(text, "{\"a->b\":2,\"b->a\":1}");
        assert_eq!(IntFlow::from_json(&g, &text).unwrap(), f);
        // omitted edges are zero; explicit zeros are normalized away
        let sparse = IntFlow::from_json(&g, "{\"a->b\": 2, \"b->a\": 1, \"c->a\": 0}").unwrap();
        assert_eq!(sparse, f);
        assert!(matches!(
            IntFlow::from_json(&g, "{\"a->z\": 1}"),
            Err(FlowError::UnknownEdge(_))
        ));
        assert!(matches!(
            IntFlow::from_json(&g, "{\"a->b\": -1}"),
            Err(FlowError::InvalidJson(_))
        ));
    }
}
