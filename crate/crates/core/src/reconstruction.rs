//! Pipeline that decides whether a pair of moment oracle families (one on a
//! graph, one on its reversal) comes from independent Dirichlet weights with
//! null divergence, from a deterministic environment, or from neither.
//!
//! Stages: edge ratio table with cycle-product checks, edge/vertex
//! factorization via path products, global gauge recovery, per-vertex law
//! classification, verdict assembly. Every stage validates what the previous
//! one promises; arbitrary input tables fail with a concrete witness instead
//! of poisoning later stages.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{
    all_simple_cycles, bfs_path_masked, dfs_path_descending, is_two_connected, reverse_graph,
    DirectedGraph, Edge, VertexId,
};
use crate::moments::{
    compositions, validate_moment_oracle, ExponentMultiset, MomentError, MomentOracle,
};
use crate::numeric::{EqualityPolicy, Value};

/// Hard limit on the generating set of simple cycles checked per graph.
const MAX_GENERATING_CYCLES: usize = 10_000;

/// Width of the k-standard-error equality band used for empirical oracles.
pub const DEFAULT_K_SIGMA: f64 = 4.0;

#[derive(Clone, Debug, Error)]
pub enum ReconstructionError {
    #[error("graph precondition violated: {0}")]
    GraphPreconditionViolated(String),
    #[error("degree budget {got} is too small, need at least {needed}")]
    UnsupportedDegree { needed: u32, got: u32 },
    #[error("oracle failed validation ({side}): {violation}")]
    OracleInvalid {
        side: String,
        violation: serde_json::Value,
    },
    #[error("oracle value must be positive at {0}")]
    NonPositiveOracleValue(String),
    #[error("ratio product over cycle {cycle} at n = {n} is {product}, not 1")]
    CycleProductViolation { cycle: String, n: u32, product: Value },
    #[error("path products disagree at {site} for n = {n}: {lhs} vs {rhs}")]
    PathProductMismatch {
        site: String,
        n: u32,
        lhs: Value,
        rhs: Value,
    },
    #[error("single-edge residual at {site}, {multiset} is {value}, not 1")]
    ResidualHypothesisViolated {
        site: String,
        multiset: String,
        value: Value,
    },
    #[error(
        "gauge value {k} is ambiguous: {first_site} {first_multiset} gives {first_value}, \
         {second_site} {second_multiset} gives {second_value}"
    )]
    GaugeInconsistency {
        k: u32,
        first_site: String,
        first_multiset: String,
        first_value: Value,
        second_site: String,
        second_multiset: String,
        second_value: Value,
    },
    #[error("{site} deviates from the {form} form at {multiset}: expected {expected}, got {got}")]
    FormMismatch {
        site: String,
        form: String,
        multiset: String,
        expected: Value,
        got: Value,
    },
    #[error("recovered weight at {site} slot {slot} is not positive: {value}")]
    NegativeBeta {
        site: String,
        slot: String,
        value: Value,
    },
    #[error("edge {edge} gets weight {forward} from its tail but {reversed} from its head")]
    BetaMismatch {
        edge: String,
        forward: Value,
        reversed: Value,
    },
    #[error("{dirichlet_site} classifies as Dirichlet but {deterministic_site} as deterministic")]
    BranchConflict {
        dirichlet_site: String,
        deterministic_site: String,
    },
    #[error(transparent)]
    Moment(#[from] MomentError),
}

impl ReconstructionError {
    pub fn witness_json(&self) -> serde_json::Value {
        use ReconstructionError::*;
        match self {
            GraphPreconditionViolated(d) => {
                serde_json::json!({ "kind": "graph_precondition", "detail": d })
            }
            UnsupportedDegree { needed, got } => {
                serde_json::json!({ "kind": "unsupported_degree", "needed": needed, "got": got })
            }
            OracleInvalid { side, violation } => {
                serde_json::json!({ "kind": "oracle_invalid", "side": side, "violation": violation })
            }
            NonPositiveOracleValue(d) => {
                serde_json::json!({ "kind": "non_positive_value", "detail": d })
            }
            CycleProductViolation { cycle, n, product } => serde_json::json!({
                "kind": "cycle_product", "cycle": cycle, "n": n,
                "product": product.to_json_value(),
            }),
            PathProductMismatch { site, n, lhs, rhs } => serde_json::json!({
                "kind": "path_product", "site": site, "n": n,
                "lhs": lhs.to_json_value(), "rhs": rhs.to_json_value(),
            }),
            ResidualHypothesisViolated {
                site,
                multiset,
                value,
            } => serde_json::json!({
                "kind": "residual_hypothesis", "site": site, "multiset": multiset,
                "value": value.to_json_value(),
            }),
            GaugeInconsistency {
                k,
                first_site,
                first_multiset,
                first_value,
                second_site,
                second_multiset,
                second_value,
            } => serde_json::json!({
                "kind": "gauge_inconsistency", "k": k,
                "first": { "site": first_site, "multiset": first_multiset,
                           "value": first_value.to_json_value() },
                "second": { "site": second_site, "multiset": second_multiset,
                            "value": second_value.to_json_value() },
            }),
            FormMismatch {
                site,
                form,
                multiset,
                expected,
                got,
            } => serde_json::json!({
                "kind": "form_mismatch", "site": site, "form": form, "multiset": multiset,
                "expected": expected.to_json_value(), "got": got.to_json_value(),
            }),
            NegativeBeta { site, slot, value } => serde_json::json!({
                "kind": "negative_beta", "site": site, "slot": slot,
                "value": value.to_json_value(),
            }),
            BetaMismatch {
                edge,
                forward,
                reversed,
            } => serde_json::json!({
                "kind": "beta_mismatch", "edge": edge,
                "forward": forward.to_json_value(), "reversed": reversed.to_json_value(),
            }),
            BranchConflict {
                dirichlet_site,
                deterministic_site,
            } => serde_json::json!({
                "kind": "branch_conflict",
                "dirichlet_site": dirichlet_site, "deterministic_site": deterministic_site,
            }),
            Moment(e) => serde_json::json!({ "kind": "oracle_error", "detail": e.to_string() }),
        }
    }
}

fn policy_for(oracles: &[&MomentOracle]) -> EqualityPolicy {
    if oracles
        .iter()
        .any(|o| matches!(o, MomentOracle::Empirical { .. }))
    {
        EqualityPolicy::KSigma(DEFAULT_K_SIGMA)
    } else {
        EqualityPolicy::Exact
    }
}

fn values_policy<'a>(mut values: impl Iterator<Item = &'a Value>) -> EqualityPolicy {
    if values.any(|v| !v.is_exact()) {
        EqualityPolicy::KSigma(DEFAULT_K_SIGMA)
    } else {
        EqualityPolicy::Exact
    }
}

fn vpow(base: &Value, n: u32) -> Value {
    let mut acc = Value::one();
    for _ in 0..n {
        acc = acc.mul(base);
    }
    acc
}

fn ensure_positive(v: &Value, context: impl Fn() -> String) -> Result<(), ReconstructionError> {
    if v.is_positive() {
        Ok(())
    } else {
        Err(ReconstructionError::NonPositiveOracleValue(context()))
    }
}

/// `{a->b:2,a->c:1}` style label for a row multiset; zero entries dropped.
fn multiset_key(slots: &[String], exps: &[u32]) -> String {
    let parts: Vec<String> = slots
        .iter()
        .zip(exps)
        .filter(|&(_, &n)| n > 0)
        .map(|(s, n)| format!("{s}:{n}"))
        .collect();
    format!("{{{}}}", parts.join(","))
}

/// Runs `body` on every exponent vector of the given width with degree at
/// most `max_degree`, in (degree, lexicographic) order, stopping at the first
/// error.
fn for_each_multiset(
    width: usize,
    max_degree: u32,
    mut body: impl FnMut(&[u32]) -> Result<(), ReconstructionError>,
) -> Result<(), ReconstructionError> {
    let mut buf = vec![0u32; width];
    let mut failure = None;
    for d in 0..=max_degree {
        compositions(&mut buf, 0, d, &mut |exps| {
            if failure.is_none() {
                if let Err(e) = body(exps) {
                    failure = Some(e);
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(())
}

/// Per-edge ratio of a single-edge forward moment to the matching reversed
/// moment, tabulated for 0 <= n <= n_max. Ratio products over every simple
/// cycle must equal 1; that is what makes path products well defined.
#[derive(Clone, Debug)]
pub struct EdgeRatioTable {
    n_max: u32,
    values: BTreeMap<Edge, Vec<Value>>,
}

impl EdgeRatioTable {
    pub fn new(
        values: BTreeMap<Edge, Vec<Value>>,
        n_max: u32,
    ) -> Result<Self, ReconstructionError> {
        for (e, row) in &values {
            if row.len() != n_max as usize + 1 {
                return Err(ReconstructionError::UnsupportedDegree {
                    needed: n_max,
                    got: row.len().saturating_sub(1) as u32,
                });
            }
            ensure_positive(&row[0], || format!("ratio at {:?}, n = 0", e))?;
        }
        Ok(EdgeRatioTable { n_max, values })
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn value(&self, e: Edge, n: u32) -> Option<&Value> {
        self.values.get(&e).and_then(|row| row.get(n as usize))
    }

    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        let map: BTreeMap<String, Vec<serde_json::Value>> = self
            .values
            .iter()
            .map(|(e, row)| {
                (
                    g.edge_name(*e),
                    row.iter().map(Value::to_json_value).collect(),
                )
            })
            .collect();
        serde_json::json!(map)
    }
}

/// Builds the ratio table g_(x,y)(n) = f_x(n on (x,y)) / f_rev_y(n on (y,x))
/// and verifies that its product over a generating set of simple cycles (all
/// of them, up to a hard cap) is 1 for every n in 1..=n_max.
pub fn edge_ratios(
    g: &DirectedGraph,
    f: &MomentOracle,
    f_rev: &MomentOracle,
    n_max: u32,
) -> Result<EdgeRatioTable, ReconstructionError> {
    if n_max < 1 {
        return Err(ReconstructionError::UnsupportedDegree {
            needed: 1,
            got: n_max,
        });
    }
    let rev = reverse_graph(g);
    let mut values = BTreeMap::new();
    for &e in g.edges() {
        let mut row = Vec::with_capacity(n_max as usize + 1);
        row.push(Value::one());
        for n in 1..=n_max {
            let fwd = f.evaluate(g, &ExponentMultiset::single(g, e, n))?;
            let bwd = f_rev.evaluate(&rev, &ExponentMultiset::single(&rev, e.reversed(), n))?;
            ensure_positive(&fwd, || format!("f at {} with n = {n}", g.edge_name(e)))?;
            ensure_positive(&bwd, || {
                format!("reversed f at {} with n = {n}", rev.edge_name(e.reversed()))
            })?;
            row.push(fwd.div(&bwd));
        }
        values.insert(e, row);
    }
    let table = EdgeRatioTable { n_max, values };
    let policy = policy_for(&[f, f_rev]);
    let cycles = all_simple_cycles(g, MAX_GENERATING_CYCLES)
        .map_err(|e| ReconstructionError::GraphPreconditionViolated(e.to_string()))?;
    for cycle in &cycles {
        for n in 1..=n_max {
            let mut product = Value::one();
            for e in cycle.edges() {
                product = product.mul(table.value(e, n).expect("table covers all edges"));
            }
            if !policy.equal(&product, &Value::one()) {
                return Err(ReconstructionError::CycleProductViolation {
                    cycle: cycle.path().names(g).join("->"),
                    n,
                    product,
                });
            }
        }
    }
    Ok(table)
}

/// Splits single-edge moments into per-edge and per-vertex functions:
/// f_x(n on (x,y)) = h_(x,y)(n) / h_tilde_x(n), with the same h serving the
/// reversed family. The per-vertex part is a ratio path product from a fixed
/// base vertex; the gauge of the whole family is only pinned down later.
#[derive(Clone, Debug)]
pub struct EdgeVertexFactorization {
    base_vertex: VertexId,
    n_max: u32,
    h: BTreeMap<Edge, Vec<Value>>,
    h_tilde: BTreeMap<VertexId, Vec<Value>>,
}

impl EdgeVertexFactorization {
    pub fn base_vertex(&self) -> VertexId {
        self.base_vertex
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn h(&self, e: Edge, n: u32) -> Option<&Value> {
        self.h.get(&e).and_then(|row| row.get(n as usize))
    }

    pub fn h_tilde(&self, v: VertexId, n: u32) -> Option<&Value> {
        self.h_tilde.get(&v).and_then(|row| row.get(n as usize))
    }

    /// The same factorization with every h and h_tilde multiplied by a
    /// common positive sequence with delta0(0) = delta0(1) = 1. Both
    /// defining identities survive this; only the gauge moves.
    pub fn rescaled(&self, delta0: &[Value]) -> Result<Self, ReconstructionError> {
        if delta0.len() < self.n_max as usize + 1 {
            return Err(ReconstructionError::UnsupportedDegree {
                needed: self.n_max,
                got: delta0.len().saturating_sub(1) as u32,
            });
        }
        for (n, v) in delta0.iter().enumerate().take(2) {
            if v.as_exact() != Some(&crate::numeric::rat_int(1)) {
                return Err(ReconstructionError::NonPositiveOracleValue(format!(
                    "gauge rescale must be exactly 1 at n = {n}"
                )));
            }
        }
        for (n, v) in delta0.iter().enumerate() {
            ensure_positive(v, || format!("gauge rescale at n = {n}"))?;
        }
        let scale_row =
            |row: &[Value]| -> Vec<Value> { row.iter().zip(delta0).map(|(v, d)| v.mul(d)).collect() };
        Ok(EdgeVertexFactorization {
            base_vertex: self.base_vertex,
            n_max: self.n_max,
            h: self.h.iter().map(|(e, r)| (*e, scale_row(r))).collect(),
            h_tilde: self
                .h_tilde
                .iter()
                .map(|(v, r)| (*v, scale_row(r)))
                .collect(),
        })
    }

    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        let h: BTreeMap<String, Vec<serde_json::Value>> = self
            .h
            .iter()
            .map(|(e, row)| {
                (
                    g.edge_name(*e),
                    row.iter().map(Value::to_json_value).collect(),
                )
            })
            .collect();
        let h_tilde: BTreeMap<String, Vec<serde_json::Value>> = self
            .h_tilde
            .iter()
            .map(|(v, row)| {
                (
                    g.name(*v).to_owned(),
                    row.iter().map(Value::to_json_value).collect(),
                )
            })
            .collect();
        serde_json::json!({
            "base_vertex": g.name(self.base_vertex),
            "h": h,
            "h_tilde": h_tilde,
        })
    }
}

fn path_product(
    ratios: &EdgeRatioTable,
    path: &[VertexId],
    n: u32,
) -> Value {
    let mut acc = Value::one();
    for w in path.windows(2) {
        acc = acc.mul(
            ratios
                .value(Edge::new(w[0], w[1]), n)
                .expect("path edges are table edges"),
        );
    }
    acc
}

/// Derives the factorization from a verified ratio table. The base vertex is
/// the smallest one; each h_tilde is the ratio product along the canonical
/// shortest path from the base. Path independence is re-verified along a
/// vertex-disjoint alternative (or, when the whole interior cannot be
/// avoided at once, along one alternative per interior vertex), and the
/// per-edge relation h_tilde_y = h_tilde_x * g_(x,y) is re-checked on every
/// edge, which is exactly what the reversed defining identity needs.
pub fn derive_factorization(
    g: &DirectedGraph,
    ratios: &EdgeRatioTable,
    f: &MomentOracle,
    n_max: u32,
) -> Result<EdgeVertexFactorization, ReconstructionError> {
    derive_factorization_impl(g, ratios, f, n_max, false)
}

/// Same derivation with the alternative (depth-first, descending) canonical
/// path choice; on consistent inputs the result must be identical.
pub fn derive_factorization_alt_paths(
    g: &DirectedGraph,
    ratios: &EdgeRatioTable,
    f: &MomentOracle,
    n_max: u32,
) -> Result<EdgeVertexFactorization, ReconstructionError> {
    derive_factorization_impl(g, ratios, f, n_max, true)
}

fn derive_factorization_impl(
    g: &DirectedGraph,
    ratios: &EdgeRatioTable,
    f: &MomentOracle,
    n_max: u32,
    alt_paths: bool,
) -> Result<EdgeVertexFactorization, ReconstructionError> {
    if n_max > ratios.n_max() {
        return Err(ReconstructionError::UnsupportedDegree {
            needed: n_max,
            got: ratios.n_max(),
        });
    }
    for &e in g.edges() {
        if ratios.value(e, n_max).is_none() {
            return Err(MomentError::MissingTableEntry(format!(
                "ratio table has no row for {}",
                g.edge_name(e)
            ))
            .into());
        }
    }
    let policy = values_policy(ratios.values.values().flatten());
    let base = g.vertices().next().expect("graphs are nonempty");
    let alive = vec![true; g.vertex_count()];
    let mut h_tilde: BTreeMap<VertexId, Vec<Value>> = BTreeMap::new();
    h_tilde.insert(base, vec![Value::one(); n_max as usize + 1]);
    for y in g.vertices().filter(|&y| y != base) {
        let canonical = if alt_paths {
            dfs_path_descending(g, base, y)
        } else {
            bfs_path_masked(g, &alive, base, y)
        }
        .ok_or_else(|| {
            ReconstructionError::GraphPreconditionViolated(format!(
                "no path from {} to {}",
                g.name(base),
                g.name(y)
            ))
        })?;
        let products: Vec<Value> = (0..=n_max)
            .map(|n| path_product(ratios, &canonical, n))
            .collect();

        let mut alternatives: Vec<Vec<VertexId>> = Vec::new();
        let interior = &canonical[1..canonical.len() - 1];
        if !interior.is_empty() {
            let mut masked = alive.clone();
            for v in interior {
                masked[v.index()] = false;
            }
            if let Some(p) = bfs_path_masked(g, &masked, base, y) {
                alternatives.push(p);
            } else {
                // No fully disjoint alternative; route around each interior
                // vertex separately. 2-connectivity guarantees these exist.
                for v in interior {
                    let mut masked = alive.clone();
                    masked[v.index()] = false;
                    let p = bfs_path_masked(g, &masked, base, y).ok_or_else(|| {
                        ReconstructionError::GraphPreconditionViolated(format!(
                            "removing {} disconnects {} from {}",
                            g.name(*v),
                            g.name(base),
                            g.name(y)
                        ))
                    })?;
                    alternatives.push(p);
                }
            }
        }
        for alt in &alternatives {
            for n in 1..=n_max {
                let other = path_product(ratios, alt, n);
                if !policy.equal(&products[n as usize], &other) {
                    return Err(ReconstructionError::PathProductMismatch {
                        site: g.name(y).to_owned(),
                        n,
                        lhs: products[n as usize].clone(),
                        rhs: other,
                    });
                }
            }
        }
        h_tilde.insert(y, products);
    }

    // h_(x,y)(n) = f_x(n on (x,y)) * h_tilde_x(n)
    let mut h: BTreeMap<Edge, Vec<Value>> = BTreeMap::new();
    for &e in g.edges() {
        let mut row = Vec::with_capacity(n_max as usize + 1);
        for n in 0..=n_max {
            let fv = f.evaluate(g, &ExponentMultiset::single(g, e, n))?;
            ensure_positive(&fv, || format!("f at {} with n = {n}", g.edge_name(e)))?;
            row.push(fv.mul(&h_tilde[&e.from][n as usize]));
        }
        h.insert(e, row);
    }

    // Per-edge consistency: h_tilde_to = h_tilde_from * g_e. Together with
    // the construction of h this is the reversed defining identity.
    for &e in g.edges() {
        for n in 1..=n_max {
            let lhs = h_tilde[&e.to][n as usize].clone();
            let rhs = h_tilde[&e.from][n as usize]
                .mul(ratios.value(e, n).expect("table covers all edges"));
            if !policy.equal(&lhs, &rhs) {
                return Err(ReconstructionError::PathProductMismatch {
                    site: g.edge_name(e),
                    n,
                    lhs,
                    rhs,
                });
            }
        }
    }

    Ok(EdgeVertexFactorization {
        base_vertex: base,
        n_max,
        h,
        h_tilde,
    })
}

/// One vertex row (forward or reversed) with its residual moments: the raw
/// moment divided by the factorized prediction. For a family that factors
/// perfectly the residual depends only on the exponent pattern, which is
/// what the gauge recovery exploits.
#[derive(Clone, Debug)]
pub struct ResidualSite {
    label: String,
    slots: Vec<String>,
    values: BTreeMap<Vec<u32>, Value>,
}

impl ResidualSite {
    pub fn new(
        label: String,
        slots: Vec<String>,
        values: BTreeMap<Vec<u32>, Value>,
        n_max: u32,
    ) -> Result<Self, ReconstructionError> {
        let site = ResidualSite {
            label,
            slots,
            values,
        };
        for_each_multiset(site.slots.len(), n_max, |exps| {
            if site.values.contains_key(exps) {
                Ok(())
            } else {
                Err(MomentError::MissingTableEntry(format!(
                    "{} {}",
                    site.label,
                    multiset_key(&site.slots, exps)
                ))
                .into())
            }
        })?;
        Ok(site)
    }

    pub fn from_fn(
        label: &str,
        slots: &[&str],
        n_max: u32,
        mut f: impl FnMut(&[u32]) -> Value,
    ) -> Self {
        let mut values = BTreeMap::new();
        let mut buf = vec![0u32; slots.len()];
        for d in 0..=n_max {
            compositions(&mut buf, 0, d, &mut |exps| {
                values.insert(exps.to_vec(), f(exps));
            });
        }
        ResidualSite {
            label: label.to_owned(),
            slots: slots.iter().map(|s| s.to_string()).collect(),
            values,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn width(&self) -> usize {
        self.slots.len()
    }

    pub fn value(&self, exps: &[u32]) -> Option<&Value> {
        self.values.get(exps)
    }

    fn key(&self, exps: &[u32]) -> String {
        multiset_key(&self.slots, exps)
    }
}

/// All residual sites of a pipeline run: one per vertex for the forward
/// family and one per vertex for the reversed family.
#[derive(Clone, Debug)]
pub struct ResidualSystem {
    n_max: u32,
    sites: Vec<ResidualSite>,
}

impl ResidualSystem {
    pub fn from_sites(sites: Vec<ResidualSite>, n_max: u32) -> Result<Self, ReconstructionError> {
        for site in &sites {
            for_each_multiset(site.width(), n_max, |exps| {
                site.value(exps).map(|_| ()).ok_or_else(|| {
                    MomentError::MissingTableEntry(format!(
                        "{} {}",
                        site.label,
                        site.key(exps)
                    ))
                    .into()
                })
            })?;
        }
        Ok(ResidualSystem { n_max, sites })
    }

    /// Residuals r(n) = f(n) * h_tilde(deg n) / prod_e h_e(n_e) for every
    /// vertex of the forward family and of the reversed family. Reversed
    /// rows use the h function of the original edge they mirror.
    pub fn from_factorization(
        g: &DirectedGraph,
        f: &MomentOracle,
        f_rev: &MomentOracle,
        fact: &EdgeVertexFactorization,
        n_max: u32,
    ) -> Result<Self, ReconstructionError> {
        if n_max > fact.n_max() {
            return Err(ReconstructionError::UnsupportedDegree {
                needed: n_max,
                got: fact.n_max(),
            });
        }
        let rev = reverse_graph(g);
        let mut sites = Vec::new();
        for (graph, oracle, reversed) in [(g, f, false), (&rev, f_rev, true)] {
            for x in graph.vertices() {
                let edges: Vec<Edge> = graph.out_edges(x).collect();
                if edges.is_empty() {
                    continue;
                }
                let label = format!("{}{}", if reversed { "rev:" } else { "fwd:" }, graph.name(x));
                let slots: Vec<String> = edges.iter().map(|&e| graph.edge_name(e)).collect();
                let mut values = BTreeMap::new();
                let mut failure: Option<ReconstructionError> = None;
                let mut buf = vec![0u32; edges.len()];
                for d in 0..=n_max {
                    compositions(&mut buf, 0, d, &mut |exps| {
                        if failure.is_some() {
                            return;
                        }
                        let compute = || -> Result<Value, ReconstructionError> {
                            let m = ExponentMultiset::new(graph, x, exps.to_vec())?;
                            let fv = oracle.evaluate(graph, &m)?;
                            ensure_positive(&fv, || {
                                format!("{label} {}", multiset_key(&slots, exps))
                            })?;
                            let degree: u32 = exps.iter().sum();
                            let mut denom = Value::one();
                            for (&e, &k) in edges.iter().zip(exps) {
                                let original = if reversed { e.reversed() } else { e };
                                denom = denom
                                    .mul(fact.h(original, k).expect("factorization covers edges"));
                            }
                            Ok(fv
                                .mul(fact.h_tilde(x, degree).expect("factorization covers vertices"))
                                .div(&denom))
                        };
                        match compute() {
                            Ok(v) => {
                                values.insert(exps.to_vec(), v);
                            }
                            Err(e) => failure = Some(e),
                        }
                    });
                    if let Some(e) = failure {
                        return Err(e);
                    }
                }
                sites.push(ResidualSite {
                    label,
                    slots,
                    values,
                });
            }
        }
        Ok(ResidualSystem { n_max, sites })
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn sites(&self) -> &[ResidualSite] {
        &self.sites
    }

    pub fn to_json(&self) -> serde_json::Value {
        let sites: Vec<serde_json::Value> = self
            .sites
            .iter()
            .map(|s| {
                let values: BTreeMap<String, serde_json::Value> = s
                    .values
                    .iter()
                    .map(|(exps, v)| (s.key(exps), v.to_json_value()))
                    .collect();
                serde_json::json!({ "site": s.label, "values": values })
            })
            .collect();
        serde_json::json!(sites)
    }
}

/// The common positive sequence that turns residuals back into moments:
/// r(n) = prod_e delta(n_e) / delta(deg n), with delta(0) = delta(1) = 1.
#[derive(Clone, Debug)]
pub struct Gauge {
    delta: Vec<Value>,
}

impl Gauge {
    pub fn new(delta: Vec<Value>) -> Result<Self, ReconstructionError> {
        if delta.len() < 2 {
            return Err(ReconstructionError::UnsupportedDegree {
                needed: 1,
                got: delta.len().saturating_sub(1) as u32,
            });
        }
        for (n, v) in delta.iter().enumerate().take(2) {
            if v.as_exact() != Some(&crate::numeric::rat_int(1)) {
                return Err(ReconstructionError::NonPositiveOracleValue(format!(
                    "gauge must be exactly 1 at n = {n}"
                )));
            }
        }
        for (n, v) in delta.iter().enumerate() {
            ensure_positive(v, || format!("gauge at n = {n}"))?;
        }
        Ok(Gauge { delta })
    }

    pub fn n_max(&self) -> u32 {
        self.delta.len() as u32 - 1
    }

    pub fn delta(&self, n: u32) -> &Value {
        &self.delta[n as usize]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self
            .delta
            .iter()
            .map(Value::to_json_value)
            .collect::<Vec<_>>())
    }
}

/// Recovers the gauge by the recurrence delta(k) = delta(k-1) / r((k-1) on
/// one slot + 1 on another), cross-checking every admissible site and slot
/// pair, then re-verifies the full residual identity on every multiset of
/// degree at most n_max. Rows of width 1 impose no constraint; if no wider
/// row exists the gauge defaults to the constant 1.
pub fn recover_gauge(
    residuals: &ResidualSystem,
    n_max: u32,
) -> Result<Gauge, ReconstructionError> {
    if n_max > residuals.n_max() {
        return Err(ReconstructionError::UnsupportedDegree {
            needed: n_max,
            got: residuals.n_max(),
        });
    }
    let policy = values_policy(residuals.sites.iter().flat_map(|s| s.values.values()));
    // Gauge recovery needs single-slot residuals to be exactly 1.
    for site in &residuals.sites {
        for slot in 0..site.width() {
            for n in 1..=n_max {
                let mut exps = vec![0u32; site.width()];
                exps[slot] = n;
                let value = site.value(&exps).expect("validated coverage").clone();
                if !policy.equal(&value, &Value::one()) {
                    return Err(ReconstructionError::ResidualHypothesisViolated {
                        site: site.label.clone(),
                        multiset: site.key(&exps),
                        value,
                    });
                }
            }
        }
    }

    let mut delta = vec![Value::one(), Value::one()];
    let mut origins: Vec<Option<(String, String)>> = vec![None, None];
    for k in 2..=n_max {
        // (site label, multiset label, implied gauge value)
        let mut first: Option<(String, String, Value)> = None;
        for site in &residuals.sites {
            if site.width() < 2 {
                continue;
            }
            for heavy in 0..site.width() {
                for light in 0..site.width() {
                    if heavy == light {
                        continue;
                    }
                    let mut exps = vec![0u32; site.width()];
                    exps[heavy] = k - 1;
                    exps[light] += 1;
                    let r = site.value(&exps).expect("validated coverage");
                    let candidate = delta[k as usize - 1].div(r);
                    match &first {
                        None => first = Some((site.label.clone(), site.key(&exps), candidate)),
                        Some((fs, fm, fv)) => {
                            if !policy.equal(fv, &candidate) {
                                return Err(ReconstructionError::GaugeInconsistency {
                                    k,
                                    first_site: fs.clone(),
                                    first_multiset: fm.clone(),
                                    first_value: fv.clone(),
                                    second_site: site.label.clone(),
                                    second_multiset: site.key(&exps),
                                    second_value: candidate,
                                });
                            }
                        }
                    }
                }
            }
        }
        match first {
            Some((site, key, value)) => {
                delta.push(value);
                origins.push(Some((site, key)));
            }
            None => {
                delta.push(Value::one());
                origins.push(None);
            }
        }
    }

    // Full identity recheck: every residual must equal the gauge prediction.
    for site in &residuals.sites {
        for_each_multiset(site.width(), n_max, |exps| {
            let degree: u32 = exps.iter().sum();
            let mut predicted = Value::one();
            for &k in exps {
                predicted = predicted.mul(&delta[k as usize]);
            }
            predicted = predicted.div(&delta[degree as usize]);
            let got = site.value(exps).expect("validated coverage");
            if policy.equal(got, &predicted) {
                return Ok(());
            }
            // Present the failure as two multisets implying different
            // gauge values at this degree.
            let mut implied = Value::one();
            for &k in exps {
                implied = implied.mul(&delta[k as usize]);
            }
            implied = implied.div(got);
            let (os, okey) = origins[degree as usize]
                .clone()
                .unwrap_or_else(|| ("(default)".into(), "{}".into()));
            Err(ReconstructionError::GaugeInconsistency {
                k: degree,
                first_site: site.label.clone(),
                first_multiset: site.key(exps),
                first_value: implied,
                second_site: os,
                second_multiset: okey,
                second_value: delta[degree as usize].clone(),
            })
        })?;
    }

    Gauge::new(delta)
}

/// One vertex row with its gauge-corrected factorization, ready for the law
/// dichotomy: moments, per-slot edge functions h', and the vertex function
/// h_tilde'.
#[derive(Clone, Debug)]
pub struct VertexTable {
    label: String,
    slot_labels: Vec<String>,
    values: BTreeMap<Vec<u32>, Value>,
    h_prime: Vec<Vec<Value>>,
    h_tilde_prime: Vec<Value>,
    n_max: u32,
}

impl VertexTable {
    pub fn new(
        label: String,
        slot_labels: Vec<String>,
        values: BTreeMap<Vec<u32>, Value>,
        h_prime: Vec<Vec<Value>>,
        h_tilde_prime: Vec<Value>,
    ) -> Result<Self, ReconstructionError> {
        if h_tilde_prime.len() < 2 || h_prime.len() != slot_labels.len() {
            return Err(ReconstructionError::UnsupportedDegree {
                needed: 1,
                got: h_tilde_prime.len().saturating_sub(1) as u32,
            });
        }
        let n_max = h_tilde_prime.len() as u32 - 1;
        let table = VertexTable {
            label,
            slot_labels,
            values,
            h_prime,
            h_tilde_prime,
            n_max,
        };
        let policy = table.policy();
        if !policy.equal(&table.h_tilde_prime[0], &Value::one()) {
            return Err(ReconstructionError::NonPositiveOracleValue(format!(
                "{}: h_tilde(0) must be 1",
                table.label
            )));
        }
        for (i, row) in table.h_prime.iter().enumerate() {
            if row.len() != table.h_tilde_prime.len() {
                return Err(ReconstructionError::UnsupportedDegree {
                    needed: n_max,
                    got: row.len().saturating_sub(1) as u32,
                });
            }
            if !policy.equal(&row[0], &Value::one()) {
                return Err(ReconstructionError::NonPositiveOracleValue(format!(
                    "{}: h(0) must be 1 at slot {}",
                    table.label, table.slot_labels[i]
                )));
            }
            ensure_positive(&row[1], || {
                format!("{}: h(1) at slot {}", table.label, table.slot_labels[i])
            })?;
        }
        for v in table.h_tilde_prime.iter() {
            ensure_positive(v, || format!("{}: h_tilde", table.label))?;
        }
        for_each_multiset(table.width(), n_max, |exps| {
            match table.values.get(exps) {
                Some(v) => ensure_positive(v, || {
                    format!("{} {}", table.label, table.key(exps))
                }),
                None => Err(MomentError::MissingTableEntry(format!(
                    "{} {}",
                    table.label,
                    table.key(exps)
                ))
                .into()),
            }
        })?;
        Ok(table)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn width(&self) -> usize {
        self.slot_labels.len()
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    fn key(&self, exps: &[u32]) -> String {
        multiset_key(&self.slot_labels, exps)
    }

    fn policy(&self) -> EqualityPolicy {
        values_policy(
            self.values
                .values()
                .chain(self.h_prime.iter().flatten())
                .chain(self.h_tilde_prime.iter()),
        )
    }

    /// The same table with h' and h_tilde' multiplied by gamma^n: the law
    /// dichotomy must not see the difference.
    pub fn rescaled_by_geometric(&self, gamma: &Value) -> VertexTable {
        let scale = |row: &[Value]| -> Vec<Value> {
            row.iter()
                .enumerate()
                .map(|(n, v)| v.mul(&vpow(gamma, n as u32)))
                .collect()
        };
        VertexTable {
            label: self.label.clone(),
            slot_labels: self.slot_labels.clone(),
            values: self.values.clone(),
            h_prime: self.h_prime.iter().map(|r| scale(r)).collect(),
            h_tilde_prime: scale(&self.h_tilde_prime),
            n_max: self.n_max,
        }
    }
}

/// Per-vertex outcome of the law dichotomy.
#[derive(Clone, Debug)]
pub enum VertexLaw {
    Dirichlet { beta_total: Value, beta: Vec<Value> },
    Deterministic { c: Vec<Value> },
}

impl VertexLaw {
    pub fn branch_name(&self) -> &'static str {
        match self {
            VertexLaw::Dirichlet { .. } => "dirichlet",
            VertexLaw::Deterministic { .. } => "deterministic",
        }
    }
}

/// Decides between the two admissible laws for one vertex row.
///
/// After normalizing out gamma = h_tilde'(1): if h_tilde'(2) differs from
/// h_tilde'(1)^2 the law is Dirichlet with beta = gamma^2 / (h_tilde'(2) -
/// gamma^2) and per-slot weights beta_i = f(e_i) * beta; otherwise it is
/// deterministic with c_i = f(e_i). Either way the whole table and both
/// factor families are re-checked against the classified closed form up to
/// degree n_max.
pub fn classify_vertex(table: &VertexTable) -> Result<VertexLaw, ReconstructionError> {
    if table.n_max() < 3 {
        return Err(ReconstructionError::UnsupportedDegree {
            needed: 3,
            got: table.n_max(),
        });
    }
    let policy = table.policy();
    let gamma = table.h_tilde_prime[1].clone();
    let gamma_sq = gamma.mul(&gamma);
    let unit = |i: usize| -> Vec<u32> {
        let mut exps = vec![0u32; table.width()];
        exps[i] = 1;
        exps
    };
    let f_at = |exps: &[u32]| -> &Value { table.values.get(exps).expect("validated coverage") };

    if !policy.equal(&table.h_tilde_prime[2], &gamma_sq) {
        let beta_total = gamma_sq.div(&table.h_tilde_prime[2].sub(&gamma_sq));
        let beta: Vec<Value> = (0..table.width())
            .map(|i| f_at(&unit(i)).mul(&beta_total))
            .collect();
        for (i, b) in beta.iter().enumerate() {
            if !b.is_positive() {
                return Err(ReconstructionError::NegativeBeta {
                    site: table.label.clone(),
                    slot: table.slot_labels[i].clone(),
                    value: b.clone(),
                });
            }
        }
        if !beta_total.is_positive() {
            return Err(ReconstructionError::NegativeBeta {
                site: table.label.clone(),
                slot: "(total)".into(),
                value: beta_total,
            });
        }
        // Full moment table against the Gamma-ratio closed form.
        for_each_multiset(table.width(), table.n_max(), |exps| {
            let degree: u32 = exps.iter().sum();
            let mut expected = Value::one();
            for (b, &k) in beta.iter().zip(exps) {
                expected = expected.mul(&b.rising(k));
            }
            expected = expected.div(&beta_total.rising(degree));
            let got = f_at(exps);
            if policy.equal(got, &expected) {
                Ok(())
            } else {
                Err(ReconstructionError::FormMismatch {
                    site: table.label.clone(),
                    form: "dirichlet".into(),
                    multiset: table.key(exps),
                    expected,
                    got: got.clone(),
                })
            }
        })?;
        // Factor families: h'_i(n) = gamma^n H(beta_i, n) / beta^n and
        // h_tilde'(n) = gamma^n H(beta, n) / beta^n.
        for n in 0..=table.n_max() {
            let scale = vpow(&gamma, n).div(&vpow(&beta_total, n));
            for (i, row) in table.h_prime.iter().enumerate() {
                let expected = scale.mul(&beta[i].rising(n));
                if !policy.equal(&row[n as usize], &expected) {
                    return Err(ReconstructionError::FormMismatch {
                        site: table.label.clone(),
                        form: "dirichlet_edge_factor".into(),
                        multiset: format!("{{{}:{n}}}", table.slot_labels[i]),
                        expected,
                        got: row[n as usize].clone(),
                    });
                }
            }
            let expected = scale.mul(&beta_total.rising(n));
            if !policy.equal(&table.h_tilde_prime[n as usize], &expected) {
                return Err(ReconstructionError::FormMismatch {
                    site: table.label.clone(),
                    form: "dirichlet_vertex_factor".into(),
                    multiset: format!("{{n:{n}}}"),
                    expected,
                    got: table.h_tilde_prime[n as usize].clone(),
                });
            }
        }
        Ok(VertexLaw::Dirichlet { beta_total, beta })
    } else {
        let c: Vec<Value> = (0..table.width()).map(|i| f_at(&unit(i)).clone()).collect();
        for_each_multiset(table.width(), table.n_max(), |exps| {
            let mut expected = Value::one();
            for (ci, &k) in c.iter().zip(exps) {
                expected = expected.mul(&vpow(ci, k));
            }
            let got = f_at(exps);
            if policy.equal(got, &expected) {
                Ok(())
            } else {
                Err(ReconstructionError::FormMismatch {
                    site: table.label.clone(),
                    form: "deterministic".into(),
                    multiset: table.key(exps),
                    expected,
                    got: got.clone(),
                })
            }
        })?;
        // Factor families: h'_i(n) = (gamma c_i)^n and h_tilde'(n) = gamma^n.
        for n in 0..=table.n_max() {
            let gn = vpow(&gamma, n);
            for (i, row) in table.h_prime.iter().enumerate() {
                let expected = gn.mul(&vpow(&c[i], n));
                if !policy.equal(&row[n as usize], &expected) {
                    return Err(ReconstructionError::FormMismatch {
                        site: table.label.clone(),
                        form: "deterministic_edge_factor".into(),
                        multiset: format!("{{{}:{n}}}", table.slot_labels[i]),
                        expected,
                        got: row[n as usize].clone(),
                    });
                }
            }
            if !policy.equal(&table.h_tilde_prime[n as usize], &gn) {
                return Err(ReconstructionError::FormMismatch {
                    site: table.label.clone(),
                    form: "deterministic_vertex_factor".into(),
                    multiset: format!("{{n:{n}}}"),
                    expected: gn,
                    got: table.h_tilde_prime[n as usize].clone(),
                });
            }
        }
        Ok(VertexLaw::Deterministic { c })
    }
}

/// Final answer of the pipeline.
// The inconsistency arm hauls its witness along; that asymmetry is the point.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Verdict {
    Dirichlet {
        beta: BTreeMap<Edge, Value>,
        null_divergence: bool,
    },
    Deterministic {
        c: BTreeMap<Edge, Value>,
    },
    Inconsistent {
        witness: ReconstructionError,
    },
}

/// Everything the pipeline computed, kept for reporting whether or not the
/// run succeeded.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub mode: String,
    pub failed_stage: Option<&'static str>,
    pub edge_ratios: Option<EdgeRatioTable>,
    pub factorization: Option<EdgeVertexFactorization>,
    pub residuals: Option<ResidualSystem>,
    pub gauge: Option<Gauge>,
    pub classifications: Vec<(String, VertexLaw)>,
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub verdict: Verdict,
    pub n_max: u32,
    pub diagnostics: Diagnostics,
}

impl ReconstructionResult {
    pub fn is_inconsistent(&self) -> bool {
        matches!(self.verdict, Verdict::Inconsistent { .. })
    }

    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        let edge_map = |m: &BTreeMap<Edge, Value>| -> BTreeMap<String, serde_json::Value> {
            m.iter()
                .map(|(e, v)| (g.edge_name(*e), v.to_json_value()))
                .collect()
        };
        let verdict = match &self.verdict {
            Verdict::Dirichlet {
                beta,
                null_divergence,
            } => serde_json::json!({
                "type": "dirichlet",
                "beta": edge_map(beta),
                "null_divergence": null_divergence,
            }),
            Verdict::Deterministic { c } => serde_json::json!({
                "type": "deterministic",
                "c": edge_map(c),
            }),
            Verdict::Inconsistent { witness } => serde_json::json!({
                "type": "inconsistent",
                "witness": witness.witness_json(),
            }),
        };
        let classifications: Vec<serde_json::Value> = self
            .diagnostics
            .classifications
            .iter()
            .map(|(site, law)| match law {
                VertexLaw::Dirichlet { beta_total, beta } => serde_json::json!({
                    "site": site,
                    "branch": "dirichlet",
                    "beta_total": beta_total.to_json_value(),
                    "beta": beta.iter().map(Value::to_json_value).collect::<Vec<_>>(),
                }),
                VertexLaw::Deterministic { c } => serde_json::json!({
                    "site": site,
                    "branch": "deterministic",
                    "c": c.iter().map(Value::to_json_value).collect::<Vec<_>>(),
                }),
            })
            .collect();
        serde_json::json!({
            "verdict": verdict,
            "n_max": self.n_max,
            "mode": self.diagnostics.mode,
            "failed_stage": self.diagnostics.failed_stage,
            "diagnostics": {
                "edge_ratios": self.diagnostics.edge_ratios.as_ref().map(|t| t.to_json(g)),
                "factorization": self.diagnostics.factorization.as_ref().map(|t| t.to_json(g)),
                "residuals": self.diagnostics.residuals.as_ref().map(|t| t.to_json()),
                "gauge": self.diagnostics.gauge.as_ref().map(|t| t.to_json()),
                "classifications": classifications,
            },
        })
    }

    /// Canonical serialization: compact JSON with sorted keys, suitable for
    /// byte-for-byte comparisons.
    pub fn to_json_string(&self, g: &DirectedGraph) -> String {
        self.to_json(g).to_string()
    }
}

fn graph_preconditions(g: &DirectedGraph) -> Result<DirectedGraph, ReconstructionError> {
    use ReconstructionError::GraphPreconditionViolated as Bad;
    if g.has_self_loops() {
        return Err(Bad("graph has self-loops".into()));
    }
    let rev = reverse_graph(g);
    let all_forced = g.vertices().all(|v| g.out_degree(v) == 1)
        && rev.vertices().all(|v| rev.out_degree(v) == 1);
    if g.vertex_count() < 3 && !all_forced {
        return Err(Bad("need at least 3 vertices unless every row is forced".into()));
    }
    if !is_two_connected(g) {
        return Err(Bad("graph must stay strongly connected after any single vertex removal".into()));
    }
    if !is_two_connected(&rev) {
        return Err(Bad("reversed graph must stay strongly connected after any single vertex removal".into()));
    }
    Ok(rev)
}

/// Runs the whole pipeline and classifies the pair of families as Dirichlet
/// with per-edge weights, deterministic, or inconsistent. Stage failures
/// become an Inconsistent verdict carrying the stage witness; only broken
/// graph preconditions or an insufficient degree budget are hard errors.
pub fn characterize(
    g: &DirectedGraph,
    f: &MomentOracle,
    f_rev: &MomentOracle,
    n_max: u32,
) -> Result<ReconstructionResult, ReconstructionError> {
    if n_max < 3 {
        return Err(ReconstructionError::UnsupportedDegree {
            needed: 3,
            got: n_max,
        });
    }
    let rev = graph_preconditions(g)?;
    let policy = policy_for(&[f, f_rev]);
    let mut diag = Diagnostics {
        mode: match policy {
            EqualityPolicy::Exact => "exact".into(),
            EqualityPolicy::KSigma(k) => format!("{k}-sigma"),
        },
        ..Diagnostics::default()
    };

    macro_rules! stage {
        ($name:expr, $expr:expr) => {
            match $expr {
                Ok(v) => v,
                Err(witness) => {
                    diag.failed_stage = Some($name);
                    return Ok(ReconstructionResult {
                        verdict: Verdict::Inconsistent { witness },
                        n_max,
                        diagnostics: diag,
                    });
                }
            }
        };
    }

    stage!("validate", {
        let validation = validate_moment_oracle(g, f, n_max);
        match validation.witness {
            None => Ok(()),
            Some(w) => Err(ReconstructionError::OracleInvalid {
                side: "forward".into(),
                violation: w.to_json(g),
            }),
        }
    });
    stage!("validate", {
        let validation = validate_moment_oracle(&rev, f_rev, n_max);
        match validation.witness {
            None => Ok(()),
            Some(w) => Err(ReconstructionError::OracleInvalid {
                side: "reversed".into(),
                violation: w.to_json(&rev),
            }),
        }
    });

    let ratios = stage!("edge_ratios", edge_ratios(g, f, f_rev, n_max));
    diag.edge_ratios = Some(ratios.clone());

    let fact = stage!(
        "derive_factorization",
        derive_factorization(g, &ratios, f, n_max)
    );
    diag.factorization = Some(fact.clone());

    let residuals = stage!(
        "recover_gauge",
        ResidualSystem::from_factorization(g, f, f_rev, &fact, n_max)
    );
    diag.residuals = Some(residuals.clone());
    let gauge = stage!("recover_gauge", recover_gauge(&residuals, n_max));
    diag.gauge = Some(gauge.clone());

    // Gauge-corrected per-vertex tables, forward then reversed.
    let mut sites: Vec<PipelineSite> = Vec::new();
    for (graph, oracle, reversed) in [(g, f, false), (&rev, f_rev, true)] {
        for x in graph.vertices() {
            let row: Vec<Edge> = graph.out_edges(x).collect();
            if row.is_empty() {
                continue;
            }
            let label = format!("{}{}", if reversed { "rev:" } else { "fwd:" }, graph.name(x));
            let slots: Vec<String> = row.iter().map(|&e| graph.edge_name(e)).collect();
            let mut values = BTreeMap::new();
            let mut failure: Option<ReconstructionError> = None;
            let mut buf = vec![0u32; row.len()];
            for d in 0..=n_max {
                compositions(&mut buf, 0, d, &mut |exps| {
                    if failure.is_some() {
                        return;
                    }
                    match ExponentMultiset::new(graph, x, exps.to_vec())
                        .map_err(ReconstructionError::from)
                        .and_then(|m| oracle.evaluate(graph, &m).map_err(Into::into))
                    {
                        Ok(v) => {
                            values.insert(exps.to_vec(), v);
                        }
                        Err(e) => failure = Some(e),
                    }
                });
            }
            stage!("classify", failure.map_or(Ok(()), Err));
            let h_prime: Vec<Vec<Value>> = row
                .iter()
                .map(|&e| {
                    let original = if reversed { e.reversed() } else { e };
                    (0..=n_max)
                        .map(|n| {
                            gauge
                                .delta(n)
                                .mul(fact.h(original, n).expect("factorization covers edges"))
                        })
                        .collect()
                })
                .collect();
            let h_tilde_prime: Vec<Value> = (0..=n_max)
                .map(|n| {
                    gauge
                        .delta(n)
                        .mul(fact.h_tilde(x, n).expect("factorization covers vertices"))
                })
                .collect();
            let edges = row
                .iter()
                .map(|&e| if reversed { e.reversed() } else { e })
                .collect();
            let table = stage!(
                "classify",
                VertexTable::new(label, slots, values, h_prime, h_tilde_prime)
            );
            sites.push(PipelineSite {
                reversed,
                edges,
                table,
            });
        }
    }

    let mut laws: Vec<VertexLaw> = Vec::new();
    for site in &sites {
        let law = stage!("classify", classify_vertex(&site.table));
        diag.classifications
            .push((site.table.label().to_owned(), law.clone()));
        laws.push(law);
    }

    // All-or-nothing: one deterministic row forces all rows deterministic.
    let verdict = stage!("assemble", {
        let dirichlet_site = sites
            .iter()
            .zip(&laws)
            .find(|(_, l)| matches!(l, VertexLaw::Dirichlet { .. }));
        let deterministic_site = sites
            .iter()
            .zip(&laws)
            .find(|(_, l)| matches!(l, VertexLaw::Deterministic { .. }));
        match (dirichlet_site, deterministic_site) {
            (Some((ds, _)), Some((ts, _))) => Err(ReconstructionError::BranchConflict {
                dirichlet_site: ds.table.label().to_owned(),
                deterministic_site: ts.table.label().to_owned(),
            }),
            (Some(_), None) => assemble_dirichlet(g, &sites, &laws, policy),
            _ => assemble_deterministic(&sites, &laws, policy),
        }
    });

    Ok(ReconstructionResult {
        verdict,
        n_max,
        diagnostics: diag,
    })
}

struct PipelineSite {
    reversed: bool,
    // Slot edges in original-graph terms; reversed rows list the edges they
    // mirror, so both row kinds write into the same per-edge maps.
    edges: Vec<Edge>,
    table: VertexTable,
}

fn assemble_dirichlet(
    g: &DirectedGraph,
    sites: &[PipelineSite],
    laws: &[VertexLaw],
    policy: EqualityPolicy,
) -> Result<Verdict, ReconstructionError> {
    let mut forward: BTreeMap<Edge, Value> = BTreeMap::new();
    let mut backward: BTreeMap<Edge, Value> = BTreeMap::new();
    for (site, law) in sites.iter().zip(laws) {
        let beta = match law {
            VertexLaw::Dirichlet { beta, .. } => beta,
            VertexLaw::Deterministic { .. } => unreachable!("branch already checked"),
        };
        let target = if site.reversed {
            &mut backward
        } else {
            &mut forward
        };
        for (&e, b) in site.edges.iter().zip(beta) {
            target.insert(e, b.clone());
        }
    }
    for (&e, fwd) in &forward {
        let bwd = backward.get(&e).expect("every edge has a head site");
        if !policy.equal(fwd, bwd) {
            return Err(ReconstructionError::BetaMismatch {
                edge: g.edge_name(e),
                forward: fwd.clone(),
                reversed: bwd.clone(),
            });
        }
    }
    let mut null_divergence = true;
    for x in g.vertices() {
        let mut out_sum = Value::from_int(0);
        for e in g.out_edges(x) {
            out_sum = out_sum.add(&forward[&e]);
        }
        let mut in_sum = Value::from_int(0);
        for e in g.in_edges(x) {
            in_sum = in_sum.add(&forward[&e]);
        }
        if !policy.equal(&out_sum, &in_sum) {
            null_divergence = false;
        }
    }
    Ok(Verdict::Dirichlet {
        beta: forward,
        null_divergence,
    })
}

fn assemble_deterministic(
    sites: &[PipelineSite],
    laws: &[VertexLaw],
    policy: EqualityPolicy,
) -> Result<Verdict, ReconstructionError> {
    let mut c: BTreeMap<Edge, Value> = BTreeMap::new();
    for (site, law) in sites.iter().zip(laws) {
        if site.reversed {
            continue;
        }
        let values = match law {
            VertexLaw::Deterministic { c } => c,
            VertexLaw::Dirichlet { .. } => unreachable!("branch already checked"),
        };
        let mut row_sum = Value::from_int(0);
        for (&e, v) in site.edges.iter().zip(values) {
            row_sum = row_sum.add(v);
            c.insert(e, v.clone());
        }
        if !policy.equal(&row_sum, &Value::one()) {
            return Err(ReconstructionError::FormMismatch {
                site: site.table.label().to_owned(),
                form: "row_sum".into(),
                multiset: "{}".into(),
                expected: Value::one(),
                got: row_sum,
            });
        }
    }
    Ok(Verdict::Deterministic { c })
}
