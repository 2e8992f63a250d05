//! Per-vertex moment oracles and the compatibility identity tying an oracle
//! family on a graph to one on the reversed graph.
//!
//! A moment oracle assigns to each vertex a positive value for every
//! exponent multiset over that vertex's outgoing edges, modeling
//! E[prod_y w(x,y)^(n_xy)]. Closed-form oracles are evaluated in exact
//! rational arithmetic; empirical oracles carry standard errors.

use std::collections::BTreeMap;

use num::Signed;
use thiserror::Error;

use crate::environment::{Environment, WeightFamily};
use crate::flows::{enumerate_null_flows, FlowError, NullDivergenceFlow};
use crate::graph::{reverse_graph, DirectedGraph, Edge, VertexId};
use crate::numeric::{rat_int, relative_diff, EqualityPolicy, Rat, Value};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MomentError {
    #[error("non-positive alpha")]
    NonPositiveAlpha,
    #[error("exponent row has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("oracle has no entry for {0}")]
    MissingTableEntry(String),
    #[error("empirical oracle needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("oracle does not match this graph: {0}")]
    GraphMismatch(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Exponents over the outgoing edges of one vertex, in canonical edge order.
/// Zero entries are kept so the key set is exactly the vertex's edge row.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct ExponentMultiset {
    vertex: VertexId,
    exponents: Vec<u32>,
}

impl ExponentMultiset {
    pub fn new(
        g: &DirectedGraph,
        vertex: VertexId,
        exponents: Vec<u32>,
    ) -> Result<Self, MomentError> {
        if exponents.len() != g.out_degree(vertex) {
            return Err(MomentError::DimensionMismatch {
                expected: g.out_degree(vertex),
                got: exponents.len(),
            });
        }
        Ok(ExponentMultiset { vertex, exponents })
    }

    pub fn zero(g: &DirectedGraph, vertex: VertexId) -> Self {
        ExponentMultiset {
            vertex,
            exponents: vec![0; g.out_degree(vertex)],
        }
    }

    /// n times the indicator of one outgoing edge.
    pub fn single(g: &DirectedGraph, edge: Edge, n: u32) -> Self {
        let mut m = ExponentMultiset::zero(g, edge.from);
        let slot = g
            .out_edges(edge.from)
            .position(|e| e == edge)
            .expect("edge leaves its own tail");
        m.exponents[slot] = n;
        m
    }

    pub fn vertex(&self) -> VertexId {
        self.vertex
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// Same multiset with slot `j` raised by one.
    pub fn bump(&self, j: usize) -> Self {
        let mut out = self.clone();
        out.exponents[j] += 1;
        out
    }

    /// Every multiset at `vertex` with degree at most `max_degree`, ordered
    /// by degree then lexicographically.
    pub fn all_up_to(g: &DirectedGraph, vertex: VertexId, max_degree: u32) -> Vec<Self> {
        let r = g.out_degree(vertex);
        let mut out = Vec::new();
        for d in 0..=max_degree {
            let mut comp = vec![0u32; r];
            compositions(&mut comp, 0, d, &mut |exps| {
                out.push(ExponentMultiset {
                    vertex,
                    exponents: exps.to_vec(),
                })
            });
        }
        out
    }

    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        let exps: BTreeMap<String, u32> = g
            .out_edges(self.vertex)
            .zip(&self.exponents)
            .filter(|&(_, &n)| n > 0)
            .map(|(e, &n)| (g.edge_name(e), n))
            .collect();
        serde_json::json!({ "vertex": g.name(self.vertex), "exponents": exps })
    }
}

pub(crate) fn compositions(buf: &mut [u32], pos: usize, rest: u32, emit: &mut impl FnMut(&[u32])) {
    if buf.is_empty() {
        if rest == 0 {
            emit(buf);
        }
        return;
    }
    if pos == buf.len() - 1 {
        buf[pos] = rest;
        emit(buf);
        buf[pos] = 0;
        return;
    }
    for k in 0..=rest {
        buf[pos] = k;
        compositions(buf, pos + 1, rest - k, emit);
    }
    buf[pos] = 0;
}

/// Product of `n` consecutive factors starting at `a`; 1 when `n` is 0.
pub fn rising_factorial(a: &Rat, n: u32) -> Rat {
    let mut acc = rat_int(1);
    for i in 0..n {
        acc *= a + rat_int(i as i64);
    }
    acc
}

/// Moment of a Dirichlet vector: prod_i H(alpha_i, n_i) / H(sum alpha, sum n)
/// where H is the rising factorial. Exact for rational parameters.
pub fn dirichlet_moment(alpha_row: &[Rat], exponents: &[u32]) -> Result<Rat, MomentError> {
    if alpha_row.len() != exponents.len() {
        return Err(MomentError::DimensionMismatch {
            expected: alpha_row.len(),
            got: exponents.len(),
        });
    }
    if alpha_row.iter().any(|a| !a.is_positive()) {
        return Err(MomentError::NonPositiveAlpha);
    }
    let total_alpha: Rat = alpha_row.iter().cloned().sum();
    let total_n: u32 = exponents.iter().sum();
    let mut num = rat_int(1);
    for (a, &n) in alpha_row.iter().zip(exponents) {
        num *= rising_factorial(a, n);
    }
    Ok(num / rising_factorial(&total_alpha, total_n))
}

/// Per-vertex moment evaluator.
#[derive(Clone, Debug)]
pub enum MomentOracle {
    /// Closed form for independent Dirichlet rows with the given weights.
    Dirichlet { alpha: WeightFamily },
    /// Point mass at a fixed environment: moments are plain monomials.
    Deterministic { c: BTreeMap<Edge, Rat> },
    /// Explicit value table; anything outside the table is an error.
    Table { values: BTreeMap<ExponentMultiset, Rat> },
    /// Monomial means over a stored sample set, with standard errors.
    Empirical { samples: BTreeMap<Edge, Vec<f64>> },
}

impl MomentOracle {
    pub fn dirichlet(alpha: WeightFamily) -> Self {
        MomentOracle::Dirichlet { alpha }
    }

    pub fn deterministic(c: BTreeMap<Edge, Rat>) -> Result<Self, MomentError> {
        if c.values().any(|w| !w.is_positive()) {
            return Err(MomentError::NonPositiveAlpha);
        }
        Ok(MomentOracle::Deterministic { c })
    }

    /// Point-mass oracle at an exact environment.
    pub fn deterministic_from_environment(
        g: &DirectedGraph,
        env: &Environment,
    ) -> Result<Self, MomentError> {
        let c = g
            .edges()
            .iter()
            .map(|&e| {
                env.prob_exact(e)
                    .cloned()
                    .map(|w| (e, w))
                    .ok_or_else(|| MomentError::GraphMismatch("environment is not exact".into()))
            })
            .collect::<Result<_, _>>()?;
        MomentOracle::deterministic(c)
    }

    pub fn table(values: BTreeMap<ExponentMultiset, Rat>) -> Self {
        MomentOracle::Table { values }
    }

    /// Tabulates another oracle at every vertex up to `max_degree`. Useful
    /// for mutation tests and gauge experiments.
    pub fn table_from(
        g: &DirectedGraph,
        oracle: &MomentOracle,
        max_degree: u32,
    ) -> Result<Self, MomentError> {
        let mut values = BTreeMap::new();
        for v in g.vertices() {
            for m in ExponentMultiset::all_up_to(g, v, max_degree) {
                let val = oracle.evaluate(g, &m)?;
                let exact = val
                    .as_exact()
                    .ok_or_else(|| MomentError::GraphMismatch("oracle is not exact".into()))?;
                values.insert(m, exact.clone());
            }
        }
        Ok(MomentOracle::Table { values })
    }

    /// Stores per-edge sample columns from a set of environments.
    pub fn empirical(
        g: &DirectedGraph,
        envs: &[Environment],
    ) -> Result<Self, MomentError> {
        if envs.len() < 2 {
            return Err(MomentError::TooFewSamples(envs.len()));
        }
        let mut samples: BTreeMap<Edge, Vec<f64>> = BTreeMap::new();
        for &e in g.edges() {
            samples.insert(e, envs.iter().map(|w| w.prob_f64(e)).collect());
        }
        Ok(MomentOracle::Empirical { samples })
    }

    /// The equality notion this oracle's values support.
    pub fn natural_policy(&self) -> EqualityPolicy {
        match self {
            MomentOracle::Empirical { .. } => EqualityPolicy::KSigma(4.0),
            _ => EqualityPolicy::Exact,
        }
    }

    pub fn evaluate(
        &self,
        g: &DirectedGraph,
        n: &ExponentMultiset,
    ) -> Result<Value, MomentError> {
        let row: Vec<Edge> = g.out_edges(n.vertex()).collect();
        if row.len() != n.exponents().len() {
            return Err(MomentError::DimensionMismatch {
                expected: row.len(),
                got: n.exponents().len(),
            });
        }
        match self {
            MomentOracle::Dirichlet { alpha } => {
                let alpha_row: Vec<Rat> = row.iter().map(|&e| alpha.get(e).clone()).collect();
                Ok(Value::Exact(dirichlet_moment(&alpha_row, n.exponents())?))
            }
            MomentOracle::Deterministic { c } => {
                let mut acc = rat_int(1);
                for (&e, &k) in row.iter().zip(n.exponents()) {
                    let w = c
                        .get(&e)
                        .ok_or_else(|| MomentError::MissingTableEntry(g.edge_name(e)))?;
                    for _ in 0..k {
                        acc *= w;
                    }
                }
                Ok(Value::Exact(acc))
            }
            MomentOracle::Table { values } => values
                .get(n)
                .cloned()
                .map(Value::Exact)
                .ok_or_else(|| {
                    MomentError::MissingTableEntry(n.to_json(g).to_string())
                }),
            MomentOracle::Empirical { samples } => {
                let cols: Vec<&Vec<f64>> = row
                    .iter()
                    .map(|e| {
                        samples
                            .get(e)
                            .ok_or_else(|| MomentError::MissingTableEntry(g.edge_name(*e)))
                    })
                    .collect::<Result<_, _>>()?;
                let count = cols.first().map_or(0, |c| c.len());
                if count < 2 {
                    return Err(MomentError::TooFewSamples(count));
                }
                let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
                for s in 0..count {
                    let mut prod = 1.0f64;
                    for (col, &k) in cols.iter().zip(n.exponents()) {
                        prod *= col[s].powi(k as i32);
                    }
                    sum += prod;
                    sumsq += prod * prod;
                }
                let nf = count as f64;
                let mean = sum / nf;
                let var = ((sumsq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
                Ok(Value::Estimate {
                    mean,
                    se: (var / nf).sqrt(),
                })
            }
        }
    }
}

/// Failure found by [`validate_moment_oracle`]; failures are data, not errors.
#[derive(Clone, Debug)]
pub enum OracleViolation {
    /// f(0) differs from 1.
    UnitAtZero { multiset: ExponentMultiset, got: Value },
    /// f(n) differs from the sum of f(n + e_j) over the out-edges.
    SimplexIdentity {
        multiset: ExponentMultiset,
        lhs: Value,
        rhs: Value,
    },
    /// The oracle cannot produce a required value.
    MissingEntry { multiset: ExponentMultiset },
}

impl OracleViolation {
    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        match self {
            OracleViolation::UnitAtZero { multiset, got } => serde_json::json!({
                "rule": "unit_at_zero",
                "multiset": multiset.to_json(g),
                "got": got.to_json_value(),
            }),
            OracleViolation::SimplexIdentity { multiset, lhs, rhs } => serde_json::json!({
                "rule": "simplex_identity",
                "multiset": multiset.to_json(g),
                "lhs": lhs.to_json_value(),
                "rhs": rhs.to_json_value(),
            }),
            OracleViolation::MissingEntry { multiset } => serde_json::json!({
                "rule": "missing_entry",
                "multiset": multiset.to_json(g),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleValidation {
    pub pass: bool,
    pub witness: Option<OracleViolation>,
}

/// Checks f_x(0) = 1 at every vertex and the row-sum identity
/// f(n) = sum_j f(n + e_j) for every multiset of degree below `degree_max`.
/// Returns the first violation in (vertex, degree, lex) order.
pub fn validate_moment_oracle(
    g: &DirectedGraph,
    f: &MomentOracle,
    degree_max: u32,
) -> OracleValidation {
    let policy = f.natural_policy();
    let fail = |witness| OracleValidation {
        pass: false,
        witness: Some(witness),
    };
    for v in g.vertices() {
        if g.out_degree(v) == 0 {
            continue;
        }
        let zero = ExponentMultiset::zero(g, v);
        match f.evaluate(g, &zero) {
            Ok(val) => {
                if !policy.equal(&val, &Value::one()) {
                    return fail(OracleViolation::UnitAtZero {
                        multiset: zero,
                        got: val,
                    });
                }
            }
            Err(_) => return fail(OracleViolation::MissingEntry { multiset: zero }),
        }
        for m in ExponentMultiset::all_up_to(g, v, degree_max.saturating_sub(1)) {
            let lhs = match f.evaluate(g, &m) {
                Ok(val) => val,
                Err(_) => return fail(OracleViolation::MissingEntry { multiset: m }),
            };
            let mut rhs = Value::from_int(0);
            for j in 0..g.out_degree(v) {
                let bumped = m.bump(j);
                match f.evaluate(g, &bumped) {
                    Ok(val) => rhs = rhs.add(&val),
                    Err(_) => {
                        return fail(OracleViolation::MissingEntry { multiset: bumped })
                    }
                }
            }
            if !policy.equal(&lhs, &rhs) {
                return fail(OracleViolation::SimplexIdentity {
                    multiset: m,
                    lhs,
                    rhs,
                });
            }
        }
    }
    OracleValidation {
        pass: true,
        witness: None,
    }
}

#[derive(Clone, Debug)]
pub struct CompatibilityRecord {
    pub flow: NullDivergenceFlow,
    pub left: Value,
    pub right: Value,
    pub pass: bool,
}

/// Truncated verification of the product identity between `f` and a reversed
/// oracle over every enumerated null-divergence flow.
#[derive(Clone, Debug)]
pub struct CompatibilityReport {
    /// Truncation level: only flows with total at most this were checked.
    pub max_total: u64,
    pub records: Vec<CompatibilityRecord>,
    pub pass: bool,
    pub max_relative_discrepancy: f64,
}

impl CompatibilityReport {
    pub fn first_failure(&self) -> Option<&CompatibilityRecord> {
        self.records.iter().find(|r| !r.pass)
    }

    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        let records: Vec<serde_json::Value> = self
            .records
            .iter()
            .map(|r| {
                let flow: BTreeMap<String, u64> = r
                    .flow
                    .flow()
                    .support()
                    .map(|(e, k)| (g.edge_name(e), k))
                    .collect();
                serde_json::json!({
                    "flow": flow,
                    "left": r.left.to_json_value(),
                    "right": r.right.to_json_value(),
                    "pass": r.pass,
                })
            })
            .collect();
        serde_json::json!({
            "max_total": self.max_total,
            "flows_checked": self.records.len(),
            "pass": self.pass,
            "max_relative_discrepancy": self.max_relative_discrepancy,
            "records": records,
        })
    }
}

/// Exponents a flow induces at `x` on the forward graph: the flow values on
/// the outgoing edges of `x`.
pub(crate) fn flow_exponents_out(
    g: &DirectedGraph,
    x: VertexId,
    flow: &NullDivergenceFlow,
) -> ExponentMultiset {
    let exps = g
        .out_edges(x)
        .map(|e| u32::try_from(flow.flow().get(e)).expect("flow totals fit in u32"))
        .collect();
    ExponentMultiset::new(g, x, exps).expect("row length matches by construction")
}

/// Exponents the same flow induces at `x` on the reversed graph: the value on
/// reversed edge (x,z) is the flow on the original edge (z,x).
pub(crate) fn flow_exponents_transported(
    rev: &DirectedGraph,
    x: VertexId,
    flow: &NullDivergenceFlow,
) -> ExponentMultiset {
    let exps = rev
        .out_edges(x)
        .map(|e| u32::try_from(flow.flow().get(e.reversed())).expect("flow totals fit in u32"))
        .collect();
    ExponentMultiset::new(rev, x, exps).expect("row length matches by construction")
}

/// Compares prod_x f_x(N restricted to out-edges) with the reversed product
/// for every null-divergence flow N with total at most `max_total`.
///
/// `f_rev` must be an oracle on `reverse_graph(g)`. No finite truncation can
/// certify the full identity; the report records the truncation used.
pub fn check_compatibility(
    g: &DirectedGraph,
    f: &MomentOracle,
    f_rev: &MomentOracle,
    max_total: u64,
    policy: EqualityPolicy,
) -> Result<CompatibilityReport, MomentError> {
    let rev = reverse_graph(g);
    let flows = enumerate_null_flows(g, max_total)?;
    let mut records = Vec::with_capacity(flows.len());
    let mut pass = true;
    let mut max_rel: f64 = 0.0;
    for flow in flows {
        let mut left = Value::one();
        for x in g.vertices() {
            if g.out_degree(x) == 0 {
                continue;
            }
            left = left.mul(&f.evaluate(g, &flow_exponents_out(g, x, &flow))?);
        }
        let mut right = Value::one();
        for x in rev.vertices() {
            if rev.out_degree(x) == 0 {
                continue;
            }
            right = right.mul(&f_rev.evaluate(&rev, &flow_exponents_transported(&rev, x, &flow))?);
        }
        let ok = policy.equal(&left, &right);
        pass &= ok;
        max_rel = max_rel.max(relative_diff(&left, &right));
        records.push(CompatibilityRecord {
            flow,
            left,
            right,
            pass: ok,
        });
    }
    Ok(CompatibilityReport {
        max_total,
        records,
        pass,
        max_relative_discrepancy: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{reversed_weights, sample_dirichlet_environment};
    use crate::graph::build_graph;
    use crate::numeric::rat;

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

    fn edge(g: &DirectedGraph, from: &str, to: &str) -> Edge {
        Edge::new(g.vertex(from).unwrap(), g.vertex(to).unwrap())
    }

    /// K3 weights with alpha(a->b) = 2 and 1 elsewhere; out-sum at a is 3
    /// while its in-sum is 2, so the divergence is not null.
    fn skewed_alpha(g: &DirectedGraph) -> WeightFamily {
        let mut alpha: BTreeMap<Edge, Rat> =
            g.edges().iter().map(|&e| (e, rat_int(1))).collect();
        alpha.insert(edge(g, "a", "b"), rat_int(2));
        WeightFamily::new(g, alpha).unwrap()
    }

    #[test]
    fn rising_factorial_basics() {
        assert_eq!(rising_factorial(&rat(7, 3), 0), rat_int(1));
        assert_eq!(rising_factorial(&rat_int(3), 2), rat_int(12));
        let mut fact = rat_int(1);
        for n in 1..=8u32 {
            fact *= rat_int(n as i64);
            assert_eq!(rising_factorial(&rat_int(1), n), fact);
        }
    }

    #[test]
    fn dirichlet_moment_small_cases() {
        let ones = [rat_int(1), rat_int(1)];
        assert_eq!(dirichlet_moment(&ones, &[1, 0]).unwrap(), rat(1, 2));
        assert_eq!(dirichlet_moment(&ones, &[2, 0]).unwrap(), rat(1, 3));
        let skew = [rat_int(2), rat_int(1)];
        assert_eq!(dirichlet_moment(&skew, &[1, 0]).unwrap(), rat(2, 3));
        assert_eq!(
            dirichlet_moment(&[rat_int(1)], &[5]).unwrap(),
            rat_int(1),
            "single-edge rows are deterministic"
        );
        assert!(matches!(
            dirichlet_moment(&[rat_int(0), rat_int(1)], &[1, 0]),
            Err(MomentError::NonPositiveAlpha)
        ));
        assert!(matches!(
            dirichlet_moment(&ones, &[1]),
            Err(MomentError::DimensionMismatch { .. })
        ));
    }

    /// Simpson quadrature for E[x^n] under Beta(a, b), independent of the
    /// rising-factorial formula.
    fn beta_moment_quadrature(a: f64, b: f64, n: u32) -> f64 {
        let f = |x: f64, extra: u32| x.powi((a - 1.0) as i32 + extra as i32) * (1.0 - x).powi((b - 1.0) as i32);
        let simpson = |extra: u32| {
            let steps = 20_000;
            let h = 1.0 / steps as f64;
            let mut acc = f(0.0, extra) + f(1.0, extra);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(i as f64 * h, extra);
            }
            acc * h / 3.0
        };
        simpson(n) / simpson(0)
    }

    #[test]
    fn dirichlet_moment_matches_quadrature() {
        for (a, b, n) in [(1i64, 1i64, 1u32), (1, 1, 2), (2, 1, 1), (3, 2, 2)] {
            let exact = dirichlet_moment(&[rat_int(a), rat_int(b)], &[n, 0]).unwrap();
            let numeric = beta_moment_quadrature(a as f64, b as f64, n);
            let exact_f = crate::numeric::rat_to_f64(&exact);
            assert!(
                (exact_f - numeric).abs() < 1e-8,
                "Beta({a},{b}) moment {n}: {exact_f} vs {numeric}"
            );
        }
    }

    #[test]
    fn multiset_enumeration_is_ordered() {
        let g = k3();
        let a = g.vertex("a").unwrap();
        let all = ExponentMultiset::all_up_to(&g, a, 2);
        let exps: Vec<&[u32]> = all.iter().map(|m| m.exponents()).collect();
        assert_eq!(
            exps,
            [
                &[0, 0][..],
                &[0, 1][..],
                &[1, 0][..],
                &[0, 2][..],
                &[1, 1][..],
                &[2, 0][..]
            ]
        );
    }

    #[test]
    fn dirichlet_oracle_validates() {
        let g = k3();
        let f = MomentOracle::dirichlet(skewed_alpha(&g));
        let report = validate_moment_oracle(&g, &f, 4);
        assert!(report.pass, "witness: {:?}", report.witness);
    }

    #[test]
    fn deterministic_oracle_validates_when_rows_sum_to_one() {
        let g = k3();
        let c: BTreeMap<Edge, Rat> = g.edges().iter().map(|&e| (e, rat(1, 2))).collect();
        let f = MomentOracle::deterministic(c.clone()).unwrap();
        assert!(validate_moment_oracle(&g, &f, 4).pass);

        let mut bad = c;
        bad.insert(edge(&g, "a", "b"), rat(1, 3));
        let f = MomentOracle::deterministic(bad).unwrap();
        let report = validate_moment_oracle(&g, &f, 3);
        assert!(!report.pass);
        assert!(matches!(
            report.witness,
            Some(OracleViolation::SimplexIdentity { .. })
        ));
    }

    #[test]
    fn table_oracle_normalization_witness() {
        let g = k3();
        let f = MomentOracle::dirichlet(WeightFamily::ones(&g));
        let mut table = match MomentOracle::table_from(&g, &f, 3).unwrap() {
            MomentOracle::Table { values } => values,
            _ => unreachable!(),
        };
        let a = g.vertex("a").unwrap();
        table.insert(ExponentMultiset::zero(&g, a), rat_int(2));
        let report = validate_moment_oracle(&g, &MomentOracle::table(table), 3);
        assert!(!report.pass);
        match report.witness {
            Some(OracleViolation::UnitAtZero { multiset, got }) => {
                assert_eq!(multiset.vertex(), a);
                assert_eq!(multiset.degree(), 0);
                assert_eq!(got.as_exact().unwrap(), &rat_int(2));
            }
            other => panic!("wrong witness: {other:?}"),
        }
    }

    #[test]
    fn table_oracle_missing_entry_witness() {
        let g = k3();
        let f = MomentOracle::dirichlet(WeightFamily::ones(&g));
        let table = MomentOracle::table_from(&g, &f, 1).unwrap();
        let report = validate_moment_oracle(&g, &table, 3);
        assert!(!report.pass);
        assert!(matches!(
            report.witness,
            Some(OracleViolation::MissingEntry { .. })
        ));
    }

    #[test]
    fn empirical_oracle_satisfies_row_identity() {
        let g = k3();
        let alpha = WeightFamily::ones(&g);
        let envs: Vec<Environment> = (0..200)
            .map(|seed| sample_dirichlet_environment(&g, &alpha, seed).unwrap())
            .collect();
        let f = MomentOracle::empirical(&g, &envs).unwrap();
        assert!(validate_moment_oracle(&g, &f, 3).pass);
    }

    #[test]
    fn compatibility_of_symmetric_dirichlet_on_k3() {
        let g = k3();
        let alpha = WeightFamily::ones(&g);
        let f = MomentOracle::dirichlet(alpha.clone());
        let f_rev = MomentOracle::dirichlet(reversed_weights(&g, &alpha));
        let report =
            check_compatibility(&g, &f, &f_rev, 6, EqualityPolicy::Exact).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_relative_discrepancy, 0.0);
        assert!(report.records[0].flow.flow().is_zero());
        assert_eq!(report.records[0].left.as_exact().unwrap(), &rat_int(1));
    }

    #[test]
    fn compatibility_zero_budget_is_trivial() {
        let g = k3();
        let f = MomentOracle::dirichlet(skewed_alpha(&g));
        let f_rev =
            MomentOracle::dirichlet(reversed_weights(&g, &skewed_alpha(&g)));
        let report = check_compatibility(&g, &f, &f_rev, 0, EqualityPolicy::Exact).unwrap();
        assert!(report.pass);
        assert_eq!(report.records.len(), 1);
    }

    /// With alpha(a->b) = 2 the divergence is non-null and the identity must
    /// fail. First failing flow in enumeration order, found by exhaustive
    /// search: the 2-cycle b->c->b, with product 1/4 against 1/6.
    #[test]
    fn compatibility_failure_witness_is_stable() {
        let g = k3();
        let alpha = skewed_alpha(&g);
        let f = MomentOracle::dirichlet(alpha.clone());
        let f_rev = MomentOracle::dirichlet(reversed_weights(&g, &alpha));
        let report = check_compatibility(&g, &f, &f_rev, 4, EqualityPolicy::Exact).unwrap();
        assert!(!report.pass);
        let witness = report.first_failure().unwrap();
        assert_eq!(
            witness.flow.flow().to_json(&g),
            "{\"b->c\":1,\"c->b\":1}"
        );
        assert_eq!(witness.left.as_exact().unwrap(), &rat(1, 4));
        assert_eq!(witness.right.as_exact().unwrap(), &rat(1, 6));
    }

    #[test]
    fn compatibility_is_symmetric_under_reversal() {
        let g = k3();
        let rev = reverse_graph(&g);
        for alpha in [WeightFamily::ones(&g), skewed_alpha(&g)] {
            let f = MomentOracle::dirichlet(alpha.clone());
            let f_rev = MomentOracle::dirichlet(reversed_weights(&g, &alpha));
            let forward =
                check_compatibility(&g, &f, &f_rev, 4, EqualityPolicy::Exact).unwrap();
            let backward =
                check_compatibility(&rev, &f_rev, &f, 4, EqualityPolicy::Exact).unwrap();
            assert_eq!(forward.pass, backward.pass);
            assert_eq!(forward.records.len(), backward.records.len());
        }
    }

    #[test]
    fn compatibility_reports_truncate_monotonically() {
        let g = k3();
        let alpha = WeightFamily::ones(&g);
        let f = MomentOracle::dirichlet(alpha.clone());
        let f_rev = MomentOracle::dirichlet(reversed_weights(&g, &alpha));
        let small = check_compatibility(&g, &f, &f_rev, 3, EqualityPolicy::Exact).unwrap();
        let large = check_compatibility(&g, &f, &f_rev, 5, EqualityPolicy::Exact).unwrap();
        assert!(small.records.len() < large.records.len());
        for (s, l) in small.records.iter().zip(&large.records) {
            assert_eq!(s.flow, l.flow);
            assert_eq!(s.pass, l.pass);
        }
    }

    #[test]
    fn empirical_compatibility_with_reversed_samples() {
        let g = k3();
        let alpha = WeightFamily::ones(&g);
        let forward: Vec<Environment> = (1000..2500)
            .map(|seed| sample_dirichlet_environment(&g, &alpha, seed).unwrap())
            .collect();
        let reversed: Vec<Environment> = forward
            .iter()
            .map(|w| crate::environment::reverse_environment(&g, w).unwrap())
            .collect();
        let f = MomentOracle::empirical(&g, &forward).unwrap();
        let f_rev = MomentOracle::empirical(&reverse_graph(&g), &reversed).unwrap();
        let report =
            check_compatibility(&g, &f, &f_rev, 2, EqualityPolicy::KSigma(4.0)).unwrap();
        assert!(
            report.pass,
            "max rel discrepancy {}",
            report.max_relative_discrepancy
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            /// Moments of a simplex-valued vector satisfy
            /// f(n) = sum_j f(n + e_j) because the coordinates sum to one.
            #[test]
            fn dirichlet_moments_respect_simplex_identity(
                row in (2usize..=4).prop_flat_map(|len| {
                    proptest::collection::vec(
                        (1i64..=12, 1i64..=6).prop_map(|(p, q)| rat(p, q)),
                        len,
                    )
                })
            ) {
                let dims = row.len();
                prop_assert_eq!(
                    dirichlet_moment(&row, &vec![0; dims]).unwrap(),
                    rat_int(1)
                );
                let mut exps = vec![0u32; dims];
                for _ in 0..200 {
                    let total: u32 = exps.iter().sum();
                    if total < 5 {
                        let lhs = dirichlet_moment(&row, &exps).unwrap();
                        let mut rhs = rat_int(0);
                        for j in 0..dims {
                            exps[j] += 1;
                            rhs += dirichlet_moment(&row, &exps).unwrap();
                            exps[j] -= 1;
                        }
                        prop_assert_eq!(&lhs, &rhs);
                    }
                    // odometer step over vectors with entries < 3
                    let mut k = 0;
                    loop {
                        if k == dims {
                            return Ok(());
                        }
                        exps[k] += 1;
                        if exps[k] < 3 {
                            break;
                        }
                        exps[k] = 0;
                        k += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn compatibility_report_json_shape() {
        let g = k3();
        let alpha = skewed_alpha(&g);
        let f = MomentOracle::dirichlet(alpha.clone());
        let f_rev = MomentOracle::dirichlet(reversed_weights(&g, &alpha));
        let report = check_compatibility(&g, &f, &f_rev, 2, EqualityPolicy::Exact).unwrap();
        let json = report.to_json(&g);
        assert_eq!(json["max_total"], 2);
        assert_eq!(json["pass"], false);
        assert_eq!(json["records"][1]["left"], "1/4");
        assert_eq!(json["records"][1]["right"], "1/6");
    }
}
