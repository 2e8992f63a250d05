//! Transition-weight environments on directed graphs: Dirichlet sampling,
//! stationary distributions, and the time-reversal map
//! `w~(x,y) = w(y,x) * pi_y / pi_x` living on the reversed graph.

use std::collections::BTreeMap;

use num::traits::Signed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::graph::{reverse_graph, DirectedGraph, Edge, VertexId};
use crate::numeric::{rat_from_f64, rat_from_str, rat_int, rat_to_f64, solve_dense, Rat};

const ROW_SUM_TOLERANCE: f64 = 1e-12;
const STATIONARY_RESIDUAL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EnvironmentError {
    #[error("non-positive weight on edge {0}")]
    NonPositiveAlpha(String),
    #[error("missing weight on edge {0}")]
    MissingWeight(String),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("stationary system is singular: {0}")]
    SingularSystem(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid weights JSON: {0}")]
    InvalidJson(String),
    #[error("sampling failed: {0}")]
    SamplingFailed(String),
}

/// Numeric representation carried by an [`Environment`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WeightMode {
    Exact,
    Float,
}

/// Positive per-edge Dirichlet parameters, kept as exact rationals with a
/// float cache for the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFamily {
    alpha: BTreeMap<Edge, Rat>,
    alpha_f64: BTreeMap<Edge, f64>,
}

impl WeightFamily {
    /// Validates positivity and exact coverage of the graph's edge set.
    pub fn new(g: &DirectedGraph, alpha: BTreeMap<Edge, Rat>) -> Result<Self, EnvironmentError> {
        for (&e, a) in &alpha {
            if g.edge_index(e).is_none() {
                return Err(EnvironmentError::UnknownEdge(format!("{e:?}")));
            }
            if !a.is_positive() {
                return Err(EnvironmentError::NonPositiveAlpha(g.edge_name(e)));
            }
        }
        for &e in g.edges() {
            if !alpha.contains_key(&e) {
                return Err(EnvironmentError::MissingWeight(g.edge_name(e)));
            }
        }
        let alpha_f64 = alpha.iter().map(|(&e, a)| (e, rat_to_f64(a))).collect();
        Ok(WeightFamily { alpha, alpha_f64 })
    }

    /// The constant family alpha = value on every edge.
    pub fn constant(g: &DirectedGraph, value: Rat) -> Result<Self, EnvironmentError> {
        let alpha = g.edges().iter().map(|&e| (e, value.clone())).collect();
        WeightFamily::new(g, alpha)
    }

    pub fn ones(g: &DirectedGraph) -> Self {
        WeightFamily::constant(g, rat_int(1)).expect("1 is positive")
    }

    pub fn get(&self, e: Edge) -> &Rat {
        &self.alpha[&e]
    }

    pub fn get_f64(&self, e: Edge) -> f64 {
        self.alpha_f64[&e]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, &Rat)> + '_ {
        self.alpha.iter().map(|(&e, a)| (e, a))
    }

    /// Parses `{"a->b": 1.0, "b->a": "3/2"}`; numbers are converted to their
    /// exact binary value, strings must be `p/q` or integer form.
    pub fn from_json(g: &DirectedGraph, text: &str) -> Result<Self, EnvironmentError> {
        let raw: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| EnvironmentError::InvalidJson(e.to_string()))?;
        let mut alpha = BTreeMap::new();
        for (label, value) in raw {
            let e = g
                .parse_edge_name(&label)
                .map_err(|_| EnvironmentError::UnknownEdge(label.clone()))?;
            let a = json_rational(&value)
                .map_err(|msg| EnvironmentError::InvalidJson(format!("{label}: {msg}")))?;
            alpha.insert(e, a);
        }
        WeightFamily::new(g, alpha)
    }

    pub fn to_json(&self, g: &DirectedGraph) -> String {
        let raw: BTreeMap<String, String> = self
            .alpha
            .iter()
            .map(|(&e, a)| (g.edge_name(e), a.to_string()))
            .collect();
        serde_json::to_string_pretty(&raw).expect("weight map serializes")
    }
}

fn json_rational(value: &serde_json::Value) -> Result<Rat, String> {
    match value {
        serde_json::Value::Number(n) => {
            let x = n.as_f64().ok_or("not a finite number")?;
            rat_from_f64(x).ok_or_else(|| "not a finite number".to_string())
        }
        serde_json::Value::String(s) => rat_from_str(s),
        other => Err(format!("expected number or rational string, got {other}")),
    }
}

/// Per-edge transition probabilities with unit row sums, in exact-rational
/// or float representation.
#[derive(Clone, Debug, PartialEq)]
pub enum Environment {
    Exact(BTreeMap<Edge, Rat>),
    Float(BTreeMap<Edge, f64>),
}

impl Environment {
    pub fn new_exact(
        g: &DirectedGraph,
        omega: BTreeMap<Edge, Rat>,
    ) -> Result<Self, EnvironmentError> {
        validate_coverage(g, omega.keys())?;
        for (&e, w) in &omega {
            if !w.is_positive() {
                return Err(EnvironmentError::InvalidEnvironment(format!(
                    "non-positive probability on {}",
                    g.edge_name(e)
                )));
            }
        }
        for x in g.vertices() {
            let sum: Rat = g.out_edges(x).map(|e| omega[&e].clone()).sum();
            if g.out_degree(x) > 0 && sum != rat_int(1) {
                return Err(EnvironmentError::InvalidEnvironment(format!(
                    "row at {} sums to {}, expected 1",
                    g.name(x),
                    sum
                )));
            }
        }
        Ok(Environment::Exact(omega))
    }

    pub fn new_float(
        g: &DirectedGraph,
        omega: BTreeMap<Edge, f64>,
    ) -> Result<Self, EnvironmentError> {
        validate_coverage(g, omega.keys())?;
        for (&e, &w) in &omega {
            // Negated form rejects NaN; `w <= 0.0` would let it through.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(w > 0.0) || !w.is_finite() {
                return Err(EnvironmentError::InvalidEnvironment(format!(
                    "non-positive probability on {}",
                    g.edge_name(e)
                )));
            }
        }
        for x in g.vertices() {
            let sum: f64 = g.out_edges(x).map(|e| omega[&e]).sum();
            if g.out_degree(x) > 0 && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(EnvironmentError::InvalidEnvironment(format!(
                    "row at {} sums to {sum}, expected 1",
                    g.name(x)
                )));
            }
        }
        Ok(Environment::Float(omega))
    }

    pub fn mode(&self) -> WeightMode {
        match self {
            Environment::Exact(_) => WeightMode::Exact,
            Environment::Float(_) => WeightMode::Float,
        }
    }

    pub fn prob_f64(&self, e: Edge) -> f64 {
        match self {
            Environment::Exact(m) => rat_to_f64(&m[&e]),
            Environment::Float(m) => m[&e],
        }
    }

    pub fn prob_exact(&self, e: Edge) -> Option<&Rat> {
        match self {
            Environment::Exact(m) => m.get(&e),
            Environment::Float(_) => None,
        }
    }

    pub fn from_json(g: &DirectedGraph, text: &str) -> Result<Self, EnvironmentError> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct EnvSpec {
            mode: String,
            omega: BTreeMap<String, serde_json::Value>,
        }
        let spec: EnvSpec =
            serde_json::from_str(text).map_err(|e| EnvironmentError::InvalidJson(e.to_string()))?;
        let mut exact = BTreeMap::new();
        let mut float = BTreeMap::new();
        for (label, value) in &spec.omega {
            let e = g
                .parse_edge_name(label)
                .map_err(|_| EnvironmentError::UnknownEdge(label.clone()))?;
            match spec.mode.as_str() {
                "exact" => {
                    let w = json_rational(value)
                        .map_err(|msg| EnvironmentError::InvalidJson(format!("{label}: {msg}")))?;
                    exact.insert(e, w);
                }
                "float" => {
                    let w = value
                        .as_f64()
                        .ok_or_else(|| EnvironmentError::InvalidJson(format!("{label}: not a number")))?;
                    float.insert(e, w);
                }
                other => {
                    return Err(EnvironmentError::InvalidJson(format!(
                        "unknown mode {other:?}"
                    )))
                }
            }
        }
        match spec.mode.as_str() {
            "exact" => Environment::new_exact(g, exact),
            _ => Environment::new_float(g, float),
        }
    }

    pub fn to_json(&self, g: &DirectedGraph) -> String {
        let (mode, omega): (&str, BTreeMap<String, serde_json::Value>) = match self {
            Environment::Exact(m) => (
                "exact",
                m.iter()
                    .map(|(&e, w)| (g.edge_name(e), serde_json::Value::String(w.to_string())))
                    .collect(),
            ),
            Environment::Float(m) => (
                "float",
                m.iter()
                    .map(|(&e, &w)| (g.edge_name(e), serde_json::json!(w)))
                    .collect(),
            ),
        };
        serde_json::to_string_pretty(&serde_json::json!({ "mode": mode, "omega": omega }))
            .expect("environment serializes")
    }
}

fn validate_coverage<'a>(
    g: &DirectedGraph,
    keys: impl Iterator<Item = &'a Edge>,
) -> Result<(), EnvironmentError> {
    let mut seen = vec![false; g.edge_count()];
    for &e in keys {
        match g.edge_index(e) {
            Some(i) => seen[i] = true,
            None => return Err(EnvironmentError::UnknownEdge(format!("{e:?}"))),
        }
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(EnvironmentError::MissingWeight(
            g.edge_name(g.edges()[i]),
        ));
    }
    Ok(())
}

/// Probability vector fixed by the transition kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum StationaryDistribution {
    Exact(BTreeMap<VertexId, Rat>),
    Float(BTreeMap<VertexId, f64>),
}

impl StationaryDistribution {
    pub fn get_f64(&self, v: VertexId) -> f64 {
        match self {
            StationaryDistribution::Exact(m) => rat_to_f64(&m[&v]),
            StationaryDistribution::Float(m) => m[&v],
        }
    }

    pub fn get_exact(&self, v: VertexId) -> Option<&Rat> {
        match self {
            StationaryDistribution::Exact(m) => m.get(&v),
            StationaryDistribution::Float(_) => None,
        }
    }

    pub fn to_json(&self, g: &DirectedGraph) -> serde_json::Value {
        match self {
            StationaryDistribution::Exact(m) => serde_json::Value::Object(
                m.iter()
                    .map(|(&v, p)| (g.name(v).to_owned(), serde_json::Value::String(p.to_string())))
                    .collect(),
            ),
            StationaryDistribution::Float(m) => serde_json::Value::Object(
                m.iter()
                    .map(|(&v, &p)| (g.name(v).to_owned(), serde_json::json!(p)))
                    .collect(),
            ),
        }
    }
}

/// Draws one environment: each vertex row is an independent Dirichlet vector
/// with that row's alpha parameters, realized as normalized Gamma variates.
/// Rows with a single outgoing edge are forced to probability 1 without
/// consuming randomness.
pub fn sample_dirichlet_environment(
    g: &DirectedGraph,
    alpha: &WeightFamily,
    seed: u64,
) -> Result<Environment, EnvironmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_dirichlet_environment_from_rng(g, alpha, &mut rng)
}

/// Sampler core taking an explicit generator, so callers can drive it from
/// per-sample counter streams.
pub fn sample_dirichlet_environment_from_rng<R: rand::Rng + ?Sized>(
    g: &DirectedGraph,
    alpha: &WeightFamily,
    rng: &mut R,
) -> Result<Environment, EnvironmentError> {
    // Revalidate against this graph; the family may have been built elsewhere.
    let alpha = WeightFamily::new(g, alpha.alpha.clone())?;
    let mut omega = BTreeMap::new();
    for x in g.vertices() {
        let row: Vec<Edge> = g.out_edges(x).collect();
        if row.is_empty() {
            continue;
        }
        if row.len() == 1 {
            omega.insert(row[0], 1.0);
            continue;
        }
        let gammas: Vec<Gamma<f64>> = row
            .iter()
            .map(|&e| Gamma::new(alpha.get_f64(e), 1.0).expect("weights are positive"))
            .collect();
        // Gamma draws can underflow to zero at tiny shapes; redraw the row.
        let mut attempts = 0;
        loop {
            let draws: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            if total.is_finite() && draws.iter().all(|&v| v > 0.0 && (v / total) > 0.0) {
                for (&e, &v) in row.iter().zip(&draws) {
                    omega.insert(e, v / total);
                }
                break;
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(EnvironmentError::SamplingFailed(format!(
                    "row at {} keeps underflowing; alpha too small",
                    g.name(x)
                )));
            }
        }
    }
    Environment::new_float(g, omega)
}

/// Unique probability vector pi with pi_x = sum_y w(y,x) pi_y.
///
/// Dense elimination on the fixed-point system with the last equation
/// replaced by the normalization constraint.
pub fn stationary_distribution(
    g: &DirectedGraph,
    omega: &Environment,
) -> Result<StationaryDistribution, EnvironmentError> {
    if !crate::graph::is_strongly_connected(g) {
        return Err(EnvironmentError::NotStronglyConnected);
    }
    match omega {
        Environment::Exact(m) => {
            validate_coverage(g, m.keys())?;
            let pi = solve_stationary(g, |e| m[&e].clone(), rat_int(0), rat_int(1))?;
            for (x, p) in &pi {
                if !p.is_positive() {
                    return Err(EnvironmentError::SingularSystem(format!(
                        "pi({}) = {p} is not positive",
                        g.name(*x)
                    )));
                }
            }
            // The solved system forces normalization and all but one
            // fixed-point row; that row is implied exactly. Re-check anyway.
            for x in g.vertices() {
                let inflow: Rat = g.in_edges(x).map(|e| m[&e].clone() * pi[&e.from].clone()).sum();
                if inflow != pi[&x] {
                    return Err(EnvironmentError::SingularSystem(format!(
                        "fixed point fails at {}",
                        g.name(x)
                    )));
                }
            }
            Ok(StationaryDistribution::Exact(pi))
        }
        Environment::Float(m) => {
            validate_coverage(g, m.keys())?;
            let pi = solve_stationary(g, |e| m[&e], 0.0, 1.0)?;
            let mut residual: f64 = 0.0;
            for x in g.vertices() {
                let inflow: f64 = g.in_edges(x).map(|e| m[&e] * pi[&e.from]).sum();
                residual = residual.max((inflow - pi[&x]).abs());
            }
            if residual > STATIONARY_RESIDUAL_TOLERANCE {
                return Err(EnvironmentError::SingularSystem(format!(
                    "residual {residual} exceeds tolerance"
                )));
            }
            // Negated form rejects NaN from a degenerate solve.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if pi.values().any(|&p| !(p > 0.0)) {
                return Err(EnvironmentError::SingularSystem(
                    "non-positive stationary entry".into(),
                ));
            }
            Ok(StationaryDistribution::Float(pi))
        }
    }
}

fn solve_stationary<T>(
    g: &DirectedGraph,
    w: impl Fn(Edge) -> T,
    zero: T,
    one: T,
) -> Result<BTreeMap<VertexId, T>, EnvironmentError>
where
    T: Clone + PartialOrd + Signed,
{
    let n = g.vertex_count();
    let mut a = vec![vec![zero.clone(); n]; n];
    let mut b = vec![zero; n];
    for x in g.vertices() {
        let i = x.index();
        a[i][i] = -one.clone();
        for e in g.in_edges(x) {
            let coeff = a[i][e.from.index()].clone() + w(e);
            a[i][e.from.index()] = coeff;
        }
    }
    // Normalization replaces the last fixed-point equation.
    a[n - 1].fill(one.clone());
    b[n - 1] = one;
    let x = solve_dense(a, b)
        .ok_or_else(|| EnvironmentError::SingularSystem("zero pivot".into()))?;
    Ok(g.vertices().zip(x).collect())
}

/// Environment of the time-reversed walk, on the reversed graph.
pub fn reverse_environment(
    g: &DirectedGraph,
    omega: &Environment,
) -> Result<Environment, EnvironmentError> {
    let pi = stationary_distribution(g, omega)?;
    let rev = reverse_graph(g);
    match (omega, &pi) {
        (Environment::Exact(m), StationaryDistribution::Exact(p)) => {
            let mut out = BTreeMap::new();
            for &re in rev.edges() {
                let orig = re.reversed();
                let w = m[&orig].clone() * p[&orig.from].clone() / p[&orig.to].clone();
                out.insert(re, w);
            }
            Environment::new_exact(&rev, out)
        }
        (Environment::Float(m), StationaryDistribution::Float(p)) => {
            let mut out = BTreeMap::new();
            for &re in rev.edges() {
                let orig = re.reversed();
                out.insert(re, m[&orig] * p[&orig.from] / p[&orig.to]);
            }
            // Rows sum to 1 in exact arithmetic; renormalize away the
            // stationary solve's float residue so validation stays strict
            // and forced rows come out bit-exact.
            for x in rev.vertices() {
                let total: f64 = rev.out_edges(x).map(|e| out[&e]).sum();
                for e in rev.out_edges(x) {
                    *out.get_mut(&e).expect("edge inserted above") /= total;
                }
            }
            Environment::new_float(&rev, out)
        }
        _ => unreachable!("stationary mode follows environment mode"),
    }
}

/// True iff out-weight equals in-weight at every vertex, exactly.
pub fn weight_divergence_is_null(g: &DirectedGraph, alpha: &WeightFamily) -> bool {
    g.vertices().all(|x| {
        let out: Rat = g.out_edges(x).map(|e| alpha.get(e).clone()).sum();
        let inn: Rat = g.in_edges(x).map(|e| alpha.get(e).clone()).sum();
        out == inn
    })
}

/// Weight family on the reversed graph carrying each edge's weight across
/// the flip. Involutive.
pub fn reversed_weights(g: &DirectedGraph, alpha: &WeightFamily) -> WeightFamily {
    let rev = reverse_graph(g);
    let map = g
        .edges()
        .iter()
        .map(|&e| (e.reversed(), alpha.get(e).clone()))
        .collect();
    WeightFamily::new(&rev, map).expect("reversal preserves positivity and coverage")
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn c3() -> DirectedGraph {
        build_graph(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("c", "a")]).unwrap()
    }

    fn edge(g: &DirectedGraph, from: &str, to: &str) -> Edge {
        Edge::new(g.vertex(from).unwrap(), g.vertex(to).unwrap())
    }

    fn exact_env(g: &DirectedGraph, entries: &[(&str, &str, Rat)]) -> Environment {
        let omega = entries
            .iter()
            .map(|(f, t, w)| (edge(g, f, t), w.clone()))
            .collect();
        Environment::new_exact(g, omega).unwrap()
    }

    /// Asymmetric rational environment on K3 used by the reversal fixtures.
    fn skewed_k3_env(g: &DirectedGraph) -> Environment {
        exact_env(
            g,
            &[
                ("a", "b", rat(1, 3)),
                ("a", "c", rat(2, 3)),
                ("b", "a", rat(1, 4)),
                ("b", "c", rat(3, 4)),
                ("c", "a", rat(1, 2)),
                ("c", "b", rat(1, 2)),
            ],
        )
    }

    #[test]
    fn weight_family_validation() {
        let g = k3();
        assert!(matches!(
            WeightFamily::constant(&g, rat_int(0)),
            Err(EnvironmentError::NonPositiveAlpha(_))
        ));
        let mut partial: BTreeMap<Edge, Rat> = g
            .edges()
            .iter()
            .map(|&e| (e, rat_int(1)))
            .collect();
        partial.remove(&edge(&g, "c", "b"));
        assert_eq!(
            WeightFamily::new(&g, partial).unwrap_err(),
            EnvironmentError::MissingWeight("c->b".into())
        );
    }

    #[test]
    fn weights_json_accepts_numbers_and_rational_strings() {
        let g = build_graph(&["a", "b"], &[("a", "b"), ("b", "a")]).unwrap();
        let fam =
            WeightFamily::from_json(&g, "{\"a->b\": 1.5, \"b->a\": \"3/2\"}").unwrap();
        assert_eq!(fam.get(edge(&g, "a", "b")), &rat(3, 2));
        assert_eq!(fam.get(edge(&g, "b", "a")), &rat(3, 2));
        assert!(matches!(
            WeightFamily::from_json(&g, "{\"a->z\": 1}"),
            Err(EnvironmentError::UnknownEdge(_))
        ));
    }

    #[test]
    fn sampling_on_c3_is_degenerate() {
        let g = c3();
        let env = sample_dirichlet_environment(&g, &WeightFamily::ones(&g), 7).unwrap();
        for &e in g.edges() {
            assert_eq!(env.prob_f64(e), 1.0);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let g = k3();
        let alpha = WeightFamily::ones(&g);
        let e1 = sample_dirichlet_environment(&g, &alpha, 42).unwrap();
        let e2 = sample_dirichlet_environment(&g, &alpha, 42).unwrap();
        assert_eq!(e1, e2);
        let e3 = sample_dirichlet_environment(&g, &alpha, 43).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn sampled_rows_sum_to_one() {
        let g = k3();
        let alpha = WeightFamily::constant(&g, rat(1, 2)).unwrap();
        for seed in 0..20 {
            let env = sample_dirichlet_environment(&g, &alpha, seed).unwrap();
            for x in g.vertices() {
                let sum: f64 = g.out_edges(x).map(|e| env.prob_f64(e)).sum();
                assert!((sum - 1.0).abs() <= ROW_SUM_TOLERANCE);
            }
        }
    }

    #[test]
    fn sample_moments_match_symmetric_dirichlet() {
        let g = k3();
        let alpha = WeightFamily::ones(&g);
        let ab = edge(&g, "a", "b");
        let n = 20_000;
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        let (mut q1, mut q2) = (0.0f64, 0.0f64);
        for seed in 0..n {
            let w = sample_dirichlet_environment(&g, &alpha, seed).unwrap().prob_f64(ab);
            s1 += w;
            q1 += w * w;
            s2 += w * w;
            q2 += w * w * w * w;
        }
        let nf = n as f64;
        let mean1 = s1 / nf;
        let se1 = ((q1 / nf - mean1 * mean1) / nf).sqrt();
        assert!((mean1 - 0.5).abs() <= 4.0 * se1, "mean {mean1} se {se1}");
        let mean2 = s2 / nf;
        let se2 = ((q2 / nf - mean2 * mean2) / nf).sqrt();
        // second moment of a Beta(1,1) marginal is 1/3
        assert!((mean2 - 1.0 / 3.0).abs() <= 4.0 * se2, "mean {mean2} se {se2}");
    }

    #[test]
    fn stationary_uniform_cases() {
        let g = k3();
        let env = exact_env(
            &g,
            &[
                ("a", "b", rat(1, 2)),
                ("a", "c", rat(1, 2)),
                ("b", "a", rat(1, 2)),
                ("b", "c", rat(1, 2)),
                ("c", "a", rat(1, 2)),
                ("c", "b", rat(1, 2)),
            ],
        );
        let pi = stationary_distribution(&g, &env).unwrap();
        for v in g.vertices() {
            assert_eq!(pi.get_exact(v).unwrap(), &rat(1, 3));
        }

        let g = c3();
        let env = exact_env(
            &g,
            &[
                ("a", "b", rat_int(1)),
                ("b", "c", rat_int(1)),
                ("c", "a", rat_int(1)),
            ],
        );
        let pi = stationary_distribution(&g, &env).unwrap();
        for v in g.vertices() {
            assert_eq!(pi.get_exact(v).unwrap(), &rat(1, 3));
        }

        let d2 = build_graph(&["a", "b"], &[("a", "b"), ("b", "a")]).unwrap();
        let env = exact_env(&d2, &[("a", "b", rat_int(1)), ("b", "a", rat_int(1))]);
        let pi = stationary_distribution(&d2, &env).unwrap();
        assert_eq!(pi.get_exact(d2.vertex("a").unwrap()).unwrap(), &rat(1, 2));
        assert_eq!(pi.get_exact(d2.vertex("b").unwrap()).unwrap(), &rat(1, 2));
    }

    #[test]
    fn stationary_requires_strong_connectivity() {
        let g = build_graph(&["a", "b"], &[("a", "b")]).unwrap();
        let env = Environment::Float(BTreeMap::from([(edge(&g, "a", "b"), 1.0)]));
        assert_eq!(
            stationary_distribution(&g, &env).unwrap_err(),
            EnvironmentError::NotStronglyConnected
        );
    }

    /// pi for the skewed K3 environment was solved by hand from the three
    /// fixed-point equations: pi = (15/53, 16/53, 22/53).
    #[test]
    fn stationary_matches_hand_solved_fixture() {
        let g = k3();
        let env = skewed_k3_env(&g);
        let pi = stationary_distribution(&g, &env).unwrap();
        assert_eq!(pi.get_exact(g.vertex("a").unwrap()).unwrap(), &rat(15, 53));
        assert_eq!(pi.get_exact(g.vertex("b").unwrap()).unwrap(), &rat(16, 53));
        assert_eq!(pi.get_exact(g.vertex("c").unwrap()).unwrap(), &rat(22, 53));
        // independent fixed-point predicate, not the solver
        for x in g.vertices() {
            let inflow: Rat = g
                .in_edges(x)
                .map(|e| env.prob_exact(e).unwrap() * pi.get_exact(e.from).unwrap())
                .sum();
            assert_eq!(&inflow, pi.get_exact(x).unwrap());
        }
    }

    /// Entrywise values of the reversed environment for the same fixture,
    /// computed by hand from w~(x,y) = w(y,x) pi_y / pi_x.
    #[test]
    fn reversal_matches_hand_solved_fixture() {
        let g = k3();
        let rev = reverse_environment(&g, &skewed_k3_env(&g)).unwrap();
        let expected = [
            ("a", "b", rat(4, 15)),
            ("a", "c", rat(11, 15)),
            ("b", "a", rat(5, 16)),
            ("b", "c", rat(11, 16)),
            ("c", "a", rat(5, 11)),
            ("c", "b", rat(6, 11)),
        ];
        for (f, t, w) in expected {
            assert_eq!(rev.prob_exact(edge(&g, f, t)).unwrap(), &w, "{f}->{t}");
        }
    }

    #[test]
    fn reversal_is_involutive_exactly_in_rational_mode() {
        let g = k3();
        let env = skewed_k3_env(&g);
        let back = reverse_environment(&reverse_graph(&g), &reverse_environment(&g, &env).unwrap())
            .unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn reversal_is_involutive_within_tolerance_in_float_mode() {
        let g = k3();
        for seed in 0..10 {
            let env = sample_dirichlet_environment(&g, &WeightFamily::ones(&g), seed).unwrap();
            let back =
                reverse_environment(&reverse_graph(&g), &reverse_environment(&g, &env).unwrap())
                    .unwrap();
            for &e in g.edges() {
                assert!((back.prob_f64(e) - env.prob_f64(e)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reversal_on_uniform_k3_is_identity() {
        let g = k3();
        let entries: Vec<(&str, &str, Rat)> = vec![
            ("a", "b", rat(1, 2)),
            ("a", "c", rat(1, 2)),
            ("b", "a", rat(1, 2)),
            ("b", "c", rat(1, 2)),
            ("c", "a", rat(1, 2)),
            ("c", "b", rat(1, 2)),
        ];
        let env = exact_env(&g, &entries);
        let rev = reverse_environment(&g, &env).unwrap();
        assert_eq!(rev, env);
    }

    #[test]
    fn reversal_on_c3_is_deterministic_cycle() {
        let g = c3();
        let env = exact_env(
            &g,
            &[
                ("a", "b", rat_int(1)),
                ("b", "c", rat_int(1)),
                ("c", "a", rat_int(1)),
            ],
        );
        let rev = reverse_environment(&g, &env).unwrap();
        let rg = reverse_graph(&g);
        for &e in rg.edges() {
            assert_eq!(rev.prob_exact(e).unwrap(), &rat_int(1));
        }
    }

    #[test]
    fn divergence_predicate_on_weights() {
        let g = k3();
        assert!(weight_divergence_is_null(&g, &WeightFamily::ones(&g)));
        let mut alpha: BTreeMap<Edge, Rat> =
            g.edges().iter().map(|&e| (e, rat_int(1))).collect();
        alpha.insert(edge(&g, "a", "b"), rat_int(2));
        let fam = WeightFamily::new(&g, alpha).unwrap();
        assert!(!weight_divergence_is_null(&g, &fam));

        let g = c3();
        let fam = WeightFamily::constant(&g, rat(7, 3)).unwrap();
        assert!(weight_divergence_is_null(&g, &fam));
    }

    #[test]
    fn reversed_weights_swaps_indices() {
        let g = k3();
        let mut alpha: BTreeMap<Edge, Rat> =
            g.edges().iter().map(|&e| (e, rat_int(1))).collect();
        alpha.insert(edge(&g, "a", "b"), rat_int(2));
        let fam = WeightFamily::new(&g, alpha).unwrap();
        let rev = reversed_weights(&g, &fam);
        assert_eq!(rev.get(edge(&g, "b", "a")), &rat_int(2));
        assert_eq!(rev.get(edge(&g, "a", "b")), &rat_int(1));
        let back = reversed_weights(&reverse_graph(&g), &rev);
        assert_eq!(back, fam);
    }

    #[test]
    fn environment_json_round_trip() {
        let g = k3();
        let env = skewed_k3_env(&g);
        let text = env.to_json(&g);
        assert!(text.contains("\"mode\": \"exact\""));
        assert_eq!(Environment::from_json(&g, &text).unwrap(), env);

        let sampled = sample_dirichlet_environment(&g, &WeightFamily::ones(&g), 5).unwrap();
        let text = sampled.to_json(&g);
        assert_eq!(Environment::from_json(&g, &text).unwrap(), sampled);
    }

    #[test]
    fn environment_rejects_bad_rows() {
        let g = k3();
        let mut omega: BTreeMap<Edge, Rat> = g
            .edges()
            .iter()
            .map(|&e| (e, rat(1, 2)))
            .collect();
        omega.insert(edge(&g, "a", "b"), rat(1, 3));
        assert!(matches!(
            Environment::new_exact(&g, omega),
            Err(EnvironmentError::InvalidEnvironment(_))
        ));
    }
}
