//! Sampling-side verification of the reversal law and a falsification
//! harness for the converse: environments with independent non-Dirichlet
//! rows (or non-null divergence) produce statistically dependent reversals.
//!
//! Everything here is seeded and deterministic: sample i always comes from
//! stream i of a counter-based generator, and reductions run in fixed order,
//! so reports are byte-identical across runs regardless of parallelism.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::environment::{
    reverse_environment, reversed_weights, sample_dirichlet_environment_from_rng, Environment,
    EnvironmentError, WeightFamily,
};
use crate::graph::{is_strongly_connected, reverse_graph, DirectedGraph, Edge};
use crate::moments::{ExponentMultiset, MomentOracle};
use crate::numeric::rat_to_f64;

/// Equality checks accept estimates within this many standard errors.
pub const EQUALITY_THRESHOLD: f64 = 4.0;

/// Dependence is declared only beyond this many standard errors; wider than
/// the equality band so both false-positive directions stay rare.
pub const DEPENDENCE_THRESHOLD: f64 = 5.0;

#[derive(Clone, Debug, Error)]
pub enum MonteCarloError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("graph must be strongly connected")]
    NotStronglyConnected,
    #[error("weights must have null divergence")]
    NullDivergenceRequired,
    #[error("sampler produced a constant {functional} at non-forced row {site}")]
    DegenerateSampler { site: String, functional: String },
    #[error("unknown sampler spec {0:?}, expected \"logit-normal\" or \"mixture\"")]
    UnknownSpec(String),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

/// Draws one environment per call. `Deterministic` declares itself constant
/// so downstream variance checks know zero spread is intended.
#[derive(Clone, Debug)]
pub enum EnvironmentSampler {
    Dirichlet { alpha: WeightFamily },
    Deterministic { env: Environment },
    LogitNormal { sigma: f64 },
    DirichletMixture {
        alpha_a: WeightFamily,
        alpha_b: WeightFamily,
        weight_a: f64,
    },
}

impl EnvironmentSampler {
    pub fn is_constant(&self) -> bool {
        matches!(self, EnvironmentSampler::Deterministic { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            EnvironmentSampler::Dirichlet { .. } => "dirichlet",
            EnvironmentSampler::Deterministic { .. } => "deterministic",
            EnvironmentSampler::LogitNormal { .. } => "logit-normal",
            EnvironmentSampler::DirichletMixture { .. } => "mixture",
        }
    }

    pub fn draw(
        &self,
        g: &DirectedGraph,
        rng: &mut ChaCha8Rng,
    ) -> Result<Environment, MonteCarloError> {
        match self {
            EnvironmentSampler::Dirichlet { alpha } => {
                Ok(sample_dirichlet_environment_from_rng(g, alpha, rng)?)
            }
            EnvironmentSampler::Deterministic { env } => Ok(env.clone()),
            EnvironmentSampler::LogitNormal { sigma } => {
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
                    let logits: Vec<f64> = row
                        .iter()
                        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    for (&e, w) in row.iter().zip(&weights) {
                        omega.insert(e, w / total);
                    }
                }
                Ok(Environment::new_float(g, omega)?)
            }
            EnvironmentSampler::DirichletMixture {
                alpha_a,
                alpha_b,
                weight_a,
            } => {
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
                    let pick_a = rng.gen::<f64>() < *weight_a;
                    let family = if pick_a { alpha_a } else { alpha_b };
                    let draws: Vec<f64> = row
                        .iter()
                        .map(|&e| {
                            Gamma::new(family.get_f64(e), 1.0)
                                .expect("weights are positive")
                                .sample(rng)
                        })
                        .collect();
                    let total: f64 = draws.iter().sum();
                    for (&e, &v) in row.iter().zip(&draws) {
                        omega.insert(e, v / total);
                    }
                }
                Ok(Environment::new_float(g, omega)?)
            }
        }
    }
}

/// Standard falsification fixtures: rows independent across vertices, each
/// row a valid probability vector, law deliberately not Dirichlet.
pub fn nondirichlet_sampler(
    g: &DirectedGraph,
    spec: &str,
) -> Result<EnvironmentSampler, MonteCarloError> {
    match spec {
        // sigma = 2 pushes rows far enough from every Dirichlet law that
        // reversal-induced dependence clears the detection threshold at
        // 200k samples; sigma = 1 is nearly indistinguishable from a
        // symmetric Dirichlet and needs an order of magnitude more.
        "logit-normal" => Ok(EnvironmentSampler::LogitNormal { sigma: 2.0 }),
        "mixture" => Ok(EnvironmentSampler::DirichletMixture {
            alpha_a: WeightFamily::constant(g, crate::numeric::rat(1, 2))
                .expect("1/2 is positive"),
            alpha_b: WeightFamily::constant(g, crate::numeric::rat_int(8))
                .expect("8 is positive"),
            weight_a: 0.5,
        }),
        other => Err(MonteCarloError::UnknownSpec(other.to_owned())),
    }
}

/// One seeded draw from a falsification fixture family.
pub fn sample_nondirichlet_environment(
    g: &DirectedGraph,
    spec: &str,
    seed: u64,
) -> Result<Environment, MonteCarloError> {
    let sampler = nondirichlet_sampler(g, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    sampler.draw(g, &mut rng)
}

fn stream_rng(seed: u64, sample_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_index as u64);
    rng
}

/// Monte Carlo estimate of one reversed-environment moment.
#[derive(Clone, Debug)]
pub struct MomentEstimate {
    pub target: ExponentMultiset,
    pub estimate: f64,
    pub se: f64,
    pub n_samples: usize,
}

impl MomentEstimate {
    pub fn to_json(&self, rev: &DirectedGraph) -> serde_json::Value {
        serde_json::json!({
            "target": self.target.to_json(rev),
            "estimate": self.estimate,
            "se": self.se,
            "n_samples": self.n_samples,
        })
    }
}

/// Samples environments from Dirichlet(alpha), reverses each one exactly,
/// and estimates the requested monomials of the reversed environment. The
/// targets are exponent multisets on the reversed graph.
pub fn estimate_reversed_moments(
    g: &DirectedGraph,
    alpha: &WeightFamily,
    targets: &[ExponentMultiset],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>, MonteCarloError> {
    if n_samples < 100 {
        return Err(MonteCarloError::TooFewSamples {
            needed: 100,
            got: n_samples,
        });
    }
    if !is_strongly_connected(g) {
        return Err(MonteCarloError::NotStronglyConnected);
    }
    let rev = reverse_graph(g);
    let mut sums = vec![0.0f64; targets.len()];
    let mut sums_sq = vec![0.0f64; targets.len()];
    for i in 0..n_samples {
        let mut rng = stream_rng(seed, i);
        let env = sample_dirichlet_environment_from_rng(g, alpha, &mut rng)?;
        let tilde = reverse_environment(g, &env)?;
        for (t, target) in targets.iter().enumerate() {
            let mut value = 1.0;
            for (e, n) in rev.out_edges(target.vertex()).zip(target.exponents()) {
                value *= tilde.prob_f64(e).powi(*n as i32);
            }
            sums[t] += value;
            sums_sq[t] += value * value;
        }
    }
    let n = n_samples as f64;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let mean = sums[t] / n;
            let var = ((sums_sq[t] - sums[t] * sums[t] / n) / (n - 1.0)).max(0.0);
            MomentEstimate {
                target: target.clone(),
                estimate: mean,
                se: (var / n).sqrt(),
                n_samples,
            }
        })
        .collect())
}

/// Covariance of one functional pair across two reversed rows.
#[derive(Clone, Debug)]
pub struct CrossSiteStatistic {
    pub site_a: String,
    pub site_b: String,
    pub functional_a: String,
    pub functional_b: String,
    pub covariance: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct IndependenceReport {
    pub sampler: String,
    pub n_samples: usize,
    pub threshold: f64,
    pub statistics: Vec<CrossSiteStatistic>,
    pub max_abs_z: f64,
    pub dependent: bool,
}

impl IndependenceReport {
    pub fn to_json(&self) -> serde_json::Value {
        let stats: Vec<serde_json::Value> = self
            .statistics
            .iter()
            .map(|s| {
                serde_json::json!({
                    "site_a": s.site_a,
                    "site_b": s.site_b,
                    "functional_a": s.functional_a,
                    "functional_b": s.functional_b,
                    "covariance": s.covariance,
                    "se": s.se,
                    "z": s.z,
                })
            })
            .collect();
        serde_json::json!({
            "sampler": self.sampler,
            "n_samples": self.n_samples,
            "threshold": self.threshold,
            "max_abs_z": self.max_abs_z,
            "dependent": self.dependent,
            "statistics": stats,
        })
    }
}

/// Covariance with a leave-one-out jackknife standard error, computed from
/// running sums so the scan stays O(n) per pair.
fn jackknife_covariance(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cov = sab / n - (sa / n) * (sb / n);
    let m = n - 1.0;
    let mut leave_out = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let mean_a = (sa - x) / m;
        let mean_b = (sb - y) / m;
        leave_out.push((sab - x * y) / m - mean_a * mean_b);
    }
    let jack_mean: f64 = leave_out.iter().sum::<f64>() / n;
    let ss: f64 = leave_out.iter().map(|c| (c - jack_mean).powi(2)).sum();
    let se = (m / n * ss).sqrt();
    (cov, se)
}

/// Tests cross-site independence of the reversed environment: draws
/// environments from the sampler, reverses each exactly, and forms the first
/// and second monomials of every non-forced reversed row. Every functional
/// pair living at distinct vertices gets a covariance, a jackknife SE, and a
/// z-score; dependence is declared when max |z| exceeds the threshold.
pub fn independence_test(
    g: &DirectedGraph,
    sampler: &EnvironmentSampler,
    n_samples: usize,
    seed: u64,
) -> Result<IndependenceReport, MonteCarloError> {
    if n_samples < 1000 {
        return Err(MonteCarloError::TooFewSamples {
            needed: 1000,
            got: n_samples,
        });
    }
    if !is_strongly_connected(g) {
        return Err(MonteCarloError::NotStronglyConnected);
    }
    let rev = reverse_graph(g);

    // Functional family: first and second powers of the first out-edge of
    // each non-forced reversed row. Forced rows are constant by definition
    // and carry no information.
    struct Functional {
        site: String,
        label: String,
        edge: Edge,
        power: i32,
    }
    let mut functionals = Vec::new();
    for x in rev.vertices() {
        let row: Vec<Edge> = rev.out_edges(x).collect();
        if row.len() < 2 {
            continue;
        }
        for power in 1..=2 {
            functionals.push(Functional {
                site: rev.name(x).to_owned(),
                label: format!("m{power}[{}]", rev.edge_name(row[0])),
                edge: row[0],
                power,
            });
        }
    }

    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); functionals.len()];
    for i in 0..n_samples {
        let mut rng = stream_rng(seed, i);
        let env = sampler.draw(g, &mut rng)?;
        let tilde = reverse_environment(g, &env)?;
        for (f, values) in functionals.iter().zip(&mut samples) {
            values.push(tilde.prob_f64(f.edge).powi(f.power));
        }
    }

    if !sampler.is_constant() {
        for (f, values) in functionals.iter().zip(&samples) {
            let first = values[0];
            if values.iter().all(|&v| v == first) {
                return Err(MonteCarloError::DegenerateSampler {
                    site: f.site.clone(),
                    functional: f.label.clone(),
                });
            }
        }
    }

    let mut statistics = Vec::new();
    let mut max_abs_z = 0.0f64;
    for i in 0..functionals.len() {
        for j in (i + 1)..functionals.len() {
            if functionals[i].site == functionals[j].site {
                continue;
            }
            let (cov, se) = jackknife_covariance(&samples[i], &samples[j]);
            let z = if se > 0.0 { cov / se } else { 0.0 };
            max_abs_z = max_abs_z.max(z.abs());
            statistics.push(CrossSiteStatistic {
                site_a: functionals[i].site.clone(),
                site_b: functionals[j].site.clone(),
                functional_a: functionals[i].label.clone(),
                functional_b: functionals[j].label.clone(),
                covariance: cov,
                se,
                z,
            });
        }
    }

    Ok(IndependenceReport {
        sampler: sampler.label().to_owned(),
        n_samples,
        threshold: DEPENDENCE_THRESHOLD,
        statistics,
        max_abs_z,
        dependent: max_abs_z > DEPENDENCE_THRESHOLD,
    })
}

/// One moment comparison inside a reversal-law report.
#[derive(Clone, Debug)]
pub struct ReversalMomentRecord {
    pub target: ExponentMultiset,
    pub estimate: f64,
    pub se: f64,
    pub exact: f64,
    pub z: f64,
    pub pass: bool,
}

/// Combined verdict: reversed moments match Dirichlet(reversed weights) and
/// cross-site independence is not rejected.
#[derive(Clone, Debug)]
pub struct ReversalCheck {
    pub n_samples: usize,
    pub seed: u64,
    pub moments: Vec<ReversalMomentRecord>,
    pub independence: IndependenceReport,
    pub pass: bool,
}

impl ReversalCheck {
    pub fn to_json(&self, rev: &DirectedGraph) -> serde_json::Value {
        let moments: Vec<serde_json::Value> = self
            .moments
            .iter()
            .map(|r| {
                serde_json::json!({
                    "target": r.target.to_json(rev),
                    "estimate": r.estimate,
                    "se": r.se,
                    "exact": r.exact,
                    "z": r.z,
                    "pass": r.pass,
                })
            })
            .collect();
        serde_json::json!({
            "n_samples": self.n_samples,
            "seed": self.seed,
            "moments": moments,
            "independence": self.independence.to_json(),
            "pass": self.pass,
        })
    }
}

/// Checks the reversal law by simulation: every first and second moment of
/// the reversed environment must match the closed-form Dirichlet value under
/// the reversed weights within the equality threshold, and the independence
/// test must not reject. Requires null divergence up front; without it the
/// law makes no prediction to check.
pub fn verify_reversal_law(
    g: &DirectedGraph,
    alpha: &WeightFamily,
    n_samples: usize,
    seed: u64,
) -> Result<ReversalCheck, MonteCarloError> {
    if !crate::environment::weight_divergence_is_null(g, alpha) {
        return Err(MonteCarloError::NullDivergenceRequired);
    }
    let rev = reverse_graph(g);
    let mut targets = Vec::new();
    for x in rev.vertices() {
        for e in rev.out_edges(x) {
            targets.push(ExponentMultiset::single(&rev, e, 1));
            targets.push(ExponentMultiset::single(&rev, e, 2));
        }
    }
    let estimates = estimate_reversed_moments(g, alpha, &targets, n_samples, seed)?;
    let oracle = MomentOracle::dirichlet(reversed_weights(g, alpha));
    let mut moments = Vec::with_capacity(estimates.len());
    let mut all_pass = true;
    for est in estimates {
        let exact = rat_to_f64(
            oracle
                .evaluate(&rev, &est.target)
                .expect("dirichlet oracle is total")
                .as_exact()
                .expect("dirichlet oracle is exact"),
        );
        let diff = est.estimate - exact;
        let (z, pass) = if est.se > 0.0 {
            (diff / est.se, diff.abs() <= EQUALITY_THRESHOLD * est.se)
        } else {
            (0.0, diff == 0.0)
        };
        all_pass &= pass;
        moments.push(ReversalMomentRecord {
            target: est.target,
            estimate: est.estimate,
            se: est.se,
            exact,
            z,
            pass,
        });
    }
    let independence = independence_test(
        g,
        &EnvironmentSampler::Dirichlet {
            alpha: alpha.clone(),
        },
        n_samples,
        seed,
    )?;
    let pass = all_pass && !independence.dependent;
    Ok(ReversalCheck {
        n_samples,
        seed,
        moments,
        independence,
        pass,
    })
}
