//! Weighted random walks on finite directed graphs, their time reversal,
//! and the moment machinery that pins down which weight laws survive it.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: directed graphs, connectivity predicates, edge reversal,
//!   disjoint path search.
//! * [`flows`]: nonnegative integer edge flows with zero divergence,
//!   enumeration and cycle decomposition.
//! * [`environment`]: transition-weight assignments, Dirichlet sampling,
//!   stationary distributions and the reversed environment.
//! * [`moments`]: per-vertex moment oracles, validation, and the
//!   compatibility check between an environment law and its reversal.
//! * [`reconstruction`]: recovering the weight law (Dirichlet or
//!   deterministic) from a compatible pair of moment oracle families.
//! * [`montecarlo`]: sampling-based estimates of reversed moments and
//!   independence diagnostics for non-product laws.

// Error types carry structured witnesses (flows, tables, slot names); a fat
// Err is deliberate, not an accident worth boxing away.
#![allow(clippy::result_large_err)]

pub mod environment;
pub mod flows;
pub mod graph;
pub mod moments;
pub mod montecarlo;
pub mod numeric;
pub mod reconstruction;

pub use environment::{
    reverse_environment, reversed_weights, sample_dirichlet_environment,
    sample_dirichlet_environment_from_rng, stationary_distribution, weight_divergence_is_null,
    Environment, EnvironmentError, StationaryDistribution, WeightFamily, WeightMode,
};
pub use flows::{
    decompose_into_cycles, divergence, enumerate_null_flows, FlowError, IntFlow,
    NullDivergenceFlow,
};
pub use moments::{
    check_compatibility, dirichlet_moment, rising_factorial, validate_moment_oracle,
    CompatibilityRecord, CompatibilityReport, ExponentMultiset, MomentError, MomentOracle,
    OracleValidation, OracleViolation,
};
pub use graph::{
    all_simple_cycles, build_graph, disjoint_paths_hold, disjoint_paths_to_target,
    is_strongly_connected, is_two_connected, reverse_graph, DirectedGraph, Edge, GraphError, Path,
    SimpleCycle, VertexId,
};
pub use montecarlo::{
    estimate_reversed_moments, independence_test, nondirichlet_sampler,
    sample_nondirichlet_environment, verify_reversal_law, CrossSiteStatistic, EnvironmentSampler,
    IndependenceReport, MomentEstimate, MonteCarloError, ReversalCheck, ReversalMomentRecord,
    DEPENDENCE_THRESHOLD, EQUALITY_THRESHOLD,
};
pub use reconstruction::{
    characterize, classify_vertex, derive_factorization, derive_factorization_alt_paths,
    edge_ratios, recover_gauge, Diagnostics, EdgeRatioTable, EdgeVertexFactorization, Gauge,
    ReconstructionError, ReconstructionResult, ResidualSite, ResidualSystem, Verdict, VertexLaw,
    VertexTable,
};
