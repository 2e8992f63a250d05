//! Thin command-line front end over revwalk-core. Every subcommand parses
//! JSON inputs, calls one library entry point, and writes a JSON report.
//!
//! Exit codes: 0 success / verdict pass, 1 verdict failure (incompatible,
//! inconsistent, dependence detected, check failed), 2 usage or input error
//! with a one-line diagnostic on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use revwalk_core::graph::{is_strongly_connected, is_two_connected, reverse_graph, DirectedGraph};
use revwalk_core::{
    characterize, check_compatibility, enumerate_null_flows, independence_test,
    nondirichlet_sampler, reverse_environment, reversed_weights, sample_dirichlet_environment,
    verify_reversal_law, Environment, EnvironmentSampler, MomentOracle, WeightFamily,
};

/// Default RNG seed for all sampling subcommands, so bare invocations are
/// reproducible.
const DEFAULT_SEED: u64 = 17;

#[derive(Parser)]
#[command(
    name = "revwalk",
    version,
    about = "Random environments, exact time reversal, and law reconstruction on directed graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structural reports on a directed graph
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Integer circulations with bounded total
    Flows {
        #[command(subcommand)]
        cmd: FlowsCmd,
    },
    /// Sample and reverse random environments
    Env {
        #[command(subcommand)]
        cmd: EnvCmd,
    },
    /// Moment compatibility between a forward and a reversed oracle
    Compat {
        #[command(subcommand)]
        cmd: CompatCmd,
    },
    /// Simulation check: reversed Dirichlet moments against the closed form
    VerifyReversal(VerifyReversalArgs),
    /// Reconstruct the row law (Dirichlet or deterministic) from moments
    Characterize(CharacterizeArgs),
    /// Cross-site dependence scan of reversed environments
    IndependenceTest(IndependenceTestArgs),
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Report strong connectivity and 2-connectivity of a graph and its reversal
    Check {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FlowsCmd {
    /// List all null-divergence integer flows with total at most the bound
    Enum {
        #[arg(long)]
        graph: PathBuf,
        /// Largest flow total to enumerate
        #[arg(long, default_value_t = 4)]
        max_total: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EnvCmd {
    /// Draw one random environment (Dirichlet from weights, or a named family)
    Sample {
        #[arg(long)]
        graph: PathBuf,
        /// Dirichlet weights JSON; mutually exclusive with --spec
        #[arg(long, conflicts_with = "spec")]
        alpha: Option<PathBuf>,
        /// Non-Dirichlet family: "logit-normal" or "mixture"
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time-reverse an environment onto the reversed graph
    Reverse {
        #[arg(long)]
        graph: PathBuf,
        /// Environment JSON as produced by `env sample`
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CompatCmd {
    /// Verify the product identity over all bounded null-divergence flows
    Check {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        alpha: PathBuf,
        /// Largest flow total to check
        #[arg(long, default_value_t = 4)]
        max_total: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct VerifyReversalArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    alpha: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Closed-form rational oracles built from the weights
    Exact,
    /// Empirical oracles estimated from seeded samples
    Float,
}

#[derive(Args)]
struct CharacterizeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    alpha: PathBuf,
    /// Largest total moment degree fed to the reconstruction
    #[arg(long, default_value_t = 4)]
    n_max: u32,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Sample count for --mode float
    #[arg(long, default_value_t = 2_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct IndependenceTestArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Dirichlet weights JSON; pick exactly one of --alpha, --spec, --env
    #[arg(long, conflicts_with_all = ["spec", "env"])]
    alpha: Option<PathBuf>,
    /// Non-Dirichlet family: "logit-normal" or "mixture"
    #[arg(long, conflicts_with = "env")]
    spec: Option<String>,
    /// Fixed environment JSON (declared-constant sampler)
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_graph(path: &Path) -> Result<DirectedGraph, String> {
    DirectedGraph::from_json(&read_file(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_alpha(g: &DirectedGraph, path: &Path) -> Result<WeightFamily, String> {
    WeightFamily::from_json(g, &read_file(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), String> {
    let mut body = text.to_owned();
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match output {
        Some(path) => fs::write(path, body).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn emit_json(report: &serde_json::Value, output: Option<&Path>) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    emit(&text, output)
}

fn run(command: Command) -> Result<u8, String> {
    match command {
        Command::Graph {
            cmd: GraphCmd::Check { graph, output },
        } => {
            let g = load_graph(&graph)?;
            let rev = reverse_graph(&g);
            let strongly_connected = is_strongly_connected(&g);
            let two_connected = is_two_connected(&g);
            let reversed_two_connected = is_two_connected(&rev);
            let report = serde_json::json!({
                "vertices": g.vertex_count(),
                "edges": g.edge_count(),
                "strongly_connected": strongly_connected,
                "two_connected": two_connected,
                "reversed_two_connected": reversed_two_connected,
                "has_self_loops": g.has_self_loops(),
            });
            emit_json(&report, output.as_deref())?;
            let pass = strongly_connected
                && two_connected
                && reversed_two_connected
                && !g.has_self_loops();
            Ok(if pass { 0 } else { 1 })
        }

        Command::Flows {
            cmd: FlowsCmd::Enum {
                graph,
                max_total,
                output,
            },
        } => {
            let g = load_graph(&graph)?;
            let flows = enumerate_null_flows(&g, max_total).map_err(|e| e.to_string())?;
            let items: Vec<serde_json::Value> = flows
                .iter()
                .map(|f| serde_json::from_str(&f.flow().to_json(&g)).expect("flow JSON parses"))
                .collect();
            let report = serde_json::json!({
                "max_total": max_total,
                "count": items.len(),
                "flows": items,
            });
            emit_json(&report, output.as_deref())?;
            Ok(0)
        }

        Command::Env {
            cmd: EnvCmd::Sample {
                graph,
                alpha,
                spec,
                seed,
                output,
            },
        } => {
            let g = load_graph(&graph)?;
            let env = match (alpha, spec) {
                (Some(path), None) => {
                    let alpha = load_alpha(&g, &path)?;
                    sample_dirichlet_environment(&g, &alpha, seed).map_err(|e| e.to_string())?
                }
                (None, Some(spec)) => {
                    revwalk_core::sample_nondirichlet_environment(&g, &spec, seed)
                        .map_err(|e| e.to_string())?
                }
                _ => return Err("pass exactly one of --alpha or --spec".into()),
            };
            emit(&env.to_json(&g), output.as_deref())?;
            Ok(0)
        }

        Command::Env {
            cmd: EnvCmd::Reverse { graph, env, output },
        } => {
            let g = load_graph(&graph)?;
            let omega = Environment::from_json(&g, &read_file(&env)?)
                .map_err(|e| format!("{}: {e}", env.display()))?;
            let reversed = reverse_environment(&g, &omega).map_err(|e| e.to_string())?;
            emit(&reversed.to_json(&reverse_graph(&g)), output.as_deref())?;
            Ok(0)
        }

        Command::Compat {
            cmd: CompatCmd::Check {
                graph,
                alpha,
                max_total,
                output,
            },
        } => {
            let g = load_graph(&graph)?;
            let alpha = load_alpha(&g, &alpha)?;
            let f = MomentOracle::dirichlet(alpha.clone());
            let f_rev = MomentOracle::dirichlet(reversed_weights(&g, &alpha));
            let policy = f.natural_policy();
            let report =
                check_compatibility(&g, &f, &f_rev, max_total, policy).map_err(|e| e.to_string())?;
            let mut json = report.to_json(&g);
            json["witness"] = match report.first_failure() {
                Some(r) => serde_json::json!({
                    "flow": r.flow.flow().to_json(&g).parse::<serde_json::Value>().expect("flow JSON parses"),
                    "left": r.left.to_json_value(),
                    "right": r.right.to_json_value(),
                }),
                None => serde_json::Value::Null,
            };
            emit_json(&json, output.as_deref())?;
            Ok(if report.pass { 0 } else { 1 })
        }

        Command::VerifyReversal(VerifyReversalArgs {
            graph,
            alpha,
            samples,
            seed,
            output,
        }) => {
            let g = load_graph(&graph)?;
            let alpha = load_alpha(&g, &alpha)?;
            let check =
                verify_reversal_law(&g, &alpha, samples, seed).map_err(|e| e.to_string())?;
            emit_json(&check.to_json(&reverse_graph(&g)), output.as_deref())?;
            Ok(if check.pass { 0 } else { 1 })
        }

        Command::Characterize(CharacterizeArgs {
            graph,
            alpha,
            n_max,
            mode,
            samples,
            seed,
            output,
        }) => {
            let g = load_graph(&graph)?;
            let alpha = load_alpha(&g, &alpha)?;
            let rev = reverse_graph(&g);
            let (f, f_rev) = match mode {
                Mode::Exact => (
                    MomentOracle::dirichlet(alpha.clone()),
                    MomentOracle::dirichlet(reversed_weights(&g, &alpha)),
                ),
                Mode::Float => {
                    let mut envs = Vec::with_capacity(samples);
                    let mut rev_envs = Vec::with_capacity(samples);
                    for i in 0..samples {
                        let env = sample_dirichlet_environment(&g, &alpha, seed + i as u64)
                            .map_err(|e| e.to_string())?;
                        rev_envs.push(reverse_environment(&g, &env).map_err(|e| e.to_string())?);
                        envs.push(env);
                    }
                    (
                        MomentOracle::empirical(&g, &envs).map_err(|e| e.to_string())?,
                        MomentOracle::empirical(&rev, &rev_envs).map_err(|e| e.to_string())?,
                    )
                }
            };
            let result = characterize(&g, &f, &f_rev, n_max).map_err(|e| e.to_string())?;
            emit_json(&result.to_json(&g), output.as_deref())?;
            Ok(if result.is_inconsistent() { 1 } else { 0 })
        }

        Command::IndependenceTest(IndependenceTestArgs {
            graph,
            alpha,
            spec,
            env,
            samples,
            seed,
            output,
        }) => {
            let g = load_graph(&graph)?;
            let sampler = match (alpha, spec, env) {
                (Some(path), None, None) => EnvironmentSampler::Dirichlet {
                    alpha: load_alpha(&g, &path)?,
                },
                (None, Some(spec), None) => {
                    nondirichlet_sampler(&g, &spec).map_err(|e| e.to_string())?
                }
                (None, None, Some(path)) => EnvironmentSampler::Deterministic {
                    env: Environment::from_json(&g, &read_file(&path)?)
                        .map_err(|e| format!("{}: {e}", path.display()))?,
                },
                _ => return Err("pass exactly one of --alpha, --spec, or --env".into()),
            };
            let report =
                independence_test(&g, &sampler, samples, seed).map_err(|e| e.to_string())?;
            emit_json(&report.to_json(), output.as_deref())?;
            Ok(if report.dependent { 1 } else { 0 })
        }
    }
}
