use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lbsim::experiment::{run_experiment, ExperimentConfig};
use lbsim::limits::{
    fixed_point_jsq, fixed_point_jsqd, fixed_point_pool, heavy_traffic_jsqd_ode, integrate_fluid,
    simulate_diffusion_jsq, simulate_diffusion_pool, FluidModel, PoolDiffusionCase,
};
use lbsim::oracles::{blocking_limit, enhancement_b_threshold, erlang_c, maxq_prediction, mm1_metrics, queueing_limit};
use lbsim::rng::{substream, Stream};
use lbsim::topology::{self, DisScale, Topology, EXACT_CAP};

#[derive(Parser)]
#[command(name = "lbsim", version, about = "Load-balancing simulator and limit solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file and write result tables.
    Run(RunArgs),
    /// Fluid and diffusion solvers.
    #[command(subcommand)]
    Solve(Solve),
    /// Closed-form reference values (JSON).
    #[command(subcommand)]
    Oracle(Oracle),
    /// Topology diagnostics (JSON).
    Graph(GraphArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML file.
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `output` from the file, else `results/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Jsqd,
    Jsq,
    Pool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Start {
    Empty,
    FixedPoint,
}

#[derive(Args)]
struct Grid {
    #[arg(long, default_value_t = 100.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Sampling interval of the output; 0 keeps only the endpoints.
    #[arg(long, default_value_t = 1.0)]
    sample: f64,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Solve {
    /// Integrate a fluid ODE (CSV: t,q_1,...).
    Fluid {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// Number of components `q_1..q_levels`.
        #[arg(long, default_value_t = 20)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = Start::Empty)]
        start: Start,
        #[command(flatten)]
        grid: Grid,
    },
    /// Closed-form fixed point (JSON).
    FixedPoint {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// Pool capacity; omitted means unbounded.
        #[arg(long)]
        capacity: Option<u32>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Euler-Maruyama paths of the reflected diffusions (CSV).
    Diffusion {
        #[command(subcommand)]
        kind: Diffusion,
    },
    /// Diffusion-scaled JSQ(d) ODE (CSV).
    HeavyTraffic {
        #[arg(long, default_value_t = 2)]
        d: u32,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        init: Vec<f64>,
        #[command(flatten)]
        grid: Grid,
    },
    /// Same as the top-level `oracle` command.
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Subcommand)]
enum Diffusion {
    /// JSQ in the Halfin-Whitt regime: columns t, Q̄_1.., U.
    Jsq {
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        grid: Grid,
    },
    /// Pools at fractional load (Ornstein-Uhlenbeck).
    PoolFractional {
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        grid: Grid,
    },
    /// Pools at integral load K with slack beta.
    PoolIntegral {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        grid: Grid,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// M/M/1 waiting probability and mean wait.
    Mm1 {
        #[arg(long)]
        rho: f64,
    },
    /// M/M/N delay probability and mean wait.
    ErlangC {
        #[arg(long)]
        n: usize,
        /// Aggregate arrival rate.
        #[arg(long)]
        lambda: f64,
    },
    /// Multi-dispatcher JIQ blocking limit.
    Blocking {
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<f64>,
        /// Per-server load.
        #[arg(long)]
        lambda: f64,
    },
    /// Multi-dispatcher JIQ queueing limit.
    Queueing {
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<f64>,
        #[arg(long)]
        lambda: f64,
    },
    /// Predicted center of the maximum queue length.
    Maxq {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: u32,
        #[arg(long)]
        lambda: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Clique,
    Ring,
    Edgeless,
    Er,
    EdgeList,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(value_enum)]
    kind: GraphKind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Edge probability for `er`.
    #[arg(long)]
    p: Option<f64>,
    /// Edge list file for `edge-list`.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random subsets tried when the graph is too large for enumeration.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => stdout(text),
    }
}

fn json(v: &impl serde::Serialize) -> Result<()> {
    stdout(&(serde_json::to_string_pretty(v)? + "\n"))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = a
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(if cfg.name.is_empty() { "experiment" } else { &cfg.name }));
    let results = run_experiment(&cfg, a.threads)?;
    results.write(&out, &cfg.name)?;
    eprintln!("{} runs written to {} (config {})", results.summaries.len(), out.display(), &results.config_hash[..12]);
    Ok(())
}

fn cmd_solve(s: Solve) -> Result<()> {
    match s {
        Solve::Fluid { model, lambda, d, levels, start, grid } => {
            let m = match model {
                Model::Jsqd => FluidModel::Jsqd { lambda, d },
                Model::Jsq => FluidModel::Jsq { lambda },
                Model::Pool => FluidModel::JsqPool { lambda },
            };
            let q0 = match start {
                Start::Empty => vec![0.0; levels],
                Start::FixedPoint => fixed_point(model, lambda, d, None, Some(levels))?,
            };
            let traj = integrate_fluid(|q, o| m.rhs(q, o), &q0, grid.t_end, grid.step, grid.sample)?;
            emit(&traj.to_csv(), grid.out.as_ref())
        }
        Solve::FixedPoint { model, lambda, d, capacity, levels } => {
            if let Model::Pool = model {
                return json(&fixed_point_pool(lambda, capacity, levels)?);
            }
            json(&serde_json::json!({ "q": fixed_point(model, lambda, d, capacity, levels)? }))
        }
        Solve::Diffusion { kind } => cmd_diffusion(kind),
        Solve::HeavyTraffic { d, init, grid } => {
            let traj = heavy_traffic_jsqd_ode(&init, d, grid.t_end, grid.step, grid.sample)?;
            emit(&traj.to_csv(), grid.out.as_ref())
        }
        Solve::Oracle(o) => cmd_oracle(o),
    }
}

fn fixed_point(model: Model, lambda: f64, d: u32, capacity: Option<u32>, levels: Option<usize>) -> Result<Vec<f64>> {
    Ok(match model {
        Model::Jsqd => fixed_point_jsqd(lambda, d, levels)?,
        Model::Jsq => fixed_point_jsq(lambda, levels)?,
        Model::Pool => fixed_point_pool(lambda, capacity, levels)?.q,
    })
}

fn cmd_diffusion(kind: Diffusion) -> Result<()> {
    let mut csv = String::new();
    let grid = match kind {
        Diffusion::Jsq { beta, levels, seed, grid } => {
            if levels < 2 {
                bail!("--levels must be at least 2");
            }
            let mut rng = substream(seed, Stream::Diffusion);
            let p = simulate_diffusion_jsq(beta, &vec![0.0; levels], grid.t_end, grid.step, grid.sample, 1.0, &mut rng)?;
            csv.push('t');
            for i in 1..=levels {
                csv.push_str(&format!(",qbar_{i}"));
            }
            csv.push_str(",u\n");
            for ((t, q), u) in p.t.iter().zip(&p.qbar).zip(&p.regulator) {
                let row: Vec<String> = std::iter::once(*t).chain(q.iter().copied()).chain([*u]).map(|x| x.to_string()).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            grid
        }
        Diffusion::PoolFractional { lambda, seed, grid } => {
            let mut rng = substream(seed, Stream::Diffusion);
            let p = simulate_diffusion_pool(PoolDiffusionCase::Fractional { lambda }, &[0.0], grid.t_end, grid.step, grid.sample, &mut rng)?;
            csv.push_str("t,x\n");
            for (t, s) in p.t.iter().zip(&p.state) {
                csv.push_str(&format!("{t},{}\n", s[0]));
            }
            grid
        }
        Diffusion::PoolIntegral { k, beta, seed, grid } => {
            let mut rng = substream(seed, Stream::Diffusion);
            let case = PoolDiffusionCase::Integral { k, beta };
            let p = simulate_diffusion_pool(case, &[0.0, 0.0], grid.t_end, grid.step, grid.sample, &mut rng)?;
            csv.push_str("t,q_k,q_k1,v\n");
            for ((t, s), v) in p.t.iter().zip(&p.state).zip(&p.regulator) {
                csv.push_str(&format!("{t},{},{},{v}\n", s[0], s[1]));
            }
            grid
        }
    };
    emit(&csv, grid.out.as_ref())
}

fn cmd_oracle(o: Oracle) -> Result<()> {
    match o {
        Oracle::Mm1 { rho } => json(&mm1_metrics(rho)?),
        Oracle::ErlangC { n, lambda } => json(&erlang_c(n, lambda)?),
        Oracle::Blocking { alpha, lambda } => json(&serde_json::json!({
            "alpha": alpha,
            "lambda": lambda,
            "blocking": blocking_limit(&alpha, lambda)?,
        })),
        Oracle::Queueing { alpha, lambda } => json(&serde_json::json!({
            "alpha": alpha,
            "lambda": lambda,
            "limit": queueing_limit(&alpha, lambda)?,
            "enhancement_b_threshold": enhancement_b_threshold(&alpha, lambda)?,
        })),
        Oracle::Maxq { n, d, lambda } => json(&maxq_prediction(n, d, lambda)?),
    }
}

fn cmd_graph(a: GraphArgs) -> Result<()> {
    let need_n = || a.n.context("--n is required for this graph kind");
    let g: Topology = match a.kind {
        GraphKind::Clique => topology::make_clique(need_n()?),
        GraphKind::Ring => topology::make_ring(need_n()?),
        GraphKind::Edgeless => Topology::empty(need_n()?),
        GraphKind::Er => {
            let p = a.p.context("--p is required for er")?;
            topology::make_er(need_n()?, p, &mut substream(a.seed, Stream::Graph))?
        }
        GraphKind::EdgeList => {
            let path = a.path.as_ref().context("--path is required for edge-list")?;
            Topology::load_edge_list(path, a.n)?
        }
    };
    let (dis1, dis2) = if g.n() <= EXACT_CAP {
        (topology::dis1(&g, a.eps)?, topology::dis2(&g, a.eps)?)
    } else {
        let mut rng = substream(a.seed ^ 1, Stream::Graph);
        (
            topology::dis_sampled(&g, a.eps, DisScale::Linear, a.samples, &mut rng)?,
            topology::dis_sampled(&g, a.eps, DisScale::Sqrt, a.samples, &mut rng)?,
        )
    };
    json(&serde_json::json!({
        "kind": g.kind(),
        "n": g.n(),
        "edges": g.edge_count(),
        "mean_degree": g.mean_degree(),
        "degree": topology::min_degree_check(&g),
        "eps": a.eps,
        "dis1": dis1,
        "dis2": dis2,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Solve(s) => cmd_solve(s),
        Command::Oracle(o) => cmd_oracle(o),
        Command::Graph(a) => cmd_graph(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
