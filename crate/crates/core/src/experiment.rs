//! Declarative experiment files.
//!
//! An experiment is a TOML document describing a sweep over `N`, a load rule
//! `λ(N)`, one or more policies (with optional `d(N)` rules), a topology and
//! a replication count. Every `(N, replication)` cell gets a seed derived from
//! the master seed and does not depend on the policy, so all policies in a
//! cell see the same arrivals and task sizes.
//!
//! ```toml
//! name = "jsqd-log"
//! seed = 7
//! replications = 4
//! horizon = 2000.0
//! n_range = { start = 50, end = 200, step = 50 }
//!
//! [load]
//! rule = "fluid"
//! lambda = 0.9
//!
//! [[policy]]
//! tag = "jsqd"
//! d = "log_n"
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use evalexpr::{
    ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes, Function, HashMapContext, Value,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{Dynamics, PathSpec, SimConfig};
use crate::error::{Error, Result};
use crate::policies::{Abort, MultiDispatcherSpec, PolicySpec, ReportMode};
use crate::rng::{derive_seed, substream, Stream};
use crate::stats::{RunSummary, DEFAULT_BATCHES};
use crate::sweep::{aggregate, run_all};
use crate::topology::{make_clique, make_er, make_ring, Topology};

/// Evaluates an arithmetic expression in the single variable `N`.
///
/// Available functions: `sqrt`, `ln`, `log2`, `log10`, `exp`, `floor`,
/// `ceil`, `pow`, plus the evalexpr builtins.
pub fn eval_expr(expr: &str, n: f64) -> std::result::Result<f64, String> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    ctx.set_value("N".into(), Value::Float(n)).map_err(|e| e.to_string())?;
    type Unary = fn(f64) -> f64;
    let unary: [(&str, Unary); 7] = [
        ("sqrt", f64::sqrt),
        ("ln", f64::ln),
        ("log2", f64::log2),
        ("log10", f64::log10),
        ("exp", f64::exp),
        ("floor", f64::floor),
        ("ceil", f64::ceil),
    ];
    for (name, f) in unary {
        ctx.set_function(name.into(), Function::new(move |a| Ok(Value::Float(f(a.as_number()?)))))
            .map_err(|e| e.to_string())?;
    }
    ctx.set_function(
        "pow".into(),
        Function::new(|a| {
            let t = a.as_fixed_len_tuple(2)?;
            let (base, exp): (f64, f64) = (t[0].as_number()?, t[1].as_number()?);
            Ok(Value::Float(base.powf(exp)))
        }),
    )
    .map_err(|e| e.to_string())?;
    let v = evalexpr::eval_number_with_context(expr, &ctx).map_err(|e| e.to_string())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{expr}` is not finite at N={n}"))
    }
}

/// `λ(N)`, the aggregate arrival rate as a function of `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadRule {
    /// `λ` per server, `λ(N) = λN`.
    FixedPerServer { lambda: f64 },
    /// Fluid regime `λ(N) = λN`; same rate as `fixed_per_server`.
    Fluid { lambda: f64 },
    /// `λ(N) = N - β√N`.
    HalfinWhitt { beta: f64 },
    /// Any expression in `N`, e.g. `"N - 2*sqrt(N)"`.
    Custom { expr: String },
}

impl LoadRule {
    pub fn arrival_rate(&self, n: usize) -> Result<f64> {
        let nf = n as f64;
        let rate = match self {
            LoadRule::FixedPerServer { lambda } | LoadRule::Fluid { lambda } => lambda * nf,
            LoadRule::HalfinWhitt { beta } => nf - beta * nf.sqrt(),
            LoadRule::Custom { expr } => eval_expr(expr, nf).map_err(Error::InvalidConfig)?,
        };
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidConfig(format!("load rule gives arrival rate {rate} at N={n}")));
        }
        Ok(rate)
    }

    fn validate(&self) -> Result<()> {
        match self {
            LoadRule::FixedPerServer { lambda } | LoadRule::Fluid { lambda } if !(lambda.is_finite() && *lambda > 0.0) => {
                Err(Error::InvalidConfig(format!("load lambda must be positive, got {lambda}")))
            }
            LoadRule::HalfinWhitt { beta } if !(beta.is_finite() && *beta > 0.0) => {
                Err(Error::InvalidConfig(format!("halfin_whitt needs beta > 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

/// An integer parameter that may grow with `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SizeRule {
    Const(u32),
    /// `"log_n"`: `⌊ln N⌋`.
    Named(NamedSizeRule),
    /// `{ pow = a }`: `⌊N^a⌋`.
    Pow { pow: f64 },
    /// `{ expr = "..." }`, floored.
    Expr { expr: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedSizeRule {
    LogN,
}

impl SizeRule {
    pub fn eval(&self, n: usize) -> Result<u32> {
        let nf = n as f64;
        let v = match self {
            SizeRule::Const(d) => return Ok(*d),
            SizeRule::Named(NamedSizeRule::LogN) => nf.ln().floor(),
            SizeRule::Pow { pow } => nf.powf(*pow).floor(),
            SizeRule::Expr { expr } => eval_expr(expr, nf).map_err(Error::InvalidConfig)?.floor(),
        };
        if !(v >= 1.0 && v <= u32::MAX as f64) {
            return Err(Error::InvalidConfig(format!("size rule gives {v} at N={n}; need at least 1")));
        }
        Ok(v as u32)
    }
}

/// One `[[policy]]` table; `d` and `n` accept a [`SizeRule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<SizeRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<SizeRule>,
    #[serde(default)]
    pub replacement: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<Abort>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_mode: Option<ReportMode>,
}

impl PolicyEntry {
    fn need_d(&self, n: usize) -> Result<u32> {
        self.d
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("policy `{}` needs `d`", self.tag)))?
            .eval(n)
    }

    /// Resolves the entry at a given `N`.
    pub fn resolve(&self, n: usize) -> Result<PolicySpec> {
        let missing = |what: &str| Error::InvalidConfig(format!("policy `{}` needs `{what}`", self.tag));
        Ok(match self.tag.as_str() {
            "random" => PolicySpec::Random,
            "round_robin" => PolicySpec::RoundRobin,
            "jsq" => PolicySpec::Jsq,
            "jsqd" => PolicySpec::Jsqd { d: self.need_d(n)?, replacement: self.replacement },
            "cjsq" => PolicySpec::Cjsq { n: self.n.as_ref().ok_or_else(|| missing("n"))?.eval(n)? },
            "jsw" => PolicySpec::Jsw,
            "redundancy" => PolicySpec::Redundancy { d: self.need_d(n)?, abort: self.abort.ok_or_else(|| missing("abort"))? },
            "rsq" => PolicySpec::Rsq { d: self.need_d(n)? },
            "jiq" => PolicySpec::Jiq,
            "i1f" => PolicySpec::I1f,
            "sparse_feedback" => PolicySpec::SparseFeedback {
                update_rate: self.update_rate.ok_or_else(|| missing("update_rate"))?,
                report_mode: self.report_mode.ok_or_else(|| missing("report_mode"))?,
            },
            "graph_jsq" => PolicySpec::GraphJsq,
            other => return Err(Error::InvalidConfig(format!("unknown policy tag `{other}`"))),
        })
    }

    /// Value of the `d` column: `d` for sampling policies, `n` for CJSQ.
    fn d_value(&self, n: usize) -> Option<u32> {
        match self.tag.as_str() {
            "cjsq" => self.n.as_ref().and_then(|r| r.eval(n).ok()),
            _ => self.d.as_ref().and_then(|r| r.eval(n).ok()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NRange {
    pub start: usize,
    pub end: usize,
    #[serde(default = "one")]
    pub step: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Clique,
    Ring,
    Edgeless,
    Er { p: f64 },
    /// Whitespace-separated `u v` pairs; relative paths resolve against the
    /// config file's directory.
    EdgeList { path: PathBuf },
}

impl TopologySpec {
    pub fn build(&self, n: usize, seed: u64, base_dir: &Path) -> Result<Topology> {
        match self {
            TopologySpec::Clique => Ok(make_clique(n)),
            TopologySpec::Ring => Ok(make_ring(n)),
            TopologySpec::Edgeless => Ok(Topology::empty(n)),
            TopologySpec::Er { p } => make_er(n, *p, &mut substream(seed, Stream::Graph)),
            TopologySpec::EdgeList { path } => Topology::load_edge_list(&base_dir.join(path), Some(n)),
        }
    }
}

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub horizon: f64,
    /// Defaults to 20% of the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_range: Option<NRange>,
    #[serde(default = "default_dynamics")]
    pub dynamics: Dynamics,
    pub load: LoadRule,
    pub policy: Vec<PolicyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatchers: Option<MultiDispatcherSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathSpec>,
    #[serde(default)]
    pub track_stations: bool,
    /// Output directory; relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

fn default_dynamics() -> Dynamics {
    Dynamics::SingleServerQueue
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of the first `key = ...`, `[key]` or `[[key]]` in `text`, else 1.
fn line_of_key(text: &str, key: &str) -> usize {
    for (i, line) in text.lines().enumerate() {
        let t = line.trim_start();
        let bare = t.trim_start_matches('[').trim_end();
        if let Some(rest) = bare.strip_prefix(key) {
            if rest.trim_start().starts_with(['=', ']', '.']) {
                return i + 1;
            }
        }
    }
    1
}

impl ExperimentConfig {
    /// Parses and validates; `label` names the source in diagnostics.
    pub fn from_toml_str(text: &str, label: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: label.to_string(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(key, e)| Error::Config {
            path: label.to_string(),
            line: line_of_key(text, key),
            message: match e {
                Error::InvalidConfig(m) => m,
                other => other.to_string(),
            },
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn n_values(&self) -> Vec<usize> {
        match (&self.n, &self.n_range) {
            (Some(list), _) => list.clone(),
            (None, Some(r)) => (r.start..=r.end).step_by(r.step.max(1)).collect(),
            (None, None) => Vec::new(),
        }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.unwrap_or(0.2 * self.horizon)
    }

    /// Checks everything that can be checked without simulating; the error
    /// carries the key it should be reported against.
    fn validate(&self) -> std::result::Result<(), (&'static str, Error)> {
        let bad = |key: &'static str, msg: String| Err((key, Error::InvalidConfig(msg)));
        if self.n.is_some() && self.n_range.is_some() {
            return bad("n_range", "give either `n` or `n_range`, not both".into());
        }
        if let Some(r) = &self.n_range {
            if r.step == 0 || r.start == 0 || r.end < r.start {
                return bad("n_range", "need 1 <= start <= end and step >= 1".into());
            }
        }
        let ns = self.n_values();
        if ns.is_empty() {
            return bad("n", "the list of N values is empty".into());
        }
        if ns.contains(&0) {
            return bad("n", "N must be positive".into());
        }
        if self.replications == 0 {
            return bad("replications", "must be at least 1".into());
        }
        if self.policy.is_empty() {
            return bad("policy", "at least one [[policy]] is required".into());
        }
        self.load.validate().map_err(|e| ("load", e))?;
        if let Some(TopologySpec::Er { p }) = &self.topology {
            if !(0.0..=1.0).contains(p) {
                return bad("topology", format!("p must be in [0, 1], got {p}"));
            }
        }
        let uses_graph = self.policy.iter().any(|p| p.tag == "graph_jsq");
        if uses_graph && self.topology.is_none() {
            return bad("policy", "graph_jsq needs a [topology] table".into());
        }
        // Resolve every cell once (with an edgeless stand-in graph) so
        // parameter errors surface before any simulation starts.
        for &n in &ns {
            let rate = self.load.arrival_rate(n).map_err(|e| ("load", e))?;
            for p in &self.policy {
                let spec = p.resolve(n).map_err(|e| ("policy", e))?;
                let mut sim = self.sim_config(n, rate, spec, 0);
                if uses_graph {
                    sim.topology = Some(Arc::new(Topology::empty(n)));
                }
                sim.validate().map_err(|e| {
                    let key = match &e {
                        Error::InvalidParameter { name, .. } => match *name {
                            "horizon" | "warmup" | "batches" | "dispatchers" | "capacity" => *name,
                            "arrival_rate" => "load",
                            n if n.starts_with("path") => "path",
                            _ => "policy",
                        },
                        Error::UnsupportedDynamics { .. } => "dynamics",
                        _ => "policy",
                    };
                    (key, e)
                })?;
            }
        }
        Ok(())
    }

    fn sim_config(&self, n: usize, rate: f64, policy: PolicySpec, seed: u64) -> SimConfig {
        let mut sim = SimConfig::new(n, rate, policy, self.horizon, seed)
            .with_dynamics(self.dynamics)
            .with_warmup(self.warmup());
        sim.batches = self.batches;
        sim.dispatchers = self.dispatchers.clone();
        sim.path = self.path;
        sim.track_stations = self.track_stations;
        sim
    }

    /// SHA-256 of the canonical JSON form (output path excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Every simulation of the sweep, ordered by `(N, replication, policy)`.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        for n in self.n_values() {
            let rate = self.load.arrival_rate(n)?;
            for rep in 0..self.replications {
                let seed = derive_seed(self.seed, &[n as u64, rep as u64]);
                let topology = match (&self.topology, self.policy.iter().any(|p| p.tag == "graph_jsq")) {
                    (Some(t), true) => Some(Arc::new(t.build(n, seed, &self.base_dir)?)),
                    _ => None,
                };
                for (index, p) in self.policy.iter().enumerate() {
                    let spec = p.resolve(n)?;
                    let mut sim = self.sim_config(n, rate, spec, seed);
                    if sim.policy == PolicySpec::GraphJsq {
                        sim.topology = topology.clone();
                    }
                    out.push(Cell { policy_index: index, n, rep, d: p.d_value(n), config: sim });
                }
            }
        }
        Ok(out)
    }
}

/// One simulation in a sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub policy_index: usize,
    pub n: usize,
    pub rep: usize,
    pub d: Option<u32>,
    pub config: SimConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<Cell>,
    pub summaries: Vec<RunSummary>,
}

/// Runs every cell of the sweep; `threads = Some(1)` forces sequential
/// execution. Output order does not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResults> {
    let cells = cfg.cells()?;
    let configs: Vec<SimConfig> = cells.iter().map(|c| c.config.clone()).collect();
    let summaries = run_all(&configs, threads).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResults { config_hash: cfg.hash(), seed: cfg.seed, cells, summaries })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics emitted in the tidy aggregate file.
fn metrics(s: &RunSummary) -> Vec<(&'static str, f64, f64)> {
    let mut m = vec![
        ("mean_wait", s.mean_wait.value, s.mean_wait.half_width),
        ("p_wait", s.p_wait.value, s.p_wait.half_width),
        ("p_block", s.p_block.value, s.p_block.half_width),
        ("mean_response", s.mean_response.value, s.mean_response.half_width),
        ("q_1", s.q(1), 0.0),
        ("q_2", s.q(2), 0.0),
        ("q_3", s.q(3), 0.0),
        ("max_queue", s.max_queue as f64, 0.0),
        ("messages_per_task", s.messages_per_task, 0.0),
    ];
    if let Some(e) = s.effort_ratio {
        m.push(("effort_ratio", e, 0.0));
    }
    m
}

impl ExperimentResults {
    /// One row per run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "policy,N,rep,lambda,d,seed,run_seed,config_hash,mean_wait,p_wait,p_block,mean_response,q_1,q_2,q_3,max_queue,messages_per_task,events\n",
        );
        for (c, s) in self.cells.iter().zip(&self.summaries) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.policy,
                c.n,
                c.rep,
                c.config.arrival_rate,
                opt(c.d),
                self.seed,
                c.config.seed,
                self.config_hash,
                s.mean_wait.value,
                s.p_wait.value,
                s.p_block.value,
                s.mean_response.value,
                s.q(1),
                s.q(2),
                s.q(3),
                s.max_queue,
                s.messages_per_task,
                s.events
            );
        }
        out
    }

    /// Tidy cross-replication table. With one replication the half-width is
    /// the within-run batch-means half-width.
    pub fn aggregate_csv(&self) -> String {
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, c) in self.cells.iter().enumerate() {
            groups.entry((c.n, c.policy_index)).or_default().push(i);
        }
        let mut out = String::from("policy,N,lambda,d,metric,value,ci_half,seed,config_hash\n");
        for idx in groups.values() {
            let first = &self.cells[idx[0]];
            let label = &self.summaries[idx[0]].policy;
            let per_run: Vec<Vec<(&str, f64, f64)>> = idx.iter().map(|&i| metrics(&self.summaries[i])).collect();
            for (k, &(name, _, _)) in per_run[0].iter().enumerate() {
                let (value, half) = if idx.len() == 1 {
                    (per_run[0][k].1, per_run[0][k].2)
                } else {
                    let xs: Vec<f64> = per_run.iter().map(|m| m[k].1).collect();
                    let e = aggregate(&xs);
                    (e.value, e.half_width)
                };
                let _ = writeln!(
                    out,
                    "{label},{},{},{},{name},{value},{half},{},{}",
                    first.n,
                    first.config.arrival_rate,
                    opt(first.d),
                    self.seed,
                    self.config_hash
                );
            }
        }
        out
    }

    pub fn summaries_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.summaries {
            out.push_str(&serde_json::to_string(s).expect("summary serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes `runs.csv`, `aggregate.csv`, `summaries.jsonl` and the
    /// `meta.json` sidecar (the only file holding a timestamp).
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        std::fs::write(dir.join("aggregate.csv"), self.aggregate_csv())?;
        std::fs::write(dir.join("summaries.jsonl"), self.summaries_jsonl())?;
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "name": name,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "runs": self.summaries.len(),
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": stamp,
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
        Ok(())
    }
}
