//! Dispatching rules.
//!
//! Each rule is a decision function over a view of the current state plus a
//! random source. Bookkeeping that a rule owns (token books, estimate tables,
//! the round-robin cursor) lives with the replication that uses it.

mod rank;
mod tokens;

pub use rank::RankIndex;
pub use tokens::{IndexedSet, TokenBook};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Levels;
use crate::error::{invalid, Result};
use crate::topology::Topology;

/// When redundant clones of a task are abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abort {
    /// As soon as one clone enters service.
    OnStart,
    /// As soon as one clone finishes service.
    OnComplete,
}

/// What stations report under sparse feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    Full,
    ZeroOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum PolicySpec {
    Random,
    RoundRobin,
    Jsq,
    Jsqd {
        d: u32,
        #[serde(default)]
        replacement: bool,
    },
    Cjsq {
        n: u32,
    },
    Jsw,
    Redundancy {
        d: u32,
        abort: Abort,
    },
    Rsq {
        d: u32,
    },
    Jiq,
    I1f,
    SparseFeedback {
        /// Report rate per station.
        update_rate: f64,
        report_mode: ReportMode,
    },
    GraphJsq,
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Random => "random".into(),
            PolicySpec::RoundRobin => "round_robin".into(),
            PolicySpec::Jsq => "jsq".into(),
            PolicySpec::Jsqd { d, replacement: false } => format!("jsqd(d={d})"),
            PolicySpec::Jsqd { d, replacement: true } => format!("jsqd(d={d},repl)"),
            PolicySpec::Cjsq { n } => format!("cjsq(n={n})"),
            PolicySpec::Jsw => "jsw".into(),
            PolicySpec::Redundancy { d, abort: Abort::OnStart } => format!("redundancy(d={d},on_start)"),
            PolicySpec::Redundancy { d, abort: Abort::OnComplete } => {
                format!("redundancy(d={d},on_complete)")
            }
            PolicySpec::Rsq { d } => format!("rsq(d={d})"),
            PolicySpec::Jiq => "jiq".into(),
            PolicySpec::I1f => "i1f".into(),
            PolicySpec::SparseFeedback { update_rate, report_mode } => {
                let mode = match report_mode {
                    ReportMode::Full => "full",
                    ReportMode::ZeroOnly => "zero_only",
                };
                format!("sparse_feedback(rate={update_rate},{mode})")
            }
            PolicySpec::GraphJsq => "graph_jsq".into(),
        }
    }

    /// Policies that read task sizes or replicate tasks; only defined for
    /// single-server queues.
    pub fn is_workload_aware(&self) -> bool {
        matches!(self, PolicySpec::Jsw | PolicySpec::Redundancy { .. } | PolicySpec::Rsq { .. })
    }

    pub fn replicates(&self) -> bool {
        matches!(self, PolicySpec::Redundancy { .. } | PolicySpec::Rsq { .. })
    }

    pub fn needs_rank_index(&self) -> bool {
        matches!(self, PolicySpec::Cjsq { .. } | PolicySpec::Rsq { .. })
    }

    pub fn uses_tokens(&self) -> bool {
        matches!(self, PolicySpec::Jiq)
    }

    /// Checks parameter ranges against the number of stations.
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            PolicySpec::Jsqd { d, replacement } => {
                if d == 0 {
                    return Err(invalid("d", "must be at least 1"));
                }
                if !replacement && d as usize > n {
                    return Err(invalid("d", format!("d={d} exceeds N={n} without replacement")));
                }
            }
            PolicySpec::Cjsq { n: slack } => {
                if slack as usize >= n.max(1) {
                    return Err(invalid("n", format!("n={slack} must be at most N-1={}", n.saturating_sub(1))));
                }
            }
            PolicySpec::Redundancy { d, .. } | PolicySpec::Rsq { d } => {
                if d == 0 || d as usize > n {
                    return Err(invalid("d", format!("need 1 <= d <= N, got d={d}, N={n}")));
                }
            }
            PolicySpec::SparseFeedback { update_rate, .. } if !(update_rate.is_finite() && update_rate > 0.0) => {
                return Err(invalid("update_rate", "must be a positive finite rate"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Probe/response messages charged per arrival for policies whose
    /// overhead is a fixed function of the decision (Table-1 accounting).
    /// Token, report and cancellation traffic is counted by the engine.
    pub fn probe_messages(&self, n: usize) -> u64 {
        match *self {
            PolicySpec::Jsqd { d, .. } => 2 * d as u64,
            PolicySpec::Jsq | PolicySpec::Cjsq { .. } | PolicySpec::Jsw | PolicySpec::I1f | PolicySpec::Rsq { .. } => {
                2 * n as u64
            }
            PolicySpec::Redundancy { d, .. } => d as u64,
            _ => 0,
        }
    }
}

/// Behaviour of a JIQ dispatcher that holds no token when a task arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Blocking,
    Queueing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Enhancement {
    None,
    /// Idle servers send their token to dispatcher `r` with probability `beta[r]`.
    A { beta: Vec<f64> },
    /// Every token moves to a uniformly chosen dispatcher at rate `nu`.
    B { nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDispatcherSpec {
    /// Share of the arrival stream seen by each dispatcher (`R = alpha.len()`).
    pub alpha: Vec<f64>,
    pub scenario: Scenario,
    #[serde(default = "no_enhancement")]
    pub enhancement: Enhancement,
}

fn no_enhancement() -> Enhancement {
    Enhancement::None
}

const SUM_TOL: f64 = 1e-9;

fn check_distribution(name: &'static str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(name, "must be non-empty"));
    }
    if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(invalid(name, "entries must be finite and non-negative"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(invalid(name, format!("entries must sum to 1, got {sum}")));
    }
    Ok(())
}

impl MultiDispatcherSpec {
    pub fn single() -> Self {
        Self { alpha: vec![1.0], scenario: Scenario::Queueing, enhancement: Enhancement::None }
    }

    pub fn dispatchers(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_distribution("alpha", &self.alpha)?;
        if self.alpha.iter().any(|&a| a <= 0.0) {
            return Err(invalid("alpha", "every dispatcher needs a positive share"));
        }
        if self.alpha.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid("alpha", "shares must be non-increasing"));
        }
        match &self.enhancement {
            Enhancement::None => {}
            Enhancement::A { beta } => {
                if beta.len() != self.alpha.len() {
                    return Err(invalid("beta", "needs one entry per dispatcher"));
                }
                check_distribution("beta", beta)?;
            }
            Enhancement::B { nu } => {
                if !(nu.is_finite() && *nu > 0.0) {
                    return Err(invalid("nu", "must be a positive finite rate"));
                }
            }
        }
        Ok(())
    }
}

/// Samples an index from a discrete distribution.
pub(crate) fn sample_discrete<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Uniform choice among the minimisers of `key` (reservoir sampling over ties).
pub(crate) fn argmin_uniform<K, I, R>(items: I, rng: &mut R) -> Option<usize>
where
    K: PartialOrd,
    I: IntoIterator<Item = (usize, K)>,
    R: Rng + ?Sized,
{
    let mut best: Option<(usize, K)> = None;
    let mut ties = 0u32;
    for (idx, key) in items {
        match &best {
            Some((_, k)) if key > *k => {}
            Some((_, k)) if key == *k => {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = Some((idx, key));
                }
            }
            _ => {
                best = Some((idx, key));
                ties = 1;
            }
        }
    }
    best.map(|(i, _)| i)
}

fn pick<R: Rng + ?Sized>(members: &[u32], rng: &mut R) -> usize {
    members[rng.random_range(0..members.len())] as usize
}

/// Fills `out` with `d` distinct stations drawn uniformly from `0..n`.
pub fn sample_distinct<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    if d <= 32 {
        // Floyd's algorithm.
        for j in (n - d)..n {
            let t = rng.random_range(0..=j);
            if out.contains(&t) {
                out.push(j);
            } else {
                out.push(t);
            }
        }
    } else {
        out.extend(rand::seq::index::sample(rng, n, d));
    }
}

pub fn assign_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    rng.random_range(0..n)
}

/// Returns the next station in cyclic order and advances the cursor.
pub fn assign_round_robin(cursor: &mut u64, n: usize) -> usize {
    let station = (*cursor % n as u64) as usize;
    *cursor += 1;
    station
}

/// A uniformly chosen station among those with the fewest tasks.
pub fn assign_jsq<R: Rng + ?Sized>(levels: &Levels, rng: &mut R) -> usize {
    let level = levels.min_level().expect("no stations");
    pick(levels.members(level), rng)
}

/// Shortest queue among `d` sampled stations.
pub fn assign_jsqd<R: Rng + ?Sized>(
    counts: &[u32],
    d: u32,
    replacement: bool,
    rng: &mut R,
    scratch: &mut Vec<usize>,
) -> Result<usize> {
    let n = counts.len();
    let d = d as usize;
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    if replacement {
        scratch.clear();
        for _ in 0..d {
            let s = rng.random_range(0..n);
            // Duplicate draws add no information; keep the tie rule uniform over stations.
            if !scratch.contains(&s) {
                scratch.push(s);
            }
        }
    } else {
        if d > n {
            return Err(invalid("d", format!("d={d} exceeds N={n} without replacement")));
        }
        sample_distinct(n, d, rng, scratch);
    }
    Ok(argmin_uniform(scratch.iter().map(|&s| (s, counts[s])), rng).expect("empty sample"))
}

/// Uniform among the `n + 1` lowest-ranked stations.
pub fn assign_cjsq<R: Rng + ?Sized>(ranks: &RankIndex, n: u32, rng: &mut R) -> usize {
    let k = (n as usize + 1).min(ranks.len());
    ranks.nth(rng.random_range(0..k)).expect("rank index empty")
}

/// Smallest residual workload. Idle stations have zero workload, so they win
/// (uniformly) whenever any exist.
pub fn assign_jsw<R, F>(levels: &Levels, workload: F, rng: &mut R) -> usize
where
    R: Rng + ?Sized,
    F: Fn(usize) -> f64,
{
    let idle = levels.members(0);
    if !idle.is_empty() {
        return pick(idle, rng);
    }
    argmin_uniform((0..levels.len()).map(|s| (s, workload(s))), rng).expect("no stations")
}

/// `d` distinct stations that each receive a clone.
pub fn assign_redundancy<R: Rng + ?Sized>(n: usize, d: u32, rng: &mut R, out: &mut Vec<usize>) -> Result<()> {
    if d == 0 || d as usize > n {
        return Err(invalid("d", format!("need 1 <= d <= N, got d={d}, N={n}")));
    }
    sample_distinct(n, d as usize, rng, out);
    Ok(())
}

/// The `d` lowest-ranked stations (ties by id).
pub fn assign_rsq(ranks: &RankIndex, d: u32, out: &mut Vec<usize>) {
    out.clear();
    out.extend(ranks.lowest(d as usize));
}

/// Idle first, then a station with exactly one task, else uniform.
pub fn assign_i1f<R: Rng + ?Sized>(levels: &Levels, rng: &mut R) -> usize {
    for level in 0..2 {
        let m = levels.members(level);
        if !m.is_empty() {
            return pick(m, rng);
        }
    }
    rng.random_range(0..levels.len())
}

/// Lowest queue estimate; the chosen station's estimate is bumped by one.
pub fn assign_sparse_feedback<R: Rng + ?Sized>(estimates: &mut Levels, rng: &mut R) -> usize {
    let station = assign_jsq(estimates, rng);
    estimates.increment(station);
    station
}

/// Shortest queue in the closed neighbourhood of the station where the task
/// arrived.
pub fn assign_graph_jsq<R: Rng + ?Sized>(counts: &[u32], topology: &Topology, arriving: usize, rng: &mut R) -> usize {
    let closed = std::iter::once(arriving).chain(topology.neighbors(arriving).iter().map(|&v| v as usize));
    argmin_uniform(closed.map(|s| (s, counts[s])), rng).expect("closed neighbourhood is never empty")
}

/// Input to [`multi_dispatcher_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchEvent {
    /// A task arrived at the given dispatcher.
    Arrival { dispatcher: usize },
    /// A station just became idle.
    StationIdle { station: usize },
    /// The exchange clock of a station's token fired.
    Exchange { station: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchAction {
    Assign { station: usize, via_token: bool, revoked: Option<usize> },
    Block,
    TokenIssued { dispatcher: usize },
    TokenMoved { from: usize, to: usize },
    Nothing,
}

/// Picks the dispatcher that receives the next arrival.
pub fn route_arrival<R: Rng + ?Sized>(spec: &MultiDispatcherSpec, rng: &mut R) -> usize {
    if spec.alpha.len() == 1 {
        0
    } else {
        sample_discrete(&spec.alpha, rng)
    }
}

/// Token mechanics of (multi-dispatcher) JIQ.
pub fn multi_dispatcher_step<R: Rng + ?Sized>(
    spec: &MultiDispatcherSpec,
    event: DispatchEvent,
    tokens: &mut TokenBook,
    n_stations: usize,
    rng: &mut R,
) -> DispatchAction {
    match event {
        DispatchEvent::Arrival { dispatcher } => {
            if let Some(station) = tokens.take_uniform(dispatcher, rng) {
                return DispatchAction::Assign { station, via_token: true, revoked: None };
            }
            match spec.scenario {
                Scenario::Blocking => DispatchAction::Block,
                Scenario::Queueing => {
                    let station = rng.random_range(0..n_stations);
                    let revoked = tokens.revoke(station);
                    DispatchAction::Assign { station, via_token: false, revoked }
                }
            }
        }
        DispatchEvent::StationIdle { station } => {
            let r = tokens.dispatchers();
            let dispatcher = match &spec.enhancement {
                Enhancement::A { beta } => sample_discrete(beta, rng),
                _ if r == 1 => 0,
                _ => rng.random_range(0..r),
            };
            tokens.issue(station, dispatcher);
            DispatchAction::TokenIssued { dispatcher }
        }
        DispatchEvent::Exchange { station } => match tokens.revoke(station) {
            Some(from) => {
                let to = rng.random_range(0..tokens.dispatchers());
                tokens.issue(station, to);
                DispatchAction::TokenMoved { from, to }
            }
            None => DispatchAction::Nothing,
        },
    }
}

/// Single-dispatcher JIQ: a token if any, otherwise a uniform station.
pub fn assign_jiq<R: Rng + ?Sized>(tokens: &mut TokenBook, n_stations: usize, rng: &mut R) -> usize {
    let spec = MultiDispatcherSpec::single();
    match multi_dispatcher_step(&spec, DispatchEvent::Arrival { dispatcher: 0 }, tokens, n_stations, rng) {
        DispatchAction::Assign { station, .. } => station,
        other => unreachable!("queueing dispatcher returned {other:?}"),
    }
}
