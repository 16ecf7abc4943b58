//! Discrete-event kernel for `N` parallel stations fed by a Poisson stream.
//!
//! Two station models are supported: single-server FCFS queues and pools in
//! which every admitted task is served at once (capacity `B`, possibly
//! unbounded). Service requirements are unit-mean exponentials drawn at
//! arrival and carried by the task.

mod event;
mod levels;

pub use event::{Event, EventKind, EventQueue};
pub use levels::{Levels, OccupancyVector};

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::policies::{
    self, Abort, DispatchAction, DispatchEvent, Enhancement, MultiDispatcherSpec, PolicySpec, RankIndex, ReportMode, Scenario,
    TokenBook,
};
use crate::rng::Streams;
use crate::stats::{
    self, FlowCounts, MessageCounts, OccupancyIntegrator, PathPoint, RunSummary, TaskStats, DEFAULT_BATCHES,
    MIN_RELIABLE_BATCHES,
};
use crate::topology::Topology;

/// Pool capacity. Serialized as an integer or the string `"infinite"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CapacityRepr", into = "CapacityRepr")]
pub enum Capacity {
    Finite(u32),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CapacityRepr {
    Finite(u32),
    Named(String),
}

impl TryFrom<CapacityRepr> for Capacity {
    type Error = String;

    fn try_from(r: CapacityRepr) -> std::result::Result<Self, String> {
        match r {
            CapacityRepr::Finite(b) => Ok(Capacity::Finite(b)),
            CapacityRepr::Named(s) if s == "infinite" => Ok(Capacity::Infinite),
            CapacityRepr::Named(s) => Err(format!("capacity must be an integer or \"infinite\", got {s:?}")),
        }
    }
}

impl From<Capacity> for CapacityRepr {
    fn from(c: Capacity) -> Self {
        match c {
            Capacity::Finite(b) => CapacityRepr::Finite(b),
            Capacity::Infinite => CapacityRepr::Named("infinite".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    SingleServerQueue,
    ServerPool { capacity: Capacity },
}

impl Dynamics {
    pub fn name(&self) -> &'static str {
        match self {
            Dynamics::SingleServerQueue => "single_server_queue",
            Dynamics::ServerPool { .. } => "server_pool",
        }
    }
}

/// Sampling of the diffusion-scaled occupancy path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub interval: f64,
    /// Number of components `Q̄_1..Q̄_levels` kept per sample.
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_stations: usize,
    /// Aggregate arrival rate `λ(N)`.
    pub arrival_rate: f64,
    pub dynamics: Dynamics,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Arc<Topology>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatchers: Option<MultiDispatcherSpec>,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathSpec>,
    /// Report the time-averaged task count of every station.
    #[serde(default)]
    pub track_stations: bool,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

impl SimConfig {
    /// Single-server queues, warmup at 20% of the horizon.
    pub fn new(n_stations: usize, arrival_rate: f64, policy: PolicySpec, horizon: f64, seed: u64) -> Self {
        Self {
            n_stations,
            arrival_rate,
            dynamics: Dynamics::SingleServerQueue,
            horizon,
            warmup: 0.2 * horizon,
            seed,
            policy,
            topology: None,
            dispatchers: None,
            batches: DEFAULT_BATCHES,
            path: None,
            track_stations: false,
        }
    }

    pub fn with_dynamics(mut self, dynamics: Dynamics) -> Self {
        self.dynamics = dynamics;
        self
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_topology(mut self, topology: Arc<Topology>) -> Self {
        self.topology = Some(topology);
        self
    }

    pub fn with_dispatchers(mut self, spec: MultiDispatcherSpec) -> Self {
        self.dispatchers = Some(spec);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn blocking_dispatch(&self) -> bool {
        matches!(&self.dispatchers, Some(d) if d.scenario == Scenario::Blocking)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_stations;
        if n == 0 {
            return Err(invalid("n_stations", "must be positive"));
        }
        if n > u32::MAX as usize {
            return Err(invalid("n_stations", "too many stations"));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(invalid("arrival_rate", "must be finite and non-negative"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        if self.warmup.is_nan() || self.warmup < 0.0 {
            return Err(invalid("warmup", "must be non-negative"));
        }
        if self.horizon <= self.warmup {
            return Err(invalid("horizon", format!("horizon {} must exceed warmup {}", self.horizon, self.warmup)));
        }
        if self.batches == 0 {
            return Err(invalid("batches", "must be positive"));
        }
        if let Some(p) = &self.path {
            if !(p.interval.is_finite() && p.interval > 0.0) {
                return Err(invalid("path.interval", "must be positive"));
            }
        }
        self.policy.validate(n)?;
        match self.dynamics {
            Dynamics::SingleServerQueue => {
                if self.arrival_rate >= n as f64 && !self.blocking_dispatch() {
                    return Err(invalid(
                        "arrival_rate",
                        format!("single-server queues need arrival_rate < N (got {} with N={n})", self.arrival_rate),
                    ));
                }
            }
            Dynamics::ServerPool { capacity } => {
                if self.policy.is_workload_aware() {
                    return Err(Error::UnsupportedDynamics { policy: self.policy.label(), dynamics: "server_pool" });
                }
                if capacity == Capacity::Finite(0) {
                    return Err(invalid("capacity", "must be at least 1"));
                }
            }
        }
        if let Some(spec) = &self.dispatchers {
            if !self.policy.uses_tokens() {
                return Err(invalid("dispatchers", "multiple dispatchers are only defined for jiq"));
            }
            spec.validate()?;
        }
        if self.policy == PolicySpec::GraphJsq {
            match &self.topology {
                None => return Err(invalid("topology", "graph_jsq needs a topology")),
                Some(t) if t.n() != n => {
                    return Err(invalid("topology", format!("topology has {} vertices, N={n}", t.n())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

const WAITING: u8 = 0;
const RUNNING: u8 = 1;
const GONE: u8 = 2;

#[derive(Debug, Clone, Default)]
struct Slot {
    generation: u32,
    arrival: f64,
    service: f64,
    batch: Option<usize>,
    started: bool,
    width: usize,
    running: u32,
    effort: f64,
}

/// Clone bookkeeping for redundancy-d and RSQ.
#[derive(Debug, Clone)]
struct Replicas {
    d: usize,
    abort: Abort,
    slots: Vec<Slot>,
    free: Vec<u32>,
    at: Vec<u32>,
    state: Vec<u8>,
    started_at: Vec<f64>,
    queues: Vec<VecDeque<(u32, u32)>>,
    running: Vec<Option<(u32, u32)>>,
    live: u64,
    effort_sum: f64,
    size_sum: f64,
    max_concurrent: u32,
}

impl Replicas {
    fn new(n: usize, d: usize, abort: Abort) -> Self {
        Self {
            d,
            abort,
            slots: Vec::new(),
            free: Vec::new(),
            at: Vec::new(),
            state: Vec::new(),
            started_at: Vec::new(),
            queues: vec![VecDeque::new(); n],
            running: vec![None; n],
            live: 0,
            effort_sum: 0.0,
            size_sum: 0.0,
            max_concurrent: 0,
        }
    }

    fn alloc(&mut self, arrival: f64, service: f64, batch: Option<usize>) -> usize {
        let id = match self.free.pop() {
            Some(id) => id as usize,
            None => {
                self.slots.push(Slot::default());
                self.at.resize(self.at.len() + self.d, 0);
                self.state.resize(self.state.len() + self.d, GONE);
                self.started_at.resize(self.started_at.len() + self.d, 0.0);
                self.slots.len() - 1
            }
        };
        let generation = self.slots[id].generation;
        self.slots[id] = Slot { generation, arrival, service, batch, ..Slot::default() };
        self.live += 1;
        id
    }

    fn release(&mut self, id: usize) {
        self.slots[id].generation = self.slots[id].generation.wrapping_add(1);
        self.free.push(id as u32);
        self.live -= 1;
    }

    fn clone_at(&self, id: usize, station: usize) -> Option<usize> {
        let base = id * self.d;
        (0..self.slots[id].width).find(|&k| self.at[base + k] as usize == station)
    }
}

/// One replication in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    n: usize,
    lambda: f64,
    horizon: f64,
    warmup: f64,
    seed: u64,
    config_hash: String,
    policy: PolicySpec,
    capacity: Option<Option<u32>>,
    now: f64,
    events: u64,
    queue: EventQueue,
    rng: Streams,
    levels: Levels,
    backlog_end: Vec<f64>,
    rr_cursor: u64,
    ranks: Option<RankIndex>,
    tokens: Option<TokenBook>,
    dispatch: MultiDispatcherSpec,
    estimates: Option<Levels>,
    topology: Option<Arc<Topology>>,
    replicas: Option<Replicas>,
    scratch: Vec<usize>,
    targets: Vec<usize>,
    probe_cost: u64,
    path_spec: Option<PathSpec>,
    path: Vec<PathPoint>,
    stations: Option<(Vec<f64>, Vec<f64>)>,
    tasks: TaskStats,
    occupancy: OccupancyIntegrator,
    flow: FlowCounts,
    messages: MessageCounts,
    post_arrivals: u64,
    peak: u32,
    batches: usize,
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_stations;
        let policy = config.policy.clone();
        let capacity = match config.dynamics {
            Dynamics::SingleServerQueue => None,
            Dynamics::ServerPool { capacity: Capacity::Finite(b) } => Some(Some(b)),
            Dynamics::ServerPool { capacity: Capacity::Infinite } => Some(None),
        };
        let replicas = match policy {
            PolicySpec::Redundancy { d, abort } => Some(Replicas::new(n, d as usize, abort)),
            PolicySpec::Rsq { d } => Some(Replicas::new(n, d as usize, Abort::OnStart)),
            _ => None,
        };
        let mut sim = Self {
            n,
            lambda: config.arrival_rate,
            horizon: config.horizon,
            warmup: config.warmup,
            seed: config.seed,
            config_hash: config.hash(),
            capacity,
            now: 0.0,
            events: 0,
            queue: EventQueue::new(),
            rng: Streams::new(config.seed),
            levels: Levels::new(n),
            backlog_end: if capacity.is_none() { vec![0.0; n] } else { Vec::new() },
            rr_cursor: 0,
            ranks: policy.needs_rank_index().then(|| RankIndex::new(&vec![0; n])),
            tokens: policy.uses_tokens().then(|| {
                TokenBook::new(n, config.dispatchers.as_ref().map_or(1, MultiDispatcherSpec::dispatchers))
            }),
            dispatch: config.dispatchers.clone().unwrap_or_else(MultiDispatcherSpec::single),
            estimates: matches!(policy, PolicySpec::SparseFeedback { .. }).then(|| Levels::new(n)),
            topology: config.topology.clone(),
            replicas,
            scratch: Vec::new(),
            targets: Vec::new(),
            probe_cost: policy.probe_messages(n),
            path_spec: config.path,
            path: Vec::new(),
            stations: config.track_stations.then(|| (vec![0.0; n], vec![config.warmup; n])),
            tasks: TaskStats::new(config.warmup, config.horizon, config.batches),
            occupancy: OccupancyIntegrator::new(config.warmup),
            flow: FlowCounts::default(),
            messages: MessageCounts::default(),
            post_arrivals: 0,
            peak: 0,
            batches: config.batches,
            policy,
        };
        // Every station starts idle, so every station starts with a token.
        if let Some(book) = sim.tokens.as_mut() {
            for s in 0..n {
                policies::multi_dispatcher_step(
                    &sim.dispatch,
                    DispatchEvent::StationIdle { station: s },
                    book,
                    n,
                    &mut sim.rng.tokens,
                );
            }
        }
        if sim.lambda > 0.0 {
            sim.schedule_arrival();
            if let Enhancement::B { nu } = sim.dispatch.enhancement {
                let t = sim.rng.tokens.sample::<f64, _>(Exp1) / (nu * n as f64);
                sim.queue.push(t, EventKind::TokenExchange { station: sim.rng.tokens.random_range(0..n) as u32 });
            }
            if let PolicySpec::SparseFeedback { update_rate, .. } = sim.policy {
                let t = sim.rng.feedback.sample::<f64, _>(Exp1) / (update_rate * n as f64);
                sim.queue
                    .push(t, EventKind::EstimateUpdate { station: sim.rng.feedback.random_range(0..n) as u32 });
            }
        }
        if sim.path_spec.is_some() {
            sim.queue.push(0.0, EventKind::Sample);
        }
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    pub fn counts(&self) -> &[u32] {
        self.levels.counts()
    }

    pub fn occupancy(&self) -> OccupancyVector {
        self.levels.occupancy()
    }

    pub fn tokens(&self) -> Option<&TokenBook> {
        self.tokens.as_ref()
    }

    pub fn flow(&self) -> FlowCounts {
        let mut flow = self.flow;
        flow.in_system = match &self.replicas {
            Some(r) => r.live,
            None => self.levels.occupancy_counts().iter().sum(),
        };
        flow
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Injects an event; used to drive the kernel by hand.
    pub fn schedule(&mut self, time: f64, kind: EventKind) {
        self.queue.push(time, kind);
    }

    /// Pops the next event if it falls within the horizon.
    pub fn next_event(&mut self) -> Option<Event> {
        match self.queue.peek() {
            Some(e) if e.time <= self.horizon => self.queue.pop(),
            _ => None,
        }
    }

    /// Processes the next event within the horizon and returns it.
    pub fn step(&mut self) -> Option<Event> {
        let ev = self.next_event()?;
        self.advance(ev);
        Some(ev)
    }

    /// Applies one event.
    pub fn advance(&mut self, event: Event) {
        debug_assert!(event.time >= self.now, "events must be applied in time order");
        self.now = event.time;
        self.events += 1;
        let post = self.now >= self.warmup;
        if post {
            self.peak = self.peak.max(self.levels.max_level() as u32);
        }
        match event.kind {
            EventKind::Arrival => self.on_arrival(),
            EventKind::Departure { station, task, generation } => {
                if self.replicas.is_some() {
                    self.on_replica_departure(station as usize, task as usize, generation)
                } else {
                    self.on_departure(station as usize)
                }
            }
            EventKind::TokenExchange { station } => self.on_exchange(station as usize),
            EventKind::EstimateUpdate { station } => self.on_report(station as usize),
            EventKind::Sample => self.on_sample(),
        }
        if post {
            self.peak = self.peak.max(self.levels.max_level() as u32);
        }
    }

    /// Runs to the horizon.
    pub fn run_to_end(&mut self) {
        while self.step().is_some() {}
    }

    fn schedule_arrival(&mut self) {
        let t = self.now + self.rng.arrivals.sample::<f64, _>(Exp1) / self.lambda;
        self.queue.push(t, EventKind::Arrival);
    }

    fn bump(&mut self, s: usize, up: bool) {
        let old = self.levels.count(s);
        if let Some((area, last)) = self.stations.as_mut() {
            let from = last[s].max(self.warmup);
            if self.now > from {
                area[s] += old as f64 * (self.now - from);
            }
            last[s] = self.now;
        }
        let (i, q_old) = if up { self.levels.increment(s) } else { self.levels.decrement(s) };
        self.occupancy.on_change(i, q_old, self.now);
        if let Some(r) = self.ranks.as_mut() {
            r.update(s, old, self.levels.count(s));
        }
    }

    fn on_arrival(&mut self) {
        self.schedule_arrival();
        self.flow.arrivals += 1;
        let service: f64 = self.rng.services.sample(Exp1);
        let batch = self.tasks.batch_of(self.now);
        if let Some(b) = batch {
            self.tasks.record_arrival(b);
            self.post_arrivals += 1;
            self.messages.probes += self.probe_cost;
        }
        if self.replicas.is_some() {
            self.place_replicas(service, batch);
            return;
        }
        let n = self.n;
        let rng = &mut self.rng.policy;
        let station = match &self.policy {
            PolicySpec::Random => policies::assign_random(n, rng),
            PolicySpec::RoundRobin => policies::assign_round_robin(&mut self.rr_cursor, n),
            PolicySpec::Jsq => policies::assign_jsq(&self.levels, rng),
            PolicySpec::Jsqd { d, replacement } => {
                policies::assign_jsqd(self.levels.counts(), *d, *replacement, rng, &mut self.scratch)
                    .expect("validated sample size")
            }
            PolicySpec::Cjsq { n: slack } => {
                policies::assign_cjsq(self.ranks.as_ref().expect("rank index"), *slack, rng)
            }
            PolicySpec::Jsw => {
                let (backlog, now) = (&self.backlog_end, self.now);
                policies::assign_jsw(&self.levels, |s| (backlog[s] - now).max(0.0), rng)
            }
            PolicySpec::I1f => policies::assign_i1f(&self.levels, rng),
            PolicySpec::SparseFeedback { .. } => {
                policies::assign_sparse_feedback(self.estimates.as_mut().expect("estimates"), rng)
            }
            PolicySpec::GraphJsq => {
                let arriving = self.rng.arrivals.random_range(0..n);
                let topo = self.topology.as_ref().expect("validated topology");
                if topo.is_complete() {
                    policies::assign_jsq(&self.levels, rng)
                } else {
                    policies::assign_graph_jsq(self.levels.counts(), topo, arriving, rng)
                }
            }
            PolicySpec::Jiq => {
                let dispatcher = policies::route_arrival(&self.dispatch, rng);
                let book = self.tokens.as_mut().expect("token book");
                match policies::multi_dispatcher_step(
                    &self.dispatch,
                    DispatchEvent::Arrival { dispatcher },
                    book,
                    n,
                    rng,
                ) {
                    DispatchAction::Assign { station, .. } => station,
                    DispatchAction::Block => {
                        self.block(batch);
                        return;
                    }
                    other => unreachable!("arrival produced {other:?}"),
                }
            }
            PolicySpec::Redundancy { .. } | PolicySpec::Rsq { .. } => unreachable!(),
        };
        self.place(station, service, batch);
    }

    fn block(&mut self, batch: Option<usize>) {
        self.flow.blocked += 1;
        if let Some(b) = batch {
            self.tasks.record_blocked(b);
        }
    }

    fn place(&mut self, s: usize, service: f64, batch: Option<usize>) {
        let (wait, done) = match self.capacity {
            None => {
                let start = self.backlog_end[s].max(self.now);
                let done = start + service;
                self.backlog_end[s] = done;
                (start - self.now, done)
            }
            Some(cap) => {
                if cap.is_some_and(|b| self.levels.count(s) >= b) {
                    self.block(batch);
                    return;
                }
                (0.0, self.now + service)
            }
        };
        if let Some(b) = batch {
            self.tasks.record_wait(b, wait);
            self.tasks.record_response(b, wait + service);
        }
        self.bump(s, true);
        self.queue.push(done, EventKind::Departure { station: s as u32, task: 0, generation: 0 });
    }

    fn on_departure(&mut self, s: usize) {
        self.bump(s, false);
        self.flow.departures += 1;
        if self.levels.count(s) == 0 {
            self.station_idle(s);
        }
    }

    fn station_idle(&mut self, s: usize) {
        if let Some(book) = self.tokens.as_mut() {
            policies::multi_dispatcher_step(
                &self.dispatch,
                DispatchEvent::StationIdle { station: s },
                book,
                self.n,
                &mut self.rng.tokens,
            );
            if self.now >= self.warmup {
                self.messages.tokens += 1;
            }
        }
    }

    fn on_exchange(&mut self, s: usize) {
        let Enhancement::B { nu } = self.dispatch.enhancement else { unreachable!() };
        let book = self.tokens.as_mut().expect("token book");
        let action = policies::multi_dispatcher_step(
            &self.dispatch,
            DispatchEvent::Exchange { station: s },
            book,
            self.n,
            &mut self.rng.tokens,
        );
        if matches!(action, DispatchAction::TokenMoved { .. }) && self.now >= self.warmup {
            self.messages.tokens += 1;
        }
        let t = self.now + self.rng.tokens.sample::<f64, _>(Exp1) / (nu * self.n as f64);
        let next = self.rng.tokens.random_range(0..self.n) as u32;
        self.queue.push(t, EventKind::TokenExchange { station: next });
    }

    fn on_report(&mut self, s: usize) {
        let PolicySpec::SparseFeedback { update_rate, report_mode } = self.policy else { unreachable!() };
        let truth = self.levels.count(s);
        if report_mode == ReportMode::Full || truth == 0 {
            self.estimates.as_mut().expect("estimates").set(s, truth);
            if self.now >= self.warmup {
                self.messages.reports += 1;
            }
        }
        let t = self.now + self.rng.feedback.sample::<f64, _>(Exp1) / (update_rate * self.n as f64);
        let next = self.rng.feedback.random_range(0..self.n) as u32;
        self.queue.push(t, EventKind::EstimateUpdate { station: next });
    }

    fn on_sample(&mut self) {
        let Some(spec) = self.path_spec else { return };
        let mut q: Vec<u64> = self.levels.occupancy_counts().iter().copied().take(spec.levels).collect();
        q.resize(spec.levels.max(1), 0);
        self.path.push(PathPoint { t: self.now, qbar: stats::diffusion_scale(&q, self.n) });
        self.queue.push(self.now + spec.interval, EventKind::Sample);
    }

    // Replicated tasks.

    fn place_replicas(&mut self, service: f64, batch: Option<usize>) {
        let mut targets = std::mem::take(&mut self.targets);
        match self.policy {
            PolicySpec::Redundancy { d, .. } => {
                policies::assign_redundancy(self.n, d, &mut self.rng.policy, &mut targets).expect("validated d")
            }
            PolicySpec::Rsq { d } => policies::assign_rsq(self.ranks.as_ref().expect("rank index"), d, &mut targets),
            _ => unreachable!(),
        }
        let now = self.now;
        let rep = self.replicas.as_mut().expect("replicas");
        let id = rep.alloc(now, service, batch);
        let base = id * rep.d;
        if rep.abort == Abort::OnStart {
            let idle = policies::argmin_uniform(
                targets.iter().filter(|&&s| self.levels.count(s) == 0).map(|&s| (s, 0u8)),
                &mut self.rng.policy,
            );
            if let Some(s) = idle {
                targets.clear();
                targets.push(s);
            }
        }
        rep.slots[id].width = targets.len();
        for (k, &s) in targets.iter().enumerate() {
            rep.at[base + k] = s as u32;
            rep.state[base + k] = WAITING;
        }
        let generation = rep.slots[id].generation;
        for (k, &s) in targets.iter().enumerate() {
            self.bump(s, true);
            if self.levels.count(s) == 1 {
                self.start_clone(s, id, k);
            } else {
                let rep = self.replicas.as_mut().expect("replicas");
                rep.queues[s].push_back((id as u32, generation));
            }
        }
        self.targets = targets;
    }

    fn start_clone(&mut self, s: usize, id: usize, k: usize) {
        let now = self.now;
        let rep = self.replicas.as_mut().expect("replicas");
        let base = id * rep.d;
        let slot = &mut rep.slots[id];
        let generation = slot.generation;
        slot.running += 1;
        rep.max_concurrent = rep.max_concurrent.max(slot.running);
        rep.state[base + k] = RUNNING;
        rep.started_at[base + k] = now;
        rep.running[s] = Some((id as u32, generation));
        let done = now + slot.service;
        let first = !slot.started;
        slot.started = true;
        let (arrival, batch, width) = (slot.arrival, slot.batch, slot.width);
        self.queue.push(done, EventKind::Departure { station: s as u32, task: id as u32, generation });
        if !first {
            return;
        }
        if let Some(b) = batch {
            self.tasks.record_wait(b, now - arrival);
        }
        if rep.abort == Abort::OnStart {
            let mut cancelled = Vec::new();
            for j in (0..width).filter(|&j| j != k) {
                if rep.state[base + j] == WAITING {
                    rep.state[base + j] = GONE;
                    cancelled.push(rep.at[base + j] as usize);
                }
            }
            for at in cancelled {
                self.bump(at, false);
            }
        }
    }

    fn on_replica_departure(&mut self, s: usize, id: usize, generation: u32) {
        let now = self.now;
        let rep = self.replicas.as_mut().expect("replicas");
        if rep.running[s] != Some((id as u32, generation)) {
            return; // aborted clone
        }
        let k = rep.clone_at(id, s).expect("running clone belongs to its task");
        let base = id * rep.d;
        rep.running[s] = None;
        rep.state[base + k] = GONE;
        let slot = &mut rep.slots[id];
        slot.effort += slot.service;
        let (arrival, batch, width) = (slot.arrival, slot.batch, slot.width);
        self.bump(s, false);
        self.flow.departures += 1;
        if let Some(b) = batch {
            self.tasks.record_response(b, now - arrival);
        }
        let mut freed = Vec::new();
        let rep = self.replicas.as_mut().expect("replicas");
        for j in (0..width).filter(|&j| j != k) {
            let at = rep.at[base + j] as usize;
            match rep.state[base + j] {
                WAITING => {
                    rep.state[base + j] = GONE;
                    freed.push((at, false));
                }
                RUNNING => {
                    rep.state[base + j] = GONE;
                    rep.slots[id].effort += now - rep.started_at[base + j];
                    rep.running[at] = None;
                    freed.push((at, true));
                }
                _ => {}
            }
        }
        let slot = &rep.slots[id];
        rep.effort_sum += slot.effort;
        rep.size_sum += slot.service;
        rep.release(id);
        for &(at, _) in &freed {
            self.bump(at, false);
        }
        for (at, was_running) in freed {
            if was_running {
                self.serve_next(at);
            }
        }
        self.serve_next(s);
    }

    fn serve_next(&mut self, s: usize) {
        loop {
            let rep = self.replicas.as_mut().expect("replicas");
            let Some((id, generation)) = rep.queues[s].pop_front() else { return };
            let id = id as usize;
            if rep.slots[id].generation != generation {
                continue;
            }
            let Some(k) = rep.clone_at(id, s) else { continue };
            if rep.state[id * rep.d + k] == WAITING {
                self.start_clone(s, id, k);
                return;
            }
        }
    }

    /// Closes the accumulators at the horizon.
    pub fn finish(mut self) -> RunSummary {
        self.now = self.horizon;
        let flow = self.flow();
        let q_counts = self.occupancy.averages(self.levels.occupancy_counts(), self.horizon);
        let n = self.n as f64;
        let q_stationary: Vec<f64> = q_counts.iter().map(|q| q / n).collect();
        let mean_waiting_tasks = match self.capacity {
            None => q_counts.iter().skip(1).sum(),
            Some(_) => 0.0,
        };
        let span = self.horizon - self.warmup;
        let accepted = self.tasks.arrivals() - self.tasks.blocked();
        let station_mean_tasks = self.stations.take().map(|(mut area, last)| {
            for (s, a) in area.iter_mut().enumerate() {
                let from = last[s].max(self.warmup);
                *a += self.levels.count(s) as f64 * (self.horizon - from);
                *a /= span;
            }
            area
        });
        let (effort_ratio, max_concurrent_clones) = match &self.replicas {
            Some(r) => ((r.size_sum > 0.0).then(|| r.effort_sum / r.size_sum), Some(r.max_concurrent)),
            None => (None, None),
        };
        let ci_reliable = self.batches >= MIN_RELIABLE_BATCHES
            && (self.tasks.arrivals() == 0 || self.tasks.effective_batches() >= MIN_RELIABLE_BATCHES);
        RunSummary {
            policy: self.policy.label(),
            n_stations: self.n,
            arrival_rate: self.lambda,
            mean_wait: self.tasks.mean_wait(),
            p_wait: self.tasks.p_wait(),
            p_block: self.tasks.p_block(),
            mean_response: self.tasks.mean_response(),
            q_stationary,
            mean_waiting_tasks,
            throughput: accepted as f64 / span,
            qbar_path: self.path_spec.map(|_| std::mem::take(&mut self.path)),
            max_queue: self.levels.max_level() as u32,
            max_queue_peak: self.peak,
            messages_per_task: stats::message_count(&self.messages, self.post_arrivals),
            messages: self.messages,
            flow,
            effort_ratio,
            max_concurrent_clones,
            station_mean_tasks,
            events: self.events,
            batches: self.batches,
            ci_reliable,
            seed: self.seed,
            config_hash: self.config_hash,
        }
    }
}

/// Simulates one replication over `[0, horizon]`.
pub fn run(config: &SimConfig) -> Result<RunSummary> {
    let mut sim = Simulation::new(config)?;
    sim.run_to_end();
    Ok(sim.finish())
}

#[cfg(test)]
mod tests;
