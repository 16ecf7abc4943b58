//! Steady-state estimators: waiting time, blocking, time-averaged occupancy,
//! diffusion scaling and message overhead, with batch-means intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Batches used when the caller does not choose.
pub const DEFAULT_BATCHES: usize = 20;
/// Fewer post-warmup batches than this and intervals are flagged unreliable.
pub const MIN_RELIABLE_BATCHES: usize = 20;

/// Point estimate with the half-width of a 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn new(value: f64, half_width: f64) -> Self {
        Self { value, half_width }
    }

    pub fn lower(&self) -> f64 {
        self.value - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.value + self.half_width
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

/// Half-width of the two-sided 95% Student-t interval for the mean of
/// `samples`. Zero when fewer than two samples or no spread.
pub fn t_half_width(samples: &[f64]) -> f64 {
    let k = samples.len();
    if k < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / k as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    if var <= 0.0 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64).expect("valid degrees of freedom").inverse_cdf(0.975);
    t * (var / k as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Default)]
struct Batch {
    arrivals: u64,
    blocked: u64,
    served: u64,
    waited: u64,
    wait_sum: f64,
    responses: u64,
    response_sum: f64,
}

/// Per-task accumulators, bucketed into equal-length time batches by
/// arrival epoch.
#[derive(Debug, Clone)]
pub struct TaskStats {
    warmup: f64,
    batch_len: f64,
    batches: Vec<Batch>,
}

impl TaskStats {
    pub fn new(warmup: f64, horizon: f64, batches: usize) -> Self {
        let batches = batches.max(1);
        Self { warmup, batch_len: (horizon - warmup) / batches as f64, batches: vec![Batch::default(); batches] }
    }

    /// Batch of a task that arrived at `t`, or `None` during warmup.
    #[inline]
    pub fn batch_of(&self, t: f64) -> Option<usize> {
        if t < self.warmup {
            return None;
        }
        let b = ((t - self.warmup) / self.batch_len) as usize;
        Some(b.min(self.batches.len() - 1))
    }

    #[inline]
    pub fn record_arrival(&mut self, batch: usize) {
        self.batches[batch].arrivals += 1;
    }

    #[inline]
    pub fn record_blocked(&mut self, batch: usize) {
        self.batches[batch].blocked += 1;
    }

    /// Waiting time from arrival to start of service.
    #[inline]
    pub fn record_wait(&mut self, batch: usize, wait: f64) {
        let b = &mut self.batches[batch];
        b.served += 1;
        b.wait_sum += wait;
        if wait > 0.0 {
            b.waited += 1;
        }
    }

    #[inline]
    pub fn record_response(&mut self, batch: usize, response: f64) {
        let b = &mut self.batches[batch];
        b.responses += 1;
        b.response_sum += response;
    }

    pub fn arrivals(&self) -> u64 {
        self.batches.iter().map(|b| b.arrivals).sum()
    }

    pub fn blocked(&self) -> u64 {
        self.batches.iter().map(|b| b.blocked).sum()
    }

    fn ratio(&self, num: impl Fn(&Batch) -> f64, den: impl Fn(&Batch) -> u64) -> Estimate {
        let total_den: u64 = self.batches.iter().map(&den).sum();
        if total_den == 0 {
            return Estimate::default();
        }
        let total_num: f64 = self.batches.iter().map(&num).sum();
        let means: Vec<f64> =
            self.batches.iter().filter(|b| den(b) > 0).map(|b| num(b) / den(b) as f64).collect();
        Estimate::new(total_num / total_den as f64, t_half_width(&means))
    }

    pub fn mean_wait(&self) -> Estimate {
        self.ratio(|b| b.wait_sum, |b| b.served)
    }

    pub fn p_wait(&self) -> Estimate {
        self.ratio(|b| b.waited as f64, |b| b.served)
    }

    pub fn p_block(&self) -> Estimate {
        self.ratio(|b| b.blocked as f64, |b| b.arrivals)
    }

    pub fn mean_response(&self) -> Estimate {
        self.ratio(|b| b.response_sum, |b| b.responses)
    }

    /// Number of batches that saw at least one recorded task.
    pub fn effective_batches(&self) -> usize {
        self.batches.iter().filter(|b| b.arrivals > 0).count()
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }
}

/// Lazy time integral of each `Q_i` over `[warmup, t]`.
#[derive(Debug, Clone)]
pub struct OccupancyIntegrator {
    warmup: f64,
    area: Vec<f64>,
    last: Vec<f64>,
}

impl OccupancyIntegrator {
    pub fn new(warmup: f64) -> Self {
        Self { warmup, area: Vec::new(), last: Vec::new() }
    }

    /// `Q_i` changed from `old` at time `now`.
    #[inline]
    pub fn on_change(&mut self, i: usize, old: u64, now: f64) {
        if self.area.len() < i {
            self.area.resize(i, 0.0);
            self.last.resize(i, self.warmup);
        }
        let k = i - 1;
        let from = self.last[k].max(self.warmup);
        if now > from {
            self.area[k] += old as f64 * (now - from);
        }
        self.last[k] = now;
    }

    /// Time averages of `Q_i` over `[warmup, end]`, given the state at `end`.
    pub fn averages(&self, current: &[u64], end: f64) -> Vec<f64> {
        let span = end - self.warmup;
        if span <= 0.0 {
            return Vec::new();
        }
        let len = self.area.len().max(current.len());
        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let mut area = self.area.get(k).copied().unwrap_or(0.0);
            let from = self.last.get(k).copied().unwrap_or(self.warmup).max(self.warmup);
            let q = current.get(k).copied().unwrap_or(0);
            if end > from {
                area += q as f64 * (end - from);
            }
            out.push(area / span);
        }
        while out.last() == Some(&0.0) {
            out.pop();
        }
        out
    }
}

/// Time average of `Q_i / N` for a piecewise-constant path given as
/// `(t, Q)` change points; each state holds until the next point.
pub fn fluid_occupancy_average(path: &[(f64, Vec<u64>)], n: usize, warmup: f64, horizon: f64) -> Vec<f64> {
    let span = horizon - warmup;
    if span <= 0.0 || n == 0 {
        return Vec::new();
    }
    let width = path.iter().map(|(_, q)| q.len()).max().unwrap_or(0);
    let mut acc = vec![0.0; width];
    for (k, (t, q)) in path.iter().enumerate() {
        let next = path.get(k + 1).map_or(horizon, |(u, _)| *u);
        let dt = next.min(horizon) - t.max(warmup);
        if dt <= 0.0 {
            continue;
        }
        for (a, &qi) in acc.iter_mut().zip(q) {
            *a += qi as f64 * dt;
        }
    }
    let mut out: Vec<f64> = acc.into_iter().map(|a| a / (span * n as f64)).collect();
    while out.last() == Some(&0.0) {
        out.pop();
    }
    out
}

/// Diffusion scaling: `Q̄_1 = -(N - Q_1)/√N`, `Q̄_i = Q_i/√N` for `i ≥ 2`.
pub fn diffusion_scale(occupancy: &[u64], n: usize) -> Vec<f64> {
    let root = (n as f64).sqrt();
    let mut out: Vec<f64> = occupancy.iter().map(|&q| q as f64 / root).collect();
    match out.first_mut() {
        Some(first) => *first = -((n as f64) - occupancy[0] as f64) / root,
        None => out.push(-(n as f64) / root),
    }
    out
}

/// Messages exchanged per task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageCounts {
    /// Probe/response pairs and replica placements.
    pub probes: u64,
    /// Idleness tokens and token transfers.
    pub tokens: u64,
    /// Queue-length reports.
    pub reports: u64,
}

impl MessageCounts {
    pub fn total(&self) -> u64 {
        self.probes + self.tokens + self.reports
    }
}

pub fn message_count(counts: &MessageCounts, tasks: u64) -> f64 {
    if tasks == 0 {
        0.0
    } else {
        counts.total() as f64 / tasks as f64
    }
}

/// One sample of the diffusion-scaled occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub qbar: Vec<f64>,
}

/// Task-flow totals over the whole run, including warmup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounts {
    pub arrivals: u64,
    pub departures: u64,
    pub blocked: u64,
    pub in_system: u64,
}

impl FlowCounts {
    pub fn is_conserved(&self) -> bool {
        self.arrivals == self.departures + self.in_system + self.blocked
    }
}

/// Everything a single replication reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub n_stations: usize,
    pub arrival_rate: f64,
    pub mean_wait: Estimate,
    pub p_wait: Estimate,
    pub p_block: Estimate,
    pub mean_response: Estimate,
    /// Time-averaged `Q_i / N`, `i = 1, 2, ...`.
    pub q_stationary: Vec<f64>,
    /// Time-averaged number of tasks not in service (single-server queues).
    pub mean_waiting_tasks: f64,
    /// Accepted post-warmup arrivals per unit time.
    pub throughput: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qbar_path: Option<Vec<PathPoint>>,
    /// Largest queue length at the horizon.
    pub max_queue: u32,
    /// Largest queue length seen after warmup.
    pub max_queue_peak: u32,
    pub messages_per_task: f64,
    pub messages: MessageCounts,
    pub flow: FlowCounts,
    /// Service effort spent per completed replicated task, in units of its size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_ratio: Option<f64>,
    /// Most clones of one task ever in service at the same time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrent_clones: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_mean_tasks: Option<Vec<f64>>,
    pub events: u64,
    pub batches: usize,
    pub ci_reliable: bool,
    pub seed: u64,
    pub config_hash: String,
}

impl RunSummary {
    /// `q_i` with zero beyond the stored truncation (1-based).
    pub fn q(&self, i: usize) -> f64 {
        self.q_stationary.get(i - 1).copied().unwrap_or(0.0)
    }

    /// Time-averaged tasks per station.
    pub fn mean_tasks_per_station(&self) -> f64 {
        self.q_stationary.iter().sum()
    }

    /// Relative gap between the queue-length average and throughput × mean
    /// wait.
    pub fn littles_law_gap(&self) -> f64 {
        let rhs = self.throughput * self.mean_wait.value;
        let scale = self.mean_waiting_tasks.abs().max(rhs.abs()).max(1e-12);
        (self.mean_waiting_tasks - rhs).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_interval_known_value() {
        // Sample sd = 1, k = 4: t_{0.975,3} = 3.182446...
        let hw = t_half_width(&[-1.5, -0.5, 0.5, 1.5].map(|x: f64| x * (3.0f64 / 5.0).sqrt()));
        assert!((hw - 3.182_446_305 / 2.0).abs() < 1e-6, "{hw}");
        assert_eq!(t_half_width(&[1.0]), 0.0);
        assert_eq!(t_half_width(&[2.0, 2.0, 2.0]), 0.0);
    }

    #[test]
    fn static_occupancy_average() {
        // counts (1,1,0,0) held over the whole window.
        let occ = crate::engine::OccupancyVector::from_task_counts(&[1, 1, 0, 0]);
        let path = vec![(0.0, occ.counts.clone())];
        assert_eq!(fluid_occupancy_average(&path, 4, 0.0, 10.0), vec![0.5]);

        let mut integ = OccupancyIntegrator::new(2.0);
        integ.on_change(1, 0, 1.0);
        integ.on_change(1, 2, 6.0);
        // Q_1 = 2 on [2, 6], then 3 on [6, 10].
        let avg = integ.averages(&[3], 10.0);
        assert!((avg[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn diffusion_scaling_examples() {
        assert_eq!(diffusion_scale(&[400], 400), vec![0.0]);
        assert_eq!(diffusion_scale(&[380, 20], 400), vec![-1.0, 1.0]);
        assert_eq!(diffusion_scale(&[], 4), vec![-2.0]);
    }

    #[test]
    fn empty_stats_are_zero() {
        let s = TaskStats::new(0.0, 10.0, 20);
        assert_eq!(s.mean_wait(), Estimate::default());
        assert_eq!(s.p_block(), Estimate::default());
        assert_eq!(s.effective_batches(), 0);
    }

    #[test]
    fn batch_assignment() {
        let s = TaskStats::new(10.0, 30.0, 20);
        assert_eq!(s.batch_of(5.0), None);
        assert_eq!(s.batch_of(10.0), Some(0));
        assert_eq!(s.batch_of(29.99), Some(19));
        assert_eq!(s.batch_of(30.0), Some(19));
    }

    #[test]
    fn message_overhead() {
        let m = MessageCounts { probes: 400, tokens: 0, reports: 0 };
        assert_eq!(message_count(&m, 100), 4.0);
        assert_eq!(message_count(&MessageCounts::default(), 0), 0.0);
    }
}
