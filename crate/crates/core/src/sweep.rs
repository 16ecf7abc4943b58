//! Independent replications, run sequentially or on a rayon pool.
//!
//! Cells never share mutable state: each one owns its configuration and
//! returns an owned summary, so the parallel and sequential paths produce
//! identical results in identical order.

use crate::engine::{run, SimConfig};
use crate::error::Result;
use crate::rng::derive_seed;
use crate::stats::{t_half_width, Estimate, RunSummary};

/// `reps` copies of `base` with seeds derived from `base.seed` and the
/// replication index.
pub fn replicate(base: &SimConfig, reps: usize) -> Vec<SimConfig> {
    (0..reps).map(|r| base.clone().with_seed(derive_seed(base.seed, &[r as u64]))).collect()
}

pub fn run_sequential(configs: &[SimConfig]) -> Vec<Result<RunSummary>> {
    configs.iter().map(run).collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel(configs: &[SimConfig], threads: Option<usize>) -> Vec<Result<RunSummary>> {
    use rayon::prelude::*;
    let work = || configs.par_iter().map(run).collect();
    match threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        },
        None => work(),
    }
}

/// Runs every configuration; parallel when the `parallel` feature is on
/// and more than one thread is allowed.
pub fn run_all(configs: &[SimConfig], threads: Option<usize>) -> Vec<Result<RunSummary>> {
    #[cfg(feature = "parallel")]
    {
        if threads != Some(1) {
            return run_parallel(configs, threads);
        }
    }
    let _ = threads;
    run_sequential(configs)
}

/// Cross-replication mean with a Student-t half-width.
pub fn aggregate(values: &[f64]) -> Estimate {
    if values.is_empty() {
        return Estimate::default();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Estimate::new(mean, t_half_width(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::PolicySpec;

    #[test]
    fn replicas_get_distinct_seeds() {
        let base = SimConfig::new(4, 2.0, PolicySpec::Random, 10.0, 3);
        let reps = replicate(&base, 5);
        let mut seeds: Vec<u64> = reps.iter().map(|c| c.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 5);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let base = SimConfig::new(10, 7.0, PolicySpec::Jsqd { d: 2, replacement: false }, 50.0, 8);
        let cfgs = replicate(&base, 6);
        let seq: Vec<_> = run_sequential(&cfgs).into_iter().map(|r| r.unwrap()).collect();
        let all: Vec<_> = run_all(&cfgs, None).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(seq, all);
        let one: Vec<_> = run_all(&cfgs, Some(1)).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(seq, one);
    }

    #[test]
    fn aggregate_of_constant_has_zero_width() {
        assert_eq!(aggregate(&[2.0, 2.0, 2.0]), Estimate::new(2.0, 0.0));
        assert_eq!(aggregate(&[]), Estimate::default());
    }
}
