//! Closed-form reference values used to check simulation output.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policies::{Enhancement, MultiDispatcherSpec, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mm1Metrics {
    pub rho: f64,
    pub p_wait: f64,
    pub mean_wait: f64,
}

impl Mm1Metrics {
    /// Stationary fraction of queues holding at least `i` tasks: `ρ^i`.
    pub fn tail(&self, i: u32) -> f64 {
        self.rho.powi(i as i32)
    }
}

/// M/M/1 with unit service rate and load `ρ`.
pub fn mm1_metrics(rho: f64) -> Result<Mm1Metrics> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid("rho", format!("need 0 <= rho < 1, got {rho}")));
    }
    Ok(Mm1Metrics { rho, p_wait: rho, mean_wait: rho / (1.0 - rho) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErlangC {
    pub n: usize,
    pub lambda: f64,
    /// Probability that an arrival finds all servers busy.
    pub pi_w: f64,
    pub mean_wait: f64,
    /// Mean number of waiting tasks.
    pub mean_queue: f64,
}

/// M/M/N with unit-rate servers. Uses the Erlang-B recursion
/// `B_k = a B_{k-1} / (k + a B_{k-1})`, then `C = N B / (N - a(1 - B))`.
pub fn erlang_c(n: usize, lambda: f64) -> Result<ErlangC> {
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if !(lambda >= 0.0 && lambda < n as f64) {
        return Err(invalid("lambda", format!("need 0 <= lambda < N = {n}, got {lambda}")));
    }
    let mut b = 1.0;
    for k in 1..=n {
        b = lambda * b / (k as f64 + lambda * b);
    }
    let nf = n as f64;
    let pi_w = nf * b / (nf - lambda * (1.0 - b));
    let mean_wait = pi_w / (nf - lambda);
    Ok(ErlangC { n, lambda, pi_w, mean_wait, mean_queue: lambda * mean_wait })
}

fn alpha_spec(alpha: &[f64]) -> Result<()> {
    MultiDispatcherSpec { alpha: alpha.to_vec(), scenario: Scenario::Blocking, enhancement: Enhancement::None }
        .validate()
}

/// Limiting blocking probability of multi-dispatcher JIQ:
/// `max{1 - R α_R, 1 - 1/λ}`, floored at zero.
pub fn blocking_limit(alpha: &[f64], lambda: f64) -> Result<f64> {
    alpha_spec(alpha)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", "must be positive"));
    }
    let r = alpha.len() as f64;
    let alpha_r = *alpha.last().expect("validated non-empty");
    Ok((1.0 - r * alpha_r).max(1.0 - 1.0 / lambda).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueingLimit {
    pub r_star: usize,
    /// Rate at which tasks are forwarded to random servers.
    pub lambda2: f64,
    pub mean_wait: f64,
}

/// Limiting mean wait of multi-dispatcher JIQ in the queueing scenario.
/// `r*` is the largest `r` with
/// `α_r > (1/R)(1 - λ Σ_{i≤r} α_i)/(1 - λ r/R)`; zero if there is none.
pub fn queueing_limit(alpha: &[f64], lambda: f64) -> Result<QueueingLimit> {
    alpha_spec(alpha)?;
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("need 0 <= lambda < 1, got {lambda}")));
    }
    let big_r = alpha.len() as f64;
    let mut r_star = 0;
    let mut sum = 0.0;
    let mut sum_at_star = 0.0;
    for (idx, &a) in alpha.iter().enumerate() {
        let r = (idx + 1) as f64;
        sum += a;
        let threshold = (1.0 - lambda * sum) / (big_r * (1.0 - lambda * r / big_r));
        if a > threshold + 1e-12 {
            r_star = idx + 1;
            sum_at_star = sum;
        }
    }
    let lambda2 = if r_star == 0 {
        0.0
    } else {
        (1.0 - (1.0 - lambda * sum_at_star) / (1.0 - lambda * r_star as f64 / big_r)).max(0.0)
    };
    Ok(QueueingLimit { r_star, lambda2, mean_wait: lambda2 / (1.0 - lambda2) })
}

/// Exchange rate above which token exchange removes the skew penalty:
/// `ν ≥ λ/(1-λ) (α_1 R - 1)`.
pub fn enhancement_b_threshold(alpha: &[f64], lambda: f64) -> Result<f64> {
    alpha_spec(alpha)?;
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("need 0 <= lambda < 1, got {lambda}")));
    }
    Ok((lambda / (1.0 - lambda) * (alpha[0] * alpha.len() as f64 - 1.0)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxQueueLaw {
    /// `ln ln N / ln d`.
    DoublyLogarithmic,
    /// `ln N / ln(1/λ)`.
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxQueuePrediction {
    pub center: f64,
    pub law: MaxQueueLaw,
}

/// Leading-order location of the maximum queue length.
pub fn maxq_prediction(n: usize, d: u32, lambda: f64) -> Result<MaxQueuePrediction> {
    if n < 3 {
        return Err(invalid("n", "need N >= 3"));
    }
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    let nf = n as f64;
    if d >= 2 {
        Ok(MaxQueuePrediction { center: nf.ln().ln() / (d as f64).ln(), law: MaxQueueLaw::DoublyLogarithmic })
    } else {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(invalid("lambda", "need 0 < lambda < 1 for d = 1"));
        }
        Ok(MaxQueuePrediction { center: nf.ln() / (1.0 / lambda).ln(), law: MaxQueueLaw::Logarithmic })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Solves the M/M/N birth-death balance equations directly.
    fn brute_force_pi_w(n: usize, lambda: f64) -> f64 {
        let levels = 4000;
        let mut p = vec![1.0f64; levels];
        for k in 1..levels {
            p[k] = p[k - 1] * lambda / (k.min(n) as f64);
        }
        let total: f64 = p.iter().sum();
        p[n..].iter().sum::<f64>() / total
    }

    #[test]
    fn mm1_examples() {
        let m = mm1_metrics(0.9).unwrap();
        assert_eq!(m.p_wait, 0.9);
        assert!((m.mean_wait - 9.0).abs() < 1e-12);
        let m = mm1_metrics(1e-9).unwrap();
        assert!(m.mean_wait < 1e-8 && m.p_wait < 1e-8);
        assert_eq!(mm1_metrics(0.5).unwrap().tail(3), 0.125);
        assert!(mm1_metrics(1.0).is_err());
    }

    #[test]
    fn erlang_c_examples() {
        for lambda in [0.1, 0.5, 0.9] {
            let c = erlang_c(1, lambda).unwrap();
            let m = mm1_metrics(lambda).unwrap();
            assert!((c.pi_w - m.p_wait).abs() < 1e-15);
            assert!((c.mean_wait - m.mean_wait).abs() < 1e-12);
        }
        let c = erlang_c(2, 1.0).unwrap();
        assert!((c.pi_w - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.mean_wait - 1.0 / 3.0).abs() < 1e-15);
        let small = erlang_c(400, 380.0).unwrap();
        let big = erlang_c(1600, 1560.0).unwrap();
        assert!(small.pi_w > 0.0 && small.pi_w < 1.0);
        assert!((small.pi_w - big.pi_w).abs() < 0.03);
        assert!(erlang_c(100_000, 100_000.0 - 316.0).unwrap().pi_w.is_finite());
        assert!(erlang_c(3, 3.0).is_err());
    }

    #[test]
    fn erlang_c_matches_brute_force() {
        for n in 1..=10 {
            for lambda in [0.3, 0.5 * n as f64, 0.9 * n as f64] {
                let pi = erlang_c(n, lambda).unwrap().pi_w;
                assert!((pi - brute_force_pi_w(n, lambda)).abs() < 1e-12, "n={n} lambda={lambda}");
            }
        }
    }

    #[test]
    fn blocking_limit_examples() {
        assert_eq!(blocking_limit(&[0.5, 0.5], 0.9).unwrap(), 0.0);
        assert!((blocking_limit(&[0.7, 0.3], 0.5).unwrap() - 0.4).abs() < 1e-12);
        assert!((blocking_limit(&[0.5, 0.5], 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(blocking_limit(&[0.3, 0.7], 0.5).is_err());
    }

    #[test]
    fn queueing_limit_examples() {
        let q = queueing_limit(&[0.5, 0.5], 0.8).unwrap();
        assert_eq!((q.r_star, q.lambda2, q.mean_wait), (0, 0.0, 0.0));
        let q = queueing_limit(&[0.25; 4], 0.95).unwrap();
        assert_eq!(q.r_star, 0);
        let q = queueing_limit(&[0.75, 0.25], 0.8).unwrap();
        assert_eq!(q.r_star, 1);
        assert!((q.lambda2 - 1.0 / 3.0).abs() < 1e-12);
        assert!((q.mean_wait - 0.5).abs() < 1e-12);
        // Vanishing skew.
        let q = queueing_limit(&[0.5 + 1e-6, 0.5 - 1e-6], 0.8).unwrap();
        assert!(q.lambda2 < 1e-5);
        assert!(queueing_limit(&[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn maxq_examples() {
        let p = maxq_prediction(1_000_000, 2, 0.9).unwrap();
        assert!((p.center - 3.788).abs() < 1e-3);
        assert_eq!(p.law, MaxQueueLaw::DoublyLogarithmic);
        let p = maxq_prediction(1024, 1, 0.5).unwrap();
        assert!((p.center - 10.0).abs() < 1e-12);
        let centers: Vec<f64> = (2..8).map(|d| maxq_prediction(5000, d, 0.9).unwrap().center).collect();
        assert!(centers.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn enhancement_b_threshold_value() {
        let nu = enhancement_b_threshold(&[0.7, 0.3], 0.5).unwrap();
        assert!((nu - 0.4).abs() < 1e-12);
        assert_eq!(enhancement_b_threshold(&[0.5, 0.5], 0.5).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn blocking_non_increasing_in_smallest_share(a in 0.0f64..0.5, b in 0.0f64..0.5, lambda in 0.05f64..0.99) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo > 1e-6);
            let skewed = blocking_limit(&[1.0 - lo, lo], lambda).unwrap();
            let even = blocking_limit(&[1.0 - hi, hi], lambda).unwrap();
            prop_assert!(even <= skewed + 1e-12);
        }

        #[test]
        fn queueing_limit_ranges(raw in proptest::collection::vec(0.05f64..1.0, 1..6), lambda in 0.01f64..0.99) {
            let mut alpha = raw.clone();
            alpha.sort_by(|x, y| y.total_cmp(x));
            let s: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|x| *x /= s);
            let q = queueing_limit(&alpha, lambda).unwrap();
            prop_assert!(q.lambda2 >= 0.0 && q.lambda2 <= lambda + 1e-12);
            prop_assert!(q.mean_wait >= 0.0);
            prop_assert_eq!(q.lambda2 == 0.0, q.r_star == 0);
        }
    }
}
