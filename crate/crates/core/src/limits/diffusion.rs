use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::check_step;
use crate::error::{invalid, Result};

/// Sampled path of the reflected JSQ diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPath {
    pub t: Vec<f64>,
    /// `(Q̄_1, ..., Q̄_imax)` at each sample.
    pub qbar: Vec<Vec<f64>>,
    /// Cumulative regulator `U_1`.
    pub regulator: Vec<f64>,
}

fn stride(step: f64, sample_every: f64) -> usize {
    if sample_every > 0.0 {
        ((sample_every / step).round() as usize).max(1)
    } else {
        usize::MAX
    }
}

/// Euler-Maruyama for
/// `dQ̄_1 = √2 dW - β dt - Q̄_1 dt + Q̄_2 dt - dU_1`,
/// `dQ̄_2 = dU_1 - (Q̄_2 - Q̄_3) dt`,
/// `dQ̄_i = -(Q̄_i - Q̄_{i+1}) dt` for `i ≥ 3`.
///
/// After each unconstrained step any positive part of `Q̄_1` is moved into the
/// regulator and injected into `Q̄_2`. `noise` scales the Brownian term
/// (1 for the model, 0 for the drift-only limit).
#[allow(clippy::too_many_arguments)]
pub fn simulate_diffusion_jsq<R: Rng + ?Sized>(
    beta: f64,
    qbar0: &[f64],
    t_end: f64,
    step: f64,
    sample_every: f64,
    noise: f64,
    rng: &mut R,
) -> Result<DiffusionPath> {
    check_step(step, t_end)?;
    if qbar0.len() < 2 {
        return Err(invalid("qbar0", "needs at least two components"));
    }
    if qbar0[0] > 0.0 || qbar0[1..].iter().any(|&x| x < 0.0) {
        return Err(invalid("qbar0", "need Q̄_1 <= 0 and Q̄_i >= 0 for i >= 2"));
    }
    let dim = qbar0.len();
    let steps = (t_end / step).ceil() as usize;
    let every = stride(step, sample_every);
    let sq = (2.0f64).sqrt() * noise;
    let mut q = qbar0.to_vec();
    let mut next = q.clone();
    let mut u = 0.0;
    let mut path = DiffusionPath { t: vec![0.0], qbar: vec![q.clone()], regulator: vec![0.0] };
    let mut t = 0.0;
    for n in 1..=steps {
        let h = if n == steps { t_end - t } else { step };
        let z: f64 = rng.sample(StandardNormal);
        let at = |i: usize| q.get(i).copied().unwrap_or(0.0);
        next[0] = q[0] + sq * h.sqrt() * z - beta * h - q[0] * h + q[1] * h;
        for i in 1..dim {
            next[i] = q[i] - (q[i] - at(i + 1)) * h;
        }
        if next[0] > 0.0 {
            let push = next[0];
            next[0] = 0.0;
            next[1] += push;
            u += push;
        }
        std::mem::swap(&mut q, &mut next);
        t = if n == steps { t_end } else { n as f64 * step };
        if n % every == 0 || n == steps {
            path.t.push(t);
            path.qbar.push(q.clone());
            path.regulator.push(u);
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum PoolDiffusionCase {
    /// Fractional load: `dQ̄_{K+1} = -Q̄_{K+1} dt + √(2λ) dW`.
    Fractional { lambda: f64 },
    /// Integral load `K` with slack `β`:
    /// `dQ̂_K = √(2K) dW - (Q̂_K + K Q̂_{K+1}) dt + β dt + dV_1`,
    /// `dQ̂_{K+1} = dV_1 - (K+1) Q̂_{K+1} dt`.
    Integral { k: u32, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDiffusionPath {
    pub t: Vec<f64>,
    /// `[Q̄_{K+1}]` in the fractional case, `[Q̂_K, Q̂_{K+1}]` in the integral case.
    pub state: Vec<Vec<f64>>,
    /// Cumulative regulator `V_1` (always zero in the fractional case).
    pub regulator: Vec<f64>,
}

/// Euler-Maruyama for the pool diffusions. In the integral case a negative
/// `Q̂_K` is pushed back to zero and the same amount is added to `V_1` and to
/// `Q̂_{K+1}`; the linear decay of `Q̂_{K+1}` is applied exactly so it stays
/// non-negative for any step.
pub fn simulate_diffusion_pool<R: Rng + ?Sized>(
    case: PoolDiffusionCase,
    x0: &[f64],
    t_end: f64,
    step: f64,
    sample_every: f64,
    rng: &mut R,
) -> Result<PoolDiffusionPath> {
    check_step(step, t_end)?;
    let steps = (t_end / step).ceil() as usize;
    let every = stride(step, sample_every);
    let mut t = 0.0;
    match case {
        PoolDiffusionCase::Fractional { lambda } => {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(invalid("lambda", "must be positive"));
            }
            let mut x = *x0.first().ok_or_else(|| invalid("x0", "needs one component"))?;
            let sigma = (2.0 * lambda).sqrt();
            let mut path = PoolDiffusionPath { t: vec![0.0], state: vec![vec![x]], regulator: vec![0.0] };
            for n in 1..=steps {
                let h = if n == steps { t_end - t } else { step };
                let z: f64 = rng.sample(StandardNormal);
                x += -x * h + sigma * h.sqrt() * z;
                t = if n == steps { t_end } else { n as f64 * step };
                if n % every == 0 || n == steps {
                    path.t.push(t);
                    path.state.push(vec![x]);
                    path.regulator.push(0.0);
                }
            }
            Ok(path)
        }
        PoolDiffusionCase::Integral { k, beta } => {
            if k == 0 {
                return Err(invalid("k", "must be at least 1"));
            }
            if x0.len() != 2 || x0[0] < 0.0 || x0[1] < 0.0 {
                return Err(invalid("x0", "needs (Q̂_K, Q̂_{K+1}) with both components non-negative"));
            }
            let kf = k as f64;
            let sigma = (2.0 * kf).sqrt();
            let (mut a, mut b) = (x0[0], x0[1]);
            let mut v = 0.0;
            let mut path = PoolDiffusionPath { t: vec![0.0], state: vec![vec![a, b]], regulator: vec![0.0] };
            for n in 1..=steps {
                let h = if n == steps { t_end - t } else { step };
                let z: f64 = rng.sample(StandardNormal);
                let a_next = a + sigma * h.sqrt() * z - (a + kf * b) * h + beta * h;
                b *= (-(kf + 1.0) * h).exp();
                a = a_next;
                if a < 0.0 {
                    let push = -a;
                    a = 0.0;
                    b += push;
                    v += push;
                }
                t = if n == steps { t_end } else { n as f64 * step };
                if n % every == 0 || n == steps {
                    path.t.push(t);
                    path.state.push(vec![a, b]);
                    path.regulator.push(v);
                }
            }
            Ok(path)
        }
    }
}
