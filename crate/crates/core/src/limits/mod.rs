//! Deterministic and stochastic limit objects: mean-field ODEs, their fixed
//! points, reflected diffusions and the heavy-traffic JSQ(d) system.
//!
//! Fluid states are truncated vectors `(q_1, ..., q_imax)` with the implicit
//! boundary values `q_0 = 1` and `q_{imax+1} = 0`.

mod diffusion;

pub use diffusion::{
    simulate_diffusion_jsq, simulate_diffusion_pool, DiffusionPath, PoolDiffusionCase, PoolDiffusionPath,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type FluidState = Vec<f64>;

/// Values at least this close to 1 count as 1 when locating `m(q)`.
const ONE_TOL: f64 = 1e-12;
/// Fixed-point entries below this are stored as zero.
const UNDERFLOW: f64 = 1e-300;
/// Default truncation: first index below this threshold, plus a margin.
const TAIL: f64 = 1e-12;
const TAIL_MARGIN: usize = 5;

/// Whether `q` lies in `S = {1 ≥ q_1 ≥ q_2 ≥ ... ≥ 0}`.
pub fn in_s(q: &[f64]) -> bool {
    q.iter().all(|&x| (0.0..=1.0).contains(&x)) && q.windows(2).all(|w| w[0] >= w[1])
}

/// Clips to `[0, 1]` and enforces monotonicity by a running minimum.
pub fn project_onto_s(q: &mut [f64]) {
    let mut cap = 1.0f64;
    for x in q.iter_mut() {
        let v = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        cap = cap.min(v);
        *x = cap;
    }
}

#[inline]
fn at(q: &[f64], i: usize) -> f64 {
    // 1-based with q_0 = 1 and zero beyond the truncation.
    if i == 0 {
        1.0
    } else {
        q.get(i - 1).copied().unwrap_or(0.0)
    }
}

/// Number of leading components equal to one: `m(q) = min{i : q_{i+1} < 1}`.
pub fn min_queue_level(q: &[f64]) -> usize {
    q.iter().take_while(|&&x| x >= 1.0 - ONE_TOL).count()
}

/// Mean-field drift of JSQ(d):
/// `λ(q_{i-1}^d - q_i^d) - (q_i - q_{i+1})`.
pub fn fluid_rhs_jsqd(q: &[f64], lambda: f64, d: u32, out: &mut [f64]) {
    let d = d as i32;
    for i in 1..=q.len() {
        out[i - 1] = lambda * (at(q, i - 1).powi(d) - at(q, i).powi(d)) - (at(q, i) - at(q, i + 1));
    }
}

/// Routing weights `p_i(q)` for JSQ; `factor` is 1 for single-server queues
/// and `m(q)` for pools.
fn jsq_weights(q: &[f64], lambda: f64, pools: bool) -> (usize, f64, f64) {
    let m = min_queue_level(q);
    if m == 0 {
        return (0, 1.0, 0.0);
    }
    let factor = if pools { m as f64 } else { 1.0 };
    let low = if lambda > 0.0 { (factor * (1.0 - at(q, m + 1)) / lambda).min(1.0) } else { 1.0 };
    (m, low, 1.0 - low)
}

fn jsq_rhs(q: &[f64], lambda: f64, pools: bool, out: &mut [f64]) {
    let (m, low, high) = jsq_weights(q, lambda, pools);
    // p_{m-1} = low, p_m = high (m > 0); p_0 = 1 when m = 0.
    let p = |j: usize| -> f64 {
        if m == 0 {
            if j == 0 {
                1.0
            } else {
                0.0
            }
        } else if j + 1 == m {
            low
        } else if j == m {
            high
        } else {
            0.0
        }
    };
    for i in 1..=q.len() {
        let rate = if pools { i as f64 } else { 1.0 };
        out[i - 1] = lambda * p(i - 1) - rate * (at(q, i) - at(q, i + 1));
    }
}

/// Fluid drift of JSQ for single-server queues (right-derivative form).
pub fn fluid_rhs_jsq(q: &[f64], lambda: f64, out: &mut [f64]) {
    jsq_rhs(q, lambda, false, out)
}

/// Fluid drift of JSQ for infinite-server pools; the truncation should not
/// exceed the pool capacity.
pub fn fluid_rhs_jsq_pool(q: &[f64], lambda: f64, out: &mut [f64]) {
    jsq_rhs(q, lambda, true, out)
}

/// Right-hand sides accepted by [`integrate_fluid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FluidModel {
    Jsqd { lambda: f64, d: u32 },
    Jsq { lambda: f64 },
    JsqPool { lambda: f64 },
}

impl FluidModel {
    pub fn rhs(&self, q: &[f64], out: &mut [f64]) {
        match *self {
            FluidModel::Jsqd { lambda, d } => fluid_rhs_jsqd(q, lambda, d, out),
            FluidModel::Jsq { lambda } => fluid_rhs_jsq(q, lambda, out),
            FluidModel::JsqPool { lambda } => fluid_rhs_jsq_pool(q, lambda, out),
        }
    }
}

/// Sampled solution of an ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.q.last().map_or(&[], Vec::as_slice)
    }

    /// CSV rows `t,q_1,...,q_imax` with a header.
    pub fn to_csv(&self) -> String {
        let width = self.q.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = String::from("t");
        for i in 1..=width {
            out.push_str(&format!(",q_{i}"));
        }
        out.push('\n');
        for (t, q) in self.t.iter().zip(&self.q) {
            out.push_str(&t.to_string());
            for x in q {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn check_step(step: f64, t_end: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(invalid("t_end", "must be finite and non-negative"));
    }
    Ok(())
}

fn rk4<F>(rhs: F, q0: &[f64], t_end: f64, step: f64, sample_every: f64, project: bool) -> Result<Trajectory>
where
    F: Fn(&[f64], &mut [f64]),
{
    check_step(step, t_end)?;
    let dim = q0.len();
    let steps = (t_end / step).ceil() as usize;
    let stride = if sample_every > 0.0 { ((sample_every / step).round() as usize).max(1) } else { usize::MAX };
    let mut q = q0.to_vec();
    if project {
        project_onto_s(&mut q);
    }
    let mut traj = Trajectory { t: vec![0.0], q: vec![q.clone()] };
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let mut t = 0.0;
    for n in 1..=steps {
        let h = if n == steps { t_end - t } else { step };
        let stage = |base: &[f64], k: &[f64], c: f64, tmp: &mut Vec<f64>| {
            for j in 0..dim {
                tmp[j] = base[j] + c * k[j];
            }
            if project {
                project_onto_s(tmp);
            }
        };
        rhs(&q, &mut k1);
        stage(&q, &k1, 0.5 * h, &mut tmp);
        rhs(&tmp, &mut k2);
        stage(&q, &k2, 0.5 * h, &mut tmp);
        rhs(&tmp, &mut k3);
        stage(&q, &k3, h, &mut tmp);
        rhs(&tmp, &mut k4);
        for j in 0..dim {
            q[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if project {
            project_onto_s(&mut q);
        }
        t = if n == steps { t_end } else { n as f64 * step };
        if n % stride == 0 || n == steps {
            traj.t.push(t);
            traj.q.push(q.clone());
        }
    }
    Ok(traj)
}

/// Classic fixed-step RK4 with projection onto `S` after every step and
/// stage. Samples every `sample_every` time units (0: endpoints only).
pub fn integrate_fluid<F>(rhs: F, q0: &[f64], t_end: f64, step: f64, sample_every: f64) -> Result<Trajectory>
where
    F: Fn(&[f64], &mut [f64]),
{
    rk4(rhs, q0, t_end, step, sample_every, true)
}

fn check_lambda_unit(lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("need 0 <= lambda < 1, got {lambda}")));
    }
    Ok(())
}

/// Truncation level for a fixed point: first index whose value drops below
/// `1e-12`, plus a margin of 5.
pub fn default_truncation(fixed_point: impl Fn(usize) -> f64) -> usize {
    let mut i = 1;
    while fixed_point(i) >= TAIL && i < 10_000 {
        i += 1;
    }
    i + TAIL_MARGIN
}

fn jsqd_entry(lambda: f64, d: u32, i: usize) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let exponent = if d == 1 {
        i as f64
    } else {
        let d = d as f64;
        (d.powi(i as i32) - 1.0) / (d - 1.0)
    };
    let v = (exponent * lambda.ln()).exp();
    if v < UNDERFLOW {
        0.0
    } else {
        v
    }
}

/// `q_i* = λ^{(d^i - 1)/(d - 1)}` (`λ^i` when `d = 1`), length `imax`
/// (default truncation when `None`).
pub fn fixed_point_jsqd(lambda: f64, d: u32, imax: Option<usize>) -> Result<FluidState> {
    check_lambda_unit(lambda)?;
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    let imax = imax.unwrap_or_else(|| default_truncation(|i| jsqd_entry(lambda, d, i)));
    Ok((1..=imax).map(|i| jsqd_entry(lambda, d, i)).collect())
}

/// `q_1* = λ`, zero elsewhere.
pub fn fixed_point_jsq(lambda: f64, imax: Option<usize>) -> Result<FluidState> {
    check_lambda_unit(lambda)?;
    let imax = imax.unwrap_or(1 + TAIL_MARGIN).max(1);
    let mut q = vec![0.0; imax];
    q[0] = lambda;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFixedPoint {
    /// Integral part of `λ`.
    pub k: usize,
    /// Fractional part of `λ`.
    pub f: f64,
    pub q: FluidState,
}

/// Pool fixed point: `q_i* = 1` for `i ≤ K`, `q_{K+1}* = f`, zero above,
/// with `K = ⌊λ⌋`, `f = λ - K`. `capacity = None` means unbounded pools.
pub fn fixed_point_pool(lambda: f64, capacity: Option<u32>, imax: Option<usize>) -> Result<PoolFixedPoint> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid("lambda", "must be finite and non-negative"));
    }
    if let Some(b) = capacity {
        if lambda >= b as f64 {
            return Err(invalid("lambda", format!("need lambda < B = {b}, got {lambda}")));
        }
    }
    let k = lambda.floor() as usize;
    let f = lambda - k as f64;
    let default = k + 1 + TAIL_MARGIN;
    let imax = imax.unwrap_or(match capacity {
        Some(b) => default.min(b as usize),
        None => default,
    });
    let q = (1..=imax)
        .map(|i| match i.cmp(&(k + 1)) {
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => f,
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect();
    Ok(PoolFixedPoint { k, f, q })
}

/// Heavy-traffic JSQ(d) system
/// `dQ̄_i/dt = -d(Q̄_i - Q̄_{i-1}) - (Q̄_i - Q̄_{i+1})`, `Q̄_0 = 0`,
/// zero beyond the truncation.
pub fn heavy_traffic_rhs(qbar: &[f64], d: u32, out: &mut [f64]) {
    let d = d as f64;
    let get = |i: usize| if i == 0 { 0.0 } else { qbar.get(i - 1).copied().unwrap_or(0.0) };
    for i in 1..=qbar.len() {
        out[i - 1] = -d * (get(i) - get(i - 1)) - (get(i) - get(i + 1));
    }
}

pub fn heavy_traffic_jsqd_ode(
    qbar0: &[f64],
    d: u32,
    t_end: f64,
    step: f64,
    sample_every: f64,
) -> Result<Trajectory> {
    rk4(|q, out| heavy_traffic_rhs(q, d, out), qbar0, t_end, step, sample_every, false)
}

#[cfg(test)]
mod tests;
