//! Undirected server graphs and well-connectedness diagnostics.
//!
//! `COM(U)` counts the vertices outside the closed neighbourhood of `U`;
//! `DIS1`/`DIS2` take its supremum over all subsets of size at least
//! `⌈εN⌉` / `⌈ε√N⌉`. The exact routine enumerates subsets and is capped at
//! [`EXACT_CAP`] vertices; larger graphs get a sampled lower bound.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest vertex count accepted by exact DIS enumeration.
pub const EXACT_CAP: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Clique,
    Ring,
    Er,
    Inhomogeneous,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    kind: TopologyKind,
    adjacency: Vec<Vec<u32>>,
}

impl Topology {
    /// Builds a graph from an edge list. Self-loops and duplicates are
    /// dropped; every edge is made symmetric.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, kind: TopologyKind) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(invalid("edge", format!("({u}, {v}) out of range for n={n}")));
            }
            if u != v {
                sets[u].insert(v as u32);
                sets[v].insert(u as u32);
            }
        }
        Ok(Self { kind, adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect() })
    }

    pub fn empty(n: usize) -> Self {
        Self { kind: TopologyKind::Custom, adjacency: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&(v as u32)).is_ok()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        2.0 * self.edge_count() as f64 / self.n() as f64
    }

    pub fn min_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// True when every pair of distinct vertices is adjacent.
    pub fn is_complete(&self) -> bool {
        let n = self.n();
        self.adjacency.iter().all(|a| a.len() + 1 == n)
    }

    /// Parses "u v" pairs, one per line, 0-indexed. Blank lines and lines
    /// starting with `#` are ignored. `n` defaults to one past the largest id.
    pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = |what: &str| -> Result<usize> {
                let tok = parts.next().ok_or_else(|| Error::EdgeList {
                    line: idx + 1,
                    message: format!("missing {what} vertex"),
                })?;
                tok.parse().map_err(|_| Error::EdgeList { line: idx + 1, message: format!("bad vertex id `{tok}`") })
            };
            let u = next("first")?;
            let v = next("second")?;
            if parts.next().is_some() {
                return Err(Error::EdgeList { line: idx + 1, message: "expected exactly two vertex ids".into() });
            }
            edges.push((u, v));
        }
        let implied = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let n = n.unwrap_or(implied);
        if implied > n {
            return Err(invalid("n", format!("edge list references vertex {} but n={n}", implied - 1)));
        }
        Self::from_edges(n, edges, TopologyKind::Custom)
    }

    pub fn load_edge_list(path: &Path, n: Option<usize>) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?, n)
    }
}

pub fn make_clique(n: usize) -> Topology {
    let adjacency = (0..n).map(|v| (0..n as u32).filter(|&u| u as usize != v).collect()).collect();
    Topology { kind: TopologyKind::Clique, adjacency }
}

pub fn make_ring(n: usize) -> Topology {
    let edges = (0..n).map(|v| (v, (v + 1) % n));
    let mut t = Topology::from_edges(n, edges, TopologyKind::Ring).expect("ring edges in range");
    t.kind = TopologyKind::Ring;
    t
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(invalid("p", format!("{p} is not a probability")));
    }
    Ok(())
}

/// Erdős–Rényi graph: each of the `n(n-1)/2` edges present independently
/// with probability `p`.
pub fn make_er<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Topology> {
    check_probability(p)?;
    make_inhomogeneous(n, |_, _| p, rng).map(|mut t| {
        t.kind = TopologyKind::Er;
        t
    })
}

/// Inhomogeneous random graph with edge probability `p_uv(u, v)` for `u < v`.
pub fn make_inhomogeneous<R, F>(n: usize, p_uv: F, rng: &mut R) -> Result<Topology>
where
    R: Rng + ?Sized,
    F: Fn(usize, usize) -> f64,
{
    let mut adjacency = vec![Vec::new(); n];
    for u in 0..n {
        for v in (u + 1)..n {
            let p = p_uv(u, v);
            check_probability(p)?;
            if rng.random_bool(p) {
                adjacency[u].push(v as u32);
                adjacency[v].push(u as u32);
            }
        }
    }
    // Pushes happen in increasing order of the other endpoint, so the lists
    // are already sorted.
    Ok(Topology { kind: TopologyKind::Inhomogeneous, adjacency })
}

/// `|V \ N[U]|`. Duplicate or out-of-range vertices in `u_set` are rejected.
pub fn com(topology: &Topology, u_set: &[usize]) -> Result<usize> {
    let n = topology.n();
    let mut covered = vec![false; n];
    for &u in u_set {
        if u >= n {
            return Err(invalid("U", format!("vertex {u} out of range for n={n}")));
        }
        covered[u] = true;
        for &v in topology.neighbors(u) {
            covered[v as usize] = true;
        }
    }
    Ok(covered.iter().filter(|&&c| !c).count())
}

/// Which subset-size threshold applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisScale {
    /// `|U| >= ⌈εN⌉`
    Linear,
    /// `|U| >= ⌈ε√N⌉`
    Sqrt,
}

impl DisScale {
    pub fn min_size(self, n: usize, eps: f64) -> usize {
        let raw = match self {
            DisScale::Linear => eps * n as f64,
            DisScale::Sqrt => eps * (n as f64).sqrt(),
        };
        // Guard against 0.5 * 6 = 3.0000000000000004 style round-off.
        let k = (raw - 1e-9).ceil().max(0.0) as usize;
        k.min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisValue {
    pub value: usize,
    /// `true` when the value came from exhaustive enumeration; otherwise it
    /// is only a lower bound on the supremum.
    pub exact: bool,
    pub min_subset_size: usize,
}

fn closed_masks(topology: &Topology) -> Vec<u32> {
    (0..topology.n())
        .map(|v| topology.neighbors(v).iter().fold(1u32 << v, |m, &u| m | (1u32 << u)))
        .collect()
}

/// Exact supremum of COM over subsets with at least `k` vertices. COM is
/// non-increasing under set inclusion, so only subsets of size exactly `k`
/// need to be visited.
fn dis_exact_k(topology: &Topology, k: usize) -> usize {
    let n = topology.n();
    if k == 0 {
        return n;
    }
    let masks = closed_masks(topology);
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best = 0;
    // Gosper's hack over all k-subsets.
    let mut set: u32 = (1u32 << k) - 1;
    while set <= full {
        let mut cover = 0u32;
        let mut rest = set;
        while rest != 0 {
            let v = rest.trailing_zeros() as usize;
            cover |= masks[v];
            rest &= rest - 1;
        }
        best = best.max(n - cover.count_ones() as usize);
        if best == n - k {
            break;
        }
        let c = set & set.wrapping_neg();
        let r = set + c;
        if r == 0 || r > full {
            break;
        }
        set = (((r ^ set) >> 2) / c) | r;
    }
    best
}

fn dis_exact(topology: &Topology, eps: f64, scale: DisScale) -> Result<DisValue> {
    check_eps(eps)?;
    let n = topology.n();
    if n > EXACT_CAP {
        return Err(Error::TooLargeForExact { n, cap: EXACT_CAP });
    }
    let k = scale.min_size(n, eps);
    Ok(DisValue { value: dis_exact_k(topology, k), exact: true, min_subset_size: k })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid("eps", format!("{eps} not in (0, 1]")));
    }
    Ok(())
}

/// Exact `DIS1(G, ε)`.
pub fn dis1(topology: &Topology, eps: f64) -> Result<DisValue> {
    dis_exact(topology, eps, DisScale::Linear)
}

/// Exact `DIS2(G, ε)`.
pub fn dis2(topology: &Topology, eps: f64) -> Result<DisValue> {
    dis_exact(topology, eps, DisScale::Sqrt)
}

/// Lower bound on DIS from random subsets and greedy adversarial subsets
/// that grow by the vertex adding the fewest newly covered vertices.
pub fn dis_sampled<R: Rng + ?Sized>(
    topology: &Topology,
    eps: f64,
    scale: DisScale,
    samples: usize,
    rng: &mut R,
) -> Result<DisValue> {
    check_eps(eps)?;
    let n = topology.n();
    let k = scale.min_size(n, eps);
    if k == 0 {
        return Ok(DisValue { value: n, exact: true, min_subset_size: 0 });
    }
    let mut best = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for round in 0..samples.max(1) {
        order.shuffle(rng);
        let subset: Vec<usize> = if round % 2 == 0 {
            order[..k].to_vec()
        } else {
            greedy_subset(topology, order[0], k)
        };
        best = best.max(com(topology, &subset)?);
    }
    Ok(DisValue { value: best, exact: false, min_subset_size: k })
}

fn greedy_subset(topology: &Topology, seed: usize, k: usize) -> Vec<usize> {
    let n = topology.n();
    let mut covered = vec![false; n];
    let mut chosen = vec![false; n];
    let mut subset = Vec::with_capacity(k);
    let add = |v: usize, covered: &mut Vec<bool>, chosen: &mut Vec<bool>, subset: &mut Vec<usize>| {
        chosen[v] = true;
        subset.push(v);
        covered[v] = true;
        for &u in topology.neighbors(v) {
            covered[u as usize] = true;
        }
    };
    add(seed, &mut covered, &mut chosen, &mut subset);
    while subset.len() < k {
        let gain = |v: usize| {
            usize::from(!covered[v]) + topology.neighbors(v).iter().filter(|&&u| !covered[u as usize]).count()
        };
        let next = (0..n).filter(|&v| !chosen[v]).min_by_key(|&v| gain(v)).expect("k <= n");
        add(next, &mut covered, &mut chosen, &mut subset);
    }
    subset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub d_min: usize,
    /// `N - 1 - d_min`: neighbours missing at the worst vertex.
    pub deficit: usize,
    /// `deficit <= N / ln N`.
    pub n_optimal_hint: bool,
    /// `deficit <= √N / ln N`.
    pub sqrtn_optimal_hint: bool,
}

/// Instance-level reading of the minimum-degree sufficient conditions. The
/// asymptotic statements are about graph sequences, so the thresholds here
/// are heuristics for a single graph.
pub fn min_degree_check(topology: &Topology) -> DegreeReport {
    let n = topology.n();
    let d_min = topology.min_degree();
    let deficit = n.saturating_sub(1).saturating_sub(d_min);
    let log_n = (n.max(3) as f64).ln();
    DegreeReport {
        d_min,
        deficit,
        n_optimal_hint: (deficit as f64) <= n as f64 / log_n,
        sqrtn_optimal_hint: (deficit as f64) <= (n as f64).sqrt() / log_n,
    }
}
