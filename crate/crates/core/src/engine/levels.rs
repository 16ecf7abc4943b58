use serde::{Deserialize, Serialize};

/// Exact occupancy state: `counts[i - 1]` is the number of stations holding
/// at least `i` tasks. Truncated after the last non-zero entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyVector {
    pub counts: Vec<u64>,
    pub n_stations: usize,
}

impl OccupancyVector {
    /// Builds the vector by direct counting.
    pub fn from_task_counts(task_counts: &[u32]) -> Self {
        let max = task_counts.iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max];
        for &c in task_counts {
            for slot in counts.iter_mut().take(c as usize) {
                *slot += 1;
            }
        }
        Self { counts, n_stations: task_counts.len() }
    }

    /// `Q_i` with `Q_i = 0` beyond the truncation.
    pub fn get(&self, i: usize) -> u64 {
        assert!(i >= 1, "occupancy is indexed from 1");
        self.counts.get(i - 1).copied().unwrap_or(0)
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = self.n_stations.max(1) as f64;
        self.counts.iter().map(|&q| q as f64 / n).collect()
    }
}

/// Stations bucketed by task count, with the occupancy vector maintained
/// incrementally. Moving a station between adjacent levels is O(1).
#[derive(Debug, Clone)]
pub struct Levels {
    count: Vec<u32>,
    members: Vec<Vec<u32>>,
    pos: Vec<u32>,
    occupancy: Vec<u64>,
}

impl Levels {
    pub fn new(n: usize) -> Self {
        Self {
            count: vec![0; n],
            members: vec![(0..n as u32).collect()],
            pos: (0..n as u32).collect(),
            occupancy: Vec::new(),
        }
    }

    /// Builds the structure from explicit task counts.
    pub fn from_counts(counts: &[u32]) -> Self {
        let mut lv = Self::new(counts.len());
        for (s, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                lv.increment(s);
            }
        }
        lv
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    #[inline]
    pub fn count(&self, station: usize) -> u32 {
        self.count[station]
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    /// Stations currently holding exactly `level` tasks, in no particular order.
    #[inline]
    pub fn members(&self, level: usize) -> &[u32] {
        self.members.get(level).map_or(&[], Vec::as_slice)
    }

    /// Lowest task count present. `None` only when there are no stations.
    pub fn min_level(&self) -> Option<usize> {
        self.members.iter().position(|m| !m.is_empty())
    }

    pub fn max_level(&self) -> usize {
        self.occupancy.len()
    }

    pub fn occupancy(&self) -> OccupancyVector {
        OccupancyVector { counts: self.occupancy.clone(), n_stations: self.len() }
    }

    pub fn occupancy_counts(&self) -> &[u64] {
        &self.occupancy
    }

    fn detach(&mut self, station: usize) {
        let level = self.count[station] as usize;
        let idx = self.pos[station] as usize;
        let bucket = &mut self.members[level];
        let last = *bucket.last().expect("station missing from its bucket");
        bucket.swap_remove(idx);
        if last as usize != station {
            self.pos[last as usize] = idx as u32;
        }
    }

    fn attach(&mut self, station: usize, level: usize) {
        if self.members.len() <= level {
            self.members.resize_with(level + 1, Vec::new);
        }
        self.pos[station] = self.members[level].len() as u32;
        self.members[level].push(station as u32);
        self.count[station] = level as u32;
    }

    /// Adds one task. Returns `(i, old Q_i)` for the single occupancy entry
    /// that changed.
    pub fn increment(&mut self, station: usize) -> (usize, u64) {
        let level = self.count[station] as usize;
        self.detach(station);
        self.attach(station, level + 1);
        let i = level + 1;
        if self.occupancy.len() < i {
            self.occupancy.push(0);
        }
        let old = self.occupancy[i - 1];
        self.occupancy[i - 1] += 1;
        (i, old)
    }

    /// Removes one task. Returns `(i, old Q_i)` for the changed entry.
    pub fn decrement(&mut self, station: usize) -> (usize, u64) {
        let level = self.count[station] as usize;
        assert!(level > 0, "decrement of an empty station");
        self.detach(station);
        self.attach(station, level - 1);
        let old = self.occupancy[level - 1];
        self.occupancy[level - 1] -= 1;
        while self.occupancy.last() == Some(&0) {
            self.occupancy.pop();
        }
        (level, old)
    }

    /// Moves a station to an arbitrary level (used for estimate tables).
    pub fn set(&mut self, station: usize, level: u32) {
        while self.count[station] < level {
            self.increment(station);
        }
        while self.count[station] > level {
            self.decrement(station);
        }
    }
}
