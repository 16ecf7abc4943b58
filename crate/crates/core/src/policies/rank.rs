use std::collections::BTreeSet;

/// Stations ordered by `(task_count, station_id)`; gives a well-defined
/// "k lowest ordered servers" for CJSQ and RSQ.
#[derive(Debug, Clone, Default)]
pub struct RankIndex {
    order: BTreeSet<(u32, u32)>,
}

impl RankIndex {
    pub fn new(counts: &[u32]) -> Self {
        Self { order: counts.iter().enumerate().map(|(s, &c)| (c, s as u32)).collect() }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn update(&mut self, station: usize, old: u32, new: u32) {
        let removed = self.order.remove(&(old, station as u32));
        debug_assert!(removed, "rank index out of sync for station {station}");
        self.order.insert((new, station as u32));
    }

    /// The station at rank `k` (0 = lowest).
    pub fn nth(&self, k: usize) -> Option<usize> {
        self.order.iter().nth(k).map(|&(_, s)| s as usize)
    }

    pub fn lowest(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().take(k).map(|&(_, s)| s as usize)
    }
}
