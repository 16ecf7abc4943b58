use rand::Rng;

/// A set of station ids supporting O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone, Default)]
pub struct IndexedSet {
    items: Vec<u32>,
}

impl IndexedSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.items
    }
}

/// Outstanding JIQ tokens across `R` dispatchers. A station holds at most
/// one token, parked at exactly one dispatcher.
#[derive(Debug, Clone)]
pub struct TokenBook {
    holder: Vec<Option<u16>>,
    pos: Vec<u32>,
    parked: Vec<IndexedSet>,
}

impl TokenBook {
    pub fn new(n_stations: usize, n_dispatchers: usize) -> Self {
        assert!(n_dispatchers >= 1 && n_dispatchers <= u16::MAX as usize);
        Self {
            holder: vec![None; n_stations],
            pos: vec![0; n_stations],
            parked: vec![IndexedSet::default(); n_dispatchers],
        }
    }

    pub fn dispatchers(&self) -> usize {
        self.parked.len()
    }

    /// Dispatcher holding `station`'s token, if any.
    pub fn holder(&self, station: usize) -> Option<usize> {
        self.holder[station].map(usize::from)
    }

    pub fn tokens_at(&self, dispatcher: usize) -> &[u32] {
        self.parked[dispatcher].as_slice()
    }

    pub fn total(&self) -> usize {
        self.parked.iter().map(IndexedSet::len).sum()
    }

    /// Parks a token for `station` at `dispatcher`.
    ///
    /// Panics if the station already holds a token.
    pub fn issue(&mut self, station: usize, dispatcher: usize) {
        assert!(self.holder[station].is_none(), "station {station} already holds a token");
        let set = &mut self.parked[dispatcher];
        self.pos[station] = set.items.len() as u32;
        set.items.push(station as u32);
        self.holder[station] = Some(dispatcher as u16);
    }

    /// Removes `station`'s token wherever it is parked. Returns the dispatcher
    /// it was taken from.
    pub fn revoke(&mut self, station: usize) -> Option<usize> {
        let dispatcher = self.holder[station].take()? as usize;
        let set = &mut self.parked[dispatcher];
        let idx = self.pos[station] as usize;
        let last = *set.items.last().expect("token set out of sync");
        set.items.swap_remove(idx);
        if last as usize != station {
            self.pos[last as usize] = idx as u32;
        }
        Some(dispatcher)
    }

    /// Consumes a uniformly chosen token at `dispatcher`.
    pub fn take_uniform<R: Rng + ?Sized>(&mut self, dispatcher: usize, rng: &mut R) -> Option<usize> {
        let set = &self.parked[dispatcher];
        if set.is_empty() {
            return None;
        }
        let station = set.items[rng.random_range(0..set.len())] as usize;
        self.revoke(station);
        Some(station)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn issue_take_revoke() {
        let mut book = TokenBook::new(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        book.issue(3, 0);
        book.issue(1, 1);
        book.issue(4, 1);
        assert_eq!(book.total(), 3);
        assert_eq!(book.take_uniform(0, &mut rng), Some(3));
        assert_eq!(book.take_uniform(0, &mut rng), None);
        assert_eq!(book.revoke(4), Some(1));
        assert_eq!(book.revoke(4), None);
        assert_eq!(book.tokens_at(1), &[1]);
        assert_eq!(book.holder(1), Some(1));
    }

    #[test]
    #[should_panic(expected = "already holds a token")]
    fn double_issue_panics() {
        let mut book = TokenBook::new(2, 1);
        book.issue(0, 0);
        book.issue(0, 0);
    }
}
