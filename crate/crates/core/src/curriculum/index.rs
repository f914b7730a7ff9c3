//! Connectivity bookkeeping over a journey collection.
//!
//! Every accepted tour between two journeys becomes an edge; the classes of
//! the induced graph are the sets of journeys known to share a route. The
//! index also remembers which pairs were already probed, so repeated
//! planning rounds spend their budget on new pairs instead of re-testing
//! known failures.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::JourneyId;
use crate::tourfinder::MatchingTour;

/// A direct match between two journeys, with the tour that proved it.
#[derive(Debug, Clone)]
pub struct MatchEdge {
    pub x: JourneyId,
    pub y: JourneyId,
    pub tour: MatchingTour,
}

/// Union-find over journeys plus the accepted match edges.
#[derive(Debug, Clone)]
pub struct CollectionIndex {
    parent: Vec<usize>,
    /// Wall-clock order in which journeys last joined a class; the class
    /// representative offered to new probes is the freshest member.
    joined_at: Vec<u64>,
    clock: u64,
    edges: Vec<MatchEdge>,
    probed: BTreeSet<(usize, usize)>,
}

impl CollectionIndex {
    pub fn new(journey_count: usize) -> CollectionIndex {
        CollectionIndex {
            parent: (0..journey_count).collect(),
            joined_at: vec![0; journey_count],
            clock: 0,
            edges: Vec::new(),
            probed: BTreeSet::new(),
        }
    }

    pub fn journey_count(&self) -> usize {
        self.parent.len()
    }

    pub fn edges(&self) -> &[MatchEdge] {
        &self.edges
    }

    fn find(&self, mut j: usize) -> usize {
        while self.parent[j] != j {
            j = self.parent[j];
        }
        j
    }

    pub fn connected(&self, x: JourneyId, y: JourneyId) -> bool {
        self.find(x.0) == self.find(y.0)
    }

    /// Members of `j`'s class, ascending.
    pub fn class_of(&self, j: JourneyId) -> Vec<JourneyId> {
        let root = self.find(j.0);
        (0..self.parent.len())
            .filter(|&k| self.find(k) == root)
            .map(JourneyId)
            .collect()
    }

    /// All classes, each sorted ascending, ordered by smallest member.
    pub fn classes(&self) -> Vec<Vec<JourneyId>> {
        let mut by_root: BTreeMap<usize, Vec<JourneyId>> = BTreeMap::new();
        for k in 0..self.parent.len() {
            by_root.entry(self.find(k)).or_default().push(JourneyId(k));
        }
        let mut out: Vec<Vec<JourneyId>> = by_root.into_values().collect();
        out.sort_by_key(|c| c[0].0);
        out
    }

    /// The most recently joined member of `j`'s class; `j` itself while the
    /// class is a singleton. Ties (never joined) break to the smallest id.
    pub fn representative(&self, j: JourneyId) -> JourneyId {
        let root = self.find(j.0);
        let mut best = j.0;
        let mut best_time = 0u64;
        for k in 0..self.parent.len() {
            if self.find(k) != root {
                continue;
            }
            if self.joined_at[k] > best_time
                || (self.joined_at[k] == best_time && k < best)
            {
                best = k;
                best_time = self.joined_at[k];
            }
        }
        JourneyId(best)
    }

    pub fn was_probed(&self, x: JourneyId, y: JourneyId) -> bool {
        self.probed.contains(&canonical(x, y))
    }

    pub fn record_probe(&mut self, x: JourneyId, y: JourneyId) {
        self.probed.insert(canonical(x, y));
    }

    /// Number of distinct pairs ever probed.
    pub fn probes(&self) -> usize {
        self.probed.len()
    }

    pub(crate) fn insert_edge(&mut self, x: JourneyId, y: JourneyId, tour: MatchingTour) {
        self.edges.push(MatchEdge { x, y, tour });
        let rx = self.find(x.0);
        let ry = self.find(y.0);
        if rx != ry {
            self.parent[ry] = rx;
        }
        self.clock += 1;
        self.joined_at[x.0] = self.clock;
        self.clock += 1;
        self.joined_at[y.0] = self.clock;
    }
}

fn canonical(x: JourneyId, y: JourneyId) -> (usize, usize) {
    (x.0.min(y.0), x.0.max(y.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_tour() -> MatchingTour {
        MatchingTour {
            nodes: vec![],
            row_len: 1,
            col_len: 1,
            stride: 10,
            row_journey: None,
            col_journey: None,
        }
    }

    #[test]
    fn classes_partition_journeys() {
        let mut idx = CollectionIndex::new(5);
        idx.insert_edge(JourneyId(0), JourneyId(1), dummy_tour());
        idx.insert_edge(JourneyId(3), JourneyId(4), dummy_tour());
        let classes = idx.classes();
        assert_eq!(classes.len(), 3);
        let total: usize = classes.iter().map(|c| c.len()).sum();
        assert_eq!(total, 5);
        assert!(idx.connected(JourneyId(0), JourneyId(1)));
        assert!(!idx.connected(JourneyId(0), JourneyId(3)));
    }

    #[test]
    fn union_is_transitive() {
        let mut idx = CollectionIndex::new(4);
        idx.insert_edge(JourneyId(0), JourneyId(1), dummy_tour());
        idx.insert_edge(JourneyId(1), JourneyId(2), dummy_tour());
        assert!(idx.connected(JourneyId(0), JourneyId(2)));
        assert_eq!(idx.class_of(JourneyId(2)).len(), 3);
    }

    #[test]
    fn representative_is_freshest_member() {
        let mut idx = CollectionIndex::new(4);
        assert_eq!(idx.representative(JourneyId(2)), JourneyId(2));
        idx.insert_edge(JourneyId(0), JourneyId(1), dummy_tour());
        assert_eq!(idx.representative(JourneyId(0)), JourneyId(1));
        idx.insert_edge(JourneyId(2), JourneyId(0), dummy_tour());
        assert_eq!(idx.representative(JourneyId(1)), JourneyId(0));
    }

    #[test]
    fn probe_memory_is_orientation_free() {
        let mut idx = CollectionIndex::new(3);
        idx.record_probe(JourneyId(2), JourneyId(0));
        assert!(idx.was_probed(JourneyId(0), JourneyId(2)));
        assert!(!idx.was_probed(JourneyId(0), JourneyId(1)));
        assert_eq!(idx.probes(), 1);
    }
}
