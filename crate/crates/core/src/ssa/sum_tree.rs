//! Binary sum tree over nonnegative weights.

/// Complete binary tree stored heap-style: node 1 is the root, leaves start at
/// `capacity`. Parents are recomputed from their children on every update, so
/// sums carry no incremental drift.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let capacity = len.max(1).next_power_of_two();
        SumTree {
            capacity,
            nodes: vec![0.0; 2 * capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.total() <= 0.0
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, ix: usize) -> f64 {
        self.nodes[self.capacity + ix]
    }

    pub fn set(&mut self, ix: usize, weight: f64) {
        debug_assert!(weight >= 0.0 && weight.is_finite());
        let mut node = self.capacity + ix;
        self.nodes[node] = weight;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Sets leaves without touching internal nodes; call [`SumTree::rebuild`] afterwards.
    pub fn set_leaf_raw(&mut self, ix: usize, weight: f64) {
        self.nodes[self.capacity + ix] = weight;
    }

    pub fn rebuild(&mut self) {
        for node in (1..self.capacity).rev() {
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf index `k` such that the prefix sum before `k` is `<= u` and the
    /// prefix including `k` exceeds it. Only leaves of positive weight are
    /// returned when the total is positive.
    pub fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.capacity {
            let left = 2 * node;
            if u < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                node = left;
            } else {
                u -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.capacity
    }

    /// Sum of the leaves in index order, without the tree.
    pub fn brute_total(&self) -> f64 {
        self.nodes[self.capacity..].iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn find_follows_prefix_sums() {
        let mut t = SumTree::new(5);
        for (i, w) in [1.0, 0.0, 2.0, 3.0, 0.5].into_iter().enumerate() {
            t.set(i, w);
        }
        assert_eq!(t.total(), 6.5);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.99), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.99), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(6.4), 4);
        // past the end still lands on a positive leaf
        assert_eq!(t.find(7.0), 4);
    }

    proptest! {
        #[test]
        fn root_matches_brute_force(updates in prop::collection::vec((0usize..37, 0.0f64..10.0), 1..200)) {
            let mut t = SumTree::new(37);
            for (i, w) in updates {
                t.set(i, w);
                let brute = t.brute_total();
                prop_assert!((t.total() - brute).abs() <= 1e-12 * brute.max(1.0));
            }
        }
    }
}
