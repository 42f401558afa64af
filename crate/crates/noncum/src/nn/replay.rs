//! Experience replay: a uniform ring buffer and a proportional prioritized
//! buffer backed by a sum tree.

use rand::Rng;

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    cap: usize,
    items: Vec<T>,
    pos: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0);
        ReplayBuffer {
            cap,
            items: Vec::with_capacity(cap),
            pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.cap {
            self.items.push(item);
        } else {
            self.items[self.pos] = item;
        }
        self.pos = (self.pos + 1) % self.cap;
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!self.is_empty());
        (0..batch)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect()
    }
}

/// Complete binary tree over `cap` leaves storing nonnegative masses;
/// internal nodes hold subtree sums so prefix search is logarithmic.
/// Leaves are padded to a power of two so every leaf sits at the same
/// depth and cumulative intervals follow leaf index order.
#[derive(Debug, Clone)]
pub struct SumTree {
    cap: usize,
    size: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0);
        let size = cap.next_power_of_two();
        SumTree {
            cap,
            size,
            tree: vec![0.0; 2 * size - 1],
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[0]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        assert!(leaf < self.cap);
        self.tree[self.size - 1 + leaf]
    }

    pub fn set(&mut self, leaf: usize, mass: f64) {
        assert!(leaf < self.cap && mass >= 0.0 && mass.is_finite());
        let mut i = self.size - 1 + leaf;
        let delta = mass - self.tree[i];
        self.tree[i] = mass;
        while i > 0 {
            i = (i - 1) / 2;
            self.tree[i] += delta;
        }
    }

    /// Leaf whose cumulative-mass interval contains `u` in `[0, total)`.
    pub fn find(&self, u: f64) -> usize {
        let mut u = u.clamp(0.0, self.total());
        let mut i = 0usize;
        while i < self.size - 1 {
            let left = 2 * i + 1;
            if u <= self.tree[left] || self.tree[left + 1] == 0.0 {
                i = left;
            } else {
                u -= self.tree[left];
                i = left + 1;
            }
        }
        (i - (self.size - 1)).min(self.cap - 1)
    }
}

/// Proportional prioritized replay: each item carries a priority `p`; item
/// `i` is sampled with probability `p_i^alpha / sum_j p_j^alpha`. New items
/// enter at the current maximum priority so each is trained on at least
/// once. Sampling is stratified over equal mass segments.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay<T> {
    cap: usize,
    alpha: f64,
    items: Vec<T>,
    pos: usize,
    tree: SumTree,
    max_mass: f64,
}

impl<T> PrioritizedReplay<T> {
    pub fn new(cap: usize, alpha: f64) -> Self {
        assert!(cap > 0 && (0.0..=1.0).contains(&alpha));
        PrioritizedReplay {
            cap,
            alpha,
            items: Vec::with_capacity(cap),
            pos: 0,
            tree: SumTree::new(cap),
            max_mass: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn push(&mut self, item: T) {
        let slot = if self.items.len() < self.cap {
            self.items.push(item);
            self.items.len() - 1
        } else {
            self.items[self.pos] = item;
            self.pos
        };
        self.pos = (slot + 1) % self.cap;
        self.tree.set(slot, self.max_mass);
    }

    /// Set an item's priority from a raw magnitude (a temporal-difference
    /// error); the exponent and a small floor are applied here.
    pub fn update_priority(&mut self, index: usize, magnitude: f64) {
        let mass = (magnitude.abs() + 1e-3).powf(self.alpha);
        self.max_mass = self.max_mass.max(mass);
        self.tree.set(index, mass);
    }

    /// Stratified proportional sample of `batch` indices with their
    /// importance weights `(N * P(i))^(-beta)`, normalised by the batch
    /// maximum.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<f64>) {
        assert!(!self.is_empty());
        let total = self.tree.total();
        let seg = total / batch as f64;
        let n = self.items.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for k in 0..batch {
            let u = seg * (k as f64 + rng.random::<f64>());
            let mut idx = self.tree.find(u);
            if idx >= self.items.len() {
                idx = self.items.len() - 1;
            }
            let p = self.tree.get(idx) / total;
            indices.push(idx);
            weights.push((n * p.max(1e-12)).powf(-beta));
        }
        let wmax = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= wmax;
        }
        (indices, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::rng_from_seed;

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        let held: Vec<i32> = (0..3).map(|i| *b.get(i)).collect();
        assert_eq!(held, vec![3, 4, 2]);
    }

    #[test]
    fn sum_tree_prefix_search() {
        let mut t = SumTree::new(5);
        for (i, m) in [1.0, 2.0, 0.0, 3.0, 4.0].into_iter().enumerate() {
            t.set(i, m);
        }
        assert_eq!(t.total(), 10.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 1);
        assert_eq!(t.find(3.5), 3);
        assert_eq!(t.find(9.99), 4);
        // Zero-mass leaves are never returned for interior draws.
        for u in [0.1, 2.9, 3.1, 5.9, 6.1, 9.9] {
            assert_ne!(t.find(u), 2, "u = {u}");
        }
    }

    #[test]
    fn equal_priorities_sample_uniformly() {
        let mut r = PrioritizedReplay::new(16, 0.6);
        for i in 0..16 {
            r.push(i);
            r.update_priority(i, 1.0);
        }
        let mut rng = rng_from_seed(8);
        let mut counts = [0usize; 16];
        let draws = 100_000;
        for _ in 0..draws / 16 {
            let (idx, w) = r.sample(16, 1.0, &mut rng);
            for i in idx {
                counts[i] += 1;
            }
            for wi in w {
                assert!((wi - 1.0).abs() < 1e-9);
            }
        }
        // Chi-square against uniform, 15 degrees of freedom: 99.9th
        // percentile is about 37.7.
        let expect = draws as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        assert!(chi2 < 37.7, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn high_priority_is_sampled_more() {
        let mut r = PrioritizedReplay::new(8, 1.0);
        for i in 0..8 {
            r.push(i);
            r.update_priority(i, 0.001);
        }
        r.update_priority(3, 10.0);
        let mut rng = rng_from_seed(9);
        let mut hits = 0;
        let mut total = 0;
        for _ in 0..200 {
            let (idx, _) = r.sample(8, 0.5, &mut rng);
            hits += idx.iter().filter(|&&i| i == 3).count();
            total += idx.len();
        }
        assert!(hits as f64 / total as f64 > 0.5, "{hits}/{total}");
    }

    #[test]
    fn weights_downweight_frequent_items() {
        let mut r = PrioritizedReplay::new(4, 1.0);
        for i in 0..4 {
            r.push(i);
        }
        r.update_priority(0, 9.0);
        r.update_priority(1, 1.0);
        r.update_priority(2, 1.0);
        r.update_priority(3, 1.0);
        let mut rng = rng_from_seed(10);
        let (idx, w) = r.sample(64, 1.0, &mut rng);
        for (i, wi) in idx.iter().zip(&w) {
            if *i == 0 {
                assert!(*wi < 0.5, "hot item weight {wi}");
            }
        }
        assert!(w.iter().cloned().fold(f64::MIN, f64::max) == 1.0);
    }
}
