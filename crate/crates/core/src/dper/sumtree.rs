use crate::numerics::Scalar;
use crate::{Error, Result};

/// Complete binary tree over leaf priorities; every internal node stores the
/// sum of its two children.
///
/// Stored as a 1-based heap: node 1 is the root, the children of `n` are `2n`
/// and `2n + 1`, and leaf `i` lives at `capacity + i`. Unused leaves past
/// `len` hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SumTree<F> {
    capacity: usize,
    len: usize,
    nodes: Vec<F>,
}

impl<F: Scalar> SumTree<F> {
    pub fn build(priorities: &[F]) -> Result<Self> {
        if priorities.is_empty() {
            return Err(Error::InvalidArgument("sum tree needs at least one leaf".into()));
        }
        if let Some(p) = priorities.iter().find(|p| !(**p >= F::zero()) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("priority {p} is not a finite non-negative value")));
        }
        let capacity = priorities.len().next_power_of_two();
        let mut nodes = vec![F::zero(); 2 * capacity];
        nodes[capacity..capacity + priorities.len()].copy_from_slice(priorities);
        for n in (1..capacity).rev() {
            nodes[n] = nodes[2 * n] + nodes[2 * n + 1];
        }
        Ok(Self {
            capacity,
            len: priorities.len(),
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> F {
        self.nodes[1]
    }

    pub fn leaf(&self, i: usize) -> F {
        self.nodes[self.capacity + i]
    }

    pub fn leaves(&self) -> &[F] {
        &self.nodes[self.capacity..self.capacity + self.len]
    }

    /// Internal node value (1-based heap index), for invariant checks.
    pub fn node(&self, n: usize) -> F {
        self.nodes[n]
    }

    /// Sets a leaf and recomputes its ancestors from their children, in
    /// O(log n).
    pub fn update(&mut self, leaf: usize, value: F) -> Result<()> {
        if leaf >= self.len {
            return Err(Error::InvalidArgument(format!("leaf {leaf} out of range (len {})", self.len)));
        }
        if !(value >= F::zero()) || !value.is_finite() {
            return Err(Error::InvalidArgument(format!("priority {value} is not a finite non-negative value")));
        }
        let mut n = self.capacity + leaf;
        self.nodes[n] = value;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
        Ok(())
    }

    /// Returns the leaf whose prefix-sum interval `[P(i), P(i+1))` contains `u`.
    pub fn sample(&self, u: F) -> Result<usize> {
        let total = self.total();
        if !(u >= F::zero() && u < total) {
            return Err(Error::InvalidArgument(format!("u = {u} outside [0, {total})")));
        }
        let mut n = 1;
        let mut rest = u;
        while n < self.capacity {
            let left = self.nodes[2 * n];
            if rest < left {
                n *= 2;
            } else {
                rest = rest - left;
                n = 2 * n + 1;
            }
        }
        let leaf = n - self.capacity;
        if leaf < self.len && self.nodes[n] > F::zero() {
            Ok(leaf)
        } else {
            // Rounding pushed the descent past the last positive leaf of a
            // subtree; fall back to the nearest positive leaf on the left.
            Ok(self.nearest_positive(leaf.min(self.len - 1)))
        }
    }

    fn nearest_positive(&self, from: usize) -> usize {
        (0..=from)
            .rev()
            .find(|&i| self.leaf(i) > F::zero())
            .or_else(|| (from..self.len).find(|&i| self.leaf(i) > F::zero()))
            .unwrap_or(from)
    }

    /// Draws a leaf with probability proportional to its priority.
    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = F::lit(rng.gen::<f64>()) * self.total();
        let u = if u >= self.total() { F::zero() } else { u };
        self.sample(u).expect("u drawn inside [0, total)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: first index whose running prefix sum exceeds `u`.
    fn linear_scan(p: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    #[test]
    fn small_tree_examples() {
        let t = SumTree::build(&[1.0f64, 2.0, 3.0]).unwrap();
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.sample(0.5).unwrap(), 0);
        assert_eq!(t.sample(1.5).unwrap(), 1);
        assert_eq!(t.sample(5.9).unwrap(), 2);
        for u in [0.5, 1.5, 5.9] {
            assert_eq!(t.sample(u).unwrap(), linear_scan(&[1.0, 2.0, 3.0], u));
        }
    }

    #[test]
    fn single_leaf() {
        let t = SumTree::build(&[0.25f64]).unwrap();
        for u in [0.0, 0.1, 0.2499] {
            assert_eq!(t.sample(u).unwrap(), 0);
        }
    }

    #[test]
    fn out_of_range_u_is_an_error() {
        let t = SumTree::build(&[1.0f64, 2.0]).unwrap();
        assert!(t.sample(3.0).is_err());
        assert!(t.sample(-0.1).is_err());
        assert!(t.sample(f64::NAN).is_err());
    }

    #[test]
    fn zeroed_leaf_is_never_sampled() {
        let mut t = SumTree::build(&[1.0f64, 2.0, 3.0, 0.5, 0.7]).unwrap();
        t.update(1, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            assert_ne!(t.sample_with(&mut rng), 1);
        }
    }

    #[test]
    fn frequencies_match_priorities() {
        let t = SumTree::build(&[0.1f64, 0.3, 0.6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut c = [0usize; 3];
        for _ in 0..n {
            c[t.sample_with(&mut rng)] += 1;
        }
        for (i, p) in [0.1, 0.3, 0.6].iter().enumerate() {
            assert!((c[i] as f64 / n as f64 - p).abs() <= 0.01);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let t = SumTree::build(&[1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(t.sample(1.5f32).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn internal_nodes_are_child_sums(
            init in prop::collection::vec(0.0f64..10.0, 1..200),
            updates in prop::collection::vec((0usize..200, 0.0f64..10.0), 0..300),
        ) {
            let mut t = SumTree::build(&init).unwrap();
            let mut shadow = init.clone();
            for (i, v) in updates {
                let i = i % init.len();
                t.update(i, v).unwrap();
                shadow[i] = v;
            }
            for n in 1..t.capacity() {
                prop_assert!((t.node(n) - (t.node(2 * n) + t.node(2 * n + 1))).abs() <= 1e-9);
            }
            let sum: f64 = shadow.iter().sum();
            prop_assert!((t.total() - sum).abs() <= 1e-9);
        }

        #[test]
        fn descent_agrees_with_prefix_scan(
            p in prop::collection::vec(0.001f64..5.0, 1..1024),
            us in prop::collection::vec(0.0f64..1.0, 50),
        ) {
            let t = SumTree::build(&p).unwrap();
            for u in us {
                let u = u * t.total();
                prop_assert_eq!(t.sample(u).unwrap(), linear_scan(&p, u));
            }
        }
    }
}
