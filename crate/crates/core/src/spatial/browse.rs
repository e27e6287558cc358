use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Interval, Mbr, NodeKind, RTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Item {
    Entry(usize),
    Node(usize),
}

#[derive(Clone, Copy, Debug)]
struct Queued {
    bound: f64,
    item: Item,
}

impl Queued {
    fn key(&self) -> (u8, usize) {
        match self.item {
            Item::Entry(id) => (0, id),
            Item::Node(id) => (1, id),
        }
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.key().cmp(&self.key()))
    }
}

/// Resumable best-first traversal emitting entries in ascending bound order.
///
/// `bound(mbr, pivot_intervals)` must not decrease from a node to its
/// children for the order to be exact; the bounds used by the index satisfy
/// this because child boxes and intervals are contained in their parent's.
pub struct Browser<'a, F> {
    tree: &'a RTree,
    bound: F,
    heap: BinaryHeap<Queued>,
    nodes_visited: usize,
    emitted: usize,
}

impl<'a, F> Browser<'a, F>
where
    F: Fn(&Mbr, &[Interval]) -> f64,
{
    pub fn new(tree: &'a RTree, bound: F) -> Self {
        let root = tree.node(tree.root());
        let mut heap = BinaryHeap::new();
        heap.push(Queued {
            bound: bound(&root.mbr, &root.pivot_intervals),
            item: Item::Node(tree.root()),
        });
        Self {
            tree,
            bound,
            heap,
            nodes_visited: 0,
            emitted: 0,
        }
    }

    /// Nodes expanded so far.
    pub fn nodes_visited(&self) -> usize {
        self.nodes_visited
    }

    /// Entries emitted so far.
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    fn expand(&mut self, id: usize) {
        self.nodes_visited += 1;
        match &self.tree.node(id).kind {
            NodeKind::Inner(children) => {
                for &c in children {
                    let n = self.tree.node(c);
                    self.heap.push(Queued {
                        bound: (self.bound)(&n.mbr, &n.pivot_intervals),
                        item: Item::Node(c),
                    });
                }
            }
            NodeKind::Leaf(entries) => {
                for &e in entries {
                    let entry = self.tree.entry(e);
                    self.heap.push(Queued {
                        bound: (self.bound)(&entry.mbr, &entry.pivot_intervals),
                        item: Item::Entry(e),
                    });
                }
            }
        }
    }

    /// Bound of the next entry without consuming it.
    pub fn peek_bound(&mut self) -> Option<f64> {
        loop {
            let top = *self.heap.peek()?;
            match top.item {
                Item::Entry(_) => return Some(top.bound),
                Item::Node(id) => {
                    self.heap.pop();
                    self.expand(id);
                }
            }
        }
    }

    /// Next `(entry id, bound)` in ascending bound order.
    pub fn next_entry(&mut self) -> Option<(usize, f64)> {
        self.peek_bound()?;
        let top = self.heap.pop()?;
        match top.item {
            Item::Entry(id) => {
                self.emitted += 1;
                Some((id, top.bound))
            }
            Item::Node(_) => unreachable!("peek_bound leaves an entry on top"),
        }
    }

    /// Emit entries while their bound is at most `threshold`.
    pub fn next_within(&mut self, threshold: f64) -> Option<(usize, f64)> {
        match self.peek_bound() {
            Some(b) if b <= threshold => self.next_entry(),
            _ => None,
        }
    }
}

impl<F> Iterator for Browser<'_, F>
where
    F: Fn(&Mbr, &[Interval]) -> f64,
{
    type Item = (usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        self.next_entry()
    }
}

/// Entries whose bound is at most `threshold`, in ascending id order.
/// Subtrees whose node bound exceeds the threshold are skipped.
pub fn range_query<F>(tree: &RTree, bound: F, threshold: f64) -> Vec<usize>
where
    F: Fn(&Mbr, &[Interval]) -> f64,
{
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        if bound(&node.mbr, &node.pivot_intervals) > threshold {
            continue;
        }
        match &node.kind {
            NodeKind::Inner(children) => stack.extend(children.iter().copied()),
            NodeKind::Leaf(entries) => {
                for &e in entries {
                    let entry = tree.entry(e);
                    if bound(&entry.mbr, &entry.pivot_intervals) <= threshold {
                        out.push(e);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{str_bulk_load, uniform_weights, PointSet, StrConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tree(rng: &mut ChaCha8Rng, n: usize, dims: usize) -> (Vec<f64>, Vec<(usize, usize)>, RTree) {
        let coords: Vec<f64> = (0..n * dims).map(|_| rng.random_range(-10.0..10.0)).collect();
        let prov: Vec<(usize, usize)> = (0..n).map(|i| (i % 3, i / 3)).collect();
        let tree = str_bulk_load(
            &PointSet {
                dims,
                coords: &coords,
                provenance: &prov,
                pivot_slots: 0,
                pivot_dists: &[],
            },
            &StrConfig {
                weights: uniform_weights(dims),
                leaf_size: rng.random_range(1..8),
                node_capacity: rng.random_range(2..6),
            },
        );
        (coords, prov, tree)
    }

    #[test]
    fn emits_in_forced_order() {
        let coords = vec![3.0, 1.0, 2.0];
        let prov = vec![(0, 0), (1, 0), (2, 0)];
        let tree = str_bulk_load(
            &PointSet {
                dims: 1,
                coords: &coords,
                provenance: &prov,
                pivot_slots: 0,
                pivot_dists: &[],
            },
            &StrConfig {
                weights: vec![1.0],
                leaf_size: 1,
                node_capacity: 2,
            },
        );
        let q = [0.0];
        let order: Vec<f64> = Browser::new(&tree, |m: &Mbr, _: &[Interval]| m.mindist_sq(&q, &[0]))
            .map(|(_, b)| b.sqrt())
            .collect();
        assert_eq!(order, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn resuming_matches_a_fresh_browse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (_, _, tree) = random_tree(&mut rng, 300, 3);
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let f = |m: &Mbr, _: &[Interval]| m.mindist_sq(&q, &[0, 2]);
            let fresh: Vec<_> = Browser::new(&tree, f).collect();
            let mut b = Browser::new(&tree, f);
            let mut resumed: Vec<_> = (&mut b).take(7).collect();
            resumed.extend(b);
            assert_eq!(fresh, resumed);
            assert!(fresh.windows(2).all(|w| w[0].1 <= w[1].1));
            assert_eq!(fresh.len(), tree.entries().len());
        }
    }

    #[test]
    fn range_query_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (_, _, tree) = random_tree(&mut rng, 250, 2);
            let q: Vec<f64> = (0..2).map(|_| rng.random_range(-10.0..10.0)).collect();
            let f = |m: &Mbr, _: &[Interval]| m.mindist_sq(&q, &[0, 1]);
            let tau = rng.random_range(0.0..30.0);
            let got = range_query(&tree, f, tau);
            let want: Vec<usize> = (0..tree.entries().len())
                .filter(|&e| f(&tree.entry(e).mbr, &[]) <= tau)
                .collect();
            assert_eq!(got, want);
            assert_eq!(range_query(&tree, f, f64::INFINITY).len(), tree.entries().len());
        }
    }

    #[test]
    fn mindist_never_exceeds_member_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (coords, prov, tree) = random_tree(&mut rng, 400, 3);
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-12.0..12.0)).collect();
            for e in tree.entries() {
                let lb = e.mbr.mindist_sq(&q, &[0, 1, 2]);
                for (i, &(s, o)) in prov.iter().enumerate() {
                    if s == e.series && (e.start..=e.end).contains(&o) {
                        let p = &coords[i * 3..i * 3 + 3];
                        let d: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                        assert!(lb <= d + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_threshold_finds_coinciding_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (coords, _, tree) = random_tree(&mut rng, 100, 2);
        let q = coords[20..22].to_vec();
        let got = range_query(&tree, |m: &Mbr, _: &[Interval]| m.mindist_sq(&q, &[0, 1]), 0.0);
        assert!(!got.is_empty());
    }
}
