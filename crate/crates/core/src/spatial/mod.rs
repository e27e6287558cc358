//! A bulk-loaded R-tree over feature vectors.
//!
//! Leaves are produced by sort-tile-recursive partitioning with per-dimension
//! split counts, then each leaf's points are grouped into entries that cover
//! runs of consecutive window offsets of one series. Every node and entry
//! also carries per-pivot, per-channel intervals of remainder distances so
//! that bound functions can add a pivot correction.

mod browse;
mod bulk;
pub(crate) mod codec;
mod split;

pub use browse::{range_query, Browser};
pub use bulk::{group_leaf_entries, str_bulk_load, str_partition, PointSet, StrConfig};
pub use split::{softmax_weights, split_counts, uniform_weights, weighted_split_counts};

/// Closed interval `[lo, hi]` of remainder-to-pivot distances.
pub type Interval = (f64, f64);

#[derive(Clone, Debug, PartialEq)]
pub struct Mbr {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Mbr {
    pub fn point(p: &[f64]) -> Self {
        Self {
            lo: p.to_vec(),
            hi: p.to_vec(),
        }
    }

    /// An inverted box that any expansion overwrites.
    pub fn empty(dims: usize) -> Self {
        Self {
            lo: vec![f64::INFINITY; dims],
            hi: vec![f64::NEG_INFINITY; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn expand_point(&mut self, p: &[f64]) {
        for (d, &v) in p.iter().enumerate() {
            self.lo[d] = self.lo[d].min(v);
            self.hi[d] = self.hi[d].max(v);
        }
    }

    pub fn expand(&mut self, other: &Mbr) {
        for d in 0..self.dims() {
            self.lo[d] = self.lo[d].min(other.lo[d]);
            self.hi[d] = self.hi[d].max(other.hi[d]);
        }
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter().enumerate().all(|(d, &v)| self.lo[d] <= v && v <= self.hi[d])
    }

    pub fn contains(&self, other: &Mbr) -> bool {
        (0..self.dims()).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn center(&self, d: usize) -> f64 {
        0.5 * (self.lo[d] + self.hi[d])
    }

    pub fn volume(&self) -> f64 {
        (0..self.dims()).map(|d| self.hi[d] - self.lo[d]).product()
    }

    /// Squared distance from `q` to the box, projected onto `dims`.
    pub fn mindist_sq(&self, q: &[f64], dims: &[usize]) -> f64 {
        let mut sum = 0.0;
        for &d in dims {
            let v = q[d];
            let g = if v < self.lo[d] {
                self.lo[d] - v
            } else if v > self.hi[d] {
                v - self.hi[d]
            } else {
                0.0
            };
            sum += g * g;
        }
        sum
    }
}

/// Distance from a point to a box over a subset of dimensions.
pub fn mindist(mbr: &Mbr, q: &[f64], dims: &[usize]) -> f64 {
    mbr.mindist_sq(q, dims).sqrt()
}

pub(crate) fn union_intervals(acc: &mut [Interval], other: &[Interval]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.0 = a.0.min(b.0);
        a.1 = a.1.max(b.1);
    }
}

pub(crate) fn empty_intervals(slots: usize) -> Vec<Interval> {
    vec![(f64::INFINITY, f64::NEG_INFINITY); slots]
}

/// Windows `start..=end` of one series, bounded by an MBR.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub mbr: Mbr,
    /// Position of the series in the indexed dataset.
    pub series: usize,
    pub start: usize,
    pub end: usize,
    /// Pivot-major, one interval per (pivot, channel).
    pub pivot_intervals: Vec<Interval>,
}

impl IndexEntry {
    pub fn member_count(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    /// Child node ids.
    Inner(Vec<usize>),
    /// Entry ids.
    Leaf(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub mbr: Mbr,
    pub pivot_intervals: Vec<Interval>,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RTree {
    pub(crate) dims: usize,
    pub(crate) pivot_slots: usize,
    pub(crate) nodes: Vec<Node>,
    pub(crate) entries: Vec<IndexEntry>,
    pub(crate) root: usize,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct TreeSummary {
    pub dims: usize,
    pub height: usize,
    pub nodes: usize,
    pub leaves: usize,
    pub entries: usize,
    pub members: usize,
    pub max_entries_per_leaf: usize,
}

impl RTree {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn pivot_slots(&self) -> usize {
        self.pivot_slots
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &IndexEntry {
        &self.entries[id]
    }

    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut id = self.root;
        while let NodeKind::Inner(children) = &self.nodes[id].kind {
            h += 1;
            id = children[0];
        }
        h
    }

    pub fn summary(&self) -> TreeSummary {
        let leaves: Vec<&Vec<usize>> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Leaf(e) => Some(e),
                NodeKind::Inner(_) => None,
            })
            .collect();
        TreeSummary {
            dims: self.dims,
            height: self.height(),
            nodes: self.nodes.len(),
            leaves: leaves.len(),
            entries: self.entries.len(),
            members: self.entries.iter().map(IndexEntry::member_count).sum(),
            max_entries_per_leaf: leaves.iter().map(|l| l.len()).max().unwrap_or(0),
        }
    }

    /// Structural check: boxes and intervals of every node contain those of
    /// its children. Returns a description of the first violation.
    pub fn check_containment(&self) -> Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            let (mbrs, intervals): (Vec<&Mbr>, Vec<&[Interval]>) = match &node.kind {
                NodeKind::Inner(children) => children
                    .iter()
                    .map(|&c| (&self.nodes[c].mbr, self.nodes[c].pivot_intervals.as_slice()))
                    .unzip(),
                NodeKind::Leaf(entries) => entries
                    .iter()
                    .map(|&e| (&self.entries[e].mbr, self.entries[e].pivot_intervals.as_slice()))
                    .unzip(),
            };
            for (m, iv) in mbrs.iter().zip(&intervals) {
                if !node.mbr.contains(m) {
                    return Err(format!("node {id} does not contain a child box"));
                }
                for (outer, inner) in node.pivot_intervals.iter().zip(iv.iter()) {
                    if outer.0 > inner.0 || outer.1 < inner.1 {
                        return Err(format!("node {id} does not contain a child interval"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mindist_examples() {
        let b = Mbr {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        assert_eq!(mindist(&b, &[0.5, 0.5], &[0, 1]), 0.0);
        let one = Mbr {
            lo: vec![2.0],
            hi: vec![5.0],
        };
        assert_eq!(mindist(&one, &[7.0], &[0]), 2.0);
        // projection ignores excluded dimensions
        assert_eq!(mindist(&b, &[0.5, 9.0], &[0]), 0.0);
    }
}
