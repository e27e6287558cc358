use super::split::split_counts;
use super::{empty_intervals, union_intervals, IndexEntry, Interval, Mbr, Node, NodeKind, RTree};

/// Points to bulk load: row-major coordinates plus provenance and
/// per-point pivot distances (`pivot_slots` values per point).
#[derive(Clone, Copy, Debug)]
pub struct PointSet<'a> {
    pub dims: usize,
    pub coords: &'a [f64],
    /// `(series position, window offset)` per point.
    pub provenance: &'a [(usize, usize)],
    pub pivot_slots: usize,
    pub pivot_dists: &'a [f64],
}

impl PointSet<'_> {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn coords_of(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }

    fn pivots_of(&self, i: usize) -> &[f64] {
        &self.pivot_dists[i * self.pivot_slots..(i + 1) * self.pivot_slots]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrConfig {
    /// Per-dimension weights; dimensions are tiled in descending weight.
    pub weights: Vec<f64>,
    /// Maximum points per leaf.
    pub leaf_size: usize,
    /// Maximum children per internal node.
    pub node_capacity: usize,
}

/// Tiling order: descending weight, ties by dimension index.
fn dimension_order(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

/// Sort-tile-recursive partition of `ids` into groups of at most `cap`.
///
/// `coord(id, d)` gives the sort key of an item on dimension `d`. Each level
/// sorts by the next dimension in `order` and cuts into `counts[d]`
/// equal-count slabs; recursion stops once a slab fits in `cap`.
pub fn str_partition<F>(ids: Vec<usize>, order: &[usize], counts: &[usize], cap: usize, coord: F) -> Vec<Vec<usize>>
where
    F: Fn(usize, usize) -> f64,
{
    fn tile<F: Fn(usize, usize) -> f64>(
        ids: &mut [usize],
        depth: usize,
        order: &[usize],
        counts: &[usize],
        cap: usize,
        coord: &F,
        out: &mut Vec<Vec<usize>>,
    ) {
        if ids.len() <= cap {
            out.push(ids.to_vec());
            return;
        }
        if depth == order.len() {
            // split counts exhausted: cut the last sort order into full groups
            for chunk in ids.chunks(cap) {
                out.push(chunk.to_vec());
            }
            return;
        }
        let d = order[depth];
        ids.sort_by(|&a, &b| coord(a, d).total_cmp(&coord(b, d)).then(a.cmp(&b)));
        let p = counts[d].max(1);
        // never cut below the capacity, or a level could fail to shrink
        let slab = ids.len().div_ceil(p).max(cap);
        for chunk in ids.chunks_mut(slab) {
            tile(chunk, depth + 1, order, counts, cap, coord, out);
        }
    }
    let cap = cap.max(1);
    let mut ids = ids;
    let mut out = Vec::new();
    tile(&mut ids, 0, order, counts, cap, &coord, &mut out);
    out
}

/// Group one leaf's points into entries covering consecutive offsets of a
/// single series.
pub fn group_leaf_entries(points: &PointSet<'_>, members: &[usize]) -> Vec<IndexEntry> {
    let mut sorted = members.to_vec();
    sorted.sort_by_key(|&i| points.provenance[i]);
    let mut out: Vec<IndexEntry> = Vec::new();
    for &i in &sorted {
        let (series, offset) = points.provenance[i];
        let coords = points.coords_of(i);
        let pivots = points.pivots_of(i);
        match out.last_mut() {
            Some(e) if e.series == series && e.end + 1 == offset => {
                e.end = offset;
                e.mbr.expand_point(coords);
                for (iv, &d) in e.pivot_intervals.iter_mut().zip(pivots) {
                    iv.0 = iv.0.min(d);
                    iv.1 = iv.1.max(d);
                }
            }
            _ => out.push(IndexEntry {
                mbr: Mbr::point(coords),
                series,
                start: offset,
                end: offset,
                pivot_intervals: pivots.iter().map(|&d| (d, d)).collect(),
            }),
        }
    }
    out
}

/// Bulk load with weighted STR, grouping leaves into entries, and build the
/// internal levels with the same weights until a single root remains.
pub fn str_bulk_load(points: &PointSet<'_>, config: &StrConfig) -> RTree {
    assert!(!points.is_empty(), "bulk load needs at least one point");
    assert_eq!(config.weights.len(), points.dims, "one weight per dimension");
    let dims = points.dims;
    let slots = points.pivot_slots;
    let order = dimension_order(&config.weights);
    let leaf_size = config.leaf_size.max(1);
    let capacity = config.node_capacity.max(2);

    let counts = split_counts(&config.weights, points.len(), leaf_size);
    let leaves = str_partition((0..points.len()).collect(), &order, &counts, leaf_size, |i, d| {
        points.coords[i * dims + d]
    });

    let mut nodes: Vec<Node> = Vec::new();
    let mut entries: Vec<IndexEntry> = Vec::new();
    let mut level: Vec<usize> = Vec::with_capacity(leaves.len());
    for members in leaves {
        let grouped = group_leaf_entries(points, &members);
        let mut mbr = Mbr::empty(dims);
        let mut intervals = empty_intervals(slots);
        let mut ids = Vec::with_capacity(grouped.len());
        for e in grouped {
            mbr.expand(&e.mbr);
            union_intervals(&mut intervals, &e.pivot_intervals);
            ids.push(entries.len());
            entries.push(e);
        }
        level.push(nodes.len());
        nodes.push(Node {
            mbr,
            pivot_intervals: intervals,
            kind: NodeKind::Leaf(ids),
        });
    }

    while level.len() > 1 {
        let counts = split_counts(&config.weights, level.len(), capacity);
        let groups = {
            let nodes = &nodes;
            let level = &level;
            str_partition((0..level.len()).collect(), &order, &counts, capacity, |i, d| {
                nodes[level[i]].mbr.center(d)
            })
        };
        let mut next = Vec::with_capacity(groups.len());
        for group in groups {
            let children: Vec<usize> = group.iter().map(|&i| level[i]).collect();
            let mut mbr = Mbr::empty(dims);
            let mut intervals: Vec<Interval> = empty_intervals(slots);
            for &c in &children {
                mbr.expand(&nodes[c].mbr);
                union_intervals(&mut intervals, &nodes[c].pivot_intervals);
            }
            next.push(nodes.len());
            nodes.push(Node {
                mbr,
                pivot_intervals: intervals,
                kind: NodeKind::Inner(children),
            });
        }
        level = next;
    }
    let root = level[0];
    RTree {
        dims,
        pivot_slots: slots,
        nodes,
        entries,
        root,
    }
}
