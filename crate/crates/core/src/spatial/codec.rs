//! Little-endian encoding helpers and the pre-order tree record format.

use super::{IndexEntry, Interval, Mbr, Node, NodeKind, RTree};
use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn mbr(&mut self, m: &Mbr) {
        m.lo.iter().for_each(|&v| self.f64(v));
        m.hi.iter().for_each(|&v| self.f64(v));
    }

    fn intervals(&mut self, iv: &[Interval]) {
        for &(lo, hi) in iv {
            self.f64(lo);
            self.f64(hi);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Snapshot(format!("{what}: unexpected end of data")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A count or index, rejected if it exceeds `max`.
    pub(crate) fn usize(&mut self, what: &str, max: usize) -> Result<usize> {
        let v = self.u64(what)?;
        if v > max as u64 {
            return Err(Error::Snapshot(format!("{what}: value {v} exceeds {max}")));
        }
        Ok(v as usize)
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Snapshot(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    fn mbr(&mut self, dims: usize) -> Result<Mbr> {
        let lo = (0..dims).map(|_| self.f64("mbr")).collect::<Result<Vec<_>>>()?;
        let hi = (0..dims).map(|_| self.f64("mbr")).collect::<Result<Vec<_>>>()?;
        Ok(Mbr { lo, hi })
    }

    fn intervals(&mut self, slots: usize) -> Result<Vec<Interval>> {
        (0..slots)
            .map(|_| Ok((self.f64("pivot interval")?, self.f64("pivot interval")?)))
            .collect()
    }
}

const TAG_INNER: u8 = 0;
const TAG_LEAF: u8 = 1;

/// Write `tree` as a header followed by node records in pre-order.
pub(crate) fn encode_tree(tree: &RTree, w: &mut Writer) {
    w.usize(tree.dims);
    w.usize(tree.pivot_slots);
    w.usize(tree.nodes.len());
    w.usize(tree.entries.len());
    let mut stack = vec![tree.root];
    while let Some(id) = stack.pop() {
        let node = &tree.nodes[id];
        match &node.kind {
            NodeKind::Inner(children) => {
                w.u8(TAG_INNER);
                w.mbr(&node.mbr);
                w.intervals(&node.pivot_intervals);
                w.usize(children.len());
                stack.extend(children.iter().rev());
            }
            NodeKind::Leaf(entries) => {
                w.u8(TAG_LEAF);
                w.mbr(&node.mbr);
                w.intervals(&node.pivot_intervals);
                w.usize(entries.len());
                for &e in entries {
                    let entry = &tree.entries[e];
                    w.usize(entry.series);
                    w.usize(entry.start);
                    w.usize(entry.end);
                    w.mbr(&entry.mbr);
                    w.intervals(&entry.pivot_intervals);
                }
            }
        }
    }
}

/// Read a tree written by [`encode_tree`]. Node and entry ids are assigned in
/// pre-order, so decoding a canonical tree reproduces it exactly.
pub(crate) fn decode_tree(r: &mut Reader<'_>) -> Result<RTree> {
    let limit = r.remaining();
    let dims = r.usize("tree dims", limit)?;
    let slots = r.usize("tree pivot slots", limit)?;
    let node_count = r.usize("tree node count", limit)?;
    let entry_count = r.usize("tree entry count", limit)?;
    let mut nodes: Vec<Node> = Vec::with_capacity(node_count);
    let mut entries: Vec<IndexEntry> = Vec::with_capacity(entry_count);
    // (node id, children still expected)
    let mut open: Vec<(usize, usize)> = Vec::new();
    loop {
        if nodes.len() == node_count {
            break;
        }
        let tag = r.u8("node tag")?;
        let mbr = r.mbr(dims)?;
        let pivot_intervals = r.intervals(slots)?;
        let n = r.usize("node fan-out", limit)?;
        let id = nodes.len();
        let kind = match tag {
            TAG_INNER => NodeKind::Inner(Vec::with_capacity(n)),
            TAG_LEAF => {
                let mut ids = Vec::with_capacity(n);
                for _ in 0..n {
                    let series = r.usize("entry series", usize::MAX)?;
                    let start = r.usize("entry start", usize::MAX)?;
                    let end = r.usize("entry end", usize::MAX)?;
                    if end < start {
                        return Err(Error::Snapshot(format!("entry range [{start}, {end}] is inverted")));
                    }
                    let mbr = r.mbr(dims)?;
                    let pivot_intervals = r.intervals(slots)?;
                    ids.push(entries.len());
                    entries.push(IndexEntry {
                        mbr,
                        series,
                        start,
                        end,
                        pivot_intervals,
                    });
                }
                NodeKind::Leaf(ids)
            }
            t => return Err(Error::Snapshot(format!("unknown node tag {t}"))),
        };
        nodes.push(Node {
            mbr,
            pivot_intervals,
            kind,
        });
        if let Some((parent, left)) = open.last_mut() {
            if let NodeKind::Inner(children) = &mut nodes[*parent].kind {
                children.push(id);
            }
            *left -= 1;
        } else if id != 0 {
            return Err(Error::Snapshot("node records after a complete tree".into()));
        }
        if tag == TAG_INNER {
            if n == 0 {
                return Err(Error::Snapshot("inner node without children".into()));
            }
            open.push((id, n));
        }
        while matches!(open.last(), Some((_, 0))) {
            open.pop();
        }
        if open.is_empty() && nodes.len() < node_count {
            return Err(Error::Snapshot("tree ends before the declared node count".into()));
        }
    }
    if !open.is_empty() {
        return Err(Error::Snapshot("tree has unfinished nodes".into()));
    }
    if entries.len() != entry_count {
        return Err(Error::Snapshot(format!(
            "entry count {} does not match declared {entry_count}",
            entries.len()
        )));
    }
    if nodes.is_empty() {
        return Err(Error::Snapshot("empty tree".into()));
    }
    Ok(RTree {
        dims,
        pivot_slots: slots,
        nodes,
        entries,
        root: 0,
    })
}

impl RTree {
    /// The same tree with node and entry ids renumbered in pre-order.
    pub fn canonical(&self) -> RTree {
        let mut w = Writer::default();
        encode_tree(self, &mut w);
        decode_tree(&mut Reader::new(&w.buf)).expect("a freshly encoded tree decodes")
    }

    /// Pre-order binary encoding of the tree.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        encode_tree(self, &mut w);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RTree> {
        let mut r = Reader::new(bytes);
        let tree = decode_tree(&mut r)?;
        r.finish()?;
        Ok(tree)
    }
}
