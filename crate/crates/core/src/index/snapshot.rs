//! Binary index snapshots.
//!
//! Layout (little-endian): magic, version `u16`, mode tag, qlen, build
//! config, coefficient plan, feature dimensionality, pivots, dataset
//! fingerprint, then the tree in pre-order. Series values are not stored;
//! loading needs the same dataset the index was built on.

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{series_stats, BuildConfig, MsIndex, Partitioning};
use crate::dft::{ArdcTable, CoefficientPlan, PivotSet, Remainder};
use crate::error::{Error, Result};
use crate::series::{Dataset, Mode};
use crate::spatial::codec::{decode_tree, encode_tree, Reader, Writer};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MSIX";
pub const SNAPSHOT_VERSION: u16 = 1;

/// SHA-256 over channel count, series ids, lengths and values.
pub fn dataset_fingerprint(dataset: &Dataset) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((dataset.channel_count() as u64).to_le_bytes());
    h.update((dataset.len() as u64).to_le_bytes());
    for s in dataset.series() {
        h.update(s.id().to_le_bytes());
        h.update((s.len() as u64).to_le_bytes());
        for v in s.values() {
            h.update(v.to_le_bytes());
        }
    }
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

impl MsIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(SNAPSHOT_MAGIC);
        w.u16(SNAPSHOT_VERSION);
        w.u8(self.mode.tag());
        w.usize(self.qlen);

        let cfg = &self.config;
        w.f64(cfg.d_target);
        w.f64(cfg.leaf_fraction);
        w.usize(cfg.pivot_count);
        w.usize(cfg.sample_size);
        w.u64(cfg.seed);
        w.usize(cfg.node_capacity);
        w.u8(match cfg.partitioning {
            Partitioning::Weighted => 0,
            Partitioning::Uniform => 1,
        });

        let plan = &self.plan;
        w.f64(plan.d_target());
        w.usize(plan.channel_count());
        for c in 0..plan.channel_count() {
            w.u8(plan.ardc().is_fallback(c) as u8);
            plan.ardc().channel(c).iter().for_each(|&v| w.f64(v));
            w.usize(plan.selected(c).len());
            plan.selected(c).iter().for_each(|&k| w.usize(k));
        }
        w.usize(plan.dims());

        w.usize(self.pivots.len());
        for p in self.pivots.pivots() {
            for c in 0..p.channel_count() {
                p.channel(c).iter().for_each(|&v| w.f64(v));
            }
        }

        w.bytes(&dataset_fingerprint(&self.dataset));
        w.usize(self.dataset.len());
        for s in self.dataset.series() {
            w.u64(s.id());
            w.usize(s.len());
        }

        encode_tree(&self.tree, &mut w);
        w.buf
    }

    /// Decode a snapshot against `dataset`. With `expected_qlen`, a snapshot
    /// built for another query length is rejected.
    pub fn from_bytes(bytes: &[u8], dataset: Arc<Dataset>, expected_qlen: Option<usize>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("magic: not an index snapshot".into()));
        }
        let version = r.u16("version")?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "version: snapshot has {version}, this build reads {SNAPSHOT_VERSION}"
            )));
        }
        let mode = Mode::from_tag(r.u8("mode")?).ok_or_else(|| Error::Snapshot("mode: unknown tag".into()))?;
        let limit = bytes.len();
        let qlen = r.usize("qlen", limit)?;
        if let Some(want) = expected_qlen {
            if want != qlen {
                return Err(Error::Snapshot(format!("qlen: snapshot has {qlen}, expected {want}")));
            }
        }
        if qlen == 0 {
            return Err(Error::Snapshot("qlen: zero".into()));
        }

        let config = BuildConfig {
            d_target: r.f64("d_target")?,
            leaf_fraction: r.f64("leaf_fraction")?,
            pivot_count: r.usize("pivot_count", limit)?,
            sample_size: r.usize("sample_size", usize::MAX)?,
            seed: r.u64("seed")?,
            node_capacity: r.usize("node_capacity", usize::MAX)?,
            partitioning: match r.u8("partitioning")? {
                0 => Partitioning::Weighted,
                1 => Partitioning::Uniform,
                t => return Err(Error::Snapshot(format!("partitioning: unknown tag {t}"))),
            },
        };

        let d_target = r.f64("plan d_target")?;
        let channels = r.usize("plan channels", limit)?;
        if channels != dataset.channel_count() {
            return Err(Error::Snapshot(format!(
                "channels: snapshot has {channels}, dataset has {}",
                dataset.channel_count()
            )));
        }
        let width = qlen / 2 + 1;
        let mut fallback = Vec::with_capacity(channels);
        let mut rows = Vec::with_capacity(channels);
        let mut selected = Vec::with_capacity(channels);
        for _ in 0..channels {
            fallback.push(r.u8("plan fallback")? != 0);
            rows.push(
                (0..width)
                    .map(|_| r.f64("plan contributions"))
                    .collect::<Result<Vec<_>>>()?,
            );
            let n = r.usize("plan selection", width)?;
            selected.push(
                (0..n)
                    .map(|_| r.usize("plan index", width))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let bad_plan = |e: Error| Error::Snapshot(format!("plan: {e}"));
        let mut table = ArdcTable::from_contributions(qlen, mode, rows).map_err(bad_plan)?;
        for (c, f) in fallback.into_iter().enumerate() {
            table.set_fallback(c, f);
        }
        let plan = CoefficientPlan::from_parts(qlen, mode, d_target, selected, table).map_err(bad_plan)?;
        let dims = r.usize("feature dims", limit)?;
        if dims != plan.dims() {
            return Err(Error::Snapshot(format!(
                "feature dims: header says {dims}, plan implies {}",
                plan.dims()
            )));
        }

        let pivot_count = r.usize("pivot count", limit)?;
        let mut pivots = Vec::with_capacity(pivot_count);
        for _ in 0..pivot_count {
            let rows = (0..channels)
                .map(|_| (0..qlen).map(|_| r.f64("pivot")).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            pivots.push(Remainder::new(rows));
        }
        let pivots = PivotSet::new(pivots);

        let fingerprint = r.take(32, "fingerprint")?;
        let n = r.usize("series count", limit)?;
        if n != dataset.len() {
            return Err(Error::Snapshot(format!(
                "dataset: snapshot indexed {n} series, dataset has {}",
                dataset.len()
            )));
        }
        for s in dataset.series() {
            let id = r.u64("series id")?;
            let len = r.usize("series length", usize::MAX)?;
            if id != s.id() || len != s.len() {
                return Err(Error::Snapshot(format!(
                    "dataset: snapshot expects series {id} of length {len}, found {} of length {}",
                    s.id(),
                    s.len()
                )));
            }
        }
        if fingerprint != dataset_fingerprint(&dataset) {
            return Err(Error::Snapshot(
                "dataset: values differ from the indexed dataset".into(),
            ));
        }

        let tree = decode_tree(&mut r)?;
        r.finish()?;
        if tree.dims() != dims || tree.pivot_slots() != pivots.len() * channels {
            return Err(Error::Snapshot(
                "tree: dimensionality or pivot slots disagree with header".into(),
            ));
        }
        let stats = series_stats(&dataset, qlen);
        let index = Self {
            dataset,
            qlen,
            mode,
            config,
            plan,
            pivots,
            tree,
            stats,
        };
        index
            .verify_partition()
            .map_err(|e| Error::Snapshot(format!("tree: {e}")))?;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, dataset: Arc<Dataset>, expected_qlen: Option<usize>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, dataset, expected_qlen)
    }

    /// Size of the serialized snapshot in bytes.
    pub fn snapshot_size(&self) -> usize {
        self.to_bytes().len()
    }
}
