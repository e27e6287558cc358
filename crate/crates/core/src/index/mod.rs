//! The multivariate subsequence index: build pipeline, two-probe exact kNN
//! query, and binary snapshots.

mod query;
mod snapshot;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dft::{
    build_pivots, compute_remainder, estimate_ardc, select_coefficients, sliding_features, ArdcTable, CoefficientPlan,
    FeatureMatrix, PivotSet, RemainderWorkspace,
};
use crate::error::{Error, Result};
use crate::series::{normalize_for, sliding_window_stats, Dataset, Mode, WindowStats};
use crate::spatial::{softmax_weights, str_bulk_load, uniform_weights, PointSet, RTree, StrConfig, TreeSummary};

pub use query::{QueryOptions, QueryStats};
pub use snapshot::{dataset_fingerprint, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// How split counts are distributed across feature dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioning {
    /// Softmax of per-dimension variances.
    Weighted,
    /// Equal weights, i.e. plain STR.
    Uniform,
}

impl std::str::FromStr for Partitioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Partitioning::Weighted),
            "uniform" => Ok(Partitioning::Uniform),
            other => Err(Error::InvalidInput(format!(
                "partitioning: expected 'weighted' or 'uniform', got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Cumulative contribution each channel's selected coefficients must reach.
    pub d_target: f64,
    /// Leaf size as a fraction of the number of indexed subsequences.
    pub leaf_fraction: f64,
    pub pivot_count: usize,
    /// Windows sampled for coefficient selection, variances and pivots.
    pub sample_size: usize,
    pub seed: u64,
    /// Maximum children of an internal node.
    pub node_capacity: usize,
    pub partitioning: Partitioning,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            d_target: 0.6,
            leaf_fraction: 0.0005,
            pivot_count: 1,
            sample_size: 100,
            seed: 0,
            node_capacity: 16,
            partitioning: Partitioning::Weighted,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_target > 0.0 && self.d_target <= 1.0) {
            return Err(Error::Build(format!("d_target: {} is outside (0, 1]", self.d_target)));
        }
        if !(self.leaf_fraction > 0.0 && self.leaf_fraction <= 1.0) {
            return Err(Error::Build(format!(
                "leaf_fraction: {} is outside (0, 1]",
                self.leaf_fraction
            )));
        }
        if self.sample_size < 1 {
            return Err(Error::Build("sample_size: must be at least 1".into()));
        }
        if self.node_capacity < 2 {
            return Err(Error::Build("node_capacity: must be at least 2".into()));
        }
        Ok(())
    }

    /// Leaf size for `n` indexed points.
    pub fn leaf_size(&self, n: usize) -> usize {
        ((self.leaf_fraction * n as f64).ceil() as usize).max(1)
    }
}

/// Exact kNN index over all `qlen`-windows of a dataset.
#[derive(Clone, Debug)]
pub struct MsIndex {
    dataset: Arc<Dataset>,
    qlen: usize,
    mode: Mode,
    config: BuildConfig,
    plan: CoefficientPlan,
    pivots: PivotSet,
    tree: RTree,
    /// Per dataset position, per channel; empty for series shorter than qlen.
    stats: Vec<Vec<WindowStats>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexSummary {
    pub qlen: usize,
    pub mode: Mode,
    pub config: BuildConfig,
    pub selected_coefficients: Vec<Vec<usize>>,
    pub uniform_fallback_channels: Vec<usize>,
    pub feature_dims: usize,
    pub pivot_count: usize,
    pub series_indexed: usize,
    pub series_skipped: usize,
    pub subsequences: usize,
    pub tree: TreeSummary,
    /// Subsequences per entry.
    pub compression: f64,
}

pub(crate) fn series_stats(dataset: &Dataset, qlen: usize) -> Vec<Vec<WindowStats>> {
    dataset
        .series()
        .iter()
        .map(|s| {
            if s.len() < qlen {
                Vec::new()
            } else {
                (0..s.channel_count())
                    .map(|c| sliding_window_stats(s.channel(c), qlen))
                    .collect()
            }
        })
        .collect()
}

/// Population variance per column of the given rows.
fn column_variances(rows: &[&[f64]], dims: usize) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    (0..dims)
        .map(|d| {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

impl MsIndex {
    /// Build the index over every window of length `qlen`.
    ///
    /// Series shorter than `qlen` are skipped with a warning.
    pub fn build(dataset: Arc<Dataset>, qlen: usize, mode: Mode, config: BuildConfig) -> Result<Self> {
        config.validate()?;
        if qlen == 0 {
            return Err(Error::Build("qlen: must be positive".into()));
        }
        if mode == Mode::Znorm && qlen < 2 {
            return Err(Error::Build("qlen: znorm mode needs qlen >= 2".into()));
        }
        let c = dataset.channel_count();
        let mut eligible = Vec::new();
        for (pos, s) in dataset.series().iter().enumerate() {
            if s.len() >= qlen {
                eligible.push(pos);
            } else {
                log::warn!(
                    "series {} (length {}) is shorter than qlen {qlen}; skipped",
                    s.id(),
                    s.len()
                );
            }
        }
        if eligible.is_empty() {
            return Err(Error::Build(format!("no series has length >= qlen {qlen}")));
        }
        let counts: Vec<usize> = eligible.iter().map(|&p| dataset.series()[p].len() - qlen + 1).collect();
        let total: usize = counts.iter().sum();

        // 1. sample windows
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let take = config.sample_size.min(total);
        let mut picks = rand::seq::index::sample(&mut rng, total, take).into_vec();
        picks.sort_unstable();
        let mut sample_refs = Vec::with_capacity(take);
        let (mut block, mut base) = (0, 0);
        for g in picks {
            while g >= base + counts[block] {
                base += counts[block];
                block += 1;
            }
            sample_refs.push((eligible[block], g - base));
        }
        let sample_rows: Vec<Vec<Vec<f64>>> = sample_refs
            .iter()
            .map(|&(pos, off)| {
                let s = &dataset.series()[pos];
                (0..c).map(|ch| s.channel(ch)[off..off + qlen].to_vec()).collect()
            })
            .collect();

        // 2. coefficient plan
        let table = if sample_rows.len() >= 2 {
            estimate_ardc(&sample_rows, qlen, mode)?
        } else {
            log::warn!("only one window available; using uniform coefficient contributions");
            ArdcTable::uniform(qlen, mode, c)
        };
        let plan = select_coefficients(&table, config.d_target)?;
        let dims = plan.dims();

        // 3. features of every window
        let features: Vec<FeatureMatrix> = eligible
            .iter()
            .map(|&p| sliding_features(&dataset.series()[p], &plan))
            .collect::<Result<_>>()?;

        // 4. pivots from the sample remainders
        let pivots = if config.pivot_count == 0 {
            PivotSet::empty()
        } else {
            let remainders = sample_rows
                .iter()
                .map(|w| {
                    let normalized: Vec<Vec<f64>> = w.iter().map(|r| normalize_for(mode, r)).collect();
                    let rows: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
                    compute_remainder(&plan, &rows)
                })
                .collect::<Result<Vec<_>>>()?;
            build_pivots(&remainders, config.pivot_count, config.seed)?
        };
        let slots = pivots.len() * c;

        // 5. exact pivot distances of every window
        let mut coords = Vec::with_capacity(total * dims);
        let mut provenance = Vec::with_capacity(total);
        let mut pivot_dists = vec![0.0; total * slots];
        let mut ws = RemainderWorkspace::new(qlen);
        for (fm, &pos) in features.iter().zip(&eligible) {
            let series = &dataset.series()[pos];
            for off in 0..fm.rows() {
                let row = fm.row(off);
                let i = provenance.len();
                if slots > 0 {
                    ws.pivot_distances(
                        &plan,
                        series,
                        off,
                        row,
                        &pivots,
                        &mut pivot_dists[i * slots..(i + 1) * slots],
                    );
                }
                coords.extend_from_slice(row);
                provenance.push((pos, off));
            }
        }

        // 6. split weights from the sample's feature variances
        let weights = match config.partitioning {
            Partitioning::Uniform => uniform_weights(dims),
            Partitioning::Weighted => {
                let sample_features: Vec<&[f64]> = sample_refs
                    .iter()
                    .map(|&(pos, off)| {
                        let block = eligible.binary_search(&pos).expect("sampled from eligible series");
                        features[block].row(off)
                    })
                    .collect();
                softmax_weights(&column_variances(&sample_features, dims))
            }
        };

        // 7. bulk load and group
        let tree = str_bulk_load(
            &PointSet {
                dims,
                coords: &coords,
                provenance: &provenance,
                pivot_slots: slots,
                pivot_dists: &pivot_dists,
            },
            &StrConfig {
                weights,
                leaf_size: config.leaf_size(total),
                node_capacity: config.node_capacity,
            },
        )
        .canonical();

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
        let summary = index.summary();
        if !(8.0..=50.0).contains(&summary.compression) {
            log::info!(
                "entries hold {:.1} subsequences on average (typical range 8 to 50)",
                summary.compression
            );
        }
        Ok(index)
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn qlen(&self) -> usize {
        self.qlen
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn plan(&self) -> &CoefficientPlan {
        &self.plan
    }

    pub fn pivots(&self) -> &PivotSet {
        &self.pivots
    }

    pub fn tree(&self) -> &RTree {
        &self.tree
    }

    /// Number of indexed windows.
    pub fn subsequence_count(&self) -> usize {
        self.dataset.subsequence_count(self.qlen)
    }

    pub fn summary(&self) -> IndexSummary {
        let tree = self.tree.summary();
        let c = self.plan.channel_count();
        let indexed = self.stats.iter().filter(|s| !s.is_empty()).count();
        IndexSummary {
            qlen: self.qlen,
            mode: self.mode,
            config: self.config.clone(),
            selected_coefficients: (0..c).map(|ch| self.plan.selected(ch).to_vec()).collect(),
            uniform_fallback_channels: (0..c).filter(|&ch| self.plan.ardc().is_fallback(ch)).collect(),
            feature_dims: self.plan.dims(),
            pivot_count: self.pivots.len(),
            series_indexed: indexed,
            series_skipped: self.dataset.len() - indexed,
            subsequences: tree.members,
            compression: tree.members as f64 / tree.entries.max(1) as f64,
            tree,
        }
    }

    /// Check that entries cover every window exactly once.
    pub fn verify_partition(&self) -> std::result::Result<(), String> {
        let mut ranges: Vec<(usize, usize, usize)> =
            self.tree.entries().iter().map(|e| (e.series, e.start, e.end)).collect();
        ranges.sort_unstable();
        let mut next = vec![0usize; self.dataset.len()];
        for (series, start, end) in ranges {
            let Some(cursor) = next.get_mut(series) else {
                return Err(format!("entry refers to unknown series position {series}"));
            };
            if start != *cursor {
                return Err(format!(
                    "series {series}: expected an entry starting at {cursor}, found {start}"
                ));
            }
            *cursor = end + 1;
        }
        for (pos, s) in self.dataset.series().iter().enumerate() {
            if next[pos] != s.window_count(self.qlen) {
                return Err(format!(
                    "series {} covers {} of {} windows",
                    s.id(),
                    next[pos],
                    s.window_count(self.qlen)
                ));
            }
        }
        Ok(())
    }
}
