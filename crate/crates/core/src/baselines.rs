//! Exact reference methods: brute force, a MASS scan, and the generic
//! univariate-to-multivariate wrapper over per-channel indices.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{series_stats, BuildConfig, MsIndex};
use crate::mass::{multivariate_profile, PreparedQuery};
use crate::series::{normalize_for, squared_distance, top_k, Dataset, Match, Mode, Query, WindowStats};

/// Direct evaluation of every window; the oracle for everything else.
pub fn brute_force_knn(dataset: &Dataset, q: &Query) -> Result<Vec<Match>> {
    Ok(top_k(all_distances(dataset, q)?, q.k()))
}

/// Exact distance to every window, in dataset order.
pub fn all_distances(dataset: &Dataset, q: &Query) -> Result<Vec<Match>> {
    q.validate(dataset.channel_count(), q.qlen(), q.mode())?;
    let s = q.qlen();
    let rows: Vec<(usize, Vec<f64>)> = q.rows().map(|(c, r)| (c, normalize_for(q.mode(), r))).collect();
    let mut out = Vec::with_capacity(dataset.subsequence_count(s));
    for series in dataset.series() {
        for off in 0..series.window_count(s) {
            let d2: f64 = rows
                .iter()
                .map(|(c, qr)| {
                    let w = &series.channel(*c)[off..off + s];
                    match q.mode() {
                        Mode::Raw => squared_distance(qr, w),
                        Mode::Znorm => squared_distance(qr, &normalize_for(Mode::Znorm, w)),
                    }
                })
                .sum();
            out.push(Match::new(d2.sqrt(), series.id(), off, s));
        }
    }
    Ok(out)
}

/// Full multivariate distance profile of every series, merged.
pub fn mass_scan_knn(dataset: &Dataset, q: &Query) -> Result<Vec<Match>> {
    q.validate(dataset.channel_count(), q.qlen(), q.mode())?;
    let s = q.qlen();
    let mut out = Vec::with_capacity(dataset.subsequence_count(s));
    for series in dataset.series() {
        let windows = series.window_count(s);
        if windows == 0 {
            continue;
        }
        let profile = multivariate_profile(q, series, 0, windows - 1)?;
        out.extend(
            profile
                .as_slice()
                .iter()
                .enumerate()
                .map(|(off, &d)| Match::new(d, series.id(), off, s)),
        );
    }
    Ok(top_k(out, q.k()))
}

/// A window of the dataset by series position.
pub type WindowKey = (usize, usize);

/// A univariate index over one channel of a dataset.
pub trait ChannelIndex {
    /// Dataset channel this index covers.
    fn channel(&self) -> usize;

    /// Exact top-k on this channel: windows with their squared channel distance.
    fn query_topk(&self, row: &[f64], k: usize) -> Result<Vec<(WindowKey, f64)>>;

    /// Superset of the windows whose squared channel distance is at most `tau_sq`.
    fn query_range(&self, row: &[f64], tau_sq: f64) -> Result<Vec<WindowKey>>;
}

/// Per-channel index built from the same feature and tree machinery on a
/// single-channel projection, without pivots.
#[derive(Clone, Debug)]
pub struct DftChannelIndex {
    channel: usize,
    index: MsIndex,
}

impl DftChannelIndex {
    pub fn build(dataset: &Dataset, channel: usize, qlen: usize, mode: Mode, config: &BuildConfig) -> Result<Self> {
        let projected = Arc::new(dataset.project(channel)?);
        let config = BuildConfig {
            pivot_count: 0,
            ..config.clone()
        };
        Ok(Self {
            channel,
            index: MsIndex::build(projected, qlen, mode, config)?,
        })
    }

    pub fn index(&self) -> &MsIndex {
        &self.index
    }

    fn query(&self, row: &[f64], k: usize) -> Result<Query> {
        Query::new(vec![0], vec![row.to_vec()], k, self.index.mode())
    }
}

impl ChannelIndex for DftChannelIndex {
    fn channel(&self) -> usize {
        self.channel
    }

    fn query_topk(&self, row: &[f64], k: usize) -> Result<Vec<(WindowKey, f64)>> {
        let ds = self.index.dataset();
        let (matches, _) = self.index.knn_query(&self.query(row, k)?)?;
        matches
            .into_iter()
            .map(|m| {
                let pos = ds
                    .position_of(m.subsequence.series_id)
                    .ok_or_else(|| Error::InvalidInput("channel index returned an unknown series".into()))?;
                Ok(((pos, m.subsequence.offset), m.distance * m.distance))
            })
            .collect()
    }

    fn query_range(&self, row: &[f64], tau_sq: f64) -> Result<Vec<WindowKey>> {
        let entries = self.index.range_entries(&self.query(row, 1)?, tau_sq)?;
        Ok(entries
            .into_iter()
            .flat_map(|e| (e.start..=e.end).map(move |o| (e.series, o)))
            .collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UtsStats {
    /// Windows returned by the per-channel top-k probes.
    pub topk_candidates: usize,
    /// Windows returned by the per-channel range probes.
    pub range_candidates: usize,
    /// Distinct windows with at least one exact distance computed.
    pub subsequences_verified: usize,
    pub subsequences_total: usize,
    /// Per queried channel, the squared threshold used for the range probe.
    pub thresholds: Vec<f64>,
}

impl UtsStats {
    pub fn pruning_effectiveness(&self) -> f64 {
        if self.subsequences_total == 0 {
            return 0.0;
        }
        1.0 - self.subsequences_verified as f64 / self.subsequences_total as f64
    }
}

/// Multivariate kNN on top of one univariate index per channel.
#[derive(Clone, Debug)]
pub struct UtsBaseline<I = DftChannelIndex> {
    dataset: Arc<Dataset>,
    qlen: usize,
    mode: Mode,
    indices: Vec<I>,
    stats: Vec<Vec<WindowStats>>,
}

impl UtsBaseline<DftChannelIndex> {
    pub fn build(dataset: Arc<Dataset>, qlen: usize, mode: Mode, config: &BuildConfig) -> Result<Self> {
        let indices = (0..dataset.channel_count())
            .map(|c| DftChannelIndex::build(&dataset, c, qlen, mode, config))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(dataset, qlen, mode, indices)
    }

    /// Serialized size of all channel indices.
    pub fn snapshot_size(&self) -> usize {
        self.indices.iter().map(|i| i.index().snapshot_size()).sum()
    }
}

/// Relative slack on per-channel thresholds so windows exactly at a
/// threshold survive rounding differences between distance evaluations.
const THRESHOLD_SLACK: f64 = 1e-9;

impl<I: ChannelIndex> UtsBaseline<I> {
    pub fn from_indices(dataset: Arc<Dataset>, qlen: usize, mode: Mode, indices: Vec<I>) -> Result<Self> {
        if indices.len() != dataset.channel_count() || indices.iter().enumerate().any(|(c, i)| i.channel() != c) {
            return Err(Error::InvalidInput(
                "channel indices: need one index per dataset channel, in channel order".into(),
            ));
        }
        let stats = series_stats(&dataset, qlen);
        Ok(Self {
            dataset,
            qlen,
            mode,
            indices,
            stats,
        })
    }

    /// Squared distances of `q` on each of `channels` for runs of windows.
    fn channel_distances(
        &self,
        q: &Query,
        channels: &[usize],
        windows: &BTreeSet<WindowKey>,
    ) -> Result<BTreeMap<WindowKey, f64>> {
        let mut prepared = Vec::with_capacity(channels.len());
        for &c in channels {
            let pos = q.channels().iter().position(|&x| x == c).expect("channel is queried");
            prepared.push(PreparedQuery::single(c, q.row(pos), self.mode));
        }
        let mut out = BTreeMap::new();
        for (series, start, end) in runs(windows) {
            let s = &self.dataset.series()[series];
            let mut acc = vec![0.0; end - start + 1];
            for p in &prepared {
                for (a, v) in acc
                    .iter_mut()
                    .zip(p.squared_profile(s, &self.stats[series], start, end)?)
                {
                    *a += v;
                }
            }
            for (j, v) in acc.into_iter().enumerate() {
                out.insert((series, start + j), v);
            }
        }
        Ok(out)
    }

    fn full_matches(&self, q: &Query, windows: &BTreeSet<WindowKey>) -> Result<Vec<Match>> {
        Ok(self
            .channel_distances(q, q.channels(), windows)?
            .into_iter()
            .map(|((series, off), d2)| {
                Match::new(d2.max(0.0).sqrt(), self.dataset.series()[series].id(), off, self.qlen)
            })
            .collect())
    }

    fn key_of(&self, m: &Match) -> WindowKey {
        let pos = self
            .dataset
            .position_of(m.subsequence.series_id)
            .expect("match from this dataset");
        (pos, m.subsequence.offset)
    }

    /// Exact kNN: per-channel top-k, exact estimate of the top-k, per-channel
    /// squared thresholds, per-channel range re-query with false positives
    /// filtered on that channel, and an exact top-k over the union.
    pub fn knn_query(&self, q: &Query) -> Result<(Vec<Match>, UtsStats)> {
        q.validate(self.dataset.channel_count(), self.qlen, self.mode)?;
        let k = q.k();
        let mut stats = UtsStats {
            subsequences_total: self.dataset.subsequence_count(self.qlen),
            ..UtsStats::default()
        };
        let mut verified: BTreeSet<WindowKey> = BTreeSet::new();

        let mut candidates = BTreeSet::new();
        for (c, row) in q.rows() {
            for (key, _) in self.indices[c].query_topk(row, k)? {
                candidates.insert(key);
            }
        }
        stats.topk_candidates = candidates.len();
        let estimate = top_k(self.full_matches(q, &candidates)?, k);
        verified.extend(candidates.iter().copied());

        // thresholds: per channel, the largest squared distance over the estimate
        let estimate_keys: BTreeSet<WindowKey> = estimate.iter().map(|m| self.key_of(m)).collect();
        let mut thresholds = Vec::with_capacity(q.channels().len());
        for &c in q.channels() {
            let tau = if estimate.len() < k {
                f64::INFINITY
            } else {
                self.channel_distances(q, &[c], &estimate_keys)?
                    .values()
                    .fold(0.0f64, |a, &b| a.max(b))
            };
            thresholds.push(tau);
        }

        let mut union: BTreeSet<WindowKey> = estimate_keys;
        for ((c, row), &tau) in q.rows().zip(&thresholds) {
            let limit = tau * (1.0 + THRESHOLD_SLACK) + THRESHOLD_SLACK;
            let found: BTreeSet<WindowKey> = self.indices[c].query_range(row, limit)?.into_iter().collect();
            stats.range_candidates += found.len();
            let exact = self.channel_distances(q, &[c], &found)?;
            verified.extend(found.iter().copied());
            union.extend(exact.into_iter().filter(|&(_, d2)| d2 <= limit).map(|(key, _)| key));
        }
        verified.extend(union.iter().copied());
        stats.subsequences_verified = verified.len();
        stats.thresholds = thresholds;
        Ok((top_k(self.full_matches(q, &union)?, k), stats))
    }
}

/// Maximal runs of consecutive offsets within one series.
fn runs(windows: &BTreeSet<WindowKey>) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for &(s, o) in windows {
        match out.last_mut() {
            Some((ls, _, end)) if *ls == s && *end + 1 == o => *end = o,
            _ => out.push((s, o, o)),
        }
    }
    out
}

/// One-shot wrapper: build per-channel indices and run one query.
pub fn uts_baseline_knn(dataset: Arc<Dataset>, q: &Query, config: &BuildConfig) -> Result<Vec<Match>> {
    let base = UtsBaseline::build(dataset, q.qlen(), q.mode(), config)?;
    Ok(base.knn_query(q)?.0)
}

/// Compare a result list against the oracle.
///
/// Distances must agree rank by rank within `rel_tol` (relative, with an
/// absolute floor of `rel_tol`). Locations must agree too, except inside
/// groups of oracle distances that are equal within tolerance, where
/// floating-point noise may legitimately reorder ties; within such groups the
/// sets must match, apart from the last group, which may be cut off by k.
pub fn compare_results(oracle: &[Match], got: &[Match], rel_tol: f64) -> std::result::Result<(), String> {
    if oracle.len() != got.len() {
        return Err(format!("expected {} matches, got {}", oracle.len(), got.len()));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0);
    for (rank, (o, g)) in oracle.iter().zip(got).enumerate() {
        if !close(o.distance, g.distance) {
            return Err(format!(
                "rank {rank}: distance {} differs from oracle {}",
                g.distance, o.distance
            ));
        }
    }
    let mut start = 0;
    while start < oracle.len() {
        let mut end = start + 1;
        while end < oracle.len() && close(oracle[end - 1].distance, oracle[end].distance) {
            end += 1;
        }
        let a: BTreeSet<_> = oracle[start..end].iter().map(|m| m.subsequence).collect();
        let b: BTreeSet<_> = got[start..end].iter().map(|m| m.subsequence).collect();
        if end < oracle.len() && a != b {
            return Err(format!("ranks {start}..{end}: got {b:?}, oracle has {a:?}"));
        }
        start = end;
    }
    Ok(())
}
