use serde::{Deserialize, Serialize};

use super::MsIndex;
use crate::dft::{channel_correction, compute_remainder, partial_features};
use crate::error::Result;
use crate::mass::PreparedQuery;
use crate::series::{normalize_for, top_k, Match, Query};
use crate::spatial::{range_query, Browser, IndexEntry, Interval, Mbr};

/// Relative and absolute slack on the probe-2 threshold so that windows at
/// exactly the k-th distance survive floating-point noise in the bounds.
const RANGE_SLACK_REL: f64 = 1e-9;
const RANGE_SLACK_ABS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOptions {
    /// Add the pivot term to the feature-space bound.
    pub pivot_correction: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self { pivot_correction: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    /// Entries taken by the first (top-k) probe.
    pub entries_emitted_probe1: usize,
    /// Entries whose bound is within the squared k-th distance, including
    /// those already taken in the first probe.
    pub entries_returned_probe2: usize,
    pub subsequences_verified: usize,
    pub subsequences_total: usize,
    pub nodes_visited: usize,
    /// k-th smallest distance found by the first probe (infinite when the
    /// index holds fewer than k windows; serialized as null then).
    pub tau_k: f64,
}

impl QueryStats {
    /// Fraction of windows never verified exactly.
    pub fn pruning_effectiveness(&self) -> f64 {
        if self.subsequences_total == 0 {
            return 0.0;
        }
        1.0 - self.subsequences_verified as f64 / self.subsequences_total as f64
    }
}

/// k-th smallest value of `v` (1-based k), or infinity if `v` is shorter.
fn kth_smallest(v: &[f64], k: usize) -> f64 {
    if v.len() < k {
        return f64::INFINITY;
    }
    let mut copy = v.to_vec();
    let (_, kth, _) = copy.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

impl MsIndex {
    pub fn knn_query(&self, q: &Query) -> Result<(Vec<Match>, QueryStats)> {
        self.knn_query_with(q, QueryOptions::default())
    }

    /// Exact kNN with two probes of the tree.
    ///
    /// The first probe browses entries in bound order until `k` entries have
    /// been verified; the k-th smallest verified distance `tau` is an upper
    /// bound on the true k-th distance. The second probe resumes the same
    /// browse and verifies every entry whose bound is at most `tau^2`.
    pub fn knn_query_with(&self, q: &Query, options: QueryOptions) -> Result<(Vec<Match>, QueryStats)> {
        q.validate(self.dataset.channel_count(), self.qlen, self.mode)?;
        let k = q.k();
        let channels = q.channels();
        let rows: Vec<(usize, &[f64])> = q.rows().collect();
        let qf = partial_features(&self.plan, &rows)?;
        let dims = self.plan.dims_for(channels);
        let cc = self.plan.channel_count();

        let query_pivots = if options.pivot_correction && !self.pivots.is_empty() {
            let zeros = vec![0.0; self.qlen];
            let mut normalized: Vec<Vec<f64>> = vec![zeros; cc];
            for &(c, row) in &rows {
                normalized[c] = normalize_for(self.mode, row);
            }
            let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
            let rem = compute_remainder(&self.plan, &refs)?;
            Some(self.pivots.channel_distances(&rem))
        } else {
            None
        };

        let qf = qf.as_slice();
        let scale = 1.0 / self.qlen as f64;
        let bound = |mbr: &Mbr, intervals: &[Interval]| {
            let feature = mbr.mindist_sq(qf, &dims) * scale;
            match &query_pivots {
                Some(dq) => feature + channel_correction(intervals, dq, channels, cc),
                None => feature,
            }
        };

        let prepared = PreparedQuery::new(q);
        let mut candidates: Vec<Match> = Vec::new();
        let mut stats = QueryStats {
            subsequences_total: self.subsequence_count(),
            ..QueryStats::default()
        };
        let mut browser = Browser::new(&self.tree, bound);
        let mut probe1_bounds = Vec::with_capacity(k);
        while probe1_bounds.len() < k {
            let Some((e, b)) = browser.next_entry() else {
                break;
            };
            self.verify_entry(&prepared, e, &mut candidates)?;
            probe1_bounds.push(b);
        }
        stats.entries_emitted_probe1 = probe1_bounds.len();
        let distances: Vec<f64> = candidates.iter().map(|m| m.distance).collect();
        stats.tau_k = kth_smallest(&distances, k);

        let tau_sq = stats.tau_k * stats.tau_k;
        let threshold = tau_sq * (1.0 + RANGE_SLACK_REL) + RANGE_SLACK_ABS;
        stats.entries_returned_probe2 = probe1_bounds.iter().filter(|&&b| b <= threshold).count();
        while let Some((e, _)) = browser.next_within(threshold) {
            self.verify_entry(&prepared, e, &mut candidates)?;
            stats.entries_returned_probe2 += 1;
        }
        stats.nodes_visited = browser.nodes_visited();
        stats.subsequences_verified = candidates.len();
        Ok((top_k(candidates, k), stats))
    }

    /// Entries whose plain feature-space bound is at most `tau_sq`, unverified.
    pub fn range_entries(&self, q: &Query, tau_sq: f64) -> Result<Vec<&IndexEntry>> {
        q.validate(self.dataset.channel_count(), self.qlen, self.mode)?;
        let rows: Vec<(usize, &[f64])> = q.rows().collect();
        let qf = partial_features(&self.plan, &rows)?;
        let qf = qf.as_slice();
        let dims = self.plan.dims_for(q.channels());
        let scale = 1.0 / self.qlen as f64;
        let bound = |mbr: &Mbr, _: &[Interval]| mbr.mindist_sq(qf, &dims) * scale;
        Ok(range_query(&self.tree, bound, tau_sq)
            .into_iter()
            .map(|e| self.tree.entry(e))
            .collect())
    }

    fn verify_entry(&self, prepared: &PreparedQuery, entry_id: usize, out: &mut Vec<Match>) -> Result<()> {
        let entry = self.tree.entry(entry_id);
        let series = &self.dataset.series()[entry.series];
        let d2 = prepared.squared_profile(series, &self.stats[entry.series], entry.start, entry.end)?;
        out.extend(
            d2.into_iter()
                .enumerate()
                .map(|(j, v)| Match::new(v.max(0.0).sqrt(), series.id(), entry.start + j, self.qlen)),
        );
        Ok(())
    }

    /// Run several queries, optionally across threads; results keep the
    /// input order.
    pub fn knn_batch(&self, queries: &[Query], parallel: bool) -> Vec<Result<(Vec<Match>, QueryStats)>> {
        if !parallel || queries.len() < 2 {
            return queries.iter().map(|q| self.knn_query(q)).collect();
        }
        let threads = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(queries.len());
        let chunk = queries.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = queries
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|q| self.knn_query(q)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::index::BuildConfig;
    use crate::series::{Dataset, Mode, MultivariateTimeSeries};
    use std::sync::Arc;

    #[test]
    fn kth_smallest_basics() {
        assert_eq!(kth_smallest(&[3.0, 1.0, 2.0], 2), 2.0);
        assert_eq!(kth_smallest(&[3.0], 2), f64::INFINITY);
    }

    #[test]
    fn walk_through_picks_the_middle_window() {
        // one channel, qlen 1: entries hold values whose distances to 0 are [8, 5, 6]
        let s = MultivariateTimeSeries::new(7, vec![vec![8.0, 5.0, 6.0, 20.0, 30.0]]).unwrap();
        let ds = Arc::new(Dataset::new("walk", vec![s]).unwrap());
        let idx = MsIndex::build(ds, 1, Mode::Raw, BuildConfig::default()).unwrap();
        let q = Query::new(vec![0], vec![vec![0.0]], 1, Mode::Raw).unwrap();
        let (m, st) = idx.knn_query(&q).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].subsequence.offset, m[0].distance), (1, 5.0));
        assert_eq!(st.tau_k, 5.0);
    }

    #[test]
    fn k_beyond_window_count_returns_everything() {
        let s = MultivariateTimeSeries::new(0, vec![vec![1.0, 4.0, 2.0, 8.0]]).unwrap();
        let ds = Arc::new(Dataset::new("tiny", vec![s]).unwrap());
        let idx = MsIndex::build(ds, 2, Mode::Raw, BuildConfig::default()).unwrap();
        let q = Query::new(vec![0], vec![vec![1.0, 4.0]], 10, Mode::Raw).unwrap();
        let (m, st) = idx.knn_query(&q).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].distance, 0.0);
        assert!(st.tau_k.is_infinite());
        assert_eq!(st.subsequences_verified, 3);
        assert_eq!(st.pruning_effectiveness(), 0.0);
    }

    #[test]
    fn invalid_queries_are_rejected() {
        let s = MultivariateTimeSeries::new(0, vec![vec![0.0; 8], vec![1.0; 8]]).unwrap();
        let ds = Arc::new(Dataset::new("flat", vec![s]).unwrap());
        let idx = MsIndex::build(ds, 4, Mode::Raw, BuildConfig::default()).unwrap();
        let wrong_len = Query::new(vec![0], vec![vec![0.0; 3]], 1, Mode::Raw).unwrap();
        assert!(matches!(idx.knn_query(&wrong_len), Err(Error::InvalidQuery(_))));
        let wrong_channel = Query::new(vec![2], vec![vec![0.0; 4]], 1, Mode::Raw).unwrap();
        assert!(matches!(idx.knn_query(&wrong_channel), Err(Error::InvalidQuery(_))));
        let wrong_mode = Query::new(vec![0], vec![vec![0.0; 4]], 1, Mode::Znorm).unwrap();
        assert!(matches!(idx.knn_query(&wrong_mode), Err(Error::InvalidQuery(_))));
    }
}
