//! Distance profiles through the convolution theorem.
//!
//! `d^2(q, t_j) = ||q||^2 + ||t_j||^2 - 2 <q, t_j>`, with every sliding dot
//! product obtained from one zero-padded FFT. Raw-mode inputs are centred
//! on the query mean first (distances are translation invariant), and
//! entries whose squared distance is tiny relative to the operand energies
//! are recomputed by direct summation, since cancellation dominates there.

use num_complex::Complex64;

use crate::dft::{forward_plan, inverse_plan};
use crate::error::{Error, Result};
use crate::series::{
    mean_std, normalize_for, sliding_window_stats, squared_distance, znormalize, Mode, MultivariateTimeSeries, Query,
    WindowStats, ZNORM_EPSILON,
};

/// Relative size below which a squared distance is recomputed directly.
const CANCELLATION_GUARD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceProfile(pub Vec<f64>);

impl DistanceProfile {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(offset, distance)` of the smallest entry, first offset on ties.
    pub fn argmin(&self) -> Option<(usize, f64)> {
        self.0
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }
}

/// `out[j] = sum_i q[i] * t[j + i]` for every `j in 0..=t.len() - q.len()`.
pub fn sliding_dot_products(q: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    let s = q.len();
    let m = t.len();
    if s == 0 || s > m {
        return Err(Error::InvalidInput(format!(
            "sliding dot products: query length {s} must be in 1..={m}"
        )));
    }
    let n = m.next_power_of_two();
    let mut tf: Vec<Complex64> = Vec::with_capacity(n);
    tf.extend(t.iter().map(|&v| Complex64::new(v, 0.0)));
    tf.resize(n, Complex64::new(0.0, 0.0));
    let mut qf: Vec<Complex64> = Vec::with_capacity(n);
    qf.extend(q.iter().rev().map(|&v| Complex64::new(v, 0.0)));
    qf.resize(n, Complex64::new(0.0, 0.0));
    let fwd = forward_plan(n);
    fwd.process(&mut tf);
    fwd.process(&mut qf);
    for (a, b) in tf.iter_mut().zip(&qf) {
        *a *= b;
    }
    inverse_plan(n).process(&mut tf);
    let scale = 1.0 / n as f64;
    Ok(tf[s - 1..m].iter().map(|c| c.re * scale).collect())
}

/// One query channel with the statistics every profile needs.
#[derive(Clone, Debug)]
pub(crate) struct PreparedChannel {
    mode: Mode,
    /// query minus its mean
    centered: Vec<f64>,
    /// query as the direct oracle sees it (raw or z-normalized)
    normalized: Vec<f64>,
    mean: f64,
    std: f64,
    centered_sumsq: f64,
}

impl PreparedChannel {
    pub(crate) fn new(q: &[f64], mode: Mode) -> Self {
        let (mean, std) = mean_std(q);
        let centered: Vec<f64> = q.iter().map(|v| v - mean).collect();
        let centered_sumsq = centered.iter().map(|v| v * v).sum();
        Self {
            mode,
            centered,
            normalized: normalize_for(mode, q),
            mean,
            std,
            centered_sumsq,
        }
    }

    fn len(&self) -> usize {
        self.centered.len()
    }

    /// Add squared distances to every window of `segment` into `acc`.
    ///
    /// `stats` must describe the windows of `segment` (same length as `acc`).
    pub(crate) fn accumulate(&self, segment: &[f64], stats: StatsSlice<'_>, acc: &mut [f64]) -> Result<()> {
        let s = self.len();
        let count = segment.len() + 1 - s;
        debug_assert_eq!(acc.len(), count);
        // centring the segment leaves <q - mean_q, t> unchanged
        let shift = segment.iter().sum::<f64>() / segment.len() as f64;
        let shifted: Vec<f64> = segment.iter().map(|v| v - shift).collect();
        let dots = sliding_dot_products(&self.centered, &shifted)?;
        let sf = s as f64;
        match self.mode {
            Mode::Raw => {
                for j in 0..count {
                    let css = stats.centered_sumsq[j];
                    let shape = self.centered_sumsq + css - 2.0 * dots[j];
                    acc[j] += if shape < CANCELLATION_GUARD * (self.centered_sumsq + css) {
                        squared_distance(&self.normalized, &segment[j..j + s])
                    } else {
                        let level = stats.mean[j] - self.mean;
                        shape.max(0.0) + sf * level * level
                    };
                }
            }
            Mode::Znorm => {
                let q_flat = self.std <= ZNORM_EPSILON;
                for j in 0..count {
                    let t_flat = stats.std[j] <= ZNORM_EPSILON;
                    let d2 = match (q_flat, t_flat) {
                        (true, true) => 0.0,
                        (true, false) | (false, true) => sf,
                        (false, false) => {
                            let corr = dots[j] / (sf * self.std * stats.std[j]);
                            let d2 = 2.0 * sf * (1.0 - corr);
                            if d2 < CANCELLATION_GUARD * 2.0 * sf {
                                squared_distance(&self.normalized, &znormalize(&segment[j..j + s]))
                            } else {
                                d2
                            }
                        }
                    };
                    acc[j] += d2.max(0.0);
                }
            }
        }
        Ok(())
    }
}

/// Borrowed window statistics for a run of consecutive windows.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StatsSlice<'a> {
    pub mean: &'a [f64],
    pub std: &'a [f64],
    pub centered_sumsq: &'a [f64],
}

impl<'a> StatsSlice<'a> {
    pub(crate) fn of(stats: &'a WindowStats, start: usize, end_inclusive: usize) -> Self {
        Self {
            mean: &stats.mean[start..=end_inclusive],
            std: &stats.std[start..=end_inclusive],
            centered_sumsq: &stats.centered_sumsq[start..=end_inclusive],
        }
    }
}

/// Distance from `q` to every window of `t` under `mode`.
pub fn distance_profile(q: &[f64], t: &[f64], mode: Mode) -> Result<DistanceProfile> {
    if q.is_empty() || q.len() > t.len() {
        return Err(Error::InvalidInput(format!(
            "distance profile: query length {} must be in 1..={}",
            q.len(),
            t.len()
        )));
    }
    let prepared = PreparedChannel::new(q, mode);
    let stats = sliding_window_stats(t, q.len());
    let mut acc = vec![0.0; t.len() - q.len() + 1];
    prepared.accumulate(t, StatsSlice::of(&stats, 0, acc.len() - 1), &mut acc)?;
    Ok(DistanceProfile(acc.into_iter().map(f64::sqrt).collect()))
}

/// Multivariate distance over the query's channels for window offsets
/// `start..=end` of `series`.
pub fn multivariate_profile(
    q: &Query,
    series: &MultivariateTimeSeries,
    start: usize,
    end: usize,
) -> Result<DistanceProfile> {
    let s = q.qlen();
    if start > end || end + s > series.len() {
        return Err(Error::InvalidInput(format!(
            "offset range [{start}, {end}] invalid for series {} of length {} and qlen {s}",
            series.id(),
            series.len()
        )));
    }
    if let Some(&bad) = q.channels().iter().find(|&&c| c >= series.channel_count()) {
        return Err(Error::InvalidQuery(format!("channels: unknown channel {bad}")));
    }
    let mut acc = vec![0.0; end - start + 1];
    for (c, row) in q.rows() {
        let segment = &series.channel(c)[start..end + s];
        let stats = sliding_window_stats(segment, s);
        PreparedChannel::new(row, q.mode()).accumulate(segment, StatsSlice::of(&stats, 0, end - start), &mut acc)?;
    }
    Ok(DistanceProfile(acc.into_iter().map(f64::sqrt).collect()))
}

/// Query channels prepared once and evaluated against cached per-series
/// window statistics.
#[derive(Clone, Debug)]
pub(crate) struct PreparedQuery {
    channels: Vec<(usize, PreparedChannel)>,
    qlen: usize,
}

impl PreparedQuery {
    pub(crate) fn new(q: &Query) -> Self {
        Self {
            channels: q
                .rows()
                .map(|(c, row)| (c, PreparedChannel::new(row, q.mode())))
                .collect(),
            qlen: q.qlen(),
        }
    }

    /// Single-channel variant used by per-channel indices.
    pub(crate) fn single(channel: usize, row: &[f64], mode: Mode) -> Self {
        Self {
            channels: vec![(channel, PreparedChannel::new(row, mode))],
            qlen: row.len(),
        }
    }

    /// Squared distances for windows `start..=end`; `stats[c]` are the
    /// full-series window statistics of channel `c`.
    pub(crate) fn squared_profile(
        &self,
        series: &MultivariateTimeSeries,
        stats: &[WindowStats],
        start: usize,
        end: usize,
    ) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; end - start + 1];
        for (c, prepared) in &self.channels {
            let segment = &series.channel(*c)[start..end + self.qlen];
            prepared.accumulate(segment, StatsSlice::of(&stats[*c], start, end), &mut acc)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{normalize_for, squared_distance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_profile(q: &[f64], t: &[f64], mode: Mode) -> Vec<f64> {
        let qn = normalize_for(mode, q);
        (0..=t.len() - q.len())
            .map(|j| squared_distance(&qn, &normalize_for(mode, &t[j..j + q.len()])).sqrt())
            .collect()
    }

    #[test]
    fn dot_product_examples() {
        let d = sliding_dot_products(&[1.0], &[4.0, 5.0, 6.0]).unwrap();
        for (a, b) in d.iter().zip([4.0, 5.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let d = sliding_dot_products(&[1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((d[0] - 3.0).abs() < 1e-12 && (d[1] - 5.0).abs() < 1e-12);
        assert!(sliding_dot_products(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn dot_products_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = sliding_dot_products(&q, &t).unwrap();
        for (j, v) in fast.iter().enumerate() {
            let naive: f64 = q.iter().zip(&t[j..]).map(|(a, b)| a * b).sum();
            assert!((v - naive).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_match_and_degenerate_profiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0) * 40.0 + 100.0).collect();
        let q = t[7..27].to_vec();
        let p = distance_profile(&q, &t, Mode::Raw).unwrap();
        assert!(p.0[7] < 1e-6);
        assert_eq!(p.argmin().unwrap().0, 7);

        let flat = vec![2.5; 40];
        let p = distance_profile(&q, &flat, Mode::Znorm).unwrap();
        let zq: f64 = crate::series::znormalize(&q).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(p.0.iter().all(|v| (v - zq).abs() < 1e-9));
        let p = distance_profile(&[3.0; 20], &flat, Mode::Znorm).unwrap();
        assert!(p.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn profiles_match_naive_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for mode in [Mode::Raw, Mode::Znorm] {
            for _ in 0..20 {
                let s = rng.random_range(2..40);
                let m = rng.random_range(s..300);
                let t: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fast = distance_profile(&q, &t, mode).unwrap();
                let slow = naive_profile(&q, &t, mode);
                for (a, b) in fast.0.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-5 * b.max(1.0), "{mode}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn sub_range_equals_slice_and_translation_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..200).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let series = MultivariateTimeSeries::new(0, rows.clone()).unwrap();
        let q = Query::from_subsequence(&series, vec![0, 2], 40, 16, 1, Mode::Raw).unwrap();
        let full = multivariate_profile(&q, &series, 0, 200 - 16).unwrap();
        let part = multivariate_profile(&q, &series, 30, 60).unwrap();
        for (a, b) in part.0.iter().zip(&full.0[30..=60]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(full.0[40] < 1e-9);

        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + 1000.0).collect()).collect();
        let s2 = MultivariateTimeSeries::new(0, shifted).unwrap();
        let q2 = Query::new(
            vec![0, 2],
            q.rows().map(|(_, r)| r.iter().map(|v| v + 1000.0).collect()).collect(),
            1,
            Mode::Raw,
        )
        .unwrap();
        let moved = multivariate_profile(&q2, &s2, 0, 200 - 16).unwrap();
        for (a, b) in moved.0.iter().zip(&full.0) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_channel_profile_equals_univariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..90).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let series = MultivariateTimeSeries::new(0, rows).unwrap();
        let qrow: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        for mode in [Mode::Raw, Mode::Znorm] {
            let q = Query::new(vec![1], vec![qrow.clone()], 1, mode).unwrap();
            let mv = multivariate_profile(&q, &series, 0, 78).unwrap();
            let uv = distance_profile(&qrow, series.channel(1), mode).unwrap();
            for (a, b) in mv.0.iter().zip(&uv.0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entry_verification_walkthrough() {
        // an entry covering offsets 10..=12 whose exact distances are [8, 5, 6]
        let mut values = vec![100.0; 20];
        values[10] = 8.0;
        values[11] = 5.0;
        values[12] = 6.0;
        let series = MultivariateTimeSeries::new(0, vec![values]).unwrap();
        let q = Query::new(vec![0], vec![vec![0.0]], 1, Mode::Raw).unwrap();
        let p = multivariate_profile(&q, &series, 10, 12).unwrap();
        for (a, b) in p.0.iter().zip([8.0, 5.0, 6.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(p.argmin().unwrap().0 + 10, 11);
    }
}
