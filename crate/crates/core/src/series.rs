//! Domain types shared by every other module.
//!
//! Offsets are 0-based. Result lists are ordered by `(distance, series_id,
//! offset)` ascending, and overlapping windows are never suppressed.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SeriesId = u64;

/// Standard deviations at or below this value are treated as zero.
pub const ZNORM_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Raw,
    Znorm,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Raw => "raw",
            Mode::Znorm => "znorm",
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            Mode::Raw => 0,
            Mode::Znorm => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Mode> {
        match tag {
            0 => Some(Mode::Raw),
            1 => Some(Mode::Znorm),
            _ => None,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Mode::Raw),
            "znorm" | "z-norm" | "normalized" => Ok(Mode::Znorm),
            other => Err(Error::InvalidInput(format!("mode: unknown value `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A series of `channel_count` channels, each `len` observations long,
/// stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateTimeSeries {
    id: SeriesId,
    channels: usize,
    len: usize,
    values: Vec<f64>,
}

impl MultivariateTimeSeries {
    pub fn new(id: SeriesId, channels: Vec<Vec<f64>>) -> Result<Self> {
        let c = channels.len();
        if c == 0 {
            return Err(Error::InvalidInput(format!("series {id}: no channels")));
        }
        let len = channels[0].len();
        if channels.iter().any(|ch| ch.len() != len) {
            return Err(Error::InvalidInput(format!(
                "series {id}: channels have different lengths"
            )));
        }
        Self::from_channel_major(id, c, len, channels.concat())
    }

    pub fn from_channel_major(id: SeriesId, channels: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(Error::InvalidInput(format!(
                "series {id}: channel count and length must be positive"
            )));
        }
        if values.len() != channels * len {
            return Err(Error::InvalidInput(format!(
                "series {id}: expected {} values, got {}",
                channels * len,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "series {id}: non-finite value at channel {}, time {}",
                pos / len,
                pos % len
            )));
        }
        Ok(Self {
            id,
            channels,
            len,
            values,
        })
    }

    pub fn id(&self) -> SeriesId {
        self.id
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.len..(channel + 1) * self.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of windows of length `qlen` (0 when the series is too short).
    pub fn window_count(&self, qlen: usize) -> usize {
        if qlen == 0 || self.len < qlen {
            0
        } else {
            self.len - qlen + 1
        }
    }

    /// Copy of this series restricted to one channel.
    pub fn project(&self, channel: usize) -> MultivariateTimeSeries {
        MultivariateTimeSeries {
            id: self.id,
            channels: 1,
            len: self.len,
            values: self.channel(channel).to_vec(),
        }
    }
}

/// An ordered collection of series sharing one channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    provenance: String,
    channels: usize,
    series: Vec<MultivariateTimeSeries>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, series: Vec<MultivariateTimeSeries>) -> Result<Self> {
        let name = name.into();
        let channels = series
            .first()
            .map(|s| s.channel_count())
            .ok_or_else(|| Error::InvalidInput(format!("dataset `{name}` is empty")))?;
        let mut seen = HashSet::with_capacity(series.len());
        for s in &series {
            if s.channel_count() != channels {
                return Err(Error::InvalidInput(format!(
                    "dataset `{name}`: series {} has {} channels, expected {channels}",
                    s.id(),
                    s.channel_count()
                )));
            }
            if !seen.insert(s.id()) {
                return Err(Error::InvalidInput(format!(
                    "dataset `{name}`: duplicate series id {}",
                    s.id()
                )));
            }
        }
        Ok(Self {
            name,
            provenance: String::new(),
            channels,
            series,
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn series(&self) -> &[MultivariateTimeSeries] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, position: usize) -> Option<&MultivariateTimeSeries> {
        self.series.get(position)
    }

    pub fn position_of(&self, id: SeriesId) -> Option<usize> {
        self.series.iter().position(|s| s.id() == id)
    }

    pub fn subsequence_count(&self, qlen: usize) -> usize {
        self.series.iter().map(|s| s.window_count(qlen)).sum()
    }

    /// Single-channel copy of the dataset.
    pub fn project(&self, channel: usize) -> Result<Dataset> {
        if channel >= self.channels {
            return Err(Error::InvalidInput(format!(
                "channel {channel} out of range (dataset has {})",
                self.channels
            )));
        }
        let series = self.series.iter().map(|s| s.project(channel)).collect();
        Ok(Dataset {
            name: format!("{}[ch{channel}]", self.name),
            provenance: self.provenance.clone(),
            channels: 1,
            series,
        })
    }

    /// Keep only the series whose id satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(SeriesId) -> bool) -> Result<Dataset> {
        let series: Vec<_> = self.series.iter().filter(|s| keep(s.id())).cloned().collect();
        let mut out = Dataset::new(self.name.clone(), series)?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsequenceRef {
    pub series_id: SeriesId,
    pub offset: usize,
    pub length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub distance: f64,
    pub subsequence: SubsequenceRef,
}

impl Match {
    pub fn new(distance: f64, series_id: SeriesId, offset: usize, length: usize) -> Self {
        Self {
            distance,
            subsequence: SubsequenceRef {
                series_id,
                offset,
                length,
            },
        }
    }

    /// Result order: distance, then series id, then offset.
    pub fn result_order(&self, other: &Match) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.subsequence.series_id.cmp(&other.subsequence.series_id))
            .then(self.subsequence.offset.cmp(&other.subsequence.offset))
    }
}

pub fn sort_matches(matches: &mut [Match]) {
    matches.sort_by(Match::result_order);
}

/// Keep the `k` best matches in result order.
pub fn top_k(mut matches: Vec<Match>, k: usize) -> Vec<Match> {
    if matches.len() > k {
        matches.select_nth_unstable_by(k, Match::result_order);
        matches.truncate(k);
    }
    sort_matches(&mut matches);
    matches
}

/// A query over a subset of the dataset's channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    channels: Vec<usize>,
    qlen: usize,
    values: Vec<f64>,
    k: usize,
    mode: Mode,
}

impl Query {
    /// `values[i]` holds the query samples for channel `channels[i]`.
    pub fn new(channels: Vec<usize>, values: Vec<Vec<f64>>, k: usize, mode: Mode) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidQuery("channels: empty channel list".into()));
        }
        if channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidQuery(
                "channels: must be strictly increasing without duplicates".into(),
            ));
        }
        if values.len() != channels.len() {
            return Err(Error::InvalidQuery(format!(
                "values: {} rows for {} channels",
                values.len(),
                channels.len()
            )));
        }
        let qlen = values[0].len();
        if qlen == 0 || values.iter().any(|v| v.len() != qlen) {
            return Err(Error::InvalidQuery(
                "values: rows must be non-empty and of equal length".into(),
            ));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidQuery("values: non-finite sample".into()));
        }
        if k == 0 {
            return Err(Error::InvalidQuery("k: must be positive".into()));
        }
        Ok(Self {
            channels,
            qlen,
            values: values.concat(),
            k,
            mode,
        })
    }

    /// Query built from a window of a dataset series.
    pub fn from_subsequence(
        series: &MultivariateTimeSeries,
        channels: Vec<usize>,
        offset: usize,
        qlen: usize,
        k: usize,
        mode: Mode,
    ) -> Result<Self> {
        if offset + qlen > series.len() {
            return Err(Error::InvalidQuery(format!(
                "offset: window [{offset}, {}) exceeds series length {}",
                offset + qlen,
                series.len()
            )));
        }
        if let Some(&bad) = channels.iter().find(|&&c| c >= series.channel_count()) {
            return Err(Error::InvalidQuery(format!("channels: unknown channel {bad}")));
        }
        let values = channels
            .iter()
            .map(|&c| series.channel(c)[offset..offset + qlen].to_vec())
            .collect();
        Query::new(channels, values, k, mode)
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn qlen(&self) -> usize {
        self.qlen
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Samples of the `position`-th queried channel.
    pub fn row(&self, position: usize) -> &[f64] {
        &self.values[position * self.qlen..(position + 1) * self.qlen]
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.channels.iter().enumerate().map(move |(i, &c)| (c, self.row(i)))
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k.max(1);
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self, channel_count: usize, qlen: usize, mode: Mode) -> Result<()> {
        if self.qlen != qlen {
            return Err(Error::InvalidQuery(format!(
                "qlen: query has length {}, index expects {qlen}",
                self.qlen
            )));
        }
        if let Some(&bad) = self.channels.iter().find(|&&c| c >= channel_count) {
            return Err(Error::InvalidQuery(format!(
                "channels: unknown channel {bad} (dataset has {channel_count})"
            )));
        }
        if self.mode != mode {
            return Err(Error::InvalidQuery(format!(
                "mode: query is {}, index is {}",
                self.mode, mode
            )));
        }
        Ok(())
    }
}

/// Anything that exposes rows by channel id.
pub trait ChannelRows {
    fn channel_row(&self, channel: usize) -> Option<&[f64]>;
}

impl ChannelRows for MultivariateTimeSeries {
    fn channel_row(&self, channel: usize) -> Option<&[f64]> {
        (channel < self.channels).then(|| self.channel(channel))
    }
}

impl ChannelRows for Query {
    fn channel_row(&self, channel: usize) -> Option<&[f64]> {
        self.channels
            .iter()
            .position(|&c| c == channel)
            .map(|pos| self.row(pos))
    }
}

/// A window of a series, seen through [`ChannelRows`].
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub series: &'a MultivariateTimeSeries,
    pub offset: usize,
    pub len: usize,
}

impl ChannelRows for Window<'_> {
    fn channel_row(&self, channel: usize) -> Option<&[f64]> {
        self.series
            .channel_row(channel)
            .and_then(|row| row.get(self.offset..self.offset + self.len))
    }
}

/// Euclidean distance summed over `common` channels.
pub fn euclidean_distance<A, B>(a: &A, b: &B, common: &[usize]) -> Result<f64>
where
    A: ChannelRows + ?Sized,
    B: ChannelRows + ?Sized,
{
    let mut total = 0.0;
    for &c in common {
        let (ra, rb) = match (a.channel_row(c), b.channel_row(c)) {
            (Some(ra), Some(rb)) => (ra, rb),
            _ => return Err(Error::InvalidInput(format!("channel {c} missing from an operand"))),
        };
        if ra.len() != rb.len() {
            return Err(Error::InvalidInput(format!(
                "channel {c}: lengths {} and {} differ",
                ra.len(),
                rb.len()
            )));
        }
        total += squared_distance(ra, rb);
    }
    Ok(total.sqrt())
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Two-pass mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-normalize with population statistics. Zero-variance input maps to zeros.
pub fn znormalize(x: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(x);
    if std <= ZNORM_EPSILON {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| (v - mean) / std).collect()
    }
}

/// Apply the mode's normalization to one channel window.
pub fn normalize_for(mode: Mode, x: &[f64]) -> Vec<f64> {
    match mode {
        Mode::Raw => x.to_vec(),
        Mode::Znorm => znormalize(x),
    }
}

/// Per-window statistics of a channel for a fixed window length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Sum of squares around the window mean (`len * std^2`).
    pub centered_sumsq: Vec<f64>,
}

const STATS_REFRESH: usize = 64;

/// Sliding mean and population standard deviation of every window of length `s`.
///
/// Sums are kept relative to an anchor that is refreshed every few shifts;
/// windows whose variance is small relative to the anchored second moment are
/// recomputed with the two-pass formula so degenerate windows match
/// [`mean_std`] exactly.
pub fn sliding_window_stats(x: &[f64], s: usize) -> WindowStats {
    if s == 0 || x.len() < s {
        return WindowStats::default();
    }
    let count = x.len() - s + 1;
    let sf = s as f64;
    let mut out = WindowStats {
        mean: Vec::with_capacity(count),
        std: Vec::with_capacity(count),
        centered_sumsq: Vec::with_capacity(count),
    };
    let mut anchor = 0.0;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..count {
        if i % STATS_REFRESH == 0 {
            let (m, _) = mean_std(&x[i..i + s]);
            anchor = m;
            sum = 0.0;
            sumsq = 0.0;
            for v in &x[i..i + s] {
                let d = v - anchor;
                sum += d;
                sumsq += d * d;
            }
        } else {
            let old = x[i - 1] - anchor;
            let new = x[i + s - 1] - anchor;
            sum += new - old;
            sumsq += new * new - old * old;
        }
        let m1 = sum / sf;
        let var = sumsq / sf - m1 * m1;
        let (mean, std) = if var <= 1e-6 * (sumsq / sf).max(0.0) || var <= 0.0 {
            mean_std(&x[i..i + s])
        } else {
            (anchor + m1, var.sqrt())
        };
        out.mean.push(mean);
        out.std.push(std);
        out.centered_sumsq.push(sf * std * std);
    }
    out
}
