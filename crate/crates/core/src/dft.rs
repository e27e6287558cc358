//! DFT summaries of fixed-length windows.
//!
//! Only the non-redundant half of the spectrum (`0..=qlen/2`) of a real window
//! is kept. Coefficients whose conjugate partner is dropped carry twice their
//! energy, so every stored coordinate is scaled by `sqrt(fold_weight)`. With
//! that scaling the plain Euclidean distance between two feature vectors,
//! divided by `sqrt(qlen)`, lower-bounds the time-domain distance and is
//! tight when every admissible coefficient is selected.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::series::{mean_std, normalize_for, sliding_window_stats, Mode, MultivariateTimeSeries, ZNORM_EPSILON};

/// Shifts between full recomputations in the sliding transform.
pub const SLIDING_REFRESH: usize = 1024;

const KMEANS_MAX_ITER: usize = 100;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Unnormalized forward DFT, `X[k] = sum_n x[n] e^{-2 pi i k n / s}`.
pub fn dft_forward(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        forward_plan(buf.len()).process(&mut buf);
    }
    buf
}

/// Inverse of [`dft_forward`], returning the real part.
pub fn dft_inverse(spectrum: &[Complex64]) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    if buf.is_empty() {
        return Vec::new();
    }
    inverse_plan(buf.len()).process(&mut buf);
    let s = buf.len() as f64;
    buf.iter().map(|c| c.re / s).collect()
}

/// Coefficient indices a plan may select for windows of length `qlen`.
pub fn admissible_indices(qlen: usize, mode: Mode) -> Range<usize> {
    let end = qlen / 2 + 1;
    match mode {
        Mode::Raw => 0..end,
        Mode::Znorm => 1..end,
    }
}

/// Multiplicity of coefficient `k` in the full spectrum of a real window.
pub fn fold_weight(k: usize, qlen: usize) -> f64 {
    if k >= 1 && k < qlen.div_ceil(2) {
        2.0
    } else {
        1.0
    }
}

/// Average relative distance contribution of each coefficient, per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ArdcTable {
    qlen: usize,
    mode: Mode,
    contributions: Vec<Vec<f64>>,
    uniform_fallback: Vec<bool>,
}

impl ArdcTable {
    /// Wrap precomputed contributions (one row of `qlen/2 + 1` values per channel).
    pub fn from_contributions(qlen: usize, mode: Mode, contributions: Vec<Vec<f64>>) -> Result<Self> {
        let width = qlen / 2 + 1;
        if qlen == 0 || contributions.is_empty() {
            return Err(Error::InvalidInput("ardc table: empty".into()));
        }
        if contributions.iter().any(|row| row.len() != width) {
            return Err(Error::InvalidInput(format!(
                "ardc table: rows must have {width} entries for qlen {qlen}"
            )));
        }
        if contributions.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("ardc table: negative or non-finite entry".into()));
        }
        let channels = contributions.len();
        Ok(Self {
            qlen,
            mode,
            contributions,
            uniform_fallback: vec![false; channels],
        })
    }

    pub fn uniform(qlen: usize, mode: Mode, channels: usize) -> Self {
        let admissible = admissible_indices(qlen, mode);
        let share = 1.0 / admissible.len().max(1) as f64;
        let row: Vec<f64> = (0..qlen / 2 + 1)
            .map(|k| if admissible.contains(&k) { share } else { 0.0 })
            .collect();
        Self {
            qlen,
            mode,
            contributions: vec![row; channels],
            uniform_fallback: vec![true; channels],
        }
    }

    pub fn qlen(&self) -> usize {
        self.qlen
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn channel_count(&self) -> usize {
        self.contributions.len()
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        &self.contributions[channel]
    }

    /// Whether the channel had no informative sample pair.
    pub fn is_fallback(&self, channel: usize) -> bool {
        self.uniform_fallback[channel]
    }

    pub(crate) fn set_fallback(&mut self, channel: usize, flag: bool) {
        self.uniform_fallback[channel] = flag;
    }
}

/// Estimate per-coefficient distance contributions over all pairs of `sample`.
///
/// Each sample element holds one row of `qlen` raw values per channel. Pairs
/// at zero distance on a channel are skipped; a channel with no informative
/// pair falls back to uniform contributions.
pub fn estimate_ardc(sample: &[Vec<Vec<f64>>], qlen: usize, mode: Mode) -> Result<ArdcTable> {
    if sample.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "ardc: need at least 2 sample windows, got {}",
            sample.len()
        )));
    }
    let channels = sample[0].len();
    if channels == 0 {
        return Err(Error::InvalidInput("ardc: sample windows have no channels".into()));
    }
    for w in sample {
        if w.len() != channels || w.iter().any(|row| row.len() != qlen) {
            return Err(Error::InvalidInput(format!(
                "ardc: every sample window must have {channels} rows of length {qlen}"
            )));
        }
    }
    let width = qlen / 2 + 1;
    let admissible = admissible_indices(qlen, mode);
    let weights: Vec<f64> = (0..width).map(|k| fold_weight(k, qlen)).collect();

    let mut table = ArdcTable::uniform(qlen, mode, channels);
    for c in 0..channels {
        let spectra: Vec<Vec<Complex64>> = sample
            .iter()
            .map(|w| {
                let mut spec = dft_forward(&normalize_for(mode, &w[c]));
                spec.truncate(width);
                spec
            })
            .collect();
        let mut acc = vec![0.0; width];
        let mut pairs = 0usize;
        let mut diff = vec![0.0; width];
        for a in 0..spectra.len() {
            for b in a + 1..spectra.len() {
                let mut total = 0.0;
                let mut scale = 0.0;
                for k in admissible.clone() {
                    let d = (spectra[a][k] - spectra[b][k]).norm_sqr() * weights[k];
                    diff[k] = d;
                    total += d;
                    scale += (spectra[a][k].norm_sqr() + spectra[b][k].norm_sqr()) * weights[k];
                }
                if total <= 1e-24 * scale || total == 0.0 {
                    continue;
                }
                for k in admissible.clone() {
                    acc[k] += diff[k] / total;
                }
                pairs += 1;
            }
        }
        if pairs > 0 {
            for v in acc.iter_mut() {
                *v /= pairs as f64;
            }
            table.contributions[c] = acc;
            table.uniform_fallback[c] = false;
        } else {
            log::warn!("ardc: channel {c} has no informative sample pair, using uniform contributions");
        }
    }
    Ok(table)
}

/// Selected coefficient indices per channel and the feature layout they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPlan {
    qlen: usize,
    mode: Mode,
    d_target: f64,
    selected: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    ardc: ArdcTable,
}

/// Greedily select coefficients in descending contribution until the
/// cumulative contribution reaches `d_target` on every channel.
pub fn select_coefficients(table: &ArdcTable, d_target: f64) -> Result<CoefficientPlan> {
    if !(d_target > 0.0 && d_target <= 1.0) {
        return Err(Error::InvalidInput(format!("d_target: {d_target} is outside (0, 1]")));
    }
    let admissible = admissible_indices(table.qlen, table.mode);
    if admissible.is_empty() {
        return Err(Error::InvalidInput(format!(
            "qlen: {} leaves no admissible coefficient in {} mode",
            table.qlen, table.mode
        )));
    }
    let mut selected = Vec::with_capacity(table.channel_count());
    for c in 0..table.channel_count() {
        let row = table.channel(c);
        let mut order: Vec<usize> = admissible.clone().collect();
        let chosen = if d_target >= 1.0 {
            order
        } else {
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut cumulative = 0.0;
            let mut chosen = Vec::new();
            for k in order {
                chosen.push(k);
                cumulative += row[k];
                if cumulative >= d_target - 1e-12 {
                    break;
                }
            }
            chosen.sort_unstable();
            chosen
        };
        selected.push(chosen);
    }
    CoefficientPlan::from_parts(table.qlen, table.mode, d_target, selected, table.clone())
}

impl CoefficientPlan {
    pub fn from_parts(
        qlen: usize,
        mode: Mode,
        d_target: f64,
        selected: Vec<Vec<usize>>,
        ardc: ArdcTable,
    ) -> Result<Self> {
        let admissible = admissible_indices(qlen, mode);
        if selected.len() != ardc.channel_count() {
            return Err(Error::InvalidInput("plan: channel count mismatch".into()));
        }
        for (c, sel) in selected.iter().enumerate() {
            if sel.is_empty() {
                return Err(Error::InvalidInput(format!("plan: channel {c} selects nothing")));
            }
            if sel.windows(2).any(|w| w[0] >= w[1]) || sel.iter().any(|k| !admissible.contains(k)) {
                return Err(Error::InvalidInput(format!(
                    "plan: channel {c} has unsorted or inadmissible indices"
                )));
            }
        }
        let mut offsets = Vec::with_capacity(selected.len() + 1);
        let mut acc = 0;
        for sel in &selected {
            offsets.push(acc);
            acc += 2 * sel.len();
        }
        offsets.push(acc);
        Ok(Self {
            qlen,
            mode,
            d_target,
            selected,
            offsets,
            ardc,
        })
    }

    pub fn qlen(&self) -> usize {
        self.qlen
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn d_target(&self) -> f64 {
        self.d_target
    }

    pub fn ardc(&self) -> &ArdcTable {
        &self.ardc
    }

    pub fn channel_count(&self) -> usize {
        self.selected.len()
    }

    pub fn selected(&self, channel: usize) -> &[usize] {
        &self.selected[channel]
    }

    /// Feature dimensionality (two reals per selected coefficient).
    pub fn dims(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn channel_dims(&self, channel: usize) -> Range<usize> {
        self.offsets[channel]..self.offsets[channel + 1]
    }

    /// Feature dimensions belonging to `channels`.
    pub fn dims_for(&self, channels: &[usize]) -> Vec<usize> {
        channels.iter().flat_map(|&c| self.channel_dims(c)).collect()
    }

    /// `(channel, coefficient, is_imaginary)` for a feature dimension.
    pub fn describe_dim(&self, dim: usize) -> (usize, usize, bool) {
        let c = self.offsets.partition_point(|&o| o <= dim) - 1;
        let local = dim - self.offsets[c];
        (c, self.selected[c][local / 2], local % 2 == 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major feature vectors, one row per window offset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatrix {
    dims: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dims).unwrap_or(0)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn to_vectors(&self) -> Vec<FeatureVector> {
        (0..self.rows()).map(|i| FeatureVector(self.row(i).to_vec())).collect()
    }
}

/// cos/sin of `2 pi j / s` for `j in 0..s`.
pub(crate) struct Twiddles {
    s: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    pub(crate) fn new(s: usize) -> Self {
        let step = std::f64::consts::TAU / s as f64;
        Self {
            s,
            cos: (0..s).map(|j| (step * j as f64).cos()).collect(),
            sin: (0..s).map(|j| (step * j as f64).sin()).collect(),
        }
    }

    #[inline]
    fn at(&self, k: usize, n: usize) -> (f64, f64) {
        let j = (k * n) % self.s;
        (self.cos[j], self.sin[j])
    }

    /// Direct evaluation of one DFT coefficient.
    fn coefficient(&self, x: &[f64], k: usize) -> Complex64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (n, &v) in x.iter().enumerate() {
            let (c, s) = self.at(k, n);
            re += v * c;
            im -= v * s;
        }
        Complex64::new(re, im)
    }
}

/// Write the scaled selected coefficients of one (already normalized) channel
/// window into `out` (length `2 * selected.len()`).
fn write_channel_features(tw: &Twiddles, plan: &CoefficientPlan, channel: usize, x: &[f64], out: &mut [f64]) {
    for (j, &k) in plan.selected(channel).iter().enumerate() {
        let coef = tw.coefficient(x, k) * fold_weight(k, plan.qlen).sqrt();
        out[2 * j] = coef.re;
        out[2 * j + 1] = coef.im;
    }
}

/// Feature vector of one window given as one raw row per channel.
pub fn window_features(plan: &CoefficientPlan, rows: &[&[f64]]) -> Result<FeatureVector> {
    if rows.len() != plan.channel_count() || rows.iter().any(|r| r.len() != plan.qlen) {
        return Err(Error::InvalidInput(format!(
            "window: expected {} rows of length {}",
            plan.channel_count(),
            plan.qlen
        )));
    }
    let tw = Twiddles::new(plan.qlen);
    let mut out = vec![0.0; plan.dims()];
    for (c, row) in rows.iter().enumerate() {
        let x = normalize_for(plan.mode, row);
        write_channel_features(&tw, plan, c, &x, &mut out[plan.channel_dims(c)]);
    }
    Ok(FeatureVector(out))
}

/// Feature vector over a subset of channels; dimensions of other channels are zero.
pub fn partial_features(plan: &CoefficientPlan, rows: &[(usize, &[f64])]) -> Result<FeatureVector> {
    let tw = Twiddles::new(plan.qlen);
    let mut out = vec![0.0; plan.dims()];
    for &(c, row) in rows {
        if c >= plan.channel_count() || row.len() != plan.qlen {
            return Err(Error::InvalidInput(format!(
                "window: channel {c} unknown or row length {} != {}",
                row.len(),
                plan.qlen
            )));
        }
        let x = normalize_for(plan.mode, row);
        write_channel_features(&tw, plan, c, &x, &mut out[plan.channel_dims(c)]);
    }
    Ok(FeatureVector(out))
}

/// Feature vectors of every window of `series`, via the sliding DFT recurrence
/// `X_{i+1}[k] = (X_i[k] - x_i + x_{i+s}) e^{2 pi i k / s}` with a full
/// recomputation every [`SLIDING_REFRESH`] shifts.
pub fn sliding_features(series: &MultivariateTimeSeries, plan: &CoefficientPlan) -> Result<FeatureMatrix> {
    let s = plan.qlen;
    if series.len() < s {
        return Err(Error::EmptyOutput(format!(
            "series {} has length {} < qlen {s}",
            series.id(),
            series.len()
        )));
    }
    if series.channel_count() != plan.channel_count() {
        return Err(Error::InvalidInput(format!(
            "series {} has {} channels, plan expects {}",
            series.id(),
            series.channel_count(),
            plan.channel_count()
        )));
    }
    let count = series.len() - s + 1;
    let dims = plan.dims();
    let mut data = vec![0.0; count * dims];
    let tw = Twiddles::new(s);
    for c in 0..plan.channel_count() {
        let x = series.channel(c);
        let sel = plan.selected(c);
        let base = plan.channel_dims(c).start;
        let scale: Vec<f64> = sel.iter().map(|&k| fold_weight(k, s).sqrt()).collect();
        let rot: Vec<Complex64> = sel
            .iter()
            .map(|&k| Complex64::new(tw.cos[k % s], tw.sin[k % s]))
            .collect();
        let stds = match plan.mode {
            Mode::Raw => None,
            Mode::Znorm => Some(sliding_window_stats(x, s).std),
        };
        let mut coefs = vec![Complex64::new(0.0, 0.0); sel.len()];
        for i in 0..count {
            if i % SLIDING_REFRESH == 0 {
                for (j, &k) in sel.iter().enumerate() {
                    coefs[j] = tw.coefficient(&x[i..i + s], k);
                }
            } else {
                let delta = x[i + s - 1] - x[i - 1];
                for (j, coef) in coefs.iter_mut().enumerate() {
                    *coef = (*coef + delta) * rot[j];
                }
            }
            let inv = match &stds {
                None => 1.0,
                Some(st) if st[i] <= ZNORM_EPSILON => 0.0,
                Some(st) => 1.0 / st[i],
            };
            let row = &mut data[i * dims + base..i * dims + base + 2 * sel.len()];
            for (j, coef) in coefs.iter().enumerate() {
                let v = coef * (scale[j] * inv);
                row[2 * j] = v.re;
                row[2 * j + 1] = v.im;
            }
        }
    }
    Ok(FeatureMatrix { dims, data })
}

/// Time-domain lower bound `||fa - fb||_{channels} / sqrt(qlen)`.
pub fn dft_lower_bound(plan: &CoefficientPlan, fa: &[f64], fb: &[f64], channels: &[usize]) -> Result<f64> {
    if fa.len() != plan.dims() || fb.len() != plan.dims() {
        return Err(Error::InvalidInput(format!(
            "features: lengths {} and {} do not match plan dimensionality {}",
            fa.len(),
            fb.len(),
            plan.dims()
        )));
    }
    let mut sum = 0.0;
    for &c in channels {
        if c >= plan.channel_count() {
            return Err(Error::InvalidInput(format!("channel {c} not in plan")));
        }
        for d in plan.channel_dims(c) {
            let g = fa[d] - fb[d];
            sum += g * g;
        }
    }
    Ok((sum / plan.qlen as f64).sqrt())
}

/// Per-channel residual of a window after removing its selected coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Remainder {
    channels: Vec<Vec<f64>>,
}

impl Remainder {
    pub fn new(channels: Vec<Vec<f64>>) -> Self {
        Self { channels }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn norm(&self) -> f64 {
        self.channels.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Subtract the reconstruction from stored (scaled) features of one channel.
/// `x` must already be mode-normalized.
fn remainder_channel(
    tw: &Twiddles,
    plan: &CoefficientPlan,
    channel: usize,
    x: &[f64],
    features: &[f64],
    out: &mut [f64],
) {
    let s = plan.qlen;
    out.copy_from_slice(x);
    let inv_s = 1.0 / s as f64;
    for (j, &k) in plan.selected(channel).iter().enumerate() {
        // stored coordinate is sqrt(w) X; reconstruction needs w X / s
        let w = fold_weight(k, s).sqrt() * inv_s;
        let (re, im) = (features[2 * j] * w, features[2 * j + 1] * w);
        for (n, o) in out.iter_mut().enumerate() {
            let (c, sn) = tw.at(k, n);
            *o -= re * c - im * sn;
        }
    }
}

/// Remainder of one window given as mode-normalized rows, one per plan channel.
pub fn compute_remainder(plan: &CoefficientPlan, rows: &[&[f64]]) -> Result<Remainder> {
    if rows.len() != plan.channel_count() || rows.iter().any(|r| r.len() != plan.qlen) {
        return Err(Error::InvalidInput(format!(
            "remainder: expected {} rows of length {}",
            plan.channel_count(),
            plan.qlen
        )));
    }
    let tw = Twiddles::new(plan.qlen);
    let mut channels = Vec::with_capacity(rows.len());
    for (c, row) in rows.iter().enumerate() {
        let mut feats = vec![0.0; 2 * plan.selected(c).len()];
        write_channel_features(&tw, plan, c, row, &mut feats);
        let mut out = vec![0.0; plan.qlen];
        remainder_channel(&tw, plan, c, row, &feats, &mut out);
        channels.push(out);
    }
    Ok(Remainder { channels })
}

/// Reusable scratch for computing remainders of many windows.
pub(crate) struct RemainderWorkspace {
    tw: Twiddles,
    normalized: Vec<f64>,
    residual: Vec<f64>,
}

impl RemainderWorkspace {
    pub(crate) fn new(qlen: usize) -> Self {
        Self {
            tw: Twiddles::new(qlen),
            normalized: vec![0.0; qlen],
            residual: vec![0.0; qlen],
        }
    }

    /// Per-channel distances from the window's remainder to every pivot,
    /// written pivot-major into `out` (`pivots * channels`).
    pub(crate) fn pivot_distances(
        &mut self,
        plan: &CoefficientPlan,
        series: &MultivariateTimeSeries,
        offset: usize,
        features: &[f64],
        pivots: &PivotSet,
        out: &mut [f64],
    ) {
        let s = plan.qlen;
        let cc = plan.channel_count();
        for c in 0..cc {
            let raw = &series.channel(c)[offset..offset + s];
            match plan.mode {
                Mode::Raw => self.normalized.copy_from_slice(raw),
                Mode::Znorm => {
                    let (m, sd) = mean_std(raw);
                    if sd <= ZNORM_EPSILON {
                        self.normalized.iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        for (o, v) in self.normalized.iter_mut().zip(raw) {
                            *o = (v - m) / sd;
                        }
                    }
                }
            }
            let feats = &features[plan.channel_dims(c)];
            remainder_channel(&self.tw, plan, c, &self.normalized, feats, &mut self.residual);
            for (p, pivot) in pivots.pivots.iter().enumerate() {
                out[p * cc + c] = crate::series::squared_distance(&self.residual, pivot.channel(c)).sqrt();
            }
        }
    }
}

/// Reference points in remainder space.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotSet {
    pivots: Vec<Remainder>,
}

impl PivotSet {
    pub fn empty() -> Self {
        Self { pivots: Vec::new() }
    }

    pub fn new(pivots: Vec<Remainder>) -> Self {
        Self { pivots }
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn pivots(&self) -> &[Remainder] {
        &self.pivots
    }

    /// Per-channel distances of `rem` to every pivot, pivot-major.
    pub fn channel_distances(&self, rem: &Remainder) -> Vec<f64> {
        let cc = rem.channel_count();
        let mut out = vec![0.0; self.pivots.len() * cc];
        for (p, pivot) in self.pivots.iter().enumerate() {
            for c in 0..cc {
                out[p * cc + c] = crate::series::squared_distance(rem.channel(c), pivot.channel(c)).sqrt();
            }
        }
        out
    }
}

fn flatten(r: &Remainder) -> Vec<f64> {
    r.channels.concat()
}

fn unflatten(v: &[f64], channels: usize) -> Remainder {
    let len = v.len() / channels.max(1);
    Remainder {
        channels: v.chunks(len.max(1)).map(|c| c.to_vec()).collect(),
    }
}

/// k-means (k-means++ seeding, capped Lloyd iterations) over a remainder sample.
pub fn build_pivots(sample: &[Remainder], p: usize, seed: u64) -> Result<PivotSet> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("pivots: empty remainder sample".into()));
    }
    if p == 0 {
        return Ok(PivotSet::empty());
    }
    let channels = sample[0].channel_count();
    let points: Vec<Vec<f64>> = sample.iter().map(flatten).collect();
    let dim = points[0].len();
    if points.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidInput("pivots: remainders differ in shape".into()));
    }
    let p = if p > points.len() {
        log::warn!("pivots: clamping {p} pivots to sample size {}", points.len());
        points.len()
    } else {
        p
    };
    if p == 1 {
        let mut mean = vec![0.0; dim];
        for x in &points {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= points.len() as f64);
        return Ok(PivotSet {
            pivots: vec![unflatten(&mean, channels)],
        });
    }

    let sq = |a: &[f64], b: &[f64]| crate::series::squared_distance(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|x| sq(x, &centroids[0])).collect();
    while centroids.len() < p {
        let total: f64 = nearest.iter().sum();
        let next = if total <= 0.0 {
            centroids.len() % points.len()
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centroids.push(points[next].clone());
        let last = centroids.last().unwrap();
        for (n, x) in nearest.iter_mut().zip(&points) {
            *n = n.min(sq(x, last));
        }
    }

    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, x) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = sq(x, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; p];
        let mut counts = vec![0usize; p];
        for (x, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..p {
            if counts[j] > 0 {
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }
    Ok(PivotSet {
        pivots: centroids.iter().map(|c| unflatten(c, channels)).collect(),
    })
}

/// Distance from `dq` to the interval `[lo, hi]` (0 inside).
#[inline]
pub fn interval_gap(dq: f64, lo: f64, hi: f64) -> f64 {
    if dq < lo {
        lo - dq
    } else if dq > hi {
        dq - hi
    } else {
        0.0
    }
}

/// Squared time-domain bound: the feature part plus the largest
/// reverse-triangle gap over pivots.
pub fn corrected_lower_bound(
    feature_dist_sq: f64,
    pivot_intervals: &[(f64, f64)],
    query_pivot_dist: &[f64],
    qlen: usize,
) -> f64 {
    let correction = pivot_intervals
        .iter()
        .zip(query_pivot_dist)
        .map(|(&(lo, hi), &dq)| interval_gap(dq, lo, hi).powi(2))
        .fold(0.0, f64::max);
    feature_dist_sq / qlen as f64 + correction
}

/// Per-channel pivot correction over the queried channels.
///
/// `intervals` and `query` are pivot-major with `channels_total` entries per
/// pivot. Each channel contributes its own reverse-triangle gap, which is
/// sound for any channel subset and at least as tight as the aggregate gap.
pub fn channel_correction(intervals: &[(f64, f64)], query: &[f64], channels: &[usize], channels_total: usize) -> f64 {
    let pivots = query.len() / channels_total.max(1);
    let mut best = 0.0f64;
    for p in 0..pivots {
        let base = p * channels_total;
        let mut sum = 0.0;
        for &c in channels {
            let (lo, hi) = intervals[base + c];
            let g = interval_gap(query[base + c], lo, hi);
            sum += g * g;
        }
        best = best.max(sum);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::squared_distance;
    use rand::Rng;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let s = x.len();
        (0..s)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(n, &v)| {
                        let ang = -std::f64::consts::TAU * (k * n) as f64 / s as f64;
                        Complex64::new(v * ang.cos(), v * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn random_window(rng: &mut ChaCha8Rng, channels: usize, s: usize) -> Vec<Vec<f64>> {
        (0..channels)
            .map(|_| (0..s).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut level: f64 = rng.random_range(0.0..100.0);
        (0..n)
            .map(|_| {
                level += rng.random_range(-2.0..2.0);
                level
            })
            .collect()
    }

    fn full_plan(qlen: usize, mode: Mode, channels: usize) -> CoefficientPlan {
        select_coefficients(&ArdcTable::uniform(qlen, mode, channels), 1.0).unwrap()
    }

    #[test]
    fn dft_forward_examples() {
        let x = dft_forward(&[3.0, 3.0, 3.0, 3.0]);
        assert!((x[0] - Complex64::new(12.0, 0.0)).norm() < 1e-12);
        assert!(x[1..].iter().all(|c| c.norm() < 1e-12));
        let x = dft_forward(&[1.0, 0.0, 0.0, 0.0]);
        assert!(x.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn dft_matches_naive_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for s in [1usize, 2, 7, 13, 64, 100] {
            let x: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = dft_forward(&x);
            let slow = naive_dft(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
            }
            let back = dft_inverse(&fast);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
            // Parseval
            let e_time: f64 = x.iter().map(|v| v * v).sum();
            let e_freq: f64 = fast.iter().map(|c| c.norm_sqr()).sum::<f64>() / s as f64;
            assert!((e_time - e_freq).abs() < 1e-9 * e_time.max(1e-12));
        }
    }

    #[test]
    fn znorm_identity_in_frequency_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<f64> = (0..37).map(|_| rng.random_range(-4.0..9.0)).collect();
        let (_, sd) = mean_std(&x);
        let raw = dft_forward(&x);
        let z = dft_forward(&crate::series::znormalize(&x));
        for k in 1..x.len() {
            assert!((z[k] - raw[k] / sd).norm() <= 1e-9 * (1.0 + z[k].norm()));
        }
    }

    #[test]
    fn ardc_concentrates_on_a_sinusoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = 64;
        let sample: Vec<Vec<Vec<f64>>> = (0..30)
            .map(|_| {
                let amp = rng.random_range(0.5..5.0);
                let phase = rng.random_range(0.0..1.0);
                vec![(0..s)
                    .map(|n| amp * (std::f64::consts::TAU * (5.0 * n as f64 / s as f64 + phase)).cos())
                    .collect()]
            })
            .collect();
        let t = estimate_ardc(&sample, s, Mode::Raw).unwrap();
        assert!(t.channel(0)[5] >= 0.999, "{}", t.channel(0)[5]);
        let total: f64 = t.channel(0).iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ardc_skips_identical_pairs_and_falls_back() {
        let a = vec![vec![1.0, 2.0, 3.0, 5.0]];
        let b = vec![vec![0.0, -1.0, 4.0, 2.0]];
        let t = estimate_ardc(&[a.clone(), a.clone(), b], 4, Mode::Raw).unwrap();
        assert!(!t.is_fallback(0));
        assert!((t.channel(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(t.channel(0).iter().all(|v| v.is_finite()));
        let t = estimate_ardc(&[a.clone(), a.clone(), a], 4, Mode::Raw).unwrap();
        assert!(t.is_fallback(0));
        assert!(estimate_ardc(&[vec![vec![1.0; 4]]], 4, Mode::Raw).is_err());
    }

    #[test]
    fn ardc_znorm_ignores_dc_and_white_noise_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = 32;
        let sample: Vec<Vec<Vec<f64>>> = (0..120).map(|_| random_window(&mut rng, 1, s)).collect();
        let t = estimate_ardc(&sample, s, Mode::Znorm).unwrap();
        assert_eq!(t.channel(0)[0], 0.0);
        assert!((t.channel(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // compare per-bin shares normalized by multiplicity
        let per_bin: Vec<f64> = (1..=s / 2).map(|k| t.channel(0)[k] / fold_weight(k, s)).collect();
        let max = per_bin.iter().cloned().fold(f64::MIN, f64::max);
        let min = per_bin.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 3.0, "{max} / {min}");
    }

    #[test]
    fn greedy_selection_examples() {
        let t = ArdcTable::from_contributions(4, Mode::Raw, vec![vec![0.5, 0.3, 0.2]]).unwrap();
        let plan = select_coefficients(&t, 0.6).unwrap();
        assert_eq!(plan.selected(0), &[0, 1]);
        let plan = select_coefficients(&t, 1.0).unwrap();
        assert_eq!(plan.selected(0), &[0, 1, 2]);
        assert_eq!(plan.dims(), 6);
        assert!(select_coefficients(&t, 0.0).is_err());
        assert!(select_coefficients(&t, 1.5).is_err());
        // at least one coefficient even for a tiny target
        let plan = select_coefficients(&t, 1e-9).unwrap();
        assert_eq!(plan.selected(0), &[0]);
    }

    #[test]
    fn high_frequency_spike_is_selected_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = 128;
        let sample: Vec<Vec<Vec<f64>>> = (0..60)
            .map(|_| {
                let base = random_walk(&mut rng, s);
                let amp = rng.random_range(5.0..15.0);
                let phase = rng.random_range(0.0..1.0);
                vec![base
                    .iter()
                    .enumerate()
                    .map(|(n, v)| v * 0.05 + amp * (std::f64::consts::TAU * (50.0 * n as f64 / s as f64 + phase)).sin())
                    .collect()]
            })
            .collect();
        let t = estimate_ardc(&sample, s, Mode::Znorm).unwrap();
        let plan = select_coefficients(&t, 0.6).unwrap();
        assert!(plan.selected(0).contains(&50));
        let low_skipped = (2..10).filter(|k| !plan.selected(0).contains(k)).count();
        assert!(low_skipped >= 3, "{:?}", plan.selected(0));
    }

    #[test]
    fn sliding_features_match_direct_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for mode in [Mode::Raw, Mode::Znorm] {
            let s = 24;
            let rows = vec![random_walk(&mut rng, 2500), random_walk(&mut rng, 2500)];
            let series = MultivariateTimeSeries::new(4, rows).unwrap();
            let sample: Vec<Vec<Vec<f64>>> = (0..10)
                .map(|i| (0..2).map(|c| series.channel(c)[i * 50..i * 50 + s].to_vec()).collect())
                .collect();
            let plan = select_coefficients(&estimate_ardc(&sample, s, mode).unwrap(), 0.9).unwrap();
            let feats = sliding_features(&series, &plan).unwrap();
            assert_eq!(feats.rows(), 2500 - s + 1);
            for i in (0..feats.rows()).step_by(7).chain([feats.rows() - 1]) {
                let rows: Vec<&[f64]> = (0..2).map(|c| &series.channel(c)[i..i + s]).collect();
                let direct = window_features(&plan, &rows).unwrap();
                for (a, b) in feats.row(i).iter().zip(direct.as_slice()) {
                    assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "offset {i}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn sliding_features_single_window_and_degenerate_channel() {
        let series = MultivariateTimeSeries::new(0, vec![vec![1.0, 4.0, 2.0, 8.0], vec![3.0; 4]]).unwrap();
        let plan = full_plan(4, Mode::Znorm, 2);
        let f = sliding_features(&series, &plan).unwrap();
        assert_eq!(f.rows(), 1);
        let direct = window_features(&plan, &[series.channel(0), series.channel(1)]).unwrap();
        for (a, b) in f.row(0).iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f.row(0)[plan.channel_dims(1)].iter().all(|v| *v == 0.0));
        let short = MultivariateTimeSeries::new(1, vec![vec![1.0; 3], vec![1.0; 3]]).unwrap();
        assert!(matches!(sliding_features(&short, &plan), Err(Error::EmptyOutput(_))));
    }

    #[test]
    fn full_plan_bound_is_tight_and_partial_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for s in [15usize, 16] {
            let full = full_plan(s, Mode::Raw, 2);
            let sample: Vec<Vec<Vec<f64>>> = (0..20).map(|_| random_window(&mut rng, 2, s)).collect();
            let partial = select_coefficients(&estimate_ardc(&sample, s, Mode::Raw).unwrap(), 0.5).unwrap();
            for _ in 0..200 {
                let a = random_window(&mut rng, 2, s);
                let b = random_window(&mut rng, 2, s);
                let true_d = (squared_distance(&a[0], &b[0]) + squared_distance(&a[1], &b[1])).sqrt();
                let ra: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
                let rb: Vec<&[f64]> = b.iter().map(|r| r.as_slice()).collect();
                let fa = window_features(&full, &ra).unwrap();
                let fb = window_features(&full, &rb).unwrap();
                let lb = dft_lower_bound(&full, &fa.0, &fb.0, &[0, 1]).unwrap();
                assert!((lb - true_d).abs() <= 1e-6 * true_d);
                let pa = window_features(&partial, &ra).unwrap();
                let pb = window_features(&partial, &rb).unwrap();
                let plb = dft_lower_bound(&partial, &pa.0, &pb.0, &[0, 1]).unwrap();
                assert!(plb <= true_d * (1.0 + 1e-12));
                assert_eq!(dft_lower_bound(&partial, &pa.0, &pa.0, &[0, 1]).unwrap(), 0.0);
            }
        }
        let p = full_plan(8, Mode::Raw, 1);
        assert!(dft_lower_bound(&p, &[0.0; 3], &[0.0; 3], &[0]).is_err());
    }

    #[test]
    fn remainder_examples() {
        let t = ArdcTable::from_contributions(4, Mode::Raw, vec![vec![1.0, 0.0, 0.0]]).unwrap();
        let plan = CoefficientPlan::from_parts(4, Mode::Raw, 0.5, vec![vec![0]], t).unwrap();
        let r = compute_remainder(&plan, &[&[1.0, 2.0, 3.0, 4.0]]).unwrap();
        for (a, b) in r.channel(0).iter().zip([-1.5, -0.5, 0.5, 1.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_window(&mut rng, 1, 9);
        let full = full_plan(9, Mode::Raw, 1);
        let r = compute_remainder(&full, &[&x[0]]).unwrap();
        assert!(r.norm() < 1e-6);
    }

    #[test]
    fn remainder_decomposition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = 20;
        let sample: Vec<Vec<Vec<f64>>> = (0..20).map(|_| random_window(&mut rng, 2, s)).collect();
        let plan = select_coefficients(&estimate_ardc(&sample, s, Mode::Raw).unwrap(), 0.4).unwrap();
        for _ in 0..100 {
            let a = random_window(&mut rng, 2, s);
            let b = random_window(&mut rng, 2, s);
            let ra: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
            let rb: Vec<&[f64]> = b.iter().map(|r| r.as_slice()).collect();
            let rem_a = compute_remainder(&plan, &ra).unwrap();
            let rem_b = compute_remainder(&plan, &rb).unwrap();
            let fa = window_features(&plan, &ra).unwrap();
            let fb = window_features(&plan, &rb).unwrap();
            let true_sq = squared_distance(&a[0], &b[0]) + squared_distance(&a[1], &b[1]);
            let lb = dft_lower_bound(&plan, &fa.0, &fb.0, &[0, 1]).unwrap();
            let rem_sq = squared_distance(rem_a.channel(0), rem_b.channel(0))
                + squared_distance(rem_a.channel(1), rem_b.channel(1));
            assert!((lb * lb + rem_sq - true_sq).abs() <= 1e-6 * true_sq);
            // orthogonality of reconstruction and remainder
            let norm_sq: f64 = a.iter().flatten().map(|v| v * v).sum();
            let feat_sq: f64 = fa.0.iter().map(|v| v * v).sum::<f64>() / s as f64;
            assert!((feat_sq + rem_a.norm().powi(2) - norm_sq).abs() <= 1e-6 * norm_sq);
            // remainder has no energy at selected coefficients
            for c in 0..2 {
                let spec = dft_forward(rem_a.channel(c));
                for &k in plan.selected(c) {
                    assert!(spec[k].norm() <= 1e-6 * (1.0 + norm_sq.sqrt()));
                }
            }
        }
    }

    #[test]
    fn pivots_examples() {
        let sample = vec![
            Remainder::new(vec![vec![1.0, 2.0]]),
            Remainder::new(vec![vec![3.0, 6.0]]),
        ];
        let p = build_pivots(&sample, 1, 0).unwrap();
        assert_eq!(p.pivots()[0].channel(0), &[2.0, 4.0]);
        let same = vec![Remainder::new(vec![vec![1.5, -1.0]]); 5];
        let p = build_pivots(&same, 3, 4).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.pivots().iter().all(|r| r.channel(0) == [1.5, -1.0]));
        let p = build_pivots(&sample, 10, 4).unwrap();
        assert_eq!(p.len(), 2);
        assert!(build_pivots(&[], 1, 0).is_err());
    }

    #[test]
    fn pivots_find_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut sample = Vec::new();
        for center in [-10.0, 10.0] {
            for _ in 0..40 {
                sample.push(Remainder::new(vec![(0..6)
                    .map(|_| center + rng.random_range(-1.0..1.0))
                    .collect()]));
            }
        }
        let p = build_pivots(&sample, 2, 77).unwrap();
        let mut centers: Vec<f64> = p
            .pivots()
            .iter()
            .map(|r| r.channel(0).iter().sum::<f64>() / 6.0)
            .collect();
        centers.sort_by(f64::total_cmp);
        assert!((centers[0] + 10.0).abs() < 1.0);
        assert!((centers[1] - 10.0).abs() < 1.0);
        // reproducible for a fixed seed
        assert_eq!(p, build_pivots(&sample, 2, 77).unwrap());
    }

    #[test]
    fn corrected_bound_examples() {
        assert_eq!(corrected_lower_bound(8.0, &[(1.0, 3.0)], &[2.0], 4), 2.0);
        // singleton interval reproduces the single-subsequence form exactly
        let (dt, dq) = (2.5f64, 4.0f64);
        let b = corrected_lower_bound(12.0, &[(dt, dt)], &[dq], 3);
        assert_eq!(b, 12.0 / 3.0 + (dt - dq).abs().powi(2));
        assert_eq!(corrected_lower_bound(12.0, &[], &[], 3), 4.0);
        assert_eq!(interval_gap(0.5, 1.0, 2.0), 0.5);
        assert_eq!(interval_gap(2.5, 1.0, 2.0), 0.5);
    }

    #[test]
    fn corrected_bound_is_sandwiched() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let s = 32;
        let sample: Vec<Vec<Vec<f64>>> = (0..40).map(|_| vec![random_walk(&mut rng, s)]).collect();
        let plan = select_coefficients(&estimate_ardc(&sample, s, Mode::Raw).unwrap(), 0.6).unwrap();
        let rems: Vec<Remainder> = sample
            .iter()
            .map(|w| compute_remainder(&plan, &[&w[0]]).unwrap())
            .collect();
        let pivots = build_pivots(&rems, 1, 3).unwrap();
        for _ in 0..1000 {
            let a = random_walk(&mut rng, s);
            let b = random_walk(&mut rng, s);
            let fa = window_features(&plan, &[&a]).unwrap();
            let fb = window_features(&plan, &[&b]).unwrap();
            let ra = compute_remainder(&plan, &[&a]).unwrap();
            let rb = compute_remainder(&plan, &[&b]).unwrap();
            let da = pivots.channel_distances(&ra);
            let db = pivots.channel_distances(&rb);
            let fsq: f64 = squared_distance(&fa.0, &fb.0);
            let plain = fsq / s as f64;
            let corr = corrected_lower_bound(fsq, &[(da[0], da[0])], &[db[0]], s);
            let true_sq = squared_distance(&a, &b);
            assert!(plain <= corr);
            assert!(corr <= true_sq * (1.0 + 1e-9) + 1e-9);
            let per_channel = plain + channel_correction(&[(da[0], da[0])], &db, &[0], 1);
            assert!((per_channel - corr).abs() < 1e-9 * corr.max(1.0));
        }
    }

    #[test]
    fn describe_dim_maps_layout() {
        let t = ArdcTable::uniform(8, Mode::Raw, 2);
        let plan = CoefficientPlan::from_parts(8, Mode::Raw, 0.5, vec![vec![0, 3], vec![2]], t).unwrap();
        assert_eq!(plan.dims(), 6);
        assert_eq!(plan.describe_dim(0), (0, 0, false));
        assert_eq!(plan.describe_dim(3), (0, 3, true));
        assert_eq!(plan.describe_dim(4), (1, 2, false));
        assert_eq!(plan.dims_for(&[1]), vec![4, 5]);
    }
}
