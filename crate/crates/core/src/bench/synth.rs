use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::all_distances;
use crate::error::{Error, Result};
use crate::series::{mean_std, Dataset, Mode, MultivariateTimeSeries, Query, SeriesId};

/// Random-walk dataset recipe: start uniform in [0, 100], Gaussian steps
/// with a per-(series, channel) standard deviation uniform in [0, 10].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub c: usize,
    pub m: usize,
    pub seed: u64,
    /// Channels whose step deviation is pinned to 0 (constant series).
    #[serde(default)]
    pub zero_sigma_channels: Vec<usize>,
    /// Optional per-channel multiplier on the step deviation.
    #[serde(default)]
    pub channel_scale: Vec<f64>,
}

impl SyntheticSpec {
    pub fn new(n: usize, c: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            c,
            m,
            seed,
            zero_sigma_channels: Vec::new(),
            channel_scale: Vec::new(),
        }
    }
}

pub fn generate_synthetic(n: usize, c: usize, m: usize, seed: u64) -> Result<Dataset> {
    generate_synthetic_with(&SyntheticSpec::new(n, c, m, seed))
}

pub fn generate_synthetic_with(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.c == 0 || spec.m == 0 {
        return Err(Error::InvalidInput(format!(
            "synthetic: n, c and m must be positive (got {}, {}, {})",
            spec.n, spec.c, spec.m
        )));
    }
    if !spec.channel_scale.is_empty() && spec.channel_scale.len() != spec.c {
        return Err(Error::InvalidInput(format!(
            "synthetic: channel_scale has {} entries for {} channels",
            spec.channel_scale.len(),
            spec.c
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut series = Vec::with_capacity(spec.n);
    for id in 0..spec.n {
        let mut rows = Vec::with_capacity(spec.c);
        for ch in 0..spec.c {
            let start: f64 = rng.random_range(0.0..=100.0);
            let mut sigma: f64 = rng.random_range(0.0..=10.0);
            if spec.zero_sigma_channels.contains(&ch) {
                sigma = 0.0;
            }
            if let Some(scale) = spec.channel_scale.get(ch) {
                sigma *= scale;
            }
            let steps = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(format!("synthetic: {e}")))?;
            let mut v = start;
            let row: Vec<f64> = (0..spec.m)
                .map(|t| {
                    if t > 0 {
                        v += steps.sample(&mut rng);
                    }
                    v
                })
                .collect();
            rows.push(row);
        }
        series.push(MultivariateTimeSeries::new(id as SeriesId, rows)?);
    }
    Ok(Dataset::new(
        format!("synthetic-n{}-c{}-m{}-s{}", spec.n, spec.c, spec.m, spec.seed),
        series,
    )?
    .with_provenance(format!("random walk, seed {}", spec.seed)))
}

/// Which channels each query uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSelection {
    All,
    Fixed(Vec<usize>),
    /// A uniformly random subset; `size` of `None` draws the size uniformly too.
    Random {
        size: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub qlen: usize,
    pub count: usize,
    pub k: usize,
    pub mode: Mode,
    /// Noise deviation as a multiple of each query channel's deviation.
    pub noise_factor: f64,
    /// Draw queries from held-out series that are removed from the indexed data.
    pub out_of_dataset: bool,
    /// Fraction of series held out when `out_of_dataset` is set (at least one).
    pub holdout_fraction: f64,
    pub channels: ChannelSelection,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(qlen: usize, count: usize, seed: u64) -> Self {
        Self {
            qlen,
            count,
            k: 1,
            mode: Mode::Raw,
            noise_factor: 0.1,
            out_of_dataset: false,
            holdout_fraction: 0.1,
            channels: ChannelSelection::All,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuerySource {
    pub series_id: SeriesId,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub queries: Vec<Query>,
    pub sources: Vec<QuerySource>,
    /// The data to index: the input minus any held-out series.
    pub indexed: Dataset,
    pub held_out: Vec<SeriesId>,
}

/// Noisy copies of random windows.
pub fn generate_workload(dataset: &Dataset, spec: &WorkloadSpec) -> Result<Workload> {
    if spec.qlen == 0 || spec.k == 0 {
        return Err(Error::Workload("qlen and k must be positive".into()));
    }
    if !(spec.noise_factor >= 0.0 && spec.noise_factor.is_finite()) {
        return Err(Error::Workload(format!(
            "noise_factor: {} is invalid",
            spec.noise_factor
        )));
    }
    let c = dataset.channel_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eligible: Vec<SeriesId> = dataset
        .series()
        .iter()
        .filter(|s| s.len() >= spec.qlen)
        .map(|s| s.id())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Workload(format!("no series has length >= qlen {}", spec.qlen)));
    }

    let (sources_from, held_out, indexed) = if spec.out_of_dataset {
        if eligible.len() < 2 {
            return Err(Error::Workload(
                "out-of-dataset queries need at least two eligible series".into(),
            ));
        }
        let want = ((spec.holdout_fraction * eligible.len() as f64).ceil() as usize).clamp(1, eligible.len() - 1);
        let mut shuffled = eligible.clone();
        shuffled.shuffle(&mut rng);
        let mut held: Vec<SeriesId> = shuffled[..want].to_vec();
        held.sort_unstable();
        let indexed = dataset.filter(|id| held.binary_search(&id).is_err())?;
        (held.clone(), held, indexed)
    } else {
        (eligible, Vec::new(), dataset.clone())
    };

    let mut queries = Vec::with_capacity(spec.count);
    let mut sources = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let id = *sources_from.choose(&mut rng).expect("non-empty");
        let series = &dataset.series()[dataset.position_of(id).expect("known id")];
        let offset = rng.random_range(0..=series.len() - spec.qlen);
        let channels = match &spec.channels {
            ChannelSelection::All => (0..c).collect(),
            ChannelSelection::Fixed(v) => v.clone(),
            ChannelSelection::Random { size } => {
                let size = match size {
                    Some(s) if (1..=c).contains(s) => *s,
                    Some(s) => return Err(Error::Workload(format!("channel subset size {s} not in 1..={c}"))),
                    None => rng.random_range(1..=c),
                };
                let mut pick = rand::seq::index::sample(&mut rng, c, size).into_vec();
                pick.sort_unstable();
                pick
            }
        };
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
            return Err(Error::Workload(format!("channel {bad} out of range (dataset has {c})")));
        }
        let mut rows = Vec::with_capacity(channels.len());
        for &ch in &channels {
            let window = &series.channel(ch)[offset..offset + spec.qlen];
            let (_, sd) = mean_std(window);
            let noise_sd = spec.noise_factor * sd;
            let row: Vec<f64> = if noise_sd > 0.0 {
                let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Workload(e.to_string()))?;
                window.iter().map(|v| v + noise.sample(&mut rng)).collect()
            } else {
                window.to_vec()
            };
            rows.push(row);
        }
        queries.push(Query::new(channels, rows, spec.k, spec.mode).map_err(|e| Error::Workload(e.to_string()))?);
        sources.push(QuerySource { series_id: id, offset });
    }
    Ok(Workload {
        spec: spec.clone(),
        queries,
        sources,
        indexed,
        held_out,
    })
}

/// Farthest over closest true distance; infinite when the closest is 0.
pub fn relative_contrast(dataset: &Dataset, q: &Query) -> Result<f64> {
    q.validate(dataset.channel_count(), q.qlen(), q.mode())?;
    if dataset.subsequence_count(q.qlen()) < 2 {
        return Err(Error::InvalidInput(
            "relative contrast needs at least two windows".into(),
        ));
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for m in all_distances(dataset, q)? {
        lo = lo.min(m.distance);
        hi = hi.max(m.distance);
    }
    Ok(if lo == 0.0 {
        if hi == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        hi / lo
    })
}
