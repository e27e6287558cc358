//! Benchmark harness: datasets, workloads, timed runs and reports.

pub mod io;
pub mod synth;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

pub use io::{read_dataset, write_binary, write_csv_dir};
pub use synth::{
    generate_synthetic, generate_synthetic_with, generate_workload, relative_contrast, ChannelSelection, QuerySource,
    SyntheticSpec, Workload, WorkloadSpec,
};

use crate::baselines::{brute_force_knn, compare_results, mass_scan_knn, UtsBaseline};
use crate::error::{Error, Result};
use crate::index::{dataset_fingerprint, BuildConfig, MsIndex};
use crate::series::{Dataset, Match, Query};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Relative tolerance of the exactness gate.
pub const GATE_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Brute,
    Mass,
    MsIndex,
    UtsBase,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Brute, Method::Mass, Method::MsIndex, Method::UtsBase];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Brute => "brute",
            Method::Mass => "mass",
            Method::MsIndex => "msindex",
            Method::UtsBase => "utsbase",
        }
    }

    /// Parse a comma-separated list such as `brute,msindex`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("methods: empty list".into()));
        }
        Ok(out)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown method '{s}' (expected brute, mass, msindex or utsbase)"
                ))
            })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub build: BuildConfig,
    pub repetitions: usize,
    /// Compute the brute-force oracle on several threads. Timed runs stay sequential.
    pub parallel_gate: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            build: BuildConfig::default(),
            repetitions: 3,
            parallel_gate: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query: usize,
    pub channels: usize,
    /// Median over repetitions.
    pub seconds: f64,
    pub subsequences_verified: usize,
    pub subsequences_total: usize,
    pub pruning_effectiveness: f64,
    pub entries_emitted_probe1: Option<usize>,
    pub entries_returned_probe2: Option<usize>,
    pub nodes_visited: Option<usize>,
    pub tau_k: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub init_seconds: f64,
    /// Serialized snapshot size; 0 for the scan methods.
    pub index_bytes: usize,
    pub median_query_seconds: f64,
    pub median_pruning_effectiveness: f64,
    pub median_entries_returned_probe2: Option<f64>,
    pub median_nodes_visited: Option<f64>,
    pub queries: Vec<QueryRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub provenance: String,
    pub series: usize,
    pub channels: usize,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub dataset: DatasetInfo,
    pub workload: WorkloadSpec,
    pub config: BenchConfig,
    /// Relative contrast per query (`null` when the closest distance is 0).
    pub relative_contrast: Vec<f64>,
    pub exactness_gate: String,
    pub methods: Vec<MethodReport>,
    pub notes: Vec<String>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn brute_force_all(dataset: &Dataset, queries: &[Query], parallel: bool) -> Result<Vec<Vec<Match>>> {
    if !parallel || queries.len() < 2 {
        return queries.iter().map(|q| brute_force_knn(dataset, q)).collect();
    }
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(queries.len());
    let chunk = queries.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|q| brute_force_knn(dataset, q)).collect::<Vec<_>>()))
            .collect();
        let mut out = Vec::with_capacity(queries.len());
        for h in handles {
            match h.join() {
                Ok(part) => out.extend(part),
                Err(panic) => std::panic::resume_unwind(panic),
            }
        }
        out.into_iter().collect()
    })
}

enum Built {
    Scan(Method),
    Index(Box<MsIndex>),
    Uts(UtsBaseline),
}

impl Built {
    fn run(&self, dataset: &Dataset, q: &Query) -> Result<(Vec<Match>, QueryRecord)> {
        let total = dataset.subsequence_count(q.qlen());
        let mut rec = QueryRecord {
            channels: q.channels().len(),
            subsequences_total: total,
            ..QueryRecord::default()
        };
        let matches = match self {
            Built::Scan(m) => {
                rec.subsequences_verified = total;
                if *m == Method::Brute {
                    brute_force_knn(dataset, q)?
                } else {
                    mass_scan_knn(dataset, q)?
                }
            }
            Built::Index(idx) => {
                let (m, s) = idx.knn_query(q)?;
                rec.subsequences_verified = s.subsequences_verified;
                rec.subsequences_total = s.subsequences_total;
                rec.entries_emitted_probe1 = Some(s.entries_emitted_probe1);
                rec.entries_returned_probe2 = Some(s.entries_returned_probe2);
                rec.nodes_visited = Some(s.nodes_visited);
                rec.tau_k = Some(s.tau_k);
                m
            }
            Built::Uts(u) => {
                let (m, s) = u.knn_query(q)?;
                rec.subsequences_verified = s.subsequences_verified;
                rec.subsequences_total = s.subsequences_total;
                m
            }
        };
        rec.pruning_effectiveness = if rec.subsequences_total == 0 {
            0.0
        } else {
            1.0 - rec.subsequences_verified as f64 / rec.subsequences_total as f64
        };
        Ok((matches, rec))
    }
}

/// Build each method once, run every query `repetitions` times and check all
/// answers against brute force before reporting anything.
pub fn run_benchmark(
    dataset: Arc<Dataset>,
    workload: &Workload,
    methods: &[Method],
    config: &BenchConfig,
) -> Result<BenchReport> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("methods: empty list".into()));
    }
    if config.repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be positive".into()));
    }
    config.build.validate()?;
    let qlen = workload.spec.qlen;
    let mode = workload.spec.mode;
    for (i, q) in workload.queries.iter().enumerate() {
        q.validate(dataset.channel_count(), qlen, mode)
            .map_err(|e| Error::Workload(format!("query {i}: {e}")))?;
    }

    log::info!("computing brute-force oracle for {} queries", workload.queries.len());
    let oracle = brute_force_all(&dataset, &workload.queries, config.parallel_gate)?;

    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        log::info!("benchmarking {method}");
        let t0 = Instant::now();
        let built = match method {
            Method::Brute | Method::Mass => Built::Scan(method),
            Method::MsIndex => Built::Index(Box::new(MsIndex::build(
                dataset.clone(),
                qlen,
                mode,
                config.build.clone(),
            )?)),
            Method::UtsBase => Built::Uts(UtsBaseline::build(dataset.clone(), qlen, mode, &config.build)?),
        };
        let init_seconds = t0.elapsed().as_secs_f64();
        let index_bytes = match &built {
            Built::Scan(_) => 0,
            Built::Index(idx) => idx.snapshot_size(),
            Built::Uts(u) => u.snapshot_size(),
        };

        let mut records = Vec::with_capacity(workload.queries.len());
        for (i, q) in workload.queries.iter().enumerate() {
            let mut times = Vec::with_capacity(config.repetitions);
            let mut first = None;
            for _ in 0..config.repetitions {
                let t = Instant::now();
                let out = built.run(&dataset, q)?;
                times.push(t.elapsed().as_secs_f64());
                first.get_or_insert(out);
            }
            let (matches, mut rec) = first.expect("at least one repetition");
            compare_results(&oracle[i], &matches, GATE_TOLERANCE)
                .map_err(|e| Error::Exactness(format!("{method}, query {i}: {e}")))?;
            rec.query = i;
            rec.seconds = median(&times);
            records.push(rec);
        }

        let collect = |f: &dyn Fn(&QueryRecord) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = records.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| median(&v))
        };
        reports.push(MethodReport {
            method,
            init_seconds,
            index_bytes,
            median_query_seconds: collect(&|r| Some(r.seconds)).unwrap_or(f64::NAN),
            median_pruning_effectiveness: collect(&|r| Some(r.pruning_effectiveness)).unwrap_or(0.0),
            median_entries_returned_probe2: collect(&|r| r.entries_returned_probe2.map(|x| x as f64)),
            median_nodes_visited: collect(&|r| r.nodes_visited.map(|x| x as f64)),
            queries: records,
        });
    }

    let relative_contrast = workload
        .queries
        .iter()
        .map(|q| synth::relative_contrast(&dataset, q).unwrap_or(f64::NAN))
        .collect();
    let fingerprint = dataset_fingerprint(&dataset)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: DatasetInfo {
            name: dataset.name().to_string(),
            provenance: dataset.provenance().to_string(),
            series: dataset.len(),
            channels: dataset.channel_count(),
            fingerprint,
        },
        workload: workload.spec.clone(),
        config: config.clone(),
        relative_contrast,
        exactness_gate: format!(
            "passed: {} queries x {} methods agree with brute force",
            workload.queries.len(),
            methods.len()
        ),
        methods: reports,
        notes: vec![
            "split weights: softmax of per-dimension variances divided by their maximum".into(),
            "mass: per-series FFTs are recomputed for every query".into(),
            "index_bytes: serialized snapshot size".into(),
            "timings: median over repetitions, queries run sequentially".into(),
        ],
    })
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (method, query) for plotting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "method",
            "query",
            "channels",
            "seconds",
            "subsequences_verified",
            "subsequences_total",
            "pruning_effectiveness",
            "entries_emitted_probe1",
            "entries_returned_probe2",
            "nodes_visited",
            "tau_k",
            "relative_contrast",
            "init_seconds",
            "index_bytes",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for m in &self.methods {
            for r in &m.queries {
                w.write_record([
                    m.method.to_string(),
                    r.query.to_string(),
                    r.channels.to_string(),
                    r.seconds.to_string(),
                    r.subsequences_verified.to_string(),
                    r.subsequences_total.to_string(),
                    r.pruning_effectiveness.to_string(),
                    opt(r.entries_emitted_probe1.map(|x| x.to_string())),
                    opt(r.entries_returned_probe2.map(|x| x.to_string())),
                    opt(r.nodes_visited.map(|x| x.to_string())),
                    opt(r.tau_k.map(|x| x.to_string())),
                    self.relative_contrast
                        .get(r.query)
                        .map_or_else(String::new, |x| x.to_string()),
                    m.init_seconds.to_string(),
                    m.index_bytes.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
