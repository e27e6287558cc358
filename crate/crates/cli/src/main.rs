use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mtsq::bench::{
    generate_synthetic, generate_workload, read_dataset, run_benchmark, write_binary, write_csv_dir, BenchConfig,
    ChannelSelection, Method, WorkloadSpec,
};
use mtsq::{BuildConfig, Dataset, Error, Match, Mode, MsIndex, Partitioning, Query, QueryStats, Result};

#[derive(Parser, Debug)]
#[command(
    name = "mtsq",
    version,
    about = "Exact k-nearest-neighbour search over multivariate time series"
)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "MTSQ_SEED", default_value_t = 0)]
    seed: u64,

    /// Human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic random-walk dataset.
    Gen(GenArgs),
    /// Build an index over a dataset and save it.
    Build(BuildArgs),
    /// Run kNN queries against a saved index.
    Query(QueryArgs),
    /// Benchmark methods on a workload.
    Bench(BenchArgs),
    /// Describe a saved index.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Binary,
    Csv,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    c: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct IndexFlags {
    #[arg(long, default_value_t = 0.6)]
    d_target: f64,
    #[arg(long, default_value_t = 0.0005)]
    leaf_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pivot_count: usize,
    #[arg(long, default_value_t = 100)]
    sample_size: usize,
    #[arg(long, default_value_t = 16)]
    node_capacity: usize,
    #[arg(long, default_value = "weighted")]
    partitioning: Partitioning,
}

impl IndexFlags {
    fn config(&self, seed: u64) -> BuildConfig {
        BuildConfig {
            d_target: self.d_target,
            leaf_fraction: self.leaf_fraction,
            pivot_count: self.pivot_count,
            sample_size: self.sample_size,
            seed,
            node_capacity: self.node_capacity,
            partitioning: self.partitioning,
        }
    }
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Binary dataset file or CSV directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    qlen: usize,
    #[arg(long, default_value = "raw")]
    mode: Mode,
    #[command(flatten)]
    index: IndexFlags,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Expected query length; a snapshot built for another length is rejected.
    #[arg(long)]
    qlen: Option<usize>,
    /// Expected mode; defaults to the index's.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Queried channels (default: all).
    #[arg(long, value_delimiter = ',')]
    channels: Vec<usize>,
    /// CSV file with columns `channel_<i>` and one row per time step.
    #[arg(long, conflicts_with_all = ["series", "workload"])]
    query_file: Option<PathBuf>,
    /// Take the query from this series id (with --offset).
    #[arg(long, requires = "offset", conflicts_with = "workload")]
    series: Option<u64>,
    #[arg(long)]
    offset: Option<usize>,
    /// Generate this many noisy in-dataset queries instead.
    #[arg(long)]
    workload: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    noise_factor: f64,
    /// Run workload queries on several threads (output order is preserved).
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Dataset to load; without it a synthetic one is generated from --n/--c/--m.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    c: usize,
    #[arg(long, default_value_t = 512)]
    m: usize,
    #[arg(long, default_value_t = 64)]
    qlen: usize,
    #[arg(long, default_value = "raw")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_factor: f64,
    /// Draw queries from held-out series.
    #[arg(long)]
    out_of_dataset: bool,
    /// Fixed queried channels (default: all).
    #[arg(long, value_delimiter = ',', conflicts_with = "random_channels")]
    channels: Vec<usize>,
    /// Random channel subsets of this size per query.
    #[arg(long)]
    random_channels: Option<usize>,
    #[arg(long, default_value = "brute,mass,msindex,utsbase")]
    methods: String,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Compute the exactness oracle on several threads.
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    index: IndexFlags,
    /// JSON report path (default: stdout).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write a per-query CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    index: PathBuf,
}

fn load_dataset(path: &Path) -> Result<Arc<Dataset>> {
    Ok(Arc::new(read_dataset(path)?))
}

fn emit(line: &serde_json::Value) -> Result<()> {
    writeln!(io::stdout().lock(), "{line}")?;
    Ok(())
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let ds = generate_synthetic(a.n, a.c, a.m, cli.seed)?;
    match a.format {
        Format::Binary => write_binary(&ds, &a.out)?,
        Format::Csv => write_csv_dir(&ds, &a.out)?,
    }
    log::info!("wrote {} series to {}", ds.len(), a.out.display());
    Ok(())
}

fn cmd_build(cli: &Cli, a: &BuildArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let index = MsIndex::build(ds, a.qlen, a.mode, a.index.config(cli.seed))?;
    index.save(&a.out)?;
    let s = index.summary();
    if cli.pretty {
        println!(
            "indexed {} windows from {} series into {} entries ({} nodes, height {}), snapshot {} bytes",
            s.subsequences,
            s.series_indexed,
            s.tree.entries,
            s.tree.nodes,
            s.tree.height,
            index.snapshot_size()
        );
    } else {
        emit(&json!({ "index": a.out, "summary": s }))?;
    }
    Ok(())
}

fn read_query_file(path: &Path, k: usize, mode: Mode) -> Result<Query> {
    let (channels, rows): (Vec<usize>, Vec<Vec<f64>>) = query_columns(path)?.into_iter().unzip();
    Query::new(channels, rows, k, mode)
}

/// Columns of a query CSV keyed by channel.
fn query_columns(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidQuery(format!("{}: empty query file", path.display())))?;
    let mut cols = Vec::new();
    for h in header.split(',') {
        let c = h
            .trim()
            .strip_prefix("channel_")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::InvalidQuery(format!("query file: header '{h}' is not channel_<i>")))?;
        cols.push((c, Vec::new()));
    }
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::InvalidQuery(format!(
                "query file: row {row} has {} fields",
                fields.len()
            )));
        }
        for (col, f) in cols.iter_mut().zip(fields) {
            col.1.push(
                f.trim()
                    .parse()
                    .map_err(|_| Error::InvalidQuery(format!("query file: row {row}: '{f}' is not a number")))?,
            );
        }
    }
    Ok(cols)
}

fn print_results(pretty: bool, qi: usize, matches: &[Match], stats: &QueryStats) -> Result<()> {
    if pretty {
        println!("query {qi}");
        println!(
            "{:>5}  {:>10}  {:>8}  {:>14}",
            "rank", "series_id", "offset", "distance"
        );
        for (r, m) in matches.iter().enumerate() {
            println!(
                "{:>5}  {:>10}  {:>8}  {:>14.6}",
                r + 1,
                m.subsequence.series_id,
                m.subsequence.offset,
                m.distance
            );
        }
        println!(
            "verified {}/{} windows (pruning {:.4}), probe-1 entries {}, probe-2 entries {}, nodes {}",
            stats.subsequences_verified,
            stats.subsequences_total,
            stats.pruning_effectiveness(),
            stats.entries_emitted_probe1,
            stats.entries_returned_probe2,
            stats.nodes_visited
        );
        return Ok(());
    }
    for (r, m) in matches.iter().enumerate() {
        emit(&json!({
            "query": qi,
            "rank": r + 1,
            "series_id": m.subsequence.series_id,
            "offset": m.subsequence.offset,
            "distance": m.distance,
        }))?;
    }
    emit(&json!({ "query": qi, "stats": stats }))
}

fn cmd_query(cli: &Cli, a: &QueryArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let index = MsIndex::load(&a.index, ds.clone(), a.qlen)?;
    let mode = a.mode.unwrap_or(index.mode());
    if mode != index.mode() {
        return Err(Error::InvalidQuery(format!(
            "mode: index was built for {}, query asks for {mode}",
            index.mode()
        )));
    }
    let qlen = index.qlen();
    let channels = if a.channels.is_empty() {
        (0..ds.channel_count()).collect()
    } else {
        a.channels.clone()
    };

    let queries = if let Some(path) = &a.query_file {
        vec![read_query_file(path, a.k, mode)?]
    } else if let Some(id) = a.series {
        let pos = ds
            .position_of(id)
            .ok_or_else(|| Error::InvalidQuery(format!("series: no series with id {id}")))?;
        let offset = a.offset.unwrap_or(0);
        vec![Query::from_subsequence(
            &ds.series()[pos],
            channels,
            offset,
            qlen,
            a.k,
            mode,
        )?]
    } else if let Some(count) = a.workload {
        let mut spec = WorkloadSpec::new(qlen, count, cli.seed);
        spec.k = a.k;
        spec.mode = mode;
        spec.noise_factor = a.noise_factor;
        if !a.channels.is_empty() {
            spec.channels = ChannelSelection::Fixed(a.channels.clone());
        }
        generate_workload(&ds, &spec)?.queries
    } else {
        return Err(Error::InvalidQuery(
            "query: pass --query-file, --series with --offset, or --workload".into(),
        ));
    };

    let results = index.knn_batch(&queries, a.parallel);
    for (qi, r) in results.into_iter().enumerate() {
        let (matches, stats) = r?;
        print_results(cli.pretty, qi, &matches, &stats)?;
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let ds = match &a.dataset {
        Some(p) => read_dataset(p)?,
        None => generate_synthetic(a.n, a.c, a.m, cli.seed)?,
    };
    let mut spec = WorkloadSpec::new(a.qlen, a.queries, cli.seed);
    spec.k = a.k;
    spec.mode = a.mode;
    spec.noise_factor = a.noise_factor;
    spec.out_of_dataset = a.out_of_dataset;
    spec.channels = match (a.channels.is_empty(), a.random_channels) {
        (false, _) => ChannelSelection::Fixed(a.channels.clone()),
        (true, Some(size)) => ChannelSelection::Random { size: Some(size) },
        (true, None) => ChannelSelection::All,
    };
    let workload = generate_workload(&ds, &spec)?;
    let config = BenchConfig {
        build: a.index.config(cli.seed),
        repetitions: a.repetitions,
        parallel_gate: a.parallel,
    };
    let methods = Method::parse_list(&a.methods)?;
    let report = run_benchmark(Arc::new(workload.indexed.clone()), &workload, &methods, &config)?;
    if let Some(path) = &a.csv {
        report.write_csv(path)?;
    }
    if cli.pretty {
        println!("{}", report.exactness_gate);
        println!(
            "{:>8}  {:>10}  {:>12}  {:>12}  {:>8}  {:>10}",
            "method", "init_s", "index_bytes", "median_q_s", "pruning", "probe2"
        );
        for m in &report.methods {
            println!(
                "{:>8}  {:>10.4}  {:>12}  {:>12.6}  {:>8.4}  {:>10}",
                m.method.as_str(),
                m.init_seconds,
                m.index_bytes,
                m.median_query_seconds,
                m.median_pruning_effectiveness,
                m.median_entries_returned_probe2.map_or("-".into(), |x| x.to_string())
            );
        }
    }
    let text = report.to_json()?;
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None if !cli.pretty => println!("{text}"),
        None => {}
    }
    Ok(())
}

fn cmd_inspect(cli: &Cli, a: &InspectArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let index = MsIndex::load(&a.index, ds, None)?;
    let s = index.summary();
    if cli.pretty {
        println!("qlen {}  mode {}  feature dims {}", s.qlen, s.mode, s.feature_dims);
        for (c, sel) in s.selected_coefficients.iter().enumerate() {
            println!("channel {c}: coefficients {sel:?}");
        }
        if !s.uniform_fallback_channels.is_empty() {
            println!("uniform fallback channels: {:?}", s.uniform_fallback_channels);
        }
        println!("pivots {}", s.pivot_count);
        println!(
            "series {} indexed, {} skipped; {} windows in {} entries (compression {:.2})",
            s.series_indexed, s.series_skipped, s.subsequences, s.tree.entries, s.compression
        );
        println!("tree: {} nodes, height {}", s.tree.nodes, s.tree.height);
    } else {
        emit(&serde_json::to_value(&s)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Build(a) => cmd_build(cli, a),
        Command::Query(a) => cmd_query(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Inspect(a) => cmd_inspect(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
