//! Exact k-nearest-neighbour subsequence search for multivariate time series.
//!
//! Every length-`qlen` window of every series is summarized by a handful of
//! adaptively chosen DFT coefficients per channel. The summaries live in a
//! bulk-loaded R-tree whose leaves group time-neighbouring windows, and a
//! query probes the tree twice before confirming candidates with MASS-style
//! FFT distance profiles. Results are exact: they always equal a brute-force
//! scan under Euclidean distance over the queried channels.
//!
//! Module map:
//!
//! * [`series`]: domain types, Euclidean distance, z-normalization.
//! * [`dft`]: coefficient statistics, coefficient plans, sliding features,
//!   remainders, pivots and lower bounds.
//! * [`mass`]: convolution-based distance profiles.
//! * [`spatial`]: the R-tree (weighted STR bulk load, grouping, browsing).
//! * [`index`]: build and two-probe query of the multivariate index.
//! * [`baselines`]: brute force, MASS scan, per-channel wrapper.
//! * [`bench`]: synthetic data, workloads, dataset IO, benchmark reports.

pub mod baselines;
pub mod bench;
pub mod dft;
pub mod error;
pub mod index;
pub mod mass;
pub mod series;
pub mod spatial;

pub use error::{Error, Result};
pub use index::{BuildConfig, MsIndex, Partitioning, QueryOptions, QueryStats};
pub use series::{Dataset, Match, Mode, MultivariateTimeSeries, Query, SeriesId, SubsequenceRef};
