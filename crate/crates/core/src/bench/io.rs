//! Dataset files.
//!
//! Binary: magic `MTSQ`, version `u16`, series count and channel count as
//! `u64`, then per series its id and length as `u64` followed by the values
//! channel-major as `f64`, all little-endian.
//!
//! CSV: a directory with `manifest.csv` (`id,file`) and one file per series
//! with header `channel_0,...,channel_{c-1}` and one row per time step.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::{Dataset, MultivariateTimeSeries, SeriesId};
use crate::spatial::codec::{Reader, Writer};

pub const DATASET_MAGIC: &[u8; 4] = b"MTSQ";
pub const DATASET_VERSION: u16 = 1;
pub const MANIFEST: &str = "manifest.csv";

pub fn dataset_to_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.usize(dataset.len());
    w.usize(dataset.channel_count());
    for s in dataset.series() {
        w.u64(s.id());
        w.usize(s.len());
        s.values().iter().for_each(|&v| w.f64(v));
    }
    w.buf
}

pub fn dataset_from_bytes(bytes: &[u8], name: &str) -> Result<Dataset> {
    let bad = |e: Error| Error::InvalidInput(format!("dataset file: {e}"));
    let mut r = Reader::new(bytes);
    if r.take(4, "magic").map_err(bad)? != DATASET_MAGIC {
        return Err(Error::InvalidInput("dataset file: magic is not MTSQ".into()));
    }
    let version = r.u16("version").map_err(bad)?;
    if version != DATASET_VERSION {
        return Err(Error::InvalidInput(format!(
            "dataset file: version {version} is not supported (expected {DATASET_VERSION})"
        )));
    }
    let limit = bytes.len();
    let n = r.usize("series count", limit).map_err(bad)?;
    let c = r.usize("channel count", limit).map_err(bad)?;
    let mut series = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64("series id").map_err(bad)?;
        let m = r.usize("series length", limit).map_err(bad)?;
        let count = c
            .checked_mul(m)
            .filter(|&x| x.saturating_mul(8) <= r.remaining())
            .ok_or_else(|| Error::InvalidInput(format!("dataset file: series {id} is truncated")))?;
        let values = (0..count)
            .map(|_| r.f64("values"))
            .collect::<Result<Vec<_>>>()
            .map_err(bad)?;
        series.push(MultivariateTimeSeries::from_channel_major(id, c, m, values)?);
    }
    r.finish().map_err(bad)?;
    Dataset::new(name, series)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

pub fn write_binary(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_bytes(dataset))?;
    Ok(())
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    dataset_from_bytes(&fs::read(path)?, &stem(path))
}

/// Write one CSV per series plus the manifest into `dir`.
pub fn write_csv_dir(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = csv::Writer::from_path(dir.join(MANIFEST))?;
    manifest.write_record(["id", "file"])?;
    let header: Vec<String> = (0..dataset.channel_count()).map(|c| format!("channel_{c}")).collect();
    for s in dataset.series() {
        let file = format!("series_{}.csv", s.id());
        manifest.write_record([s.id().to_string(), file.clone()])?;
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(&header)?;
        for t in 0..s.len() {
            w.write_record((0..s.channel_count()).map(|c| s.channel(c)[t].to_string()))?;
        }
        w.flush()?;
    }
    manifest.flush()?;
    Ok(())
}

/// Read a directory written by [`write_csv_dir`] (or laid out the same way).
pub fn read_csv_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut manifest = csv::Reader::from_path(dir.join(MANIFEST))?;
    let mut series = Vec::new();
    for record in manifest.records() {
        let record = record?;
        let (Some(id), Some(file)) = (record.get(0), record.get(1)) else {
            return Err(Error::InvalidInput("manifest: rows need 'id' and 'file'".into()));
        };
        let id: SeriesId = id
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("manifest: id '{id}' is not an integer")))?;
        let mut reader = csv::Reader::from_path(dir.join(file.trim()))?;
        let c = reader.headers()?.len();
        for (i, h) in reader.headers()?.iter().enumerate() {
            if h.trim() != format!("channel_{i}") {
                return Err(Error::InvalidInput(format!(
                    "{file}: header column {i} is '{h}', expected 'channel_{i}'"
                )));
            }
        }
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); c];
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != c {
                return Err(Error::InvalidInput(format!(
                    "{file}: row {line} has {} fields, expected {c}",
                    rec.len()
                )));
            }
            for (ch, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("{file}: row {line} column {ch}: '{field}' is not a number"))
                })?;
                rows[ch].push(v);
            }
        }
        series.push(MultivariateTimeSeries::new(id, rows)?);
    }
    Dataset::new(stem(dir), series)
}

/// Read a dataset from a binary file or a CSV directory.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path.is_dir() {
        read_csv_dir(path)
    } else {
        read_binary(path)
    }
}
