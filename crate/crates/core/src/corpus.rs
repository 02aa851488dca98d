//! Dataset directory discovery and loading.
//!
//! A record is either an `.atr`/`.qrs` annotation pair (with an optional
//! `.hea` header for the sampling rate) or a single `.csv` beat file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;
use crate::wfdb::{self, BeatSeries, DEFAULT_SAMPLING_RATE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum RecordSource {
    Mit { atr: PathBuf, qrs: PathBuf, hea: Option<PathBuf> },
    Csv { path: PathBuf },
}

/// Record stems in `dir`, sorted. A stem with both an annotation pair and a
/// CSV file uses the annotation pair.
pub fn discover_records(dir: &Path) -> Result<BTreeMap<String, RecordSource>> {
    let mut by_stem: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        by_stem
            .entry(stem.to_string_lossy().into_owned())
            .or_default()
            .push(ext.to_string_lossy().into_owned());
    }
    let mut out = BTreeMap::new();
    for (stem, exts) in by_stem {
        let has = |e: &str| exts.iter().any(|x| x == e);
        let source = if has("atr") && has("qrs") {
            RecordSource::Mit {
                atr: dir.join(format!("{stem}.atr")),
                qrs: dir.join(format!("{stem}.qrs")),
                hea: has("hea").then(|| dir.join(format!("{stem}.hea"))),
            }
        } else if has("csv") {
            RecordSource::Csv {
                path: dir.join(format!("{stem}.csv")),
            }
        } else {
            continue;
        };
        out.insert(stem, source);
    }
    Ok(out)
}

pub fn load_source(record_id: &str, source: &RecordSource, default_rate: u32) -> Result<BeatSeries> {
    let ctx = |e: Error| Error::Record {
        record: record_id.to_string(),
        msg: e.to_string(),
    };
    match source {
        RecordSource::Mit { atr, qrs, hea } => {
            let rate = match hea {
                Some(h) => wfdb::read_header_sampling_rate(&fs::read_to_string(h)?).map_err(ctx)?,
                None => default_rate,
            };
            let qrs = wfdb::parse_annotation_stream(&fs::read(qrs)?).map_err(ctx)?;
            let atr = wfdb::parse_annotation_stream(&fs::read(atr)?).map_err(ctx)?;
            wfdb::load_record(record_id, &qrs, &atr, rate)
        }
        RecordSource::Csv { path } => {
            wfdb::load_csv_record(record_id, fs::File::open(path)?, default_rate).map_err(ctx)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub source: RecordSource,
    pub sampling_rate: u32,
    pub beats: usize,
    pub rhythm_marks: usize,
    /// Rhythm label → number of marks.
    pub rhythms: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: Vec<RecordSummary>,
    pub failed: Vec<(String, String)>,
    pub missing: Vec<String>,
}

impl LoadReport {
    pub fn total_beats(&self) -> usize {
        self.loaded.iter().map(|r| r.beats).sum()
    }
}

/// Loads every record in `dir` (or only `only`, when given). Records that
/// fail are listed in the report; zero loaded records is an error.
pub fn load_dataset_dir(
    dir: &Path,
    only: Option<&[String]>,
    default_rate: Option<u32>,
) -> Result<(Vec<BeatSeries>, LoadReport)> {
    let default_rate = default_rate.unwrap_or(DEFAULT_SAMPLING_RATE);
    let mut found = discover_records(dir)?;
    let mut report = LoadReport::default();
    if let Some(only) = only {
        report.missing = only.iter().filter(|r| !found.contains_key(*r)).cloned().collect();
        found.retain(|k, _| only.contains(k));
    }
    let items: Vec<(String, RecordSource)> = found.into_iter().collect();
    let loaded = par::map_range(items.len(), |i| load_source(&items[i].0, &items[i].1, default_rate));

    let mut series = Vec::new();
    for ((id, source), res) in items.into_iter().zip(loaded) {
        match res {
            Ok(s) => {
                let mut rhythms = BTreeMap::new();
                for m in &s.rhythm_marks {
                    *rhythms.entry(m.rhythm.clone()).or_insert(0) += 1;
                }
                report.loaded.push(RecordSummary {
                    record_id: id,
                    source,
                    sampling_rate: s.sampling_rate,
                    beats: s.beat_times.len(),
                    rhythm_marks: s.rhythm_marks.len(),
                    rhythms,
                });
                series.push(s);
            }
            Err(e) => report.failed.push((id, e.to_string())),
        }
    }
    if series.is_empty() {
        return Err(Error::config(
            "dataset_dir",
            format!("no records could be loaded from {}", dir.display()),
        ));
    }
    Ok((series, report))
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl RecordSource {
    pub fn files(&self) -> Vec<&Path> {
        match self {
            RecordSource::Mit { atr, qrs, hea } => {
                let mut v = vec![atr.as_path(), qrs.as_path()];
                v.extend(hea.as_deref());
                v
            }
            RecordSource::Csv { path } => vec![path.as_path()],
        }
    }
}

/// Verifies files against a `sha256sum`-style list (`<hex>  <file>`), paths
/// relative to `dir`. Returns the number of files checked.
pub fn verify_checksums(dir: &Path, list: &Path) -> Result<usize> {
    let text = fs::read_to_string(list)?;
    let mut checked = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut parts = line.split_whitespace();
        let (Some(expected), Some(file)) = (parts.next(), parts.next()) else {
            return Err(Error::config("checksums", format!("bad line `{line}`")));
        };
        let file = file.trim_start_matches('*');
        let actual = sha256_file(&dir.join(file))?;
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Checksum {
                file: file.to_string(),
                expected: expected.to_string(),
                actual,
            });
        }
        checked += 1;
    }
    Ok(checked)
}
