//! RR / ΔRR extraction, rhythm episode segmentation and fixed-length windowing.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wfdb::BeatSeries;

/// Interval measure fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "rr")]
    Rr,
    #[serde(rename = "drr")]
    DeltaRr,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Rr => "rr",
            Measure::DeltaRr => "drr",
        })
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(Measure::Rr),
            "drr" | "delta_rr" | "deltarr" | "Δrr" => Ok(Measure::DeltaRr),
            _ => Err(Error::config("measure", format!("unknown measure `{s}` (expected rr or drr)"))),
        }
    }
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "N")]
    NonAf = 0,
    #[serde(rename = "AF")]
    Af = 1,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonAf => "N",
            Label::Af => "AF",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::NonAf => Label::Af,
            Label::Af => Label::NonAf,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AF" => Ok(Label::Af),
            "N" => Ok(Label::NonAf),
            _ => Err(Error::config("class_label", format!("unknown label `{s}`"))),
        }
    }
}

/// Physiological gate on RR values, in samples. Intervals outside it are
/// flagged invalid and break episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrGate {
    pub min: i64,
    pub max: i64,
}

impl Default for RrGate {
    fn default() -> Self {
        Self { min: 50, max: 3000 }
    }
}

impl RrGate {
    pub fn contains(&self, rr: i64) -> bool {
        (self.min..=self.max).contains(&rr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledInterval {
    pub rr: i64,
    pub rhythm: Arc<str>,
    pub valid: bool,
}

/// A maximal run of valid intervals under one rhythm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhythmEpisode {
    pub record_id: String,
    pub rhythm_label: String,
    pub intervals: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalWindow {
    pub record_id: String,
    pub class_label: Label,
    pub measure: Measure,
    pub values: Vec<i32>,
    pub window_index: usize,
}

impl IntervalWindow {
    pub fn id(&self) -> String {
        format!("{}:{}", self.record_id, self.window_index)
    }
}

/// Windowing parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub mseq: usize,
    pub measure: Measure,
    /// Rhythm labels mapped to the AF class; everything else is non-AF.
    pub af_rhythms: Vec<String>,
    /// Absolute bound on ΔRR values, in samples. Windows holding a value
    /// beyond it are dropped.
    pub delta_bound: i64,
}

pub const STANDARD_LENGTHS: [usize; 3] = [32, 64, 128];

impl WindowConfig {
    pub fn new(mseq: usize, measure: Measure, sampling_rate: u32) -> Self {
        Self {
            mseq,
            measure,
            af_rhythms: vec!["(AFIB".to_string()],
            delta_bound: 3 * i64::from(sampling_rate),
        }
    }

    pub fn is_standard_length(&self) -> bool {
        STANDARD_LENGTHS.contains(&self.mseq)
    }

    pub fn label_for(&self, rhythm: &str) -> Label {
        if self.af_rhythms.iter().any(|r| r == rhythm) {
            Label::Af
        } else {
            Label::NonAf
        }
    }
}

/// Computes RR intervals, each labeled with the rhythm active at its left beat.
pub fn extract_rr(series: &BeatSeries, gate: RrGate) -> Result<Vec<LabeledInterval>> {
    let beats = &series.beat_times;
    if beats.len() < 2 {
        return Err(Error::Record {
            record: series.record_id.clone(),
            msg: format!("need at least 2 beats, found {}", beats.len()),
        });
    }
    let marks = &series.rhythm_marks;
    if marks.first().is_none_or(|m| m.sample_time > beats[0]) {
        return Err(Error::Record {
            record: series.record_id.clone(),
            msg: "no rhythm mark at or before the first beat".into(),
        });
    }

    let labels: Vec<Arc<str>> = marks.iter().map(|m| Arc::from(m.rhythm.as_str())).collect();
    let mut mark = 0usize;
    let mut out = Vec::with_capacity(beats.len() - 1);
    for pair in beats.windows(2) {
        while mark + 1 < marks.len() && marks[mark + 1].sample_time <= pair[0] {
            mark += 1;
        }
        let rr = pair[1] - pair[0];
        out.push(LabeledInterval {
            rr,
            rhythm: labels[mark].clone(),
            valid: gate.contains(rr),
        });
    }
    Ok(out)
}

/// Splits labeled intervals into maximal same-rhythm runs of valid intervals.
pub fn segment_episodes(record_id: &str, intervals: &[LabeledInterval]) -> Vec<RhythmEpisode> {
    let mut episodes = Vec::new();
    let mut current: Option<RhythmEpisode> = None;
    for iv in intervals {
        if !iv.valid {
            episodes.extend(current.take());
            continue;
        }
        match &mut current {
            Some(ep) if *ep.rhythm_label == *iv.rhythm => ep.intervals.push(iv.rr),
            _ => {
                episodes.extend(current.take());
                current = Some(RhythmEpisode {
                    record_id: record_id.to_string(),
                    rhythm_label: iv.rhythm.to_string(),
                    intervals: vec![iv.rr],
                });
            }
        }
    }
    episodes.extend(current);
    episodes
}

/// First difference of an RR sequence.
pub fn delta(rr: &[i64]) -> Vec<i64> {
    rr.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windowed {
    pub windows: Vec<IntervalWindow>,
    /// ΔRR windows dropped for exceeding `delta_bound`.
    pub dropped_out_of_bound: usize,
}

/// Cuts each episode into non-overlapping windows of `cfg.mseq` values. ΔRR
/// is differenced inside each episode; remainders shorter than a window are
/// discarded. Window indices restart at 0 per call.
pub fn window_episodes(episodes: &[RhythmEpisode], cfg: &WindowConfig) -> Windowed {
    let mut out = Windowed::default();
    if cfg.mseq == 0 {
        return out;
    }
    if !cfg.is_standard_length() {
        log::warn!("non-standard window length {}", cfg.mseq);
    }
    let mut index = 0usize;
    for ep in episodes {
        let series = match cfg.measure {
            Measure::Rr => ep.intervals.clone(),
            Measure::DeltaRr => delta(&ep.intervals),
        };
        let label = cfg.label_for(&ep.rhythm_label);
        for chunk in series.chunks_exact(cfg.mseq) {
            if cfg.measure == Measure::DeltaRr && chunk.iter().any(|v| v.abs() > cfg.delta_bound) {
                out.dropped_out_of_bound += 1;
                continue;
            }
            out.windows.push(IntervalWindow {
                record_id: ep.record_id.clone(),
                class_label: label,
                measure: cfg.measure,
                values: chunk.iter().map(|&v| v as i32).collect(),
                window_index: index,
            });
            index += 1;
        }
    }
    out
}

/// Per-record windowing outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordWindows {
    pub record_id: String,
    pub windows: Vec<IntervalWindow>,
    pub episodes: usize,
    pub intervals: usize,
    pub invalid_intervals: usize,
    /// Beats before the first rhythm mark, which carry no label.
    pub leading_beats_dropped: usize,
    pub dropped_out_of_bound: usize,
}

/// Full per-record path: trim unlabeled leading beats, extract, segment, window.
pub fn record_windows(series: &BeatSeries, gate: RrGate, cfg: &WindowConfig) -> Result<RecordWindows> {
    let first_mark = series
        .rhythm_marks
        .first()
        .ok_or_else(|| Error::Record {
            record: series.record_id.clone(),
            msg: "no rhythm marks".into(),
        })?
        .sample_time;
    let lead = series.beat_times.partition_point(|&b| b < first_mark);
    let trimmed;
    let series_ref = if lead > 0 {
        trimmed = BeatSeries {
            beat_times: series.beat_times[lead..].to_vec(),
            ..series.clone()
        };
        &trimmed
    } else {
        series
    };
    let intervals = extract_rr(series_ref, gate)?;
    let episodes = segment_episodes(&series.record_id, &intervals);
    let windowed = window_episodes(&episodes, cfg);
    Ok(RecordWindows {
        record_id: series.record_id.clone(),
        windows: windowed.windows,
        episodes: episodes.len(),
        intervals: intervals.len(),
        invalid_intervals: intervals.iter().filter(|i| !i.valid).count(),
        leading_beats_dropped: lead,
        dropped_out_of_bound: windowed.dropped_out_of_bound,
    })
}

/// Writes the windows manifest:
/// `record_id,window_index,measure,M_seq,class_label,values` with values
/// joined by `;`.
pub fn write_windows_manifest<W: Write>(windows: &[IntervalWindow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "window_index", "measure", "M_seq", "class_label", "values"])
        .map_err(csv_write)?;
    for win in windows {
        let values = win.values.iter().map(i32::to_string).collect::<Vec<_>>().join(";");
        w.write_record([
            win.record_id.as_str(),
            &win.window_index.to_string(),
            &win.measure.to_string(),
            &win.values.len().to_string(),
            win.class_label.as_str(),
            &values,
        ])
        .map_err(csv_write)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_windows_manifest<R: BufRead>(input: R) -> Result<Vec<IntervalWindow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv { line, msg: e.to_string() })?;
        let bad = |msg: &str| Error::Csv { line, msg: msg.to_string() };
        if rec.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let mseq: usize = rec[3].parse().map_err(|_| bad("bad M_seq"))?;
        let values = rec[5]
            .split(';')
            .map(|v| v.parse::<i32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad value"))?;
        if values.len() != mseq {
            return Err(bad("value count differs from M_seq"));
        }
        out.push(IntervalWindow {
            record_id: rec[0].to_string(),
            window_index: rec[1].parse().map_err(|_| bad("bad window_index"))?,
            measure: rec[2].parse()?,
            class_label: rec[4].parse()?,
            values,
        });
    }
    Ok(out)
}

fn csv_write(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
