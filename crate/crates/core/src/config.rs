//! Run configuration shared by the library entry points and the CLI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{Measure, RrGate};
use crate::encoders::SchemeKind;
use crate::error::{Error, Result};

/// Where scheme parameters are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    /// Training windows of the current fold only.
    #[default]
    Train,
    /// Every loaded window, train and test.
    Global,
}

impl std::str::FromStr for FitScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(FitScope::Train),
            "global" => Ok(FitScope::Global),
            _ => Err(Error::config("fit_scope", format!("unknown scope `{s}` (train or global)"))),
        }
    }
}

/// Parses a k list such as `1,5,51` or `scan:1:9999:2`, or a mix of both.
/// The result keeps first-seen order with duplicates removed.
pub fn parse_k_values(spec: &str) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::config("k", msg);
    let mut out: Vec<usize> = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some(rest) = part.strip_prefix("scan:") {
            let nums: Vec<usize> = rest
                .split(':')
                .map(|x| x.parse().map_err(|_| bad(format!("bad scan `{part}`"))))
                .collect::<Result<_>>()?;
            let [lo, hi, step] = nums[..] else {
                return Err(bad(format!("scan needs lo:hi:step, got `{part}`")));
            };
            if lo == 0 || step == 0 || lo > hi {
                return Err(bad(format!("scan `{part}` needs 1 <= lo <= hi and step >= 1")));
            }
            let mut seen = std::collections::HashSet::with_capacity(out.len());
            seen.extend(out.iter().copied());
            for k in (lo..=hi).step_by(step) {
                if seen.insert(k) {
                    out.push(k);
                }
            }
        } else {
            let k: usize = part.parse().map_err(|_| bad(format!("bad k `{part}`")))?;
            if k == 0 {
                return Err(bad("k must be at least 1".into()));
            }
            if !out.contains(&k) {
                out.push(k);
            }
        }
    }
    if out.is_empty() {
        return Err(bad("no k values".into()));
    }
    Ok(out)
}

/// Neighbor count for `n` shots: the odd integer nearest to `2·√n`, rounding
/// up when two odd integers are equally near.
pub fn fewshot_k(n: usize) -> usize {
    let target = 2.0 * (n as f64).sqrt();
    let mut lower = target.floor() as usize;
    if lower.is_multiple_of(2) {
        lower = lower.saturating_sub(1);
    }
    if lower == 0 {
        return 1;
    }
    let upper = lower + 2;
    if target - (lower as f64) < (upper as f64) - target {
        lower
    } else {
        upper
    }
}

pub const DEFAULT_SHOTS: [usize; 7] = [5, 10, 50, 100, 500, 1000, 2000];

/// Every knob of a run. The CLI's JSON config file deserializes into this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: Option<PathBuf>,
    pub records: Option<Vec<String>>,
    pub measure: Measure,
    pub mseq: usize,
    pub scheme: SchemeKind,
    pub k: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub fit_scope: FitScope,
    pub af_rhythms: Vec<String>,
    pub rr_gate: RrGate,
    pub compression_level: u32,
    pub matrix_cache: Option<PathBuf>,
    pub fold: usize,
    pub shots: Vec<usize>,
    pub checksums: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            records: None,
            measure: Measure::DeltaRr,
            mseq: 64,
            scheme: SchemeKind::I16Raw,
            k: "501".into(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            threads: None,
            fit_scope: FitScope::Train,
            af_rhythms: vec!["(AFIB".into()],
            rr_gate: RrGate::default(),
            compression_level: 9,
            matrix_cache: None,
            fold: 0,
            shots: DEFAULT_SHOTS.to_vec(),
            checksums: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mseq < 2 {
            return Err(Error::config("mseq", "window length must be at least 2"));
        }
        parse_k_values(&self.k)?;
        if self.fold >= 5 {
            return Err(Error::config("fold", "fold index must be 0..=4"));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::config("shots", "shot counts must be positive"));
        }
        if self.rr_gate.min < 1 || self.rr_gate.min > self.rr_gate.max {
            return Err(Error::config("rr_gate", "need 1 <= min <= max"));
        }
        if self.compression_level > 9 {
            return Err(Error::config("compression_level", "must be 0..=9"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        if self.af_rhythms.is_empty() {
            return Err(Error::config("af_rhythms", "at least one AF rhythm label is required"));
        }
        Ok(())
    }
}
