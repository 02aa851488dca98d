//! Per-patient cross-validation, few-shot subfolds, and classification metrics.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{fewshot_k, FitScope};
use crate::dataset::{record_windows, IntervalWindow, Label, Measure, RecordWindows, RrGate, WindowConfig};
use crate::encoders::{encode_counting, fit_scheme_params, EncodingScheme, SchemeKind};
use crate::error::{Error, Result};
use crate::knn::{classify_row, sweep_k};
use crate::ncd::{distance_matrix, Compressor, DistanceMatrix, EncodedSet};
use crate::par;
use crate::wfdb::BeatSeries;

pub const FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_index: usize,
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    pub seed: u64,
}

/// Shuffles records with a seeded RNG and cuts them into five test groups
/// whose sizes differ by at most one.
pub fn make_fivefold(record_ids: &[String], seed: u64) -> Result<Vec<FoldSpec>> {
    let mut ids: Vec<String> = record_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < FOLDS {
        return Err(Error::TooFewRecords {
            needed: FOLDS,
            found: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let base = ids.len() / FOLDS;
    let extra = ids.len() % FOLDS;
    let mut start = 0;
    let mut folds = Vec::with_capacity(FOLDS);
    for f in 0..FOLDS {
        let size = base + usize::from(f < extra);
        let mut test: Vec<String> = ids[start..start + size].to_vec();
        let mut train: Vec<String> = ids[..start].iter().chain(&ids[start + size..]).cloned().collect();
        test.sort();
        train.sort();
        folds.push(FoldSpec {
            fold_index: f,
            train_records: train,
            test_records: test,
            seed,
        });
        start += size;
    }
    Ok(folds)
}

/// Confusion counts with AF as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub macro_f1: f64,
    pub f1_af: f64,
    pub f1_non_af: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 of one class from its true positives, false positives and false
/// negatives; zero when the class is neither present nor predicted.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

impl ClassMetrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let f1_af = f1(c.tp, c.fp, c.fn_);
        let f1_non_af = f1(c.tn, c.fn_, c.fp);
        Self {
            macro_f1: (f1_af + f1_non_af) / 2.0,
            f1_af,
            f1_non_af,
            sensitivity: ratio(c.tp, c.tp + c.fn_),
            specificity: ratio(c.tn, c.tn + c.fp),
            accuracy: ratio(c.tp + c.tn, c.total()),
            confusion: c,
        }
    }
}

pub fn compute_metrics(truth: &[Label], predicted: &[Label]) -> Result<ClassMetrics> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("label lists"));
    }
    let mut c = Confusion::default();
    for (t, p) in truth.iter().zip(predicted) {
        match (t, p) {
            (Label::Af, Label::Af) => c.tp += 1,
            (Label::NonAf, Label::Af) => c.fp += 1,
            (Label::Af, Label::NonAf) => c.fn_ += 1,
            (Label::NonAf, Label::NonAf) => c.tn += 1,
        }
    }
    Ok(ClassMetrics::from_confusion(c))
}

/// Settings shared by cross-validation and few-shot runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub measure: Measure,
    pub mseq: usize,
    pub scheme: SchemeKind,
    pub seed: u64,
    pub fit_scope: FitScope,
    pub rr_gate: RrGate,
    pub af_rhythms: Vec<String>,
}

impl ExperimentConfig {
    pub fn new(measure: Measure, mseq: usize, scheme: SchemeKind) -> Self {
        Self {
            measure,
            mseq,
            scheme,
            seed: 0,
            fit_scope: FitScope::Train,
            rr_gate: RrGate::default(),
            af_rhythms: vec!["(AFIB".into()],
        }
    }

    fn window_config(&self, sampling_rate: u32) -> WindowConfig {
        WindowConfig {
            af_rhythms: self.af_rhythms.clone(),
            ..WindowConfig::new(self.mseq, self.measure, sampling_rate)
        }
    }
}

/// Windows every record, in parallel, ordered by record id.
pub fn prepare_windows(series: &[BeatSeries], cfg: &ExperimentConfig) -> Result<BTreeMap<String, RecordWindows>> {
    let results = par::try_map_range(series.len(), |i| {
        let s = &series[i];
        record_windows(s, cfg.rr_gate, &cfg.window_config(s.sampling_rate))
    })?;
    let mut out = BTreeMap::new();
    for rw in results {
        if out.insert(rw.record_id.clone(), rw).is_some() {
            return Err(Error::config("records", "duplicate record id"));
        }
    }
    Ok(out)
}

fn corpus_sampling_rate(series: &[BeatSeries]) -> Result<u32> {
    let fs = series.first().ok_or(Error::EmptyInput("records"))?.sampling_rate;
    if series.iter().any(|s| s.sampling_rate != fs) {
        return Err(Error::config("records", "records have different sampling rates"));
    }
    Ok(fs)
}

/// Train and test windows of one fold, each in (record, window index) order.
struct FoldWindows<'a> {
    train: Vec<&'a IntervalWindow>,
    test: Vec<&'a IntervalWindow>,
}

fn split_fold<'a>(windows: &'a BTreeMap<String, RecordWindows>, fold: &FoldSpec) -> Result<FoldWindows<'a>> {
    let train_set: HashSet<&str> = fold.train_records.iter().map(String::as_str).collect();
    if let Some(r) = fold.test_records.iter().find(|r| train_set.contains(r.as_str())) {
        return Err(Error::config("folds", format!("record {r} is in both train and test")));
    }
    let collect = |ids: &[String]| -> Result<Vec<&'a IntervalWindow>> {
        let mut out = Vec::new();
        for id in ids {
            let rw = windows
                .get(id)
                .ok_or_else(|| Error::config("records", format!("no windows for record {id}")))?;
            out.extend(rw.windows.iter());
        }
        Ok(out)
    };
    let train = collect(&fold.train_records)?;
    let test = collect(&fold.test_records)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training windows"));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("test windows"));
    }
    Ok(FoldWindows { train, test })
}

/// Fits the scheme and encodes a fold. Returns the fitted scheme, the encoded
/// train and test sets, and the number of saturated values.
fn encode_fold(
    fw: &FoldWindows<'_>,
    all: &BTreeMap<String, RecordWindows>,
    cfg: &ExperimentConfig,
    sampling_rate: u32,
) -> Result<(EncodingScheme, EncodedSet, EncodedSet, usize)> {
    let fit_values: Vec<i32> = match cfg.fit_scope {
        FitScope::Train => fw.train.iter().flat_map(|w| w.values.iter().copied()).collect(),
        FitScope::Global => all
            .values()
            .flat_map(|rw| rw.windows.iter().flat_map(|w| w.values.iter().copied()))
            .collect(),
    };
    let scheme = fit_scheme_params(&fit_values, cfg.scheme, sampling_rate)?;
    let encode_set = |ws: &[&IntervalWindow]| -> Result<(EncodedSet, usize)> {
        let encoded = par::try_map_range(ws.len(), |i| encode_counting(&ws[i].values, &scheme))?;
        let saturated = encoded.iter().map(|e| e.saturated).sum();
        let set = EncodedSet {
            ids: ws.iter().map(|w| w.id()).collect(),
            data: encoded.into_iter().map(|e| e.bytes).collect(),
        };
        Ok((set, saturated))
    };
    let (train, sat_train) = encode_set(&fw.train)?;
    let (test, sat_test) = encode_set(&fw.test)?;
    Ok((scheme, train, test, sat_train + sat_test))
}

/// Content key for a cached matrix: every input byte plus the compressor.
fn matrix_key(test: &EncodedSet, train: &EncodedSet, scheme: &str, fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(fingerprint.as_bytes());
    h.update([0]);
    h.update(scheme.as_bytes());
    for set in [test, train] {
        h.update((set.len() as u64).to_le_bytes());
        for (id, d) in set.ids.iter().zip(&set.data) {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
            h.update((d.len() as u64).to_le_bytes());
            h.update(d);
        }
    }
    hex::encode(h.finalize())
}

/// Builds a matrix, or loads it from `cache_dir` when an identical one exists.
pub fn cached_matrix<C: Compressor + ?Sized>(
    test: &EncodedSet,
    train: &EncodedSet,
    scheme: &str,
    compressor: &C,
    cache_dir: Option<&Path>,
) -> Result<DistanceMatrix> {
    let Some(dir) = cache_dir else {
        return distance_matrix(test, train, scheme, compressor);
    };
    let path = dir.join(format!("{}.ncdm", &matrix_key(test, train, scheme, &compressor.fingerprint())[..32]));
    if path.exists() {
        match DistanceMatrix::load(&path) {
            Ok(m) if m.test_ids == test.ids && m.train_ids == train.ids => {
                log::info!("matrix cache hit {}", path.display());
                return Ok(m);
            }
            Ok(_) => log::warn!("matrix cache entry {} has different ids; recomputing", path.display()),
            Err(e) => log::warn!("unreadable matrix cache entry {}: {e}; recomputing", path.display()),
        }
    }
    let m = distance_matrix(test, train, scheme, compressor)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("ncdm.tmp");
    m.save(&tmp)?;
    std::fs::rename(&tmp, &path)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub k: usize,
    pub test_ids: Vec<String>,
    pub truth: Vec<Label>,
    pub predicted: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: FoldSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub n_train_af: usize,
    pub n_test_af: usize,
    pub scheme: EncodingScheme,
    pub saturated_values: usize,
    /// Aligned with the report's `k_values`.
    pub metrics: Vec<ClassMetrics>,
    pub clamped_k: Vec<(usize, usize)>,
    pub predictions: Vec<Predictions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KAggregate {
    pub k: usize,
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub best_fold_sensitivity: f64,
    pub best_fold_specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub k_values: Vec<usize>,
    /// k values whose per-window predictions are kept in the report.
    pub keep_predictions_for: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub config: CrossvalConfig,
    pub fingerprint: String,
    pub records: Vec<String>,
    pub k_values: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    /// Mean over successful folds, aligned with `k_values`.
    pub aggregate: Vec<KAggregate>,
    /// Highest mean macro-F1; the smallest k wins ties.
    pub best: Option<KAggregate>,
    pub complete: bool,
}

impl CrossvalReport {
    pub fn aggregate_for(&self, k: usize) -> Option<&KAggregate> {
        self.aggregate.iter().find(|a| a.k == k)
    }
}

fn aggregate(k_values: &[usize], folds: &[FoldResult]) -> Vec<KAggregate> {
    if folds.is_empty() {
        return Vec::new();
    }
    let n = folds.len() as f64;
    k_values
        .iter()
        .enumerate()
        .map(|(q, &k)| {
            let mean = |f: fn(&ClassMetrics) -> f64| folds.iter().map(|r| f(&r.metrics[q])).sum::<f64>() / n;
            let best = folds
                .iter()
                .map(|r| &r.metrics[q])
                .max_by(|a, b| a.macro_f1.total_cmp(&b.macro_f1))
                .expect("non-empty");
            KAggregate {
                k,
                macro_f1: mean(|m| m.macro_f1),
                sensitivity: mean(|m| m.sensitivity),
                specificity: mean(|m| m.specificity),
                accuracy: mean(|m| m.accuracy),
                // reported for the split with the highest macro-F1
                best_fold_sensitivity: best.sensitivity,
                best_fold_specificity: best.specificity,
            }
        })
        .collect()
}

fn best_of(agg: &[KAggregate]) -> Option<KAggregate> {
    agg.iter()
        .copied()
        .reduce(|best, a| {
            if a.macro_f1 > best.macro_f1 || (a.macro_f1 == best.macro_f1 && a.k < best.k) {
                a
            } else {
                best
            }
        })
}

fn run_fold<C: Compressor + ?Sized>(
    windows: &BTreeMap<String, RecordWindows>,
    fold: &FoldSpec,
    cfg: &CrossvalConfig,
    sampling_rate: u32,
    compressor: &C,
    cache_dir: Option<&Path>,
) -> Result<FoldResult> {
    let fw = split_fold(windows, fold)?;
    let (scheme, train, test, saturated) = encode_fold(&fw, windows, &cfg.experiment, sampling_rate)?;
    let matrix = cached_matrix(&test, &train, scheme.kind.name(), compressor, cache_dir)?;
    let train_labels: Vec<Label> = fw.train.iter().map(|w| w.class_label).collect();
    let truth: Vec<Label> = fw.test.iter().map(|w| w.class_label).collect();
    let sweep = sweep_k(&matrix, &train_labels, &cfg.k_values)?;
    let metrics = sweep
        .predictions
        .iter()
        .map(|p| compute_metrics(&truth, p))
        .collect::<Result<Vec<_>>>()?;
    let predictions = cfg
        .keep_predictions_for
        .iter()
        .filter_map(|&k| {
            sweep.for_k(k).map(|p| Predictions {
                k,
                test_ids: test.ids.clone(),
                truth: truth.clone(),
                predicted: p.to_vec(),
            })
        })
        .collect();
    Ok(FoldResult {
        fold: fold.clone(),
        n_train: fw.train.len(),
        n_test: fw.test.len(),
        n_train_af: train_labels.iter().filter(|&&l| l == Label::Af).count(),
        n_test_af: truth.iter().filter(|&&l| l == Label::Af).count(),
        scheme,
        saturated_values: saturated,
        metrics,
        clamped_k: sweep.clamped,
        predictions,
    })
}

/// Runs one explicit train/test split, e.g. a smoke run on three records.
pub fn run_single_fold<C: Compressor + ?Sized>(
    series: &[BeatSeries],
    fold: &FoldSpec,
    cfg: &CrossvalConfig,
    compressor: &C,
    cache_dir: Option<&Path>,
) -> Result<FoldResult> {
    if cfg.k_values.is_empty() {
        return Err(Error::config("k", "no k values given"));
    }
    let sampling_rate = corpus_sampling_rate(series)?;
    let windows = prepare_windows(series, &cfg.experiment)?;
    run_fold(&windows, fold, cfg, sampling_rate, compressor, cache_dir)
}

/// Fivefold per-patient cross-validation. A failing fold is recorded in
/// `failures` and the report is marked incomplete; the other folds still run.
pub fn run_crossval<C: Compressor + ?Sized>(
    series: &[BeatSeries],
    cfg: &CrossvalConfig,
    compressor: &C,
    cache_dir: Option<&Path>,
) -> Result<CrossvalReport> {
    if cfg.k_values.is_empty() {
        return Err(Error::config("k", "no k values given"));
    }
    let sampling_rate = corpus_sampling_rate(series)?;
    let windows = prepare_windows(series, &cfg.experiment)?;
    let records: Vec<String> = windows.keys().cloned().collect();
    let folds = make_fivefold(&records, cfg.experiment.seed)?;

    let mut results = Vec::new();
    let mut failures = Vec::new();
    // Folds run one after another; each matrix already saturates the pool and
    // holding several at once would multiply peak memory.
    for fold in &folds {
        match run_fold(&windows, fold, cfg, sampling_rate, compressor, cache_dir) {
            Ok(r) => {
                log::info!(
                    "fold {}: {} train / {} test windows",
                    fold.fold_index,
                    r.n_train,
                    r.n_test
                );
                results.push(r);
            }
            Err(e) => {
                log::error!("fold {} failed: {e}", fold.fold_index);
                failures.push(FoldFailure {
                    fold_index: fold.fold_index,
                    error: e.to_string(),
                });
            }
        }
    }
    let aggregate = aggregate(&cfg.k_values, &results);
    Ok(CrossvalReport {
        config: cfg.clone(),
        fingerprint: compressor.fingerprint(),
        records,
        k_values: cfg.k_values.clone(),
        best: best_of(&aggregate),
        aggregate,
        complete: failures.is_empty(),
        folds: results,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub fold: usize,
    pub shots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubfoldScore {
    pub subfold_id: usize,
    pub n: usize,
    pub k: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Every test window received the same prediction.
    pub faulty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub n: usize,
    pub k: usize,
    pub subfolds: usize,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub faulty: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub config: FewShotConfig,
    pub fingerprint: String,
    pub fold: FoldSpec,
    pub scheme: EncodingScheme,
    pub n_test: usize,
    pub n_train_af: usize,
    pub n_train_non_af: usize,
    pub ladder: Vec<ShotSummary>,
    pub subfolds: Vec<SubfoldScore>,
}

/// Disjoint class-balanced subfolds: `n` AF and `n` non-AF train indices each.
pub fn make_subfolds(train_labels: &[Label], n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::config("shots", "n must be positive"));
    }
    let mut af: Vec<usize> = (0..train_labels.len()).filter(|&i| train_labels[i] == Label::Af).collect();
    let mut non: Vec<usize> = (0..train_labels.len()).filter(|&i| train_labels[i] == Label::NonAf).collect();
    let minority = af.len().min(non.len());
    if n > minority {
        return Err(Error::ShotsTooLarge { n, max: minority });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    af.shuffle(&mut rng);
    non.shuffle(&mut rng);
    let count = minority / n;
    Ok((0..count)
        .map(|s| {
            let mut cols: Vec<usize> = af[s * n..(s + 1) * n]
                .iter()
                .chain(&non[s * n..(s + 1) * n])
                .copied()
                .collect();
            cols.sort_unstable();
            cols
        })
        .collect())
}

/// Scores one subfold against the full test set with a column subset of
/// the fold's matrix.
fn score_subfold(
    matrix: &DistanceMatrix,
    cols: &[usize],
    train_labels: &[Label],
    truth: &[Label],
    k: usize,
) -> Result<(ClassMetrics, bool)> {
    let labels: Vec<Label> = cols.iter().map(|&c| train_labels[c]).collect();
    let mut row = vec![0f32; cols.len()];
    let mut predicted = Vec::with_capacity(matrix.rows());
    for i in 0..matrix.rows() {
        let full = matrix.row(i);
        for (dst, &c) in row.iter_mut().zip(cols) {
            *dst = full[c];
        }
        predicted.push(classify_row(&row, &labels, k)?.predicted);
    }
    let faulty = predicted.iter().all(|&p| p == predicted[0]);
    Ok((compute_metrics(truth, &predicted)?, faulty))
}

/// Few-shot evaluation on one fold: for each shot count `n`, every subfold of
/// `n` windows per class classifies the whole test set with
/// `k = fewshot_k(n)`.
pub fn run_fewshot<C: Compressor + ?Sized>(
    series: &[BeatSeries],
    cfg: &FewShotConfig,
    compressor: &C,
    cache_dir: Option<&Path>,
) -> Result<FewShotReport> {
    if cfg.shots.is_empty() {
        return Err(Error::config("shots", "no shot counts given"));
    }
    let sampling_rate = corpus_sampling_rate(series)?;
    let windows = prepare_windows(series, &cfg.experiment)?;
    let records: Vec<String> = windows.keys().cloned().collect();
    let folds = make_fivefold(&records, cfg.experiment.seed)?;
    let fold = folds
        .get(cfg.fold)
        .ok_or_else(|| Error::config("fold", format!("fold {} out of range", cfg.fold)))?
        .clone();
    let fw = split_fold(&windows, &fold)?;
    let (scheme, train, test, _) = encode_fold(&fw, &windows, &cfg.experiment, sampling_rate)?;
    let matrix = cached_matrix(&test, &train, scheme.kind.name(), compressor, cache_dir)?;
    let train_labels: Vec<Label> = fw.train.iter().map(|w| w.class_label).collect();
    let truth: Vec<Label> = fw.test.iter().map(|w| w.class_label).collect();

    // validate every n before doing any work
    let plans = cfg
        .shots
        .iter()
        .map(|&n| make_subfolds(&train_labels, n, cfg.experiment.seed).map(|s| (n, s)))
        .collect::<Result<Vec<_>>>()?;

    let mut subfolds = Vec::new();
    let mut ladder = Vec::new();
    for (n, plan) in plans {
        let k = fewshot_k(n);
        let scored = par::try_map_range(plan.len(), |s| score_subfold(&matrix, &plan[s], &train_labels, &truth, k))?;
        let count = scored.len();
        let mut summary = ShotSummary {
            n,
            k,
            subfolds: count,
            mean_accuracy: 0.0,
            mean_macro_f1: 0.0,
            faulty: 0,
        };
        for (s, (m, faulty)) in scored.into_iter().enumerate() {
            summary.mean_accuracy += m.accuracy / count as f64;
            summary.mean_macro_f1 += m.macro_f1 / count as f64;
            summary.faulty += usize::from(faulty);
            subfolds.push(SubfoldScore {
                subfold_id: s,
                n,
                k,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                faulty,
            });
        }
        ladder.push(summary);
    }

    Ok(FewShotReport {
        config: cfg.clone(),
        fingerprint: compressor.fingerprint(),
        fold,
        scheme,
        n_test: fw.test.len(),
        n_train_af: train_labels.iter().filter(|&&l| l == Label::Af).count(),
        n_train_non_af: train_labels.iter().filter(|&&l| l == Label::NonAf).count(),
        ladder,
        subfolds,
    })
}

/// Seeded sample of `per_class` windows of each class, non-AF first, each
/// class in window order.
pub fn sample_per_class(windows: &[IntervalWindow], per_class: usize, seed: u64) -> Result<Vec<IntervalWindow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for label in [Label::NonAf, Label::Af] {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].class_label == label).collect();
        if idx.len() < per_class {
            return Err(Error::config(
                "per_class",
                format!("only {} {} windows available, {per_class} requested", idx.len(), label.as_str()),
            ));
        }
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| windows[i].clone()));
    }
    Ok(out)
}

/// A small test × train matrix between two records, with per-block means.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMatrix {
    pub matrix: DistanceMatrix,
    pub test_labels: Vec<Label>,
    pub train_labels: Vec<Label>,
    /// `block_means[test class][train class]`, index 0 = non-AF, 1 = AF.
    pub block_means: [[f64; 2]; 2],
}

impl SubsetMatrix {
    /// Within-class mean below both cross-class means of its row and column.
    pub fn separates(&self, class: Label) -> bool {
        let c = class as usize;
        let o = 1 - c;
        self.block_means[c][c] < self.block_means[c][o] && self.block_means[c][c] < self.block_means[o][c]
    }
}

/// Samples `per_class` windows of each class from `train` and from `test`
/// and builds their distance matrix. The scheme is fitted on the sampled
/// train windows.
pub fn subset_matrix<C: Compressor + ?Sized>(
    train: &BeatSeries,
    test: &BeatSeries,
    cfg: &ExperimentConfig,
    per_class: usize,
    compressor: &C,
) -> Result<SubsetMatrix> {
    if per_class == 0 {
        return Err(Error::config("per_class", "must be positive"));
    }
    if train.record_id == test.record_id {
        return Err(Error::config("records", "train and test records must differ"));
    }
    let sampling_rate = corpus_sampling_rate(&[train.clone(), test.clone()])?;
    let windows = prepare_windows(&[train.clone(), test.clone()], cfg)?;
    let tr = sample_per_class(&windows[&train.record_id].windows, per_class, cfg.seed)?;
    let te = sample_per_class(&windows[&test.record_id].windows, per_class, cfg.seed.wrapping_add(1))?;
    let values: Vec<i32> = tr.iter().flat_map(|w| w.values.iter().copied()).collect();
    let scheme = fit_scheme_params(&values, cfg.scheme, sampling_rate)?;
    let encode_set = |ws: &[IntervalWindow]| -> Result<EncodedSet> {
        let data = ws
            .iter()
            .map(|w| encode_counting(&w.values, &scheme).map(|e| e.bytes))
            .collect::<Result<Vec<_>>>()?;
        EncodedSet::new(ws.iter().map(|w| w.id()).collect(), data)
    };
    let matrix = distance_matrix(&encode_set(&te)?, &encode_set(&tr)?, scheme.kind.name(), compressor)?;
    let test_labels: Vec<Label> = te.iter().map(|w| w.class_label).collect();
    let train_labels: Vec<Label> = tr.iter().map(|w| w.class_label).collect();
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for (i, &ti) in test_labels.iter().enumerate() {
        for (j, &tj) in train_labels.iter().enumerate() {
            sums[ti as usize][tj as usize] += f64::from(matrix.get(i, j));
            counts[ti as usize][tj as usize] += 1;
        }
    }
    let mut block_means = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            block_means[a][b] = sums[a][b] / counts[a][b] as f64;
        }
    }
    Ok(SubsetMatrix {
        matrix,
        test_labels,
        train_labels,
        block_means,
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Macro-F1 per k and split: `k,split_1..split_N,avg`.
pub fn write_f1_table<W: Write>(report: &CrossvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend(report.folds.iter().map(|f| format!("split_{}", f.fold.fold_index + 1)));
    header.push("avg".into());
    w.write_record(&header).map_err(csv_io)?;
    for (q, agg) in report.aggregate.iter().enumerate() {
        let mut rec = vec![agg.k.to_string()];
        rec.extend(report.folds.iter().map(|f| format!("{:.3}", f.metrics[q].macro_f1)));
        rec.push(format!("{:.3}", agg.macro_f1));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Sensitivity/specificity per k: averages and the best split's values.
pub fn write_sens_spec_table<W: Write>(report: &CrossvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "avg_macro_f1", "avg_sens", "avg_spec", "best_sens", "best_spec"])
        .map_err(csv_io)?;
    for a in &report.aggregate {
        w.write_record([
            a.k.to_string(),
            format!("{:.4}", a.macro_f1),
            format!("{:.4}", a.sensitivity),
            format!("{:.4}", a.specificity),
            format!("{:.4}", a.best_fold_sensitivity),
            format!("{:.4}", a.best_fold_specificity),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// `test_id,true_label,predicted_label,k`
pub fn write_predictions<W: Write>(predictions: &[&Predictions], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["test_id", "true_label", "predicted_label", "k"]).map_err(csv_io)?;
    for p in predictions {
        let k = p.k.to_string();
        for ((id, t), pr) in p.test_ids.iter().zip(&p.truth).zip(&p.predicted) {
            w.write_record([id.as_str(), t.as_str(), pr.as_str(), &k]).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `subfold_id,n,k,accuracy,macro_f1,faulty_flag`
pub fn write_subfolds<W: Write>(report: &FewShotReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subfold_id", "n", "k", "accuracy", "macro_f1", "faulty_flag"])
        .map_err(csv_io)?;
    for s in &report.subfolds {
        w.write_record([
            s.subfold_id.to_string(),
            s.n.to_string(),
            s.k.to_string(),
            format!("{:.6}", s.accuracy),
            format!("{:.6}", s.macro_f1),
            u8::from(s.faulty).to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
