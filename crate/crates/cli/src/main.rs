//! `afib-ncd` command-line driver.
//!
//! Every command resolves one [`RunConfig`] (defaults, then `--config`, then
//! flags), writes its outputs plus a `manifest.json` into the output
//! directory, and exits with 0 on success, 2 on configuration errors, 3 on
//! dataset loading errors and 4 on compute errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afib_ncd::config::{parse_k_values, FitScope, RunConfig};
use afib_ncd::corpus::{load_dataset_dir, sha256_file, verify_checksums, LoadReport};
use afib_ncd::dataset::{write_windows_manifest, Label, Measure};
use afib_ncd::eval::{
    prepare_windows, run_crossval, run_fewshot, subset_matrix, write_f1_table, write_predictions,
    write_sens_spec_table, write_subfolds, CrossvalConfig, ExperimentConfig, FewShotConfig,
};
use afib_ncd::synthetic::{synthetic_corpus, SyntheticSpec};
use afib_ncd::{BeatSeries, Compressor, GzipCompressor, SchemeKind};
use anyhow::{anyhow, Context};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "afib-ncd", version, about = "AF detection with gzip compression distances and kNN")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with `.atr`/`.qrs`(/`.hea`) record files or `.csv` records.
    #[arg(long, env = "AFDB_DIR", global = true)]
    dataset_dir: Option<PathBuf>,
    /// Comma-separated record ids to use (default: every record found).
    #[arg(long, value_delimiter = ',', global = true)]
    records: Option<Vec<String>>,
    #[arg(long, short = 'o', global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `sha256sum`-style list verified against the dataset before loading.
    #[arg(long, global = true)]
    checksums: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// `rr` or `drr`.
    #[arg(long)]
    measure: Option<Measure>,
    /// Window length in beats.
    #[arg(long)]
    mseq: Option<usize>,
    /// Byte encoding, e.g. i16_raw, u8_norm, f32_sec.
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// Fit scheme parameters on `train` windows only or on `global` data.
    #[arg(long)]
    fit_scope: Option<FitScope>,
    /// gzip level, 0-9.
    #[arg(long)]
    level: Option<u32>,
    /// Directory for reusable distance matrices.
    #[arg(long)]
    matrix_cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset, print a summary and write its windows.
    Ingest {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Fivefold per-patient cross-validation over a list of k values.
    Crossval {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// k values: `1,5,51` and/or `scan:lo:hi:step`.
        #[arg(long)]
        k: Option<String>,
        /// k values whose per-window predictions are written (default: all,
        /// when at most ten k values are requested).
        #[arg(long)]
        predictions_k: Option<String>,
    },
    /// Few-shot subfolds on one cross-validation fold.
    Fewshot {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Fold index, 0-4 (0 is the first split).
        #[arg(long)]
        fold: Option<usize>,
        /// Shots per class, comma-separated.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
    },
    /// Distance matrix between windows sampled from two records.
    Matrix {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        train_record: String,
        #[arg(long)]
        test_record: String,
        /// Windows sampled per class from each record.
        #[arg(long, default_value_t = 5)]
        per_class: usize,
    },
    /// Write a synthetic CSV dataset with sinus and AF episodes.
    Synth {
        /// Number of records.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Beats per record.
        #[arg(long, default_value_t = 4000)]
        beats: usize,
        #[arg(long, default_value_t = 250)]
        sampling_rate: u32,
    },
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Config = 2,
    Ingest = 3,
    Compute = 4,
}

struct Failure {
    stage: Stage,
    error: anyhow::Error,
}

trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            error: e.into(),
        })
    }
}

/// Compute-stage result; errors caused by the requested settings count as
/// configuration errors.
fn compute<T>(r: afib_ncd::Result<T>) -> Result<T, Failure> {
    use afib_ncd::Error as E;
    r.map_err(|e| {
        let stage = match e {
            E::Config { .. } | E::ShotsTooLarge { .. } | E::TooFewRecords { .. } => Stage::Config,
            _ => Stage::Compute,
        };
        Failure {
            stage,
            error: e.into(),
        }
    })
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        stage: Stage::Config,
        error: anyhow!(msg.into()),
    }
}

fn resolve(global: &GlobalArgs, exp: &ExperimentArgs, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, Failure> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .at(Stage::Config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .at(Stage::Config)?
        }
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value.clone() {
                cfg.$field = v;
            }
        };
    }
    if global.dataset_dir.is_some() {
        cfg.dataset_dir = global.dataset_dir.clone();
    }
    if global.records.is_some() {
        cfg.records = global.records.clone();
    }
    if global.threads.is_some() {
        cfg.threads = global.threads;
    }
    if global.checksums.is_some() {
        cfg.checksums = global.checksums.clone();
    }
    if exp.matrix_cache.is_some() {
        cfg.matrix_cache = exp.matrix_cache.clone();
    }
    set!(output_dir, global.output_dir);
    set!(seed, global.seed);
    set!(measure, exp.measure);
    set!(mseq, exp.mseq);
    set!(scheme, exp.scheme);
    set!(fit_scope, exp.fit_scope);
    set!(compression_level, exp.level);
    apply(&mut cfg);
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

fn experiment(cfg: &RunConfig) -> ExperimentConfig {
    ExperimentConfig {
        measure: cfg.measure,
        mseq: cfg.mseq,
        scheme: cfg.scheme,
        seed: cfg.seed,
        fit_scope: cfg.fit_scope,
        rr_gate: cfg.rr_gate,
        af_rhythms: cfg.af_rhythms.clone(),
    }
}

#[derive(Debug, Serialize)]
struct DatasetInfo {
    dir: PathBuf,
    records: Vec<String>,
    /// File name → SHA-256 of every file that was read.
    files: BTreeMap<String, String>,
    failed: Vec<(String, String)>,
    missing: Vec<String>,
}

fn load(cfg: &RunConfig, only: Option<&[String]>) -> Result<(Vec<BeatSeries>, LoadReport, DatasetInfo), Failure> {
    let dir = cfg
        .dataset_dir
        .clone()
        .ok_or_else(|| config_error("dataset_dir: pass --dataset-dir or set AFDB_DIR"))?;
    if let Some(list) = &cfg.checksums {
        let n = verify_checksums(&dir, list).at(Stage::Ingest)?;
        log::info!("verified {n} checksums");
    }
    let only = only.or(cfg.records.as_deref());
    let (series, report) = load_dataset_dir(&dir, only, None).at(Stage::Ingest)?;
    for (id, e) in &report.failed {
        eprintln!("record {id}: {e}");
    }
    for id in &report.missing {
        eprintln!("record {id}: not found in {}", dir.display());
    }
    let mut files = BTreeMap::new();
    for r in &report.loaded {
        for f in r.source.files() {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            files.insert(name, sha256_file(f).at(Stage::Ingest)?);
        }
    }
    let info = DatasetInfo {
        dir,
        records: report.loaded.iter().map(|r| r.record_id.clone()).collect(),
        files,
        failed: report.failed.clone(),
        missing: report.missing.clone(),
    };
    Ok((series, report, info))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    /// Pass back with `--config` to rerun.
    config: &'a RunConfig,
    compressor: String,
    parallel: bool,
    threads: usize,
    dataset: Option<&'a DatasetInfo>,
    outputs: Vec<&'static str>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    details: serde_json::Value,
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn create(&self) -> Result<(), Failure> {
        fs::create_dir_all(self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))
            .at(Stage::Config)
    }

    fn file(&self, name: &str) -> Result<BufWriter<fs::File>, Failure> {
        let path = self.dir.join(name);
        fs::File::create(&path)
            .map(BufWriter::new)
            .with_context(|| format!("creating {}", path.display()))
            .at(Stage::Compute)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        serde_json::to_writer_pretty(self.file(name)?, value).at(Stage::Compute)
    }
}

fn manifest<'a>(
    command: &'static str,
    cfg: &'a RunConfig,
    compressor: &GzipCompressor,
    dataset: Option<&'a DatasetInfo>,
    outputs: Vec<&'static str>,
    details: serde_json::Value,
) -> Manifest<'a> {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        compressor: compressor.fingerprint(),
        parallel: afib_ncd::par::enabled(),
        threads: rayon::current_num_threads(),
        dataset,
        outputs,
        details,
    }
}

fn compressor(cfg: &RunConfig) -> Result<GzipCompressor, Failure> {
    GzipCompressor::new(cfg.compression_level).at(Stage::Config)
}

fn cmd_ingest(cfg: &RunConfig) -> Result<(), Failure> {
    let (series, report, info) = load(cfg, None)?;
    let windows = compute(prepare_windows(&series, &experiment(cfg)))?;
    let out = Output { dir: &cfg.output_dir };
    out.create()?;

    let mut rhythms: BTreeMap<String, usize> = BTreeMap::new();
    println!("record      beats  episodes  windows(N/AF)  invalid_rr  dropped");
    let (mut n_total, mut af_total, mut episodes) = (0, 0, 0);
    for (r, s) in report.loaded.iter().zip(&series) {
        for (k, v) in &r.rhythms {
            *rhythms.entry(k.clone()).or_default() += v;
        }
        let rw = &windows[&s.record_id];
        let af = rw.windows.iter().filter(|w| w.class_label == Label::Af).count();
        let n = rw.windows.len() - af;
        n_total += n;
        af_total += af;
        episodes += rw.episodes;
        println!(
            "{:<10} {:>6} {:>9} {:>8}/{:<6} {:>10} {:>8}",
            r.record_id,
            r.beats,
            rw.episodes,
            n,
            af,
            rw.invalid_intervals,
            rw.dropped_out_of_bound
        );
    }
    println!(
        "{} records, {} beats, {episodes} episodes, {} windows ({n_total} N / {af_total} AF)",
        report.loaded.len(),
        report.total_beats(),
        n_total + af_total
    );
    let dist: Vec<String> = rhythms.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    println!("rhythm marks: {}", dist.join(" "));

    let all: Vec<_> = windows.values().flat_map(|rw| rw.windows.iter().cloned()).collect();
    compute(write_windows_manifest(&all, out.file("windows.csv")?))?;
    let per_record: BTreeMap<&String, serde_json::Value> = windows
        .iter()
        .map(|(id, rw)| {
            (
                id,
                serde_json::json!({
                    "windows": rw.windows.len(),
                    "af_windows": rw.windows.iter().filter(|w| w.class_label == Label::Af).count(),
                    "episodes": rw.episodes,
                    "intervals": rw.intervals,
                    "invalid_intervals": rw.invalid_intervals,
                    "leading_beats_dropped": rw.leading_beats_dropped,
                    "dropped_out_of_bound": rw.dropped_out_of_bound,
                }),
            )
        })
        .collect();
    out.json(
        "ingest_summary.json",
        &serde_json::json!({ "load": report, "windows": per_record, "rhythm_marks": rhythms }),
    )?;
    let gz = compressor(cfg)?;
    out.json(
        "manifest.json",
        &manifest("ingest", cfg, &gz, Some(&info), vec!["windows.csv", "ingest_summary.json"], serde_json::Value::Null),
    )
}

fn cmd_crossval(cfg: &RunConfig, predictions_k: Option<&str>) -> Result<(), Failure> {
    let k_values = parse_k_values(&cfg.k).at(Stage::Config)?;
    let keep = match predictions_k {
        Some(spec) => parse_k_values(spec).at(Stage::Config)?,
        None if k_values.len() <= 10 => k_values.clone(),
        None => Vec::new(),
    };
    let gz = compressor(cfg)?;
    let (series, _, info) = load(cfg, None)?;
    let out = Output { dir: &cfg.output_dir };
    out.create()?;
    let cv = CrossvalConfig {
        experiment: experiment(cfg),
        k_values,
        keep_predictions_for: keep,
    };
    let report = compute(run_crossval(&series, &cv, &gz, cfg.matrix_cache.as_deref()))?;

    compute(write_f1_table(&report, out.file("f1_table.csv")?))?;
    compute(write_sens_spec_table(&report, out.file("sens_spec.csv")?))?;
    let preds: Vec<_> = report.folds.iter().flat_map(|f| &f.predictions).collect();
    compute(write_predictions(&preds, out.file("predictions.csv")?))?;
    out.json("report.json", &report)?;
    let folds: Vec<_> = report.folds.iter().map(|f| (&f.fold, &f.scheme)).collect();
    out.json(
        "manifest.json",
        &manifest(
            "crossval",
            cfg,
            &gz,
            Some(&info),
            vec!["f1_table.csv", "sens_spec.csv", "predictions.csv", "report.json"],
            serde_json::json!({ "folds": folds, "predictions_k": cv.keep_predictions_for }),
        ),
    )?;

    if report.aggregate.len() <= 20 {
        for a in &report.aggregate {
            println!(
                "k={:<5} macro-F1 {:.3}  sens {:.3}  spec {:.3}",
                a.k, a.macro_f1, a.sensitivity, a.specificity
            );
        }
    }
    if let Some(b) = report.best {
        println!(
            "best k={} macro-F1 {:.3} sens {:.3} spec {:.3} (best split sens {:.3} spec {:.3})",
            b.k, b.macro_f1, b.sensitivity, b.specificity, b.best_fold_sensitivity, b.best_fold_specificity
        );
    }
    if !report.complete {
        return Err(Failure {
            stage: Stage::Compute,
            error: anyhow!("{} fold(s) failed; report is incomplete", report.failures.len()),
        });
    }
    Ok(())
}

fn cmd_fewshot(cfg: &RunConfig) -> Result<(), Failure> {
    let gz = compressor(cfg)?;
    let (series, _, info) = load(cfg, None)?;
    let out = Output { dir: &cfg.output_dir };
    out.create()?;
    let fs_cfg = FewShotConfig {
        experiment: experiment(cfg),
        fold: cfg.fold,
        shots: cfg.shots.clone(),
    };
    let report = compute(run_fewshot(&series, &fs_cfg, &gz, cfg.matrix_cache.as_deref()))?;
    compute(write_subfolds(&report, out.file("subfolds.csv")?))?;
    out.json("fewshot.json", &report)?;
    out.json(
        "manifest.json",
        &manifest(
            "fewshot",
            cfg,
            &gz,
            Some(&info),
            vec!["subfolds.csv", "fewshot.json"],
            serde_json::json!({ "fold": report.fold, "scheme": report.scheme }),
        ),
    )?;
    println!(
        "fold {}: {} test windows, train {} AF / {} N",
        cfg.fold, report.n_test, report.n_train_af, report.n_train_non_af
    );
    for s in &report.ladder {
        println!(
            "n={:<5} k={:<3} subfolds {:<5} accuracy {:.3}  macro-F1 {:.3}  faulty {}",
            s.n, s.k, s.subfolds, s.mean_accuracy, s.mean_macro_f1, s.faulty
        );
    }
    Ok(())
}

fn cmd_matrix(cfg: &RunConfig, train: &str, test: &str, per_class: usize) -> Result<(), Failure> {
    let gz = compressor(cfg)?;
    let wanted = [train.to_string(), test.to_string()];
    let (series, report, info) = load(cfg, Some(&wanted))?;
    if !report.missing.is_empty() || series.len() != 2 {
        return Err(Failure {
            stage: Stage::Ingest,
            error: anyhow!("both --train-record and --test-record must load"),
        });
    }
    let pick = |id: &str| series.iter().find(|s| s.record_id == id).expect("loaded");
    let sub = compute(subset_matrix(pick(train), pick(test), &experiment(cfg), per_class, &gz))?;
    let out = Output { dir: &cfg.output_dir };
    out.create()?;
    compute(sub.matrix.save(&cfg.output_dir.join("matrix.ncdm")))?;
    compute(sub.matrix.write_csv(out.file("matrix.csv")?))?;
    let blocks = serde_json::json!({
        "order": ["N", "AF"],
        "block_means": sub.block_means,
        "test_labels": sub.test_labels,
        "train_labels": sub.train_labels,
        "separates_n": sub.separates(Label::NonAf),
        "separates_af": sub.separates(Label::Af),
    });
    out.json("blocks.json", &blocks)?;
    out.json(
        "manifest.json",
        &manifest(
            "matrix",
            cfg,
            &gz,
            Some(&info),
            vec!["matrix.ncdm", "matrix.csv", "blocks.json"],
            serde_json::json!({ "train_record": train, "test_record": test, "per_class": per_class }),
        ),
    )?;
    println!("mean NCD, rows = test class, columns = train class");
    println!("        N       AF");
    for (name, row) in ["N ", "AF"].iter().zip(sub.block_means) {
        println!("{name}  {:.4}  {:.4}", row[0], row[1]);
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, count: usize, beats: usize, sampling_rate: u32) -> Result<(), Failure> {
    if count == 0 || beats < 2 || sampling_rate == 0 {
        return Err(config_error("synth: need count >= 1, beats >= 2 and a positive sampling rate"));
    }
    let spec = SyntheticSpec {
        sampling_rate,
        beats,
        ..SyntheticSpec::default()
    };
    let out = Output { dir: &cfg.output_dir };
    out.create()?;
    for s in synthetic_corpus(count, &spec, cfg.seed) {
        let path = cfg.output_dir.join(format!("{}.csv", s.record_id));
        fs::write(&path, s.to_csv())
            .with_context(|| format!("writing {}", path.display()))
            .at(Stage::Compute)?;
    }
    let gz = compressor(cfg)?;
    out.json(
        "manifest.json",
        &manifest(
            "synth",
            cfg,
            &gz,
            None,
            vec![],
            serde_json::json!({ "count": count, "beats": beats, "sampling_rate": sampling_rate }),
        ),
    )?;
    println!("wrote {count} records to {}", cfg.output_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let cfg = match &cli.command {
        Command::Ingest { exp } | Command::Matrix { exp, .. } => resolve(g, exp, |_| {})?,
        Command::Crossval { exp, k, .. } => resolve(g, exp, |c| {
            if let Some(k) = k {
                c.k = k.clone();
            }
        })?,
        Command::Fewshot { exp, fold, shots } => resolve(g, exp, |c| {
            if let Some(f) = fold {
                c.fold = *f;
            }
            if let Some(s) = shots {
                c.shots = s.clone();
            }
        })?,
        Command::Synth { .. } => resolve(g, &ExperimentArgs::default(), |_| {})?,
    };
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")
            .at(Stage::Config)?;
    }
    match &cli.command {
        Command::Ingest { .. } => cmd_ingest(&cfg),
        Command::Crossval { predictions_k, .. } => cmd_crossval(&cfg, predictions_k.as_deref()),
        Command::Fewshot { .. } => cmd_fewshot(&cfg),
        Command::Matrix {
            train_record,
            test_record,
            per_class,
            ..
        } => cmd_matrix(&cfg, train_record, test_record, *per_class),
        Command::Synth {
            count,
            beats,
            sampling_rate,
        } => cmd_synth(&cfg, *count, *beats, *sampling_rate),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.stage as u8)
        }
    }
}
