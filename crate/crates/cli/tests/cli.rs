//! Runs the `afib-ncd` binary against a synthetic dataset.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_afib-ncd"));
    c.env_remove("AFDB_DIR").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, count: &str, beats: &str) {
    ok(&run(&["synth", "--count", count, "--beats", beats, "--seed", "3", "-o", dir.to_str().unwrap()]));
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn ingest_single_csv_record() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(data.path(), "1", "800");
    let stdout = ok(&run(&[
        "ingest",
        "--dataset-dir",
        data.path().to_str().unwrap(),
        "-o",
        out.path().to_str().unwrap(),
        "--mseq",
        "32",
    ]));
    assert!(stdout.contains("1 records, 800 beats"), "{stdout}");
    let summary: serde_json::Value = serde_json::from_str(&read(&out.path().join("ingest_summary.json"))).unwrap();
    assert_eq!(summary["load"]["loaded"].as_array().unwrap().len(), 1);
    assert!(read(&out.path().join("windows.csv")).starts_with("record_id,window_index,measure,M_seq,class_label,values"));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["dataset"]["records"], serde_json::json!(["syn00"]));
    assert_eq!(manifest["dataset"]["files"]["syn00.csv"].as_str().unwrap().len(), 64);
}

#[test]
fn empty_dataset_is_an_ingest_error() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = run(&["ingest", "--dataset-dir", data.path().to_str().unwrap(), "-o", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_code_two() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "5", "600");
    let d = data.path().to_str().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    assert_eq!(run(&["crossval", "--dataset-dir", d, "-o", o, "--k", "0"]).status.code(), Some(2));
    assert_eq!(run(&["crossval", "--dataset-dir", d, "-o", o, "--mseq", "1"]).status.code(), Some(2));
    assert_eq!(run(&["crossval", "-o", o]).status.code(), Some(2));
    assert_eq!(
        run(&["fewshot", "--dataset-dir", d, "-o", o, "--mseq", "32", "--shots", "100000"]).status.code(),
        Some(2)
    );
    let stderr = String::from_utf8(run(&["crossval", "--dataset-dir", d, "-o", o, "--k", "x"]).stderr).unwrap();
    assert!(stderr.contains("k"), "{stderr}");
    // clap rejects unknown scheme names itself
    assert!(!run(&["crossval", "--dataset-dir", d, "--scheme", "int16"]).status.success());
}

#[test]
fn crossval_writes_tables_and_reruns_identically() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "5", "1200");
    let d = data.path().to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    let args = |o: &Path| {
        vec![
            "crossval".to_string(),
            "--dataset-dir".into(),
            d.into(),
            "-o".into(),
            o.to_str().unwrap().into(),
            "--measure".into(),
            "drr".into(),
            "--mseq".into(),
            "32".into(),
            "--scheme".into(),
            "i16_raw".into(),
            "--k".into(),
            "1,5".into(),
        ]
    };
    let stdout = ok(&bin().args(args(a.path())).output().unwrap());
    assert!(stdout.contains("best k="), "{stdout}");
    let f1 = read(&a.path().join("f1_table.csv"));
    assert!(f1.starts_with("k,split_1,split_2,split_3,split_4,split_5,avg\n"), "{f1}");
    assert_eq!(f1.lines().count(), 3);
    assert!(read(&a.path().join("sens_spec.csv")).starts_with("k,avg_macro_f1,avg_sens,avg_spec,best_sens,best_spec"));
    assert!(read(&a.path().join("predictions.csv")).starts_with("test_id,true_label,predicted_label,k"));

    // the manifest's config reproduces the run
    let b = tempfile::tempdir().unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&read(&a.path().join("manifest.json"))).unwrap();
    let mut config = manifest["config"].clone();
    config["output_dir"] = serde_json::json!(b.path());
    let cfg_path = b.path().join("config.json");
    std::fs::write(&cfg_path, config.to_string()).unwrap();
    ok(&run(&["crossval", "--config", cfg_path.to_str().unwrap()]));
    for f in ["f1_table.csv", "sens_spec.csv", "predictions.csv", "report.json"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn fewshot_writes_subfold_scores() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "5", "1500");
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&run(&[
        "fewshot",
        "--dataset-dir",
        data.path().to_str().unwrap(),
        "-o",
        out.path().to_str().unwrap(),
        "--mseq",
        "32",
        "--shots",
        "5,10",
        "--threads",
        "2",
    ]));
    assert!(stdout.contains("n=5 "), "{stdout}");
    let csv = read(&out.path().join("subfolds.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("subfold_id,n,k,accuracy,macro_f1,faulty_flag"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.contains(",5,5,") || r.contains(",10,7,")));
}

#[test]
fn matrix_between_two_records() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "2", "3000");
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&run(&[
        "matrix",
        "--dataset-dir",
        data.path().to_str().unwrap(),
        "-o",
        out.path().to_str().unwrap(),
        "--per-class",
        "5",
        "--train-record",
        "syn00",
        "--test-record",
        "syn01",
    ]));
    assert!(stdout.contains("mean NCD"), "{stdout}");
    let csv = read(&out.path().join("matrix.csv"));
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 11);
    assert!(out.path().join("matrix.ncdm").exists());

    let missing = run(&[
        "matrix",
        "--dataset-dir",
        data.path().to_str().unwrap(),
        "-o",
        out.path().to_str().unwrap(),
        "--train-record",
        "syn00",
        "--test-record",
        "nope",
    ]);
    assert_eq!(missing.status.code(), Some(3));
}
