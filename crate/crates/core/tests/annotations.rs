//! Annotation files written by an independent WFDB implementation, read
//! back through the parser and compared with that tool's own decoding.

use std::path::PathBuf;

use afib_ncd::corpus::{load_dataset_dir, verify_checksums};
use afib_ncd::wfdb::{load_csv_record, load_record, parse_annotation_stream, encode_annotation_stream};
use afib_ncd::Error;
use serde::Deserialize;

#[derive(Deserialize)]
struct Stream {
    sample: Vec<i64>,
    type_code: Vec<u8>,
    subtype: Vec<i8>,
    chan: Vec<u8>,
    num: Vec<i8>,
    aux: Vec<Option<String>>,
}

#[derive(Deserialize)]
struct Golden {
    qrs: Stream,
    atr: Stream,
    beat_count: usize,
    afib_start: i64,
    afib_end: i64,
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden() -> Golden {
    serde_json::from_slice(&std::fs::read(data("synth01_golden.json")).unwrap()).unwrap()
}

fn check_stream(file: &str, want: &Stream) {
    let raw = std::fs::read(data(file)).unwrap();
    let got = parse_annotation_stream(&raw).unwrap();
    assert_eq!(got.len(), want.sample.len(), "{file}");
    for (i, a) in got.iter().enumerate() {
        assert_eq!(a.sample_time, want.sample[i], "{file}[{i}] sample");
        assert_eq!(a.type_code, want.type_code[i], "{file}[{i}] code");
        assert_eq!(a.subtype, want.subtype[i], "{file}[{i}] subtype");
        assert_eq!(a.channel, want.chan[i], "{file}[{i}] chan");
        assert_eq!(a.num, want.num[i], "{file}[{i}] num");
        let want_aux = want.aux[i].as_deref().filter(|s| !s.is_empty());
        assert_eq!(a.aux.as_deref(), want_aux, "{file}[{i}] aux");
    }
}

#[test]
fn qrs_stream_matches_reference_decoder() {
    check_stream("synth01.qrs", &golden().qrs);
}

#[test]
fn atr_stream_matches_reference_decoder() {
    check_stream("synth01.atr", &golden().atr);
}

fn load_synth01() -> afib_ncd::BeatSeries {
    let qrs = parse_annotation_stream(&std::fs::read(data("synth01.qrs")).unwrap()).unwrap();
    let atr = parse_annotation_stream(&std::fs::read(data("synth01.atr")).unwrap()).unwrap();
    load_record("synth01", &qrs, &atr, 250).unwrap()
}

#[test]
fn beat_count_and_rhythm_marks() {
    let g = golden();
    let s = load_synth01();
    assert_eq!(s.beat_times.len(), g.beat_count);
    let afib: Vec<i64> = s
        .rhythm_marks
        .iter()
        .filter(|m| m.rhythm == "(AFIB")
        .map(|m| m.sample_time)
        .collect();
    assert_eq!(afib, vec![g.afib_start]);
    assert!(s.rhythm_marks.iter().any(|m| m.sample_time == g.afib_end && m.rhythm == "(N"));
    // the "noise" aux does not start with '(' and is not a rhythm mark
    assert_eq!(s.rhythm_marks.len(), 3);
}

#[test]
fn reencoded_streams_decode_identically() {
    for file in ["synth01.qrs", "synth01.atr"] {
        let parsed = parse_annotation_stream(&std::fs::read(data(file)).unwrap()).unwrap();
        let again = parse_annotation_stream(&encode_annotation_stream(&parsed).unwrap()).unwrap();
        assert_eq!(parsed, again, "{file}");
    }
}

#[test]
fn csv_export_round_trips_the_binary_record() {
    let s = load_synth01();
    let back = load_csv_record("synth01", s.to_csv().as_bytes(), 250).unwrap();
    assert_eq!(back, s);
}

#[test]
fn dataset_dir_with_header_and_csv_records() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["synth01.qrs", "synth01.atr"] {
        std::fs::copy(data(f), dir.path().join(f)).unwrap();
    }
    std::fs::write(dir.path().join("synth01.hea"), "synth01 2 250 9205760\n").unwrap();
    std::fs::write(dir.path().join("csv01.csv"), "sample,kind,label\n0,rhythm,(N\n10,beat,\n210,beat,\n").unwrap();
    std::fs::write(dir.path().join("broken.csv"), "sample,kind,label\n").unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let (series, report) = load_dataset_dir(dir.path(), None, None).unwrap();
    let ids: Vec<&str> = series.iter().map(|s| s.record_id.as_str()).collect();
    assert_eq!(ids, ["csv01", "synth01"]);
    assert_eq!(report.failed.len(), 1);
    assert_eq!(report.failed[0].0, "broken");
    assert_eq!(report.total_beats(), 2 + 1003);

    let only = vec!["synth01".to_string(), "absent".to_string()];
    let (series, report) = load_dataset_dir(dir.path(), Some(&only), None).unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(report.missing, vec!["absent".to_string()]);
}

#[test]
fn empty_dataset_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset_dir(dir.path(), None, None).is_err());
}

#[test]
fn checksum_list() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "abc").unwrap();
    let sums = dir.path().join("SHA256SUMS");
    std::fs::write(
        &sums,
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  a.txt\n",
    )
    .unwrap();
    assert_eq!(verify_checksums(dir.path(), &sums).unwrap(), 1);
    std::fs::write(dir.path().join("a.txt"), "abd").unwrap();
    assert!(matches!(verify_checksums(dir.path(), &sums), Err(Error::Checksum { .. })));
}
