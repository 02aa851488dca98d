//! MIT annotation format decoding and the CSV record fallback.
//!
//! An annotation file is a sequence of little-endian 16-bit words. The top six
//! bits of each word hold the annotation code, the low ten bits a time
//! increment (or, for pseudo-annotations, a payload). Codes 59..=63 are
//! pseudo-annotations that modify time or the most recent physical annotation.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODE_SKIP: u8 = 59;
pub const CODE_NUM: u8 = 60;
pub const CODE_SUB: u8 = 61;
pub const CODE_CHN: u8 = 62;
pub const CODE_AUX: u8 = 63;

/// Annotation code used for rhythm changes in `.atr` files.
pub const CODE_RHYTHM: u8 = 28;

/// Codes treated as beats in a QRS detection stream.
pub const BEAT_CODES: std::ops::RangeInclusive<u8> = 1..=49;

/// AFDB sampling rate, used when no header is available.
pub const DEFAULT_SAMPLING_RATE: u32 = 250;

/// One decoded physical annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_time: i64,
    pub type_code: u8,
    pub subtype: i8,
    pub channel: u8,
    pub num: i8,
    pub aux: Option<String>,
}

impl Annotation {
    pub fn new(sample_time: i64, type_code: u8) -> Self {
        Self {
            sample_time,
            type_code,
            subtype: 0,
            channel: 0,
            num: 0,
            aux: None,
        }
    }

    pub fn with_aux(mut self, aux: impl Into<String>) -> Self {
        self.aux = Some(aux.into());
        self
    }
}

/// A rhythm change: from `sample_time` on, the rhythm is `rhythm`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhythmMark {
    pub sample_time: i64,
    pub rhythm: String,
}

/// Beat positions and rhythm marks of one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatSeries {
    pub record_id: String,
    pub sampling_rate: u32,
    pub beat_times: Vec<i64>,
    pub rhythm_marks: Vec<RhythmMark>,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::AnnotationParse {
        offset,
        msg: msg.into(),
    }
}

fn word_at(raw: &[u8], pos: usize) -> Option<u16> {
    raw.get(pos..pos + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
}

/// Decodes a complete annotation stream into physical annotations.
///
/// `NUM` and `CHN` values are sticky: they apply to the annotation they follow
/// and to every later one until changed. `SUB` and `AUX` apply only to the
/// annotation they follow.
pub fn parse_annotation_stream(raw: &[u8]) -> Result<Vec<Annotation>> {
    let mut out: Vec<Annotation> = Vec::new();
    let mut pos = 0usize;
    let mut time: i64 = 0;
    let mut channel: u8 = 0;
    let mut num: i8 = 0;

    loop {
        let start = pos;
        let word = match word_at(raw, pos) {
            Some(w) => w,
            None if pos == raw.len() => return Err(parse_err(pos, "missing terminator")),
            None => return Err(parse_err(pos, "truncated word")),
        };
        pos += 2;
        let code = (word >> 10) as u8;
        let payload = word & 0x03ff;

        match code {
            0 if payload == 0 => break,
            CODE_SKIP => {
                let (hi, lo) = match (word_at(raw, pos), word_at(raw, pos + 2)) {
                    (Some(hi), Some(lo)) => (hi, lo),
                    _ => return Err(parse_err(start, "truncated SKIP interval")),
                };
                pos += 4;
                let skip = (((hi as u32) << 16) | lo as u32) as i32;
                time += i64::from(skip);
            }
            CODE_NUM | CODE_SUB | CODE_CHN => {
                let last = out
                    .last_mut()
                    .ok_or_else(|| parse_err(start, "modifier before any annotation"))?;
                let byte = (payload & 0xff) as u8;
                match code {
                    CODE_NUM => {
                        num = byte as i8;
                        last.num = num;
                    }
                    CODE_SUB => last.subtype = byte as i8,
                    _ => {
                        channel = byte;
                        last.channel = channel;
                    }
                }
            }
            CODE_AUX => {
                let len = payload as usize;
                let padded = len + (len & 1);
                let bytes = raw
                    .get(pos..pos + padded)
                    .ok_or_else(|| parse_err(start, format!("AUX length {len} exceeds remaining bytes")))?;
                pos += padded;
                let last = out
                    .last_mut()
                    .ok_or_else(|| parse_err(start, "AUX before any annotation"))?;
                let text = &bytes[..len];
                let end = text.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
                last.aux = if end == 0 {
                    None
                } else {
                    Some(String::from_utf8_lossy(&text[..end]).into_owned())
                };
            }
            _ => {
                let next = time + i64::from(payload);
                if let Some(prev) = out.last() {
                    if next < prev.sample_time {
                        return Err(parse_err(start, "annotation time decreases"));
                    }
                }
                time = next;
                out.push(Annotation {
                    sample_time: time,
                    type_code: code,
                    subtype: 0,
                    channel,
                    num,
                    aux: None,
                });
            }
        }
    }
    if pos < raw.len() {
        log::debug!("{} bytes after annotation terminator ignored", raw.len() - pos);
    }
    Ok(out)
}

/// Encodes annotations in canonical form: a `SKIP` whenever the increment
/// exceeds ten bits, `SUB` when nonzero, `CHN`/`NUM` when they change, then
/// `AUX`, and a terminating zero word.
pub fn encode_annotation_stream(annotations: &[Annotation]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(annotations.len() * 2 + 2);
    let mut prev_time = 0i64;
    let mut channel = 0u8;
    let mut num = 0i8;
    let push_word = |out: &mut Vec<u8>, code: u8, payload: u16| {
        out.extend_from_slice(&((u16::from(code) << 10) | (payload & 0x03ff)).to_le_bytes());
    };

    for (i, ann) in annotations.iter().enumerate() {
        if ann.type_code >= CODE_SKIP {
            return Err(Error::config("type_code", format!("annotation {i}: {} is a pseudo-annotation code", ann.type_code)));
        }
        let mut diff = ann.sample_time - prev_time;
        if diff < 0 {
            return Err(Error::config("sample_time", format!("annotation {i}: time decreases")));
        }
        while diff > 1023 {
            let n = diff.min(i32::MAX as i64) as u32;
            push_word(&mut out, CODE_SKIP, 0);
            out.extend_from_slice(&((n >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&(n as u16).to_le_bytes());
            diff -= i64::from(n);
        }
        if ann.type_code == 0 && diff == 0 {
            return Err(Error::config("type_code", format!("annotation {i}: code 0 at zero increment is the terminator")));
        }
        push_word(&mut out, ann.type_code, diff as u16);
        if ann.subtype != 0 {
            push_word(&mut out, CODE_SUB, u16::from(ann.subtype as u8));
        }
        if ann.channel != channel {
            channel = ann.channel;
            push_word(&mut out, CODE_CHN, u16::from(channel));
        }
        if ann.num != num {
            num = ann.num;
            push_word(&mut out, CODE_NUM, u16::from(num as u8));
        }
        if let Some(aux) = ann.aux.as_deref().filter(|a| !a.is_empty()) {
            let bytes = aux.as_bytes();
            if bytes.len() > 1023 {
                return Err(Error::config("aux", format!("annotation {i}: aux longer than 1023 bytes")));
            }
            push_word(&mut out, CODE_AUX, bytes.len() as u16);
            out.extend_from_slice(bytes);
            if bytes.len() % 2 == 1 {
                out.push(0);
            }
        }
        prev_time = ann.sample_time;
    }
    out.extend_from_slice(&[0, 0]);
    Ok(out)
}

/// Assembles a [`BeatSeries`] from a record's QRS and rhythm annotation streams.
pub fn load_record(
    record_id: &str,
    qrs: &[Annotation],
    atr: &[Annotation],
    sampling_rate: u32,
) -> Result<BeatSeries> {
    if sampling_rate == 0 {
        return Err(Error::Record {
            record: record_id.to_string(),
            msg: "sampling rate must be positive".into(),
        });
    }
    let mut beat_times: Vec<i64> = Vec::with_capacity(qrs.len());
    for ann in qrs.iter().filter(|a| BEAT_CODES.contains(&a.type_code)) {
        match beat_times.last() {
            Some(&last) if ann.sample_time <= last => {
                log::warn!(
                    "record {record_id}: duplicate beat at sample {} dropped",
                    ann.sample_time
                );
            }
            _ => beat_times.push(ann.sample_time),
        }
    }
    if beat_times.is_empty() {
        return Err(Error::NoBeats {
            record: record_id.to_string(),
        });
    }
    let rhythm_marks = atr
        .iter()
        .filter_map(|a| match a.aux.as_deref() {
            Some(aux) if aux.starts_with('(') => Some(RhythmMark {
                sample_time: a.sample_time,
                rhythm: aux.to_string(),
            }),
            _ => None,
        })
        .collect();
    Ok(BeatSeries {
        record_id: record_id.to_string(),
        sampling_rate,
        beat_times,
        rhythm_marks,
    })
}

/// Reads the sampling rate from a WFDB header's record line
/// (`name nsig fs nsamp ...`). A missing frequency field yields 250 Hz.
pub fn read_header_sampling_rate(header: &str) -> Result<u32> {
    let line = header
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::config("header", "no record line"))?;
    let Some(field) = line.split_whitespace().nth(2) else {
        return Ok(DEFAULT_SAMPLING_RATE);
    };
    // `fs[/counter_freq[(base)]]`
    let fs_text = field.split(['/', '(']).next().unwrap_or(field);
    let fs: f64 = fs_text
        .parse()
        .map_err(|_| Error::config("header", format!("bad sampling frequency `{field}`")))?;
    if !(fs.is_finite() && fs >= 1.0) {
        return Err(Error::config("header", format!("bad sampling frequency `{field}`")));
    }
    Ok(fs.round() as u32)
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    sample: i64,
    kind: String,
    #[serde(default)]
    label: String,
}

/// Parses the CSV record format (`sample,kind,label`, kinds `beat`/`rhythm`).
pub fn load_csv_record<R: Read>(record_id: &str, reader: R, sampling_rate: u32) -> Result<BeatSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(&e, 1))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample", "kind", "label"] {
        return Err(Error::Csv {
            line: 1,
            msg: "expected header `sample,kind,label`".into(),
        });
    }

    let mut beat_times = Vec::new();
    let mut rhythm_marks = Vec::new();
    let mut last_sample: Option<i64> = None;
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_err(&e, 0))?;
        // header is line 1, so rows start at line 2
        let line = beat_times.len() as u64 + rhythm_marks.len() as u64 + 2;
        if last_sample.is_some_and(|s| row.sample < s) {
            return Err(Error::Csv {
                line,
                msg: format!("sample {} is before the previous row", row.sample),
            });
        }
        last_sample = Some(row.sample);
        match row.kind.as_str() {
            "beat" => {
                if beat_times.last().is_some_and(|&b| b >= row.sample) {
                    return Err(Error::Csv {
                        line,
                        msg: format!("duplicate beat at sample {}", row.sample),
                    });
                }
                beat_times.push(row.sample);
            }
            "rhythm" => {
                if !row.label.starts_with('(') {
                    return Err(Error::Csv {
                        line,
                        msg: format!("rhythm label `{}` must start with '('", row.label),
                    });
                }
                rhythm_marks.push(RhythmMark {
                    sample_time: row.sample,
                    rhythm: row.label,
                });
            }
            other => {
                return Err(Error::Csv {
                    line,
                    msg: format!("unknown kind `{other}`"),
                })
            }
        }
    }
    if beat_times.is_empty() {
        return Err(Error::NoBeats {
            record: record_id.to_string(),
        });
    }
    Ok(BeatSeries {
        record_id: record_id.to_string(),
        sampling_rate,
        beat_times,
        rhythm_marks,
    })
}

fn csv_err(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Csv {
        line,
        msg: e.to_string(),
    }
}

impl BeatSeries {
    /// Serializes to the CSV record format. Rows are ordered by sample; a
    /// rhythm mark sorts before a beat at the same sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,kind,label\n");
        let (mut b, mut m) = (0, 0);
        while b < self.beat_times.len() || m < self.rhythm_marks.len() {
            let take_mark = match (self.beat_times.get(b), self.rhythm_marks.get(m)) {
                (Some(&beat), Some(mark)) => mark.sample_time <= beat,
                (None, Some(_)) => true,
                _ => false,
            };
            if take_mark {
                let mark = &self.rhythm_marks[m];
                let _ = writeln!(out, "{},rhythm,{}", mark.sample_time, mark.rhythm);
                m += 1;
            } else {
                let _ = writeln!(out, "{},beat,", self.beat_times[b]);
                b += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn terminator_only() {
        assert!(parse_annotation_stream(&[0, 0]).unwrap().is_empty());
    }

    #[test]
    fn single_word() {
        let anns = parse_annotation_stream(&[0x08, 0x04, 0x00, 0x00]).unwrap();
        assert_eq!(anns, vec![Annotation::new(8, 1)]);
    }

    #[test]
    fn missing_terminator() {
        let err = parse_annotation_stream(&[0x08, 0x04]).unwrap_err();
        assert!(matches!(err, Error::AnnotationParse { offset: 2, .. }), "{err}");
    }

    #[test]
    fn odd_trailing_byte() {
        let err = parse_annotation_stream(&[0x08, 0x04, 0x00]).unwrap_err();
        assert!(matches!(err, Error::AnnotationParse { offset: 2, .. }), "{err}");
    }

    #[test]
    fn truncated_skip() {
        // SKIP word followed by only two of its four bytes
        let err = parse_annotation_stream(&[0x00, 0xec, 0x00, 0x00]).unwrap_err();
        assert!(matches!(err, Error::AnnotationParse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn aux_past_end() {
        // beat, then AUX claiming 6 bytes with only 2 present
        let raw = [0x08, 0x04, 0x06, 0xfc, b'(', b'N'];
        let err = parse_annotation_stream(&raw).unwrap_err();
        assert!(matches!(err, Error::AnnotationParse { offset: 2, .. }), "{err}");
    }

    #[test]
    fn aux_without_annotation() {
        let raw = [0x02, 0xfc, b'(', b'N', 0, 0];
        assert!(parse_annotation_stream(&raw).is_err());
    }

    #[test]
    fn skip_and_aux() {
        // SKIP 70000, rhythm code 28 with +5, aux "(AFIB" (odd, padded)
        let mut raw = vec![0x00, 0xec];
        raw.extend_from_slice(&1u16.to_le_bytes());
        raw.extend_from_slice(&(70000u32 as u16).to_le_bytes());
        raw.extend_from_slice(&((28u16 << 10) | 5).to_le_bytes());
        raw.extend_from_slice(&((63u16 << 10) | 5).to_le_bytes());
        raw.extend_from_slice(b"(AFIB\0");
        raw.extend_from_slice(&[0, 0]);
        let anns = parse_annotation_stream(&raw).unwrap();
        assert_eq!(anns, vec![Annotation::new(70005, 28).with_aux("(AFIB")]);
    }

    #[test]
    fn sticky_channel_and_num() {
        let anns = vec![
            Annotation { channel: 1, num: 3, subtype: -2, ..Annotation::new(10, 1) },
            Annotation { channel: 1, num: 3, ..Annotation::new(20, 1) },
            Annotation::new(30, 1),
        ];
        let raw = encode_annotation_stream(&anns).unwrap();
        assert_eq!(parse_annotation_stream(&raw).unwrap(), anns);
    }

    #[test]
    fn load_record_assembles() {
        let qrs = vec![Annotation::new(100, 1), Annotation::new(300, 1)];
        let atr = vec![
            Annotation::new(0, CODE_RHYTHM).with_aux("(AFIB"),
            Annotation::new(50, 22).with_aux("note"),
        ];
        let s = load_record("r", &qrs, &atr, 250).unwrap();
        assert_eq!(s.beat_times, vec![100, 300]);
        assert_eq!(
            s.rhythm_marks,
            vec![RhythmMark { sample_time: 0, rhythm: "(AFIB".into() }]
        );
    }

    #[test]
    fn load_record_ignores_non_beat_codes() {
        let qrs = vec![Annotation::new(100, 50), Annotation::new(200, 0)];
        assert!(matches!(load_record("r", &qrs, &[], 250), Err(Error::NoBeats { .. })));
    }

    #[test]
    fn csv_example() {
        let text = "sample,kind,label\n100,beat,\n100,rhythm,(AFIB\n350,beat,\n";
        let s = load_csv_record("r", text.as_bytes(), 250).unwrap();
        assert_eq!(s.beat_times, vec![100, 350]);
        assert_eq!(s.rhythm_marks, vec![RhythmMark { sample_time: 100, rhythm: "(AFIB".into() }]);
    }

    #[test]
    fn csv_crlf() {
        let text = "sample,kind,label\r\n0,rhythm,(N\r\n100,beat,\r\n";
        let s = load_csv_record("r", text.as_bytes(), 250).unwrap();
        assert_eq!(s.beat_times, vec![100]);
        assert_eq!(s.rhythm_marks[0].rhythm, "(N");
    }

    #[test]
    fn csv_empty_body() {
        let err = load_csv_record("r", "sample,kind,label\n".as_bytes(), 250).unwrap_err();
        assert!(matches!(err, Error::NoBeats { .. }));
    }

    #[test]
    fn csv_malformed_row_reports_line() {
        let text = "sample,kind,label\n100,beat,\nabc,beat,\n";
        match load_csv_record("r", text.as_bytes(), 250).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn csv_non_monotonic() {
        let text = "sample,kind,label\n100,beat,\n50,beat,\n";
        match load_csv_record("r", text.as_bytes(), 250).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn header_sampling_rate() {
        assert_eq!(read_header_sampling_rate("04015 2 250 9205760\n").unwrap(), 250);
        assert_eq!(read_header_sampling_rate("# c\nx 1 360/1000(0) 10\n").unwrap(), 360);
        assert_eq!(read_header_sampling_rate("00735\n").unwrap(), 250);
        assert!(read_header_sampling_rate("x 1 abc").is_err());
    }

    fn arb_annotations() -> impl Strategy<Value = Vec<Annotation>> {
        let one = (0i64..5000, 1u8..59, -3i8..3, 0u8..3, 0i8..4, proptest::option::of("[(A-Z]{1,7}"));
        proptest::collection::vec(one, 0..40).prop_map(|items| {
            let mut t = 0;
            items
                .into_iter()
                .map(|(dt, code, subtype, channel, num, aux)| {
                    t += dt;
                    Annotation { sample_time: t, type_code: code, subtype, channel, num, aux }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(anns in arb_annotations()) {
            let raw = encode_annotation_stream(&anns).unwrap();
            let back = parse_annotation_stream(&raw).unwrap();
            prop_assert_eq!(back, anns);
        }

        #[test]
        fn csv_round_trip(beats in proptest::collection::btree_set(0i64..100_000, 1..50),
                          marks in proptest::collection::vec((0i64..100_000, "\\((N|AFIB|AFL|J)"), 0..5)) {
            let mut marks = marks;
            marks.sort_by_key(|m| m.0);
            let series = BeatSeries {
                record_id: "p".into(),
                sampling_rate: 250,
                beat_times: beats.into_iter().collect(),
                rhythm_marks: marks.into_iter().map(|(t, r)| RhythmMark { sample_time: t, rhythm: r }).collect(),
            };
            let back = load_csv_record("p", series.to_csv().as_bytes(), 250).unwrap();
            prop_assert_eq!(back, series);
        }
    }
}
