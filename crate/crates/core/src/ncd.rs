//! Compressed lengths, normalized compression distance and distance matrices.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dashmap::DashMap;
use flate2::{Compress, Compression, FlushCompress, GzBuilder, Status};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;

/// Lower and upper sanity bounds for matrix entries.
pub const SANITY_BAND: (f64, f64) = (-0.1, 1.5);

/// Source of `C(x)`, the compressed length of a byte string.
pub trait Compressor: Send + Sync {
    fn compressed_len(&self, data: &[u8]) -> Result<usize>;

    /// Stable identifier of every setting that can change a compressed length.
    fn fingerprint(&self) -> String;
}

/// gzip container over DEFLATE with a pinned header: no file name, zero
/// modification time, OS byte 255. The stream is produced by zlib, so lengths
/// agree with other zlib-backed gzip writers at the same level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GzipCompressor {
    pub level: u32,
}

/// gzip header (10 bytes) plus CRC32 and ISIZE trailer (8 bytes).
const GZIP_OVERHEAD: usize = 18;

impl Default for GzipCompressor {
    fn default() -> Self {
        Self { level: 9 }
    }
}

thread_local! {
    static DEFLATER: RefCell<Option<(u32, Compress, Vec<u8>)>> = const { RefCell::new(None) };
}

impl GzipCompressor {
    pub fn new(level: u32) -> Result<Self> {
        if level > 9 {
            return Err(Error::config("level", "gzip level must be 0..=9"));
        }
        Ok(Self { level })
    }

    /// Full gzip container bytes.
    pub fn gzip(&self, data: &[u8]) -> Result<Vec<u8>> {
        let mut enc = GzBuilder::new()
            .mtime(0)
            .operating_system(255)
            .write(Vec::with_capacity(data.len() + 64), Compression::new(self.level));
        enc.write_all(data)?;
        Ok(enc.finish()?)
    }

    /// Raw DEFLATE length using a reset, thread-local zlib stream.
    fn deflate_len(&self, data: &[u8]) -> Result<usize> {
        DEFLATER.with(|cell| {
            let mut slot = cell.borrow_mut();
            if slot.as_ref().is_none_or(|(lvl, _, _)| *lvl != self.level) {
                *slot = Some((self.level, Compress::new(Compression::new(self.level), false), Vec::new()));
            }
            let (_, deflater, buf) = slot.as_mut().expect("initialized above");
            deflater.reset();
            buf.clear();
            buf.reserve(data.len() + data.len() / 8 + 64);
            loop {
                let consumed = deflater.total_in() as usize;
                let status = deflater
                    .compress_vec(&data[consumed..], buf, FlushCompress::Finish)
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
                match status {
                    Status::StreamEnd => return Ok(deflater.total_out() as usize),
                    Status::Ok | Status::BufError => buf.reserve(buf.capacity().max(64)),
                }
            }
        })
    }
}

impl Compressor for GzipCompressor {
    fn compressed_len(&self, data: &[u8]) -> Result<usize> {
        if data.is_empty() {
            return Err(Error::EmptyInput("compressor input"));
        }
        Ok(self.deflate_len(data)? + GZIP_OVERHEAD)
    }

    fn fingerprint(&self) -> String {
        let desc = format!(
            "container=gzip;engine=zlib-deflate;level={};mtime=0;os=255;fname=none;concat=xy",
            self.level
        );
        let digest = Sha256::digest(desc.as_bytes());
        format!("gzip-l{}-{}", self.level, &hex::encode(digest)[..16])
    }
}

/// Concurrent memo of single-sequence compressed lengths, keyed by content.
#[derive(Debug, Default)]
pub struct CompressedLengthCache {
    map: DashMap<Box<[u8]>, usize>,
}

impl CompressedLengthCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get_or_compute<C: Compressor + ?Sized>(&self, data: &[u8], compressor: &C) -> Result<usize> {
        if let Some(v) = self.map.get(data) {
            return Ok(*v);
        }
        let len = compressor.compressed_len(data)?;
        // concurrent inserts of one key all carry the same value
        self.map.insert(data.into(), len);
        Ok(len)
    }
}

thread_local! {
    static CONCAT: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

/// NCD from precomputed single lengths and the compressed length of `x ++ y`.
pub fn ncd_from_lengths(cx: usize, cy: usize, cxy: usize) -> f64 {
    let (lo, hi) = if cx <= cy { (cx, cy) } else { (cy, cx) };
    (cxy as f64 - lo as f64) / hi as f64
}

fn concat_len<C: Compressor + ?Sized>(x: &[u8], y: &[u8], compressor: &C) -> Result<usize> {
    CONCAT.with(|cell| {
        let mut buf = cell.borrow_mut();
        buf.clear();
        buf.extend_from_slice(x);
        buf.extend_from_slice(y);
        compressor.compressed_len(&buf)
    })
}

/// `(C(xy) - min(C(x), C(y))) / max(C(x), C(y))` with `xy` = `x` then `y`.
pub fn ncd<C: Compressor + ?Sized>(
    x: &[u8],
    y: &[u8],
    compressor: &C,
    cache: Option<&CompressedLengthCache>,
) -> Result<f64> {
    let single = |d: &[u8]| match cache {
        Some(c) => c.get_or_compute(d, compressor),
        None => compressor.compressed_len(d),
    };
    let cx = single(x)?;
    let cy = single(y)?;
    let cxy = concat_len(x, y, compressor)?;
    Ok(ncd_from_lengths(cx, cy, cxy))
}

/// Identified byte strings, all encoded under one scheme.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodedSet {
    pub ids: Vec<String>,
    pub data: Vec<Vec<u8>>,
}

impl EncodedSet {
    pub fn new(ids: Vec<String>, data: Vec<Vec<u8>>) -> Result<Self> {
        if ids.len() != data.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: data.len(),
            });
        }
        Ok(Self { ids, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Dense test × train NCD matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
    #[serde(skip)]
    pub values: Vec<f32>,
    pub scheme: String,
    pub fingerprint: String,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.test_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.train_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols() + j]
    }

    /// Checks shape, finiteness and the sanity band.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.rows() * self.cols() {
            return Err(Error::MatrixFormat(format!(
                "{} values for a {}x{} matrix",
                self.values.len(),
                self.rows(),
                self.cols()
            )));
        }
        let (lo, hi) = SANITY_BAND;
        if let Some(pos) = self
            .values
            .iter()
            .position(|&v| !v.is_finite() || f64::from(v) < lo || f64::from(v) > hi)
        {
            return Err(Error::MatrixSanity {
                row: pos / self.cols(),
                col: pos % self.cols(),
                value: f64::from(self.values[pos]),
            });
        }
        Ok(())
    }

    /// Binary layout: `NCDMAT01`, u64 LE metadata length, JSON metadata, then
    /// row-major little-endian f32 values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let meta = serde_json::to_vec(&MatrixHeader {
            rows: self.rows(),
            cols: self.cols(),
            dtype: "f32le".into(),
            order: "row-major".into(),
            matrix: self,
        })?;
        out.write_all(MAGIC)?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MatrixFormat("bad magic".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut meta = vec![0u8; len];
        input.read_exact(&mut meta)?;
        let header: OwnedHeader = serde_json::from_slice(&meta)?;
        if header.dtype != "f32le" || header.order != "row-major" {
            return Err(Error::MatrixFormat(format!("unsupported layout {} {}", header.dtype, header.order)));
        }
        let mut m = header.matrix;
        if m.rows() != header.rows || m.cols() != header.cols {
            return Err(Error::MatrixFormat("id counts disagree with shape".into()));
        }
        let mut raw = vec![0u8; header.rows * header.cols * 4];
        input.read_exact(&mut raw)?;
        m.values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }

    /// Heatmap CSV: header `test_id,<train ids...>`, one row per test item.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["test_id".to_string()];
        header.extend(self.train_ids.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (i, id) in self.test_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

const MAGIC: &[u8; 8] = b"NCDMAT01";

#[derive(Serialize)]
struct MatrixHeader<'a> {
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
    #[serde(flatten)]
    matrix: &'a DistanceMatrix,
}

#[derive(Deserialize)]
struct OwnedHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
    #[serde(flatten)]
    matrix: DistanceMatrix,
}

fn build_matrix<C: Compressor + ?Sized>(
    test: &EncodedSet,
    train: &EncodedSet,
    scheme: &str,
    compressor: &C,
    parallel: bool,
) -> Result<DistanceMatrix> {
    let cols = train.len();
    let single = |set: &EncodedSet, what: &'static str| -> Result<Vec<usize>> {
        let f = |i: usize| {
            compressor.compressed_len(&set.data[i]).map_err(|e| match what {
                "test" => Error::MatrixEntry { row: i, col: usize::MAX, source: Box::new(e) },
                _ => Error::MatrixEntry { row: usize::MAX, col: i, source: Box::new(e) },
            })
        };
        if parallel {
            par::try_map_range(set.len(), f)
        } else {
            par::try_map_range_serial(set.len(), f)
        }
    };
    let c_test = single(test, "test")?;
    let c_train = single(train, "train")?;

    let row = |i: usize| -> Result<Vec<f32>> {
        let x = &test.data[i];
        (0..cols)
            .map(|j| {
                let cxy = concat_len(x, &train.data[j], compressor).map_err(|e| Error::MatrixEntry {
                    row: i,
                    col: j,
                    source: Box::new(e),
                })?;
                Ok(ncd_from_lengths(c_test[i], c_train[j], cxy) as f32)
            })
            .collect()
    };
    let rows = if parallel {
        par::try_map_range(test.len(), row)?
    } else {
        par::try_map_range_serial(test.len(), row)?
    };

    let m = DistanceMatrix {
        test_ids: test.ids.clone(),
        train_ids: train.ids.clone(),
        values: rows.concat(),
        scheme: scheme.to_string(),
        fingerprint: compressor.fingerprint(),
    };
    m.validate()?;
    Ok(m)
}

/// Full test × train NCD matrix. Single-sequence lengths are computed once;
/// rows are distributed over the worker pool when the `parallel` feature is on.
pub fn distance_matrix<C: Compressor + ?Sized>(
    test: &EncodedSet,
    train: &EncodedSet,
    scheme: &str,
    compressor: &C,
) -> Result<DistanceMatrix> {
    build_matrix(test, train, scheme, compressor, true)
}

/// Single-threaded [`distance_matrix`].
pub fn distance_matrix_serial<C: Compressor + ?Sized>(
    test: &EncodedSet,
    train: &EncodedSet,
    scheme: &str,
    compressor: &C,
) -> Result<DistanceMatrix> {
    build_matrix(test, train, scheme, compressor, false)
}
