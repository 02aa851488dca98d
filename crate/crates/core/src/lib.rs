//! Compression-distance classification of atrial fibrillation from beat-interval
//! sequences.
//!
//! The pipeline reads MIT-format annotation streams (or a CSV equivalent),
//! turns beat positions into labeled RR / ΔRR windows, serializes each window
//! under one of several byte encodings, and classifies test windows with a
//! k-nearest-neighbor vote over gzip normalized compression distances.
//!
//! Data-parallel loops (distance matrices, k sweeps, subfold scoring) run on
//! rayon when the `parallel` feature is enabled (the default) and fall back to
//! plain iterators otherwise. Results are identical either way.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod knn;
pub mod ncd;
pub mod par;
pub mod synthetic;
pub mod wfdb;

pub use dataset::{IntervalWindow, Label, Measure};
pub use encoders::{EncodingScheme, SchemeKind};
pub use error::{Error, Result};
pub use ncd::{Compressor, DistanceMatrix, GzipCompressor};
pub use wfdb::{Annotation, BeatSeries};
