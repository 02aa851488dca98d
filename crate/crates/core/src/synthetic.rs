//! Synthetic beat series with alternating sinus and AF episodes.
//!
//! Sinus rhythm is a slowly drifting RR series with small beat-to-beat
//! jitter; AF draws RR intervals independently from a wide band. Used for
//! smoke runs and tests where the real recordings are not available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::wfdb::{BeatSeries, RhythmMark};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub sampling_rate: u32,
    pub beats: usize,
    /// Episode length range in beats.
    pub episode_beats: (usize, usize),
    /// Probability that a new episode is AF.
    pub af_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sampling_rate: 250,
            beats: 4000,
            episode_beats: (200, 900),
            af_fraction: 0.4,
        }
    }
}

pub fn generate_record(record_id: &str, spec: &SyntheticSpec, seed: u64) -> BeatSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(spec.sampling_rate);
    let base = fs * rng.gen_range(0.7..0.95);
    let mut t: i64 = rng.gen_range(0..50);
    let mut beats = vec![t];
    let mut marks = Vec::new();
    let mut drift = 0.0f64;
    let mut af = rng.gen_bool(spec.af_fraction);

    while beats.len() < spec.beats {
        let len = rng.gen_range(spec.episode_beats.0..=spec.episode_beats.1);
        marks.push(RhythmMark {
            sample_time: t,
            rhythm: if af { "(AFIB" } else { "(N" }.to_string(),
        });
        for _ in 0..len {
            let rr = if af {
                base * 0.8 * rng.gen_range(0.6..1.4)
            } else {
                drift = 0.97 * drift + rng.gen_range(-2.0..2.0);
                base + drift + rng.gen_range(-1.5..1.5)
            };
            t += rr.round().max(1.0) as i64;
            beats.push(t);
            if beats.len() >= spec.beats {
                break;
            }
        }
        af = if rng.gen_bool(0.8) { !af } else { rng.gen_bool(spec.af_fraction) };
    }
    BeatSeries {
        record_id: record_id.to_string(),
        sampling_rate: spec.sampling_rate,
        beat_times: beats,
        rhythm_marks: marks,
    }
}

/// `n` records named `syn00`, `syn01`, … with seeds derived from `seed`.
pub fn synthetic_corpus(n: usize, spec: &SyntheticSpec, seed: u64) -> Vec<BeatSeries> {
    (0..n)
        .map(|i| generate_record(&format!("syn{i:02}"), spec, seed.wrapping_mul(1000).wrapping_add(i as u64)))
        .collect()
}
