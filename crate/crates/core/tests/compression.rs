//! Compressed lengths against gzip output from an independent zlib-based
//! writer, and NCD properties over random inputs.

use std::path::PathBuf;

use afib_ncd::ncd::{distance_matrix, distance_matrix_serial, ncd, CompressedLengthCache, EncodedSet};
use afib_ncd::{Compressor, GzipCompressor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    name: String,
    hex: String,
    len: usize,
    gzip_hex: String,
}

fn cases() -> Vec<Case> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/gzip_golden.json");
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn lengths_match_reference_gzip() {
    let gz = GzipCompressor::default();
    for c in cases() {
        let data = hex::decode(&c.hex).unwrap();
        assert_eq!(gz.compressed_len(&data).unwrap(), c.len, "{}", c.name);
    }
}

#[test]
fn container_bytes_match_reference_gzip() {
    let gz = GzipCompressor::default();
    for c in cases() {
        let data = hex::decode(&c.hex).unwrap();
        assert_eq!(hex::encode(gz.gzip(&data).unwrap()), c.gzip_hex, "{}", c.name);
    }
}

#[test]
fn zeros_compress_below_fifty_bytes() {
    assert!(GzipCompressor::default().compressed_len(&[0u8; 1000]).unwrap() < 50);
}

#[test]
fn self_distance_of_random_windows_is_small() {
    let gz = GzipCompressor::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<u8> = (0..128).map(|_| rng.gen()).collect();
        worst = worst.max(ncd(&x, &x, &gz, None).unwrap());
    }
    assert!(worst > 0.0);
    assert!(worst <= 0.15, "max self-distance {worst}");
}

#[test]
fn cache_is_transparent() {
    let gz = GzipCompressor::default();
    let cache = CompressedLengthCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x: Vec<u8> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(0..4)).collect();
        let y: Vec<u8> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(0..4)).collect();
        let a = ncd(&x, &y, &gz, None).unwrap();
        let b = ncd(&x, &y, &gz, Some(&cache)).unwrap();
        let c = ncd(&x, &y, &gz, Some(&cache)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(b.to_bits(), c.to_bits());
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, prefix: &str) -> EncodedSet {
    let data: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let len = 2 * rng.gen_range(16..128);
            (0..len).map(|_| rng.gen_range(0..16)).collect()
        })
        .collect();
    EncodedSet::new((0..n).map(|i| format!("{prefix}{i}")).collect(), data).unwrap()
}

#[test]
fn parallel_matrix_equals_serial_on_any_pool_size() {
    let gz = GzipCompressor::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let test = random_set(&mut rng, 30, "t");
    let train = random_set(&mut rng, 40, "r");
    let serial = distance_matrix_serial(&test, &train, "i16_raw", &gz).unwrap();
    for threads in [1, 2, 7] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let par = pool.install(|| distance_matrix(&test, &train, "i16_raw", &gz).unwrap());
        assert_eq!(par, serial, "{threads} threads");
        let bits = |m: &afib_ncd::DistanceMatrix| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&par), bits(&serial));
    }
    for i in [0, 17, 29] {
        for j in [0, 21, 39] {
            let direct = ncd(&test.data[i], &train.data[j], &gz, None).unwrap() as f32;
            assert_eq!(serial.get(i, j), direct);
        }
    }
}

#[test]
fn fingerprint_changes_with_level() {
    let a = GzipCompressor::new(9).unwrap().fingerprint();
    let b = GzipCompressor::new(6).unwrap().fingerprint();
    assert_ne!(a, b);
    assert!(GzipCompressor::new(10).is_err());
}
