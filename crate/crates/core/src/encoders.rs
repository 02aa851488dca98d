//! Byte encodings of interval windows.
//!
//! Every scheme writes little-endian elements. Integer quantization rounds
//! half up; float conversion rounds to nearest even.

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    I8Norm,
    U8Norm,
    I16Raw,
    U16Raw,
    I16Norm,
    U16Norm,
    I32Raw,
    U32Raw,
    I32Norm,
    U32Norm,
    F16Sec,
    F32Sec,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 12] = [
        SchemeKind::I8Norm,
        SchemeKind::U8Norm,
        SchemeKind::I16Raw,
        SchemeKind::U16Raw,
        SchemeKind::I16Norm,
        SchemeKind::U16Norm,
        SchemeKind::I32Raw,
        SchemeKind::U32Raw,
        SchemeKind::I32Norm,
        SchemeKind::U32Norm,
        SchemeKind::F16Sec,
        SchemeKind::F32Sec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::I8Norm => "i8_norm",
            SchemeKind::U8Norm => "u8_norm",
            SchemeKind::I16Raw => "i16_raw",
            SchemeKind::U16Raw => "u16_raw",
            SchemeKind::I16Norm => "i16_norm",
            SchemeKind::U16Norm => "u16_norm",
            SchemeKind::I32Raw => "i32_raw",
            SchemeKind::U32Raw => "u32_raw",
            SchemeKind::I32Norm => "i32_norm",
            SchemeKind::U32Norm => "u32_norm",
            SchemeKind::F16Sec => "f16_sec",
            SchemeKind::F32Sec => "f32_sec",
        }
    }

    /// Bytes per encoded value.
    pub fn element_width(self) -> usize {
        match self {
            SchemeKind::I8Norm | SchemeKind::U8Norm => 1,
            SchemeKind::I16Raw
            | SchemeKind::U16Raw
            | SchemeKind::I16Norm
            | SchemeKind::U16Norm
            | SchemeKind::F16Sec => 2,
            _ => 4,
        }
    }

    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            SchemeKind::I8Norm
                | SchemeKind::U8Norm
                | SchemeKind::I16Norm
                | SchemeKind::U16Norm
                | SchemeKind::I32Norm
                | SchemeKind::U32Norm
        )
    }

    pub fn is_lossless(self) -> bool {
        matches!(
            self,
            SchemeKind::I16Raw | SchemeKind::U16Raw | SchemeKind::I32Raw | SchemeKind::U32Raw
        )
    }

    /// Inclusive integer range of the target type.
    fn int_range(self) -> Option<(i64, i64)> {
        Some(match self {
            SchemeKind::I8Norm => (i8::MIN.into(), i8::MAX.into()),
            SchemeKind::U8Norm => (0, u8::MAX.into()),
            SchemeKind::I16Raw | SchemeKind::I16Norm => (i16::MIN.into(), i16::MAX.into()),
            SchemeKind::U16Raw | SchemeKind::U16Norm => (0, u16::MAX.into()),
            SchemeKind::I32Raw | SchemeKind::I32Norm => (i32::MIN.into(), i32::MAX.into()),
            SchemeKind::U32Raw | SchemeKind::U32Norm => (0, u32::MAX.into()),
            SchemeKind::F16Sec | SchemeKind::F32Sec => return None,
        })
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{s}`")))
    }
}

pub const CLIP_8BIT: i64 = 750;

/// A scheme with its fitted parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingScheme {
    pub kind: SchemeKind,
    pub clip_lo: i64,
    pub clip_hi: i64,
    /// Added to every value by the unsigned raw schemes.
    pub shift: i64,
    pub norm_lo: i64,
    pub norm_hi: i64,
    pub sampling_rate: u32,
}

impl EncodingScheme {
    /// Unfitted scheme: zero shift, normalization range equal to the clip range.
    pub fn new(kind: SchemeKind, sampling_rate: u32) -> Self {
        Self {
            kind,
            clip_lo: -CLIP_8BIT,
            clip_hi: CLIP_8BIT,
            shift: 0,
            norm_lo: -CLIP_8BIT,
            norm_hi: CLIP_8BIT,
            sampling_rate,
        }
    }

    pub fn encoded_len(&self, values: usize) -> usize {
        self.kind.element_width() * values
    }

    fn validate(&self) -> Result<()> {
        if self.clip_lo >= self.clip_hi {
            return Err(Error::config("clip", "clip_lo must be below clip_hi"));
        }
        if self.kind.is_normalized() && self.norm_lo >= self.norm_hi {
            return Err(Error::DegenerateRange {
                scheme: self.kind.to_string(),
                value: self.norm_lo,
            });
        }
        if self.sampling_rate == 0 {
            return Err(Error::config("sampling_rate", "must be positive"));
        }
        Ok(())
    }
}

/// Fits data-dependent parameters: the normalization range for `*_norm`
/// (fixed at ±750 for the 8-bit schemes) and the shift for unsigned raw
/// schemes.
pub fn fit_scheme_params(values: &[i32], kind: SchemeKind, sampling_rate: u32) -> Result<EncodingScheme> {
    let (&min, &max) = values
        .iter()
        .min()
        .zip(values.iter().max())
        .ok_or(Error::EmptyInput("training values"))?;
    let (min, max) = (i64::from(min), i64::from(max));
    let mut scheme = EncodingScheme::new(kind, sampling_rate);
    if kind.is_normalized() && min == max {
        return Err(Error::DegenerateRange {
            scheme: kind.to_string(),
            value: min,
        });
    }
    match kind {
        SchemeKind::U16Raw | SchemeKind::U32Raw => scheme.shift = (-min).max(0),
        SchemeKind::I16Norm | SchemeKind::U16Norm | SchemeKind::I32Norm | SchemeKind::U32Norm => {
            scheme.norm_lo = min;
            scheme.norm_hi = max;
        }
        _ => {}
    }
    Ok(scheme)
}

/// Encoder output with the number of values saturated at a fitted bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub saturated: usize,
}

/// Affine map of `[lo, hi]` onto `[tmin, tmax]`, rounding half up. Exact in
/// integer arithmetic.
fn quantize(v: i64, lo: i64, hi: i64, tmin: i64, tmax: i64) -> i64 {
    let num = i128::from(v - lo) * i128::from(tmax - tmin);
    let den = i128::from(hi - lo);
    let q = (2 * num + den).div_euclid(2 * den);
    tmin + q as i64
}

/// Encodes values, saturating (and counting) values outside a fitted range.
///
/// Normalized schemes clamp to their normalization range and unsigned raw
/// schemes clamp shifted values at zero. A raw value beyond the target type's
/// width is an [`Error::Overflow`].
pub fn encode_counting(values: &[i32], scheme: &EncodingScheme) -> Result<Encoded> {
    scheme.validate()?;
    let kind = scheme.kind;
    let mut bytes = Vec::with_capacity(scheme.encoded_len(values.len()));
    let mut saturated = 0usize;
    let overflow = |value: i64| Error::Overflow {
        scheme: kind.to_string(),
        value,
    };

    for &v in values {
        let v = i64::from(v);
        match kind {
            SchemeKind::F16Sec => {
                let secs = v as f64 / f64::from(scheme.sampling_rate);
                bytes.extend_from_slice(&f16::from_f64(secs).to_le_bytes());
            }
            SchemeKind::F32Sec => {
                // both operands are exact in f32, so one correctly rounded division
                let secs = v as f32 / scheme.sampling_rate as f32;
                bytes.extend_from_slice(&secs.to_le_bytes());
            }
            _ => {
                let (tmin, tmax) = kind.int_range().expect("integer scheme");
                let q = match kind {
                    SchemeKind::I16Raw | SchemeKind::I32Raw => v,
                    SchemeKind::U16Raw | SchemeKind::U32Raw => {
                        let shifted = v + scheme.shift;
                        if shifted < 0 {
                            saturated += 1;
                            0
                        } else {
                            shifted
                        }
                    }
                    _ => {
                        let (lo, hi) = if matches!(kind, SchemeKind::I8Norm | SchemeKind::U8Norm) {
                            (scheme.clip_lo, scheme.clip_hi)
                        } else {
                            (scheme.norm_lo, scheme.norm_hi)
                        };
                        let clamped = v.clamp(lo, hi);
                        if clamped != v {
                            saturated += 1;
                        }
                        quantize(clamped, lo, hi, tmin, tmax)
                    }
                };
                if q < tmin || q > tmax {
                    return Err(overflow(v));
                }
                match kind.element_width() {
                    1 => bytes.push(q as u8),
                    2 => bytes.extend_from_slice(&(q as u16).to_le_bytes()),
                    _ => bytes.extend_from_slice(&(q as u32).to_le_bytes()),
                }
            }
        }
    }
    Ok(Encoded { bytes, saturated })
}

pub fn encode(values: &[i32], scheme: &EncodingScheme) -> Result<Vec<u8>> {
    encode_counting(values, scheme).map(|e| e.bytes)
}

/// Inverse of [`encode`] for the raw integer schemes.
pub fn decode(bytes: &[u8], scheme: &EncodingScheme) -> Result<Vec<i32>> {
    let kind = scheme.kind;
    if !kind.is_lossless() {
        return Err(Error::NotLossless {
            scheme: kind.to_string(),
        });
    }
    let width = kind.element_width();
    if !bytes.len().is_multiple_of(width) {
        return Err(Error::MisalignedLength {
            scheme: kind.to_string(),
            len: bytes.len(),
            width,
        });
    }
    bytes
        .chunks_exact(width)
        .map(|c| {
            let raw = match kind {
                SchemeKind::I16Raw => i64::from(i16::from_le_bytes([c[0], c[1]])),
                SchemeKind::U16Raw => i64::from(u16::from_le_bytes([c[0], c[1]])) - scheme.shift,
                SchemeKind::I32Raw => i64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                _ => i64::from(u32::from_le_bytes([c[0], c[1], c[2], c[3]])) - scheme.shift,
            };
            i32::try_from(raw).map_err(|_| Error::Overflow {
                scheme: kind.to_string(),
                value: raw,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scheme(kind: SchemeKind) -> EncodingScheme {
        EncodingScheme::new(kind, 250)
    }

    #[test]
    fn i16_raw_twos_complement() {
        assert_eq!(encode(&[10, -20], &scheme(SchemeKind::I16Raw)).unwrap(), vec![0x0a, 0x00, 0xec, 0xff]);
    }

    #[test]
    fn u8_norm_endpoints_and_midpoint() {
        assert_eq!(encode(&[-750, 0, 750], &scheme(SchemeKind::U8Norm)).unwrap(), vec![0x00, 0x80, 0xff]);
    }

    #[test]
    fn i8_norm_endpoints() {
        let b = encode(&[-750, 0, 750, 2000], &scheme(SchemeKind::I8Norm)).unwrap();
        assert_eq!(b, vec![0x80, 0x00, 0x7f, 0x7f]);
    }

    #[test]
    fn f32_seconds() {
        assert_eq!(encode(&[200], &scheme(SchemeKind::F32Sec)).unwrap(), vec![0xcd, 0xcc, 0x4c, 0x3f]);
    }

    #[test]
    fn f16_seconds() {
        // 0.8 in binary16 is 0x3A66; -0.08 is 0xAD1F
        assert_eq!(encode(&[200, -20], &scheme(SchemeKind::F16Sec)).unwrap(), vec![0x66, 0x3a, 0x1f, 0xad]);
    }

    #[test]
    fn raw_overflow_is_an_error() {
        assert!(matches!(encode(&[40_000], &scheme(SchemeKind::I16Raw)), Err(Error::Overflow { value: 40_000, .. })));
        let mut u = scheme(SchemeKind::U16Raw);
        u.shift = 30_000;
        assert!(matches!(encode(&[40_000], &u), Err(Error::Overflow { .. })));
    }

    #[test]
    fn unsigned_shift_saturates_below_fit() {
        let u = fit_scheme_params(&[-30, 0, 45], SchemeKind::U16Raw, 250).unwrap();
        let e = encode_counting(&[-31, -30], &u).unwrap();
        assert_eq!(e.bytes, vec![0, 0, 0, 0]);
        assert_eq!(e.saturated, 1);
    }

    #[test]
    fn fit_shift() {
        assert_eq!(fit_scheme_params(&[-30, 0, 45], SchemeKind::U16Raw, 250).unwrap().shift, 30);
        assert_eq!(fit_scheme_params(&[75, 750], SchemeKind::U32Raw, 250).unwrap().shift, 0);
    }

    #[test]
    fn fit_norm_range() {
        let s = fit_scheme_params(&[-30, 0, 45], SchemeKind::I16Norm, 250).unwrap();
        assert_eq!((s.norm_lo, s.norm_hi), (-30, 45));
        let s8 = fit_scheme_params(&[-3, 4], SchemeKind::U8Norm, 250).unwrap();
        assert_eq!((s8.clip_lo, s8.clip_hi), (-750, 750));
    }

    #[test]
    fn fit_degenerate() {
        for kind in SchemeKind::ALL.into_iter().filter(|k| k.is_normalized()) {
            assert!(matches!(fit_scheme_params(&[5, 5], kind, 250), Err(Error::DegenerateRange { .. })), "{kind}");
        }
        assert!(fit_scheme_params(&[], SchemeKind::I16Raw, 250).is_err());
    }

    #[test]
    fn norm_maps_onto_full_range() {
        let s = fit_scheme_params(&[-30, 45], SchemeKind::I32Norm, 250).unwrap();
        let b = encode(&[-30, 45], &s).unwrap();
        assert_eq!(b, [i32::MIN.to_le_bytes(), i32::MAX.to_le_bytes()].concat());
        let s = fit_scheme_params(&[-30, 45], SchemeKind::U16Norm, 250).unwrap();
        assert_eq!(encode(&[-30, 45], &s).unwrap(), vec![0, 0, 0xff, 0xff]);
    }

    #[test]
    fn decode_examples() {
        let s = scheme(SchemeKind::I16Raw);
        assert_eq!(decode(&[0x0a, 0x00], &s).unwrap(), vec![10]);
        assert_eq!(decode(&encode(&[10, -20], &s).unwrap(), &s).unwrap(), vec![10, -20]);
        assert!(matches!(decode(&[1, 2, 3], &s), Err(Error::MisalignedLength { .. })));
        assert!(matches!(decode(&[1, 2], &scheme(SchemeKind::U8Norm)), Err(Error::NotLossless { .. })));
    }

    #[test]
    fn names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("int16".parse::<SchemeKind>().is_err());
    }

    proptest! {
        #[test]
        fn lossless_round_trip(values in proptest::collection::vec(-750i32..=3000, 1..128),
                               kind in prop_oneof![Just(SchemeKind::I16Raw), Just(SchemeKind::U16Raw),
                                                   Just(SchemeKind::I32Raw), Just(SchemeKind::U32Raw)]) {
            let s = fit_scheme_params(&values, kind, 250).unwrap();
            prop_assert_eq!(decode(&encode(&values, &s).unwrap(), &s).unwrap(), values);
        }

        #[test]
        fn encoded_length(values in proptest::collection::vec(-750i32..=750, 2..128), idx in 0usize..12) {
            let kind = SchemeKind::ALL[idx];
            let mut v = values.clone();
            v[0] = -750;
            v[1] = 750;
            let s = fit_scheme_params(&v, kind, 250).unwrap();
            prop_assert_eq!(encode(&v, &s).unwrap().len(), kind.element_width() * v.len());
        }

        #[test]
        fn monotone_normalization(a in -750i32..=750, b in -750i32..=750,
                                  kind in prop_oneof![Just(SchemeKind::I8Norm), Just(SchemeKind::U8Norm),
                                                      Just(SchemeKind::I16Norm), Just(SchemeKind::U32Norm)]) {
            let (lo, hi) = (a.min(b), a.max(b));
            let s = fit_scheme_params(&[-750, 750], kind, 250).unwrap();
            let q = |v: i32| {
                let bytes = encode(&[v], &s).unwrap();
                match kind {
                    SchemeKind::I8Norm => i64::from(bytes[0] as i8),
                    SchemeKind::U8Norm => i64::from(bytes[0]),
                    SchemeKind::I16Norm => i64::from(i16::from_le_bytes([bytes[0], bytes[1]])),
                    _ => i64::from(u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])),
                }
            };
            prop_assert!(q(lo) <= q(hi));
        }
    }
}
