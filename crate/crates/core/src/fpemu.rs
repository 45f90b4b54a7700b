//! Software emulation of reduced-precision binary floating point.
//!
//! Every value is carried in `f64` (the carrier format) and rounded back to a
//! p-bit significand after each arithmetic operation, so a whole solver can run
//! in an emulated precision on commodity hardware. The exponent range is left
//! unbounded on purpose: overflow and underflow are not part of the model.
//! Subnormals, NaN semantics and directed rounding modes (other than the
//! truncation mode used by the rounding-floor study) are out of scope.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Significand width of the carrier format (binary64).
pub const CARRIER_BITS: u32 = 53;

/// An emulated floating-point format described by its significand width.
///
/// The unit roundoff is `2^-p` for `p` significand bits. A spec at the carrier
/// width behaves as the identity rounding.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionSpec {
    bits: u32,
}

impl PrecisionSpec {
    pub fn new(bits: u32) -> Result<Self> {
        if !(2..=CARRIER_BITS).contains(&bits) {
            return Err(Error::InvalidPrecision(bits));
        }
        Ok(PrecisionSpec { bits })
    }

    /// The native `f64` format, used as the "exact" arithmetic proxy.
    pub fn carrier() -> Self {
        PrecisionSpec { bits: CARRIER_BITS }
    }

    /// Accepts an integer bit count or one of the aliases
    /// `fp64`, `fp32`, `fp16`, `bf16`.
    pub fn from_name(name: &str) -> Result<Self> {
        let bits = match name {
            "fp64" => 53,
            "fp32" => 24,
            "fp16" => 11,
            "bf16" => 8,
            other => other
                .parse::<u32>()
                .map_err(|_| Error::Parse(format!("unknown precision {other:?}")))?,
        };
        PrecisionSpec::new(bits)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Unit roundoff `2^-p`, exact in the carrier.
    pub fn unit_roundoff(&self) -> f64 {
        f64::powi(2.0, -(self.bits as i32))
    }

    pub fn is_carrier(&self) -> bool {
        self.bits == CARRIER_BITS
    }

    pub fn add(&self, x: f64, y: f64) -> Result<f64> {
        fl_op(x, y, BinOp::Add, *self)
    }

    pub fn sub(&self, x: f64, y: f64) -> Result<f64> {
        fl_op(x, y, BinOp::Sub, *self)
    }

    pub fn mul(&self, x: f64, y: f64) -> Result<f64> {
        fl_op(x, y, BinOp::Mul, *self)
    }

    pub fn div(&self, x: f64, y: f64) -> Result<f64> {
        fl_op(x, y, BinOp::Div, *self)
    }
}

impl fmt::Debug for PrecisionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.bits)
    }
}

impl fmt::Display for PrecisionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits)
    }
}

impl Serialize for PrecisionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(self.bits)
    }
}

impl<'de> Deserialize<'de> for PrecisionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = PrecisionSpec;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a significand bit count or an alias such as \"fp32\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                PrecisionSpec::new(v as u32).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                self.visit_u64(v as u64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                PrecisionSpec::from_name(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Rounding rule applied when a value is squeezed into fewer significand bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingMode {
    /// Round to nearest, ties to even significand (the default everywhere).
    NearestEven,
    /// Truncate the significand. Used only by the rounding-floor study.
    TowardZero,
}

/// One of the four scalar operations covered by the rounding model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Rounds `x` to the nearest value whose significand fits in `prec` bits.
pub fn round(x: f64, prec: PrecisionSpec) -> Result<f64> {
    round_mode(x, prec, RoundingMode::NearestEven)
}

pub fn round_mode(x: f64, prec: PrecisionSpec, mode: RoundingMode) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("round".into()));
    }
    Ok(round_finite(x, prec.bits, mode))
}

// Significand truncation on the raw bits. The carry on a rounded-up all-ones
// significand ripples into the exponent field, which is exactly the required
// behaviour (1.11..1 -> 10.0..0).
fn round_finite(x: f64, bits: u32, mode: RoundingMode) -> f64 {
    if bits >= CARRIER_BITS || x == 0.0 {
        return x;
    }
    let u = x.to_bits();
    if (u >> 52) & 0x7ff == 0 {
        // Carrier subnormal: rescale by an exact power of two so the
        // significand is full width, round, and scale back.
        let scaled = x * f64::powi(2.0, 200);
        return round_finite(scaled, bits, mode) * f64::powi(2.0, -200);
    }
    let drop = (CARRIER_BITS - bits) as u64;
    let mask = (1u64 << drop) - 1;
    let tail = u & mask;
    let trunc = u & !mask;
    let out = match mode {
        RoundingMode::TowardZero => trunc,
        RoundingMode::NearestEven => {
            let half = 1u64 << (drop - 1);
            if tail > half || (tail == half && (u >> drop) & 1 == 1) {
                trunc + (1u64 << drop)
            } else {
                trunc
            }
        }
    };
    f64::from_bits(out)
}

/// Performs `x op y` and rounds the result to `prec`. Satisfies
/// `fl(x op y) = (x op y)(1 + delta)` with `|delta| <= unit_roundoff`.
pub fn fl_op(x: f64, y: f64, op: BinOp, prec: PrecisionSpec) -> Result<f64> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite(format!("fl_op {op:?}")));
    }
    let z = match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => {
            if y == 0.0 {
                return Err(Error::DivisionByZero);
            }
            x / y
        }
    };
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("fl_op {op:?} result")));
    }
    Ok(round_finite(z, prec.bits, RoundingMode::NearestEven))
}

/// Left-to-right sequential dot product with every multiply and add rounded.
pub fn dot(x: &[f64], y: &[f64], prec: PrecisionSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("dot: {} vs {}", x.len(), y.len())));
    }
    let mut acc = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        acc = prec.add(acc, prec.mul(xi, yi)?)?;
    }
    Ok(acc)
}

/// Euclidean norm evaluated in `prec`: a sequential dot followed by one
/// rounded square root.
pub fn norm(x: &[f64], prec: PrecisionSpec) -> Result<f64> {
    let q = dot(x, x, prec)?;
    round(q.sqrt(), prec)
}

pub fn round_vec(x: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
    x.iter().map(|&v| round(v, prec)).collect()
}

pub fn round_vec_mode(x: &[f64], prec: PrecisionSpec, mode: RoundingMode) -> Result<Vec<f64>> {
    x.iter().map(|&v| round_mode(v, prec, mode)).collect()
}

/// Entrywise `x - y` in `prec`.
pub fn sub_vec(x: &[f64], y: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("sub_vec: {} vs {}", x.len(), y.len())));
    }
    x.iter().zip(y).map(|(&a, &b)| prec.sub(a, b)).collect()
}

/// Entrywise `x + y` in `prec`.
pub fn add_vec(x: &[f64], y: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("add_vec: {} vs {}", x.len(), y.len())));
    }
    x.iter().zip(y).map(|(&a, &b)| prec.add(a, b)).collect()
}

/// Entrywise `s * x` in `prec`.
pub fn scale_vec(x: &[f64], s: f64, prec: PrecisionSpec) -> Result<Vec<f64>> {
    x.iter().map(|&v| prec.mul(s, v)).collect()
}

pub(crate) fn ensure_finite(x: &[f64], step: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(step.to_string()))
    }
}
