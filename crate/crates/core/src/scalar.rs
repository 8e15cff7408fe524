//! Scalar abstraction over the floating-point element type.
//!
//! All numeric code in this crate is generic over [`Scalar`]; the crate root
//! pins `f64` aliases for the training pipeline, where finite-difference
//! gradient checks need the extra precision.

use std::fmt;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + NumAssign
    + FromStr<Err = ParseFloatError>
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Type tag used in file formats ("f32" / "f64").
    const TAG: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self;

    /// Uniform draw on `[lo, hi]`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;

    /// Standard normal draw.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Exact bit pattern as lowercase hex, for bit-exact serialization.
    fn to_hex_bits(self) -> String;

    /// Inverse of [`Scalar::to_hex_bits`].
    fn from_hex_bits(s: &str) -> Option<Self>;
}

impl Scalar for f32 {
    const TAG: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }

    fn from_usize(v: usize) -> Self {
        v as f32
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        rng.gen_range(lo..=hi)
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn to_hex_bits(self) -> String {
        format!("{:08x}", self.to_bits())
    }

    fn from_hex_bits(s: &str) -> Option<Self> {
        u32::from_str_radix(s, 16).ok().map(f32::from_bits)
    }
}

impl Scalar for f64 {
    const TAG: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn from_usize(v: usize) -> Self {
        v as f64
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        rng.gen_range(lo..=hi)
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn to_hex_bits(self) -> String {
        format!("{:016x}", self.to_bits())
    }

    fn from_hex_bits(s: &str) -> Option<Self> {
        u64::from_str_radix(s, 16).ok().map(f64::from_bits)
    }
}
