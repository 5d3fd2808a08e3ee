//! Scalar abstraction for the numeric core.
//!
//! Network weights, rewards, and normalized state vectors are generic over
//! the floating-point type so the same code runs in `f32` or `f64`; the
//! crate root exports concrete aliases.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::time::Micros;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// IEEE-754 byte width in the checkpoint encoding.
    const BYTE_WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn from_micros(t: Micros) -> Self {
        Self::from_f64_lossy(t.as_us() as f64)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const BYTE_WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTE_WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Ratio of two durations as a scalar, the building block of reward math.
pub fn micros_ratio<S: Scalar>(num: Micros, den: Micros) -> S {
    debug_assert!(!den.is_zero());
    S::from_micros(num) / S::from_micros(den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_roundtrip() {
        let x = 0.123_456_789_f64;
        let mut buf = Vec::new();
        x.write_le(&mut buf);
        assert_eq!(f64::read_le(&buf), x);

        let y = 3.5_f32;
        let mut buf = Vec::new();
        y.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf), y);
    }

    #[test]
    fn ratio() {
        let r: f64 = micros_ratio(Micros(250), Micros(1000));
        assert_eq!(r, 0.25);
    }
}
