//! Scalar element abstraction.
//!
//! All tensors are generic over [`Element`], instantiated at `f32` for
//! production models and at `f64` for gradient verification, where the extra
//! precision makes finite-difference comparisons meaningful.

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Storage width of a tensor element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Real scalar usable as tensor element.
pub trait Element:
    Float + NumAssign + FromPrimitive + LinalgScalar + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    const DTYPE: Dtype;

    /// Lossy cast from `f64` (named to avoid clashing with
    /// `num_traits::FromPrimitive::from_f64`).
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Little-endian byte encoding, used by the model file format.
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Sign with `sign(0) = 0`, unlike `f64::signum` which maps `+0.0` to `1.0`.
pub fn sign<E: Element>(v: E) -> E {
    if v > E::zero() {
        E::one()
    } else if v < E::zero() {
        -E::one()
    } else {
        E::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0f32), 0.0);
        assert_eq!(sign(-0.0f32), 0.0);
        assert_eq!(sign(3.5f64), 1.0);
        assert_eq!(sign(-0.1f64), -1.0);
        // The stdlib signum would return 1.0 here.
        assert_eq!(0.0f32.signum(), 1.0);
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        1.5f32.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf), 1.5);
        buf.clear();
        (-0.1f64).write_le(&mut buf);
        assert_eq!(f64::read_le(&buf), -0.1);
    }
}
