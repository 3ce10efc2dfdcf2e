//! Scalar abstraction for the numeric stack.
//!
//! Everything tensor-shaped is generic over [`Scalar`] so the same code runs
//! in f32 (the deployed precision, 4 bytes per parameter on the air interface)
//! and in f64 (used by the finite-difference gradient checks, where f32
//! rounding would drown the signal).

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Bytes per stored parameter in payload accounting and checkpoints.
    const BYTES: u64;

    /// Lossy conversion from f64, for constants and config values.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion for metric accumulation.
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const BYTES: u64 = 4;
}

impl Scalar for f64 {
    const BYTES: u64 = 8;
}
