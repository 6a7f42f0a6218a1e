//! Scalar abstraction for the numeric kernels.
//!
//! Everything geometric and differentiable is generic over [`Real`]:
//! `f32` is the training lane, `f64` the oracle/metrics lane.

use ndarray::ScalarOperand;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

/// Floating point scalar: f32 or f64.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + FromStr
    + Debug
    + Display
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Name recorded in checkpoints so a model cannot be reloaded at a
    /// different precision by accident.
    const NAME: &'static str;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to scalar type")
}
