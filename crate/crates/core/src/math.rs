//! Scalar math that works with and without `std`.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn sin(x: f64) -> f64 {
        x.sin()
    }
    #[inline]
    pub fn cos(x: f64) -> f64 {
        x.cos()
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn log10(x: f64) -> f64 {
        x.log10()
    }
    #[inline]
    pub fn powf(x: f64, y: f64) -> f64 {
        x.powf(y)
    }
    #[inline]
    pub fn ceil(x: f64) -> f64 {
        x.ceil()
    }
    #[inline]
    pub fn floor(x: f64) -> f64 {
        x.floor()
    }
    #[inline]
    pub fn hypot(x: f64, y: f64) -> f64 {
        x.hypot(y)
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub use libm::{ceil, cos, floor, hypot, log as ln, log10, pow as powf, sin, sqrt};
}

pub use imp::*;

pub const LOG2_E: f64 = core::f64::consts::LOG2_E;
pub const TAU: f64 = core::f64::consts::TAU;

#[inline]
pub fn log2(x: f64) -> f64 {
    ln(x) * LOG2_E
}
