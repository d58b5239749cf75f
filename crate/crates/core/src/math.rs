//! Scalar math routed through `libm` so results do not depend on whether
//! `std` is linked.

pub(crate) use libm::{cos, exp, expm1, log, log10, pow, sin, sqrt, tanh};

/// ln(2π)
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;
