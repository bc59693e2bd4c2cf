// SPDX-License-Identifier: MIT OR Apache-2.0

//! `libm` shims so the kernels do not need `std`.

/// Exponent arguments are clamped to this range before evaluation.
pub const EXP_CLAMP: f32 = 30.0;

#[inline]
pub fn exp_clamped(x: f32) -> f32 {
    libm::expf(x.clamp(-EXP_CLAMP, EXP_CLAMP))
}

#[inline]
pub fn exp_clamped_f64(x: f64) -> f64 {
    let c = f64::from(EXP_CLAMP);
    libm::exp(x.clamp(-c, c))
}

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
