//! Fixed-point grid for scaled-domain values.
//!
//! Predictions, scaled features and codebook centroids are all rounded to
//! multiples of 2^-40. Sums and differences of such values stay on the grid
//! and are exact in `f64` while magnitudes stay below 2^12, so the encoder's
//! residual algebra reproduces bit-for-bit in the decoder.

const GRID_SCALE: f64 = (1u64 << 40) as f64;

#[inline]
pub fn snap(x: f64) -> f64 {
    (x * GRID_SCALE).round() / GRID_SCALE
}

pub fn snap_all(xs: &mut [f64]) {
    for x in xs {
        *x = snap(*x);
    }
}

#[inline]
pub fn on_grid(x: f64) -> bool {
    snap(x) == x
}
