//! Small dense complex linear algebra, lattice folding, seeded randomness
//! and a finite-difference gradient oracle.

mod linalg;
mod rng;

pub use linalg::{lstsq, solve_hermitian, CMat, CVec, Cholesky};
pub use rng::RngStream;

use crate::error::{invalid, Result};

pub use num_complex::Complex64 as C64;

/// Centered modulo: `u - p * floor(u / p + 1/2)`, landing in `[-p/2, p/2)`.
///
/// Ties at the half period resolve to `-p/2`, so `+p/2` and `-p/2` share a residue.
pub fn centered_mod(u: f64, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(invalid(format!("modulo period must be positive, got {p}")));
    }
    Ok(centered_mod_unchecked(u, p))
}

/// [`centered_mod`] without the period check; `p` must be positive.
#[inline]
pub fn centered_mod_unchecked(u: f64, p: f64) -> f64 {
    let r = u - p * (u / p + 0.5).floor();
    // Rounding in `u - p*n` can land exactly on +p/2 for huge |u|.
    if r >= 0.5 * p {
        r - p
    } else {
        r
    }
}

/// Lattice offset removed by [`centered_mod_unchecked`], i.e. `u - cmod(u)`.
#[inline]
pub fn lattice_offset(u: f64, p: f64) -> f64 {
    u - centered_mod_unchecked(u, p)
}

/// Central-difference gradient `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Converts a power ratio to dB, clamping to the `-300 dB` sentinel.
pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio <= 1e-30 {
        -300.0
    } else {
        10.0 * ratio.log10()
    }
}
