//! Square QAM with a per-dimension natural binary decomposition.
//!
//! Each dimension carries `m` antipodal bits `b_l` in `{+1, -1}` and the
//! level is `v = sum_l a * 2^(m-1-l) * b_l`. Adjacent levels are `2a` apart,
//! so every symbol is `b_0 * 2^(m-1) * a` plus a finer lattice offset.

use crate::error::{invalid, Result};
use crate::numerics::{RngStream, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            4 => Ok(Self::Qpsk),
            16 => Ok(Self::Qam16),
            _ => Err(invalid(format!("unsupported constellation order {order}"))),
        }
    }

    pub fn order(self) -> usize {
        match self {
            Self::Qpsk => 4,
            Self::Qam16 => 16,
        }
    }

    /// Bits per real dimension, `log2(sqrt(M))`.
    pub fn bits_per_dim(self) -> usize {
        match self {
            Self::Qpsk => 1,
            Self::Qam16 => 2,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        2 * self.bits_per_dim()
    }

    /// Per-dimension base amplitude giving unit average symbol energy.
    pub fn base_amplitude(self) -> f64 {
        match self {
            Self::Qpsk => std::f64::consts::FRAC_1_SQRT_2,
            Self::Qam16 => 1.0 / 10f64.sqrt(),
        }
    }

    /// Lattice period `2a` of the per-dimension levels.
    pub fn lattice_period(self) -> f64 {
        2.0 * self.base_amplitude()
    }

    /// Weight `a * 2^(m-1-l)` of bit level `l`.
    pub fn level_weight(self, l: usize) -> f64 {
        self.base_amplitude() * (1u32 << (self.bits_per_dim() - 1 - l)) as f64
    }

    pub fn dim_value(self, bits: &[i8]) -> Result<f64> {
        if bits.len() != self.bits_per_dim() {
            return Err(invalid(format!("expected {} bits per dimension, got {}", self.bits_per_dim(), bits.len())));
        }
        if bits.iter().any(|b| *b != 1 && *b != -1) {
            return Err(invalid("bits must be +1 or -1"));
        }
        Ok(bits.iter().enumerate().map(|(l, &b)| self.level_weight(l) * b as f64).sum())
    }

    /// Maps real and imaginary bit vectors to a complex symbol.
    pub fn map_bits(self, re_bits: &[i8], im_bits: &[i8]) -> Result<C64> {
        Ok(C64::new(self.dim_value(re_bits)?, self.dim_value(im_bits)?))
    }

    /// Successive sign decisions recovering the bits of one dimension.
    pub fn decompose_dim(self, v: f64) -> Result<Vec<i8>> {
        let mut residual = v;
        let mut bits = Vec::with_capacity(self.bits_per_dim());
        for l in 0..self.bits_per_dim() {
            let b: i8 = if residual >= 0.0 { 1 } else { -1 };
            residual -= self.level_weight(l) * b as f64;
            bits.push(b);
        }
        if residual.abs() > 1e-9 {
            return Err(invalid(format!("{v} is not a constellation level")));
        }
        Ok(bits)
    }

    /// Inverse of [`Modulation::map_bits`]; rejects off-constellation input.
    pub fn bit_decompose(self, symbol: C64) -> Result<(Vec<i8>, Vec<i8>)> {
        Ok((self.decompose_dim(symbol.re)?, self.decompose_dim(symbol.im)?))
    }

    /// Nearest per-dimension level decision, returned as bits.
    pub fn slice_dim(self, v: f64) -> Vec<i8> {
        let a = self.base_amplitude();
        let max_idx = ((1usize << self.bits_per_dim()) - 1) as f64;
        // Levels are a * (2i - (2^m - 1)), i = 0..2^m.
        let idx = ((v / a + max_idx) / 2.0).round().clamp(0.0, max_idx);
        let level = a * (2.0 * idx - max_idx);
        self.decompose_dim(level).expect("sliced level is on the lattice")
    }

    pub fn dim_levels(self) -> Vec<f64> {
        let n = 1usize << self.bits_per_dim();
        let a = self.base_amplitude();
        (0..n).map(|i| a * (2.0 * i as f64 - (n - 1) as f64)).collect()
    }

    pub fn constellation(self) -> Vec<C64> {
        let levels = self.dim_levels();
        levels.iter().flat_map(|&re| levels.iter().map(move |&im| C64::new(re, im))).collect()
    }

    /// Uniform random symbol; bits are appended to `bits` (real dimension first).
    pub fn random_symbol(self, rng: &mut RngStream, bits: &mut Vec<i8>) -> C64 {
        let start = bits.len();
        for _ in 0..self.bits_per_symbol() {
            bits.push(rng.sign());
        }
        let m = self.bits_per_dim();
        let (re, im) = bits[start..].split_at(m);
        self.map_bits(re, im).expect("generated bits are valid")
    }
}
