use super::modulation::Modulation;
use crate::error::{invalid, Result};
use crate::numerics::{CMat, Cholesky, RngStream, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PilotScheme {
    /// Comb pilots: stream `s` owns subcarriers with `k % nt == s`.
    Orthogonal,
    /// Every stream sends its own pilot on every subcarrier of a pilot symbol.
    NonOrthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubframeConfig {
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    pub pilot_symbols: Vec<usize>,
    pub scheme: PilotScheme,
    pub modulation: Modulation,
    pub nt: usize,
}

impl Default for SubframeConfig {
    fn default() -> Self {
        Self {
            num_subcarriers: 1024,
            num_symbols: 14,
            pilot_symbols: vec![2, 5, 8, 11],
            scheme: PilotScheme::NonOrthogonal,
            modulation: Modulation::Qpsk,
            nt: 2,
        }
    }
}

impl SubframeConfig {
    pub fn with_scheme(&self, scheme: PilotScheme) -> Self {
        Self { scheme, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 || self.num_symbols == 0 || self.nt == 0 {
            return Err(invalid("subframe dimensions must be positive"));
        }
        if self.pilot_symbols.is_empty() {
            return Err(invalid("at least one pilot symbol required"));
        }
        if self.pilot_symbols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("pilot symbol positions must be strictly increasing"));
        }
        if self.pilot_symbols.iter().any(|&t| t >= self.num_symbols) {
            return Err(invalid("pilot symbol position outside the subframe"));
        }
        if self.scheme == PilotScheme::Orthogonal && self.num_subcarriers < self.nt {
            return Err(invalid("fewer subcarriers than streams for comb pilots"));
        }
        Ok(())
    }

    pub fn data_symbols(&self) -> Vec<usize> {
        (0..self.num_symbols).filter(|t| !self.pilot_symbols.contains(t)).collect()
    }

    /// Subcarriers on which stream `s` carries pilots.
    pub fn pilot_subcarriers(&self, s: usize) -> Vec<usize> {
        match self.scheme {
            PilotScheme::Orthogonal => (s..self.num_subcarriers).step_by(self.nt).collect(),
            PilotScheme::NonOrthogonal => (0..self.num_subcarriers).collect(),
        }
    }

    /// Streams transmitting a pilot at subcarrier `k` of a pilot symbol.
    pub fn active_streams(&self, k: usize) -> Vec<usize> {
        match self.scheme {
            PilotScheme::Orthogonal => vec![k % self.nt],
            PilotScheme::NonOrthogonal => (0..self.nt).collect(),
        }
    }
}

/// Transmitted resource grid with pilot mask and data payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Subframe {
    pub config: SubframeConfig,
    // ((t * K + k) * nt + s)
    x: Vec<C64>,
    pilot_mask: Vec<bool>,
    data_symbols: Vec<usize>,
    // (((d * K + k) * nt + s) * bits_per_symbol + b), real bits first.
    bits: Vec<i8>,
}

impl Subframe {
    #[inline]
    fn idx(&self, t: usize, k: usize, s: usize) -> usize {
        (t * self.config.num_subcarriers + k) * self.config.nt + s
    }

    /// Transmitted vector over streams at `(t, k)`.
    #[inline]
    pub fn x(&self, t: usize, k: usize) -> &[C64] {
        let o = self.idx(t, k, 0);
        &self.x[o..o + self.config.nt]
    }

    pub fn is_pilot(&self, t: usize, k: usize, s: usize) -> bool {
        self.pilot_mask[self.idx(t, k, s)]
    }

    pub fn pilot_count(&self, s: usize) -> usize {
        let nt = self.config.nt;
        self.pilot_mask.iter().skip(s).step_by(nt).filter(|m| **m).count()
    }

    pub fn data_symbols(&self) -> &[usize] {
        &self.data_symbols
    }

    /// All data bits in grid order (data symbol, subcarrier, stream, bit).
    pub fn data_bits(&self) -> &[i8] {
        &self.bits
    }

    /// Copy with every transmitted value multiplied by `alpha`.
    pub fn scaled(&self, alpha: C64) -> Self {
        Self { x: self.x.iter().map(|v| v * alpha).collect(), ..self.clone() }
    }

    /// Replaces the pilot vector at `(t, k)`; for hand-built test grids.
    pub fn set_pilot(&mut self, t: usize, k: usize, values: &[C64]) -> Result<()> {
        if !self.config.pilot_symbols.contains(&t) || values.len() != self.config.nt {
            return Err(invalid("not a pilot resource element"));
        }
        let o = self.idx(t, k, 0);
        self.x[o..o + values.len()].copy_from_slice(values);
        Ok(())
    }
}

fn qpsk_pilot(rng: &mut RngStream) -> C64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    C64::new(r * rng.sign() as f64, r * rng.sign() as f64)
}

/// Draws a `Tp x Nt` non-orthogonal pilot block whose Gram matrix has every
/// eigenvalue at least `Tp / 2`, retrying a bounded number of times.
fn draw_pilot_block(rng: &mut RngStream, tp: usize, nt: usize, modulation: Modulation) -> Vec<C64> {
    let mut scratch = Vec::new();
    let mut draw = |rng: &mut RngStream| -> Vec<C64> {
        (0..tp * nt)
            .map(|_| match modulation {
                Modulation::Qpsk => qpsk_pilot(rng),
                _ => {
                    scratch.clear();
                    modulation.random_symbol(rng, &mut scratch)
                }
            })
            .collect()
    };
    let mut block = draw(rng);
    if tp < nt {
        return block;
    }
    for _ in 0..64 {
        let gram = CMat::from_fn(nt, nt, |i, j| {
            let mut acc: C64 = (0..tp).map(|t| block[t * nt + i].conj() * block[t * nt + j]).sum();
            if i == j {
                acc -= tp as f64 / 2.0;
            }
            acc
        });
        if Cholesky::new(&gram).is_ok() {
            break;
        }
        block = draw(rng);
    }
    block
}

/// Builds a subframe: pilots per scheme on the pilot symbols, uniform random
/// data symbols on every stream elsewhere.
///
/// Comb pilots are unit-modulus QPSK. Non-orthogonal pilots are drawn from
/// the data constellation so the learned estimator sees lattice-aligned
/// interference; blocks with an ill-conditioned pilot Gram matrix are redrawn.
pub fn build_subframe(cfg: &SubframeConfig, payload_rng: &mut RngStream, pilot_rng: &mut RngStream) -> Result<Subframe> {
    cfg.validate()?;
    let (nsc, nsym, nt) = (cfg.num_subcarriers, cfg.num_symbols, cfg.nt);
    let mut sf = Subframe {
        config: cfg.clone(),
        x: vec![C64::new(0.0, 0.0); nsym * nsc * nt],
        pilot_mask: vec![false; nsym * nsc * nt],
        data_symbols: cfg.data_symbols(),
        bits: Vec::with_capacity(cfg.data_symbols().len() * nsc * nt * cfg.modulation.bits_per_symbol()),
    };
    let tp = cfg.pilot_symbols.len();
    match cfg.scheme {
        PilotScheme::Orthogonal => {
            for &t in &cfg.pilot_symbols {
                for k in 0..nsc {
                    let i = sf.idx(t, k, k % nt);
                    sf.x[i] = qpsk_pilot(pilot_rng);
                    sf.pilot_mask[i] = true;
                }
            }
        }
        PilotScheme::NonOrthogonal => {
            for k in 0..nsc {
                let block = draw_pilot_block(pilot_rng, tp, nt, cfg.modulation);
                for (ti, &t) in cfg.pilot_symbols.iter().enumerate() {
                    for s in 0..nt {
                        let i = sf.idx(t, k, s);
                        sf.x[i] = block[ti * nt + s];
                        sf.pilot_mask[i] = true;
                    }
                }
            }
        }
    }
    let data_symbols = sf.data_symbols.clone();
    for &t in &data_symbols {
        for k in 0..nsc {
            for s in 0..nt {
                let i = sf.idx(t, k, s);
                sf.x[i] = cfg.modulation.random_symbol(payload_rng, &mut sf.bits);
            }
        }
    }
    Ok(sf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(scheme: PilotScheme) -> Subframe {
        let cfg = SubframeConfig { scheme, ..SubframeConfig::default() };
        build_subframe(&cfg, &mut RngStream::new(1, 1), &mut RngStream::new(1, 2)).unwrap()
    }

    #[test]
    fn default_overhead_matches_table() {
        let cfg = SubframeConfig::default();
        assert_eq!(cfg.pilot_symbols.len(), 4);
        assert_eq!(cfg.data_symbols().len(), 10);
        assert_eq!(cfg.num_subcarriers, 1024);
        assert_eq!(cfg.num_symbols, 14);
    }

    #[test]
    fn orthogonal_comb_silences_other_stream() {
        let sf = build(PilotScheme::Orthogonal);
        for &t in &sf.config.pilot_symbols {
            for k in 0..sf.config.num_subcarriers {
                let x = sf.x(t, k);
                let own = k % 2;
                assert!((x[own].norm() - 1.0).abs() < 1e-12);
                assert_eq!(x[1 - own].norm(), 0.0);
                assert!(sf.is_pilot(t, k, own) && !sf.is_pilot(t, k, 1 - own));
            }
        }
    }

    #[test]
    fn non_orthogonal_all_streams_unit_power() {
        let sf = build(PilotScheme::NonOrthogonal);
        for &t in &sf.config.pilot_symbols {
            for k in 0..sf.config.num_subcarriers {
                for s in 0..2 {
                    assert!((sf.x(t, k)[s].norm_sqr() - 1.0).abs() < 1e-12);
                }
            }
        }
        assert_eq!(sf.pilot_count(0), 4 * 1024);
        assert_eq!(sf.pilot_count(1), 4 * 1024);
    }

    #[test]
    fn data_bits_reproduce_symbols() {
        let sf = build(PilotScheme::NonOrthogonal);
        let m = sf.config.modulation;
        let bps = m.bits_per_symbol();
        let mut i = 0;
        for &t in sf.data_symbols() {
            for k in 0..sf.config.num_subcarriers {
                for s in 0..sf.config.nt {
                    let b = &sf.data_bits()[i * bps..(i + 1) * bps];
                    let expect = m.map_bits(&b[..bps / 2], &b[bps / 2..]).unwrap();
                    assert_eq!(sf.x(t, k)[s], expect);
                    i += 1;
                }
            }
        }
        assert_eq!(sf.data_bits().len(), 10 * 1024 * 2 * 2);
    }

    #[test]
    fn non_orthogonal_blocks_are_well_conditioned() {
        let sf = build(PilotScheme::NonOrthogonal);
        for k in 0..sf.config.num_subcarriers {
            let mut g = [C64::new(0.0, 0.0); 4];
            for &t in &sf.config.pilot_symbols {
                let x = sf.x(t, k);
                for i in 0..2 {
                    for j in 0..2 {
                        g[i * 2 + j] += x[i].conj() * x[j];
                    }
                }
            }
            // Eigenvalues of [[4, c], [c*, 4]] are 4 +- |c|.
            assert!(g[1].norm() <= 2.0 + 1e-9, "subcarrier {k}: |c| = {}", g[1].norm());
        }
    }

    #[test]
    fn rejects_bad_pilot_positions() {
        let cfg = SubframeConfig { pilot_symbols: vec![5, 2], ..SubframeConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SubframeConfig { pilot_symbols: vec![14], ..SubframeConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
