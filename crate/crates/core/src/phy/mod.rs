//! Frequency-domain physical layer: modulation, subframe construction,
//! channel application with AWGN, MMSE equalization and link metrics.

mod modulation;
mod subframe;

pub use modulation::Modulation;
pub use subframe::{build_subframe, PilotScheme, Subframe, SubframeConfig};

use crate::channel::{ChannelGrid, ChannelRealization};
use crate::error::{invalid, Result};
use crate::numerics::{ratio_to_db, solve_hermitian, CMat, RngStream, C64};

/// Noise variance per receive antenna for a target SNR, assuming unit
/// average channel gain and unit-power symbols on each of `nt` streams.
/// An infinite SNR yields zero noise.
pub fn noise_var_from_snr(snr_db: f64, nt: usize) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        nt as f64 * 10f64.powf(-snr_db / 10.0)
    }
}

/// Received frequency-domain grid `Y[t][k]` in `C^Nr`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedGrid {
    symbols: usize,
    subcarriers: usize,
    nr: usize,
    data: Vec<C64>,
    pub noise_var: f64,
}

impl ReceivedGrid {
    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    #[inline]
    pub fn y(&self, t: usize, k: usize) -> &[C64] {
        let o = (t * self.subcarriers + k) * self.nr;
        &self.data[o..o + self.nr]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }
}

/// Noiseless `H x` on every resource element.
pub fn apply_channel(h: &ChannelGrid, sf: &Subframe) -> Result<ReceivedGrid> {
    let cfg = &sf.config;
    if h.symbols() != cfg.num_symbols || h.subcarriers() != cfg.num_subcarriers || h.nt() != cfg.nt {
        return Err(invalid("channel grid does not match subframe dimensions"));
    }
    let (nr, nt) = (h.nr(), h.nt());
    let mut data = Vec::with_capacity(cfg.num_symbols * cfg.num_subcarriers * nr);
    for t in 0..cfg.num_symbols {
        for k in 0..cfg.num_subcarriers {
            let hm = h.at(t, k);
            let x = sf.x(t, k);
            for r in 0..nr {
                data.push(hm[r * nt..(r + 1) * nt].iter().zip(x).map(|(a, b)| a * b).sum());
            }
        }
    }
    Ok(ReceivedGrid { symbols: cfg.num_symbols, subcarriers: cfg.num_subcarriers, nr, data, noise_var: 0.0 })
}

/// `Y = H X + n` with circularly-symmetric Gaussian noise of variance
/// `noise_var_from_snr(snr_db, nt)` per receive antenna.
pub fn transmit(
    sf: &Subframe,
    realization: &ChannelRealization,
    snr_db: f64,
    noise_rng: &mut RngStream,
) -> Result<ReceivedGrid> {
    let var = noise_var_from_snr(snr_db, sf.config.nt);
    let mut rx = apply_channel(&realization.grid, sf)?;
    if var > 0.0 {
        for y in rx.data.iter_mut() {
            *y += noise_rng.complex_normal(var);
        }
    }
    rx.noise_var = var;
    Ok(rx)
}

/// Builds a received grid from raw samples, for tests and external data.
pub fn received_from_raw(symbols: usize, subcarriers: usize, nr: usize, data: Vec<C64>, noise_var: f64) -> Result<ReceivedGrid> {
    if data.len() != symbols * subcarriers * nr {
        return Err(invalid("received sample count does not match dimensions"));
    }
    Ok(ReceivedGrid { symbols, subcarriers, nr, data, noise_var })
}

/// Linear MMSE soft symbols `(H^H H + s2 I)^-1 H^H y` on every data RE.
///
/// Output is ordered (data symbol, subcarrier, stream).
pub fn mmse_equalize(y: &ReceivedGrid, h_est: &ChannelGrid, noise_var: f64, data_symbols: &[usize]) -> Result<Vec<C64>> {
    let (nr, nt) = (h_est.nr(), h_est.nt());
    if y.nr != nr || y.subcarriers != h_est.subcarriers() || y.symbols != h_est.symbols() {
        return Err(invalid("received grid does not match channel estimate"));
    }
    let mut out = Vec::with_capacity(data_symbols.len() * y.subcarriers * nt);
    for &t in data_symbols {
        for k in 0..y.subcarriers {
            let h = h_est.at(t, k);
            let yy = y.y(t, k);
            let gram = CMat::from_fn(nt, nt, |i, j| {
                let g: C64 = (0..nr).map(|r| h[r * nt + i].conj() * h[r * nt + j]).sum();
                if i == j {
                    g + noise_var
                } else {
                    g
                }
            });
            let rhs: Vec<C64> = (0..nt).map(|i| (0..nr).map(|r| h[r * nt + i].conj() * yy[r]).sum()).collect();
            out.extend(solve_hermitian(&gram, &rhs)?);
        }
    }
    Ok(out)
}

/// Hard per-dimension decisions on soft symbols, as bits in payload order.
pub fn hard_demap(soft: &[C64], modulation: Modulation) -> Vec<i8> {
    let mut bits = Vec::with_capacity(soft.len() * modulation.bits_per_symbol());
    for s in soft {
        bits.extend(modulation.slice_dim(s.re));
        bits.extend(modulation.slice_dim(s.im));
    }
    bits
}

/// Fraction of differing bits.
pub fn ber(tx_bits: &[i8], rx_bits: &[i8]) -> Result<f64> {
    if tx_bits.len() != rx_bits.len() {
        return Err(invalid(format!("bit vectors differ in length: {} vs {}", tx_bits.len(), rx_bits.len())));
    }
    if tx_bits.is_empty() {
        return Ok(0.0);
    }
    let errors = tx_bits.iter().zip(rx_bits).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / tx_bits.len() as f64)
}

/// Linear NMSE over the `(t, k, stream)` columns selected by `include`.
pub fn nmse_ratio_masked(
    est: &ChannelGrid,
    truth: &ChannelGrid,
    mut include: impl FnMut(usize, usize, usize) -> bool,
) -> Result<f64> {
    if !est.same_shape(truth) {
        return Err(invalid("estimate and truth grids differ in shape"));
    }
    let (mut err, mut pow) = (0.0, 0.0);
    for t in 0..truth.symbols() {
        for k in 0..truth.subcarriers() {
            for s in 0..truth.nt() {
                if !include(t, k, s) {
                    continue;
                }
                for r in 0..truth.nr() {
                    let h = truth.get(t, k, r, s);
                    err += (est.get(t, k, r, s) - h).norm_sqr();
                    pow += h.norm_sqr();
                }
            }
        }
    }
    if !(pow > 0.0) {
        return Err(invalid("reference channel has zero energy"));
    }
    Ok(err / pow)
}

pub fn nmse_ratio(est: &ChannelGrid, truth: &ChannelGrid) -> Result<f64> {
    nmse_ratio_masked(est, truth, |_, _, _| true)
}

/// `10 log10(sum |H_est - H|^2 / sum |H|^2)`, floored at the `-300 dB` sentinel.
pub fn nmse_db(est: &ChannelGrid, truth: &ChannelGrid) -> Result<f64> {
    nmse_ratio(est, truth).map(ratio_to_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_taps, realize, ChannelConfig};

    fn grid_from(nr: usize, nt: usize, k: usize, f: impl Fn(usize, usize, usize, usize) -> C64) -> ChannelGrid {
        let mut g = ChannelGrid::zeros(1, k, nr, nt);
        for kk in 0..k {
            for r in 0..nr {
                for c in 0..nt {
                    g.set(0, kk, r, c, f(0, kk, r, c));
                }
            }
        }
        g
    }

    #[test]
    fn noise_var_examples() {
        assert!((noise_var_from_snr(10.0, 1) - 0.1).abs() < 1e-15);
        assert!((noise_var_from_snr(0.0, 2) - 2.0).abs() < 1e-15);
        assert_eq!(noise_var_from_snr(f64::INFINITY, 2), 0.0);
    }

    #[test]
    fn nmse_examples() {
        let h = grid_from(2, 2, 8, |_, k, r, c| C64::new(1.0 + k as f64, (r + c) as f64));
        assert_eq!(nmse_db(&h, &h).unwrap(), -300.0);
        let zero = ChannelGrid::zeros(1, 8, 2, 2);
        assert!(nmse_db(&zero, &h).unwrap().abs() < 1e-12);
        // Error energy exactly 1% of the truth.
        let total: f64 = h.as_slice().iter().map(|v| v.norm_sqr()).sum();
        let n = h.as_slice().len() as f64;
        let e = (0.01 * total / n).sqrt();
        let noisy = grid_from(2, 2, 8, |t, k, r, c| h.get(t, k, r, c) + C64::new(e, 0.0));
        assert!((nmse_db(&noisy, &h).unwrap() + 20.0).abs() < 1e-9);
        assert!(nmse_db(&h, &zero).is_err());
    }

    #[test]
    fn ber_examples() {
        let a = vec![1, -1, 1, 1];
        assert_eq!(ber(&a, &a).unwrap(), 0.0);
        let comp: Vec<i8> = a.iter().map(|b| -b).collect();
        assert_eq!(ber(&a, &comp).unwrap(), 1.0);
        assert_eq!(ber(&a, &[1, -1, -1, -1]).unwrap(), 0.5);
        assert!(ber(&a, &[1]).is_err());
    }

    fn unit_flat_siso() -> (ChannelRealization, Subframe) {
        let cfg = ChannelConfig { nt: 1, nr: 1, num_taps: 1, num_subcarriers: 16, ..ChannelConfig::default() };
        let taps =
            crate::channel::TapProcess::fixed(1, 1, vec![crate::channel::Tap { delay_s: 0.0, power: 1.0 }], &[C64::new(1.0, 0.0)])
                .unwrap();
        let real = realize(&taps, &cfg).unwrap();
        let scfg = SubframeConfig { num_subcarriers: 16, nt: 1, ..SubframeConfig::default() };
        let sf = build_subframe(&scfg, &mut RngStream::new(2, 0), &mut RngStream::new(2, 1)).unwrap();
        (real, sf)
    }

    #[test]
    fn noiseless_unit_channel_passes_x() {
        let (real, sf) = unit_flat_siso();
        let y = transmit(&sf, &real, f64::INFINITY, &mut RngStream::new(0, 0)).unwrap();
        for t in 0..14 {
            for k in 0..16 {
                assert_eq!(y.y(t, k)[0], sf.x(t, k)[0]);
            }
        }
    }

    #[test]
    fn transmit_is_deterministic_and_linear() {
        let cfg = ChannelConfig { num_subcarriers: 32, ..ChannelConfig::default() };
        let real = realize(&generate_taps(&cfg, &mut RngStream::new(3, 3)).unwrap(), &cfg).unwrap();
        let scfg = SubframeConfig { num_subcarriers: 32, ..SubframeConfig::default() };
        let sf = build_subframe(&scfg, &mut RngStream::new(4, 0), &mut RngStream::new(4, 1)).unwrap();
        let a = transmit(&sf, &real, 10.0, &mut RngStream::new(8, 8)).unwrap();
        let b = transmit(&sf, &real, 10.0, &mut RngStream::new(8, 8)).unwrap();
        assert_eq!(a, b);

        let alpha = C64::new(-0.7, 1.3);
        let y1 = apply_channel(&real.grid, &sf.scaled(alpha)).unwrap();
        let y0 = apply_channel(&real.grid, &sf).unwrap();
        for (p, q) in y1.as_slice().iter().zip(y0.as_slice()) {
            assert!((p - alpha * q).norm() < 1e-12);
        }
    }

    #[test]
    fn empirical_noise_variance() {
        let (real, sf) = unit_flat_siso();
        let clean = apply_channel(&real.grid, &sf).unwrap();
        let mut rng = RngStream::new(12, 0);
        let mut acc = 0.0;
        let mut n = 0;
        for _ in 0..200 {
            let y = transmit(&sf, &real, 10.0, &mut rng).unwrap();
            acc += y.as_slice().iter().zip(clean.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            n += y.as_slice().len();
        }
        let var = acc / n as f64;
        assert!((var / 0.1 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn measured_snr_matches_target() {
        let cfg = ChannelConfig { num_subcarriers: 64, symbols_per_subframe: 14, ..ChannelConfig::default() };
        let scfg = SubframeConfig { num_subcarriers: 64, ..SubframeConfig::default() };
        let root = RngStream::new(21, 0);
        let (mut sig, mut res) = (0.0, 0.0);
        for i in 0..12 {
            let real = realize(&generate_taps(&cfg, &mut root.derive(&[i, 0])).unwrap(), &cfg).unwrap();
            let sf = build_subframe(&scfg, &mut root.derive(&[i, 1]), &mut root.derive(&[i, 2])).unwrap();
            let clean = apply_channel(&real.grid, &sf).unwrap();
            let y = transmit(&sf, &real, 10.0, &mut root.derive(&[i, 3])).unwrap();
            sig += clean.as_slice().iter().map(|v| v.norm_sqr()).sum::<f64>();
            res += y.as_slice().iter().zip(clean.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        let snr = 10.0 * (sig / res).log10();
        assert!((snr - 10.0).abs() < 10.0 * (1.05f64).log10(), "{snr}");
    }

    #[test]
    fn mmse_noiseless_recovers_symbols() {
        let cfg = ChannelConfig { num_subcarriers: 16, ..ChannelConfig::default() };
        let real = realize(&generate_taps(&cfg, &mut RngStream::new(6, 0)).unwrap(), &cfg).unwrap();
        let scfg = SubframeConfig { num_subcarriers: 16, ..SubframeConfig::default() };
        let sf = build_subframe(&scfg, &mut RngStream::new(6, 1), &mut RngStream::new(6, 2)).unwrap();
        let y = transmit(&sf, &real, f64::INFINITY, &mut RngStream::new(6, 3)).unwrap();
        let soft = mmse_equalize(&y, &real.grid, 1e-14, sf.data_symbols()).unwrap();
        let mut i = 0;
        for &t in sf.data_symbols() {
            for k in 0..16 {
                for s in 0..2 {
                    assert!((soft[i] - sf.x(t, k)[s]).norm() < 1e-6);
                    i += 1;
                }
            }
        }
        let bits = hard_demap(&soft, sf.config.modulation);
        assert_eq!(ber(sf.data_bits(), &bits).unwrap(), 0.0);
    }

    #[test]
    fn mmse_high_snr_zero_ber() {
        let cfg = ChannelConfig { num_subcarriers: 128, ..ChannelConfig::default() };
        let real = realize(&generate_taps(&cfg, &mut RngStream::new(7, 0)).unwrap(), &cfg).unwrap();
        let scfg = SubframeConfig { num_subcarriers: 128, ..SubframeConfig::default() };
        let sf = build_subframe(&scfg, &mut RngStream::new(7, 1), &mut RngStream::new(7, 2)).unwrap();
        let y = transmit(&sf, &real, 40.0, &mut RngStream::new(7, 3)).unwrap();
        let soft = mmse_equalize(&y, &real.grid, y.noise_var, sf.data_symbols()).unwrap();
        let b = ber(sf.data_bits(), &hard_demap(&soft, sf.config.modulation)).unwrap();
        assert!(b < 1e-3, "{b}");
    }

    #[test]
    fn mmse_zero_channel() {
        let (real, sf) = unit_flat_siso();
        let y = transmit(&sf, &real, 10.0, &mut RngStream::new(1, 0)).unwrap();
        let zero = ChannelGrid::zeros(14, 16, 1, 1);
        assert!(mmse_equalize(&y, &zero, 0.0, sf.data_symbols()).is_err());
        let soft = mmse_equalize(&y, &zero, 0.1, sf.data_symbols()).unwrap();
        assert!(soft.iter().all(|v| v.norm() == 0.0));
    }
}
