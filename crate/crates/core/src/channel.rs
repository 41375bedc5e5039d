//! Time-varying frequency-selective MIMO channel: tapped delay line with
//! Clarke/Jakes sum-of-sinusoids Doppler per tap.
//!
//! The channel is applied directly in the frequency domain and sampled once
//! per OFDM symbol (block fading within a symbol):
//!
//! ```text
//! H[t][k]_{r,c} = sum_p g_{r,c,p}(t * Ts) * exp(-j 2 pi k df tau_p)
//! ```
//!
//! Carrier frequency (3.5 GHz) and subcarrier spacing (15 kHz) are default
//! choices, not values fixed by any measurement campaign.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, Result};
use crate::numerics::{RngStream, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Maximum Doppler shift `v * fc / c`.
pub fn doppler_hz(speed_mps: f64, carrier_hz: f64) -> f64 {
    speed_mps * carrier_hz / SPEED_OF_LIGHT
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub nt: usize,
    pub nr: usize,
    pub num_taps: usize,
    /// Decay constant of the exponential power-delay profile, seconds.
    pub delay_spread_s: f64,
    pub carrier_hz: f64,
    pub speed_mps: f64,
    pub subcarrier_spacing_hz: f64,
    pub num_subcarriers: usize,
    pub symbols_per_subframe: usize,
    pub symbol_duration_s: f64,
    /// Sinusoids per tap in the Clarke generator.
    pub num_sinusoids: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let spacing = 15e3;
        Self {
            nt: 2,
            nr: 2,
            num_taps: 8,
            delay_spread_s: 100e-9,
            carrier_hz: 3.5e9,
            speed_mps: kmh_to_mps(5.0),
            subcarrier_spacing_hz: spacing,
            num_subcarriers: 1024,
            symbols_per_subframe: 14,
            symbol_duration_s: 1.0 / spacing,
            num_sinusoids: 32,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.nt) || !(1..=8).contains(&self.nr) {
            return Err(invalid(format!("antenna counts must be in 1..=8, got {}x{}", self.nr, self.nt)));
        }
        if self.num_taps == 0 || self.num_subcarriers == 0 || self.symbols_per_subframe == 0 || self.num_sinusoids == 0 {
            return Err(invalid("tap, subcarrier, symbol and sinusoid counts must be positive"));
        }
        let positive = [self.delay_spread_s, self.carrier_hz, self.subcarrier_spacing_hz, self.symbol_duration_s];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("delay spread, carrier, spacing and symbol duration must be positive"));
        }
        if !(self.speed_mps >= 0.0) || !self.speed_mps.is_finite() {
            return Err(invalid("speed must be non-negative"));
        }
        Ok(())
    }

    pub fn doppler_hz(&self) -> f64 {
        doppler_hz(self.speed_mps, self.carrier_hz)
    }

    /// Tap delays, uniformly spaced over `[0, 3 * delay_spread]`.
    pub fn tap_delays(&self) -> Vec<f64> {
        if self.num_taps == 1 {
            return vec![0.0];
        }
        let step = 3.0 * self.delay_spread_s / (self.num_taps - 1) as f64;
        (0..self.num_taps).map(|p| p as f64 * step).collect()
    }

    /// Exponential power-delay profile normalized to unit sum.
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.tap_delays().iter().map(|tau| (-tau / self.delay_spread_s).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: C64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay_s: f64,
    pub power: f64,
}

/// Per (rx, tx, tap) sum-of-sinusoids gain processes.
#[derive(Debug, Clone)]
pub struct TapProcess {
    nr: usize,
    nt: usize,
    taps: Vec<Tap>,
    // Indexed ((rx * nt + tx) * taps + p).
    components: Vec<Vec<Sinusoid>>,
}

impl TapProcess {
    /// Builds a process from explicit components, indexed `((rx * nt + tx) * taps.len() + p)`.
    pub fn from_components(nr: usize, nt: usize, taps: Vec<Tap>, components: Vec<Vec<Sinusoid>>) -> Result<Self> {
        if components.len() != nr * nt * taps.len() {
            return Err(invalid(format!(
                "expected {} tap components, got {}",
                nr * nt * taps.len(),
                components.len()
            )));
        }
        Ok(Self { nr, nt, taps, components })
    }

    /// Time-invariant taps with the given complex gain for every antenna pair.
    pub fn fixed(nr: usize, nt: usize, taps: Vec<Tap>, gains: &[C64]) -> Result<Self> {
        if gains.len() != taps.len() {
            return Err(invalid("one gain per tap required"));
        }
        let components = (0..nr * nt)
            .flat_map(|_| gains.iter().map(|&g| vec![Sinusoid { amplitude: g, freq_hz: 0.0 }]))
            .collect();
        Self::from_components(nr, nt, taps, components)
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn gain(&self, rx: usize, tx: usize, tap: usize, time_s: f64) -> C64 {
        self.components[(rx * self.nt + tx) * self.taps.len() + tap]
            .iter()
            .map(|s| s.amplitude * C64::from_polar(1.0, 2.0 * PI * s.freq_hz * time_s))
            .sum()
    }
}

/// Draws one TDL realization: exponential PDP and Clarke sum-of-sinusoids per tap.
pub fn generate_taps(cfg: &ChannelConfig, rng: &mut RngStream) -> Result<TapProcess> {
    cfg.validate()?;
    let fd = cfg.doppler_hz();
    let taps: Vec<Tap> = cfg
        .tap_delays()
        .into_iter()
        .zip(cfg.tap_powers())
        .map(|(delay_s, power)| Tap { delay_s, power })
        .collect();
    let ns = cfg.num_sinusoids;
    let mut components = Vec::with_capacity(cfg.nr * cfg.nt * taps.len());
    for _ in 0..cfg.nr * cfg.nt {
        for tap in &taps {
            let amp = (tap.power / ns as f64).sqrt();
            let sinusoids = (0..ns)
                .map(|_| {
                    let angle = 2.0 * PI * rng.uniform();
                    let phase = 2.0 * PI * rng.uniform();
                    Sinusoid { amplitude: C64::from_polar(amp, phase), freq_hz: fd * angle.cos() }
                })
                .collect();
            components.push(sinusoids);
        }
    }
    TapProcess::from_components(cfg.nr, cfg.nt, taps, components)
}

/// Dense `T x K` grid of `Nr x Nt` complex matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    symbols: usize,
    subcarriers: usize,
    nr: usize,
    nt: usize,
    data: Vec<C64>,
}

impl ChannelGrid {
    pub fn zeros(symbols: usize, subcarriers: usize, nr: usize, nt: usize) -> Self {
        Self { symbols, subcarriers, nr, nt, data: vec![C64::new(0.0, 0.0); symbols * subcarriers * nr * nt] }
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    #[inline]
    fn offset(&self, t: usize, k: usize) -> usize {
        (t * self.subcarriers + k) * self.nr * self.nt
    }

    /// `Nr x Nt` row-major matrix at resource element `(t, k)`.
    #[inline]
    pub fn at(&self, t: usize, k: usize) -> &[C64] {
        let o = self.offset(t, k);
        &self.data[o..o + self.nr * self.nt]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, k: usize) -> &mut [C64] {
        let o = self.offset(t, k);
        let n = self.nr * self.nt;
        &mut self.data[o..o + n]
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize, rx: usize, tx: usize) -> C64 {
        self.data[self.offset(t, k) + rx * self.nt + tx]
    }

    #[inline]
    pub fn set(&mut self, t: usize, k: usize, rx: usize, tx: usize, v: C64) {
        let o = self.offset(t, k) + rx * self.nt + tx;
        self.data[o] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn same_shape(&self, other: &ChannelGrid) -> bool {
        (self.symbols, self.subcarriers, self.nr, self.nt) == (other.symbols, other.subcarriers, other.nr, other.nt)
    }

    /// Writes the grid as CSV with header `t,k,rx,tx,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,k,rx,tx,re,im")?;
        for t in 0..self.symbols {
            for k in 0..self.subcarriers {
                for rx in 0..self.nr {
                    for tx in 0..self.nt {
                        let h = self.get(t, k, rx, tx);
                        writeln!(out, "{t},{k},{rx},{tx},{},{}", h.re, h.im)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth channel for one subframe.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub grid: ChannelGrid,
    pub config: ChannelConfig,
    /// Index of the first OFDM symbol relative to the tap process origin.
    pub first_symbol: usize,
}

/// Samples the tap processes on the subframe grid starting at symbol 0.
pub fn realize(taps: &TapProcess, cfg: &ChannelConfig) -> Result<ChannelRealization> {
    realize_at(taps, cfg, 0)
}

/// Samples the tap processes on a subframe starting at absolute symbol `first_symbol`.
pub fn realize_at(taps: &TapProcess, cfg: &ChannelConfig, first_symbol: usize) -> Result<ChannelRealization> {
    cfg.validate()?;
    if taps.nr != cfg.nr || taps.nt != cfg.nt {
        return Err(invalid("tap process antenna counts do not match config"));
    }
    let (nsym, nsc, l) = (cfg.symbols_per_subframe, cfg.num_subcarriers, taps.taps.len());
    // phase[k * l + p] = exp(-j 2 pi k df tau_p)
    let phase: Vec<C64> = (0..nsc)
        .flat_map(|k| {
            taps.taps
                .iter()
                .map(move |tap| C64::from_polar(1.0, -2.0 * PI * k as f64 * cfg.subcarrier_spacing_hz * tap.delay_s))
        })
        .collect();
    let mut grid = ChannelGrid::zeros(nsym, nsc, cfg.nr, cfg.nt);
    let mut gains = vec![C64::new(0.0, 0.0); cfg.nr * cfg.nt * l];
    for t in 0..nsym {
        let time = (first_symbol + t) as f64 * cfg.symbol_duration_s;
        for pair in 0..cfg.nr * cfg.nt {
            for p in 0..l {
                gains[pair * l + p] = taps.gain(pair / cfg.nt, pair % cfg.nt, p, time);
            }
        }
        for k in 0..nsc {
            let ph = &phase[k * l..(k + 1) * l];
            let cell = grid.at_mut(t, k);
            for (pair, h) in cell.iter_mut().enumerate() {
                *h = gains[pair * l..(pair + 1) * l].iter().zip(ph).map(|(g, e)| g * e).sum();
            }
        }
    }
    Ok(ChannelRealization { grid, config: cfg.clone(), first_symbol })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ChannelConfig {
        ChannelConfig { num_subcarriers: 64, ..ChannelConfig::default() }
    }

    #[test]
    fn doppler_values() {
        assert_eq!(doppler_hz(0.0, 3.5e9), 0.0);
        assert!((doppler_hz(1.389, 3.5e9) - 16.21).abs() < 0.01);
        assert!((doppler_hz(13.89, 3.5e9) - 162.1).abs() < 0.1);
        assert!((doppler_hz(kmh_to_mps(50.0), 3.5e9) - 162.1).abs() < 0.1);
    }

    #[test]
    fn pdp_is_normalized() {
        for taps in 1..12 {
            let cfg = ChannelConfig { num_taps: taps, ..small_cfg() };
            assert!((cfg.tap_powers().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_tap_is_flat() {
        let cfg = ChannelConfig { num_taps: 1, ..small_cfg() };
        let taps = generate_taps(&cfg, &mut RngStream::new(1, 2)).unwrap();
        let h = realize(&taps, &cfg).unwrap().grid;
        for t in 0..cfg.symbols_per_subframe {
            for k in 1..cfg.num_subcarriers {
                for (a, b) in h.at(t, k).iter().zip(h.at(t, 0)) {
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fixed_unit_tap_gives_all_ones() {
        let cfg = ChannelConfig { nt: 1, nr: 1, num_taps: 1, ..small_cfg() };
        let taps = TapProcess::fixed(1, 1, vec![Tap { delay_s: 0.0, power: 1.0 }], &[C64::new(1.0, 0.0)]).unwrap();
        let h = realize(&taps, &cfg).unwrap().grid;
        assert!(h.as_slice().iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn two_tap_response_is_periodic_in_k() {
        let cfg = ChannelConfig { nt: 1, nr: 1, num_taps: 2, num_subcarriers: 32, ..small_cfg() };
        let kk = cfg.num_subcarriers as f64;
        let tau = 1.0 / (kk * cfg.subcarrier_spacing_hz);
        let amp = C64::new(0.5f64.sqrt(), 0.0);
        let taps = TapProcess::fixed(
            1,
            1,
            vec![Tap { delay_s: 0.0, power: 0.5 }, Tap { delay_s: tau, power: 0.5 }],
            &[amp, amp],
        )
        .unwrap();
        // Sample two periods by extending the subcarrier count.
        let wide = ChannelConfig { num_subcarriers: 64, ..cfg.clone() };
        let h = realize(&taps, &wide).unwrap().grid;
        for k in 0..32 {
            let a = h.get(0, k, 0, 0);
            assert!((a.norm() - h.get(0, k + 32, 0, 0).norm()).abs() < 1e-12);
            // Closed form |1 + exp(-j 2 pi k / K)| / sqrt(2).
            let expected = (1.0 + C64::from_polar(1.0, -2.0 * PI * k as f64 / kk)).norm() * 0.5f64.sqrt();
            assert!((a.norm() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_speed_is_static_in_time() {
        let cfg = ChannelConfig { speed_mps: 0.0, ..small_cfg() };
        let taps = generate_taps(&cfg, &mut RngStream::new(5, 5)).unwrap();
        let h = realize(&taps, &cfg).unwrap().grid;
        for t in 1..cfg.symbols_per_subframe {
            for k in 0..cfg.num_subcarriers {
                assert_eq!(h.at(t, k), h.at(0, k));
            }
        }
    }

    #[test]
    fn same_seed_same_grid() {
        let cfg = small_cfg();
        let a = realize(&generate_taps(&cfg, &mut RngStream::new(9, 1)).unwrap(), &cfg).unwrap();
        let b = realize(&generate_taps(&cfg, &mut RngStream::new(9, 1)).unwrap(), &cfg).unwrap();
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn mean_power_near_unity() {
        let cfg = ChannelConfig { num_subcarriers: 16, symbols_per_subframe: 2, ..small_cfg() };
        let root = RngStream::new(77, 0);
        let mut acc = 0.0;
        let mut n = 0usize;
        for i in 0..1000 {
            let taps = generate_taps(&cfg, &mut root.derive(&[i])).unwrap();
            let h = realize(&taps, &cfg).unwrap().grid;
            acc += h.as_slice().iter().map(|v| v.norm_sqr()).sum::<f64>();
            n += h.as_slice().len();
        }
        let mean = acc / n as f64;
        assert!((0.97..=1.03).contains(&mean), "{mean}");
    }

    #[test]
    fn csv_export_rows() {
        let cfg = ChannelConfig { nt: 1, nr: 2, num_subcarriers: 3, symbols_per_subframe: 2, ..small_cfg() };
        let taps = generate_taps(&cfg, &mut RngStream::new(1, 1)).unwrap();
        let h = realize(&taps, &cfg).unwrap().grid;
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,k,rx,tx,re,im");
        assert_eq!(lines.len(), 1 + 2 * 3 * 2);
        assert!(lines[1].starts_with("0,0,0,0,"));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(ChannelConfig { nt: 9, ..small_cfg() }.validate().is_err());
        assert!(ChannelConfig { delay_spread_s: 0.0, ..small_cfg() }.validate().is_err());
        assert!(ChannelConfig { speed_mps: -1.0, ..small_cfg() }.validate().is_err());
    }
}
