//! Classical pilot-aided estimators: LS, stacked LS, empirical and genie
//! LMMSE (frequency-domain Wiener filtering per pilot symbol) and the
//! frequency-then-time linear grid interpolator they all share.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;

use crate::channel::{ChannelGrid, TapProcess};
use crate::error::{invalid, Error, Result};
use crate::numerics::{lstsq, CMat, Cholesky, C64};
use crate::phy::{PilotScheme, ReceivedGrid, Subframe};

/// Estimator identifiers, in the order results are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ls,
    EmLmmse,
    GenieLmmse,
    StackedLs,
    StructNet,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ls, Method::EmLmmse, Method::GenieLmmse, Method::StackedLs, Method::StructNet];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::EmLmmse => "em-lmmse",
            Method::GenieLmmse => "genie-lmmse",
            Method::StackedLs => "stacked-ls",
            Method::StructNet => "structnet-ce",
        }
    }

    /// Pilot scheme the method's subframe is built with.
    pub fn pilot_scheme(self) -> PilotScheme {
        match self {
            Method::Ls | Method::EmLmmse | Method::GenieLmmse => PilotScheme::Orthogonal,
            Method::StackedLs | Method::StructNet => PilotScheme::NonOrthogonal,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

/// Channel estimates at pilot resource elements, per stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimates {
    pub nr: usize,
    pub nt: usize,
    pub num_subcarriers: usize,
    pub num_symbols: usize,
    pub pilot_symbols: Vec<usize>,
    /// Sorted pilot subcarriers of each stream.
    pub subcarriers: Vec<Vec<usize>>,
    // Per stream: ((tp * n_sc + j) * nr + r).
    values: Vec<Vec<C64>>,
}

impl PilotEstimates {
    pub fn zeros(
        nr: usize,
        nt: usize,
        num_subcarriers: usize,
        num_symbols: usize,
        pilot_symbols: Vec<usize>,
        subcarriers: Vec<Vec<usize>>,
    ) -> Self {
        let tp = pilot_symbols.len();
        let values = subcarriers.iter().map(|ks| vec![C64::new(0.0, 0.0); tp * ks.len() * nr]).collect();
        Self { nr, nt, num_subcarriers, num_symbols, pilot_symbols, subcarriers, values }
    }

    /// Column estimate in `C^Nr` for stream `s`, pilot symbol index `tp`, pilot subcarrier index `j`.
    #[inline]
    pub fn value(&self, s: usize, tp: usize, j: usize) -> &[C64] {
        let o = (tp * self.subcarriers[s].len() + j) * self.nr;
        &self.values[s][o..o + self.nr]
    }

    #[inline]
    pub fn value_mut(&mut self, s: usize, tp: usize, j: usize) -> &mut [C64] {
        let o = (tp * self.subcarriers[s].len() + j) * self.nr;
        &mut self.values[s][o..o + self.nr]
    }

    /// Frequency vector of stream `s`, rx `r`, pilot symbol `tp`.
    pub fn frequency_vector(&self, s: usize, r: usize, tp: usize) -> Vec<C64> {
        (0..self.subcarriers[s].len()).map(|j| self.value(s, tp, j)[r]).collect()
    }

    fn set_frequency_vector(&mut self, s: usize, r: usize, tp: usize, v: &[C64]) {
        for (j, x) in v.iter().enumerate() {
            self.value_mut(s, tp, j)[r] = *x;
        }
    }

    /// A per-subcarrier static estimate (1-symbol grid), repeated on every pilot symbol.
    pub fn from_static(h: &ChannelGrid, num_symbols: usize, pilot_symbols: Vec<usize>) -> Self {
        let (nr, nt, nsc) = (h.nr(), h.nt(), h.subcarriers());
        let subcarriers = vec![(0..nsc).collect::<Vec<_>>(); nt];
        let mut out = Self::zeros(nr, nt, nsc, num_symbols, pilot_symbols, subcarriers);
        for s in 0..nt {
            for tp in 0..out.pilot_symbols.len() {
                for k in 0..nsc {
                    for r in 0..nr {
                        out.value_mut(s, tp, k)[r] = h.get(0, k, r, s);
                    }
                }
            }
        }
        out
    }

    /// Whether `(t, k)` is a measured pilot position of stream `s`.
    pub fn is_pilot_re(&self, t: usize, k: usize, s: usize) -> bool {
        self.pilot_symbols.contains(&t) && self.subcarriers[s].binary_search(&k).is_ok()
    }
}

/// Full-grid channel estimate with provenance.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub grid: ChannelGrid,
    pub method: Method,
    pub pilots: PilotEstimates,
    pub noise_var: Option<f64>,
}

/// Per-RE least squares `y / x_s` on comb pilots.
pub fn ls_estimate(y: &ReceivedGrid, sf: &Subframe) -> Result<PilotEstimates> {
    let cfg = &sf.config;
    if cfg.scheme != PilotScheme::Orthogonal {
        return Err(invalid("LS per-RE division needs orthogonal pilots"));
    }
    let subcarriers: Vec<Vec<usize>> = (0..cfg.nt).map(|s| cfg.pilot_subcarriers(s)).collect();
    let mut est =
        PilotEstimates::zeros(y.nr(), cfg.nt, cfg.num_subcarriers, cfg.num_symbols, cfg.pilot_symbols.clone(), subcarriers);
    for s in 0..cfg.nt {
        for (tp, &t) in cfg.pilot_symbols.iter().enumerate() {
            for j in 0..est.subcarriers[s].len() {
                let k = est.subcarriers[s][j];
                let x = sf.x(t, k)[s];
                if x.norm_sqr() == 0.0 {
                    return Err(invalid(format!("zero pilot at symbol {t}, subcarrier {k}")));
                }
                let yy = y.y(t, k);
                for (h, v) in est.value_mut(s, tp, j).iter_mut().zip(yy) {
                    *h = v / x;
                }
            }
        }
    }
    Ok(est)
}

/// Per-subcarrier least-squares fit over the pilot symbols, restricted to the
/// streams active at that subcarrier. Returns the 1-symbol estimate grid and
/// the residual sum of squares with its degrees of freedom.
fn fit_static(y: &ReceivedGrid, sf: &Subframe) -> Result<(ChannelGrid, f64, usize)> {
    let cfg = &sf.config;
    let nr = y.nr();
    let mut h = ChannelGrid::zeros(1, cfg.num_subcarriers, nr, cfg.nt);
    let (mut rss, mut dof) = (0.0, 0usize);
    let tp = cfg.pilot_symbols.len();
    for k in 0..cfg.num_subcarriers {
        let active = cfg.active_streams(k);
        if tp < active.len() {
            return Err(Error::SingularMatrix(format!("{tp} pilot symbols for {} streams", active.len())));
        }
        let a = CMat::from_fn(tp, active.len(), |i, j| sf.x(cfg.pilot_symbols[i], k)[active[j]]);
        for r in 0..nr {
            let b: Vec<C64> = cfg.pilot_symbols.iter().map(|&t| y.y(t, k)[r]).collect();
            let coef = lstsq(&a, &b).map_err(|e| match e {
                Error::SingularMatrix(_) => Error::SingularMatrix(format!("pilot matrix rank deficient at subcarrier {k}")),
                other => other,
            })?;
            let fit = a.mul_vec(&coef);
            rss += fit.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>();
            for (c, &s) in coef.iter().zip(&active) {
                h.set(0, k, r, s, *c);
            }
        }
        dof += nr * (tp - active.len());
    }
    Ok((h, rss, dof))
}

/// Stacked least squares over the pilot symbols of a non-orthogonal subframe,
/// assuming the channel is static across them. Output is a 1-symbol grid.
pub fn stacked_ls(y: &ReceivedGrid, sf: &Subframe) -> Result<ChannelGrid> {
    if sf.config.scheme != PilotScheme::NonOrthogonal {
        return Err(invalid("stacked LS expects non-orthogonal pilots"));
    }
    fit_static(y, sf).map(|(h, _, _)| h)
}

/// Noise variance from the residual of a static per-subcarrier pilot fit.
///
/// Works with either pilot scheme; zero degrees of freedom yields an error.
pub fn estimate_noise_var(y: &ReceivedGrid, sf: &Subframe) -> Result<f64> {
    let (_, rss, dof) = fit_static(y, sf)?;
    if dof == 0 {
        return Err(invalid("no residual degrees of freedom for noise estimation"));
    }
    Ok(rss / dof as f64)
}

fn interp_weights(positions: &[usize], x: usize) -> (usize, usize, f64) {
    let last = positions.len() - 1;
    if x <= positions[0] {
        return (0, 0, 0.0);
    }
    if x >= positions[last] {
        return (last, last, 0.0);
    }
    let hi = positions.partition_point(|&p| p <= x);
    let lo = hi - 1;
    let w = (x - positions[lo]) as f64 / (positions[hi] - positions[lo]) as f64;
    (lo, hi, w)
}

/// Linear interpolation across pilot subcarriers, then across pilot symbols,
/// holding the outermost value beyond the last pilot in either direction.
pub fn interpolate_grid(est: &PilotEstimates, method: Method) -> ChannelEstimate {
    let (nr, nt, nsc, nsym) = (est.nr, est.nt, est.num_subcarriers, est.num_symbols);
    let ntp = est.pilot_symbols.len();
    // freq[(tp * nsc + k) * nr * nt + r * nt + s]
    let mut freq = vec![C64::new(0.0, 0.0); ntp * nsc * nr * nt];
    for s in 0..nt {
        let ks = &est.subcarriers[s];
        if ks.is_empty() {
            continue;
        }
        for k in 0..nsc {
            let (lo, hi, w) = interp_weights(ks, k);
            for tp in 0..ntp {
                let (a, b) = (est.value(s, tp, lo), est.value(s, tp, hi));
                for r in 0..nr {
                    freq[(tp * nsc + k) * nr * nt + r * nt + s] = a[r] * (1.0 - w) + b[r] * w;
                }
            }
        }
    }
    let mut grid = ChannelGrid::zeros(nsym, nsc, nr, nt);
    let cell = nr * nt;
    for t in 0..nsym {
        let (lo, hi, w) = interp_weights(&est.pilot_symbols, t);
        for k in 0..nsc {
            let a = &freq[(lo * nsc + k) * cell..(lo * nsc + k + 1) * cell];
            let b = &freq[(hi * nsc + k) * cell..(hi * nsc + k + 1) * cell];
            for ((h, p), q) in grid.at_mut(t, k).iter_mut().zip(a).zip(b) {
                *h = p * (1.0 - w) + q * w;
            }
        }
    }
    ChannelEstimate { grid, method, pilots: est.clone(), noise_var: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Empirical,
    Genie,
}

/// Frequency correlation across pilot subcarriers.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub matrix: CMat,
    pub provenance: Provenance,
}

impl CorrelationModel {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

pub const DIAGONAL_LOADING: f64 = 1e-6;

/// Sample frequency correlation of LS pilot estimates over the most recent
/// `window` subframes, pooled over pilot symbols and (rx, tx) pairs,
/// Hermitian-symmetrized and diagonally loaded.
pub fn empirical_corr(history: &[PilotEstimates], window: usize) -> Result<CorrelationModel> {
    if history.is_empty() || window == 0 {
        return Err(invalid("empirical correlation needs at least one subframe"));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let n = recent[0].subcarriers[0].len();
    let mut acc = CMat::zeros(n, n);
    let mut count = 0usize;
    for est in recent {
        for s in 0..est.nt {
            if est.subcarriers[s].len() != n {
                return Err(invalid("pilot subcarrier counts differ between streams or subframes"));
            }
            for r in 0..est.nr {
                for tp in 0..est.pilot_symbols.len() {
                    let v = est.frequency_vector(s, r, tp);
                    for i in 0..n {
                        for j in 0..n {
                            acc[(i, j)] += v[i] * v[j].conj();
                        }
                    }
                    count += 1;
                }
            }
        }
    }
    let matrix = CMat::from_fn(n, n, |i, j| {
        let sym = 0.5 * (acc[(i, j)] + acc[(j, i)].conj()) / count as f64;
        if i == j {
            C64::new(sym.re + DIAGONAL_LOADING, 0.0)
        } else {
            sym
        }
    });
    Ok(CorrelationModel { matrix, provenance: Provenance::Empirical })
}

/// Closed-form `R[k,k'] = sum_p P_p exp(-j 2 pi (k - k') df tau_p)` on the given subcarriers.
pub fn genie_corr(taps: &TapProcess, subcarriers: &[usize], spacing_hz: f64) -> CorrelationModel {
    let matrix = CMat::from_fn(subcarriers.len(), subcarriers.len(), |i, j| {
        let lag = subcarriers[i] as f64 - subcarriers[j] as f64;
        taps.taps()
            .iter()
            .map(|tap| tap.power * C64::from_polar(1.0, -2.0 * PI * lag * spacing_hz * tap.delay_s))
            .sum()
    });
    CorrelationModel { matrix, provenance: Provenance::Genie }
}

/// Wiener filter `R (R + (s2 / rho) I)^-1 h_ls` along frequency, applied per
/// (stream, rx, pilot symbol).
pub fn lmmse_filter(est: &PilotEstimates, corr: &CorrelationModel, noise_var: f64, pilot_power: f64) -> Result<PilotEstimates> {
    let n = corr.dim();
    if est.subcarriers.iter().any(|ks| ks.len() != n) {
        return Err(invalid(format!("correlation dimension {n} does not match pilot subcarrier count")));
    }
    if !(pilot_power > 0.0) {
        return Err(invalid("pilot power must be positive"));
    }
    if noise_var == 0.0 {
        return Ok(est.clone());
    }
    let mut loaded = corr.matrix.clone();
    for i in 0..n {
        loaded[(i, i)] += noise_var / pilot_power;
    }
    let chol = Cholesky::new(&loaded)?;
    let mut out = est.clone();
    for s in 0..est.nt {
        for r in 0..est.nr {
            for tp in 0..est.pilot_symbols.len() {
                let w = chol.solve(&est.frequency_vector(s, r, tp));
                out.set_frequency_vector(s, r, tp, &corr.matrix.mul_vec(&w));
            }
        }
    }
    Ok(out)
}

/// Sliding window of per-subframe LS pilot estimates for em-LMMSE.
#[derive(Debug, Clone)]
pub struct EmHistory {
    window: usize,
    entries: VecDeque<PilotEstimates>,
}

impl EmHistory {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), entries: VecDeque::new() }
    }

    pub fn push(&mut self, est: PilotEstimates) {
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back(est);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn correlation(&mut self) -> Result<CorrelationModel> {
        empirical_corr(self.entries.make_contiguous(), self.window)
    }
}
