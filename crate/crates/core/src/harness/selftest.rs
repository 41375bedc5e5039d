//! Built-in invariant suites, sized to finish in well under a minute.

use std::f64::consts::PI;
use std::time::Instant;

use crate::channel::{generate_taps, realize, ChannelConfig};
use crate::error::Result;
use crate::estimators::{genie_corr, lmmse_filter, PilotEstimates};
use crate::numerics::{RngStream, C64};
use crate::phy::Modulation;
use crate::structnet::gradcheck::{run_gradcheck, GradCheckConfig};
use crate::structnet::{channel_shift, interference_fold, Classifier, Dim, GradientFault, StructNetParams};

pub const FOLD_TOL: f64 = 1e-12;
pub const GRAD_TOL: f64 = 1e-5;
pub const LMMSE_TOL: f64 = 1e-10;
pub const STAT_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fold,
    Gradcheck,
    LmmseOracle,
    Jakes,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Fold, Suite::Gradcheck, Suite::LmmseOracle, Suite::Jakes];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Fold => "fold-invariance",
            Suite::Gradcheck => "gradcheck",
            Suite::LmmseOracle => "lmmse-oracle",
            Suite::Jakes => "jakes-statistics",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub passed: bool,
    /// Worst observed deviation against the suite's tolerance.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Corrupts the analytic gradient; the gradcheck suite must then fail.
    pub fault: GradientFault,
}

pub fn run_selftest(opts: &SelftestOptions) -> Vec<SuiteResult> {
    Suite::ALL.iter().map(|&s| run_suite(s, opts)).collect()
}

pub fn run_suite(suite: Suite, opts: &SelftestOptions) -> SuiteResult {
    let start = Instant::now();
    let (tolerance, outcome) = match suite {
        Suite::Fold => (FOLD_TOL, fold_suite(opts.seed)),
        Suite::Gradcheck => (GRAD_TOL, gradcheck_suite(opts)),
        Suite::LmmseOracle => (LMMSE_TOL, lmmse_suite(opts.seed)),
        Suite::Jakes => (STAT_TOL, jakes_suite(opts.seed)),
    };
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok((worst, detail)) => {
            SuiteResult { suite, passed: worst <= tolerance, worst, tolerance, detail, elapsed_ms }
        }
        Err(e) => SuiteResult {
            suite,
            passed: false,
            worst: f64::INFINITY,
            tolerance,
            detail: format!("error: {e}"),
            elapsed_ms,
        },
    }
}

fn fold_suite(seed: u64) -> Result<(f64, String)> {
    let mut rng = RngStream::new(seed, 0x666f_6c64);
    let mut worst = 0.0f64;
    let channels = 200;
    for m in [Modulation::Qpsk, Modulation::Qam16] {
        let a = m.base_amplitude();
        let points = m.constellation();
        for _ in 0..channels {
            let h: Vec<[C64; 2]> =
                (0..2).map(|_| [rng.complex_normal(1.0), rng.complex_normal(1.0)]).collect();
            let mut params = StructNetParams::new(2, 2, vec![0], Classifier::zeros(&[4, 16, 8, 1]), m)?;
            for (i, col) in h.iter().enumerate() {
                params.column_mut(i, 0).copy_from_slice(col);
            }
            let x0 = points[rng.below(points.len())];
            let label = if rng.sign() > 0 { 1 } else { -1 };
            let dim = if rng.sign() > 0 { Dim::Re } else { Dim::Im };
            let mut reference: Option<[C64; 2]> = None;
            for &x1 in &points {
                let y = [h[0][0] * x0 + h[1][0] * x1, h[0][1] * x0 + h[1][1] * x1];
                let mut r = [C64::new(0.0, 0.0); 2];
                channel_shift(&y, x0, &h[0], label, dim, a, &mut r);
                interference_fold(&mut r, &params, 0, 0, &mut [C64::new(0.0, 0.0); 2])?;
                match reference {
                    None => reference = Some(r),
                    Some(z) => {
                        worst = worst.max((z[0] - r[0]).norm()).max((z[1] - r[1]).norm());
                    }
                }
            }
        }
    }
    Ok((worst, format!("{} channels x (QPSK, 16-QAM), max |dz| = {worst:.2e}", channels)))
}

fn gradcheck_suite(opts: &SelftestOptions) -> Result<(f64, String)> {
    let cfg = GradCheckConfig { points: 20, seed: opts.seed, fault: opts.fault, ..GradCheckConfig::default() };
    let r = run_gradcheck(&cfg)?;
    Ok((
        r.max_rel(),
        format!(
            "{} points, max rel err channel {:.2e}, classifier {:.2e}",
            r.points, r.max_rel_channel, r.max_rel_classifier
        ),
    ))
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn gauss_jordan(mut a: Vec<Vec<C64>>, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        b[col] /= d;
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[row].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                let bc = b[col];
                b[row] -= f * bc;
            }
        }
    }
    b
}

/// Genie LMMSE on a 4-subcarrier toy equals the jointly Gaussian conditional
/// mean `R (R + s2 I)^-1 h_ls`, solved independently.
fn lmmse_suite(seed: u64) -> Result<(f64, String)> {
    let mut rng = RngStream::new(seed, 0x6c6d_6d73);
    let mut worst = 0.0f64;
    let cases = 50;
    for _ in 0..cases {
        let cfg = ChannelConfig { num_subcarriers: 4, ..ChannelConfig::default() };
        let taps = generate_taps(&cfg, &mut rng)?;
        let ks = vec![0, 1, 2, 3];
        let corr = genie_corr(&taps, &ks, cfg.subcarrier_spacing_hz);
        let s2 = 0.05 + rng.uniform();
        let mut est = PilotEstimates::zeros(1, 1, 4, 1, vec![0], vec![ks.clone()]);
        for j in 0..4 {
            est.value_mut(0, 0, j)[0] = rng.complex_normal(1.0);
        }
        let filtered = lmmse_filter(&est, &corr, s2, 1.0)?;
        let r = |i: usize, j: usize| corr.matrix.row(i)[j];
        let loaded: Vec<Vec<C64>> =
            (0..4).map(|i| (0..4).map(|j| r(i, j) + if i == j { C64::new(s2, 0.0) } else { C64::new(0.0, 0.0) }).collect()).collect();
        let w = gauss_jordan(loaded, est.frequency_vector(0, 0, 0));
        for i in 0..4 {
            let expect: C64 = (0..4).map(|j| r(i, j) * w[j]).sum();
            worst = worst.max((expect - filtered.value(0, 0, i)[0]).norm());
        }
    }
    Ok((worst, format!("{cases} random K=4 instances, max |diff| = {worst:.2e}")))
}

/// Bessel J0 by its power series; accurate to ~1e-15 for |x| < 10.
fn bessel_j0(x: f64) -> f64 {
    let q = -(x * x) / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for m in 1..60 {
        term *= q / (m * m) as f64;
        sum += term;
    }
    sum
}

/// Reduced-scale temporal and frequency correlation of the TDL generator.
fn jakes_suite(seed: u64) -> Result<(f64, String)> {
    let realizations = 2000;
    let cfg = ChannelConfig {
        nr: 1,
        nt: 1,
        num_subcarriers: 16,
        symbols_per_subframe: 1,
        speed_mps: 30.0,
        ..ChannelConfig::default()
    };
    let fd = cfg.doppler_hz();
    let lags = [0.1, 0.25, 0.4, 0.6];
    let freq_lags = [1usize, 4, 15];
    let mut time_acc = vec![C64::new(0.0, 0.0); lags.len()];
    let mut freq_acc = vec![C64::new(0.0, 0.0); freq_lags.len()];
    let (mut p0, mut pk) = (0.0, 0.0);
    let mut rng = RngStream::new(seed, 0x6a61_6b65);
    let taps0 = generate_taps(&cfg, &mut rng.clone())?;
    for _ in 0..realizations {
        let taps = generate_taps(&cfg, &mut rng)?;
        for tap in 0..taps.taps().len() {
            let g0 = taps.gain(0, 0, tap, 0.0);
            p0 += g0.norm_sqr();
            for (acc, &l) in time_acc.iter_mut().zip(&lags) {
                *acc += taps.gain(0, 0, tap, l / fd) * g0.conj();
            }
        }
        let grid = realize(&taps, &cfg)?.grid;
        let h0 = grid.get(0, 0, 0, 0);
        pk += h0.norm_sqr();
        for (acc, &d) in freq_acc.iter_mut().zip(&freq_lags) {
            *acc += grid.get(0, d, 0, 0) * h0.conj();
        }
    }
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for (acc, &l) in time_acc.iter().zip(&lags) {
        let est = acc / p0;
        let dev = (est - C64::new(bessel_j0(2.0 * PI * l), 0.0)).norm();
        worst = worst.max(dev);
        detail += &format!("fd*tau={l}: {:.3} ", est.re);
    }
    let closed = genie_corr(&taps0, &[0, 1, 4, 15], cfg.subcarrier_spacing_hz);
    let total: f64 = taps0.taps().iter().map(|t| t.power).sum();
    for (acc, (i, _)) in freq_acc.iter().zip(freq_lags.iter().enumerate()) {
        let est = acc / pk;
        let expect = closed.matrix.row(i + 1)[0] / total;
        worst = worst.max((est - expect).norm());
    }
    detail += &format!("| {realizations} realizations, max dev {worst:.3}");
    Ok((worst, detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_known_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j0(2.404_825_557_695_773)).abs() < 1e-13);
    }

    #[test]
    fn gauss_jordan_solves() {
        let c = |r: f64, i: f64| C64::new(r, i);
        let a = vec![vec![c(0.0, 0.0), c(2.0, 1.0)], vec![c(1.0, 0.0), c(1.0, -1.0)]];
        let x = [c(1.0, 2.0), c(-0.5, 0.25)];
        let b = vec![a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]];
        let got = gauss_jordan(a, b);
        assert!((got[0] - x[0]).norm() < 1e-14 && (got[1] - x[1]).norm() < 1e-14);
    }

    #[test]
    fn all_suites_pass() {
        for r in run_selftest(&SelftestOptions::default()) {
            assert!(r.passed, "{:?}: {}", r.suite, r.detail);
        }
    }

    #[test]
    fn fault_injection_fails_gradcheck_only() {
        let opts = SelftestOptions { seed: 0, fault: GradientFault::ScaleChannel(1.01) };
        let r = run_suite(Suite::Gradcheck, &opts);
        assert!(!r.passed, "{}", r.detail);
        assert!(run_suite(Suite::Fold, &opts).passed);
    }
}
