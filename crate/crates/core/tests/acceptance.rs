//! Acceptance criteria A1-A9, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line reaches stdout. A4 runs at
//! K = 256 by default; set `STRUCTNET_ACCEPTANCE_FULL=1` for K = 1024.
//! Pass a substring (e.g. `cargo test --test acceptance -- A7`) to select criteria.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use structnet_core::channel::{generate_taps, realize, ChannelConfig};
use structnet_core::estimators::{genie_corr, lmmse_filter, Method, PilotEstimates};
use structnet_core::harness::{run_records, run_sweep_to, summarize, ExperimentConfig, SummaryRow};
use structnet_core::numerics::{RngStream, C64};
use structnet_core::phy::{build_subframe, transmit, Modulation, PilotScheme, SubframeConfig};
use structnet_core::structnet::gradcheck::{run_gradcheck, GradCheckConfig};
use structnet_core::structnet::{
    build_training_set, channel_shift, forward, interference_fold, train_subframe, Classifier, Dim, InitMode,
    StructNetParams, TrainConfig,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn within_budget(v: Verdict, start: Instant, budget_s: f64) -> Verdict {
    let s = start.elapsed().as_secs_f64();
    let budget = if budget_s.is_finite() { format!(" (budget {budget_s} s)") } else { String::new() };
    verdict(v.passed && s <= budget_s, format!("{}; {s:.1} s{budget}", v.detail))
}

fn mean_db(rows: &[SummaryRow], snr: f64, m: Method) -> f64 {
    rows.iter().find(|r| r.snr_db == snr && r.method == m).map(|r| r.nmse_full_db).unwrap_or(f64::NAN)
}

fn a1_fold_invariance() -> Verdict {
    let mut rng = RngStream::new(11, 1);
    let mut worst = 0.0f64;
    let channels = 1000;
    for m in [Modulation::Qpsk, Modulation::Qam16] {
        let a = m.base_amplitude();
        let points = m.constellation();
        for _ in 0..channels {
            let cols: Vec<Vec<C64>> = (0..2).map(|_| (0..2).map(|_| rng.complex_normal(1.0)).collect()).collect();
            let mut params = StructNetParams::new(2, 2, vec![0], Classifier::zeros(&[4, 16, 8, 1]), m).unwrap();
            for (i, c) in cols.iter().enumerate() {
                params.column_mut(i, 0).copy_from_slice(c);
            }
            let x0 = points[rng.below(points.len())];
            for dim in [Dim::Re, Dim::Im] {
                for label in [-1i8, 1] {
                    let mut first: Option<Vec<C64>> = None;
                    for &x1 in &points {
                        let y: Vec<C64> = (0..2).map(|r| cols[0][r] * x0 + cols[1][r] * x1).collect();
                        let mut z = vec![C64::new(0.0, 0.0); 2];
                        channel_shift(&y, x0, &cols[0], label, dim, a, &mut z);
                        interference_fold(&mut z, &params, 0, 0, &mut [C64::new(0.0, 0.0); 2]).unwrap();
                        match &first {
                            None => first = Some(z),
                            Some(f) => {
                                for (p, q) in f.iter().zip(&z) {
                                    worst = worst.max((p - q).norm());
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    verdict(worst <= 1e-12, format!("{channels} channels x QPSK/16-QAM, max deviation {worst:.2e} (tol 1e-12)"))
}

fn a2_gradients() -> Verdict {
    let r = run_gradcheck(&GradCheckConfig { points: 100, ..GradCheckConfig::default() }).unwrap();
    verdict(
        r.passed(1e-5) && r.points == 100,
        format!(
            "{} points, max rel err channel {:.2e}, classifier {:.2e} (tol 1e-5)",
            r.points, r.max_rel_channel, r.max_rel_classifier
        ),
    )
}

fn a3_weight_alignment() -> Verdict {
    let subframes = 20u64;
    let ccfg = ChannelConfig { speed_mps: 0.0, ..ChannelConfig::default() };
    let scfg = SubframeConfig::default().with_scheme(PilotScheme::NonOrthogonal);
    let tcfg = TrainConfig { epochs: 10, init: InitMode::StackedLs, ..TrainConfig::default() };
    let mut worst_share = 1.0f64;
    let mut worst_acc = 1.0f64;
    let mut all = Vec::new();
    for sfi in 0..subframes {
        let root = RngStream::new(31, 3).derive(&[sfi]);
        let taps = generate_taps(&ccfg, &mut root.derive(&[0])).unwrap();
        let real = realize(&taps, &ccfg).unwrap();
        let sf = build_subframe(&scfg, &mut root.derive(&[1]), &mut root.derive(&[2])).unwrap();
        let y = transmit(&sf, &real, f64::INFINITY, &mut root.derive(&[3])).unwrap();
        let (params, _) = train_subframe(&y, &sf, &tcfg, &mut root.derive(&[4])).unwrap();
        let set = build_training_set(&sf, &y).unwrap();
        let (full, _) = train_subframe(&y, &sf, &TrainConfig::default(), &mut root.derive(&[5])).unwrap();
        let correct =
            set.samples.iter().filter(|s| (forward(&set, s, &full).unwrap() >= 0.0) == (s.label > 0)).count();
        worst_acc = worst_acc.min(correct as f64 / set.len() as f64);
        let mut good = 0;
        for (j, &k) in params.subcarriers.iter().enumerate() {
            let (mut err, mut pow) = (0.0, 0.0);
            for i in 0..params.nt {
                for (r, w) in params.column(i, j).iter().enumerate() {
                    // Noiseless and static: the stacked-LS oracle is the true channel.
                    let h = real.grid.get(0, k, r, i);
                    err += (w - h).norm_sqr();
                    pow += h.norm_sqr();
                }
            }
            let db = 10.0 * (err / pow).log10();
            all.push(db);
            if db <= -25.0 {
                good += 1;
            }
        }
        worst_share = worst_share.min(good as f64 / params.subcarriers.len() as f64);
    }
    all.sort_by(f64::total_cmp);
    let median = all[all.len() / 2];
    verdict(
        worst_share >= 0.95 && worst_acc >= 0.999,
        format!(
            "{subframes} subframes K=1024, {} epochs: worst share of subcarriers <= -25 dB {:.1}% (need >= 95%), \
             median {median:.1} dB; default-config training accuracy worst {:.4} (need >= 0.999)",
            tcfg.epochs,
            100.0 * worst_share,
            worst_acc
        ),
    )
}

fn a4_ordering() -> Verdict {
    let full = std::env::var_os("STRUCTNET_ACCEPTANCE_FULL").is_some_and(|v| v != "0");
    let mut cfg = ExperimentConfig::default();
    cfg.set_subcarriers(if full { 1024 } else { 256 });
    cfg.trials = 100;
    cfg.snr_db = vec![10.0, 15.0, 20.0];
    cfg.methods = vec![Method::Ls, Method::EmLmmse, Method::StructNet];
    cfg.train.smoothness = 1.0;
    cfg.seed = 4;
    let recs = run_records(&cfg).unwrap();
    let rows = summarize(&cfg, &recs);
    let mut ok = rows.iter().all(|r| r.trials == cfg.trials);
    let mut parts = Vec::new();
    for &snr in &cfg.snr_db {
        let (ls, em, sn) =
            (mean_db(&rows, snr, Method::Ls), mean_db(&rows, snr, Method::EmLmmse), mean_db(&rows, snr, Method::StructNet));
        ok &= sn <= ls - 0.5 && sn <= em - 0.5;
        parts.push(format!("{snr} dB: sn {sn:.2} / ls {ls:.2} / em {em:.2}"));
    }
    let fallbacks = recs.iter().filter(|r| r.fallback).count();
    verdict(
        ok,
        format!(
            "K={} x {} subframes, margin >= 0.5 dB: {}; fallbacks {fallbacks}",
            cfg.channel.num_subcarriers,
            cfg.trials,
            parts.join(", ")
        ),
    )
}

fn gauss_jordan(mut a: Vec<Vec<C64>>, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].norm().total_cmp(&a[j][c].norm())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        let d = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d);
        b[c] /= d;
        let (pr, pb) = (a[c].clone(), b[c]);
        for r in (0..n).filter(|&r| r != c) {
            let f = a[r][c];
            a[r].iter_mut().zip(&pr).for_each(|(v, q)| *v -= f * q);
            b[r] -= f * pb;
        }
    }
    b
}

/// Exponential PDP on uniformly spaced delays over three delay spreads.
fn pdp(cfg: &ChannelConfig) -> Vec<(f64, f64)> {
    let n = cfg.num_taps;
    let taus: Vec<f64> =
        (0..n).map(|p| if n == 1 { 0.0 } else { 3.0 * cfg.delay_spread_s * p as f64 / (n - 1) as f64 }).collect();
    let raw: Vec<f64> = taus.iter().map(|t| (-t / cfg.delay_spread_s).exp()).collect();
    let total: f64 = raw.iter().sum();
    taus.into_iter().zip(raw.into_iter().map(|p| p / total)).collect()
}

fn freq_corr(cfg: &ChannelConfig, dk: f64) -> C64 {
    pdp(cfg).iter().map(|&(t, p)| C64::from_polar(p, -2.0 * PI * dk * cfg.subcarrier_spacing_hz * t)).sum()
}

fn a5_lmmse_oracle() -> Verdict {
    let mut rng = RngStream::new(55, 5);
    let cfg = ChannelConfig { num_subcarriers: 4, ..ChannelConfig::default() };
    let ks = [0usize, 1, 2, 3];
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let taps = generate_taps(&cfg, &mut rng).unwrap();
        let s2 = 0.01 + 2.0 * rng.uniform();
        let mut est = PilotEstimates::zeros(1, 1, 4, 1, vec![0], vec![ks.to_vec()]);
        let hls: Vec<C64> = (0..4).map(|_| rng.complex_normal(1.0)).collect();
        for (j, h) in hls.iter().enumerate() {
            est.value_mut(0, 0, j)[0] = *h;
        }
        let got = lmmse_filter(&est, &genie_corr(&taps, &ks, cfg.subcarrier_spacing_hz), s2, 1.0).unwrap();
        let r = |i: usize, j: usize| freq_corr(&cfg, ks[i] as f64 - ks[j] as f64);
        let cyy: Vec<Vec<C64>> =
            (0..4).map(|i| (0..4).map(|j| r(i, j) + if i == j { C64::new(s2, 0.0) } else { C64::default() }).collect()).collect();
        let w = gauss_jordan(cyy, hls);
        for i in 0..4 {
            let mean: C64 = (0..4).map(|j| r(i, j) * w[j]).sum();
            worst = worst.max((mean - got.value(0, 0, i)[0]).norm());
        }
    }
    verdict(worst <= 1e-10, format!("100 K=4 instances, max |diff| {worst:.2e} (tol 1e-10)"))
}

fn a6_baseline_ordering() -> Verdict {
    let mut cfg = ExperimentConfig::default();
    cfg.set_subcarriers(64);
    cfg.trials = 1000;
    cfg.snr_db = vec![0.0, 10.0, 20.0, 30.0];
    cfg.methods = vec![Method::Ls, Method::EmLmmse, Method::GenieLmmse];
    cfg.seed = 6;
    let recs = run_records(&cfg).unwrap();
    let rows = summarize(&cfg, &recs);
    let mut ok = rows.iter().all(|r| r.trials == cfg.trials);
    let mut parts = Vec::new();
    for &snr in &cfg.snr_db {
        let (ls, em, g) =
            (mean_db(&rows, snr, Method::Ls), mean_db(&rows, snr, Method::EmLmmse), mean_db(&rows, snr, Method::GenieLmmse));
        ok &= g <= em + 0.2 && em <= ls + 0.2;
        parts.push(format!("{snr} dB: genie {g:.2} / em {em:.2} / ls {ls:.2}"));
    }
    verdict(ok, format!("K=64 x {} subframes, slack 0.2 dB: {}", cfg.trials, parts.join(", ")))
}

/// J0 as (1/pi) * integral_0^pi cos(x sin t) dt by composite Simpson.
fn j0_simpson(x: f64) -> f64 {
    let n = 2000;
    let h = PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let inner: f64 = (1..n).map(|i| f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(0.0) + f(PI) + inner) * h / 3.0 / PI
}

fn a7_channel_statistics() -> Verdict {
    let realizations = 10_000u64;
    let cfg = ChannelConfig { nr: 1, nt: 1, num_subcarriers: 128, symbols_per_subframe: 1, ..ChannelConfig::default() };
    let fd = cfg.doppler_hz();
    let lags = [0.05, 0.1, 0.2, 0.3, 0.38, 0.5, 0.7, 1.0];
    let dks = [1usize, 2, 4, 8, 16, 32, 64, 127];
    let mut tacc = vec![C64::default(); lags.len()];
    let mut facc = vec![C64::default(); dks.len()];
    let (mut p_t, mut p_f) = (0.0, 0.0);
    for n in 0..realizations {
        let taps = generate_taps(&cfg, &mut RngStream::new(77, 7).derive(&[n])).unwrap();
        for tap in 0..cfg.num_taps {
            let g0 = taps.gain(0, 0, tap, 0.0);
            p_t += g0.norm_sqr();
            for (acc, &l) in tacc.iter_mut().zip(&lags) {
                *acc += taps.gain(0, 0, tap, l / fd) * g0.conj();
            }
        }
        let grid = realize(&taps, &cfg).unwrap().grid;
        let h0 = grid.get(0, 0, 0, 0);
        p_f += h0.norm_sqr();
        for (acc, &d) in facc.iter_mut().zip(&dks) {
            *acc += grid.get(0, d, 0, 0) * h0.conj();
        }
    }
    let tdev = tacc
        .iter()
        .zip(&lags)
        .map(|(a, &l)| (a / p_t - C64::new(j0_simpson(2.0 * PI * l), 0.0)).norm())
        .fold(0.0, f64::max);
    let fdev = facc.iter().zip(&dks).map(|(a, &d)| (a / p_f - freq_corr(&cfg, d as f64)).norm()).fold(0.0, f64::max);
    verdict(
        tdev <= 0.05 && fdev <= 0.05,
        format!("{realizations} realizations: max |time dev| {tdev:.3}, max |freq dev| {fdev:.3} (tol 0.05)"),
    )
}

fn a8_realtime() -> Verdict {
    let ccfg = ChannelConfig::default();
    let scfg = SubframeConfig::default().with_scheme(PilotScheme::NonOrthogonal);
    let tcfg = TrainConfig::default();
    let mut times = Vec::new();
    for n in 0..5u64 {
        let root = RngStream::new(88, 8).derive(&[n]);
        let taps = generate_taps(&ccfg, &mut root.derive(&[0])).unwrap();
        let real = realize(&taps, &ccfg).unwrap();
        let sf = build_subframe(&scfg, &mut root.derive(&[1]), &mut root.derive(&[2])).unwrap();
        let y = transmit(&sf, &real, 10.0, &mut root.derive(&[3])).unwrap();
        let (_, stats) = train_subframe(&y, &sf, &tcfg, &mut root.derive(&[4])).unwrap();
        times.push(stats.wall_ms);
    }
    let worst = times.iter().copied().fold(0.0, f64::max);
    let mut cfg = ExperimentConfig::default();
    cfg.set_subcarriers(64);
    cfg.trials = 1;
    cfg.snr_db = vec![10.0];
    cfg.methods = vec![Method::StructNet];
    let reported = run_records(&cfg).unwrap().iter().all(|r| r.train_ms > 0.0);
    verdict(
        worst <= 1000.0 && reported,
        format!(
            "K=1024, default config, 5 subframes: max {worst:.0} ms, mean {:.0} ms (budget 1000 ms); train_ms in records: {reported}",
            times.iter().sum::<f64>() / times.len() as f64
        ),
    )
}

fn a9_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.set_subcarriers(64);
    cfg.trials = 6;
    cfg.snr_db = vec![5.0, 25.0];
    cfg.train.epochs = 5;
    cfg.record_timing = false;
    let mut files = Vec::new();
    for (i, threads) in [1usize, 1, 4].iter().enumerate() {
        cfg.threads = *threads;
        let path = dir.path().join(format!("run{i}.csv"));
        run_sweep_to(&cfg, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    verdict(same, format!("3 sweeps (threads 1, 1, 4), {} bytes each, identical: {same}", files[0].len()))
}

type Criterion = (&'static str, &'static str, f64, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("A1", "fold invariance", 10.0, a1_fold_invariance),
        ("A2", "gradient correctness", 30.0, a2_gradients),
        ("A3", "weight alignment", 300.0, a3_weight_alignment),
        ("A4", "ordering vs LS and em-LMMSE", 1800.0, a4_ordering),
        ("A5", "LMMSE oracle", 1.0, a5_lmmse_oracle),
        ("A6", "baseline ordering", 600.0, a6_baseline_ordering),
        ("A7", "channel statistics", 120.0, a7_channel_statistics),
        ("A8", "real-time budget", f64::INFINITY, a8_realtime),
        ("A9", "determinism", f64::INFINITY, a9_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = within_budget(run(), start, budget);
        println!("{id} {name}: {} - {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
