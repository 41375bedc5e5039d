//! Paired Monte-Carlo experiments: every estimator sees the same channel and
//! noise realization per trial, results go to a fixed-schema CSV.

mod config;
pub mod selftest;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{
    parse_methods, parse_modulation, resolve_output, ExperimentConfig, DEFAULT_OUTPUT, OUT_DIR_ENV,
};

use crate::channel::{generate_taps, realize_at, ChannelGrid, ChannelRealization, TapProcess};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_noise_var, genie_corr, interpolate_grid, lmmse_filter, ls_estimate, stacked_ls, ChannelEstimate,
    EmHistory, Method, PilotEstimates,
};
use crate::numerics::{ratio_to_db, RngStream};
use crate::phy::{
    ber, build_subframe, hard_demap, mmse_equalize, nmse_ratio, nmse_ratio_masked, transmit, PilotScheme, ReceivedGrid,
    Subframe,
};
use crate::structnet::{extract_channel, train_or_fallback, StructNetParams};

pub const CSV_HEADER: [&str; 9] =
    ["seed", "trial", "snr_db", "method", "nmse_full_db", "nmse_pilot_db", "ber", "train_ms", "fallback"];

/// Pilot symbols of unit modulus in both schemes.
const PILOT_POWER: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub seed: u64,
    pub trial: usize,
    pub snr_db: f64,
    pub method: Method,
    pub nmse_full_db: f64,
    pub nmse_pilot_db: f64,
    pub ber: f64,
    pub train_ms: f64,
    pub fallback: bool,
    /// Set when the estimator failed; metrics are NaN. Not written to the CSV.
    pub error: Option<String>,
}

impl ResultRecord {
    fn failed(seed: u64, trial: usize, snr_db: f64, method: Method, err: &Error) -> Self {
        Self {
            seed,
            trial,
            snr_db,
            method,
            nmse_full_db: f64::NAN,
            nmse_pilot_db: f64::NAN,
            ber: f64::NAN,
            train_ms: 0.0,
            fallback: false,
            error: Some(err.to_string()),
        }
    }

    fn csv_fields(&self) -> [String; 9] {
        [
            self.seed.to_string(),
            self.trial.to_string(),
            self.snr_db.to_string(),
            self.method.to_string(),
            self.nmse_full_db.to_string(),
            self.nmse_pilot_db.to_string(),
            self.ber.to_string(),
            format!("{:.3}", self.train_ms),
            self.fallback.to_string(),
        ]
    }
}

/// Stream labels under the per-trial RNG root.
mod stream {
    pub const TAPS: u64 = 1;
    pub const PAYLOAD: u64 = 2;
    pub const PILOTS_ORTHOGONAL: u64 = 3;
    pub const PILOTS_NON_ORTHOGONAL: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const HISTORY: u64 = 6;
    pub const TRAIN: u64 = 7;
}

fn trial_root(seed: u64, trial: usize) -> RngStream {
    RngStream::new(seed, 0x74_7269_616c).derive(&[trial as u64])
}

/// Everything one trial produced; records plus artifacts for inspection.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub records: Vec<ResultRecord>,
    pub truth: ChannelRealization,
    /// Trained parameters per SNR (in config order), when structnet-ce ran.
    pub structnet: Vec<(f64, StructNetParams)>,
}

struct Prepared {
    taps: TapProcess,
    truth: ChannelRealization,
    history: Vec<ChannelRealization>,
    orthogonal: Subframe,
    non_orthogonal: Subframe,
}

fn prepare(cfg: &ExperimentConfig, trial: usize) -> Result<Prepared> {
    let root = trial_root(cfg.seed, trial);
    let taps = generate_taps(&cfg.channel, &mut root.derive(&[stream::TAPS]))?;
    let t = cfg.channel.symbols_per_subframe;
    // The current subframe is the last of the em-LMMSE window.
    let current = cfg.em_window - 1;
    let truth = realize_at(&taps, &cfg.channel, current * t)?;
    let history = if cfg.methods.contains(&Method::EmLmmse) {
        (0..current).map(|w| realize_at(&taps, &cfg.channel, w * t)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let ocfg = cfg.subframe.with_scheme(PilotScheme::Orthogonal);
    let ncfg = cfg.subframe.with_scheme(PilotScheme::NonOrthogonal);
    // Same payload stream for both schemes: identical data wherever both carry data.
    let orthogonal = build_subframe(
        &ocfg,
        &mut root.derive(&[stream::PAYLOAD]),
        &mut root.derive(&[stream::PILOTS_ORTHOGONAL]),
    )?;
    let non_orthogonal = build_subframe(
        &ncfg,
        &mut root.derive(&[stream::PAYLOAD]),
        &mut root.derive(&[stream::PILOTS_NON_ORTHOGONAL]),
    )?;
    Ok(Prepared { taps, truth, history, orthogonal, non_orthogonal })
}

struct Evaluated {
    estimate: ChannelEstimate,
    train_ms: f64,
    fallback: bool,
    params: Option<StructNetParams>,
}

fn em_lmmse(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    trial: usize,
    snr_idx: usize,
    y: &ReceivedGrid,
    est: &PilotEstimates,
) -> Result<ChannelEstimate> {
    let root = trial_root(cfg.seed, trial);
    let mut hist = EmHistory::new(cfg.em_window);
    let ocfg = cfg.subframe.with_scheme(PilotScheme::Orthogonal);
    let snr = cfg.snr_db[snr_idx];
    for (w, real) in prep.history.iter().enumerate() {
        let r = root.derive(&[stream::HISTORY, w as u64]);
        let sf = build_subframe(&ocfg, &mut r.derive(&[stream::PAYLOAD]), &mut r.derive(&[stream::PILOTS_ORTHOGONAL]))?;
        let yw = transmit(&sf, real, snr, &mut r.derive(&[stream::NOISE, snr_idx as u64]))?;
        hist.push(ls_estimate(&yw, &sf)?);
    }
    hist.push(est.clone());
    let corr = hist.correlation()?;
    let s2 = estimate_noise_var(y, &prep.orthogonal)?;
    Ok(interpolate_grid(&lmmse_filter(est, &corr, s2, PILOT_POWER)?, Method::EmLmmse))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    trial: usize,
    snr_idx: usize,
    method: Method,
    y_orth: &ReceivedGrid,
    y_non: &ReceivedGrid,
) -> Result<Evaluated> {
    let plain = |estimate| Evaluated { estimate, train_ms: 0.0, fallback: false, params: None };
    let num_symbols = cfg.subframe.num_symbols;
    match method {
        Method::Ls => Ok(plain(interpolate_grid(&ls_estimate(y_orth, &prep.orthogonal)?, Method::Ls))),
        Method::EmLmmse => {
            let est = ls_estimate(y_orth, &prep.orthogonal)?;
            Ok(plain(em_lmmse(cfg, prep, trial, snr_idx, y_orth, &est)?))
        }
        Method::GenieLmmse => {
            let est = ls_estimate(y_orth, &prep.orthogonal)?;
            let corr = genie_corr(&prep.taps, &est.subcarriers[0], cfg.channel.subcarrier_spacing_hz);
            Ok(plain(interpolate_grid(&lmmse_filter(&est, &corr, y_orth.noise_var, PILOT_POWER)?, Method::GenieLmmse)))
        }
        Method::StackedLs => {
            let h = stacked_ls(y_non, &prep.non_orthogonal)?;
            let est = PilotEstimates::from_static(&h, num_symbols, cfg.subframe.pilot_symbols.clone());
            Ok(plain(interpolate_grid(&est, Method::StackedLs)))
        }
        Method::StructNet => {
            let mut rng = trial_root(cfg.seed, trial).derive(&[stream::TRAIN, snr_idx as u64]);
            let (params, stats) = train_or_fallback(y_non, &prep.non_orthogonal, &cfg.train, &mut rng)?;
            let estimate = extract_channel(&params, num_symbols, &cfg.subframe.pilot_symbols);
            Ok(Evaluated {
                estimate,
                train_ms: if cfg.record_timing { stats.wall_ms } else { 0.0 },
                fallback: stats.fallback,
                params: Some(params),
            })
        }
    }
}

fn metrics(est: &ChannelEstimate, truth: &ChannelGrid, sf: &Subframe, y: &ReceivedGrid) -> Result<(f64, f64, f64)> {
    let full = ratio_to_db(nmse_ratio(&est.grid, truth)?);
    let pilot = ratio_to_db(nmse_ratio_masked(&est.grid, truth, |t, k, s| est.pilots.is_pilot_re(t, k, s))?);
    let soft = mmse_equalize(y, &est.grid, y.noise_var, sf.data_symbols())?;
    let bits = hard_demap(&soft, sf.config.modulation);
    Ok((full, pilot, ber(sf.data_bits(), &bits)?))
}

/// All methods at all SNRs for one trial.
pub fn run_trial_detailed(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutput> {
    cfg.validate()?;
    let prep = prepare(cfg, trial)?;
    let root = trial_root(cfg.seed, trial);
    let mut records = Vec::with_capacity(cfg.snr_db.len() * cfg.methods.len());
    let mut structnet = Vec::new();
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        // One noise draw shared by both pilot schemes.
        let noise = root.derive(&[stream::NOISE, si as u64]);
        let y_orth = transmit(&prep.orthogonal, &prep.truth, snr, &mut noise.clone())?;
        let y_non = transmit(&prep.non_orthogonal, &prep.truth, snr, &mut noise.clone())?;
        for &method in &cfg.methods {
            let (sf, y) = match method.pilot_scheme() {
                PilotScheme::Orthogonal => (&prep.orthogonal, &y_orth),
                PilotScheme::NonOrthogonal => (&prep.non_orthogonal, &y_non),
            };
            let outcome = evaluate(cfg, &prep, trial, si, method, &y_orth, &y_non)
                .and_then(|ev| metrics(&ev.estimate, &prep.truth.grid, sf, y).map(|m| (ev, m)));
            match outcome {
                Ok((ev, (full, pilot, b))) => {
                    if let Some(p) = ev.params {
                        structnet.push((snr, p));
                    }
                    records.push(ResultRecord {
                        seed: cfg.seed,
                        trial,
                        snr_db: snr,
                        method,
                        nmse_full_db: full,
                        nmse_pilot_db: pilot,
                        ber: b,
                        train_ms: ev.train_ms,
                        fallback: ev.fallback,
                        error: None,
                    });
                }
                Err(e) => records.push(ResultRecord::failed(cfg.seed, trial, snr, method, &e)),
            }
        }
    }
    Ok(TrialOutput { records, truth: prep.truth, structnet })
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<Vec<ResultRecord>> {
    run_trial_detailed(cfg, trial).map(|o| o.records)
}

fn record_order(cfg: &ExperimentConfig) -> impl Fn(&ResultRecord, &ResultRecord) -> Ordering + '_ {
    let snr_pos = |s: f64| cfg.snr_db.iter().position(|v| v.to_bits() == s.to_bits()).unwrap_or(usize::MAX);
    move |a, b| {
        (a.trial, snr_pos(a.snr_db), a.method).cmp(&(b.trial, snr_pos(b.snr_db), b.method))
    }
}

/// Every trial, fanned out over worker threads; records sorted by (trial, SNR, method).
pub fn run_records(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let work = || -> Result<Vec<ResultRecord>> {
        let per_trial: Vec<Vec<ResultRecord>> =
            (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect::<Result<_>>()?;
        let mut all: Vec<ResultRecord> = per_trial.into_iter().flatten().collect();
        all.sort_by(record_order(cfg));
        Ok(all)
    };
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(work)
    } else {
        work()
    }
}

pub fn write_csv<W: Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(map)?;
    for r in records {
        w.write_record(r.csv_fields()).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub method: Method,
    /// Records with finite metrics.
    pub trials: usize,
    pub failures: usize,
    pub fallbacks: usize,
    /// `10 log10` of the mean linear NMSE.
    pub nmse_full_db: f64,
    pub nmse_pilot_db: f64,
    pub ber: f64,
    pub train_ms: f64,
}

/// Per-(SNR, method) means in config order.
pub fn summarize(cfg: &ExperimentConfig, records: &[ResultRecord]) -> Vec<SummaryRow> {
    let lin = |db: f64| 10f64.powf(db / 10.0);
    let mut rows = Vec::new();
    for &snr in &cfg.snr_db {
        for &method in &cfg.methods {
            let sel: Vec<&ResultRecord> =
                records.iter().filter(|r| r.method == method && r.snr_db.to_bits() == snr.to_bits()).collect();
            let ok: Vec<&&ResultRecord> = sel.iter().filter(|r| r.error.is_none()).collect();
            let n = ok.len();
            let mean = |f: &dyn Fn(&ResultRecord) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            rows.push(SummaryRow {
                snr_db: snr,
                method,
                trials: n,
                failures: sel.len() - n,
                fallbacks: ok.iter().filter(|r| r.fallback).count(),
                nmse_full_db: ratio_to_db(mean(&|r| lin(r.nmse_full_db))),
                nmse_pilot_db: ratio_to_db(mean(&|r| lin(r.nmse_pilot_db))),
                ber: mean(&|r| r.ber),
                train_ms: mean(&|r| r.train_ms),
            });
        }
    }
    rows
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8}  {:<13} {:>6} {:>12} {:>13} {:>10} {:>10} {:>9}",
        "snr_db", "method", "n", "nmse_full_db", "nmse_pilot_db", "ber", "train_ms", "fallback"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8}  {:<13} {:>6} {:>12.2} {:>13.2} {:>10.3e} {:>10.1} {:>9}",
            r.snr_db, r.method.as_str(), r.trials, r.nmse_full_db, r.nmse_pilot_db, r.ber, r.train_ms, r.fallbacks
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub path: PathBuf,
    pub records: Vec<ResultRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every trial and writes the CSV to `path`.
pub fn run_sweep_to(cfg: &ExperimentConfig, path: &Path) -> Result<SweepOutcome> {
    let records = run_records(cfg)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(&records, &mut out)?;
    out.flush()?;
    let summary = summarize(cfg, &records);
    Ok(SweepOutcome { path: path.to_path_buf(), records, summary })
}

/// [`run_sweep_to`] at the config's resolved output path.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    run_sweep_to(cfg, &cfg.resolved_output())
}
