use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use structnet_core::harness::selftest::{run_selftest, SelftestOptions};
use structnet_core::harness::{
    format_summary, parse_methods, parse_modulation, resolve_output, run_sweep_to, run_trial_detailed, summarize,
    write_csv, ExperimentConfig, ResultRecord, OUT_DIR_ENV,
};
use structnet_core::structnet::gradcheck::{run_gradcheck, GradCheckConfig};
use structnet_core::structnet::{write_params, GradientFault};

#[derive(Parser)]
#[command(name = "structnet", version, about = "MIMO-OFDM channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trial across the configured SNRs, with optional artifact dumps.
    Run(RunArgs),
    /// Full Monte-Carlo sweep to CSV.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Built-in invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated SNRs in dB (`inf` for noiseless).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    /// Comma-separated: ls, em-lmmse, genie-lmmse, stacked-ls, structnet-ce.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    subcarriers: Option<usize>,
    #[arg(long)]
    speed_kmh: Option<f64>,
    /// qpsk or 16qam.
    #[arg(long)]
    modulation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    lr_channel: Option<f64>,
    #[arg(long)]
    lr_classifier: Option<f64>,
    /// CSV path; relative paths resolve against the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Directory for relative output paths.
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write train_ms = 0 so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
}

impl Overrides {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_toml_file(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = &self.snr {
            cfg.snr_db = v.clone();
        }
        if let Some(v) = &self.methods {
            cfg.methods = parse_methods(v)?;
        }
        if let Some(v) = self.subcarriers {
            cfg.set_subcarriers(v);
        }
        if let Some(v) = self.speed_kmh {
            cfg.set_speed_kmh(v);
        }
        if let Some(v) = &self.modulation {
            cfg.subframe.modulation = parse_modulation(v)?;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.smoothness {
            cfg.train.smoothness = v;
        }
        if let Some(v) = self.lr_channel {
            cfg.train.lr_channel = v;
        }
        if let Some(v) = self.lr_classifier {
            cfg.train.lr_classifier = v;
        }
        if let Some(v) = &self.output {
            cfg.output = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if self.no_timing {
            cfg.record_timing = false;
        }
        cfg.output = self.resolve(&cfg.output);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        resolve_output(p, self.out_dir.as_deref())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// Trial index to run.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Save trained parameters (one file per SNR when several are configured).
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Dump the true channel grid as CSV (t,k,rx,tx,re,im).
    #[arg(long)]
    dump_channel: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0.1)]
    smoothness: f64,
    /// Scale the analytic channel gradient by this factor (must make the check fail).
    #[arg(long)]
    inject_fault: Option<f64>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the analytic gradient; the gradcheck suite must fail.
    #[arg(long)]
    inject_fault: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn per_snr_path(base: &Path, snr: f64, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut name = format!("{stem}_snr{snr}");
    if let Some(ext) = base.extension() {
        name = format!("{name}.{}", ext.to_string_lossy());
    }
    base.with_file_name(name)
}

fn report_failures(records: &[ResultRecord]) -> usize {
    let failed: Vec<&ResultRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!(
            "failed: trial {} snr {} {}: {}",
            r.trial,
            r.snr_db,
            r.method.as_str(),
            r.error.as_deref().unwrap_or_default()
        );
    }
    failed.len()
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let cfg = args.common.build()?;
    if args.trial >= cfg.trials {
        bail!("trial {} out of range (trials = {})", args.trial, cfg.trials);
    }
    let out = run_trial_detailed(&cfg, args.trial)?;
    write_csv(&out.records, create(&cfg.output)?)?;
    if let Some(p) = &args.dump_channel {
        let p = args.common.resolve(p);
        out.truth.grid.write_csv(create(&p)?)?;
        println!("channel -> {}", p.display());
    }
    if let Some(p) = &args.save_params {
        let base = args.common.resolve(p);
        let many = out.structnet.len() > 1;
        if out.structnet.is_empty() {
            eprintln!("no parameters to save: structnet-ce did not run or failed");
        }
        for (snr, params) in &out.structnet {
            let path = per_snr_path(&base, *snr, many);
            write_params(params, create(&path)?)?;
            println!("params -> {}", path.display());
        }
    }
    print!("{}", format_summary(&summarize(&cfg, &out.records)));
    println!("results -> {}", cfg.output.display());
    Ok(report_failures(&out.records) == 0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let cfg = args.common.build()?;
    let out = run_sweep_to(&cfg, &cfg.output)?;
    print!("{}", format_summary(&out.summary));
    println!("{} rows -> {}", out.records.len(), out.path.display());
    Ok(report_failures(&out.records) == 0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let fault = args.inject_fault.map_or(GradientFault::None, GradientFault::ScaleChannel);
    let cfg = GradCheckConfig {
        points: args.points,
        seed: args.seed,
        smoothness: args.smoothness,
        fault,
        ..GradCheckConfig::default()
    };
    let r = run_gradcheck(&cfg)?;
    let ok = r.passed(args.tol);
    println!(
        "gradcheck: {} points, max rel err channel {:.3e}, classifier {:.3e} (tol {:.0e}) {}",
        r.points,
        r.max_rel_channel,
        r.max_rel_classifier,
        args.tol,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn cmd_selftest(args: &SelftestArgs) -> Result<bool> {
    let fault = if args.inject_fault { GradientFault::ScaleChannel(1.01) } else { GradientFault::None };
    let results = run_selftest(&SelftestOptions { seed: args.seed, fault });
    for r in &results {
        println!(
            "{:<18} {} worst {:.3e} tol {:.0e} ({:.0} ms) {}",
            r.suite.name(),
            if r.passed { "PASS" } else { "FAIL" },
            r.worst,
            r.tolerance,
            r.elapsed_ms,
            r.detail
        );
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
