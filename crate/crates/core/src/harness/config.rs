//! Experiment configuration and its TOML file form.
//!
//! Every key is optional; omitted keys keep the defaults shown here.
//!
//! ```toml
//! seed = 1
//! trials = 100
//! snr_db = [10.0, 15.0, 20.0]        # `inf` for noiseless
//! methods = ["ls", "em-lmmse", "genie-lmmse", "stacked-ls", "structnet-ce"]
//! output = "results.csv"             # relative paths resolve against $STRUCTNET_OUT_DIR
//! record_timing = true               # false writes train_ms = 0 (byte-stable CSVs)
//! threads = 0                        # 0 = rayon default
//! em_window = 10                     # subframes in the em-LMMSE correlation window
//!
//! [channel]
//! subcarriers = 1024
//! nr = 2
//! nt = 2
//! taps = 8
//! delay_spread_ns = 100.0
//! carrier_ghz = 3.5
//! speed_kmh = 5.0
//! subcarrier_spacing_khz = 15.0
//! sinusoids = 32
//!
//! [subframe]
//! symbols = 14
//! pilot_symbols = [2, 5, 8, 11]
//! modulation = "qpsk"                # or "16qam"
//!
//! [train]
//! epochs = 50
//! batch_size = 256
//! lr_classifier = 1e-3
//! lr_channel = 5e-4
//! init = "stacked_ls"                # or "small_random"
//! smoothness = 0.0
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! max_restarts = 3
//! classifier_warmup = 0
//! batching = "subcarriers"           # or "samples"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::{kmh_to_mps, ChannelConfig};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::phy::{Modulation, SubframeConfig};
use crate::structnet::{Batching, InitMode, TrainConfig};

/// Environment variable naming the directory for relative output paths.
pub const OUT_DIR_ENV: &str = "STRUCTNET_OUT_DIR";
pub const DEFAULT_OUTPUT: &str = "results.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    /// Pilot scheme is overridden per method.
    pub subframe: SubframeConfig,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub seed: u64,
    pub output: PathBuf,
    pub record_timing: bool,
    pub threads: usize,
    pub em_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            subframe: SubframeConfig::default(),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            trials: 100,
            methods: Method::ALL.to_vec(),
            train: TrainConfig::default(),
            seed: 1,
            output: PathBuf::from(DEFAULT_OUTPUT),
            record_timing: true,
            threads: 0,
            em_window: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.snr_db.is_empty() {
            return bad("at least one SNR is required".into());
        }
        if let Some(s) = self.snr_db.iter().find(|s| s.is_nan() || **s == f64::NEG_INFINITY) {
            return bad(format!("SNR {s} dB is not usable"));
        }
        if self.em_window == 0 {
            return bad("em_window must be at least 1".into());
        }
        if self.channel.num_subcarriers != self.subframe.num_subcarriers
            || self.channel.symbols_per_subframe != self.subframe.num_symbols
            || self.channel.nt != self.subframe.nt
        {
            return bad("channel and subframe dimensions disagree".into());
        }
        self.channel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.subframe.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Sets the subcarrier count on both the channel and the subframe.
    pub fn set_subcarriers(&mut self, k: usize) {
        self.channel.num_subcarriers = k;
        self.subframe.num_subcarriers = k;
    }

    pub fn set_speed_kmh(&mut self, kmh: f64) {
        self.channel.speed_mps = kmh_to_mps(kmh);
    }

    /// `output` if absolute, otherwise joined onto `$STRUCTNET_OUT_DIR` when set.
    pub fn resolved_output(&self) -> PathBuf {
        resolve_output(&self.output, std::env::var_os(OUT_DIR_ENV).as_deref().map(Path::new))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = file.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

pub fn resolve_output(output: &Path, out_dir: Option<&Path>) -> PathBuf {
    match out_dir {
        Some(dir) if output.is_relative() => dir.join(output),
        _ => output.to_path_buf(),
    }
}

pub fn parse_modulation(s: &str) -> Result<Modulation> {
    match s.to_ascii_lowercase().as_str() {
        "qpsk" | "4qam" => Ok(Modulation::Qpsk),
        "16qam" | "qam16" | "16-qam" => Ok(Modulation::Qam16),
        other => Err(Error::Config(format!("unknown modulation {other:?}"))),
    }
}

pub fn parse_methods<S: AsRef<str>>(names: &[S]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for n in names {
        let m: Method = n.as_ref().parse().map_err(|_| Error::Config(format!("unknown method {:?}", n.as_ref())))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    trials: Option<usize>,
    snr_db: Option<Vec<f64>>,
    methods: Option<Vec<String>>,
    output: Option<PathBuf>,
    record_timing: Option<bool>,
    threads: Option<usize>,
    em_window: Option<usize>,
    channel: FileChannel,
    subframe: FileSubframe,
    train: FileTrain,
}

#[derive(Debug, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileChannel {
    subcarriers: Option<usize>,
    nr: Option<usize>,
    nt: Option<usize>,
    taps: Option<usize>,
    delay_spread_ns: Option<f64>,
    carrier_ghz: Option<f64>,
    speed_kmh: Option<f64>,
    subcarrier_spacing_khz: Option<f64>,
    sinusoids: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileSubframe {
    symbols: Option<usize>,
    pilot_symbols: Option<Vec<usize>>,
    modulation: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileTrain {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr_classifier: Option<f64>,
    lr_channel: Option<f64>,
    init: Option<String>,
    smoothness: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    max_restarts: Option<usize>,
    classifier_warmup: Option<usize>,
    batching: Option<String>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl FileConfig {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.trials, self.trials);
        set(&mut cfg.snr_db, self.snr_db);
        set(&mut cfg.output, self.output);
        set(&mut cfg.record_timing, self.record_timing);
        set(&mut cfg.threads, self.threads);
        set(&mut cfg.em_window, self.em_window);
        if let Some(m) = self.methods {
            cfg.methods = parse_methods(&m)?;
        }

        let c = self.channel;
        if let Some(k) = c.subcarriers {
            cfg.set_subcarriers(k);
        }
        set(&mut cfg.channel.nr, c.nr);
        if let Some(nt) = c.nt {
            cfg.channel.nt = nt;
            cfg.subframe.nt = nt;
        }
        set(&mut cfg.channel.num_taps, c.taps);
        set(&mut cfg.channel.delay_spread_s, c.delay_spread_ns.map(|v| v * 1e-9));
        set(&mut cfg.channel.carrier_hz, c.carrier_ghz.map(|v| v * 1e9));
        if let Some(v) = c.speed_kmh {
            cfg.set_speed_kmh(v);
        }
        if let Some(v) = c.subcarrier_spacing_khz {
            cfg.channel.subcarrier_spacing_hz = v * 1e3;
            cfg.channel.symbol_duration_s = 1.0 / (v * 1e3);
        }
        set(&mut cfg.channel.num_sinusoids, c.sinusoids);

        let s = self.subframe;
        if let Some(n) = s.symbols {
            cfg.subframe.num_symbols = n;
            cfg.channel.symbols_per_subframe = n;
        }
        set(&mut cfg.subframe.pilot_symbols, s.pilot_symbols);
        if let Some(m) = s.modulation {
            cfg.subframe.modulation = parse_modulation(&m)?;
        }

        let t = self.train;
        let tc = &mut cfg.train;
        set(&mut tc.epochs, t.epochs);
        set(&mut tc.batch_size, t.batch_size);
        set(&mut tc.lr_classifier, t.lr_classifier);
        set(&mut tc.lr_channel, t.lr_channel);
        set(&mut tc.smoothness, t.smoothness);
        set(&mut tc.beta1, t.beta1);
        set(&mut tc.beta2, t.beta2);
        set(&mut tc.eps, t.eps);
        set(&mut tc.max_restarts, t.max_restarts);
        set(&mut tc.classifier_warmup, t.classifier_warmup);
        if let Some(init) = t.init {
            tc.init = match init.as_str() {
                "stacked_ls" | "stacked-ls" => InitMode::StackedLs,
                "small_random" | "small-random" => InitMode::SmallRandom,
                other => return Err(Error::Config(format!("unknown init mode {other:?}"))),
            };
        }
        if let Some(b) = t.batching {
            tc.batching = match b.as_str() {
                "subcarriers" => Batching::Subcarriers,
                "samples" => Batching::Samples,
                other => return Err(Error::Config(format!("unknown batching {other:?}"))),
            };
        }
        Ok(cfg)
    }
}
