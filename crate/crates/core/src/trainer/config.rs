//! `key = value` run configuration. `#` starts a comment; unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::ccc::{CccConfig, CrossMode};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::adam::AdamConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    /// `(epoch_fraction, multiplier)`.
    pub lr_drops: Vec<(f64, f64)>,
    pub adam: AdamConfig,
    pub warmup_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub cross_mode: CrossMode,
    /// Backpropagate the cross losses into the reverse networks.
    pub ccc_into_model: bool,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            lr_init: 0.003,
            lr_drops: vec![(0.6, 0.1), (0.8, 0.1)],
            adam: AdamConfig::default(),
            warmup_fraction: 0.1,
            grad_clip: 5.0,
            seed: 0,
            cross_mode: CrossMode::Both,
            ccc_into_model: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr_init));
        }
        for &(f, k) in &self.lr_drops {
            if !(f > 0.0 && f < 1.0) || !(k > 0.0 && k.is_finite()) {
                return bad(format!("lr drop {f}:{k} needs 0 < fraction < 1 and a positive multiplier"));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must be in [0, 1), got {}", self.warmup_fraction));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1), eps > 0, weight_decay >= 0".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        Ok(())
    }

    /// Number of leading epochs trained on base losses only.
    pub fn warmup_epochs(&self) -> usize {
        (self.warmup_fraction * self.epochs as f64).round() as usize
    }
}

/// Piecewise-constant learning rate for 1-based `epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let mut lr = cfg.lr_init;
    for &(frac, k) in &cfg.lr_drops {
        let at = (frac * cfg.epochs as f64 - 1e-9).ceil().max(1.0) as usize;
        if epoch >= at {
            lr *= k;
        }
    }
    lr
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Forward-process clips drawn from the noise bank.
    Real,
    /// Forward-process clips replaced by standard Gaussian grids.
    Gaussian,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::Real => "real",
            NoiseMode::Gaussian => "gaussian",
        }
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(NoiseMode::Real),
            "gaussian" => Ok(NoiseMode::Gaussian),
            _ => Err(Error::Config(format!("unknown noise_mode `{s}` (real, gaussian)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub speech_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub train_utterances: usize,
    pub eval_utterances: usize,
    pub utterance_len: usize,
    /// Empty selects every available type (the toy pair for synthetic noise).
    pub noise_types: Vec<String>,
    /// Length of each synthetic noise recording in samples.
    pub recording_len: usize,
    pub snr_db: Vec<f64>,
    pub noise_mode: NoiseMode,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            speech_dir: None,
            noise_dir: None,
            train_utterances: 20,
            eval_utterances: 10,
            utterance_len: 16_000,
            noise_types: Vec::new(),
            recording_len: 480_000,
            snr_db: vec![0.0],
            noise_mode: NoiseMode::Real,
            data_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_utterances == 0 || self.utterance_len == 0 {
            return Err(Error::Config("train_utterances and utterance_len must be positive".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("snr_db must be non-empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr_db values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub ccc: CccConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_drops(value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (f, k) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("lr_drops item `{item}` must be fraction:multiplier")))?;
            Ok((parse("lr_drops", f.trim())?, parse("lr_drops", k.trim())?))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let (mut window, mut hop) = (cfg.model.stft.window_len, cfg.model.stft.hop);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let (m, c, t, d) = (&mut cfg.model, &mut cfg.ccc, &mut cfg.train, &mut cfg.data);
            match key {
                "n_blocks" => m.n_blocks = parse(key, value)?,
                "channels" => m.channels = parse(key, value)?,
                "kernel" => m.kernel = parse(key, value)?,
                "layers_per_block" => m.layers_per_block = parse(key, value)?,
                "steps" => m.steps = parse(key, value)?,
                "gamma_start" => m.gamma_start = parse(key, value)?,
                "gamma_end" => m.gamma_end = parse(key, value)?,
                "diffusion" => m.diffusion = parse_bool(key, value)?,
                "phase_aware" => m.phase_aware = parse_bool(key, value)?,
                "window_len" => window = parse(key, value)?,
                "hop" => hop = parse(key, value)?,
                "lambda1" => c.lambda1 = parse(key, value)?,
                "lambda2" => c.lambda2 = parse(key, value)?,
                "phase_loss" => c.phase_loss = parse(key, value)?,
                "ccc_hidden" => c.hidden = parse(key, value)?,
                "ccc_layers" => c.layers = parse(key, value)?,
                "epochs" => t.epochs = parse(key, value)?,
                "batch_size" => t.batch_size = parse(key, value)?,
                "lr" => t.lr_init = parse(key, value)?,
                "lr_drops" => t.lr_drops = parse_drops(value)?,
                "beta1" => t.adam.beta1 = parse(key, value)?,
                "beta2" => t.adam.beta2 = parse(key, value)?,
                "eps" => t.adam.eps = parse(key, value)?,
                "weight_decay" => t.adam.weight_decay = parse(key, value)?,
                "warmup_fraction" => t.warmup_fraction = parse(key, value)?,
                "grad_clip" => t.grad_clip = parse(key, value)?,
                "seed" => t.seed = parse(key, value)?,
                "cross_loss" => t.cross_mode = parse(key, value)?,
                "ccc_into_model" => t.ccc_into_model = parse_bool(key, value)?,
                "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
                "speech_dir" => d.speech_dir = Some(PathBuf::from(value)),
                "noise_dir" => d.noise_dir = Some(PathBuf::from(value)),
                "train_utterances" => d.train_utterances = parse(key, value)?,
                "eval_utterances" => d.eval_utterances = parse(key, value)?,
                "utterance_len" => d.utterance_len = parse(key, value)?,
                "noise_types" => d.noise_types = parse_list(key, value)?,
                "recording_len" => d.recording_len = parse(key, value)?,
                "snr_db" => d.snr_db = parse_list(key, value)?,
                "noise_mode" => d.noise_mode = parse(key, value)?,
                "data_seed" => d.data_seed = parse(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", i + 1))),
            }
        }
        cfg.model.stft = StftConfig::new(window, hop)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.ccc.validate()?;
        self.train.validate()?;
        self.data.validate()
    }

    /// Canonical dump; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let (m, c, t, d) = (&self.model, &self.ccc, &self.train, &self.data);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_blocks", m.n_blocks.to_string());
        kv("channels", m.channels.to_string());
        kv("kernel", m.kernel.to_string());
        kv("layers_per_block", m.layers_per_block.to_string());
        kv("steps", m.steps.to_string());
        kv("gamma_start", m.gamma_start.to_string());
        kv("gamma_end", m.gamma_end.to_string());
        kv("diffusion", m.diffusion.to_string());
        kv("phase_aware", m.phase_aware.to_string());
        kv("window_len", m.stft.window_len.to_string());
        kv("hop", m.stft.hop.to_string());
        kv("lambda1", c.lambda1.to_string());
        kv("lambda2", c.lambda2.to_string());
        kv("phase_loss", c.phase_loss.label().to_string());
        kv("ccc_hidden", c.hidden.to_string());
        kv("ccc_layers", c.layers.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.lr_init.to_string());
        kv("lr_drops", t.lr_drops.iter().map(|(f, k)| format!("{f}:{k}")).collect::<Vec<_>>().join(","));
        kv("beta1", t.adam.beta1.to_string());
        kv("beta2", t.adam.beta2.to_string());
        kv("eps", t.adam.eps.to_string());
        kv("weight_decay", t.adam.weight_decay.to_string());
        kv("warmup_fraction", t.warmup_fraction.to_string());
        kv("grad_clip", t.grad_clip.to_string());
        kv("seed", t.seed.to_string());
        kv("cross_loss", t.cross_mode.label().to_string());
        kv("ccc_into_model", t.ccc_into_model.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        if let Some(p) = &d.speech_dir {
            kv("speech_dir", p.display().to_string());
        }
        if let Some(p) = &d.noise_dir {
            kv("noise_dir", p.display().to_string());
        }
        kv("train_utterances", d.train_utterances.to_string());
        kv("eval_utterances", d.eval_utterances.to_string());
        kv("utterance_len", d.utterance_len.to_string());
        kv("noise_types", d.noise_types.join(","));
        kv("recording_len", d.recording_len.to_string());
        kv("snr_db", join(&d.snr_db));
        kv("noise_mode", d.noise_mode.label().to_string());
        kv("data_seed", d.data_seed.to_string());
        s
    }
}
