//! Enhancement, evaluation and the ablation runner.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::audio::write_atomic;
use crate::ccc::CrossMode;
use crate::data::{Corpus, Mixture};
use crate::dsp::{analyze, synthesize, Waveform};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::Sedm;
use crate::trainer::{train, NoiseMode, OutputDir, RunConfig, TrainReport};

pub const EVAL_HEADER: &str = "utterance,noise_type,snr_db,stoi,fwsnrseg,ssnr,si_sdr";

/// Enhances a waveform; the output has the input's length.
pub fn enhance_waveform(model: &Sedm, noisy: &Waveform) -> Result<Waveform> {
    let stft = model.config().stft;
    let (mp, pad) = analyze(noisy, &stft)?;
    let out = model.enhance(&mp)?;
    synthesize(&out, &pad, &stft)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub utterance: String,
    pub noise_type: String,
    pub snr_db: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub mean: MetricReport,
}

impl Evaluation {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        let reports: Vec<MetricReport> = rows.iter().map(|r| r.report).collect();
        let mean = MetricReport::mean(&reports).ok_or(Error::Length { len: 0, min: 1 })?;
        Ok(Self { rows, mean })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{EVAL_HEADER}\n");
        let line = |s: &mut String, u: &str, t: &str, snr: &str, r: &MetricReport| {
            let _ = writeln!(s, "{u},{t},{snr},{},{},{},{}", r.stoi, r.fwsnrseg, r.ssnr, r.si_sdr);
        };
        for r in &self.rows {
            line(&mut s, &r.utterance, &r.noise_type, &r.snr_db.to_string(), &r.report);
        }
        line(&mut s, "mean", "", "", &self.mean);
        s
    }
}

/// Scores `estimates` against the clean references of `mixtures`.
pub fn score(mixtures: &[Mixture], estimates: &[Waveform]) -> Result<Evaluation> {
    if mixtures.len() != estimates.len() {
        return Err(Error::dim("evaluation estimates", &[mixtures.len()], &[estimates.len()]));
    }
    let rows = mixtures
        .iter()
        .zip(estimates)
        .map(|(m, e)| {
            Ok(EvalRow {
                utterance: m.name.clone(),
                noise_type: m.noise_type.clone(),
                snr_db: m.snr_db,
                report: MetricReport::compute(&m.clean, e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_rows(rows)
}

/// Scores the unprocessed mixtures.
pub fn evaluate_noisy(mixtures: &[Mixture]) -> Result<Evaluation> {
    let noisy: Vec<Waveform> = mixtures.iter().map(|m| m.noisy.clone()).collect();
    score(mixtures, &noisy)
}

pub fn evaluate_model(model: &Sedm, mixtures: &[Mixture]) -> Result<Evaluation> {
    let enhanced = mixtures
        .iter()
        .map(|m| enhance_waveform(model, &m.noisy))
        .collect::<Result<Vec<_>>>()?;
    score(mixtures, &enhanced)
}

/// Time segments each latent channel is mean-pooled into.
pub const LATENT_POOL: usize = 4;
const PGM_RANGE_DB: f64 = 80.0;
const PGM_FLOOR: f64 = 1e-10;

/// Magnitude-path latent of `wave` at reverse step `step`, mean-pooled to
/// `C × LATENT_POOL` values (channel-major).
pub fn pooled_latent(model: &Sedm, wave: &Waveform, step: usize) -> Result<Vec<f64>> {
    let (mp, _) = analyze(wave, &model.config().stft)?;
    let rms = mp.mag.rms();
    let x = if rms > 0.0 { mp.mag.scale(1.0 / rms) } else { mp.mag };
    let lat = model.latent(crate::model::Path::Magnitude, &x, step)?;
    let (c, t) = (lat.shape()[0], lat.shape()[1]);
    let mut out = Vec::with_capacity(c * LATENT_POOL);
    for ch in 0..c {
        let row = &lat.data()[ch * t..(ch + 1) * t];
        for k in 0..LATENT_POOL {
            let a = k * t / LATENT_POOL;
            let b = ((k + 1) * t / LATENT_POOL).max(a + 1).min(t);
            let seg = &row[a.min(t - 1)..b];
            out.push(seg.iter().map(|v| *v as f64).sum::<f64>() / seg.len() as f64);
        }
    }
    Ok(out)
}

/// Binary PGM of the log-magnitude spectrogram, one row per frequency bin
/// (bin 0 first), 80 dB below the peak mapped to black. Silence is black.
pub fn spectrogram_pgm(wave: &Waveform, stft: &crate::dsp::StftConfig) -> Result<Vec<u8>> {
    let (mp, _) = analyze(wave, stft)?;
    let (frames, bins) = (mp.mag.rows, mp.mag.cols);
    let db = mp.mag.map(|m| 20.0 * m.max(PGM_FLOOR).log10());
    let top = db.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let silent = top <= 20.0 * PGM_FLOOR.log10();
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    for f in 0..bins {
        for t in 0..frames {
            let v = if silent {
                0.0
            } else {
                ((db.get(t, f) - (top - PGM_RANGE_DB)) / PGM_RANGE_DB).clamp(0.0, 1.0)
            };
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Factor switched off (or changed) by one ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Diffusion,
    Phase,
    Ccc,
    GaussianNoise,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Diffusion => "diffusion",
            Axis::Phase => "phase",
            Axis::Ccc => "ccc",
            Axis::GaussianNoise => "gaussian-noise",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(Axis::Diffusion),
            "phase" => Ok(Axis::Phase),
            "ccc" => Ok(Axis::Ccc),
            "gaussian-noise" => Ok(Axis::GaussianNoise),
            _ => Err(Error::Config(format!(
                "unknown ablation axis `{s}` (diffusion, phase, ccc, gaussian-noise)"
            ))),
        }
    }
}

/// One configuration of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub config: RunConfig,
}

fn apply(base: &RunConfig, axis: Axis, on: bool) -> RunConfig {
    let mut cfg = base.clone();
    match axis {
        Axis::Diffusion => cfg.model.diffusion = on,
        Axis::Phase => cfg.model.phase_aware = on,
        Axis::Ccc => cfg.train.cross_mode = if on { base.train.cross_mode } else { CrossMode::None },
        Axis::GaussianNoise => cfg.data.noise_mode = if on { NoiseMode::Gaussian } else { NoiseMode::Real },
    }
    cfg
}

/// Full factorial grid over `axes`, every other setting taken from `base`.
/// Cells are named `axis+/axis-` joined by `_`.
pub fn grid_cells(base: &RunConfig, axes: &[Axis]) -> Vec<Cell> {
    let mut axes = axes.to_vec();
    axes.sort();
    axes.dedup();
    let mut cells = vec![Cell {
        name: String::new(),
        config: base.clone(),
    }];
    for &axis in &axes {
        let default_on = axis != Axis::GaussianNoise;
        let mut next = Vec::with_capacity(cells.len() * 2);
        for cell in &cells {
            for on in [default_on, !default_on] {
                let sep = if cell.name.is_empty() { "" } else { "_" };
                next.push(Cell {
                    name: format!("{}{sep}{}{}", cell.name, axis.label(), if on { "+" } else { "-" }),
                    config: apply(&cell.config, axis, on),
                });
            }
        }
        cells = next;
    }
    cells
}

/// The four cross-loss cells: none, p2a, a2p, both.
pub fn cross_mode_cells(base: &RunConfig) -> Vec<Cell> {
    [CrossMode::None, CrossMode::PToA, CrossMode::AToP, CrossMode::Both]
        .into_iter()
        .map(|mode| {
            let mut config = base.clone();
            config.train.cross_mode = mode;
            Cell {
                name: format!("cross-{}", mode.label()),
                config,
            }
        })
        .collect()
}

/// The contribution cells: the full model, each single contribution
/// (diffusion only, phase only), and the two-contribution cells
/// phase + CCC and diffusion + phase.
pub fn contribution_cells(base: &RunConfig) -> Vec<Cell> {
    let cell = |name: &str, d: bool, p: bool, c: bool| {
        let cfg = apply(&apply(&apply(base, Axis::Diffusion, d), Axis::Phase, p), Axis::Ccc, c);
        Cell {
            name: name.into(),
            config: cfg,
        }
    };
    vec![
        cell("full", true, true, true),
        cell("diffusion-only", true, false, false),
        cell("phase-only", false, true, false),
        cell("phase+ccc", false, true, true),
        cell("diffusion+phase", true, true, false),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: String,
    pub seed: u64,
    pub mean: MetricReport,
}

pub const ABLATION_HEADER: &str = "cell,seed,stoi,fwsnrseg,ssnr,si_sdr";

pub fn ablation_csv(results: &[CellResult]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in results {
        let m = &r.mean;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.cell, r.seed, m.stoi, m.fwsnrseg, m.ssnr, m.si_sdr);
    }
    s
}

/// Mean metrics per cell over seeds, in first-appearance order.
pub fn cell_means(results: &[CellResult]) -> Result<Vec<(String, MetricReport)>> {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.cell.as_str()) {
            names.push(&r.cell);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let reports: Vec<MetricReport> = results.iter().filter(|r| r.cell == n).map(|r| r.mean).collect();
            Ok((n.to_string(), MetricReport::mean(&reports).ok_or(Error::Length { len: 0, min: 1 })?))
        })
        .collect()
}

/// Trains one configuration and evaluates it on the corpus eval split.
pub fn train_and_evaluate(
    cfg: &RunConfig,
    corpus: &Corpus,
    out: Option<&OutputDir>,
    progress: &mut dyn FnMut(&crate::trainer::EpochStats),
) -> Result<(TrainReport, Evaluation)> {
    let report = train(cfg, corpus, out, progress)?;
    let eval = evaluate_model(&report.model, &corpus.eval)?;
    if let Some(out) = out {
        write_atomic(&out.root.join("evaluation.csv"), eval.to_csv().as_bytes())?;
    }
    Ok((report, eval))
}

/// Runs every cell for every seed. Each cell trains with the same seed and
/// data; only the ablated factors differ. With `out`, each run writes to
/// `<out>/<cell>/seed<k>/` and the comparison goes to `<out>/ablation.csv`.
pub fn run_ablation(
    cells: &[Cell],
    seeds: &[u64],
    corpus: &Corpus,
    out: Option<&PathBuf>,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<CellResult>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut results = Vec::new();
    for &seed in seeds {
        for cell in cells {
            let mut cfg = cell.config.clone();
            cfg.train.seed = seed;
            let dir = match out {
                Some(root) => Some(OutputDir::new(root.join(&cell.name).join(format!("seed{seed}")))?),
                None => None,
            };
            let (_, eval) = train_and_evaluate(&cfg, corpus, dir.as_ref(), &mut |_| {})?;
            log(&format!(
                "{} seed {seed}: si_sdr {:.3} stoi {:.4}",
                cell.name, eval.mean.si_sdr, eval.mean.stoi
            ));
            results.push(CellResult {
                cell: cell.name.clone(),
                seed,
                mean: eval.mean,
            });
        }
    }
    if let Some(root) = out {
        write_atomic(&root.join("ablation.csv"), ablation_csv(&results).as_bytes())?;
    }
    Ok(results)
}
