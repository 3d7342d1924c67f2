//! Joint training of the SEDM paths and the cross-domain mapping networks.

mod adam;
mod config;

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{clip_grad_norm, grad_norm, Adam, AdamConfig};
pub use config::{lr_at, DataConfig, NoiseMode, RunConfig, TrainConfig};

use crate::audio::write_atomic;
use crate::autodiff::{mse_loss, Tape, Var};
use crate::ccc::{Ccc, CccLosses, CrossMode};
use crate::data::Corpus;
use crate::diffusion::{forward_with_clips, gaussian_grid};
use crate::dsp::{analyze, unwrap_phase, Grid, Waveform};
use crate::error::{Error, Result};
use crate::model::{checkpoint, grid_to_ft, Path, Sedm};

pub const LOSS_LOG_HEADER: &str = "epoch,step,l_A,l_P,l_PtoA,l_AtoP,l_A_combined,l_P_combined";
pub const METRICS_HEADER: &str = "epoch,lr,loss,l_A_combined,l_P_combined,grad_norm";
const CCC_SEED_OFFSET: u64 = 0x5eed_cc;
const DATA_STREAM: u64 = 7;

/// One row of the loss log: batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: u64,
    pub losses: CccLosses,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_a_combined: f64,
    pub l_p_combined: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Sedm,
    pub ccc: Ccc,
    pub epochs: Vec<EpochStats>,
    pub loss_log: Vec<LossRow>,
    pub steps: u64,
    pub warnings: Vec<String>,
}

/// Normalised features of one training example, all `[T, F]`.
struct Example {
    clean_a: Grid,
    clean_p: Grid,
    noisy_a: Grid,
    noisy_p: Grid,
    clips_a: Vec<Grid>,
    clips_p: Vec<Grid>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn loss_log_csv(rows: &[LossRow]) -> String {
    let mut s = format!("{LOSS_LOG_HEADER}\n");
    for r in rows {
        let l = &r.losses;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            r.step,
            l.l_a,
            l.l_p,
            opt(l.l_p_to_a),
            opt(l.l_a_to_p),
            l.l_a_combined,
            l.l_p_combined
        );
    }
    s
}

pub fn metrics_csv(rows: &[EpochStats]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.loss, r.l_a_combined, r.l_p_combined, r.grad_norm
        );
    }
    s
}

fn mean_losses(rows: &[CccLosses]) -> CccLosses {
    let n = rows.len().max(1) as f64;
    let avg = |f: &dyn Fn(&CccLosses) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&CccLosses) -> Option<f64>| {
        rows.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
    };
    CccLosses {
        l_a: avg(&|l| l.l_a),
        l_p: avg(&|l| l.l_p),
        l_p_to_a: avg_opt(&|l| l.l_p_to_a),
        l_a_to_p: avg_opt(&|l| l.l_a_to_p),
        l_a_combined: avg(&|l| l.l_a_combined),
        l_p_combined: avg(&|l| l.l_p_combined),
    }
}

fn clip_features(clip: &Waveform, cfg: &Sedm) -> Result<(Grid, Grid)> {
    let (mp, _) = analyze(clip, &cfg.config().stft)?;
    let rms = mp.mag.rms();
    let a = if rms > 0.0 { mp.mag.scale(1.0 / rms) } else { mp.mag };
    Ok((a, unwrap_phase(&mp.phase).standardized()))
}

/// Where training writes its artefacts.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
    /// Final checkpoint; `<root>/model.sedm` unless set.
    pub checkpoint: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        Ok(Self {
            checkpoint: root.join("model.sedm"),
            root,
        })
    }

    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = path.into();
        self
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone()
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join(format!("model_e{epoch:04}.sedm"))
    }

    pub fn loss_log(&self) -> PathBuf {
        self.root.join("loss_log.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
}

pub struct Trainer<'c> {
    cfg: RunConfig,
    corpus: &'c Corpus,
    model: Sedm,
    ccc: Ccc,
    opt_model: Adam,
    opt_ccc: Adam,
    rng: ChaCha8Rng,
    steps: u64,
}

impl<'c> Trainer<'c> {
    pub fn new(cfg: &RunConfig, corpus: &'c Corpus) -> Result<Self> {
        cfg.validate()?;
        let t = &cfg.train;
        let model = Sedm::new(cfg.model.clone(), t.seed)?;
        let ccc = Ccc::new(cfg.ccc.clone(), cfg.model.bins(), t.seed ^ CCC_SEED_OFFSET)?;
        let opt_model = Adam::new(t.adam, model.store());
        let opt_ccc = Adam::new(t.adam, ccc.store());
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        rng.set_stream(DATA_STREAM);
        Ok(Self {
            cfg: cfg.clone(),
            corpus,
            model,
            ccc,
            opt_model,
            opt_ccc,
            rng,
            steps: 0,
        })
    }

    pub fn model(&self) -> &Sedm {
        &self.model
    }

    pub fn ccc(&self) -> &Ccc {
        &self.ccc
    }

    fn cross_mode(&self, epoch: usize) -> CrossMode {
        if epoch <= self.cfg.train.warmup_epochs() {
            CrossMode::None
        } else {
            self.cfg.train.cross_mode
        }
    }

    fn example(&mut self, clean: &Waveform) -> Result<Example> {
        let (noisy, noise_type) = self.corpus.mix_train(clean, &mut self.rng)?;
        let stft = self.model.config().stft;
        let (c, _) = analyze(clean, &stft)?;
        let (n, _) = analyze(&noisy, &stft)?;
        let k = n.mag.rms().max(f64::MIN_POSITIVE);
        let steps = if self.model.config().diffusion { self.model.config().steps } else { 0 };
        let (frames, bins) = (c.mag.rows, c.mag.cols);
        let (mut clips_a, mut clips_p) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        match self.cfg.data.noise_mode {
            NoiseMode::Real => {
                for w in self.corpus.train_clips(&noise_type, steps, clean.len(), &mut self.rng)? {
                    let (a, p) = clip_features(&w, &self.model)?;
                    clips_a.push(a);
                    clips_p.push(p);
                }
            }
            NoiseMode::Gaussian => {
                for _ in 0..steps {
                    clips_a.push(gaussian_grid(frames, bins, &mut self.rng));
                    clips_p.push(gaussian_grid(frames, bins, &mut self.rng));
                }
            }
        }
        Ok(Example {
            clean_a: c.mag.scale(1.0 / k),
            clean_p: unwrap_phase(&c.phase),
            noisy_a: n.mag.scale(1.0 / k),
            noisy_p: unwrap_phase(&n.phase),
            clips_a,
            clips_p,
        })
    }

    /// Chain losses for one path: the forward-process chain (noise and
    /// speech terms) and the mixture chain (speech terms). Returns the loss
    /// and the mixture chain's final speech estimate.
    fn path_loss<'t>(
        &self,
        tape: &'t Tape,
        path: Path,
        clean: &Grid,
        clean_mag: &Grid,
        noisy: &Grid,
        clips: &[Grid],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mag = tape.constant(grid_to_ft(clean_mag));
        let phase_loss = self.cfg.ccc.phase_loss;
        let speech_loss = |est: Var<'t>, target: Var<'t>| match path {
            Path::Magnitude => mse_loss(est, target),
            Path::Phase => phase_loss.loss(est, target, mag),
        };
        let target = tape.constant(grid_to_ft(clean));
        let m_len = self.model.chain_len();
        let norm = 1.0 / m_len as f32;
        let mut total: Option<Var<'t>> = None;
        let mut acc = |v: Var<'t>| -> Result<()> {
            total = Some(match total {
                Some(t) => t.add(v)?,
                None => v,
            });
            Ok(())
        };
        if self.model.config().diffusion {
            let traj = forward_with_clips(clean, clips, self.model.schedule())?;
            let chain = self.model.run_chain(tape, path, &traj.states[m_len])?;
            for s in &chain.steps {
                let noise = tape.constant(grid_to_ft(&traj.clips[s.m - 1]));
                acc(mse_loss(s.noise_head, noise)?.scale(norm))?;
                acc(speech_loss(s.speech, target)?.scale(norm))?;
            }
        }
        let start = noisy.scale(self.model.gamma_bar(m_len));
        let chain = self.model.run_chain(tape, path, &start)?;
        for s in &chain.steps {
            acc(speech_loss(s.speech, target)?.scale(norm))?;
        }
        let final_speech = chain.final_speech();
        Ok((total.expect("chain has at least one step"), final_speech))
    }

    /// Forward and backward pass for one example; gradients accumulate.
    fn accumulate(&mut self, ex: &Example, cross: CrossMode, weight: f32) -> Result<(f64, CccLosses)> {
        let tape = Tape::new();
        let (loss_a, est_a) = self.path_loss(&tape, Path::Magnitude, &ex.clean_a, &ex.clean_a, &ex.noisy_a, &ex.clips_a)?;
        let (mut total, est_p) = if self.model.has_phase() {
            let (loss_p, est_p) = self.path_loss(&tape, Path::Phase, &ex.clean_p, &ex.clean_a, &ex.noisy_p, &ex.clips_p)?;
            (loss_a.add(loss_p)?, est_p)
        } else {
            (loss_a, tape.constant(grid_to_ft(&ex.noisy_p)))
        };
        let (ea, ep) = if self.cfg.train.ccc_into_model {
            (est_a, est_p)
        } else {
            (tape.constant(est_a.value()), tape.constant(est_p.value()))
        };
        let terms = self.ccc.losses(
            &tape,
            ea,
            ep,
            tape.constant(grid_to_ft(&ex.clean_a)),
            tape.constant(grid_to_ft(&ex.clean_p)),
            cross,
        )?;
        total = total.add(terms.l_a_combined)?.add(terms.l_p_combined)?;
        let value = total.item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.steps + 1)));
        }
        let loss = total.scale(weight);
        let (model, ccc) = (self.model.store_mut(), self.ccc.store_mut());
        tape.backward_multi(loss, &mut [model, ccc])?;
        Ok((value, terms.values))
    }

    fn zero_grad(&mut self) {
        self.model.store_mut().zero_grad();
        self.ccc.store_mut().zero_grad();
    }

    /// Runs one epoch (1-based); pushes one loss-log row per batch.
    pub fn run_epoch(&mut self, epoch: usize, log: &mut Vec<LossRow>, warnings: &mut Vec<String>) -> Result<EpochStats> {
        let lr = lr_at(epoch, &self.cfg.train);
        let cross = self.cross_mode(epoch);
        let mut order: Vec<usize> = (0..self.corpus.train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut norm_sum, mut count, mut batches) = (0.0, 0.0, 0usize, 0usize);
        let (mut a_sum, mut p_sum) = (0.0, 0.0);
        for batch in order.chunks(self.cfg.train.batch_size) {
            self.zero_grad();
            let weight = 1.0 / batch.len() as f32;
            let mut rows = Vec::with_capacity(batch.len());
            for &i in batch {
                let corpus = self.corpus;
                let ex = self.example(&corpus.train[i])?;
                let (v, l) = self.accumulate(&ex, cross, weight)?;
                loss_sum += v;
                a_sum += l.l_a_combined;
                p_sum += l.l_p_combined;
                count += 1;
                rows.push(l);
            }
            let norm = clip_grad_norm(
                &mut [self.model.store_mut(), self.ccc.store_mut()],
                self.cfg.train.grad_clip,
            );
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm at step {}", self.steps + 1)));
            }
            self.opt_model.step(self.model.store_mut(), lr)?;
            if cross != CrossMode::None {
                self.opt_ccc.step(self.ccc.store_mut(), lr)?;
            }
            warnings.extend(self.model.clamp_coefficients());
            self.steps += 1;
            norm_sum += norm;
            batches += 1;
            log.push(LossRow {
                epoch,
                step: self.steps,
                losses: mean_losses(&rows),
            });
        }
        self.zero_grad();
        let n = count.max(1) as f64;
        Ok(EpochStats {
            epoch,
            lr,
            loss: loss_sum / n,
            l_a_combined: a_sum / n,
            l_p_combined: p_sum / n,
            grad_norm: norm_sum / batches.max(1) as f64,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn optimizer_steps(&self) -> (u64, u64) {
        (self.opt_model.steps(), self.opt_ccc.steps())
    }

    fn into_report(self, epochs: Vec<EpochStats>, loss_log: Vec<LossRow>, warnings: Vec<String>) -> TrainReport {
        TrainReport {
            model: self.model,
            ccc: self.ccc,
            epochs,
            loss_log,
            steps: self.steps,
            warnings,
        }
    }
}

fn write_logs(out: &OutputDir, epochs: &[EpochStats], log: &[LossRow]) -> Result<()> {
    write_atomic(&out.loss_log(), loss_log_csv(log).as_bytes())?;
    write_atomic(&out.metrics(), metrics_csv(epochs).as_bytes())
}

/// Trains for `cfg.train.epochs` epochs. With an output directory, writes
/// the config dump, loss log, epoch metrics and checkpoints. A non-finite
/// loss or gradient aborts with [`Error::NonFinite`]; the checkpoint on disk
/// then holds the last parameters that trained cleanly.
pub fn train(
    cfg: &RunConfig,
    corpus: &Corpus,
    out: Option<&OutputDir>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg, corpus)?;
    if let Some(out) = out {
        write_atomic(&out.config(), cfg.to_text().as_bytes())?;
    }
    let (mut epochs, mut log, mut warnings) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 1..=cfg.train.epochs {
        let last_good = trainer.model.clone();
        match trainer.run_epoch(epoch, &mut log, &mut warnings) {
            Ok(stats) => {
                progress(&stats);
                epochs.push(stats);
            }
            Err(e) => {
                if let Some(out) = out {
                    let keep = if trainer.model.store().all_finite() { &trainer.model } else { &last_good };
                    checkpoint::save(keep, &out.checkpoint())?;
                    write_logs(out, &epochs, &log)?;
                }
                return Err(e);
            }
        }
        if let Some(out) = out {
            let every = cfg.train.checkpoint_every;
            if every > 0 && epoch % every == 0 && epoch < cfg.train.epochs {
                checkpoint::save(&trainer.model, &out.epoch_checkpoint(epoch))?;
            }
        }
    }
    if let Some(out) = out {
        checkpoint::save(&trainer.model, &out.checkpoint())?;
        write_logs(out, &epochs, &log)?;
    }
    Ok(trainer.into_report(epochs, log, warnings))
}

#[cfg(test)]
mod tests;
