//! Paired magnitude and phase networks and the noise-aware reverse process.

mod blocks;
pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::diffusion::{self, DiffusionSchedule, DEFAULT_GAMMA_END, DEFAULT_GAMMA_START};
use crate::dsp::{unwrap_phase, wrap_phase, Grid, MagPhase, StftConfig};
use crate::error::{Error, Result};

pub use blocks::{dilations, path_param_count, step_embedding, COEFF_LR_SCALE, PRELU_INIT};
use blocks::{PathNet, PathShape};

/// Offset inside the magnitude log feature.
const LOG_FLOOR: f32 = 1e-2;
/// softplus(MASK_BIAS) = 1, so a zero head leaves the magnitude unchanged.
const MASK_BIAS: f32 = 0.541_324_9;
pub const COEFF_MIN: f32 = 1e-4;
pub const COEFF_MAX: f32 = 1.0 - 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub layers_per_block: usize,
    pub stft: StftConfig,
    /// Reverse steps; always equal to `n_blocks`.
    pub steps: usize,
    pub gamma_start: f64,
    pub gamma_end: f64,
    /// Off: a single-step regressor from the noisy state (no reverse chain).
    pub diffusion: bool,
    /// Off: no phase network; the noisy phase is kept.
    pub phase_aware: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_blocks: 6,
            channels: 16,
            kernel: 3,
            layers_per_block: 2,
            stft: StftConfig::default(),
            steps: 6,
            gamma_start: DEFAULT_GAMMA_START,
            gamma_end: DEFAULT_GAMMA_END,
            diffusion: true,
            phase_aware: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.n_blocks < 1 || self.channels < 1 || self.layers_per_block < 1 {
            return Err(Error::Config("n_blocks, channels and layers_per_block must be at least 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.steps != self.n_blocks {
            return Err(Error::Config(format!(
                "reverse steps ({}) must equal the number of blocks ({})",
                self.steps, self.n_blocks
            )));
        }
        DiffusionSchedule::new(self.steps, self.gamma_start, self.gamma_end)?;
        Ok(())
    }

    /// Schedule endpoints rounded to f32, the precision a checkpoint keeps.
    fn canonical(mut self) -> Self {
        self.gamma_start = self.gamma_start as f32 as f64;
        self.gamma_end = self.gamma_end as f32 as f64;
        self
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn time_multiple(&self) -> usize {
        1 << self.n_blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Path {
    Magnitude,
    Phase,
}

/// One reverse step of one path. Grids are `[F, T]`, unpadded.
pub struct StepOutput<'t> {
    pub m: usize,
    /// Next state `Y_{m−1}` (padded).
    pub y_prev: Var<'t>,
    /// Noise estimate in the units the reverse update consumes: (1 − γ_m)·I_m.
    pub i_hat: Var<'t>,
    /// Raw noise head, trained against the clip feature `I_m`.
    pub noise_head: Var<'t>,
    pub speech: Var<'t>,
    pub latent: Var<'t>,
}

pub struct Chain<'t> {
    /// Ordered m = M … 1.
    pub steps: Vec<StepOutput<'t>>,
}

impl<'t> Chain<'t> {
    pub fn final_speech(&self) -> Var<'t> {
        self.steps[self.steps.len() - 1].speech
    }
}

#[derive(Debug, Clone)]
pub struct Sedm {
    cfg: ModelConfig,
    store: ParamStore,
    mag: PathNet,
    phase: Option<PathNet>,
    schedule: DiffusionSchedule,
}

impl Sedm {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.canonical();
        let schedule = DiffusionSchedule::new(cfg.steps, cfg.gamma_start, cfg.gamma_end)?;
        let coeffs: Vec<(f64, f64)> = (1..=cfg.steps).map(|m| (schedule.gamma(m), schedule.theta(m))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = cfg.bins();
        let shape = |in_channels| PathShape {
            in_channels,
            out_channels: f,
            channels: cfg.channels,
            kernel: cfg.kernel,
            layers: cfg.layers_per_block,
            blocks: cfg.n_blocks,
        };
        let mag = PathNet::new(&mut store, "mag", &shape(f), &coeffs, &mut rng);
        let phase = cfg
            .phase_aware
            .then(|| PathNet::new(&mut store, "phase", &shape(2 * f), &coeffs, &mut rng));
        Ok(Self {
            cfg,
            store,
            mag,
            phase,
            schedule,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Closed-form parameter count for a configuration.
    pub fn expected_params(cfg: &ModelConfig) -> usize {
        let f = cfg.bins();
        let p = |cin| path_param_count(cin, f, cfg.channels, cfg.kernel, cfg.layers_per_block, cfg.n_blocks);
        p(f) + if cfg.phase_aware { p(2 * f) } else { 0 }
    }

    pub fn has_phase(&self) -> bool {
        self.phase.is_some()
    }

    /// Reverse steps actually run: `M`, or 1 without diffusion.
    pub fn chain_len(&self) -> usize {
        if self.cfg.diffusion {
            self.cfg.steps
        } else {
            1
        }
    }

    /// γ̄_m used to read the state; 1 without diffusion.
    pub fn gamma_bar(&self, m: usize) -> f64 {
        if self.cfg.diffusion {
            self.schedule.gamma_bar(m)
        } else {
            1.0
        }
    }

    fn net(&self, path: Path) -> Result<&PathNet> {
        match path {
            Path::Magnitude => Ok(&self.mag),
            Path::Phase => self
                .phase
                .as_ref()
                .ok_or_else(|| Error::Config("model has no phase network".into())),
        }
    }

    /// Current learnable (γ_m, θ_m).
    pub fn coefficients(&self, path: Path, m: usize) -> Result<(f32, f32)> {
        let net = self.net(path)?;
        let b = net
            .up
            .get(m.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("step {m} outside 1..={}", net.up.len())))?;
        Ok((self.store.get(b.gamma).value.data()[0], self.store.get(b.theta).value.data()[0]))
    }

    /// σ_m from the schedule's γ̄ and the current θ_m.
    pub fn sigma(&self, path: Path, m: usize) -> Result<f64> {
        let (_, theta) = self.coefficients(path, m)?;
        Ok(diffusion::sigma(self.schedule.gamma_bar(m - 1), self.schedule.gamma_bar(m), theta as f64))
    }

    /// Clamps every γ_m, θ_m into `[COEFF_MIN, COEFF_MAX]`, returning one
    /// warning per clamped value.
    pub fn clamp_coefficients(&mut self) -> Vec<String> {
        let mut warnings = Vec::new();
        let ids: Vec<_> = [Some(&self.mag), self.phase.as_ref()]
            .into_iter()
            .flatten()
            .flat_map(|n| n.up.iter().flat_map(|b| [b.gamma, b.theta]))
            .collect();
        for id in ids {
            let p = self.store.get_mut(id);
            let v = p.value.data()[0];
            let c = if v.is_nan() { COEFF_MIN } else { v.clamp(COEFF_MIN, COEFF_MAX) };
            if c != v {
                warnings.push(format!("{} = {v} clamped to {c}", p.name));
                p.value.data_mut()[0] = c;
            }
        }
        warnings
    }

    /// One reverse step. `state` is `Ỹ_m` as `[F, T]` with `T` a multiple of
    /// 2^N; `offset` is the deterministic bias the chain has accumulated in
    /// the state so far.
    pub fn reverse_step<'t>(
        &self,
        tape: &'t Tape,
        path: Path,
        state: Var<'t>,
        offset: f64,
        m: usize,
    ) -> Result<StepOutput<'t>> {
        let net = self.net(path)?;
        let base = state.add_scalar(-offset as f32).scale((1.0 / self.gamma_bar(m)) as f32);
        let input = match path {
            Path::Magnitude => base.abs().add_scalar(LOG_FLOOR).ln(),
            Path::Phase => base.cos().concat_rows(base.sin())?,
        };
        let out = net.forward(tape, &self.store, input, m)?;
        let speech = match path {
            Path::Magnitude => base.abs().mul(out.speech.add_scalar(MASK_BIAS).softplus())?,
            Path::Phase => base.add(out.speech)?,
        };
        let block = &net.up[m - 1];
        let i_hat = out.noise.scale((1.0 - self.schedule.gamma(m)) as f32);
        let y_prev = if self.cfg.diffusion {
            let g = tape.param(&self.store, block.gamma);
            let th = tape.param(&self.store, block.theta);
            let inv_g = g.recip();
            let noise_coef = th.mul(g.mul(g.scale(-1.0).add_scalar(1.0))?.recip())?;
            let k = ((1.0 - self.schedule.gamma_bar(m - 1)) / (1.0 - self.schedule.gamma_bar(m))) as f32;
            let sigma = th.scale(k);
            state.mul_bcast(inv_g)?.sub(i_hat.mul_bcast(noise_coef)?)?.add_bcast(sigma)?
        } else {
            state
        };
        Ok(StepOutput {
            m,
            y_prev,
            i_hat,
            noise_head: out.noise,
            speech,
            latent: out.latent,
        })
    }

    /// Runs the reverse chain from `Ỹ_M` (`[T, F]` grid), returning per-step
    /// outputs with padding stripped from `speech`, `noise_head` and `i_hat`.
    pub fn run_chain<'t>(&self, tape: &'t Tape, path: Path, start: &Grid) -> Result<Chain<'t>> {
        self.check_bins(start)?;
        let frames = start.rows;
        let padded = frames.div_ceil(self.cfg.time_multiple()) * self.cfg.time_multiple();
        let mut state = tape
            .constant(grid_to_ft(start))
            .pad_cols(0, padded - frames)?;
        let mut offset = 0.0f64;
        let mut steps = Vec::with_capacity(self.chain_len());
        for m in (1..=self.chain_len()).rev() {
            let mut s = self.reverse_step(tape, path, state, offset, m)?;
            if self.cfg.diffusion {
                let (g, _) = self.coefficients(path, m)?;
                offset = offset / g as f64 + self.sigma(path, m)?;
            }
            state = s.y_prev;
            if padded != frames {
                s.speech = s.speech.slice_cols(0, frames)?;
                s.noise_head = s.noise_head.slice_cols(0, frames)?;
                s.i_hat = s.i_hat.slice_cols(0, frames)?;
            }
            steps.push(s);
        }
        Ok(Chain { steps })
    }

    fn check_bins(&self, g: &Grid) -> Result<()> {
        if g.cols != self.cfg.bins() {
            return Err(Error::dim("model input [T, F]", &[g.rows, g.cols], &[g.rows, self.cfg.bins()]));
        }
        if g.rows == 0 {
            return Err(Error::Length { len: 0, min: 1 });
        }
        Ok(())
    }

    /// Single reverse step on grids: returns `(y_prev, i_hat, s_hat)` as
    /// `[T, F]` grids with no accumulated bias in the state.
    pub fn reverse_step_grid(&self, path: Path, y: &Grid, m: usize) -> Result<(Grid, Grid, Grid)> {
        self.check_bins(y)?;
        if m == 0 || m > self.chain_len() {
            return Err(Error::Config(format!("step {m} outside 1..={}", self.chain_len())));
        }
        let tape = Tape::inference();
        let frames = y.rows;
        let padded = frames.div_ceil(self.cfg.time_multiple()) * self.cfg.time_multiple();
        let state = tape.constant(grid_to_ft(y)).pad_cols(0, padded - frames)?;
        let s = self.reverse_step(&tape, path, state, 0.0, m)?;
        let strip = |v: Var<'_>| -> Result<Grid> { ft_to_grid(&v.slice_cols(0, frames)?.value()) };
        Ok((strip(s.y_prev)?, strip(s.i_hat)?, strip(s.speech)?))
    }

    /// Enhances a noisy spectrogram; output dimensions equal the input's.
    pub fn enhance(&self, noisy: &MagPhase) -> Result<MagPhase> {
        if !self.store.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        self.check_bins(&noisy.mag)?;
        let scale = noisy.mag.rms();
        if scale <= 0.0 {
            return Ok(noisy.clone());
        }
        let tape = Tape::inference();
        let start = noisy.mag.scale(self.gamma_bar(self.chain_len()) / scale);
        let mag = ft_to_grid(&self.run_chain(&tape, Path::Magnitude, &start)?.final_speech().value())?
            .map(|v| v.max(0.0) * scale);
        let phase = if self.has_phase() {
            let start = unwrap_phase(&noisy.phase).scale(self.gamma_bar(self.chain_len()));
            let out = ft_to_grid(&self.run_chain(&tape, Path::Phase, &start)?.final_speech().value())?;
            wrap_phase(&out)
        } else {
            noisy.phase.clone()
        };
        if !mag.is_finite() || !phase.is_finite() {
            return Err(Error::NonFinite("enhanced spectrogram".into()));
        }
        MagPhase::new(mag, phase)
    }

    /// Latent of the final diffusion block for the noisy state at step `m`,
    /// as `[C, T / 2^N]`.
    pub fn latent(&self, path: Path, noisy: &Grid, m: usize) -> Result<Tensor> {
        self.check_bins(noisy)?;
        if m == 0 || m > self.chain_len() {
            return Err(Error::Config(format!("step {m} outside 1..={}", self.chain_len())));
        }
        let tape = Tape::inference();
        let frames = noisy.rows;
        let padded = frames.div_ceil(self.cfg.time_multiple()) * self.cfg.time_multiple();
        let state = tape
            .constant(grid_to_ft(&noisy.scale(self.gamma_bar(m))))
            .pad_cols(0, padded - frames)?;
        Ok(self.reverse_step(&tape, path, state, 0.0, m)?.latent.value())
    }

    pub(crate) fn from_parts(cfg: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(cfg, 0)?;
        if fresh.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                fresh.store.len(),
                store.len()
            )));
        }
        for (a, b) in fresh.store.params().iter().zip(store.params()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        for (dst, src) in fresh.store.params_mut().iter_mut().zip(store.params()) {
            dst.value = src.value.clone();
        }
        fresh.store.zero_grad();
        Ok(fresh)
    }
}

/// `[T, F]` grid to an `[F, T]` tensor.
pub fn grid_to_ft(g: &Grid) -> Tensor {
    let mut data = vec![0.0f32; g.rows * g.cols];
    for t in 0..g.rows {
        for f in 0..g.cols {
            data[f * g.rows + t] = g.data[t * g.cols + f] as f32;
        }
    }
    Tensor::new(&[g.cols, g.rows], data).unwrap_or_else(|_| Tensor::zeros(&[g.cols, g.rows]))
}

/// `[F, T]` tensor to a `[T, F]` grid.
pub fn ft_to_grid(t: &Tensor) -> Result<Grid> {
    let [f, n] = t.shape() else {
        return Err(Error::dim("ft_to_grid", t.shape(), &[0, 0]));
    };
    let (f, n) = (*f, *n);
    let mut data = vec![0.0f64; f * n];
    for k in 0..f {
        for j in 0..n {
            data[j * f + k] = t.data()[k * n + j] as f64;
        }
    }
    Grid::from_vec(n, f, data)
}

#[cfg(test)]
mod tests;
