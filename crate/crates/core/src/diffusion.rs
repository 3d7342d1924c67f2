//! Noise schedule and the forward process that embeds noise-clip features
//! into clean spectral features step by step.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::Grid;
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA_START: f64 = 0.999;
pub const DEFAULT_GAMMA_END: f64 = 0.95;

/// Per-step coefficients, 1-based: `gamma(n)` for `n` in `1..=steps()`.
/// `gamma_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    gamma: Vec<f64>,
    theta: Vec<f64>,
    gamma_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear γ from `gamma_start` to `gamma_end`, θ = sqrt(1 − γ²).
    pub fn new(steps: usize, gamma_start: f64, gamma_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion steps must be at least 1".into()));
        }
        if !(gamma_end > 0.0 && gamma_end <= gamma_start && gamma_start < 1.0) {
            return Err(Error::Config(format!(
                "schedule endpoints must satisfy 0 < gamma_end <= gamma_start < 1, got {gamma_start}, {gamma_end}"
            )));
        }
        let gamma: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    gamma_start
                } else {
                    gamma_start + (gamma_end - gamma_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let theta = gamma.iter().map(|g| (1.0 - g * g).sqrt()).collect();
        Self::from_coefficients(gamma, theta)
    }

    /// Arbitrary coefficients, including degenerate test schedules such as
    /// γ = 1, θ = 0. Requires γ > 0 and θ ≥ 0.
    pub fn from_coefficients(gamma: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if gamma.len() != theta.len() {
            return Err(Error::dim("schedule", &[gamma.len()], &[theta.len()]));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g <= 0.0) || theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("schedule coefficients must be finite with gamma > 0, theta >= 0".into()));
        }
        let mut gamma_bar = Vec::with_capacity(gamma.len() + 1);
        gamma_bar.push(1.0);
        for g in &gamma {
            let last = *gamma_bar.last().unwrap_or(&1.0);
            gamma_bar.push(last * g);
        }
        Ok(Self {
            gamma,
            theta,
            gamma_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self, n: usize) -> f64 {
        self.gamma[n - 1]
    }

    pub fn theta(&self, n: usize) -> f64 {
        self.theta[n - 1]
    }

    pub fn gamma_bar(&self, n: usize) -> f64 {
        self.gamma_bar[n]
    }

    /// Deterministic bias of reverse step `m`:
    /// (1 − γ̄_{m−1}) / (1 − γ̄_m) · θ_m.
    pub fn sigma(&self, m: usize) -> f64 {
        sigma(self.gamma_bar(m - 1), self.gamma_bar(m), self.theta(m))
    }

    /// Accumulated offset left by `m` reverse steps with exact noise
    /// estimates: Σ_m σ_m / γ̄_{m−1}.
    pub fn reverse_bias(&self) -> f64 {
        (1..=self.steps()).map(|m| self.sigma(m) / self.gamma_bar(m - 1)).sum()
    }

    /// `n gamma theta gamma_bar` per line, starting with n = 0.
    pub fn dump(&self) -> String {
        let mut out = format!("0 1 0 {}\n", self.gamma_bar[0]);
        for n in 1..=self.steps() {
            out.push_str(&format!(
                "{n} {} {} {}\n",
                self.gamma(n),
                self.theta(n),
                self.gamma_bar(n)
            ));
        }
        out
    }
}

pub fn sigma(gamma_bar_prev: f64, gamma_bar: f64, theta: f64) -> f64 {
    let den = 1.0 - gamma_bar;
    if den.abs() < f64::EPSILON {
        0.0
    } else {
        (1.0 - gamma_bar_prev) / den * theta
    }
}

/// Y_{m−1} = (1/γ)(Y_m − θ/(1−γ)·Î) + σ for one scalar cell.
pub fn reverse_update(y: f64, i_hat: f64, gamma: f64, theta: f64, sigma: f64) -> f64 {
    (y - theta / (1.0 - gamma) * i_hat) / gamma + sigma
}

/// Y_n = γ_n·Y_{n−1} + θ_n·I_n.
pub fn forward_step(y_prev: &Grid, clip: &Grid, n: usize, sched: &DiffusionSchedule) -> Result<Grid> {
    check_step(n, sched)?;
    y_prev.check_same_shape(clip, "forward_step")?;
    let (g, t) = (sched.gamma(n), sched.theta(n));
    let data = y_prev.data.iter().zip(&clip.data).map(|(y, i)| g * y + t * i).collect();
    Grid::from_vec(y_prev.rows, y_prev.cols, data)
}

/// As [`forward_step`] with a fresh standard-normal grid for the clip.
pub fn gaussian_forward_step<R: Rng + ?Sized>(
    y_prev: &Grid,
    n: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Grid> {
    let noise = gaussian_grid(y_prev.rows, y_prev.cols, rng);
    forward_step(y_prev, &noise, n, sched)
}

pub fn gaussian_grid<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Grid {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Grid { rows, cols, data }
}

fn check_step(n: usize, sched: &DiffusionSchedule) -> Result<()> {
    if n == 0 || n > sched.steps() {
        return Err(Error::Config(format!("step {n} outside 1..={}", sched.steps())));
    }
    Ok(())
}

/// States `Y_0 … Y_N` and the clip features `I_1 … I_N` that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Grid>,
    pub clips: Vec<Grid>,
}

/// Runs the forward process drawing one clip feature per step from `sample`.
pub fn forward_process<R, F>(y0: &Grid, sched: &DiffusionSchedule, rng: &mut R, mut sample: F) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> Result<Grid>,
{
    let mut clips = Vec::with_capacity(sched.steps());
    for n in 1..=sched.steps() {
        clips.push(sample(n, rng)?);
    }
    forward_with_clips(y0, &clips, sched)
}

/// Forward process with pre-drawn clip features.
pub fn forward_with_clips(y0: &Grid, clips: &[Grid], sched: &DiffusionSchedule) -> Result<Trajectory> {
    if clips.len() != sched.steps() {
        return Err(Error::dim("forward_process clips", &[sched.steps()], &[clips.len()]));
    }
    let mut states = vec![y0.clone()];
    for (k, clip) in clips.iter().enumerate() {
        let next = forward_step(&states[k], clip, k + 1, sched)?;
        states.push(next);
    }
    Ok(Trajectory {
        states,
        clips: clips.to_vec(),
    })
}
