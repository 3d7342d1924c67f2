//! Time–frequency analysis and synthesis.
//!
//! Spectrograms are stored frame-major: `T` frames by `F = window_len / 2 + 1`
//! bins. All computation is in `f64`; the network boundary converts to `f32`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// A dense real `rows × cols` grid, row-major. Rows index time frames and
/// columns index frequency bins when the grid holds a spectral feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Grid::from_vec", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Grid {
        self.map(|v| v * k)
    }

    pub fn rms(&self) -> f64 {
        mean_square(&self.data).sqrt()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Grid, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, &self.shape(), &other.shape()));
        }
        Ok(())
    }

    /// Zero-mean, unit-variance copy. A constant grid maps to all zeros.
    pub fn standardized(&self) -> Grid {
        let mean = self.mean();
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / self.data.len().max(1) as f64;
        let sd = var.sqrt();
        if sd <= f64::EPSILON {
            return Grid::zeros(self.rows, self.cols);
        }
        self.map(|v| (v - mean) / sd)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Complex STFT grid, `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
}

impl Spectrogram {
    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.values[t * self.bins + f]
    }
}

/// Polar decomposition of a spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MagPhase {
    pub mag: Grid,
    pub phase: Grid,
}

impl MagPhase {
    pub fn new(mag: Grid, phase: Grid) -> Result<Self> {
        mag.check_same_shape(&phase, "MagPhase::new")?;
        Ok(Self { mag, phase })
    }

    pub fn frames(&self) -> usize {
        self.mag.rows
    }

    pub fn bins(&self) -> usize {
        self.mag.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 512,
            hop: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            window_len,
            hop,
            window: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.window_len % 2 != 0 {
            return Err(Error::Config(format!(
                "window_len must be positive and even, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= window_len, got hop {} for window {}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    /// Periodic window, which satisfies constant overlap-add at 50% hop.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = w.samples.len();
    if len < cfg.window_len {
        return Err(Error::Length {
            len,
            min: cfg.window_len,
        });
    }
    let n = cfg.window_len;
    let frames = cfg.frames_for(len);
    let bins = cfg.bins();
    let window = cfg.window();
    let fft = plan(n, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut values = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        values.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames,
        bins,
        values,
    })
}

/// Overlap-add synthesis with window-square normalisation. Output length is
/// `(T - 1) * hop + window_len`; samples whose normalisation energy is zero
/// are set to 0.
pub fn istft(s: &Spectrogram, cfg: &StftConfig) -> Result<Waveform> {
    cfg.validate()?;
    if s.bins != cfg.bins() {
        return Err(Error::dim("istft", &[s.frames, s.bins], &[s.frames, cfg.bins()]));
    }
    if s.values.len() != s.frames * s.bins {
        return Err(Error::dim("istft", &[s.frames * s.bins], &[s.values.len()]));
    }
    let n = cfg.window_len;
    if s.frames == 0 {
        return Ok(Waveform::new(Vec::new(), SAMPLE_RATE));
    }
    let out_len = (s.frames - 1) * cfg.hop + n;
    let window = cfg.window();
    let ifft = plan(n, true);
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..s.frames {
        let row = &s.values[t * s.bins..(t + 1) * s.bins];
        buf[..s.bins].copy_from_slice(row);
        // Hermitian completion; DC and Nyquist imaginary parts are discarded.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, d) in out.iter_mut().zip(&norm) {
        *o = if *d > 1e-12 { *o / d } else { 0.0 };
    }
    Ok(Waveform::new(out, SAMPLE_RATE))
}

/// Wraps any real angle into `(-π, π]`.
pub fn wrap(x: f64) -> f64 {
    PI - (PI - x).rem_euclid(2.0 * PI)
}

pub fn to_mag_phase(s: &Spectrogram) -> MagPhase {
    let mut mag = Grid::zeros(s.frames, s.bins);
    let mut phase = Grid::zeros(s.frames, s.bins);
    for (i, c) in s.values.iter().enumerate() {
        let m = c.norm();
        mag.data[i] = m;
        phase.data[i] = if m == 0.0 { 0.0 } else { wrap(c.im.atan2(c.re)) };
    }
    MagPhase { mag, phase }
}

pub fn from_mag_phase(mp: &MagPhase) -> Result<Spectrogram> {
    mp.mag.check_same_shape(&mp.phase, "from_mag_phase")?;
    if let Some(v) = mp.mag.data.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN magnitude {v}")));
    }
    let values = mp
        .mag
        .data
        .iter()
        .zip(&mp.phase.data)
        .map(|(&m, &p)| Complex64::from_polar(m, p))
        .collect();
    Ok(Spectrogram {
        frames: mp.mag.rows,
        bins: mp.mag.cols,
        values,
    })
}

/// Unwraps along the time axis (rows), independently per frequency bin.
pub fn unwrap_phase(phase: &Grid) -> Grid {
    let mut out = phase.clone();
    for f in 0..phase.cols {
        let mut offset = 0.0;
        for t in 1..phase.rows {
            let d = phase.get(t, f) - phase.get(t - 1, f);
            offset += wrap(d) - d;
            out.set(t, f, phase.get(t, f) + offset);
        }
    }
    out
}

pub fn wrap_phase(phase: &Grid) -> Grid {
    phase.map(wrap)
}

/// Sample padding that keeps every input sample away from the zero-energy
/// edges of the synthesis window: `hop` zeros in front, and enough at the
/// back that the last input sample sits in a fully overlapped region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisPadding {
    pub front: usize,
    pub back: usize,
    pub original_len: usize,
}

impl AnalysisPadding {
    pub fn for_len(len: usize, cfg: &StftConfig) -> Self {
        let front = cfg.hop;
        let min_total = front + len + cfg.hop;
        let total = if min_total <= cfg.window_len {
            cfg.window_len
        } else {
            let frames = (min_total - cfg.window_len).div_ceil(cfg.hop) + 1;
            (frames - 1) * cfg.hop + cfg.window_len
        };
        Self {
            front,
            back: total - front - len,
            original_len: len,
        }
    }

    pub fn apply(&self, w: &Waveform) -> Waveform {
        let mut samples = vec![0.0; self.front];
        samples.extend_from_slice(&w.samples);
        samples.resize(self.front + w.samples.len() + self.back, 0.0);
        Waveform::new(samples, w.sample_rate)
    }

    pub fn strip(&self, w: &Waveform) -> Waveform {
        let end = (self.front + self.original_len).min(w.samples.len());
        let mut samples = w.samples[self.front.min(end)..end].to_vec();
        samples.resize(self.original_len, 0.0);
        Waveform::new(samples, w.sample_rate)
    }
}

/// Padded analysis used by the enhancement pipeline.
pub fn analyze(w: &Waveform, cfg: &StftConfig) -> Result<(MagPhase, AnalysisPadding)> {
    let pad = AnalysisPadding::for_len(w.len(), cfg);
    let spec = stft(&pad.apply(w), cfg)?;
    Ok((to_mag_phase(&spec), pad))
}

/// Inverse of [`analyze`]; output has the original length.
pub fn synthesize(mp: &MagPhase, pad: &AnalysisPadding, cfg: &StftConfig) -> Result<Waveform> {
    let spec = from_mag_phase(mp)?;
    let w = istft(&spec, cfg)?;
    Ok(pad.strip(&w))
}
