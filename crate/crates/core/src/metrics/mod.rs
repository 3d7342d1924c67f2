//! Objective enhancement metrics: SI-SDR, segmental SNR, frequency-weighted
//! segmental SNR and STOI.

mod stoi;

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub use stoi::{resample, stoi};

pub const SI_SDR_CAP: f64 = 60.0;
pub const SEG_MIN: f64 = -10.0;
pub const SEG_MAX: f64 = 35.0;
pub const SEG_FRAME: usize = 512;
pub const SEG_HOP: usize = 256;
pub const FW_FRAME_S: f64 = 0.030;
pub const FW_BANDS: usize = 25;
pub const FW_GAMMA: f64 = 0.2;
/// Frames whose reference energy is this many dB below the loudest frame are skipped.
pub const SILENCE_DB: f64 = 40.0;

fn check_pair(reference: &Waveform, estimate: &Waveform, op: &'static str) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::dim(op, &[reference.len()], &[estimate.len()]));
    }
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::Domain(format!(
            "{op}: sample rates differ ({} vs {})",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    if reference.is_empty() {
        return Err(Error::Length { len: 0, min: 1 });
    }
    if !reference.is_finite() || !estimate.is_finite() {
        return Err(Error::NonFinite(op.into()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate, "si_sdr")?;
    let (s, e) = (&reference.samples, &estimate.samples);
    let energy = dot(s, s);
    if energy == 0.0 {
        return Err(Error::Degenerate("si_sdr reference is all zeros".into()));
    }
    let alpha = dot(e, s) / energy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (x, y) in s.iter().zip(e) {
        let t = alpha * x;
        target += t * t;
        noise += (y - t) * (y - t);
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP);
    }
    if noise == 0.0 {
        return Ok(SI_SDR_CAP);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> Vec<usize> {
    if len <= frame {
        return vec![0];
    }
    (0..=len - frame).step_by(hop).collect()
}

fn frame_of(x: &[f64], start: usize, frame: usize) -> &[f64] {
    &x[start..(start + frame).min(x.len())]
}

fn clamp_seg(v: f64) -> f64 {
    if v.is_nan() {
        SEG_MAX
    } else {
        v.clamp(SEG_MIN, SEG_MAX)
    }
}

/// Segmental SNR with rectangular frames; silent reference frames are skipped.
pub fn ssnr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    ssnr_with(reference, estimate, SEG_FRAME, SEG_HOP)
}

pub fn ssnr_with(reference: &Waveform, estimate: &Waveform, frame: usize, hop: usize) -> Result<f64> {
    check_pair(reference, estimate, "ssnr")?;
    if frame == 0 || hop == 0 {
        return Err(Error::Config("ssnr frame and hop must be positive".into()));
    }
    let (s, e) = (&reference.samples, &estimate.samples);
    let starts = frame_starts(s.len(), frame, hop);
    let energies: Vec<f64> = starts.iter().map(|&i| {
        let f = frame_of(s, i, frame);
        dot(f, f)
    }).collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Degenerate("ssnr reference is silent".into()));
    }
    let floor = peak * 10f64.powf(-SILENCE_DB / 10.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for (&i, &energy) in starts.iter().zip(&energies) {
        if energy <= floor {
            continue;
        }
        let err: f64 = frame_of(s, i, frame)
            .iter()
            .zip(frame_of(e, i, frame))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += if err == 0.0 { SEG_MAX } else { clamp_seg(10.0 * (energy / err).log10()) };
        count += 1;
    }
    Ok(total / count as f64)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Gaussian critical-band filters at mel-spaced centres over
/// `0..sample_rate/2`, `bands × (nfft/2 + 1)`. Bandwidth follows the centre
/// spacing, narrower bands are boosted, and tails below −30 dB are cut.
fn critical_filterbank(bands: usize, nfft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = nfft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let centre = |i: usize| mel_to_hz(top * (i as f64 + 1.0) / (bands + 1) as f64);
    let width = |i: usize| mel_to_hz(top * (i as f64 + 1.5) / (bands + 1) as f64) - mel_to_hz(top * (i as f64 + 0.5) / (bands + 1) as f64);
    let bin_hz = sample_rate as f64 / nfft as f64;
    let min_width = width(0);
    let floor = (-30.0 / (2.0 * std::f64::consts::LN_10)).exp();
    (0..bands)
        .map(|b| {
            let (f0, bw) = (centre(b) / bin_hz, width(b) / bin_hz);
            let norm = (min_width / width(b)).ln();
            (0..bins)
                .map(|k| {
                    let g = (-11.0 * ((k as f64 - f0.floor()) / bw).powi(2) + norm).exp();
                    if g > floor { g } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Half-spectrum magnitude of one windowed frame, normalised to unit area.
fn frame_magnitude(x: &[f64], start: usize, window: &[f64], nfft: usize, fft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|i| {
            let v = if i < window.len() { x.get(start + i).copied().unwrap_or(0.0) * window[i] } else { 0.0 };
            Complex64::new(v, 0.0)
        })
        .collect();
    fft.process(&mut buf);
    let mut mag: Vec<f64> = buf[..nfft / 2 + 1].iter().map(|c| c.norm()).collect();
    let area: f64 = mag.iter().sum();
    if area > 0.0 {
        mag.iter_mut().for_each(|m| *m /= area);
    }
    mag
}

/// Frequency-weighted segmental SNR over mel bands.
pub fn fwsnrseg(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate, "fwsnrseg")?;
    let (s, e) = (&reference.samples, &estimate.samples);
    let frame = ((FW_FRAME_S * reference.sample_rate as f64).round() as usize).max(4);
    let nfft = (2 * frame).next_power_of_two();
    let fb = critical_filterbank(FW_BANDS, nfft, reference.sample_rate);
    let window = hann(frame);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let band = |spec: &[f64]| -> Vec<f64> { fb.iter().map(|w| dot(w, spec)).collect() };
    let mut total = 0.0;
    let mut count = 0usize;
    for start in frame_starts(s.len(), frame, frame / 4) {
        let xs = band(&frame_magnitude(s, start, &window, nfft, &fft));
        let ys = band(&frame_magnitude(e, start, &window, nfft, &fft));
        let mut wsum = 0.0;
        let mut deficit = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let w = x.powf(FW_GAMMA);
            if w == 0.0 {
                continue;
            }
            let d = (x - y) * (x - y);
            let snr = if d == 0.0 { SEG_MAX } else { clamp_seg(10.0 * (x * x / d).log10()) };
            wsum += w;
            deficit += w * (SEG_MAX - snr);
        }
        if wsum == 0.0 {
            continue;
        }
        total += clamp_seg(SEG_MAX - deficit / wsum);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("fwsnrseg reference is silent".into()));
    }
    Ok(clamp_seg(total / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub stoi: f64,
    pub fwsnrseg: f64,
    pub ssnr: f64,
    pub si_sdr: f64,
}

impl MetricReport {
    pub fn compute(reference: &Waveform, estimate: &Waveform) -> Result<Self> {
        Ok(Self {
            stoi: stoi(reference, estimate)?,
            fwsnrseg: fwsnrseg(reference, estimate)?,
            ssnr: ssnr(reference, estimate)?,
            si_sdr: si_sdr(reference, estimate)?,
        })
    }

    pub fn in_range(&self) -> bool {
        (0.0..=1.0).contains(&self.stoi)
            && (SEG_MIN..=SEG_MAX).contains(&self.fwsnrseg)
            && (SEG_MIN..=SEG_MAX).contains(&self.ssnr)
            && (-SI_SDR_CAP..=SI_SDR_CAP).contains(&self.si_sdr)
    }

    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            stoi: sum(|r| r.stoi),
            fwsnrseg: sum(|r| r.fwsnrseg),
            ssnr: sum(|r| r.ssnr),
            si_sdr: sum(|r| r.si_sdr),
        })
    }
}
