//! Short-time objective intelligibility, following the reference procedure:
//! 10 kHz resampling, silent-frame removal, one-third-octave bands, 384 ms
//! segments and clipped normalised correlation.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

use super::{check_pair, dot, SILENCE_DB};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;

/// Windowed-sinc resampling between integer rates.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let cut = (to as f64 / from as f64).min(1.0);
    let half = (16.0 / cut).ceil() as i64;
    let out_len = ((x.len() as u64 * to as u64).div_ceil(from as u64)) as usize;
    let pi = std::f64::consts::PI;
    (0..out_len)
        .map(|k| {
            let t = (k as u64 * from as u64) as f64 / to as f64;
            let c = t.floor() as i64;
            let mut acc = 0.0;
            for n in (c - half + 1).max(0)..=(c + half).min(x.len() as i64 - 1) {
                let d = t - n as f64;
                let u = d / half as f64;
                if u.abs() >= 1.0 {
                    continue;
                }
                let arg = pi * cut * d;
                let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
                acc += x[n as usize] * cut * sinc * (0.5 + 0.5 * (pi * u).cos());
            }
            acc
        })
        .collect()
}

fn hanning_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frames(len: usize) -> Vec<usize> {
    if len < FRAME {
        return Vec::new();
    }
    (0..=len - FRAME).step_by(HOP).collect()
}

/// Drops frames of `x` more than the dynamic range below its loudest frame,
/// applying the same selection to `y`, and overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hanning_inner(FRAME);
    let starts = frames(x.len());
    let energy: Vec<f64> = starts
        .iter()
        .map(|&i| {
            let e: f64 = (0..FRAME).map(|k| (w[k] * x[i + k]).powi(2)).sum();
            20.0 * (e.sqrt() + f64::EPSILON).log10()
        })
        .collect();
    let peak = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, e)| peak - SILENCE_DB - **e < 0.0)
        .map(|(i, _)| *i)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * HOP + FRAME;
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (j, &i) in kept.iter().enumerate() {
        for k in 0..FRAME {
            xs[j * HOP + k] += w[k] * x[i + k];
            ys[j * HOP + k] += w[k] * y[i + k];
        }
    }
    (xs, ys)
}

/// Band edges as FFT bin ranges `[lo, hi)`.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let nearest = |f: f64| -> usize {
        (0..bins)
            .min_by(|&a, &b| {
                let fa = a as f64 * FS as f64 / NFFT as f64;
                let fb = b as f64 * FS as f64 / NFFT as f64;
                (fa - f).abs().total_cmp(&(fb - f).abs())
            })
            .unwrap_or(0)
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// One-third-octave band envelopes, `[band][frame]`.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let w = hanning_inner(FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let starts = frames(x.len());
    let mut out = vec![Vec::with_capacity(starts.len()); bands.len()];
    for &i in &starts {
        let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
        for k in 0..FRAME {
            buf[k].re = w[k] * x[i + k];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let p: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(p.sqrt());
        }
    }
    out
}

fn normalize_row(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = dot(v, v).sqrt() + f64::EPSILON;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// STOI score in `[0, 1]`.
pub fn stoi(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_pair(reference, estimate, "stoi")?;
    let x = resample(&reference.samples, reference.sample_rate, FS);
    let y = resample(&estimate.samples, estimate.sample_rate, FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bins();
    let xb = band_envelopes(&x, &bands);
    let yb = band_envelopes(&y, &bands);
    let n_frames = xb[0].len();
    if n_frames < SEGMENT {
        return Err(Error::Length {
            len: reference.len(),
            min: (reference.sample_rate as usize * ((SEGMENT - 1) * HOP + FRAME)).div_ceil(FS as usize),
        });
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=n_frames {
        for b in 0..BANDS {
            let xs = &xb[b][m - SEGMENT..m];
            let ys = &yb[b][m - SEGMENT..m];
            let alpha = dot(xs, xs).sqrt() / (dot(ys, ys).sqrt() + f64::EPSILON);
            let mut yp: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| (y * alpha).min(x * clip)).collect();
            let mut xn = xs.to_vec();
            normalize_row(&mut yp);
            normalize_row(&mut xn);
            total += dot(&xn, &yp);
            count += 1;
        }
    }
    let d = total / count as f64;
    Ok(if d.is_nan() { 0.0 } else { d.clamp(0.0, 1.0) })
}
