//! Synthetic corpora: a harmonic-plus-formant speech surrogate and a handful
//! of stationary and non-stationary noise types.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{mean_square, Waveform};
use crate::error::{Error, Result};
use crate::noisebank::NoiseBank;

pub const NOISE_TYPES: &[&str] = &["white", "pink", "brown", "hum", "babble"];
/// Noise types used when a configuration names none.
pub const TOY_NOISE_TYPES: &[&str] = &["white", "pink"];
pub const SPEECH_RMS: f64 = 0.1;

/// Vowel formant centres in Hz.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
const MAX_HARMONIC_HZ: f64 = 4000.0;

fn formant_gain(f: f64, formants: &[f64; 3]) -> f64 {
    let peaks: f64 = formants
        .iter()
        .zip(BANDWIDTHS)
        .map(|(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)).sqrt())
        .sum();
    (0.05 + peaks) / (1.0 + f / 1000.0)
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = mean_square(x).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

const BREATH: f64 = 0.1;

/// Connected syllable train: voiced vowels with a light aspiration component
/// and short gaps between syllables.
pub fn speech<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Waveform {
    let sr = sample_rate as f64;
    let mut out = vec![0.0; len];
    let base_f0: f64 = rng.gen_range(95.0..210.0);
    let mut t = (rng.gen_range(0.02..0.08) * sr) as usize;
    while t < len {
        let dur = ((rng.gen_range(0.12..0.30) * sr) as usize).min(len - t);
        let formants = VOWELS[rng.gen_range(0..VOWELS.len())].map(|f| f * rng.gen_range(0.92..1.08));
        let f0_start: f64 = base_f0 * rng.gen_range(0.85..1.15);
        let f0_end = base_f0 * rng.gen_range(0.85..1.15);
        let loud = rng.gen_range(0.5..1.0);
        let harmonics = (MAX_HARMONIC_HZ / f0_start.max(f0_end)).floor() as usize;
        let amps: Vec<f64> = (1..=harmonics)
            .map(|k| formant_gain(k as f64 * 0.5 * (f0_start + f0_end), &formants))
            .collect();
        let offsets: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let mut phase = 0.0;
        for i in 0..dur {
            let frac = i as f64 / dur.max(1) as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += 2.0 * PI * f0 / sr;
            let env = loud * (PI * frac).sin().sqrt();
            let voiced: f64 = amps
                .iter()
                .zip(&offsets)
                .enumerate()
                .map(|(k, (a, o))| a * ((k + 1) as f64 * phase + o).sin())
                .sum();
            let breath: f64 = StandardNormal.sample(rng);
            out[t + i] += env * (voiced + BREATH * breath);
        }
        t += dur + (rng.gen_range(0.0..0.04) * sr) as usize;
    }
    normalize_rms(&mut out, SPEECH_RMS);
    Waveform::new(out, sample_rate)
}

/// `n` utterances; utterance `i` depends only on `(seed, i)`.
pub fn speech_corpus(n: usize, len: usize, sample_rate: u32, seed: u64) -> Vec<Waveform> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            speech(len, sample_rate, &mut rng)
        })
        .collect()
}

fn gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Unit-RMS noise of the named type.
pub fn noise<R: Rng + ?Sized>(kind: &str, len: usize, sample_rate: u32, rng: &mut R) -> Result<Waveform> {
    let mut x = match kind {
        "white" => gaussian(len, rng),
        "pink" => {
            let w = gaussian(len, rng);
            let mut b = [0.0f64; 7];
            w.iter()
                .map(|v| {
                    b[0] = 0.99886 * b[0] + v * 0.0555179;
                    b[1] = 0.99332 * b[1] + v * 0.0750759;
                    b[2] = 0.96900 * b[2] + v * 0.1538520;
                    b[3] = 0.86650 * b[3] + v * 0.3104856;
                    b[4] = 0.55000 * b[4] + v * 0.5329522;
                    b[5] = -0.7616 * b[5] - v * 0.0168980;
                    let y = b[..6].iter().sum::<f64>() + b[6] + v * 0.5362;
                    b[6] = v * 0.115926;
                    y
                })
                .collect()
        }
        "brown" => {
            let mut acc = 0.0;
            gaussian(len, rng)
                .into_iter()
                .map(|v| {
                    acc = 0.995 * acc + v;
                    acc
                })
                .collect()
        }
        "hum" => {
            let f = rng.gen_range(50.0..60.0);
            let phases: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let w = gaussian(len, rng);
            (0..len)
                .map(|i| {
                    let t = i as f64 / sample_rate as f64;
                    let h: f64 = phases
                        .iter()
                        .enumerate()
                        .map(|(k, p)| (2.0 * PI * f * (k + 1) as f64 * t + p).sin() / (k + 1) as f64)
                        .sum();
                    h + 0.05 * w[i]
                })
                .collect()
        }
        "babble" => {
            let mut acc = vec![0.0; len];
            for _ in 0..6 {
                let talker = speech(len, sample_rate, rng);
                let shift = rng.gen_range(0..len.max(1));
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += talker.samples[(i + shift) % len.max(1)];
                }
            }
            acc
        }
        other => return Err(Error::UnknownNoiseType(other.to_string())),
    };
    normalize_rms(&mut x, 1.0);
    Ok(Waveform::new(x, sample_rate))
}

/// One recording per type of `recording_len` samples, cut into clips.
pub fn noise_bank(types: &[&str], recording_len: usize, clip_len: usize, sample_rate: u32, seed: u64) -> Result<NoiseBank> {
    let mut recordings = BTreeMap::new();
    for (i, kind) in types.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + i as u64);
        recordings.insert(kind.to_string(), vec![noise(kind, recording_len, sample_rate, &mut rng)?]);
    }
    NoiseBank::from_recordings(recordings, clip_len)
}
