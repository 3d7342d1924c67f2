//! Real-noise clip bank: recordings are halved into train/eval portions,
//! segmented into fixed-length clips, and mixed with speech at a target SNR.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::audio::read_wav;
use crate::dsp::{mean_square, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseClip {
    pub wave: Waveform,
    /// Index of the source recording within its noise type.
    pub source: usize,
    /// Start of the clip within the source recording, in samples.
    pub source_offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct NoiseEntry {
    pub train: Vec<NoiseClip>,
    pub eval: Vec<NoiseClip>,
}

impl NoiseEntry {
    pub fn clips(&self, split: Split) -> &[NoiseClip] {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseBank {
    entries: BTreeMap<String, NoiseEntry>,
    clip_len: usize,
}

impl NoiseBank {
    /// Builds a bank from in-memory recordings keyed by noise type.
    pub fn from_recordings(recordings: BTreeMap<String, Vec<Waveform>>, clip_len: usize) -> Result<Self> {
        if clip_len == 0 {
            return Err(Error::Config("clip_len must be positive".into()));
        }
        if recordings.is_empty() {
            return Err(Error::MissingInput("no noise recordings".into()));
        }
        let mut entries = BTreeMap::new();
        for (label, recs) in recordings {
            if recs.is_empty() {
                return Err(Error::MissingInput(format!("noise type `{label}` has no recordings")));
            }
            let mut entry = NoiseEntry::default();
            for (source, rec) in recs.iter().enumerate() {
                if rec.len() < 2 * clip_len {
                    return Err(Error::Length {
                        len: rec.len(),
                        min: 2 * clip_len,
                    });
                }
                let half = rec.len() / 2;
                for (split, start) in [(Split::Train, 0), (Split::Eval, half)] {
                    let dst = match split {
                        Split::Train => &mut entry.train,
                        Split::Eval => &mut entry.eval,
                    };
                    for k in 0..half / clip_len {
                        let off = start + k * clip_len;
                        dst.push(NoiseClip {
                            wave: Waveform::new(rec.samples[off..off + clip_len].to_vec(), rec.sample_rate),
                            source,
                            source_offset: off,
                        });
                    }
                }
            }
            entries.insert(label, entry);
        }
        Ok(Self { entries, clip_len })
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    pub fn noise_types(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, noise_type: &str) -> Result<&NoiseEntry> {
        self.entries
            .get(noise_type)
            .ok_or_else(|| Error::UnknownNoiseType(noise_type.to_string()))
    }

    /// Keeps only the listed noise types.
    pub fn restrict(&self, types: &[String]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for t in types {
            entries.insert(t.clone(), self.entry(t)?.clone());
        }
        Ok(Self {
            entries,
            clip_len: self.clip_len,
        })
    }

    /// Uniform draw over the eligible clips. `"any"` pools every noise type.
    pub fn sample_clip<R: Rng + ?Sized>(
        &self,
        noise_type: &str,
        split: Split,
        rng: &mut R,
    ) -> Result<(&str, &NoiseClip)> {
        let pool: Vec<(&str, &NoiseClip)> = if noise_type == "any" {
            self.entries
                .iter()
                .flat_map(|(k, e)| e.clips(split).iter().map(move |c| (k.as_str(), c)))
                .collect()
        } else {
            let (k, e) = self
                .entries
                .get_key_value(noise_type)
                .ok_or_else(|| Error::UnknownNoiseType(noise_type.to_string()))?;
            e.clips(split).iter().map(|c| (k.as_str(), c)).collect()
        };
        if pool.is_empty() {
            return Err(Error::MissingInput(format!("no {split} clips for `{noise_type}`")));
        }
        Ok(pool[rng.gen_range(0..pool.len())])
    }

    /// `<split>\t<noise_type>\t<clip_index>\t<source_offset_samples>` per clip.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for split in [Split::Train, Split::Eval] {
            for (label, e) in &self.entries {
                for (i, c) in e.clips(split).iter().enumerate() {
                    out.push_str(&format!("{split}\t{label}\t{i}\t{}\n", c.source_offset));
                }
            }
        }
        out
    }
}

/// Reads `<root>/<noise_type>/*.wav` and builds a bank.
pub fn load_noise_dir(root: &Path, clip_len: usize) -> Result<NoiseBank> {
    let read_dir = |p: &Path| fs::read_dir(p).map_err(|e| Error::io(format!("reading {}", p.display()), e));
    let mut recordings = BTreeMap::new();
    let mut dirs: Vec<_> = read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let label = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut files: Vec<_> = read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            continue;
        }
        let recs = files.iter().map(|f| read_wav(f)).collect::<Result<Vec<_>>>()?;
        recordings.insert(label, recs);
    }
    if recordings.is_empty() {
        return Err(Error::MissingInput(format!(
            "no `<noise_type>/*.wav` recordings under {}",
            root.display()
        )));
    }
    NoiseBank::from_recordings(recordings, clip_len)
}

/// Tiles a short clip or cuts a random window from a long one.
pub fn fit_clip<R: Rng + ?Sized>(clip: &Waveform, len: usize, rng: &mut R) -> Waveform {
    let n = clip.len();
    let samples = if n == 0 {
        vec![0.0; len]
    } else if n >= len {
        let off = if n > len { rng.gen_range(0..=n - len) } else { 0 };
        clip.samples[off..off + len].to_vec()
    } else {
        clip.samples.iter().copied().cycle().take(len).collect()
    };
    Waveform::new(samples, clip.sample_rate)
}

/// Gain applied to `noise` so that the mixture has the requested SNR.
pub fn snr_gain(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    if speech.len() != noise.len() {
        return Err(Error::dim("mix_at_snr", &[speech.len()], &[noise.len()]));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("snr_db must be finite, got {snr_db}")));
    }
    let ps = mean_square(&speech.samples);
    let pn = mean_square(&noise.samples);
    if ps <= 0.0 {
        return Err(Error::Degenerate("speech has zero power".into()));
    }
    if pn <= 0.0 {
        return Err(Error::Degenerate("noise has zero power".into()));
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Returns `(noisy, scaled_noise)`.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    let g = snr_gain(speech, noise, snr_db)?;
    let scaled: Vec<f64> = noise.samples.iter().map(|v| v * g).collect();
    let noisy = speech.samples.iter().zip(&scaled).map(|(s, n)| s + n).collect();
    Ok((
        Waveform::new(noisy, speech.sample_rate),
        Waveform::new(scaled, noise.sample_rate),
    ))
}
