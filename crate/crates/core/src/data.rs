//! Training and evaluation corpora: clean utterances, a noise bank, and the
//! fixed held-out mixtures.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::read_wav;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::noisebank::{fit_clip, load_noise_dir, mix_at_snr, NoiseBank, Split};
use crate::synth;
use crate::trainer::DataConfig;

/// A noisy utterance with its clean reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub name: String,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub noise_type: String,
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Waveform>,
    pub eval: Vec<Mixture>,
    pub bank: NoiseBank,
    pub snr_db: Vec<f64>,
}

/// Sorted `*.wav` files directly under `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Corpus {
    pub fn build(cfg: &DataConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, eval_clean, names) = match &cfg.speech_dir {
            Some(dir) => {
                let files = list_wavs(dir)?;
                if files.len() < 2 {
                    return Err(Error::MissingInput(format!(
                        "need at least two speech WAV files in {}, found {}",
                        dir.display(),
                        files.len()
                    )));
                }
                let n_eval = cfg.eval_utterances.min(files.len() - 1);
                let waves = files.iter().map(|f| read_wav(f)).collect::<Result<Vec<_>>>()?;
                let split = waves.len() - n_eval;
                let names: Vec<String> = files[split..]
                    .iter()
                    .map(|f| f.file_stem().unwrap_or_default().to_string_lossy().into_owned())
                    .collect();
                let mut train = waves;
                let eval = train.split_off(split);
                (train, eval, names)
            }
            None => {
                let mut all = synth::speech_corpus(
                    cfg.train_utterances + cfg.eval_utterances,
                    cfg.utterance_len,
                    SAMPLE_RATE,
                    cfg.data_seed,
                );
                let eval = all.split_off(cfg.train_utterances);
                let names: Vec<String> = (0..eval.len()).map(|i| format!("eval{i:03}")).collect();
                (all, eval, names)
            }
        };
        let clip_len = cfg.utterance_len;
        let bank = match &cfg.noise_dir {
            Some(dir) => load_noise_dir(dir, clip_len)?,
            None => {
                let types: Vec<&str> = if cfg.noise_types.is_empty() {
                    synth::TOY_NOISE_TYPES.to_vec()
                } else {
                    cfg.noise_types.iter().map(String::as_str).collect()
                };
                synth::noise_bank(&types, cfg.recording_len, clip_len, SAMPLE_RATE, cfg.data_seed)?
            }
        };
        let bank = if cfg.noise_types.is_empty() {
            bank
        } else {
            bank.restrict(&cfg.noise_types)?
        };
        let types: Vec<String> = bank.noise_types().map(String::from).collect();
        let mut eval = Vec::with_capacity(eval_clean.len());
        for (i, (clean, name)) in eval_clean.into_iter().zip(names).enumerate() {
            let noise_type = &types[i % types.len()];
            let clips = bank.entry(noise_type)?.clips(Split::Eval);
            if clips.is_empty() {
                return Err(Error::MissingInput(format!("no eval clips for `{noise_type}`")));
            }
            let clip = &clips[(i / types.len()) % clips.len()];
            let snr_db = cfg.snr_db[i % cfg.snr_db.len()];
            let mut rng = rng_for(cfg.data_seed, 5000 + i as u64);
            let noise = fit_clip(&clip.wave, clean.len(), &mut rng);
            let (noisy, _) = mix_at_snr(&clean, &noise, snr_db)?;
            eval.push(Mixture {
                name,
                clean,
                noisy,
                noise_type: noise_type.clone(),
                snr_db,
            });
        }
        Ok(Self {
            train,
            eval,
            bank,
            snr_db: cfg.snr_db.clone(),
        })
    }

    pub fn noise_types(&self) -> Vec<String> {
        self.bank.noise_types().map(String::from).collect()
    }

    /// Draws a training noise type, SNR and clip, and mixes them with `clean`.
    /// Returns the mixture and the chosen noise type.
    pub fn mix_train<R: Rng + ?Sized>(&self, clean: &Waveform, rng: &mut R) -> Result<(Waveform, String)> {
        let types = self.noise_types();
        let noise_type = types
            .choose(rng)
            .ok_or_else(|| Error::MissingInput("noise bank is empty".into()))?
            .clone();
        let snr = self.snr_db[rng.gen_range(0..self.snr_db.len())];
        let (_, clip) = self.bank.sample_clip(&noise_type, Split::Train, rng)?;
        let noise = fit_clip(&clip.wave, clean.len(), rng);
        let (noisy, _) = mix_at_snr(clean, &noise, snr)?;
        Ok((noisy, noise_type))
    }

    /// `n` training clips of `noise_type`, fitted to `len`.
    pub fn train_clips<R: Rng + ?Sized>(&self, noise_type: &str, n: usize, len: usize, rng: &mut R) -> Result<Vec<Waveform>> {
        (0..n)
            .map(|_| {
                let (_, clip) = self.bank.sample_clip(noise_type, Split::Train, rng)?;
                Ok(fit_clip(&clip.wave, len, rng))
            })
            .collect()
    }
}

/// One line of an utterance manifest:
/// `mix\t<name>\t<clean.wav>\t<noisy.wav>\t<noise_type>\t<snr_db>` or
/// `noise\t<name>\t<clip.wav>\t-\t<noise_type>\t-`. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub enum Utterance {
    Mix {
        name: String,
        clean: PathBuf,
        noisy: PathBuf,
        noise_type: String,
        snr_db: f64,
    },
    Noise {
        name: String,
        clip: PathBuf,
        noise_type: String,
    },
}

impl Utterance {
    pub fn name(&self) -> &str {
        match self {
            Utterance::Mix { name, .. } | Utterance::Noise { name, .. } => name,
        }
    }

    pub fn to_line(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        match self {
            Utterance::Mix {
                name,
                clean,
                noisy,
                noise_type,
                snr_db,
            } => format!("mix\t{name}\t{}\t{}\t{noise_type}\t{snr_db}", rel(clean), rel(noisy)),
            Utterance::Noise { name, clip, noise_type } => {
                format!("noise\t{name}\t{}\t-\t{noise_type}\t-", rel(clip))
            }
        }
    }
}

pub fn format_utterances(entries: &[Utterance], base: &Path) -> String {
    entries.iter().map(|e| e.to_line(base) + "\n").collect()
}

pub fn parse_utterances(text: &str, base: &Path) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Config(format!("manifest line {}: expected 6 tab-separated fields", i + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        let path = |s: &str| base.join(s);
        out.push(match f[0] {
            "mix" => Utterance::Mix {
                name: f[1].into(),
                clean: path(f[2]),
                noisy: path(f[3]),
                noise_type: f[4].into(),
                snr_db: f[5]
                    .parse()
                    .map_err(|_| Error::Config(format!("manifest line {}: bad SNR `{}`", i + 1, f[5])))?,
            },
            "noise" => Utterance::Noise {
                name: f[1].into(),
                clip: path(f[2]),
                noise_type: f[4].into(),
            },
            _ => return Err(bad()),
        });
    }
    if out.is_empty() {
        return Err(Error::MissingInput("manifest lists no utterances".into()));
    }
    Ok(out)
}

pub fn read_utterances(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_utterances(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::si_sdr;

    fn small() -> DataConfig {
        DataConfig {
            train_utterances: 3,
            eval_utterances: 4,
            utterance_len: 4000,
            recording_len: 40_000,
            ..DataConfig::default()
        }
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let a = Corpus::build(&small()).unwrap();
        let b = Corpus::build(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.train.len(), 3);
        assert_eq!(a.noise_types(), vec!["pink", "white"]);
        let types: Vec<&str> = a.eval.iter().map(|m| m.noise_type.as_str()).collect();
        assert_eq!(types, vec!["pink", "white", "pink", "white"]);
        for m in &a.eval {
            assert_eq!(m.noisy.len(), m.clean.len());
            assert!(si_sdr(&m.clean, &m.noisy).unwrap().abs() < 1.0);
        }
    }

    #[test]
    fn restricting_noise_types() {
        let cfg = DataConfig {
            noise_types: vec!["hum".into()],
            ..small()
        };
        let c = Corpus::build(&cfg).unwrap();
        assert_eq!(c.noise_types(), vec!["hum"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (noisy, t) = c.mix_train(&c.train[0], &mut rng).unwrap();
        assert_eq!((noisy.len(), t.as_str()), (4000, "hum"));
        assert_eq!(c.train_clips("hum", 3, 4000, &mut rng).unwrap().len(), 3);
        assert!(c.train_clips("rain", 1, 4000, &mut rng).is_err());
    }

    #[test]
    fn speech_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            speech_dir: Some(dir.path().to_path_buf()),
            ..small()
        };
        assert!(matches!(Corpus::build(&cfg), Err(Error::MissingInput(_))));
    }

    #[test]
    fn utterance_manifest_round_trip() {
        let base = Path::new("/data");
        let entries = vec![
            Utterance::Mix {
                name: "a".into(),
                clean: base.join("clean/a.wav"),
                noisy: base.join("noisy/a.wav"),
                noise_type: "pink".into(),
                snr_db: -2.5,
            },
            Utterance::Noise {
                name: "n0".into(),
                clip: base.join("noise/n0.wav"),
                noise_type: "white".into(),
            },
        ];
        let text = format_utterances(&entries, base);
        assert!(text.starts_with("mix\ta\tclean/a.wav\tnoisy/a.wav\tpink\t-2.5\n"));
        assert_eq!(parse_utterances(&text, base).unwrap(), entries);
        assert!(parse_utterances("mix\ta\tb", base).is_err());
        assert!(matches!(parse_utterances("# nothing\n", base), Err(Error::MissingInput(_))));
    }
}
