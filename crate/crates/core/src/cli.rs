//! `sedm` command line. Exit codes: 0 success, 1 runtime failure, 2 usage
//! or input error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, write_atomic, write_wav};
use crate::data::{format_utterances, list_wavs, read_utterances, Corpus, Mixture, Utterance};
use crate::dsp::{StftConfig, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::experiment::{
    ablation_csv, contribution_cells, cross_mode_cells, enhance_waveform, grid_cells, pooled_latent, run_ablation,
    score, spectrogram_pgm, Axis, Evaluation,
};
use crate::model::checkpoint;
use crate::noisebank::{fit_clip, load_noise_dir, mix_at_snr, Split};
use crate::synth;
use crate::trainer::{train, OutputDir, RunConfig};

pub const SEED_ENV: &str = "SEDM_SEED";

#[derive(Debug, Parser)]
#[command(name = "sedm", version, about = "Phase-aware diffusion speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the noise bank, validate audio and write manifests.
    Prepare(PrepareArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Enhance one WAV file.
    Enhance(EnhanceArgs),
    /// Score an utterance manifest, enhanced by a checkpoint or as-is.
    Evaluate(EvaluateArgs),
    /// Train and evaluate an ablation grid with shared seeds.
    Ablate(AblateArgs),
    /// Pooled latent features per manifest utterance, as CSV.
    ExportLatents(ExportLatentsArgs),
    /// Log-magnitude spectrogram as a PGM image.
    ExportSpectrogram(ExportSpectrogramArgs),
    /// Write a synthetic speech and noise corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long)]
    speech_dir: PathBuf,
    #[arg(long)]
    noise_dir: PathBuf,
    /// Noise clip manifest; the utterance manifest and mixtures are written
    /// next to it as `<stem>_utterances.tsv` and `<stem>_audio/`.
    #[arg(long)]
    out_manifest: PathBuf,
    #[arg(long, default_value_t = 16_000)]
    clip_len: usize,
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    snrs: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Directory for logs and the config dump; defaults to the checkpoint's.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Without a checkpoint the noisy files are scored unprocessed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Full model, single contributions, and two-contribution cells.
    Contributions,
    /// Cross-loss cells: none, p2a, a2p, both.
    CrossLoss,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("cells").required(true).args(["axes", "preset"])))]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Factorial axes: diffusion, phase, ccc, gaussian-noise.
    #[arg(long, value_delimiter = ',')]
    axes: Vec<Axis>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    out_csv: PathBuf,
    /// Per-cell run directories; defaults to `<out-csv stem>_runs`.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Training seeds shared by every cell; defaults to the single run seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ExportLatentsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Reverse step whose block latent is exported, 1..=M.
    #[arg(long)]
    step: usize,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Debug, Args)]
struct ExportSpectrogramArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30)]
    utterances: usize,
    #[arg(long, default_value_t = 16_000)]
    utterance_len: usize,
    #[arg(long, value_delimiter = ',', default_value = "white,pink")]
    noise_types: Vec<String>,
    #[arg(long, default_value_t = 480_000)]
    recording_len: usize,
    #[arg(long)]
    seed: Option<u64>,
}

/// `SEDM_SEED` wins over `--seed`.
fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<Option<u64>> {
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        None => Ok(flag),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            RunConfig::parse(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn parent_or_cwd(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let stem = p.file_stem().unwrap_or_default().to_string_lossy();
    parent_or_cwd(p).join(format!("{stem}{suffix}"))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::io(format!("resolving {}", p.display()), e))
}

fn prepare(a: &PrepareArgs, seed: u64, out: &mut dyn FnMut(&str)) -> Result<()> {
    if a.snrs.is_empty() || a.snrs.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("--snrs must list finite values".into()));
    }
    let files = list_wavs(&a.speech_dir)?;
    if files.is_empty() {
        return Err(Error::MissingInput(format!("no speech WAV files in {}", a.speech_dir.display())));
    }
    let speech = files.iter().map(|f| read_wav(f)).collect::<Result<Vec<_>>>()?;
    let bank = load_noise_dir(&a.noise_dir, a.clip_len)?;
    if let Some(d) = a.out_manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(d)?;
    }
    write_atomic(&a.out_manifest, bank.manifest().as_bytes())?;

    let audio = sibling(&a.out_manifest, "_audio");
    create_dir(&audio)?;
    let base = absolute(&parent_or_cwd(&a.out_manifest))?;
    let audio = absolute(&audio)?;
    let types: Vec<String> = bank.noise_types().map(String::from).collect();
    let mut entries = Vec::new();
    for (i, (file, clean)) in files.iter().zip(&speech).enumerate() {
        let name = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let noise_type = &types[i % types.len()];
        let clips = bank.entry(noise_type)?.clips(Split::Eval);
        let clip = &clips[(i / types.len()) % clips.len()];
        let snr_db = a.snrs[i % a.snrs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let noise = fit_clip(&clip.wave, clean.len(), &mut rng);
        let (noisy, scaled) = mix_at_snr(clean, &noise, snr_db)?;
        let noisy_path = audio.join(format!("{name}_noisy.wav"));
        let noise_path = audio.join(format!("{name}_noise.wav"));
        write_wav(&noisy_path, &noisy)?;
        write_wav(&noise_path, &scaled)?;
        entries.push(Utterance::Mix {
            name: name.clone(),
            clean: absolute(file)?,
            noisy: noisy_path,
            noise_type: noise_type.clone(),
            snr_db,
        });
        entries.push(Utterance::Noise {
            name: format!("{name}_noise"),
            clip: noise_path,
            noise_type: noise_type.clone(),
        });
    }
    let utt_path = sibling(&a.out_manifest, "_utterances.tsv");
    write_atomic(&utt_path, format_utterances(&entries, &base).as_bytes())?;
    out(&format!(
        "{} noise clips ({} types), {} mixtures; manifests {} and {}",
        bank.manifest().lines().count(),
        types.len(),
        speech.len(),
        a.out_manifest.display(),
        utt_path.display()
    ));
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>, out: &mut dyn FnMut(&str)) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let corpus = Corpus::build(&cfg.data)?;
    let dir = a.out_dir.clone().unwrap_or_else(|| parent_or_cwd(&a.out_checkpoint));
    let dir = OutputDir::new(dir)?.with_checkpoint(&a.out_checkpoint);
    let report = train(&cfg, &corpus, Some(&dir), &mut |s| {
        eprintln!(
            "epoch {:>4}  lr {:.2e}  loss {:.5}  l_A {:.5}  l_P {:.5}  |g| {:.3}",
            s.epoch, s.lr, s.loss, s.l_a_combined, s.l_p_combined, s.grad_norm
        )
    })?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out(&format!(
        "trained {} epochs ({} steps); checkpoint {}",
        report.epochs.len(),
        report.steps,
        a.out_checkpoint.display()
    ));
    Ok(())
}

fn enhance_cmd(a: &EnhanceArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let noisy = read_wav(&a.input)?;
    let enhanced = enhance_waveform(&model, &noisy)?;
    write_wav(&a.out, &enhanced)
}

fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::Degenerate("evaluation worker panicked".into()))??);
        }
        Ok(out)
    })
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn FnMut(&str)) -> Result<()> {
    let model = a.checkpoint.as_deref().map(checkpoint::load).transpose()?;
    let mixtures: Vec<Mixture> = read_utterances(&a.manifest)?
        .into_iter()
        .filter_map(|u| match u {
            Utterance::Mix {
                name,
                clean,
                noisy,
                noise_type,
                snr_db,
            } => Some((name, clean, noisy, noise_type, snr_db)),
            Utterance::Noise { .. } => None,
        })
        .map(|(name, clean, noisy, noise_type, snr_db)| {
            Ok(Mixture {
                name,
                clean: read_wav(&clean)?,
                noisy: read_wav(&noisy)?,
                noise_type,
                snr_db,
            })
        })
        .collect::<Result<_>>()?;
    if mixtures.is_empty() {
        return Err(Error::MissingInput(format!("no `mix` lines in {}", a.manifest.display())));
    }
    let estimates = parallel_map(&mixtures, |m| match &model {
        Some(model) => enhance_waveform(model, &m.noisy),
        None => Ok(m.noisy.clone()),
    })?;
    let eval: Evaluation = score(&mixtures, &estimates)?;
    write_atomic(&a.out_csv, eval.to_csv().as_bytes())?;
    let m = eval.mean;
    out(&format!(
        "{} utterances: stoi {:.4}  fwsnrseg {:.3}  ssnr {:.3}  si_sdr {:.3}",
        eval.rows.len(),
        m.stoi,
        m.fwsnrseg,
        m.ssnr,
        m.si_sdr
    ));
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, seed: Option<u64>, out: &mut dyn FnMut(&str)) -> Result<()> {
    let mut base = load_config(a.config.as_deref())?;
    if let Some(s) = seed {
        base.train.seed = s;
    }
    base.validate()?;
    let cells = match a.preset {
        Some(Preset::Contributions) => contribution_cells(&base),
        Some(Preset::CrossLoss) => cross_mode_cells(&base),
        None => grid_cells(&base, &a.axes),
    };
    let seeds = if a.seeds.is_empty() { vec![base.train.seed] } else { a.seeds.clone() };
    let work = a.work_dir.clone().unwrap_or_else(|| sibling(&a.out_csv, "_runs"));
    let corpus = Corpus::build(&base.data)?;
    let results = run_ablation(&cells, &seeds, &corpus, Some(&work), &mut |l| eprintln!("{l}"))?;
    write_atomic(&a.out_csv, ablation_csv(&results).as_bytes())?;
    out(&format!(
        "{} cells x {} seeds; comparison {}",
        cells.len(),
        seeds.len(),
        a.out_csv.display()
    ));
    Ok(())
}

fn export_latents(a: &ExportLatentsArgs, out: &mut dyn FnMut(&str)) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    if a.step == 0 || a.step > model.chain_len() {
        return Err(Error::Config(format!("--step {} outside 1..={}", a.step, model.chain_len())));
    }
    let entries = read_utterances(&a.manifest)?;
    let rows = parallel_map(&entries, |u| {
        let (path, label) = match u {
            Utterance::Mix { clean, .. } => (clean, "speech"),
            Utterance::Noise { clip, .. } => (clip, "noise"),
        };
        Ok((u.name().to_string(), label, pooled_latent(&model, &read_wav(path)?, a.step)?))
    })?;
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut csv = String::from("utterance");
    for i in 0..dim {
        let _ = write!(csv, ",f{i}");
    }
    csv.push_str(",label\n");
    for (name, label, feats) in &rows {
        csv.push_str(name);
        for v in feats {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv, ",{label}");
    }
    write_atomic(&a.out_csv, csv.as_bytes())?;
    out(&format!("{} rows of {dim} features", rows.len()));
    Ok(())
}

fn export_spectrogram(a: &ExportSpectrogramArgs) -> Result<()> {
    let w = read_wav(&a.input)?;
    write_atomic(&a.out, &spectrogram_pgm(&w, &StftConfig::default())?)
}

fn synth_cmd(a: &SynthArgs, seed: u64, out: &mut dyn FnMut(&str)) -> Result<()> {
    if a.utterances == 0 || a.utterance_len == 0 {
        return Err(Error::Config("--utterances and --utterance-len must be positive".into()));
    }
    let speech_dir = a.out_dir.join("speech");
    create_dir(&speech_dir)?;
    for (i, w) in synth::speech_corpus(a.utterances, a.utterance_len, SAMPLE_RATE, seed)
        .iter()
        .enumerate()
    {
        write_wav(&speech_dir.join(format!("utt{i:04}.wav")), w)?;
    }
    for (i, kind) in a.noise_types.iter().enumerate() {
        let dir = a.out_dir.join("noise").join(kind);
        create_dir(&dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + i as u64);
        let w = synth::noise(kind, a.recording_len, SAMPLE_RATE, &mut rng)?;
        let w = crate::dsp::Waveform::new(w.samples.iter().map(|v| v * synth::SPEECH_RMS).collect(), SAMPLE_RATE);
        write_wav(&dir.join("recording.wav"), &w)?;
    }
    out(&format!(
        "{} utterances and {} noise recordings under {}",
        a.utterances,
        a.noise_types.len(),
        a.out_dir.display()
    ));
    Ok(())
}

fn dispatch(cli: &Cli, env_seed: Option<&str>, out: &mut dyn FnMut(&str)) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => prepare(a, resolve_seed(a.seed, env_seed)?.unwrap_or(0), out),
        Command::Train(a) => train_cmd(a, resolve_seed(a.seed, env_seed)?, out),
        Command::Enhance(a) => enhance_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, resolve_seed(a.seed, env_seed)?, out),
        Command::ExportLatents(a) => export_latents(a, out),
        Command::ExportSpectrogram(a) => export_spectrogram(a),
        Command::Synth(a) => synth_cmd(a, resolve_seed(a.seed, env_seed)?.unwrap_or(0), out),
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. `env_seed` is the value of `SEDM_SEED`, if set.
pub fn run<I, T>(args: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli, env_seed, &mut |l| println!("{l}")) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_seed_wins() {
        assert_eq!(resolve_seed(Some(3), None).unwrap(), Some(3));
        assert_eq!(resolve_seed(Some(3), Some("9")).unwrap(), Some(9));
        assert_eq!(resolve_seed(None, None).unwrap(), None);
        assert!(resolve_seed(None, Some("x")).unwrap_err().is_input_error());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["sedm", "ablate", "--axes", "dropout", "--out-csv", "x.csv"], None), 2);
        assert_eq!(run(["sedm", "ablate", "--out-csv", "x.csv"], None), 2);
        assert_eq!(run(["sedm", "frobnicate"], None), 2);
        assert_eq!(run(["sedm", "--help"], None), 0);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("a/m.tsv"), "_audio"), PathBuf::from("a/m_audio"));
        assert_eq!(sibling(Path::new("m.tsv"), "_runs"), PathBuf::from("./m_runs"));
    }
}
