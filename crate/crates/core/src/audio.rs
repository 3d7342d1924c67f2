//! RIFF/WAVE reading and writing: 16-bit signed PCM, mono, 16 kHz only.

use std::fs;
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

fn audio_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(
            path,
            format!(
                "expected 16-bit signed PCM, found {:?} with {} bits per sample",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    if spec.channels != 1 {
        return Err(audio_err(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(audio_err(
            path,
            format!("expected {SAMPLE_RATE} Hz, found {} Hz", spec.sample_rate),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| audio_err(path, e.to_string()))?;
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

fn quantize(v: f64) -> i16 {
    (v * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes via a temporary sibling file and rename, so readers never observe
/// a partial file.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    if !w.is_finite() {
        return Err(Error::NonFinite(format!("waveform for {}", path.display())));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let tmp = tmp_path(path);
    {
        let mut writer =
            hound::WavWriter::create(&tmp, spec).map_err(|e| audio_err(path, e.to_string()))?;
        for &s in &w.samples {
            writer
                .write_sample(quantize(s))
                .map_err(|e| audio_err(path, e.to_string()))?;
        }
        writer.finalize().map_err(|e| audio_err(path, e.to_string()))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Atomic text/byte output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}
