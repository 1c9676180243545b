//! 16-bit PCM WAV input and output.

use std::path::Path;

use emoedge_core::{PcmBuffer, SAMPLE_RATE_HZ};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("{path}: {source}")]
    Read { path: String, source: hound::Error },
    #[error("{path}: expected {SAMPLE_RATE_HZ} Hz, file is {found} Hz")]
    SampleRate { path: String, found: u32 },
    #[error("{path}: expected 16-bit integer PCM, file is {bits}-bit {format:?}")]
    Format { path: String, bits: u16, format: hound::SampleFormat },
    #[error("{path}: expected {expected} channel(s), file has {found}")]
    Channels { path: String, expected: u16, found: u16 },
}

/// Interleaved samples and channel count of a 16 kHz, 16-bit file.
pub fn read_interleaved(path: &Path) -> Result<(Vec<i16>, u16), WavError> {
    let p = path.display().to_string();
    let reader = hound::WavReader::open(path).map_err(|source| WavError::Read { path: p.clone(), source })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(WavError::SampleRate { path: p, found: spec.sample_rate });
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(WavError::Format { path: p, bits: spec.bits_per_sample, format: spec.sample_format });
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| WavError::Read { path: p, source })?;
    Ok((samples, spec.channels))
}

/// A mono 16 kHz, 16-bit file.
pub fn read_wav(path: &Path) -> Result<PcmBuffer, WavError> {
    let (samples, channels) = read_interleaved(path)?;
    if channels != 1 {
        return Err(WavError::Channels { path: path.display().to_string(), expected: 1, found: channels });
    }
    Ok(PcmBuffer::from_samples(samples))
}

pub fn write_interleaved(path: &Path, samples: &[i16], channels: u16) -> Result<(), WavError> {
    let p = path.display().to_string();
    let spec = hound::WavSpec {
        channels,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |source| WavError::Read { path: p.clone(), source };
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in samples {
        w.write_sample(s).map_err(err)?;
    }
    w.finalize().map_err(err)
}

pub fn write_wav(path: &Path, pcm: &PcmBuffer) -> Result<(), WavError> {
    write_interleaved(path, &pcm.samples, 1)
}
