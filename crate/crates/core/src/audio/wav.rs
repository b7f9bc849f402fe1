use std::path::Path;

use log::warn;

use super::{resample, AudioClip, PROCESSING_RATE, SUPPORTED_RATES};
use crate::error::{Error, Result};

/// Sample encoding used when writing a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports short reads inside the container as generic I/O errors
        hound::Error::IoError(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::UnexpectedEof
                    | std::io::ErrorKind::Other
                    | std::io::ErrorKind::InvalidData
            ) =>
        {
            Error::Format {
                path: path.to_path_buf(),
                reason: format!("truncated or malformed file: {e}"),
            }
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(reason) => Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        },
        hound::Error::Unsupported => Error::Unsupported {
            path: path.to_path_buf(),
            reason: "codec not supported".into(),
        },
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads a mono PCM16 or float32 RIFF/WAVE file into [-1, 1] samples.
///
/// Multi-channel files are averaged down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if !SUPPORTED_RATES.contains(&spec.sample_rate) {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: format!("sample rate {} Hz", spec.sample_rate),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (format, bits) => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                reason: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        warn!(
            "{}: averaging {} channels down to mono",
            path.display(),
            channels
        );
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    let clip = AudioClip::new(samples, spec.sample_rate);
    if !clip.is_finite() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "non-finite sample values".into(),
        });
    }
    Ok(clip)
}

/// Reads a file and resamples it to the internal processing rate.
pub fn read_wav_for_processing(path: impl AsRef<Path>) -> Result<AudioClip> {
    let clip = read_wav(path)?;
    if clip.sample_rate == PROCESSING_RATE {
        Ok(clip)
    } else {
        resample(&clip, PROCESSING_RATE)
    }
}

/// Writes a 16-bit PCM file. Returns the number of samples clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<usize> {
    write_wav_with(path, clip, WavEncoding::Pcm16)
}

pub fn write_wav_with(
    path: impl AsRef<Path>,
    clip: &AudioClip,
    encoding: WavEncoding,
) -> Result<usize> {
    let path = path.as_ref();
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let mut clipped = 0;
    for &s in &clip.samples {
        let v = if s.is_nan() { 0.0 } else { s };
        if v.abs() > 1.0 {
            clipped += 1;
        }
        let v = v.clamp(-1.0, 1.0);
        let res = match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            }
            WavEncoding::Float32 => writer.write_sample(v as f32),
        };
        res.map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    if clipped > 0 {
        warn!("{}: clipped {} samples", path.display(), clipped);
    }
    Ok(clipped)
}
