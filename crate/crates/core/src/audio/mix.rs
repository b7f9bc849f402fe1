use rand::Rng;

use super::{AudioClip, Split};
use crate::error::{Error, Result};

/// Clean speech plus scaled noise at a prescribed SNR.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub clean: AudioClip,
    /// Cropped (or tiled) noise after gain scaling, before clipping.
    pub noise: AudioClip,
    pub mixture: AudioClip,
    pub snr_db: f64,
    /// Samples of `mixture` hard-clipped to [-1, 1].
    pub clipped: usize,
}

/// A [`Mixture`] tagged with its corpus identity.
#[derive(Debug, Clone)]
pub struct MixtureRecord {
    pub id: String,
    pub noise_name: String,
    pub split: Split,
    pub mix: Mixture,
}

/// SNR in dB computed from full-clip powers.
pub fn achieved_snr_db(clean: &AudioClip, noise: &AudioClip) -> f64 {
    10.0 * (clean.power() / noise.power()).log10()
}

/// Mixes `clean` with `noise` so that the clip-level SNR equals `snr_db`.
///
/// The noise segment starts at a uniformly random offset drawn from `rng`;
/// shorter noise is tiled cyclically.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Config(format!(
            "sample rate mismatch: clean {} Hz, noise {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr_db must be finite, got {snr_db}")));
    }
    let clean_rms = clean.rms();
    if clean.is_empty() || clean_rms == 0.0 {
        return Err(Error::DegenerateInput("clean signal is silent".into()));
    }
    if noise.is_empty() || noise.rms() == 0.0 {
        return Err(Error::DegenerateInput("noise signal is silent".into()));
    }
    let n = clean.len();
    let segment: Vec<f64> = if noise.len() >= n {
        let offset = rng.gen_range(0..=noise.len() - n);
        noise.samples[offset..offset + n].to_vec()
    } else {
        let offset = rng.gen_range(0..noise.len());
        (0..n)
            .map(|i| noise.samples[(offset + i) % noise.len()])
            .collect()
    };
    let segment = AudioClip::new(segment, noise.sample_rate);
    let seg_rms = segment.rms();
    if seg_rms == 0.0 {
        return Err(Error::DegenerateInput("selected noise segment is silent".into()));
    }
    let gain = clean_rms / (seg_rms * 10f64.powf(snr_db / 20.0));
    let scaled = AudioClip::new(
        segment.samples.iter().map(|s| s * gain).collect(),
        noise.sample_rate,
    );
    let mut mixture = AudioClip::new(
        clean
            .samples
            .iter()
            .zip(&scaled.samples)
            .map(|(c, v)| c + v)
            .collect(),
        clean.sample_rate,
    );
    let clipped = mixture.clip_to_unit();
    if clipped > 0 {
        log::warn!("mixture at {snr_db} dB clipped {clipped} samples");
    }
    Ok(Mixture {
        clean: clean.clone(),
        noise: scaled,
        mixture,
        snr_db,
        clipped,
    })
}

/// Splits a noise recording into a training half and an evaluation half.
/// The first half gets the extra sample when the length is odd.
pub fn split_noise(noise: &AudioClip) -> (AudioClip, AudioClip) {
    let mid = noise.len().div_ceil(2);
    (
        AudioClip::new(noise.samples[..mid].to_vec(), noise.sample_rate),
        AudioClip::new(noise.samples[mid..].to_vec(), noise.sample_rate),
    )
}
