//! Audio I/O, SNR mixing, block framing and the synthetic two-domain corpus.

mod blocks;
mod manifest;
mod mix;
pub(crate) mod resample;
mod synth;
mod wav;

pub use blocks::{frame_blocks, BlockStream, DEFAULT_BLOCK_LEN, DEFAULT_HOP};
pub use manifest::{Domain, Manifest, ManifestEntry, MixtureSource, Split};
pub use mix::{achieved_snr_db, mix_at_snr, split_noise, Mixture, MixtureRecord};
pub use resample::resample;
pub use synth::{synth_corpus, CorpusSpec, NoiseKind, SynthCorpus};
pub use wav::{read_wav, read_wav_for_processing, write_wav, write_wav_with, WavEncoding};

/// Rate every clip is converted to before features or the model touch it.
pub const PROCESSING_RATE: u32 = 16_000;

/// Sample rates accepted by [`read_wav`].
pub const SUPPORTED_RATES: [u32; 4] = [8_000, 16_000, 44_100, 48_000];

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    /// Hard-clips to [-1, 1] and returns how many samples were touched.
    pub fn clip_to_unit(&mut self) -> usize {
        let mut clipped = 0;
        for s in &mut self.samples {
            if *s > 1.0 {
                *s = 1.0;
                clipped += 1;
            } else if *s < -1.0 {
                *s = -1.0;
                clipped += 1;
            }
        }
        clipped
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }
}
