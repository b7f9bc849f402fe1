use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// One 1-D convolution of the encoder or decoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Leaky ReLU after the convolution; linear otherwise.
    pub activation: bool,
    /// Nearest-neighbour x2 upsampling before the convolution (decoder only).
    pub upsample: bool,
}

/// Layer layout of the variance-constrained autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcaeArchitecture {
    pub encoder: Vec<ConvSpec>,
    pub latent_dim: usize,
    /// Length of the decoder's first feature map after the dense layer.
    pub decoder_seed_len: usize,
    pub decoder: Vec<ConvSpec>,
    /// Kernel of the final 1-channel linear projection.
    pub output_kernel: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub leaky_alpha: f64,
    /// Each noisy clip is scaled to this RMS before encoding (its clean
    /// target by the same factor) and the output is scaled back; 0 disables.
    pub input_rms: f64,
}

const ENCODER_FILTERS: [usize; 7] = [64, 64, 128, 128, 256, 256, 512];
const ENCODER_STRIDES: [usize; 7] = [1, 2, 2, 2, 2, 2, 1];
const DECODER_FILTERS: [usize; 7] = [512, 256, 256, 128, 128, 64, 64];
const KERNEL: usize = 31;
pub const DEFAULT_INPUT_RMS: f64 = 0.5;

impl Default for VcaeArchitecture {
    fn default() -> Self {
        Self::with_width_divisor(1)
    }
}

impl VcaeArchitecture {
    /// The reference layout with every filter count divided by `divisor`
    /// (at least one filter per layer).
    pub fn with_width_divisor(divisor: usize) -> Self {
        let d = divisor.max(1);
        let width = |f: usize| (f / d).max(1);
        let encoder = ENCODER_FILTERS
            .iter()
            .zip(ENCODER_STRIDES)
            .enumerate()
            .map(|(i, (&f, stride))| ConvSpec {
                filters: width(f),
                kernel: KERNEL,
                stride,
                activation: i < 6,
                upsample: false,
            })
            .collect();
        let decoder = DECODER_FILTERS
            .iter()
            .enumerate()
            .map(|(i, &f)| ConvSpec {
                filters: width(f),
                kernel: KERNEL,
                stride: 1,
                activation: true,
                upsample: (1..=5).contains(&i),
            })
            .collect();
        Self {
            encoder,
            latent_dim: 660,
            decoder_seed_len: 32,
            decoder,
            output_kernel: KERNEL,
            input_len: 1000,
            output_len: 600,
            leaky_alpha: 0.1,
            input_rms: DEFAULT_INPUT_RMS,
        }
    }

    /// Factor that brings `clip` to `input_rms`; 1 when disabled or silent.
    pub fn level_gain(&self, clip: &AudioClip) -> f64 {
        let rms = clip.rms();
        if self.input_rms > 0.0 && rms > 0.0 {
            self.input_rms / rms
        } else {
            1.0
        }
    }

    /// Feature-map lengths after each encoder convolution.
    pub fn encoder_lengths(&self) -> Vec<usize> {
        let mut len = self.input_len;
        self.encoder
            .iter()
            .map(|c| {
                len = len.div_ceil(c.stride);
                len
            })
            .collect()
    }

    pub fn encoder_flat_dim(&self) -> usize {
        let len = *self.encoder_lengths().last().unwrap_or(&self.input_len);
        len * self.encoder.last().map_or(1, |c| c.filters)
    }

    /// Channels of the decoder's seed map: the first decoder conv's width.
    pub fn decoder_seed_channels(&self) -> usize {
        self.decoder.first().map_or(1, |c| c.filters)
    }

    /// Length of the decoder output before the center crop.
    pub fn decoder_full_len(&self) -> usize {
        self.decoder
            .iter()
            .fold(self.decoder_seed_len, |l, c| if c.upsample { 2 * l } else { l })
    }

    /// Offset of the kept window inside the decoder output.
    pub fn crop_start(&self) -> usize {
        (self.decoder_full_len() - self.output_len) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.encoder.iter().chain(&self.decoder);
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::Config("encoder and decoder need at least one layer".into()));
        }
        for c in all {
            if c.filters == 0 || c.stride == 0 || c.kernel % 2 == 0 {
                return Err(Error::Config(format!("invalid conv layer {c:?}")));
            }
        }
        if !(self.input_rms >= 0.0 && self.input_rms.is_finite()) {
            return Err(Error::Config(format!("input_rms must be finite and >= 0, got {}", self.input_rms)));
        }
        if self.output_kernel % 2 == 0 {
            return Err(Error::Config("output kernel must be odd".into()));
        }
        if self.latent_dim == 0 || self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Config("latent, input and output sizes must be positive".into()));
        }
        if self.decoder_full_len() < self.output_len {
            return Err(Error::Config(format!(
                "decoder produces {} samples, fewer than the {} output samples",
                self.decoder_full_len(),
                self.output_len
            )));
        }
        Ok(())
    }
}
