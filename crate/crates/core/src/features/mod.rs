//! Spectral analysis and the per-block domain features fed to the classifiers.
//!
//! Every clip is analysed with a 32 ms Hann window and a 16 ms hop. Three
//! descriptors are computed per frame (AMS, RASTA-PLP and DSCC) and stacked
//! into a 41-dimensional row; block descriptors average the rows whose frame
//! centers fall inside the block.

mod ams;
mod dscc;
mod rasta;
mod stft;

pub use ams::{ams_band_centers, ams_band_weight, ams_features, envelope, AMS_BANDS};
pub use dscc::{
    dct2, deltas, dscc, gaussianize, hz_to_mel, mel_filterbank, mel_spectra, mel_to_hz,
    DSCC_DIM, DSCC_MIN_FRAMES, MEL_BANDS,
};
pub use rasta::{
    bark_to_hz, equal_loudness, hz_to_bark, levinson_durbin, lpc_to_cepstrum, rasta_filter,
    rasta_plp, BarkFilterbank, PLP_DIM, PLP_ORDER, RASTA_WARMUP,
};
pub use stft::{frame_count, hann, stft, Spectrogram};

use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, BlockStream, PROCESSING_RATE};
use crate::error::{Error, Result};

/// 32 ms at 16 kHz.
pub const WINDOW_LEN: usize = 512;
/// 16 ms at 16 kHz.
pub const HOP: usize = 256;
pub const FEATURE_DIM: usize = AMS_BANDS + PLP_DIM + DSCC_DIM;
/// Lower bound applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Per-frame (or per-block) feature rows, `AMS | RASTA-PLP | DSCC`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub rows: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ams(row: &[f64; FEATURE_DIM]) -> &[f64] {
        &row[..AMS_BANDS]
    }

    pub fn rasta_plp(row: &[f64; FEATURE_DIM]) -> &[f64] {
        &row[AMS_BANDS..AMS_BANDS + PLP_DIM]
    }

    pub fn dscc(row: &[f64; FEATURE_DIM]) -> &[f64] {
        &row[AMS_BANDS + PLP_DIM..]
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }
}

/// Computes the stacked feature row for every STFT frame of a 16 kHz clip.
pub fn frame_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    if clip.sample_rate != PROCESSING_RATE {
        return Err(Error::Config(format!(
            "features expect {PROCESSING_RATE} Hz audio, got {} Hz",
            clip.sample_rate
        )));
    }
    let spec = stft(clip, WINDOW_LEN, HOP)?;
    let ams = ams_features(&clip.samples, clip.sample_rate)?;
    let plp = rasta_plp(&spec, PLP_ORDER)?;
    let ds = dscc(&spec)?;
    debug_assert!(ams.len() == spec.frames && plp.len() == spec.frames);
    let rows = (0..spec.frames)
        .map(|t| {
            let mut row = [0.0; FEATURE_DIM];
            row[..AMS_BANDS].copy_from_slice(&ams[t]);
            row[AMS_BANDS..AMS_BANDS + PLP_DIM].copy_from_slice(&plp[t]);
            row[AMS_BANDS + PLP_DIM..].copy_from_slice(&ds[t]);
            row
        })
        .collect();
    let m = FeatureMatrix { rows };
    if !m.is_finite() {
        return Err(Error::NonFinite {
            op: "frame_features".into(),
        });
    }
    Ok(m)
}

/// Averages frame rows into one row per block of `blocks`.
///
/// A frame belongs to a block when its center lies inside the block's span
/// in clip coordinates. Blocks that contain no frame center take the frame
/// whose center is nearest to the block center.
pub fn pool_blocks(frames: &FeatureMatrix, blocks: &BlockStream) -> Result<FeatureMatrix> {
    if frames.is_empty() {
        return Err(Error::DegenerateInput("no frames to pool".into()));
    }
    let center = |t: usize| (t * HOP + WINDOW_LEN / 2) as f64;
    let rows = (0..blocks.len())
        .map(|k| {
            let start = blocks.block_start(k) as f64;
            let end = start + blocks.block_len as f64;
            let members: Vec<usize> = (0..frames.len())
                .filter(|&t| (start..end).contains(&center(t)))
                .collect();
            let members = if members.is_empty() {
                let mid = (start + end) / 2.0;
                let nearest = (0..frames.len())
                    .min_by(|&a, &b| {
                        (center(a) - mid).abs().total_cmp(&(center(b) - mid).abs())
                    })
                    .expect("non-empty");
                vec![nearest]
            } else {
                members
            };
            let mut row = [0.0; FEATURE_DIM];
            for &t in &members {
                for (r, v) in row.iter_mut().zip(&frames.rows[t]) {
                    *r += v;
                }
            }
            row.iter_mut().for_each(|r| *r /= members.len() as f64);
            row
        })
        .collect();
    Ok(FeatureMatrix { rows })
}

/// Unnormalized classifier inputs for every block of a clip.
pub fn block_features(clip: &AudioClip, blocks: &BlockStream) -> Result<FeatureMatrix> {
    pool_blocks(&frame_features(clip)?, blocks)
}

/// Per-dimension corpus statistics used to standardize features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FeatureNormalizer {
    /// Two-pass mean and population standard deviation over `rows`, visited
    /// in order. Dimensions with zero spread get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64; FEATURE_DIM]> + Clone) -> Result<Self> {
        let mut n = 0usize;
        let mut mean = vec![0.0; FEATURE_DIM];
        for r in rows.clone() {
            n += 1;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        if n == 0 {
            return Err(Error::DegenerateInput(
                "cannot fit feature statistics on zero rows".into(),
            ));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; FEATURE_DIM];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn apply_row(&self, row: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|i| (row[i] - self.mean[i]) / self.sd[i])
    }

    pub fn apply(&self, m: &FeatureMatrix) -> FeatureMatrix {
        FeatureMatrix {
            rows: m.rows.iter().map(|r| self.apply_row(r)).collect(),
        }
    }
}
