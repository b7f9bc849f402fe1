use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::stft::{frame_count, frame_samples, hann};
use super::{LOG_FLOOR, WINDOW_LEN, HOP};
use crate::error::{Error, Result};

pub const AMS_BANDS: usize = 15;
const DECIMATION: usize = 4;
const MOD_FFT: usize = 128;
const LOW_HZ: f64 = 15.6;
const HIGH_HZ: f64 = 400.0;

/// Center frequencies of the modulation bands, linearly spaced.
pub fn ams_band_centers() -> [f64; AMS_BANDS] {
    let step = (HIGH_HZ - LOW_HZ) / (AMS_BANDS - 1) as f64;
    std::array::from_fn(|b| LOW_HZ + step * b as f64)
}

/// Triangular weight of band `b` at modulation frequency `f`; the half-width
/// equals the band spacing so neighbouring bands cross at one half.
pub fn ams_band_weight(b: usize, f: f64) -> f64 {
    let step = (HIGH_HZ - LOW_HZ) / (AMS_BANDS - 1) as f64;
    let c = ams_band_centers()[b];
    (1.0 - (f - c).abs() / step).max(0.0)
}

/// Full-wave rectified envelope averaged over groups of four samples.
pub fn envelope(samples: &[f64]) -> Vec<f64> {
    samples
        .chunks(DECIMATION)
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>() / DECIMATION as f64)
        .collect()
}

/// Amplitude modulation spectrogram of a 16 kHz signal.
///
/// Frames follow the 32 ms / 16 ms STFT grid so rows line up with the other
/// features. Each row holds 15 log band energies.
pub fn ams_features(samples: &[f64], sample_rate: u32) -> Result<Vec<[f64; AMS_BANDS]>> {
    if samples.len() < WINDOW_LEN {
        return Err(Error::DegenerateInput(format!(
            "AMS needs at least {WINDOW_LEN} samples, got {}",
            samples.len()
        )));
    }
    let env = envelope(samples);
    let env_rate = sample_rate as f64 / DECIMATION as f64;
    let frames = frame_count(samples.len(), WINDOW_LEN, HOP);
    let win = hann(MOD_FFT);
    let fft = FftPlanner::new().plan_fft_forward(MOD_FFT);
    let bins = MOD_FFT / 2 + 1;
    let weights: Vec<[f64; AMS_BANDS]> = (0..bins)
        .map(|k| {
            let f = k as f64 * env_rate / MOD_FFT as f64;
            std::array::from_fn(|b| ams_band_weight(b, f))
        })
        .collect();
    let mut buf = vec![Complex::new(0.0, 0.0); MOD_FFT];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let x = frame_samples(&env, t, MOD_FFT, HOP / DECIMATION);
        for ((b, &s), &w) in buf.iter_mut().zip(&x).zip(&win) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        let mut row = [0.0; AMS_BANDS];
        for (k, w) in weights.iter().enumerate() {
            let p = buf[k].norm_sqr();
            for b in 0..AMS_BANDS {
                row[b] += w[b] * p;
            }
        }
        for v in &mut row {
            *v = v.max(LOG_FLOOR).ln();
        }
        out.push(row);
    }
    Ok(out)
}
