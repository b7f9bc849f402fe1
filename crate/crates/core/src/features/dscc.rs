use statrs::distribution::{ContinuousCDF, Normal};

use super::stft::Spectrogram;
use crate::error::{Error, Result};

pub const MEL_BANDS: usize = 40;
pub const DSCC_DIM: usize = 13;
/// Frames needed for a full +-2 delta window.
pub const DSCC_MIN_FRAMES: usize = 5;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank from 0 Hz to Nyquist; `bands x bins`.
pub fn mel_filterbank(bands: usize, sample_rate: u32, window_len: usize) -> Vec<Vec<f64>> {
    let bins = window_len / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / window_len as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Mel magnitude spectra, `frames x 40`.
pub fn mel_spectra(spec: &Spectrogram) -> Vec<Vec<f64>> {
    let fb = mel_filterbank(MEL_BANDS, spec.sample_rate, spec.window_len);
    (0..spec.frames)
        .map(|t| {
            let m = spec.magnitude(t);
            fb.iter()
                .map(|w| w.iter().zip(&m).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

/// Regression deltas over +-2 frames with edge replication.
pub fn deltas(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = frames.len() as isize;
    let at = |t: isize| &frames[t.clamp(0, n - 1) as usize];
    (0..n)
        .map(|t| {
            (0..frames[0].len())
                .map(|b| {
                    (1..=2)
                        .map(|k| k as f64 * (at(t + k)[b] - at(t - k)[b]))
                        .sum::<f64>()
                        / 10.0
                })
                .collect()
        })
        .collect()
}

/// Maps each column to standard-normal scores by rank. Ties share their
/// average rank; a constant column maps to zero.
pub fn gaussianize(frames: &mut [Vec<f64>]) {
    let n = frames.len();
    if n == 0 {
        return;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for b in 0..frames[0].len() {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| frames[i][b].total_cmp(&frames[j][b]));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && frames[idx[j + 1]][b] == frames[idx[i]][b] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        for (t, r) in ranks.into_iter().enumerate() {
            frames[t][b] = normal.inverse_cdf((r - 0.5) / n as f64);
        }
    }
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

/// Delta-spectral cepstral coefficients, one 13-vector per STFT frame.
pub fn dscc(spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    if spec.frames < DSCC_MIN_FRAMES {
        return Err(Error::DegenerateInput(format!(
            "DSCC needs at least {DSCC_MIN_FRAMES} frames, got {}",
            spec.frames
        )));
    }
    let mut d = deltas(&mel_spectra(spec));
    gaussianize(&mut d);
    Ok(d.iter().map(|row| dct2(row, DSCC_DIM)).collect())
}
