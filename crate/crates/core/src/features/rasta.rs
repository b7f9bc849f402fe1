use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::stft::Spectrogram;
use super::LOG_FLOOR;
use crate::error::{Error, Result};

pub const PLP_ORDER: usize = 12;
pub const PLP_DIM: usize = PLP_ORDER + 1;
/// Leading frames of the RASTA filter output that are zeroed during warm-up.
pub const RASTA_WARMUP: usize = 4;

pub fn hz_to_bark(f: f64) -> f64 {
    6.0 * (f / 600.0).asinh()
}

pub fn bark_to_hz(z: f64) -> f64 {
    600.0 * (z / 6.0).sinh()
}

/// Critical-band filterbank on a one-sided spectrum of `bins` bins.
#[derive(Debug, Clone)]
pub struct BarkFilterbank {
    /// `bands x bins`
    pub weights: Vec<Vec<f64>>,
    pub center_hz: Vec<f64>,
}

impl BarkFilterbank {
    /// Bands one Bark wide, spaced evenly from 0 to Nyquist.
    pub fn new(sample_rate: u32, window_len: usize) -> Self {
        let nyq_bark = hz_to_bark(sample_rate as f64 / 2.0);
        let bands = nyq_bark.ceil() as usize + 1;
        let step = nyq_bark / (bands - 1) as f64;
        let bins = window_len / 2 + 1;
        let bin_bark: Vec<f64> = (0..bins)
            .map(|k| hz_to_bark(k as f64 * sample_rate as f64 / window_len as f64))
            .collect();
        let mut weights = Vec::with_capacity(bands);
        let mut center_hz = Vec::with_capacity(bands);
        for i in 0..bands {
            let mid = i as f64 * step;
            center_hz.push(bark_to_hz(mid));
            weights.push(
                bin_bark
                    .iter()
                    .map(|&z| {
                        let lo = z - mid - 0.5;
                        let hi = z - mid + 0.5;
                        10f64.powf(hi.min(-2.5 * lo).min(0.0))
                    })
                    .collect(),
            );
        }
        Self { weights, center_hz }
    }

    pub fn bands(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Applies the RASTA band-pass filter along time to each band trajectory.
///
/// `y[t] = 0.98 y[t-1] + 0.1 (2x[t] + x[t-1] - x[t-3] - 2x[t-4])`. The first
/// four outputs are zero and the recursion starts from a zero state, so a
/// constant trajectory maps to exactly zero.
pub fn rasta_filter(traj: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let frames = traj.len();
    let bands = traj.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; bands]; frames];
    for t in RASTA_WARMUP..frames {
        for b in 0..bands {
            let fir = 0.1
                * (2.0 * traj[t][b] + traj[t - 1][b] - traj[t - 3][b] - 2.0 * traj[t - 4][b]);
            out[t][b] = 0.98 * out[t - 1][b] + fir;
        }
    }
    out
}

/// Equal-loudness curve at frequency `f` Hz.
pub fn equal_loudness(f: f64) -> f64 {
    let f2 = f * f;
    (f2 / (f2 + 1.6e5)).powi(2) * ((f2 + 1.44e6) / (f2 + 9.61e6))
}

/// Solves the normal equations for an all-pole model.
/// Returns `(a, err)` with `a[0] = 1`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<(Vec<f64>, f64)> {
    let attempt = |r0: f64| -> Option<(Vec<f64>, f64)> {
        let mut a = vec![0.0; order + 1];
        a[0] = 1.0;
        let mut err = r0;
        if err <= 0.0 {
            return None;
        }
        for i in 1..=order {
            let mut acc = r[i];
            for j in 1..i {
                acc += a[j] * r[i - j];
            }
            let k = -acc / err;
            let prev = a.clone();
            for j in 1..i {
                a[j] = prev[j] + k * prev[i - j];
            }
            a[i] = k;
            err *= 1.0 - k * k;
            if err <= 0.0 || !err.is_finite() {
                return None;
            }
        }
        Some((a, err))
    };
    attempt(r[0])
        .or_else(|| attempt(r[0] * (1.0 + 1e-9)))
        .ok_or_else(|| {
            Error::Numerical("non-positive prediction error in Levinson-Durbin recursion".into())
        })
}

/// Cepstrum of the all-pole model `gain / A(z)` where `gain = 1/err`-scaled
/// coefficients give `c0 = ln(err)`.
pub fn lpc_to_cepstrum(a: &[f64], err: f64, n: usize) -> Vec<f64> {
    let p = a.len() - 1;
    let mut c = vec![0.0; n];
    c[0] = err.ln();
    for m in 1..n {
        let mut acc = 0.0;
        for k in 1..m {
            if m - k <= p {
                acc += k as f64 * c[k] * a[m - k];
            }
        }
        let am = if m <= p { a[m] } else { 0.0 };
        c[m] = -am - acc / m as f64;
    }
    c
}

/// RASTA-PLP cepstra, one 13-vector per STFT frame.
pub fn rasta_plp(spec: &Spectrogram, order: usize) -> Result<Vec<Vec<f64>>> {
    let fb = BarkFilterbank::new(spec.sample_rate, spec.window_len);
    let nb = fb.bands();
    let log_bands: Vec<Vec<f64>> = (0..spec.frames)
        .map(|t| {
            fb.apply(&spec.power(t))
                .into_iter()
                .map(|e| e.max(LOG_FLOOR).ln())
                .collect()
        })
        .collect();
    let filtered = rasta_filter(&log_bands);
    let eql: Vec<f64> = fb.center_hz.iter().map(|&f| equal_loudness(f)).collect();
    let n_fft = 2 * (nb - 1);
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(spec.frames);
    for row in &filtered {
        let mut z: Vec<f64> = row
            .iter()
            .zip(&eql)
            .map(|(&v, &w)| (w * v.exp()).powf(0.33))
            .collect();
        // edge bands fall outside the equal-loudness model
        z[0] = z[1];
        z[nb - 1] = z[nb - 2];
        for (k, b) in buf.iter_mut().enumerate() {
            let v = if k < nb { z[k] } else { z[n_fft - k] };
            *b = Complex::new(v, 0.0);
        }
        ifft.process(&mut buf);
        let r: Vec<f64> = buf[..=order].iter().map(|c| c.re / n_fft as f64).collect();
        let (a, err) = levinson_durbin(&r, order)?;
        out.push(lpc_to_cepstrum(&a, err, order + 1));
    }
    Ok(out)
}
