use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Short-time Fourier transform, one-sided.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major `frames x bins`.
    pub data: Vec<Complex<f64>>,
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitude(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|c| c.norm()).collect()
    }

    pub fn power(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|c| c.norm_sqr()).collect()
    }

    /// Energy of the windowed frame recovered from its one-sided spectrum.
    pub fn frame_energy(&self, t: usize) -> f64 {
        let n = self.window_len;
        let p = self.power(t);
        let interior: f64 = p[1..self.bins - 1].iter().sum();
        (p[0] + p[self.bins - 1] + 2.0 * interior) / n as f64
    }

    /// Frequency of bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window_len as f64
    }
}

/// Number of frames for a signal of `len` samples; a trailing partial frame
/// is kept and zero-padded.
pub fn frame_count(len: usize, window_len: usize, hop: usize) -> usize {
    1 + (len - window_len).div_ceil(hop)
}

/// Samples of frame `t`, zero-padded past the end of the clip.
pub(crate) fn frame_samples(samples: &[f64], t: usize, window_len: usize, hop: usize) -> Vec<f64> {
    let start = t * hop;
    (0..window_len)
        .map(|i| samples.get(start + i).copied().unwrap_or(0.0))
        .collect()
}

pub fn stft(clip: &AudioClip, window_len: usize, hop: usize) -> Result<Spectrogram> {
    if !window_len.is_power_of_two() || hop == 0 || hop > window_len {
        return Err(Error::Config(format!(
            "stft needs a power-of-two window and 0 < hop <= window, got {window_len}/{hop}"
        )));
    }
    if clip.len() < window_len {
        return Err(Error::DegenerateInput(format!(
            "clip of {} samples is shorter than the {window_len}-sample window",
            clip.len()
        )));
    }
    let frames = frame_count(clip.len(), window_len, hop);
    let bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    for t in 0..frames {
        let x = frame_samples(&clip.samples, t, window_len, hop);
        for ((b, &s), &w) in buf.iter_mut().zip(&x).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames,
        bins,
        data,
        window_len,
        hop,
        sample_rate: clip.sample_rate,
    })
}
