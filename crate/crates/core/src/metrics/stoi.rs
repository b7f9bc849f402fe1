use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::resample::bessel_i0;
use crate::audio::AudioClip;
use crate::error::{Error, Result};

const FS: u32 = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate intelligibility segment (384 ms).
const SEGMENT: usize = 30;
/// Lower signal-to-distortion bound in dB.
const BETA: f64 = -15.0;
const DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Kaiser-windowed sinc resampler by the rational factor `p / q`, with the
/// filter design and zero-phase alignment of Octave's `resample`.
fn resample_rational(x: &[f64], p: usize, q: usize) -> Vec<f64> {
    let g = gcd(p, q);
    let (p, q) = (p / g, q / g);
    if p == q {
        return x.to_vec();
    }
    let stopband = 1.0 / (2.0 * p.max(q) as f64);
    let roll_off = stopband / 10.0;
    let rejection_db = 60.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as usize;
    let beta = 0.1102 * (rejection_db - 8.7);
    let m = 2 * half + 1;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..m)
        .map(|i| {
            let t = i as f64 - half as f64;
            let arg = 2.0 * stopband * t;
            let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let r = 2.0 * i as f64 / (m - 1) as f64 - 1.0;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            kaiser * 2.0 * p as f64 * stopband * sinc
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v = *v / sum * p as f64);
    let n_out = (x.len() * p).div_ceil(q);
    (0..n_out)
        .map(|k| {
            // y[k] = sum_n x[n] h[k q + half - n p]
            let center = k * q + half;
            let n_hi = (center / p).min(x.len().saturating_sub(1));
            let n_lo = center.saturating_sub(m - 1).div_ceil(p);
            (n_lo..=n_hi)
                .filter(|&n| n < x.len())
                .map(|n| x[n] * h[center - n * p])
                .sum()
        })
        .collect()
}

/// Symmetric Hann of length `n` without the zero end points.
fn hanning_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Frame start offsets `0, hop, ...` strictly below `len - framelen`.
fn frame_starts(len: usize, framelen: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(framelen)).step_by(hop)
}

fn overlap_add(frames: &[Vec<f64>], hop: usize, framelen: usize) -> Vec<f64> {
    if frames.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; (frames.len() - 1) * hop + framelen];
    for (i, f) in frames.iter().enumerate() {
        for (j, v) in f.iter().enumerate() {
            out[i * hop + j] += v;
        }
    }
    out
}

/// Drops frames whose clean energy is more than `DYN_RANGE` dB below the
/// loudest clean frame and resynthesizes both signals by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = hanning_inner(N_FRAME);
    let win = |s: &[f64], i: usize| -> Vec<f64> { w.iter().zip(&s[i..i + N_FRAME]).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len(), N_FRAME, hop).collect();
    let xf: Vec<Vec<f64>> = starts.iter().map(|&i| win(x, i)).collect();
    let yf: Vec<Vec<f64>> = starts.iter().map(|&i| win(y, i)).collect();
    let energies: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10())
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..energies.len())
        .filter(|&i| max - DYN_RANGE - energies[i] < 0.0)
        .collect();
    let pick = |f: &[Vec<f64>]| keep.iter().map(|&i| f[i].clone()).collect::<Vec<_>>();
    (
        overlap_add(&pick(&xf), hop, N_FRAME),
        overlap_add(&pick(&yf), hop, N_FRAME),
    )
}

/// Magnitude-squared spectra, `frames x (NFFT/2 + 1)`.
fn power_frames(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hanning_inner(N_FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    frame_starts(x.len(), N_FRAME, N_FRAME / 2)
        .map(|i| {
            let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
            for (j, b) in buf.iter_mut().take(N_FRAME).enumerate() {
                b.re = w[j] * x[i + j];
            }
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// One-third octave band index ranges `[lo, hi)` over FFT bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (f[a] - target).powi(2).total_cmp(&(f[b] - target).powi(2)))
            .expect("non-empty")
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Short-time objective intelligibility of `processed` against `clean`, in [0, 1].
pub fn stoi(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    if clean.len() != processed.len() || clean.sample_rate != processed.sample_rate {
        return Err(Error::Shape(format!(
            "stoi needs equal lengths and rates, got {} @ {} Hz and {} @ {} Hz",
            clean.len(),
            clean.sample_rate,
            processed.len(),
            processed.sample_rate
        )));
    }
    if clean.samples.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedMetric("clean signal is silent".into()));
    }
    let (x, y) = if clean.sample_rate == FS {
        (clean.samples.clone(), processed.samples.clone())
    } else {
        let (p, q) = (FS as usize, clean.sample_rate as usize);
        (resample_rational(&clean.samples, p, q), resample_rational(&processed.samples, p, q))
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let (xp, yp) = (power_frames(&x), power_frames(&y));
    if xp.len() < SEGMENT {
        return Err(Error::UndefinedMetric(format!(
            "{} active frames, fewer than the {SEGMENT} needed for one segment",
            xp.len()
        )));
    }
    let bands = third_octave_bands();
    let tob = |frames: &[Vec<f64>]| -> Vec<Vec<f64>> {
        // band-major: tob[band][frame]
        bands
            .iter()
            .map(|&(lo, hi)| frames.iter().map(|p| p[lo..hi].iter().sum::<f64>().sqrt()).collect())
            .collect()
    };
    let (xt, yt) = (tob(&xp), tob(&yp));
    let clip = 1.0 + 10f64.powf(-BETA / 20.0);
    let frames = xp.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for b in 0..NUM_BANDS {
            let xs = &xt[b][m - SEGMENT..m];
            let ys = &yt[b][m - SEGMENT..m];
            let alpha = norm(xs) / (norm(ys) + EPS);
            let yprime: Vec<f64> = ys.iter().zip(xs).map(|(yv, xv)| (yv * alpha).min(xv * clip)).collect();
            let ym = yprime.iter().sum::<f64>() / SEGMENT as f64;
            let xm = xs.iter().sum::<f64>() / SEGMENT as f64;
            let yc: Vec<f64> = yprime.iter().map(|v| v - ym).collect();
            let xc: Vec<f64> = xs.iter().map(|v| v - xm).collect();
            let (ny, nx) = (norm(&yc) + EPS, norm(&xc) + EPS);
            total += yc.iter().zip(&xc).map(|(a, b)| (a / ny) * (b / nx)).sum::<f64>();
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}
