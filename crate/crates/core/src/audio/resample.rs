use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side, counted at the
/// lower of the two rates.
const ZERO_CROSSINGS: f64 = 24.0;
const KAISER_BETA: f64 = 8.6;
/// Passband edge relative to the lower Nyquist frequency.
const ROLLOFF: f64 = 0.94;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Windowed-sinc polyphase resampler.
///
/// The output has `round(len * target / source)` samples.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 || clip.sample_rate == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let g = gcd(target_rate as u64, clip.sample_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (clip.sample_rate as u64 / g) as usize;
    let n_in = clip.len();
    let n_out = ((n_in as u64 * up as u64 + down as u64 / 2) / down as u64) as usize;

    // Kernel on the upsampled grid: cutoff in cycles per upsampled sample.
    let cutoff = 0.5 * ROLLOFF / up.max(down) as f64;
    let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
    let taps_per_side = (half_width / up as f64).ceil() as isize + 1;
    let width = (2 * taps_per_side + 1) as usize;

    // table[phase][k]: weight for input index (center + k - taps_per_side).
    let mut table = vec![vec![0.0; width]; up];
    for (phase, row) in table.iter_mut().enumerate() {
        for (slot, w) in row.iter_mut().enumerate() {
            let k = slot as isize - taps_per_side;
            let t = phase as f64 - (k * up as isize) as f64;
            if t.abs() > half_width {
                continue;
            }
            let r = t / half_width;
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA);
            *w = 2.0 * cutoff * sinc(2.0 * cutoff * t) * window;
        }
        let sum: f64 = row.iter().sum();
        if sum != 0.0 {
            row.iter_mut().for_each(|w| *w /= sum);
        }
    }

    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let pos = n * down;
        let center = (pos / up) as isize;
        let phase = pos % up;
        let row = &table[phase];
        let mut acc = 0.0;
        for (slot, &w) in row.iter().enumerate() {
            let j = center + slot as isize - taps_per_side;
            if j >= 0 && (j as usize) < n_in {
                acc += w * clip.samples[j as usize];
            }
        }
        out.push(acc);
    }
    Ok(AudioClip::new(out, target_rate))
}
