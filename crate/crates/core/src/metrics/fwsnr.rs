use crate::audio::{resample, AudioClip, PROCESSING_RATE};
use crate::error::{Error, Result};
use crate::features::{mel_filterbank, stft};

pub const FWSNR_BANDS: usize = 25;
/// Exponent applied to the clean band magnitude to form the band weight.
pub const FWSNR_GAMMA: f64 = 0.2;
pub const FWSNR_MIN_DB: f64 = -10.0;
pub const FWSNR_MAX_DB: f64 = 35.0;
const WINDOW: usize = 512;
const HOP: usize = 256;

fn at_processing_rate(c: &AudioClip) -> Result<AudioClip> {
    if c.sample_rate == PROCESSING_RATE {
        Ok(c.clone())
    } else {
        resample(c, PROCESSING_RATE)
    }
}

/// Frequency-weighted segmental SNR in dB.
///
/// Each 32 ms frame (16 ms hop) is split into 25 mel bands. A band's SNR
/// compares the clean band magnitude with the magnitude error, and the frame
/// score is the mean of band SNRs weighted by `clean^0.2`, clamped to
/// [-10, 35] dB. Frames with a silent clean signal are skipped; frames where
/// the processed signal is silent while the clean one is not score -10 dB.
pub fn fwsnrseg(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    if clean.len() != processed.len() || clean.sample_rate != processed.sample_rate {
        return Err(Error::Shape(format!(
            "fwsnrseg needs equal lengths and rates, got {} @ {} Hz and {} @ {} Hz",
            clean.len(),
            clean.sample_rate,
            processed.len(),
            processed.sample_rate
        )));
    }
    if clean.samples.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedMetric("clean signal is silent".into()));
    }
    let (c, p) = (at_processing_rate(clean)?, at_processing_rate(processed)?);
    if c.len() < WINDOW {
        return Err(Error::UndefinedMetric(format!(
            "clip of {} samples is shorter than one {WINDOW}-sample frame",
            c.len()
        )));
    }
    let (sc, sp) = (stft(&c, WINDOW, HOP)?, stft(&p, WINDOW, HOP)?);
    let fb = mel_filterbank(FWSNR_BANDS, PROCESSING_RATE, WINDOW);
    let bands = |m: &[f64]| -> Vec<f64> { fb.iter().map(|w| w.iter().zip(m).map(|(a, b)| a * b).sum()).collect() };
    let mut total = 0.0;
    let mut frames = 0usize;
    for t in 0..sc.frames {
        let xc = bands(&sc.magnitude(t));
        let xp = bands(&sp.magnitude(t));
        let wsum: f64 = xc.iter().map(|v| v.powf(FWSNR_GAMMA)).sum();
        if !(wsum > 0.0) {
            continue;
        }
        let score = if xp.iter().all(|&v| v == 0.0) {
            FWSNR_MIN_DB
        } else {
            let mut acc = 0.0;
            for (a, b) in xc.iter().zip(&xp) {
                let w = a.powf(FWSNR_GAMMA);
                if w == 0.0 {
                    continue;
                }
                let err = (a - b).powi(2);
                let snr = if err == 0.0 {
                    FWSNR_MAX_DB
                } else {
                    (10.0 * (a * a / err).log10()).clamp(FWSNR_MIN_DB, FWSNR_MAX_DB)
                };
                acc += w * snr;
            }
            (acc / wsum).clamp(FWSNR_MIN_DB, FWSNR_MAX_DB)
        };
        total += score;
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::UndefinedMetric("every frame of the clean signal is silent".into()));
    }
    Ok(total / frames as f64)
}
