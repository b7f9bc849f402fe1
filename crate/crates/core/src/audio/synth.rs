//! Synthetic two-domain speech corpus.
//!
//! "Speech" is a harmonic source with a drifting F0, a 2-8 Hz syllabic
//! envelope and moving formant-like resonances. Source and target differ in
//! their F0 range and in a fixed microphone coloration filter.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{write_wav, AudioClip, Domain, Manifest, ManifestEntry, Split, PROCESSING_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub source_clips: usize,
    pub target_clips: usize,
    pub clip_seconds: f64,
    pub source_f0: (f64, f64),
    pub target_f0: (f64, f64),
    /// Apply the per-domain microphone coloration.
    pub domain_filter: bool,
    pub noise_seconds: f64,
    pub noises: Vec<NoiseKind>,
    pub snr_levels: Vec<f64>,
    /// Fractions of target clips assigned to (train, validation); the rest is test.
    pub target_train_fraction: f64,
    pub target_validation_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            source_clips: 120,
            target_clips: 900,
            clip_seconds: 1.5,
            source_f0: (95.0, 150.0),
            target_f0: (150.0, 260.0),
            domain_filter: true,
            noise_seconds: 240.0,
            noises: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
            snr_levels: vec![-5.0, 0.0, 5.0],
            target_train_fraction: 0.4,
            target_validation_fraction: 0.1,
        }
    }
}

impl CorpusSpec {
    /// Shrinks clip counts by `scale` (at least one clip per non-empty domain).
    pub fn scaled(&self, scale: f64) -> Self {
        let shrink = |n: usize| {
            if n == 0 {
                0
            } else {
                ((n as f64 * scale).round() as usize).max(1)
            }
        };
        Self {
            source_clips: shrink(self.source_clips),
            target_clips: shrink(self.target_clips),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok_range = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0 && r.1 < 1000.0;
        if !(self.clip_seconds > 0.0) || !(self.noise_seconds > 0.0) {
            return Err(Error::Config("clip and noise durations must be positive".into()));
        }
        if !ok_range(self.source_f0) || !ok_range(self.target_f0) {
            return Err(Error::Config("F0 ranges must satisfy 0 < lo <= hi < 1000 Hz".into()));
        }
        let f = self.target_train_fraction + self.target_validation_fraction;
        if self.target_train_fraction < 0.0 || self.target_validation_fraction < 0.0 || f > 1.0 {
            return Err(Error::Config("target split fractions must be in [0, 1] and sum to <= 1".into()));
        }
        Ok(())
    }

    fn target_split(&self, index: usize) -> Split {
        let n = self.target_clips as f64;
        let train = (n * self.target_train_fraction).round() as usize;
        let val = (n * self.target_validation_fraction).round() as usize;
        // Interleave so each split sees the whole F0 range.
        let slot = (index * 7919) % self.target_clips.max(1);
        if slot < train {
            Split::Train
        } else if slot < train + val {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

/// Written corpus: the combined manifest plus the per-domain manifest files.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
}

/// RBJ-cookbook biquad in direct form I.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn peaking(rate: f64, f0: f64, q: f64, gain_db: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w = 2.0 * PI * f0 / rate;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha / a;
        Self {
            b: [(1.0 + alpha * a) / a0, -2.0 * w.cos() / a0, (1.0 - alpha * a) / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha / a) / a0],
        }
    }

    fn highpass(rate: f64, f0: f64, q: f64) -> Self {
        let w = 2.0 * PI * f0 / rate;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let c = w.cos();
        Self {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn lowpass(rate: f64, f0: f64, q: f64) -> Self {
        let w = 2.0 * PI * f0 / rate;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let c = w.cos();
        Self {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn high_shelf(rate: f64, f0: f64, gain_db: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w = 2.0 * PI * f0 / rate;
        let c = w.cos();
        let alpha = w.sin() / 2.0 * 2f64.sqrt();
        let sa = 2.0 * a.sqrt() * alpha;
        let a0 = (a + 1.0) - (a - 1.0) * c + sa;
        Self {
            b: [
                a * ((a + 1.0) + (a - 1.0) * c + sa) / a0,
                -2.0 * a * ((a - 1.0) + (a + 1.0) * c) / a0,
                a * ((a + 1.0) + (a - 1.0) * c - sa) / a0,
            ],
            a: [2.0 * ((a - 1.0) - (a + 1.0) * c) / a0, ((a + 1.0) - (a - 1.0) * c - sa) / a0],
        }
    }

    fn apply(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for s in x.iter_mut() {
            let x0 = *s;
            let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *s = y0;
        }
    }
}

fn microphone(domain: Domain, rate: f64) -> Vec<Biquad> {
    match domain {
        // dull, bass-heavy close-talk microphone
        Domain::Source => vec![Biquad::high_shelf(rate, 1800.0, -8.0), Biquad::peaking(rate, 300.0, 0.8, 4.0)],
        // thin, presence-boosted microphone
        Domain::Target => vec![Biquad::highpass(rate, 250.0, 0.707), Biquad::peaking(rate, 2600.0, 1.2, 8.0)],
    }
}

fn normalize_rms(x: &mut [f64], target_rms: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = target_rms / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        let g = 0.95 / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// One synthetic utterance of `len` samples.
pub(crate) fn synth_utterance<R: Rng>(rng: &mut R, len: usize, rate: f64, f0_range: (f64, f64)) -> Vec<f64> {
    let base_f0 = rng.gen_range(f0_range.0..=f0_range.1);
    let vib_rate = rng.gen_range(0.4..1.5);
    let vib_depth = rng.gen_range(0.03..0.08);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let syllable_rate = rng.gen_range(2.0..8.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let formants: Vec<(f64, f64, f64, f64, f64)> = [(300.0, 800.0), (900.0, 2200.0), (2300.0, 3300.0)]
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let center = rng.gen_range(lo..hi);
            let depth = rng.gen_range(0.08..0.2);
            let rate_hz = syllable_rate * rng.gen_range(0.4..1.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = [1.0, 0.6, 0.3][i];
            (center, depth, rate_hz, phase, amp)
        })
        .collect();
    let max_f0 = base_f0 * (1.0 + vib_depth);
    let n_harm = ((3800.0 / max_f0).floor() as usize).max(1);

    let mut out = vec![0.0; len];
    let mut phase = 0.0f64;
    let mut amps = vec![0.0; n_harm];
    const UPDATE: usize = 32;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / rate;
        let f0 = base_f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin());
        if i % UPDATE == 0 {
            for (k, a) in amps.iter_mut().enumerate() {
                let f = (k + 1) as f64 * f0;
                let mut g = 0.02;
                for &(center, depth, rate_hz, ph, amp) in &formants {
                    let fc = center * (1.0 + depth * (2.0 * PI * rate_hz * t + ph).sin());
                    let bw = 60.0 + fc / 12.0;
                    g += amp / (1.0 + ((f - fc) / bw).powi(2));
                }
                *a = g / (k + 1) as f64;
            }
        }
        phase += 2.0 * PI * f0 / rate;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        let voiced: f64 = amps
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
            .sum();
        let env_raw = 0.5 - 0.5 * (2.0 * PI * syllable_rate * t + env_phase).cos();
        let env = 0.06 + 0.94 * env_raw * env_raw;
        *o = voiced * env;
    }
    out
}

fn gaussian_noise<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Paul Kellet's refined pink-noise filter.
fn pink_from_white(white: &[f64]) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    white
        .iter()
        .map(|&w| {
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

pub(crate) fn synth_noise<R: Rng>(rng: &mut R, kind: NoiseKind, len: usize, rate: f64) -> Vec<f64> {
    let mut x = match kind {
        NoiseKind::White => gaussian_noise(rng, len),
        NoiseKind::Pink => pink_from_white(&gaussian_noise(rng, len)),
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            for _ in 0..6 {
                let mut talker = gaussian_noise(rng, len);
                Biquad::lowpass(rate, rng.gen_range(700.0..1400.0), 0.9).apply(&mut talker);
                Biquad::highpass(rate, 120.0, 0.707).apply(&mut talker);
                let am_rate = rng.gen_range(2.0..8.0);
                let am_phase = rng.gen_range(0.0..2.0 * PI);
                for (i, (a, s)) in acc.iter_mut().zip(&talker).enumerate() {
                    let e = 0.5 - 0.5 * (2.0 * PI * am_rate * i as f64 / rate + am_phase).cos();
                    *a += s * (0.1 + 0.9 * e);
                }
            }
            acc
        }
    };
    normalize_rms(&mut x, 0.1);
    x
}

fn snr_tag(snr: f64) -> String {
    let r = snr.round() as i64;
    if r < 0 {
        format!("m{}", -r)
    } else {
        format!("p{r}")
    }
}

fn domain_seed(seed: u64, domain: Domain, index: usize) -> u64 {
    let tag = match domain {
        Domain::Source => 0x5eed_0001u64,
        Domain::Target => 0x5eed_0002u64,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (tag << 32) ^ index as u64
}

/// Synthesizes a corpus into `out_dir` and writes `source.jsonl` / `target.jsonl`.
pub fn synth_corpus(seed: u64, spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let clean_dir = out_dir.join("clean");
    let noise_dir = out_dir.join("noise");
    for d in [out_dir, &clean_dir, &noise_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let rate = PROCESSING_RATE as f64;

    let mut noise_paths = Vec::new();
    for (k, &kind) in spec.noises.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(0x4e01_5e00 + k as u64));
        let len = (spec.noise_seconds * rate).round() as usize;
        let samples = synth_noise(&mut rng, kind, len, rate);
        let rel = PathBuf::from("noise").join(format!("{}.wav", kind.name()));
        write_wav(out_dir.join(&rel), &AudioClip::new(samples, PROCESSING_RATE))?;
        noise_paths.push((kind, rel));
    }

    let clip_len = (spec.clip_seconds * rate).round() as usize;
    let mut entries = Vec::new();
    for (domain, count, f0) in [
        (Domain::Source, spec.source_clips, spec.source_f0),
        (Domain::Target, spec.target_clips, spec.target_f0),
    ] {
        let prefix = match domain {
            Domain::Source => "src",
            Domain::Target => "tgt",
        };
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(domain_seed(seed, domain, i));
            let mut speech = synth_utterance(&mut rng, clip_len, rate, f0);
            if spec.domain_filter {
                for f in microphone(domain, rate) {
                    f.apply(&mut speech);
                }
            }
            normalize_rms(&mut speech, 0.05);
            let rel = PathBuf::from("clean").join(format!("{prefix}_{i:04}.wav"));
            write_wav(out_dir.join(&rel), &AudioClip::new(speech, PROCESSING_RATE))?;
            let split = match domain {
                Domain::Source => Split::Train,
                Domain::Target => spec.target_split(i),
            };
            for (kind, noise_rel) in &noise_paths {
                for &snr in &spec.snr_levels {
                    entries.push(ManifestEntry {
                        id: format!("{prefix}_{i:04}_{}_{}", kind.name(), snr_tag(snr)),
                        clean_path: rel.clone(),
                        noise_path: noise_rel.clone(),
                        noise_name: kind.name().to_string(),
                        snr_db: snr,
                        split,
                        domain,
                    });
                }
            }
        }
    }

    let manifest = Manifest::new(entries, out_dir);
    let source_manifest = out_dir.join("source.jsonl");
    let target_manifest = out_dir.join("target.jsonl");
    manifest.filter(|e| e.domain == Domain::Source).save(&source_manifest)?;
    manifest.filter(|e| e.domain == Domain::Target).save(&target_manifest)?;
    Ok(SynthCorpus {
        manifest,
        source_manifest,
        target_manifest,
    })
}
