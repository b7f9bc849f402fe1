//! Line-delimited JSON manifests describing (clean, noise, SNR) mixtures.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_at_snr, read_wav_for_processing, split_noise, AudioClip, MixtureRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub noise_name: String,
    pub snr_db: f64,
    pub split: Split,
    pub domain: Domain,
}

/// Mixture descriptions; relative paths resolve against `root`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Parses a manifest and checks ids are unique and all paths exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                Error::Manifest(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        let manifest = Self::new(entries, root);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {}", e.id)));
            }
            for p in [&e.clean_path, &e.noise_path] {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(Error::Manifest(format!(
                        "{}: missing file {}",
                        e.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("manifest entries serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn filter(&self, pred: impl Fn(&ManifestEntry) -> bool) -> Manifest {
        Manifest::new(
            self.entries.iter().filter(|e| pred(e)).cloned().collect(),
            self.root.clone(),
        )
    }

    pub fn split(&self, split: Split) -> Manifest {
        self.filter(|e| e.split == split)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Materializes manifest entries into mixtures, caching decoded audio.
///
/// Training-split entries draw noise from the first half of the noise file;
/// validation and test entries from the second half. The crop offset is a
/// pure function of the run seed and the entry id.
#[derive(Debug, Default)]
pub struct MixtureSource {
    seed: u64,
    noises: BTreeMap<PathBuf, (AudioClip, AudioClip)>,
}

impl MixtureSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            noises: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn noise_half(&mut self, path: &Path, split: Split) -> Result<&AudioClip> {
        if !self.noises.contains_key(path) {
            let noise = read_wav_for_processing(path)?;
            self.noises.insert(path.to_path_buf(), split_noise(&noise));
        }
        let (train, eval) = &self.noises[path];
        Ok(match split {
            Split::Train => train,
            Split::Validation | Split::Test => eval,
        })
    }

    pub fn load(&mut self, manifest: &Manifest, entry: &ManifestEntry) -> Result<MixtureRecord> {
        let clean = read_wav_for_processing(manifest.resolve(&entry.clean_path))?;
        let seed = self.seed ^ fnv1a(&entry.id);
        let noise = self.noise_half(&manifest.resolve(&entry.noise_path), entry.split)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = mix_at_snr(&clean, noise, entry.snr_db, &mut rng)?;
        Ok(MixtureRecord {
            id: entry.id.clone(),
            noise_name: entry.noise_name.clone(),
            split: entry.split,
            mix,
        })
    }

    pub fn load_all(&mut self, manifest: &Manifest) -> Result<Vec<MixtureRecord>> {
        manifest
            .entries
            .iter()
            .map(|e| self.load(manifest, e))
            .collect()
    }
}
