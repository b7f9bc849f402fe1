//! The five pipeline commands. Each returns a summary value so that tests can
//! drive the pipeline without spawning processes.

use std::collections::BTreeMap;
use std::fs;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use daptain::audio::{
    read_wav_for_processing, synth_corpus, write_wav, AudioClip, Manifest, ManifestEntry, MixtureRecord,
    MixtureSource, Split,
};
use daptain::domain::{
    generalization_bound, renyi2_divergence, BoundInputs, ClassifierRole, DomainClassifier, Distribution,
};
use daptain::features::{stft, FeatureNormalizer, FEATURE_DIM, HOP, LOG_FLOOR, WINDOW_LEN};
use daptain::metrics::{
    aggregate, fwsnrseg, paired_ttest, read_pesq_scores, results_csv, stoi, EvalRecord, Metric, TTestResult,
};
use daptain::vcae::{load_target_features, train, TrainOutcome, VcaeModel, CHECKPOINT_FILE};
use daptain::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    write_text(path, &(text + "\n"))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

/// Applies `f` to every item on up to `threads` scoped workers; results keep
/// the input order.
fn par_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<U>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn manifest_path(p: &Option<PathBuf>, which: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::Config(format!("{which}_manifest is not set")))
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub source_clips: usize,
    pub target_clips: usize,
    pub mixtures: usize,
}

/// Writes the synthetic corpus and its manifests into `cfg.output_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let spec = cfg.scaled_corpus();
    let corpus = synth_corpus(cfg.seed, &spec, &cfg.output_dir)?;
    cfg.persist(&cfg.output_dir)?;
    let summary = SynthSummary {
        source_manifest: corpus.source_manifest,
        target_manifest: corpus.target_manifest,
        source_clips: spec.source_clips,
        target_clips: spec.target_clips,
        mixtures: corpus.manifest.len(),
    };
    log::info!(
        "synthesized {} source and {} target clips ({} mixtures)",
        summary.source_clips,
        summary.target_clips,
        summary.mixtures
    );
    Ok(summary)
}

/// Trains a model; the checkpoint, epoch log, weights and resolved config
/// land in `cfg.output_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let source = Manifest::load(manifest_path(&cfg.source_manifest, "source")?)?;
    let target = match &cfg.target_manifest {
        Some(p) => Manifest::load(p)?,
        None => Manifest::default(),
    };
    let tcfg = cfg.scaled_training();
    cfg.persist(&cfg.output_dir)?;
    let out = train(&source, &target, &tcfg, Some(&cfg.output_dir))?;
    log::info!(
        "trained {} epochs; checkpoint {}",
        out.log.len(),
        cfg.output_dir.join(CHECKPOINT_FILE).display()
    );
    Ok(out)
}

/// What to enhance.
#[derive(Debug, Clone)]
pub enum EnhanceInput {
    Wav(PathBuf),
    /// Mixtures of the given split, regenerated from the run seed.
    Manifest { path: PathBuf, split: Option<Split> },
}

/// Enhances each input and writes `<name>.wav` files; returns the written paths.
pub fn cmd_enhance(cfg: &RunConfig, checkpoint: &Path, input: &EnhanceInput) -> Result<Vec<PathBuf>> {
    let model = VcaeModel::load(checkpoint)?;
    let out_dir = &cfg.output_dir;
    create_dir(out_dir)?;
    cfg.persist(out_dir)?;
    let jobs: Vec<(String, AudioClip)> = match input {
        EnhanceInput::Wav(p) => {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Config(format!("{} has no file name", p.display())))?;
            vec![(stem, read_wav_for_processing(p)?)]
        }
        EnhanceInput::Manifest { path, split } => {
            let m = Manifest::load(path)?;
            let m = match split {
                Some(s) => m.split(*s),
                None => m,
            };
            let mut src = MixtureSource::new(cfg.seed);
            m.entries
                .iter()
                .map(|e| src.load(&m, e).map(|r| (r.id, r.mix.mixture)))
                .collect::<Result<_>>()?
        }
    };
    let enhanced = par_map(&jobs, cfg.threads, |(_, clip)| model.enhance(clip));
    let mut written = Vec::with_capacity(jobs.len());
    for ((name, _), clip) in jobs.iter().zip(enhanced) {
        let path = out_dir.join(format!("{name}.wav"));
        write_wav(&path, &clip?)?;
        written.push(path);
    }
    log::info!("enhanced {} clips into {}", written.len(), out_dir.display());
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedTest {
    pub metric: String,
    pub method_a: String,
    pub method_b: String,
    pub mean_difference: f64,
    #[serde(flatten)]
    pub result: TTestResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub utterances: usize,
    pub records: usize,
    pub warnings: usize,
    pub methods: Vec<String>,
    /// Per-metric, per-method averages over all conditions.
    pub averages: BTreeMap<String, BTreeMap<String, f64>>,
    pub ttests: Vec<PairedTest>,
    #[serde(skip)]
    pub results: Vec<EvalRecord>,
}

fn score(id: &str, mix: &MixtureRecord, method: &str, processed: &AudioClip) -> Result<EvalRecord> {
    Ok(EvalRecord {
        id: id.to_string(),
        noise_name: mix.noise_name.clone(),
        snr_db: mix.mix.snr_db,
        method: method.to_string(),
        stoi: stoi(&mix.mix.clean, processed)?,
        fwsnrseg_db: fwsnrseg(&mix.mix.clean, processed)?,
        pesq: None,
    })
}

/// Log-magnitude spectrogram, one frame per line.
fn spectrogram_csv(clip: &AudioClip) -> Result<String> {
    let spec = stft(clip, WINDOW_LEN, HOP)?;
    let mut out = String::new();
    for t in 0..spec.frames {
        let row: Vec<String> = spec
            .magnitude(t)
            .iter()
            .map(|m| format!("{:.3}", 20.0 * m.max(LOG_FLOOR).log10()))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Scores reference methods and enhanced directories against the clean
/// speech of `manifest`'s evaluation split.
///
/// `enhanced` maps method names to directories holding `<id>.wav`. Missing
/// or unscorable files are skipped with a warning.
pub fn cmd_evaluate(cfg: &RunConfig, manifest: &Path, enhanced: &[(String, PathBuf)]) -> Result<EvalSummary> {
    let opts = &cfg.evaluation;
    let m = Manifest::load(manifest)?;
    let m = m.split(parse_split(&opts.split)?);
    if m.is_empty() {
        return Err(Error::Config(format!("manifest has no {} entries", opts.split)));
    }
    let out_dir = &cfg.output_dir;
    create_dir(out_dir)?;
    cfg.persist(out_dir)?;
    let mut methods: Vec<String> = opts.reference_methods.clone();
    for (name, _) in enhanced {
        if methods.contains(name) {
            return Err(Error::Config(format!("method {name:?} given twice")));
        }
        methods.push(name.clone());
    }
    let pesq = match &opts.pesq_scores {
        Some(p) => Some(read_pesq_scores(p)?),
        None => None,
    };

    let mut src = MixtureSource::new(cfg.seed);
    let mixtures: Vec<MixtureRecord> = m
        .entries
        .iter()
        .map(|e: &ManifestEntry| src.load(&m, e))
        .collect::<Result<_>>()?;

    let spec_dir = out_dir.join("spectrograms");
    if opts.spectrograms > 0 {
        create_dir(&spec_dir)?;
    }

    // (record or warning) per (utterance, method), in a fixed order.
    let per_utt = par_map(&mixtures, cfg.threads, |mix| {
        let mut rows: Vec<std::result::Result<(EvalRecord, AudioClip), String>> = Vec::new();
        for method in &methods {
            let clip = match method.as_str() {
                "unprocessed" => Ok(mix.mix.mixture.clone()),
                "clean" => Ok(mix.mix.clean.clone()),
                _ => {
                    let dir = &enhanced.iter().find(|(n, _)| n == method).expect("listed above").1;
                    let p = dir.join(format!("{}.wav", mix.id));
                    if p.exists() {
                        read_wav_for_processing(&p).map_err(|e| e.to_string())
                    } else {
                        Err(format!("missing {}", p.display()))
                    }
                }
            };
            rows.push(clip.and_then(|c| {
                score(&mix.id, mix, method, &c)
                    .map(|r| (r, c))
                    .map_err(|e| format!("{} / {method}: {e}", mix.id))
            }));
        }
        rows
    });

    let mut records = Vec::new();
    let mut warnings = 0;
    for (k, (mix, rows)) in mixtures.iter().zip(per_utt).enumerate() {
        if k < opts.spectrograms {
            write_text(&spec_dir.join(format!("{}_noisy.csv", mix.id)), &spectrogram_csv(&mix.mix.mixture)?)?;
            write_text(&spec_dir.join(format!("{}_clean_ref.csv", mix.id)), &spectrogram_csv(&mix.mix.clean)?)?;
        }
        for row in rows {
            match row {
                Ok((mut r, clip)) => {
                    if k < opts.spectrograms && r.method != "unprocessed" && r.method != "clean" {
                        write_text(&spec_dir.join(format!("{}_{}.csv", r.id, r.method)), &spectrogram_csv(&clip)?)?;
                    }
                    if let Some(p) = &pesq {
                        r.pesq = p.get(&format!("{}/{}", r.method, r.id)).or_else(|| p.get(&r.id)).copied();
                    }
                    records.push(r);
                }
                Err(msg) => {
                    log::warn!("skipped: {msg}");
                    warnings += 1;
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::DegenerateInput("no utterance could be scored".into()));
    }

    write_text(&out_dir.join("results.csv"), &results_csv(&records))?;
    let mut averages = BTreeMap::new();
    for name in &opts.metrics {
        let metric = match name.as_str() {
            "stoi" => Metric::Stoi,
            "fwsnrseg" => Metric::Fwsnrseg,
            _ => Metric::Pesq,
        };
        if metric == Metric::Pesq && records.iter().all(|r| r.pesq.is_none()) {
            log::warn!("no PESQ scores supplied; skipping the PESQ table");
            continue;
        }
        let table = aggregate(&records, metric)?;
        write_text(&out_dir.join(format!("table_{name}.csv")), &table.to_csv())?;
        averages.insert(
            name.clone(),
            table.methods.iter().cloned().zip(table.averages.iter().copied()).collect(),
        );
    }

    // Paired by utterance id over the ids both methods scored.
    let mut ttests = Vec::new();
    let compared: Vec<&String> = methods.iter().filter(|m| *m != "clean").collect();
    for (i, a) in compared.iter().enumerate() {
        for b in &compared[i + 1..] {
            for (metric, get) in [
                ("stoi", (|r: &EvalRecord| r.stoi) as fn(&EvalRecord) -> f64),
                ("fwsnrseg", |r: &EvalRecord| r.fwsnrseg_db),
            ] {
                let by_id: BTreeMap<&str, f64> = records
                    .iter()
                    .filter(|r| &r.method == *b)
                    .map(|r| (r.id.as_str(), get(r)))
                    .collect();
                let (xa, xb): (Vec<f64>, Vec<f64>) = records
                    .iter()
                    .filter(|r| &r.method == *a)
                    .filter_map(|r| by_id.get(r.id.as_str()).map(|&v| (get(r), v)))
                    .unzip();
                match paired_ttest(&xb, &xa) {
                    Ok(result) => ttests.push(PairedTest {
                        metric: metric.into(),
                        method_a: (*a).clone(),
                        method_b: (*b).clone(),
                        mean_difference: xb.iter().zip(&xa).map(|(p, q)| p - q).sum::<f64>() / xa.len() as f64,
                        result,
                    }),
                    Err(e) => log::warn!("t-test {b} vs {a} on {metric}: {e}"),
                }
            }
        }
    }
    let mut tcsv = String::from("metric,method_a,method_b,mean_difference,t,p,n,significant\n");
    for t in &ttests {
        let _ = writeln!(
            tcsv,
            "{},{},{},{:.6},{:.6},{:.6e},{},{}",
            t.metric,
            t.method_a,
            t.method_b,
            t.mean_difference,
            t.result.t_statistic,
            t.result.p_value,
            t.result.n_pairs,
            t.result.significant
        );
    }
    write_text(&out_dir.join("ttests.csv"), &tcsv)?;

    let summary = EvalSummary {
        utterances: mixtures.len(),
        records: records.len(),
        warnings,
        methods,
        averages,
        ttests,
        results: records,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    if warnings > 0 {
        log::warn!("{warnings} rows skipped");
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// Second-order Rényi divergence of the target from the source, from
    /// diagonal Gaussian fits to standardized block features.
    pub d2: f64,
    /// Source blocks.
    pub n: usize,
    /// Parameters of the weighted classifier's output layer.
    pub h: usize,
    pub delta: f64,
    pub bound: f64,
}

fn gaussian_fit(rows: &[[f64; FEATURE_DIM]], norm: &FeatureNormalizer) -> Result<Distribution> {
    if rows.len() < 2 {
        return Err(Error::DegenerateInput("need at least two blocks per domain".into()));
    }
    let n = rows.len() as f64;
    let z: Vec<[f64; FEATURE_DIM]> = rows.iter().map(|r| norm.apply_row(r)).collect();
    let mean: Vec<f64> = (0..FEATURE_DIM).map(|d| z.iter().map(|r| r[d]).sum::<f64>() / n).collect();
    let var = (0..FEATURE_DIM)
        .map(|d| (z.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).max(1e-12))
        .collect();
    Ok(Distribution::Gaussian { mean, var })
}

/// Evaluates the importance-weighting generalization bound between two corpora.
pub fn cmd_bound(cfg: &RunConfig, source: &Path, target: &Path, delta: f64) -> Result<BoundReport> {
    let arch = cfg.training.architecture();
    let src = load_target_features(&Manifest::load(source)?, cfg.seed, &arch)?;
    let tgt = load_target_features(&Manifest::load(target)?, cfg.seed, &arch)?;
    let norm = FeatureNormalizer::fit(src.iter().chain(&tgt))?;
    let d2 = renyi2_divergence(&gaussian_fit(&tgt, &norm)?, &gaussian_fit(&src, &norm)?)?.max(0.0);
    let h = DomainClassifier::new(FEATURE_DIM, ClassifierRole::C2, &cfg.training.classifier, cfg.seed)
        .head_param_count();
    let bound = generalization_bound(&BoundInputs {
        d2,
        n: src.len() as f64,
        h: h as f64,
        delta,
    })?;
    let report = BoundReport {
        d2,
        n: src.len(),
        h,
        delta,
        bound,
    };
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("bound.json"), &report)?;
    Ok(report)
}
