use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::batch_objective;
use super::objective::{detect_overfit, normalize_latent, LatentBatch};
use super::{Method, TrainingConfig, VcaeArchitecture, VcaeModel};
use crate::audio::{frame_blocks, AudioClip, Domain, Manifest, Mixture, MixtureSource, Split};
use crate::domain::{
    continue_classifier_c, importance_weights_from_probs, minimax_weights, robust_bias_aware_fit,
    train_classifier_c, train_classifier_c2, DomainBatch, DomainClassifier, WeightMode, WeightVector,
};
use crate::error::{Error, Result};
use crate::features::{block_features, FeatureNormalizer, FEATURE_DIM};
use crate::tensor::{Graph, Rmsprop};

/// File names written into a training output directory.
pub const CHECKPOINT_FILE: &str = "model.vcae";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const WEIGHTS_FILE: &str = "weights.jsonl";

/// Training pairs cut from source mixtures: noisy 1000-sample inputs and the
/// clean 600-sample centers they should reproduce.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceBlocks {
    /// `"<mixture id>#<block index>"`.
    pub ids: Vec<String>,
    /// Clean utterance each block comes from; used to split off validation.
    pub utterances: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Per-block classifier features of the noisy input; empty when not computed.
    pub features: Vec<[f64; FEATURE_DIM]>,
}

impl SourceBlocks {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Frames each `(utterance, id, mixture)` into blocks.
    pub fn from_mixtures<'a>(
        items: impl IntoIterator<Item = (&'a str, &'a str, &'a Mixture)>,
        arch: &VcaeArchitecture,
        with_features: bool,
    ) -> Result<Self> {
        let mut out = Self::default();
        for (utt, id, mix) in items {
            let gain = arch.level_gain(&mix.mixture);
            let scaled = |c: &AudioClip| AudioClip::new(c.samples.iter().map(|v| v * gain).collect(), c.sample_rate);
            let noisy = frame_blocks(&scaled(&mix.mixture), arch.input_len, arch.output_len)?;
            let clean = frame_blocks(&scaled(&mix.clean), arch.input_len, arch.output_len)?;
            if with_features {
                // Features see the clip at its recorded level.
                let raw = frame_blocks(&mix.mixture, arch.input_len, arch.output_len)?;
                out.features.extend(block_features(&mix.mixture, &raw)?.rows);
            }
            for k in 0..noisy.len() {
                out.ids.push(format!("{id}#{k}"));
                out.utterances.push(utt.to_string());
                out.inputs.push(noisy.blocks[k].clone());
                out.targets.push(clean.center(k).to_vec());
            }
        }
        Ok(out)
    }

    /// Loads and frames every entry of `manifest`.
    pub fn load(manifest: &Manifest, seed: u64, arch: &VcaeArchitecture, with_features: bool) -> Result<Self> {
        let mut src = MixtureSource::new(seed);
        let records = src.load_all(manifest)?;
        let utts: Vec<String> = manifest
            .entries
            .iter()
            .map(|e| e.clean_path.to_string_lossy().into_owned())
            .collect();
        Self::from_mixtures(
            utts.iter()
                .zip(&records)
                .map(|(u, r)| (u.as_str(), r.id.as_str(), &r.mix)),
            arch,
            with_features,
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<Vec<f64>>| idx.iter().map(|&i| v[i].clone()).collect();
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            utterances: idx.iter().map(|&i| self.utterances[i].clone()).collect(),
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            features: if self.features.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.features[i]).collect()
            },
        }
    }

    /// Holds out the last `fraction` of utterances (in sorted order, at
    /// least one when `fraction > 0` and there are two or more utterances).
    pub fn split_validation(&self, fraction: f64) -> (Self, Self) {
        let utts: Vec<&String> = self.utterances.iter().collect::<BTreeSet<_>>().into_iter().collect();
        let n_val = if fraction > 0.0 && utts.len() >= 2 {
            ((utts.len() as f64 * fraction).round() as usize).clamp(1, utts.len() - 1)
        } else {
            0
        };
        let held: BTreeSet<&String> = utts[utts.len() - n_val..].iter().copied().collect();
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for (i, u) in self.utterances.iter().enumerate() {
            if held.contains(u) {
                va.push(i);
            } else {
                tr.push(i);
            }
        }
        (self.subset(&tr), self.subset(&va))
    }
}

/// Per-block classifier features of every mixture in `manifest`.
pub fn load_target_features(
    manifest: &Manifest,
    seed: u64,
    arch: &VcaeArchitecture,
) -> Result<Vec<[f64; FEATURE_DIM]>> {
    let mut src = MixtureSource::new(seed);
    let mut rows = Vec::new();
    for e in &manifest.entries {
        let r = src.load(manifest, e)?;
        let blocks = frame_blocks(&r.mix.mixture, arch.input_len, arch.output_len)?;
        rows.extend(block_features(&r.mix.mixture, &blocks)?.rows);
    }
    Ok(rows)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean reconstruction MSE on the validation blocks.
    pub val_loss: f64,
    pub mean_omega: f64,
    pub min_omega: f64,
    pub max_omega: f64,
    /// Jensen-Shannon estimate from the weighted classifier (iw only).
    pub js_estimate: Option<f64>,
    /// Robust classifier log loss (minimax only).
    pub robust_loss: Option<f64>,
    /// Summed latent variance on the validation blocks minus the target.
    pub variance_gap: f64,
    /// The latent was rescaled this epoch instead of a gradient pass.
    pub normalized: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VcaeModel,
    pub log: Vec<EpochLog>,
    /// Weights used in the last epoch, aligned with the training blocks.
    pub weights: WeightVector,
    pub train_ids: Vec<String>,
}

/// Reconstruction MSE of each block under `model`.
pub fn block_loss(model: &VcaeModel, blocks: &SourceBlocks) -> Result<Vec<f64>> {
    let (outs, _) = model.forward_batch(&blocks.inputs)?;
    Ok(outs
        .iter()
        .zip(&blocks.targets)
        .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64)
        .collect())
}

fn normalized_batch(rows: &[[f64; FEATURE_DIM]], norm: &FeatureNormalizer, ids: Vec<String>) -> Result<DomainBatch> {
    DomainBatch::new(rows.iter().map(|r| norm.apply_row(r).to_vec()).collect(), ids)
}

/// Source and target classifier inputs under one shared standardization.
fn domain_batches(train: &SourceBlocks, target: &[[f64; FEATURE_DIM]]) -> Result<(DomainBatch, DomainBatch)> {
    if train.features.len() != train.len() {
        return Err(Error::Config("weighted training needs source block features".into()));
    }
    if target.is_empty() {
        return Err(Error::Config("weighted training needs target-domain mixtures".into()));
    }
    let norm = FeatureNormalizer::fit(train.features.iter().chain(target))?;
    let src = normalized_batch(&train.features, &norm, train.ids.clone())?;
    let tgt_ids = (0..target.len()).map(|i| format!("target#{i}")).collect();
    let tgt = normalized_batch(target, &norm, tgt_ids)?;
    Ok((src, tgt))
}

fn epoch_seed(seed: u64, epoch: usize, salt: u64) -> u64 {
    seed ^ salt ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains from manifests. Source entries supply (noisy, clean) pairs; target
/// entries are used only as unlabeled mixtures for the domain classifiers.
pub fn train(
    source: &Manifest,
    target: &Manifest,
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Config("source manifest is empty".into()));
    }
    let weighted = cfg.method != Method::Baseline;
    if weighted && target.is_empty() {
        return Err(Error::Config(format!("method {} needs a non-empty target manifest", cfg.method)));
    }
    let arch = cfg.architecture();
    let source = source.filter(|e| e.domain == Domain::Source || e.split == Split::Train);
    let blocks = SourceBlocks::load(&source, cfg.seed, &arch, weighted)?;
    let (train_blocks, val_blocks) = blocks.split_validation(cfg.validation_fraction);
    let target_rows = if weighted {
        let train_split = target.split(Split::Train);
        let pool = if train_split.is_empty() { target.clone() } else { train_split };
        load_target_features(&pool, cfg.seed, &arch)?
    } else {
        Vec::new()
    };
    train_on_blocks(&train_blocks, &val_blocks, &target_rows, cfg, out_dir)
}

/// Weight-selection state carried across epochs.
struct Weighting {
    batches: Option<(DomainBatch, DomainBatch)>,
    c: Option<DomainClassifier>,
    omega: WeightVector,
}

impl Weighting {
    /// Runs the classifier stage of one epoch; returns (js, robust loss).
    fn update(
        &mut self,
        model: &VcaeModel,
        train: &SourceBlocks,
        cfg: &TrainingConfig,
        epoch: usize,
    ) -> Result<(Option<f64>, Option<f64>)> {
        let Some((src, tgt)) = &self.batches else {
            return Ok((None, None));
        };
        let seed = epoch_seed(cfg.seed, epoch, 0xc1a5);
        match cfg.method {
            Method::Baseline => Ok((None, None)),
            Method::Iw => {
                let clf_cfg = &cfg.classifier;
                match &mut self.c {
                    Some(c) => {
                        continue_classifier_c(c, src, tgt, clf_cfg, seed)?;
                    }
                    None => self.c = Some(train_classifier_c(src, tgt, clf_cfg, seed)?.0),
                }
                let c = self.c.as_mut().expect("classifier trained above");
                self.omega = importance_weights_from_probs(&c.predict(&src.features)?, cfg.weight_estimator)?;
                let c2_cfg = crate::domain::ClassifierConfig {
                    reversal_beta: cfg.adversarial_beta,
                    ..clf_cfg.clone()
                };
                let fit = train_classifier_c2(c, src, tgt, &self.omega, cfg.adversarial_beta > 0.0, &c2_cfg, seed ^ 0xc2)?;
                Ok((Some(fit.js_estimate), None))
            }
            Method::Minimax => {
                let losses = block_loss(model, train)?;
                let step = minimax_weights(&losses, &self.omega, &cfg.minimax)?;
                self.omega = step.weights;
                let robust = robust_bias_aware_fit(src, tgt, &cfg.minimax, &cfg.classifier, seed)?;
                Ok((None, Some(robust.robust_loss())))
            }
        }
    }
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in log {
        let line = serde_json::to_string(l).expect("log entries serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Trains on prepared blocks. `target` holds target-domain block features
/// (unused for the baseline).
pub fn train_on_blocks(
    train: &SourceBlocks,
    val: &SourceBlocks,
    target: &[[f64; FEATURE_DIM]],
    cfg: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training blocks".into()));
    }
    // Without held-out utterances the training blocks double as validation.
    let val = if val.is_empty() { train } else { val };
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let arch = cfg.architecture();
    let mut model = VcaeModel::new(arch.clone(), cfg.seed)?;
    model.meta.method = Some(cfg.method);
    model.meta.seed = cfg.seed;

    let mut weighting = Weighting {
        batches: if cfg.method == Method::Baseline {
            None
        } else {
            Some(domain_batches(train, target)?)
        },
        c: None,
        omega: WeightVector {
            values: vec![1.0; train.len()],
            mode: match cfg.method {
                Method::Baseline => WeightMode::Uniform,
                Method::Iw => WeightMode::Iw,
                Method::Minimax => WeightMode::Minimax,
            },
        },
    };

    let mut opt = Rmsprop::<f32>::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_b10c);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log: Vec<EpochLog> = Vec::new();
    let mut val_history = Vec::new();

    for epoch in 0..cfg.epochs {
        let (js, robust) = weighting.update(&model, train, cfg, epoch)?;
        let omega = &weighting.omega;

        let overfit = detect_overfit(&val_history, cfg.patience);
        let mut train_loss = f64::NAN;
        if overfit {
            let (_, latents) = model.forward_batch(&train.inputs)?;
            let latents = LatentBatch::new(latents)?;
            let (_, s) = normalize_latent(&latents, cfg.target_variance)?;
            model.rescale_latent(&latents.mean(), s)?;
            model.meta.latent_normalized = true;
            log::info!("epoch {}: validation loss stalled, latent rescaled by {s:.4}", epoch + 1);
        } else {
            order.shuffle(&mut rng);
            let mut acc = 0.0;
            for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
                let fail = |e: Error| Error::TrainingFailure {
                    epoch: epoch + 1,
                    batch,
                    reason: e.to_string(),
                };
                let inputs: Vec<&[f64]> = idx.iter().map(|&i| train.inputs[i].as_slice()).collect();
                let targets: Vec<&[f64]> = idx.iter().map(|&i| train.targets[i].as_slice()).collect();
                let w: Vec<f64> = idx.iter().map(|&i| omega.values[i]).collect();
                let mut g = Graph::<f32>::new();
                let obj = batch_objective(&arch, &model.params, &mut g, &inputs, &targets, &w, cfg).map_err(fail)?;
                g.backward(obj).map_err(fail)?;
                g.accumulate_param_grads(&mut model.params).map_err(fail)?;
                opt.step(&mut model.params);
                acc += g.value(obj).item() as f64 * idx.len() as f64;
            }
            train_loss = acc / train.len() as f64;
            if !train_loss.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch: epoch + 1,
                    batch: 0,
                    reason: "training loss is not finite".into(),
                });
            }
        }

        let (val_out, val_latents) = model.forward_batch(&val.inputs)?;
        let val_loss = val_out
            .iter()
            .zip(&val.targets)
            .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64)
            .sum::<f64>()
            / val.len() as f64;
        let variance_gap = LatentBatch::new(val_latents)?.summed_variance() - cfg.target_variance;
        val_history.push(val_loss);

        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            mean_omega: omega.mean(),
            min_omega: omega.values.iter().copied().fold(f64::INFINITY, f64::min),
            max_omega: omega.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            js_estimate: js,
            robust_loss: robust,
            variance_gap,
            normalized: overfit,
        };
        log::info!(
            "epoch {}: train {:.6} val {:.6} mean omega {:.6} variance gap {:.3}",
            entry.epoch,
            entry.train_loss,
            entry.val_loss,
            entry.mean_omega,
            entry.variance_gap
        );
        log.push(entry);
        model.meta.epochs_run = epoch + 1;
        model.meta.final_train_loss = train_loss.is_finite().then_some(train_loss);
        model.meta.final_val_loss = Some(val_loss);
        if let Some(d) = out_dir {
            model.save(d.join(CHECKPOINT_FILE))?;
            write_log(&d.join(LOG_FILE), &log)?;
        }
        // Once rescaled, further epochs would only repeat the rescaling.
        if overfit {
            break;
        }
    }
    if let Some(d) = out_dir {
        weighting.omega.dump(&train.ids, d.join(WEIGHTS_FILE))?;
    }
    Ok(TrainOutcome {
        model,
        log,
        weights: weighting.omega,
        train_ids: train.ids.clone(),
    })
}
