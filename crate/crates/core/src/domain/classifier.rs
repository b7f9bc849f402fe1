use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{weight_kld_term, DomainBatch, WeightMode, WeightVector};
use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform, Graph, ParamStore, Rmsprop, Tensor, Var};

/// Which part of the pipeline a classifier plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierRole {
    /// Source-vs-target classifier whose output defines the weights.
    C,
    /// Weighted classifier whose converged loss estimates the JS divergence.
    C2,
    /// Bias-aware classifier trained against worst-case weights.
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: [usize; 2],
    pub leaky_alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epoch distance used by the loss non-increase check.
    pub window: usize,
    /// Window violations tolerated before training stops early.
    pub max_violations: usize,
    /// Gradient reversal coefficient applied to the shared embedding when
    /// C2 is trained adversarially.
    pub reversal_beta: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 32],
            leaky_alpha: 0.1,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 64,
            window: 5,
            max_violations: 2,
            reversal_beta: 1.0,
        }
    }
}

const EMB0_W: &str = "emb.0.w";
const EMB0_B: &str = "emb.0.b";
const EMB1_W: &str = "emb.1.w";
const EMB1_B: &str = "emb.1.b";
const HEAD_W: &str = "head.w";
const HEAD_B: &str = "head.b";

/// Two leaky-ReLU dense layers followed by a sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    pub role: ClassifierRole,
    pub input_dim: usize,
    pub leaky_alpha: f64,
    pub params: ParamStore<f32>,
}

impl DomainClassifier {
    pub fn new(input_dim: usize, role: ClassifierRole, cfg: &ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h0, h1] = cfg.hidden;
        let mut params = ParamStore::new();
        let mut add = |name: &str, t: Tensor<f32>| params.insert(name, t).expect("unique names");
        add(EMB0_W, glorot_uniform(&[input_dim, h0], input_dim, h0, &mut rng));
        add(EMB0_B, Tensor::zeros(&[h0]));
        add(EMB1_W, glorot_uniform(&[h0, h1], h0, h1, &mut rng));
        add(EMB1_B, Tensor::zeros(&[h1]));
        add(HEAD_W, glorot_uniform(&[h1, 1], h1, 1, &mut rng));
        add(HEAD_B, Tensor::zeros(&[1]));
        Self {
            role,
            input_dim,
            leaky_alpha: cfg.leaky_alpha,
            params,
        }
    }

    /// A classifier sharing this one's embedding with a freshly initialized head.
    pub fn with_new_head(&self, role: ClassifierRole, seed: u64) -> Self {
        let mut out = self.clone();
        out.role = role;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h1 = self.params.get(HEAD_W).expect("head").shape()[0];
        out.params
            .set(HEAD_W, glorot_uniform(&[h1, 1], h1, 1, &mut rng))
            .expect("same shape");
        out.params.set(HEAD_B, Tensor::zeros(&[1])).expect("same shape");
        out
    }

    /// Number of scalar parameters in the output unit; used as the capacity
    /// surrogate in the generalization bound.
    pub fn head_param_count(&self) -> usize {
        self.params.get(HEAD_W).map_or(0, Tensor::len) + self.params.get(HEAD_B).map_or(0, Tensor::len)
    }

    /// Copies the embedding layers from `other`.
    pub fn share_embedding_from(&mut self, other: &DomainClassifier) -> Result<()> {
        self.params.copy_prefix_from(&other.params, "emb.")
    }

    fn forward(&self, g: &mut Graph<f32>, x: Var, reverse: Option<f64>) -> Result<Var> {
        let p = &self.params;
        let (w0, b0) = (g.param(p, EMB0_W)?, g.param(p, EMB0_B)?);
        let h = g.dense(x, w0, b0)?;
        let h = g.leaky_relu(h, self.leaky_alpha)?;
        let (w1, b1) = (g.param(p, EMB1_W)?, g.param(p, EMB1_B)?);
        let h = g.dense(h, w1, b1)?;
        let mut h = g.leaky_relu(h, self.leaky_alpha)?;
        if let Some(beta) = reverse {
            h = g.grad_reverse(h, beta)?;
        }
        let (wh, bh) = (g.param(p, HEAD_W)?, g.param(p, HEAD_B)?);
        let y = g.dense(h, wh, bh)?;
        g.sigmoid(y)
    }

    fn input(&self, rows: &[&[f64]]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(rows.len() * self.input_dim);
        for r in rows {
            if r.len() != self.input_dim {
                return Err(Error::Shape(format!(
                    "classifier expects {} features, got {}",
                    self.input_dim,
                    r.len()
                )));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Tensor::new(vec![rows.len(), self.input_dim], data)
    }

    /// Probability of the source label for each row.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        self.predict_rows(&refs)
    }

    pub(crate) fn predict_rows(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(1024) {
            let mut g = Graph::new();
            let x = g.input(self.input(chunk)?)?;
            let p = self.forward(&mut g, x, None)?;
            out.extend(g.value(p).data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }
}

/// Labelled, weighted samples for one classifier fit.
struct FitData<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> FitData<'a> {
    /// Source rows get label 1 and weight `omega_i * n / n_s`, target rows
    /// label 0 and weight `n / n_t`, so the batch loss is the sum of the two
    /// per-domain means.
    fn balanced(source: &'a DomainBatch, target: &'a DomainBatch, omega: Option<&[f64]>) -> Self {
        let (ns, nt) = (source.len(), target.len());
        let n = (ns + nt) as f64;
        let mut rows = Vec::with_capacity(ns + nt);
        let mut labels = Vec::with_capacity(ns + nt);
        let mut weights = Vec::with_capacity(ns + nt);
        for (i, r) in source.features.iter().enumerate() {
            rows.push(r.as_slice());
            labels.push(1.0);
            weights.push(omega.map_or(1.0, |w| w[i]) * n / ns as f64);
        }
        for r in &target.features {
            rows.push(r.as_slice());
            labels.push(0.0);
            weights.push(n / nt as f64);
        }
        Self {
            rows,
            labels,
            weights,
        }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

/// Per-epoch record of a classifier fit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitHistory {
    /// Full-data weighted cross-entropy after each epoch.
    pub losses: Vec<f64>,
    /// Target log-weight term after each epoch (C only).
    pub kld_terms: Vec<f64>,
    /// Epochs actually run before convergence or early stop.
    pub epochs_run: usize,
    pub stopped_early: bool,
}

fn full_loss(c: &DomainClassifier, data: &FitData) -> Result<(f64, Vec<f64>)> {
    let probs = c.predict_rows(&data.rows)?;
    let mut acc = 0.0;
    for ((&p, &y), &w) in probs.iter().zip(&data.labels).zip(&data.weights) {
        let q = p.clamp(1e-7, 1.0 - 1e-7);
        acc += w * (y * q.ln() + (1.0 - y) * (1.0 - q).ln());
    }
    Ok((-acc / data.len() as f64, probs))
}

/// Mini-batch RMSprop on weighted cross-entropy. Keeps the parameters with
/// the lowest full-data loss.
fn fit(
    c: &mut DomainClassifier,
    data: &FitData,
    cfg: &ClassifierConfig,
    seed: u64,
    reverse: Option<f64>,
    mut on_epoch: impl FnMut(&DomainClassifier, &[f64]) -> Result<()>,
) -> Result<FitHistory> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("classifier batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Rmsprop::<f32>::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = FitHistory::default();
    let mut best = (f64::INFINITY, c.params.clone());
    let mut violations = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| data.rows[i]).collect();
            let labels: Vec<f64> = idx.iter().map(|&i| data.labels[i]).collect();
            let weights: Vec<f64> = idx.iter().map(|&i| data.weights[i]).collect();
            let fail = |e: Error| Error::TrainingFailure {
                epoch,
                batch,
                reason: e.to_string(),
            };
            let mut g = Graph::new();
            let x = g.input(c.input(&rows)?).map_err(fail)?;
            let p = c.forward(&mut g, x, reverse).map_err(fail)?;
            let p = g.reshape(p, vec![rows.len()]).map_err(fail)?;
            let loss = g.weighted_bce(p, &labels, &weights).map_err(fail)?;
            g.backward(loss).map_err(fail)?;
            g.accumulate_param_grads(&mut c.params)?;
            opt.step(&mut c.params);
        }
        let (loss, probs) = full_loss(c, data)?;
        if !loss.is_finite() {
            return Err(Error::TrainingFailure {
                epoch,
                batch: 0,
                reason: "classifier loss is not finite".into(),
            });
        }
        history.losses.push(loss);
        history.epochs_run = epoch + 1;
        on_epoch(c, &probs)?;
        if loss < best.0 {
            best = (loss, c.params.clone());
        }
        if epoch >= cfg.window && loss > history.losses[epoch - cfg.window] {
            violations += 1;
            if violations >= cfg.max_violations {
                log::debug!("classifier stopped early at epoch {epoch}");
                history.stopped_early = true;
                break;
            }
        }
    }
    // Adversarial fits keep the final state: the best-loss snapshot would
    // undo the embedding's ascent.
    if reverse.is_none() {
        c.params = best.1;
    }
    Ok(history)
}

fn check_batches(source: &DomainBatch, target: &DomainBatch) -> Result<usize> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::DegenerateInput(
            "classifier training needs samples from both domains".into(),
        ));
    }
    if source.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "source features have {} dims, target {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(source.dim())
}

/// Trains the source-vs-target classifier (label 1 = source) with balanced
/// class weights, so its output estimates `p_S / (p_S + p_T)`.
pub fn train_classifier_c(
    source: &DomainBatch,
    target: &DomainBatch,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(DomainClassifier, FitHistory)> {
    let dim = check_batches(source, target)?;
    let mut c = DomainClassifier::new(dim, ClassifierRole::C, cfg, seed);
    continue_classifier_c(&mut c, source, target, cfg, seed)
        .map(|h| (c, h))
}

/// Further trains an existing classifier C, e.g. once per outer epoch.
pub fn continue_classifier_c(
    c: &mut DomainClassifier,
    source: &DomainBatch,
    target: &DomainBatch,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<FitHistory> {
    check_batches(source, target)?;
    let data = FitData::balanced(source, target, None);
    let ns = source.len();
    let mut kld = Vec::new();
    let mut history = fit(c, &data, cfg, seed, None, |_, probs| {
        let (term, _) = weight_kld_term(&probs[ns..], &probs[..ns])?;
        kld.push(term);
        Ok(())
    })?;
    history.kld_terms = kld;
    Ok(history)
}

/// Output of the weighted second classifier.
#[derive(Debug, Clone)]
pub struct C2Fit {
    pub classifier: DomainClassifier,
    /// Converged value of the weighted objective
    /// `mean_S w log C2 + mean_T log(1 - C2)`.
    pub objective: f64,
    /// `(objective + ln 4) / 2`.
    pub js_estimate: f64,
    pub history: FitHistory,
}

/// Trains C2 on ω-weighted source samples against the target.
///
/// C2 starts from C's embedding with a new head. With `adversarial` set the
/// embedding is updated through gradient reversal and written back into `c`,
/// so the shared feature extractor is pushed toward making the weighted
/// source indistinguishable from the target.
pub fn train_classifier_c2(
    c: &mut DomainClassifier,
    source: &DomainBatch,
    target: &DomainBatch,
    w: &WeightVector,
    adversarial: bool,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<C2Fit> {
    check_batches(source, target)?;
    if w.values.len() != source.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} source samples",
            w.values.len(),
            source.len()
        )));
    }
    if w.mode == WeightMode::Iw {
        w.check_iw()?;
    }
    let mut c2 = c.with_new_head(ClassifierRole::C2, seed ^ 0xc2);
    let data = FitData::balanced(source, target, Some(&w.values));
    let reverse = adversarial.then_some(cfg.reversal_beta);
    let history = fit(&mut c2, &data, cfg, seed, reverse, |_, _| Ok(()))?;
    let (loss, _) = full_loss(&c2, &data)?;
    if adversarial {
        c.share_embedding_from(&c2)?;
    }
    let objective = -loss;
    Ok(C2Fit {
        classifier: c2,
        objective,
        js_estimate: (objective + 4f64.ln()) / 2.0,
        history,
    })
}

/// Trains a classifier on explicitly weighted source rows (label 1) and
/// target rows (label 0); used by the robust fit.
pub(crate) fn fit_weighted(
    c: &mut DomainClassifier,
    source: &DomainBatch,
    target: &DomainBatch,
    omega: &[f64],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<FitHistory> {
    let data = FitData::balanced(source, target, Some(omega));
    fit(c, &data, cfg, seed, None, |_, _| Ok(()))
}
