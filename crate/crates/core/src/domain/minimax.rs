use serde::{Deserialize, Serialize};

use super::classifier::fit_weighted;
use super::{ClassifierConfig, ClassifierRole, DomainBatch, DomainClassifier, WeightMode, WeightVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimaxConfig {
    /// Allowed deviation of the mean weight from one.
    pub epsilon: f64,
    pub inner_steps: usize,
    pub inner_step_size: f64,
    pub weight_floor: f64,
    /// Scale of the squared violation reported when an ascent iterate leaves (0, 1].
    pub penalty_coefficient: f64,
    /// Scale of the source feature-expectation matching penalty.
    pub feature_matching: f64,
    /// Outer alternations in the robust fit.
    pub epochs: usize,
    /// Consecutive increases of the robust loss that count as oscillation.
    pub max_increases: usize,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            inner_steps: 10,
            inner_step_size: 0.05,
            weight_floor: 1e-3,
            penalty_coefficient: 10.0,
            feature_matching: 1.0,
            epochs: 30,
            max_increases: 10,
        }
    }
}

impl MinimaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must be in (0, 1), got {}", self.epsilon)));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor < 1.0 - self.epsilon) {
            return Err(Error::Config(format!(
                "weight_floor must be in (0, 1 - epsilon), got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }
}

fn clipped_mean(raw: &[f64], tau: f64, floor: f64) -> f64 {
    raw.iter().map(|r| (r - tau).clamp(floor, 1.0)).sum::<f64>() / raw.len() as f64
}

/// Euclidean projection onto `{floor <= w_i <= 1} ∩ {|mean(w) - 1| <= epsilon}`.
///
/// The solution has the form `clip(raw - tau, floor, 1)`; `tau` is found by
/// bisection and the returned point is always on the feasible side.
pub fn project_weights(raw: &[f64], cfg: &MinimaxConfig) -> Result<WeightVector> {
    cfg.validate()?;
    if raw.is_empty() {
        return Err(Error::DegenerateInput("no weights to project".into()));
    }
    if raw.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite {
            op: "project_weights".into(),
        });
    }
    let floor = cfg.weight_floor;
    let lower = 1.0 - cfg.epsilon;
    // Box values never exceed one, so only the lower side of the mean
    // constraint can bind.
    let tau = if clipped_mean(raw, 0.0, floor) >= lower {
        0.0
    } else {
        // mean(clip(raw - tau)) is non-increasing in tau; lo is feasible.
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let (mut lo, mut hi) = (min - 1.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clipped_mean(raw, mid, floor) >= lower {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(WeightVector {
        values: raw.iter().map(|r| (r - tau).clamp(floor, 1.0)).collect(),
        mode: WeightMode::Minimax,
    })
}

/// Result of a projected ascent on the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxStep {
    pub weights: WeightVector,
    /// `penalty_coefficient * mean(violation^2)` of the last pre-projection
    /// iterate, where the violation is its distance to (0, 1].
    pub penalty: f64,
    /// Inner iterations whose pre-projection iterate left (0, 1].
    pub violating_steps: usize,
}

fn ascend(
    w_prev: &[f64],
    cfg: &MinimaxConfig,
    mut gradient: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<MinimaxStep> {
    let mut w = project_weights(w_prev, cfg)?;
    let mut penalty = 0.0;
    let mut violating_steps = 0;
    for _ in 0..cfg.inner_steps {
        let g = gradient(&w.values);
        let pre: Vec<f64> = w
            .values
            .iter()
            .zip(&g)
            .map(|(wi, gi)| wi + cfg.inner_step_size * gi)
            .collect();
        let violation: f64 = pre
            .iter()
            .map(|&v| {
                let d = if v <= 0.0 { -v } else { (v - 1.0).max(0.0) };
                d * d
            })
            .sum();
        penalty = cfg.penalty_coefficient * violation / pre.len() as f64;
        if violation > 0.0 {
            violating_steps += 1;
        }
        w = project_weights(&pre, cfg)?;
    }
    Ok(MinimaxStep {
        weights: w,
        penalty,
        violating_steps,
    })
}

/// Worst-case weights for fixed per-sample losses: `inner_steps` iterations
/// of `w <- project(w + step * loss)` starting from `w_prev`.
pub fn minimax_weights(loss: &[f64], w_prev: &WeightVector, cfg: &MinimaxConfig) -> Result<MinimaxStep> {
    if loss.len() != w_prev.len() {
        return Err(Error::Shape(format!(
            "{} losses for {} weights",
            loss.len(),
            w_prev.len()
        )));
    }
    if loss.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite {
            op: "minimax_weights".into(),
        });
    }
    ascend(&w_prev.values, cfg, |_| loss.to_vec())
}

/// Outcome of the alternating robust fit.
#[derive(Debug, Clone)]
pub struct RobustFit {
    pub classifier: DomainClassifier,
    pub weights: WeightVector,
    /// Weighted log loss at the chosen weights, per outer epoch.
    pub robust_losses: Vec<f64>,
    /// Log loss with uniform weights for the same classifier, per outer epoch.
    pub uniform_losses: Vec<f64>,
    /// Violation penalty of the final ascent.
    pub penalty: f64,
}

impl RobustFit {
    pub fn robust_loss(&self) -> f64 {
        *self.robust_losses.last().expect("at least one epoch")
    }
}

fn source_feature_mean(source: &DomainBatch, w: &[f64]) -> Vec<f64> {
    let n = source.len() as f64;
    let mut m = vec![0.0; source.dim()];
    for (row, &wi) in source.features.iter().zip(w) {
        for (a, v) in m.iter_mut().zip(row) {
            *a += wi * v / n;
        }
    }
    m
}

/// Alternates a classifier fit on ω-weighted log loss with projected ascent
/// on ω.
///
/// The adversary maximizes the weighted source log loss minus
/// `feature_matching * ||mean_ω(x) - mean(x)||²`. Each epoch compares the
/// ascent result with uniform weights and keeps the larger objective, so the
/// robust loss never falls below the uniform-weight loss.
pub fn robust_bias_aware_fit(
    source: &DomainBatch,
    target: &DomainBatch,
    cfg: &MinimaxConfig,
    clf: &ClassifierConfig,
    seed: u64,
) -> Result<RobustFit> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::DegenerateInput(
            "robust fit needs samples from both domains".into(),
        ));
    }
    let n = source.len();
    let mut c = DomainClassifier::new(source.dim(), ClassifierRole::Robust, clf, seed);
    let mut w = WeightVector::uniform(n);
    let mut robust_losses = Vec::new();
    let mut uniform_losses = Vec::new();
    let mut penalty = 0.0;
    let mut increases = 0;
    let plain_mean = source_feature_mean(source, &vec![1.0; n]);
    for epoch in 0..cfg.epochs.max(1) {
        fit_weighted(&mut c, source, target, &w.values, clf, seed.wrapping_add(epoch as u64))?;
        let ps = c.predict(&source.features)?;
        let pt = c.predict(&target.features)?;
        let src_loss: Vec<f64> = ps.iter().map(|p| -p.clamp(1e-7, 1.0 - 1e-7).ln()).collect();
        let tgt_loss = pt
            .iter()
            .map(|p| -(1.0 - p.clamp(1e-7, 1.0 - 1e-7)).ln())
            .sum::<f64>()
            / pt.len() as f64;
        let weighted = |w: &[f64]| {
            w.iter().zip(&src_loss).map(|(a, b)| a * b).sum::<f64>() / n as f64 + tgt_loss
        };
        let matching = |w: &[f64]| {
            let m = source_feature_mean(source, w);
            m.iter().zip(&plain_mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let objective = |w: &[f64]| weighted(w) - cfg.feature_matching * matching(w);
        let gradient = |w: &[f64]| {
            let m = source_feature_mean(source, w);
            let diff: Vec<f64> = m.iter().zip(&plain_mean).map(|(a, b)| a - b).collect();
            source
                .features
                .iter()
                .zip(&src_loss)
                .map(|(x, l)| {
                    let dot: f64 = x.iter().zip(&diff).map(|(a, b)| a * b).sum();
                    l - 2.0 * cfg.feature_matching * dot
                })
                .collect()
        };
        let from_prev = ascend(&w.values, cfg, gradient)?;
        let from_uniform = ascend(&vec![1.0; n], cfg, gradient)?;
        let step = if objective(&from_prev.weights.values) >= objective(&from_uniform.weights.values) {
            from_prev
        } else {
            from_uniform
        };
        let uniform = vec![1.0; n];
        w = if objective(&step.weights.values) >= objective(&uniform) {
            step.weights
        } else {
            WeightVector {
                values: uniform,
                mode: WeightMode::Minimax,
            }
        };
        penalty = step.penalty;
        let robust = weighted(&w.values);
        if let Some(&prev) = robust_losses.last() {
            if robust > prev {
                increases += 1;
                if increases >= cfg.max_increases {
                    return Err(Error::NonConvergence(format!(
                        "robust loss rose for {increases} consecutive epochs (epoch {epoch})"
                    )));
                }
            } else {
                increases = 0;
            }
        }
        robust_losses.push(robust);
        uniform_losses.push(weighted(&vec![1.0; n]));
    }
    Ok(RobustFit {
        classifier: c,
        weights: w,
        robust_losses,
        uniform_losses,
        penalty,
    })
}
