//! Importance weights between the source and target domains, the weighted
//! second classifier, divergence diagnostics and worst-case (minimax) weights.

mod classifier;
mod minimax;

pub use classifier::{
    continue_classifier_c, train_classifier_c, train_classifier_c2, C2Fit, ClassifierConfig,
    ClassifierRole, DomainClassifier, FitHistory,
};
pub use minimax::{
    minimax_weights, project_weights, robust_bias_aware_fit, MinimaxConfig, MinimaxStep, RobustFit,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp shared with the cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Feature rows from one domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DomainBatch {
    pub features: Vec<Vec<f64>>,
    pub ids: Vec<String>,
}

impl DomainBatch {
    /// Checks that rows share one dimension and are finite.
    pub fn new(features: Vec<Vec<f64>>, ids: Vec<String>) -> Result<Self> {
        if features.len() != ids.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} ids",
                features.len(),
                ids.len()
            )));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if let Some(bad) = features.iter().position(|r| r.len() != d) {
                return Err(Error::Shape(format!(
                    "row {bad} has {} features, expected {d}",
                    features[bad].len()
                )));
            }
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "domain batch".into(),
            });
        }
        Ok(Self { features, ids })
    }

    /// Rows named by their index.
    pub fn from_rows(features: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..features.len()).map(|i| i.to_string()).collect();
        Self::new(features, ids)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Iw,
    Minimax,
    Uniform,
}

/// How classifier outputs become importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightEstimator {
    /// `(1 - C) / mean_S(1 - C)`.
    #[default]
    Normalized,
    /// `(1 - C) / C`, the density ratio under a Bayes classifier, then
    /// normalized to mean one.
    Ratio,
}

/// Per-source-sample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub mode: WeightMode,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            mode: WeightMode::Uniform,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub(crate) fn check_iw(&self) -> Result<()> {
        if (self.mean() - 1.0).abs() > 1e-6 || self.values.iter().any(|&w| w < 0.0) {
            return Err(Error::DegenerateWeights(format!(
                "importance weights must be nonnegative with mean 1, mean is {}",
                self.mean()
            )));
        }
        Ok(())
    }

    /// Writes one JSON object per sample: `{sample_id, omega, mode}`.
    pub fn dump(&self, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Rec<'a> {
            sample_id: &'a str,
            omega: f64,
            mode: WeightMode,
        }
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (id, &omega) in ids.iter().zip(&self.values) {
            let line = serde_json::to_string(&Rec {
                sample_id: id,
                omega,
                mode: self.mode,
            })
            .expect("serializable");
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Importance weights from source-domain probabilities `C(x_i)`.
pub fn importance_weights_from_probs(probs: &[f64], estimator: WeightEstimator) -> Result<WeightVector> {
    if probs.is_empty() {
        return Err(Error::DegenerateWeights("no source samples".into()));
    }
    let clamped = probs.iter().map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
    let raw: Vec<f64> = match estimator {
        WeightEstimator::Normalized => clamped.map(|c| 1.0 - c).collect(),
        WeightEstimator::Ratio => clamped.map(|c| (1.0 - c) / c).collect(),
    };
    if probs.iter().all(|&p| p >= 1.0 - PROB_CLAMP) {
        return Err(Error::DegenerateWeights(
            "classifier assigns every source sample to the source domain".into(),
        ));
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(WeightVector {
        values: raw.iter().map(|r| r / mean).collect(),
        mode: WeightMode::Iw,
    })
}

pub fn importance_weights(c: &DomainClassifier, source: &DomainBatch) -> Result<WeightVector> {
    importance_weights_from_probs(&c.predict(&source.features)?, WeightEstimator::Normalized)
}

/// Mean log-weight over target samples, with the weight normalizer taken
/// from the source. Returns the term and the number of weights floored at 1e-7.
pub fn weight_kld_term(target_probs: &[f64], source_probs: &[f64]) -> Result<(f64, usize)> {
    if target_probs.is_empty() || source_probs.is_empty() {
        return Err(Error::DegenerateInput(
            "log-weight term needs source and target samples".into(),
        ));
    }
    let clamp = |p: &f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let norm = source_probs.iter().map(|p| 1.0 - clamp(p)).sum::<f64>() / source_probs.len() as f64;
    let mut floored = 0;
    let total: f64 = target_probs
        .iter()
        .map(|p| {
            let w = (1.0 - clamp(p)) / norm;
            if w <= PROB_CLAMP {
                floored += 1;
                PROB_CLAMP.ln()
            } else {
                w.ln()
            }
        })
        .sum();
    if floored > 0 {
        log::warn!("{floored} target weights floored at {PROB_CLAMP}");
    }
    Ok((total / target_probs.len() as f64, floored))
}

/// Inputs to the second-order Rényi divergence `D2(p || q)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// Probabilities over a shared finite support.
    Discrete(Vec<f64>),
    /// Diagonal Gaussian given by per-dimension means and variances.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
}

/// Second-order Rényi divergence in nats.
pub fn renyi2_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    match (p, q) {
        (Distribution::Discrete(p), Distribution::Discrete(q)) => {
            if p.len() != q.len() {
                return Err(Error::Shape(format!(
                    "supports differ: {} vs {}",
                    p.len(),
                    q.len()
                )));
            }
            for (name, d) in [("p", p), ("q", q)] {
                let total: f64 = d.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Domain(format!("{name} sums to {total}, not 1")));
                }
            }
            // Written as sum p (p/q) over sum p so that p == q gives exactly 0.
            let mut s = 0.0;
            for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
                if pi < 0.0 || qi < 0.0 {
                    return Err(Error::Domain(format!("negative probability at {i}")));
                }
                if pi > 0.0 {
                    if qi == 0.0 {
                        return Err(Error::InfiniteDivergence(format!(
                            "q vanishes at support point {i} where p = {pi}"
                        )));
                    }
                    s += pi * (pi / qi);
                }
            }
            Ok(s.ln() - p.iter().sum::<f64>().ln())
        }
        (
            Distribution::Gaussian { mean: mp, var: vp },
            Distribution::Gaussian { mean: mq, var: vq },
        ) => {
            let d = mp.len();
            if [vp.len(), mq.len(), vq.len()].iter().any(|&l| l != d) {
                return Err(Error::Shape("Gaussian parameter lengths differ".into()));
            }
            let mut total = 0.0;
            for i in 0..d {
                if vp[i] <= 0.0 || vq[i] <= 0.0 {
                    return Err(Error::Domain(format!("non-positive variance in dim {i}")));
                }
                let mixed = 2.0 * vq[i] - vp[i];
                if mixed <= 0.0 {
                    return Err(Error::InfiniteDivergence(format!(
                        "dim {i}: variance of p is at least twice that of q"
                    )));
                }
                let dm = mp[i] - mq[i];
                total += dm * dm / mixed - 0.5 * (mixed * vp[i] / (vq[i] * vq[i])).ln();
            }
            Ok(total)
        }
        _ => Err(Error::Domain(
            "divergence needs two distributions of the same kind".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub d2: f64,
    pub n: f64,
    pub h: f64,
    pub delta: f64,
}

/// `D2^(4/5) * ((h/n) ln(n e / h) + (1/n) ln(4 / delta))^(8/3)`.
pub fn generalization_bound(b: &BoundInputs) -> Result<f64> {
    if !(b.n >= 1.0 && b.h >= 1.0 && b.delta > 0.0 && b.delta <= 1.0 && b.d2 >= 0.0) {
        return Err(Error::Domain(format!(
            "need n >= 1, h >= 1, 0 < delta <= 1, d2 >= 0; got {b:?}"
        )));
    }
    if b.h > b.n * std::f64::consts::E {
        return Err(Error::Domain(format!(
            "h = {} exceeds n e = {}, the log term would be negative",
            b.h,
            b.n * std::f64::consts::E
        )));
    }
    let complexity = (b.h / b.n) * (b.n * std::f64::consts::E / b.h).ln() + (4.0 / b.delta).ln() / b.n;
    Ok(b.d2.powf(0.8) * complexity.powf(8.0 / 3.0))
}
