//! Variance-constrained waveform autoencoder: layout, objective, training
//! under baseline, importance-weighted and minimax sample weights, and
//! block-wise enhancement.

mod arch;
mod model;
mod objective;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use arch::{ConvSpec, VcaeArchitecture, DEFAULT_INPUT_RMS};
pub use model::{loss_graph, TrainingMeta, VcaeModel};
pub use objective::{detect_overfit, normalize_latent, vcae_objective, LatentBatch, ObjectiveTerms};
pub use train::{
    block_loss, load_target_features, train, train_on_blocks, EpochLog, SourceBlocks, TrainOutcome, CHECKPOINT_FILE,
    LOG_FILE, WEIGHTS_FILE,
};

use crate::domain::{ClassifierConfig, MinimaxConfig, WeightEstimator};
use crate::error::{Error, Result};

/// How source blocks are weighted during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Every block has weight 1; no classifiers.
    #[default]
    Baseline,
    /// Classifier-estimated density ratios.
    Iw,
    /// Worst-case weights from projected ascent on per-block losses.
    Minimax,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Iw => "iw",
            Method::Minimax => "minimax",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "iw" => Ok(Method::Iw),
            "minimax" => Ok(Method::Minimax),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected baseline, iw or minimax)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Weight of the summed-variance penalty.
    pub lambda: f64,
    /// Desired summed latent variance.
    pub target_variance: f64,
    /// L2 coefficient on kernels and dense matrices.
    pub reg_coefficient: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub method: Method,
    /// Gradient reversal strength for the shared classifier embedding;
    /// 0 freezes the embedding during C2 training.
    pub adversarial_beta: f64,
    /// Non-improving validation epochs before the latent is normalized.
    pub patience: usize,
    /// Divides every convolution's filter count.
    pub width_divisor: usize,
    /// Fraction of source utterances held out for validation.
    pub validation_fraction: f64,
    pub weight_estimator: WeightEstimator,
    pub classifier: ClassifierConfig,
    pub minimax: MinimaxConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            target_variance: 330.0,
            reg_coefficient: 1e-6,
            epochs: 30,
            batch_size: 512,
            learning_rate: 1e-3,
            seed: 0,
            method: Method::Baseline,
            adversarial_beta: 1.0,
            patience: 3,
            width_divisor: 1,
            validation_fraction: 0.1,
            weight_estimator: WeightEstimator::default(),
            classifier: ClassifierConfig::default(),
            minimax: MinimaxConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.target_variance > 0.0) {
            return bad("target_variance must be > 0");
        }
        if !(self.reg_coefficient >= 0.0) {
            return bad("reg_coefficient must be >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.adversarial_beta >= 0.0) {
            return bad("adversarial_beta must be >= 0");
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be >= 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if self.method == Method::Minimax {
            self.minimax.validate()?;
        }
        Ok(())
    }

    pub fn architecture(&self) -> VcaeArchitecture {
        VcaeArchitecture::with_width_divisor(self.width_divisor)
    }
}
