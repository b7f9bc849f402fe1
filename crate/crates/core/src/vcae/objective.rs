use super::TrainingConfig;
use crate::domain::WeightVector;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Latent codes of one batch, one row per block.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Vec<Vec<f64>>,
}

impl LatentBatch {
    pub fn new(z: Vec<Vec<f64>>) -> Result<Self> {
        let d = z.first().map_or(0, Vec::len);
        if z.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("latent rows differ in length".into()));
        }
        if z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "latent".into() });
        }
        Ok(Self { z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.z.first().map_or(0, Vec::len);
        let mut m = vec![0.0; d];
        for r in &self.z {
            m.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        let n = self.z.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Sum over dimensions of the population variance across the batch.
    pub fn summed_variance(&self) -> f64 {
        let m = self.mean();
        let n = self.z.len().max(1) as f64;
        self.z
            .iter()
            .map(|r| r.iter().zip(&m).map(|(v, mu)| (v - mu).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n
    }
}

/// Value of each term of the autoencoder objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `mean_i w_i ||recon_i - target_i||^2 / 2`, the unit-variance Gaussian
    /// negative log-likelihood without its constant.
    pub reconstruction: f64,
    /// `lambda |summed_variance - v|`.
    pub variance_penalty: f64,
    /// `reg_coefficient * sum ||W||^2`.
    pub l2_penalty: f64,
    pub summed_variance: f64,
    pub total: f64,
}

/// The weighted autoencoder loss evaluated directly in `f64`.
///
/// `weight_sum_squares` is the squared norm of the regularized weights.
pub fn vcae_objective(
    recon: &[Vec<f64>],
    target: &[Vec<f64>],
    latents: &LatentBatch,
    weight_sum_squares: f64,
    cfg: &TrainingConfig,
    weights: &WeightVector,
) -> Result<ObjectiveTerms> {
    let n = recon.len();
    if n == 0 || target.len() != n || latents.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "{n} reconstructions, {} targets, {} latents, {} weights",
            target.len(),
            latents.len(),
            weights.len()
        )));
    }
    let mut acc = 0.0;
    for ((r, t), w) in recon.iter().zip(target).zip(&weights.values) {
        if r.len() != t.len() || r.is_empty() {
            return Err(Error::Shape("reconstruction and target lengths differ".into()));
        }
        let sse = r.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        acc += w * 0.5 * sse;
    }
    let reconstruction = acc / n as f64;
    let summed_variance = latents.summed_variance();
    let variance_penalty = cfg.lambda * (summed_variance - cfg.target_variance).abs();
    let l2_penalty = cfg.reg_coefficient * weight_sum_squares;
    Ok(ObjectiveTerms {
        reconstruction,
        variance_penalty,
        l2_penalty,
        summed_variance,
        total: reconstruction + variance_penalty + l2_penalty,
    })
}

pub(crate) fn objective_graph<T: Real>(
    g: &mut Graph<T>,
    recon: Var,
    target: &Tensor<T>,
    z: Var,
    regularized: &[Var],
    weights: &[f64],
    cfg: &TrainingConfig,
) -> Result<Var> {
    let mse = g.weighted_mse(recon, target, weights)?;
    let per_block = target.shape().last().copied().unwrap_or(1) as f64;
    let reconstruction = g.scale(mse, 0.5 * per_block)?;
    let summed_variance = g.variance_sum(z)?;
    let gap = g.abs_dev(summed_variance, cfg.target_variance)?;
    let variance = g.scale(gap, cfg.lambda)?;
    let l2 = g.l2_penalty(regularized, cfg.reg_coefficient)?;
    let total = g.add(reconstruction, variance)?;
    g.add(total, l2)
}

/// Rescales latents about their batch mean so the summed variance equals `v`.
/// Returns the rescaled batch and the scale factor `sqrt(v / summed_variance)`.
pub fn normalize_latent(latents: &LatentBatch, v: f64) -> Result<(LatentBatch, f64)> {
    if latents.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "latent normalization needs at least 2 rows, got {}",
            latents.len()
        )));
    }
    if !(v > 0.0) {
        return Err(Error::Config(format!("target variance must be positive, got {v}")));
    }
    let sv = latents.summed_variance();
    if !(sv > 0.0) {
        return Err(Error::DegenerateInput("latent batch has zero variance".into()));
    }
    let s = (v / sv).sqrt();
    let m = latents.mean();
    let z = latents
        .z
        .iter()
        .map(|r| r.iter().zip(&m).map(|(x, mu)| mu + s * (x - mu)).collect())
        .collect();
    Ok((LatentBatch { z }, s))
}

/// True when the last `patience` validation losses all fail to improve on
/// the best loss recorded before them.
pub fn detect_overfit(val_losses: &[f64], patience: usize) -> bool {
    if patience == 0 || val_losses.len() <= patience {
        return false;
    }
    let split = val_losses.len() - patience;
    let best = val_losses[..split].iter().copied().fold(f64::INFINITY, f64::min);
    val_losses[split..].iter().all(|&l| !(l < best))
}
