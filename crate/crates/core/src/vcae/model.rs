use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Method, VcaeArchitecture};
use crate::audio::{frame_blocks, AudioClip, PROCESSING_RATE};
use crate::error::{Error, Result};
use crate::tensor::container::{self, Record};
use crate::tensor::{glorot_uniform, Graph, ParamStore, Real, Tensor, Var};

/// Blocks per forward pass during inference.
const INFERENCE_CHUNK: usize = 64;

/// Provenance of a trained model, stored with its checkpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub method: Option<Method>,
    pub seed: u64,
    pub epochs_run: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    /// Set once the latent has been rescaled to the target variance.
    pub latent_normalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    architecture: VcaeArchitecture,
    training: TrainingMeta,
}

pub(crate) fn enc_kernel(i: usize) -> String {
    format!("enc.{i}.k")
}
pub(crate) fn enc_bias(i: usize) -> String {
    format!("enc.{i}.b")
}
pub(crate) const ENC_DENSE_W: &str = "enc.dense.w";
pub(crate) const ENC_DENSE_B: &str = "enc.dense.b";
const DEC_DENSE_W: &str = "dec.dense.w";
const DEC_DENSE_B: &str = "dec.dense.b";
fn dec_kernel(i: usize) -> String {
    format!("dec.{i}.k")
}
fn dec_bias(i: usize) -> String {
    format!("dec.{i}.b")
}
const OUT_K: &str = "dec.out.k";
const OUT_B: &str = "dec.out.b";

/// Encoder/decoder pair with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VcaeModel {
    pub architecture: VcaeArchitecture,
    pub params: ParamStore<f32>,
    pub meta: TrainingMeta,
}

/// Builds the encoder on `x[n x 1 x input_len]`; returns `z[n x latent_dim]`.
pub(crate) fn encode_graph<T: Real>(
    arch: &VcaeArchitecture,
    params: &ParamStore<T>,
    g: &mut Graph<T>,
    x: Var,
) -> Result<Var> {
    let n = g.shape(x)[0];
    let mut h = x;
    for (i, c) in arch.encoder.iter().enumerate() {
        let k = g.param(params, &enc_kernel(i))?;
        let b = g.param(params, &enc_bias(i))?;
        h = g.conv1d(h, k, Some(b), c.stride)?;
        if c.activation {
            h = g.leaky_relu(h, arch.leaky_alpha)?;
        }
    }
    let h = g.reshape(h, vec![n, arch.encoder_flat_dim()])?;
    let w = g.param(params, ENC_DENSE_W)?;
    let b = g.param(params, ENC_DENSE_B)?;
    g.dense(h, w, b)
}

/// Builds the decoder on `z[n x latent_dim]`; returns `y[n x output_len]`.
pub(crate) fn decode_graph<T: Real>(
    arch: &VcaeArchitecture,
    params: &ParamStore<T>,
    g: &mut Graph<T>,
    z: Var,
) -> Result<Var> {
    let n = g.shape(z)[0];
    let w = g.param(params, DEC_DENSE_W)?;
    let b = g.param(params, DEC_DENSE_B)?;
    let h = g.dense(z, w, b)?;
    let mut h = g.reshape(h, vec![n, arch.decoder_seed_channels(), arch.decoder_seed_len])?;
    for (i, c) in arch.decoder.iter().enumerate() {
        if c.upsample {
            h = g.upsample2(h)?;
        }
        let k = g.param(params, &dec_kernel(i))?;
        let b = g.param(params, &dec_bias(i))?;
        h = g.conv1d(h, k, Some(b), c.stride)?;
        if c.activation {
            h = g.leaky_relu(h, arch.leaky_alpha)?;
        }
    }
    let k = g.param(params, OUT_K)?;
    let b = g.param(params, OUT_B)?;
    let y = g.conv1d(h, k, Some(b), 1)?;
    let y = g.crop(y, arch.crop_start(), arch.output_len)?;
    g.reshape(y, vec![n, arch.output_len])
}

/// Names of the weight tensors (kernels and dense matrices, not biases).
pub(crate) fn weight_names<T: Real>(params: &ParamStore<T>) -> Vec<String> {
    params
        .names()
        .filter(|n| n.ends_with(".k") || n.ends_with(".w"))
        .map(str::to_string)
        .collect()
}

/// Stacks equal-length rows into `[n x 1 x len]`.
pub(crate) fn stack_blocks<T: Real, R: AsRef<[f64]>>(rows: &[R], len: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(rows.len() * len);
    for r in rows {
        let r = r.as_ref();
        if r.len() != len {
            return Err(Error::Shape(format!("expected a block of {len} samples, got {}", r.len())));
        }
        data.extend(r.iter().map(|&v| T::c(v)));
    }
    Tensor::new(vec![rows.len(), 1, len], data)
}

fn rows_of<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let width = t.shape()[1..].iter().product::<usize>().max(1);
    t.data()
        .chunks(width)
        .map(|c| c.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}

impl VcaeModel {
    /// Glorot-initialized weights and zero biases.
    pub fn new(architecture: VcaeArchitecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let a = &architecture;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut cin = 1;
        for (i, c) in a.encoder.iter().enumerate() {
            let (fi, fo) = (cin * c.kernel, c.filters * c.kernel);
            params.insert(enc_kernel(i), glorot_uniform(&[c.filters, cin, c.kernel], fi, fo, &mut rng))?;
            params.insert(enc_bias(i), Tensor::zeros(&[c.filters]))?;
            cin = c.filters;
        }
        let flat = a.encoder_flat_dim();
        params.insert(ENC_DENSE_W, glorot_uniform(&[flat, a.latent_dim], flat, a.latent_dim, &mut rng))?;
        params.insert(ENC_DENSE_B, Tensor::zeros(&[a.latent_dim]))?;
        let seed_dim = a.decoder_seed_channels() * a.decoder_seed_len;
        params.insert(DEC_DENSE_W, glorot_uniform(&[a.latent_dim, seed_dim], a.latent_dim, seed_dim, &mut rng))?;
        params.insert(DEC_DENSE_B, Tensor::zeros(&[seed_dim]))?;
        let mut cin = a.decoder_seed_channels();
        for (i, c) in a.decoder.iter().enumerate() {
            let (fi, fo) = (cin * c.kernel, c.filters * c.kernel);
            params.insert(dec_kernel(i), glorot_uniform(&[c.filters, cin, c.kernel], fi, fo, &mut rng))?;
            params.insert(dec_bias(i), Tensor::zeros(&[c.filters]))?;
            cin = c.filters;
        }
        let k = a.output_kernel;
        params.insert(OUT_K, glorot_uniform(&[1, cin, k], cin * k, k, &mut rng))?;
        params.insert(OUT_B, Tensor::zeros(&[1]))?;
        Ok(Self {
            architecture,
            params,
            meta: TrainingMeta::default(),
        })
    }

    /// Latent vectors of the given blocks.
    pub fn encode_batch<R: AsRef<[f64]>>(&self, blocks: &[R]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(blocks.len());
        for chunk in blocks.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::<f32>::new();
            let x = g.input(stack_blocks(chunk, self.architecture.input_len)?)?;
            let z = encode_graph(&self.architecture, &self.params, &mut g, x)?;
            out.extend(rows_of(g.value(z)));
        }
        Ok(out)
    }

    pub fn encode(&self, block: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[block])?.remove(0))
    }

    pub fn decode_batch<R: AsRef<[f64]>>(&self, latents: &[R]) -> Result<Vec<Vec<f64>>> {
        let d = self.architecture.latent_dim;
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFERENCE_CHUNK) {
            let mut data = Vec::with_capacity(chunk.len() * d);
            for z in chunk {
                let z = z.as_ref();
                if z.len() != d {
                    return Err(Error::Shape(format!("expected a {d}-dim latent, got {}", z.len())));
                }
                data.extend(z.iter().map(|&v| v as f32));
            }
            let mut g = Graph::<f32>::new();
            let z = g.input(Tensor::new(vec![chunk.len(), d], data)?)?;
            let y = decode_graph(&self.architecture, &self.params, &mut g, z)?;
            out.extend(rows_of(g.value(y)));
        }
        Ok(out)
    }

    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&[latent])?.remove(0))
    }

    /// Center-region estimates for each block, with their latents.
    pub fn forward_batch<R: AsRef<[f64]>>(&self, blocks: &[R]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut outs = Vec::with_capacity(blocks.len());
        let mut latents = Vec::with_capacity(blocks.len());
        for chunk in blocks.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::<f32>::new();
            let x = g.input(stack_blocks(chunk, self.architecture.input_len)?)?;
            let z = encode_graph(&self.architecture, &self.params, &mut g, x)?;
            let y = decode_graph(&self.architecture, &self.params, &mut g, z)?;
            latents.extend(rows_of(g.value(z)));
            outs.extend(rows_of(g.value(y)));
        }
        Ok((outs, latents))
    }

    /// Enhances a 16 kHz clip block by block; the output has the input's length.
    pub fn enhance(&self, noisy: &AudioClip) -> Result<AudioClip> {
        if noisy.sample_rate != PROCESSING_RATE {
            return Err(Error::Config(format!(
                "enhancement runs at {PROCESSING_RATE} Hz, got {} Hz",
                noisy.sample_rate
            )));
        }
        let a = &self.architecture;
        let gain = a.level_gain(noisy);
        let scaled = AudioClip::new(noisy.samples.iter().map(|v| v * gain).collect(), noisy.sample_rate);
        let stream = frame_blocks(&scaled, a.input_len, a.output_len)?;
        let (centers, _) = self.forward_batch(&stream.blocks)?;
        let samples = stream.reassemble(&centers)?.into_iter().map(|v| v / gain).collect();
        Ok(AudioClip::new(samples, noisy.sample_rate))
    }

    pub fn to_records(&self) -> Result<Vec<Record>> {
        let meta = Meta {
            architecture: self.architecture.clone(),
            training: self.meta.clone(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Config(format!("serializing metadata: {e}")))?;
        let mut records = vec![Record::bytes("meta", json)];
        records.extend(container::param_records(&self.params));
        Ok(records)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(&self.to_records()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, blobs) = container::split_records(container::decode(bytes)?)?;
        let json = blobs
            .iter()
            .find(|(n, _)| n == "meta")
            .map(|(_, b)| b)
            .ok_or_else(|| Error::Integrity("checkpoint has no metadata record".into()))?;
        let meta: Meta =
            serde_json::from_slice(json).map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        let reference = Self::new(meta.architecture.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Integrity(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Integrity(format!("missing parameter {name}"))),
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Integrity("checkpoint has unexpected parameters".into()));
        }
        Ok(Self {
            architecture: meta.architecture,
            params,
            meta: meta.training,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write(path, &self.to_records()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Total autoencoder loss on one batch, built on `g` from `params`.
///
/// Exposed so that gradient checks can run the full objective in `f64`.
pub fn loss_graph<T: Real>(
    arch: &VcaeArchitecture,
    params: &ParamStore<T>,
    g: &mut Graph<T>,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
    cfg: &super::TrainingConfig,
) -> Result<Var> {
    batch_objective(arch, params, g, inputs, targets, weights, cfg)
}

pub(crate) fn batch_objective<T: Real, R: AsRef<[f64]>>(
    arch: &VcaeArchitecture,
    params: &ParamStore<T>,
    g: &mut Graph<T>,
    inputs: &[R],
    targets: &[R],
    weights: &[f64],
    cfg: &super::TrainingConfig,
) -> Result<Var> {
    let x = g.input(stack_blocks(inputs, arch.input_len)?)?;
    let z = encode_graph(arch, params, g, x)?;
    let y = decode_graph(arch, params, g, z)?;
    let target = stack_blocks::<T, R>(targets, arch.output_len)?.reshape(vec![targets.len(), arch.output_len])?;
    let regularized = weight_names(params)
        .iter()
        .map(|n| g.param(params, n))
        .collect::<Result<Vec<_>>>()?;
    super::objective::objective_graph(g, y, &target, z, &regularized, weights, cfg)
}

impl VcaeModel {
    /// Folds `z -> mean + s (z - mean)` into the encoder's output layer.
    pub(crate) fn rescale_latent(&mut self, mean: &[f64], s: f64) -> Result<()> {
        let w = self
            .params
            .get_mut(ENC_DENSE_W)
            .ok_or_else(|| Error::Config("missing encoder output weights".into()))?;
        w.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * s) as f32);
        let b = self
            .params
            .get_mut(ENC_DENSE_B)
            .ok_or_else(|| Error::Config("missing encoder output bias".into()))?;
        if b.len() != mean.len() {
            return Err(Error::Shape(format!("{} latent means for {} latent dims", mean.len(), b.len())));
        }
        for (v, m) in b.data_mut().iter_mut().zip(mean) {
            *v = (s * *v as f64 + (1.0 - s) * m) as f32;
        }
        Ok(())
    }

    /// Sum of squared entries of the L2-regularized tensors.
    pub fn weight_sum_squares(&self) -> f64 {
        weight_names(&self.params)
            .iter()
            .filter_map(|n| self.params.get(n))
            .map(|t| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
            .sum()
    }
}
