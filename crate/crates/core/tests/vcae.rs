//! Autoencoder gradients, framing, persistence and the variance constraint.

use daptain::audio::AudioClip;
use daptain::error::Error;
use daptain::tensor::{Graph, ParamStore, Tensor};
use daptain::vcae::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Narrow network with a 12-dim latent; block sizes stay at 1000 -> 600.
fn tiny_arch() -> VcaeArchitecture {
    let mut a = VcaeArchitecture::with_width_divisor(64);
    a.latent_dim = 12;
    a
}

fn blocks(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect()
}

fn grads(
    arch: &VcaeArchitecture,
    params: &ParamStore<f64>,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    w: &[f64],
    cfg: &TrainingConfig,
) -> (f64, ParamStore<f64>) {
    let mut g = Graph::new();
    let l = loss_graph(arch, params, &mut g, inputs, targets, w, cfg).unwrap();
    g.backward(l).unwrap();
    let mut s = params.clone();
    s.zero_grads();
    g.accumulate_param_grads(&mut s).unwrap();
    (g.value(l).item(), s)
}

#[test]
fn full_objective_matches_finite_differences() {
    let arch = tiny_arch();
    let model = VcaeModel::new(arch.clone(), 3).unwrap();
    let mut params: ParamStore<f64> = model.params.cast();
    // Spread pre-activations away from the leaky-ReLU kink so that central
    // differences do not straddle it.
    let mut brng = ChaCha8Rng::seed_from_u64(17);
    let biases: Vec<String> = params.names().filter(|n| n.ends_with(".b")).map(String::from).collect();
    for name in &biases {
        params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = brng.gen_range(-0.5..0.5));
    }
    let inputs = blocks(4, 1000, 1);
    // Quiet targets keep the summed-square loss small, so rounding in the
    // central differences stays below the tolerance.
    let targets: Vec<Vec<f64>> = blocks(4, 600, 2).into_iter().map(|r| r.iter().map(|v| 0.1 * v).collect()).collect();
    let w = [1.0, 0.5, 2.0, 0.25];
    // v far from the initial summed variance keeps the |.| term smooth
    let cfg = TrainingConfig {
        lambda: 0.01,
        target_variance: 50.0,
        reg_coefficient: 1e-3,
        ..Default::default()
    };
    let (l0, analytic) = grads(&arch, &params, &inputs, &targets, &w, &cfg);
    let loss = |p: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = loss_graph(&arch, p, &mut g, &inputs, &targets, &w, &cfg).unwrap();
        g.value(l).item()
    };
    let h = 1e-7;
    // Central differences cannot resolve gradients below the rounding level of the loss.
    let floor = (1e-12 * l0.abs() / h).max(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let len = params.get(name).unwrap().len();
        for _ in 0..4 {
            let i = rng.gen_range(0..len);
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.grad(name).unwrap().data()[i];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            assert!(err <= 1e-3, "{name}[{i}]: analytic {a:e} numeric {num:e}");
            worst = worst.max(err);
        }
    }
    assert!(worst <= 1e-3);
}

#[test]
fn zero_weight_blocks_contribute_nothing() {
    let arch = tiny_arch();
    let params: ParamStore<f64> = VcaeModel::new(arch.clone(), 5).unwrap().params.cast();
    let inputs = blocks(4, 1000, 11);
    let targets = blocks(4, 600, 12);
    let mut altered = targets.clone();
    altered[2] = vec![0.9; 600];
    altered[3] = vec![-0.9; 600];
    let w = [1.0, 1.0, 0.0, 0.0];
    let cfg = TrainingConfig::default();
    let (la, ga) = grads(&arch, &params, &inputs, &targets, &w, &cfg);
    let (lb, gb) = grads(&arch, &params, &inputs, &altered, &w, &cfg);
    assert_eq!(la, lb);
    for name in params.names() {
        assert_eq!(ga.grad(name), gb.grad(name), "{name}");
    }

    // With only the reconstruction term, all-zero weights give zero gradients.
    let cfg = TrainingConfig {
        lambda: 0.0,
        reg_coefficient: 0.0,
        ..Default::default()
    };
    let (l, g) = grads(&arch, &params, &inputs, &targets, &[0.0; 4], &cfg);
    assert_eq!(l, 0.0);
    for name in params.names() {
        assert!(g.grad(name).unwrap().data().iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn variance_gradient_flips_across_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<f64> = (0..6 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut store = ParamStore::<f64>::new();
    store.insert("z", Tensor::new(vec![6, 5], z).unwrap()).unwrap();
    let summed = {
        let rows: Vec<Vec<f64>> = store.get("z").unwrap().data().chunks(5).map(<[f64]>::to_vec).collect();
        LatentBatch::new(rows).unwrap().summed_variance()
    };
    let grad_at = |v: f64| {
        let mut g = Graph::new();
        let z = g.param(&store, "z").unwrap();
        let s = g.variance_sum(z).unwrap();
        let l = g.abs_dev(s, v).unwrap();
        g.backward(l).unwrap();
        g.grad(z).unwrap().data().to_vec()
    };
    let above = grad_at(summed - 0.1);
    let below = grad_at(summed + 0.1);
    for (a, b) in above.iter().zip(&below) {
        assert_eq!(*a, -*b);
    }
    assert!(above.iter().any(|&v| v != 0.0));
}

#[test]
fn encode_decode_shapes() {
    let arch = tiny_arch();
    let model = VcaeModel::new(arch.clone(), 1).unwrap();
    let z = model.encode(&vec![0.0; 1000]).unwrap();
    assert_eq!(z.len(), 12);
    // zero input and zero biases give a zero latent and a zero output
    assert!(z.iter().all(|&v| v == 0.0));
    assert!(model.decode(&z).unwrap().iter().all(|&v| v == 0.0));
    let y = model.decode(&vec![0.3; 12]).unwrap();
    assert_eq!(y.len(), 600);
    assert!(matches!(model.encode(&vec![0.0; 999]), Err(Error::Shape(_))));
    assert!(matches!(model.decode(&vec![0.0; 11]), Err(Error::Shape(_))));
}

#[test]
fn enhance_preserves_length_and_is_deterministic() {
    let model = VcaeModel::new(tiny_arch(), 2).unwrap();
    for len in [600, 601, 32_000] {
        let clip = AudioClip::new(blocks(1, len, len as u64).remove(0), 16_000);
        let a = model.enhance(&clip).unwrap();
        let b = model.enhance(&clip).unwrap();
        assert_eq!(a.len(), len);
        assert_eq!(a.samples, b.samples);
    }
    let clip = AudioClip::new(vec![0.1; 1000], 8_000);
    assert!(matches!(model.enhance(&clip), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = VcaeModel::new(tiny_arch(), 8).unwrap();
    model.meta.method = Some(Method::Iw);
    model.meta.epochs_run = 3;
    model.meta.final_val_loss = Some(0.125);
    let p1 = dir.path().join("a.vcae");
    let p2 = dir.path().join("b.vcae");
    model.save(&p1).unwrap();
    let loaded = VcaeModel::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.meta, model.meta);
    assert_eq!(loaded.architecture, model.architecture);

    let mut bytes = std::fs::read(&p1).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(matches!(VcaeModel::from_bytes(&bytes), Err(Error::Integrity(_))));
}

fn toy_blocks(n: usize, seed: u64) -> SourceBlocks {
    let inputs = blocks(n, 1000, seed);
    let targets = inputs.iter().map(|b| b[200..800].iter().map(|v| 0.5 * v).collect()).collect();
    SourceBlocks {
        ids: (0..n).map(|i| format!("u{}#{i}", i % 3)).collect(),
        utterances: (0..n).map(|i| format!("u{}", i % 3)).collect(),
        inputs,
        targets,
        features: Vec::new(),
    }
}

#[test]
fn stalled_validation_triggers_latent_normalization() {
    let train = toy_blocks(12, 21);
    let val = toy_blocks(6, 22);
    let cfg = TrainingConfig {
        width_divisor: 64,
        batch_size: 4,
        epochs: 10,
        // a vanishing step size leaves the validation loss flat
        learning_rate: 1e-12,
        patience: 2,
        seed: 1,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_on_blocks(&train, &val, &[], &cfg, Some(dir.path())).unwrap();
    let last = out.log.last().unwrap();
    assert!(last.normalized);
    // normalization ends training and happens exactly once
    assert!(out.log.len() >= cfg.patience + 2 && out.log.len() < cfg.epochs);
    assert_eq!(out.log.iter().filter(|l| l.normalized).count(), 1);
    assert!(out.model.meta.latent_normalized);
    // the rescaled encoder hits the target variance on the training blocks
    let (_, z) = out.model.forward_batch(&train.inputs).unwrap();
    let s = LatentBatch::new(z).unwrap().summed_variance();
    assert!((s - cfg.target_variance).abs() / cfg.target_variance < 1e-3, "{s}");
    assert!(dir.path().join(CHECKPOINT_FILE).exists());
    assert!(dir.path().join(LOG_FILE).exists());
    assert!(dir.path().join(WEIGHTS_FILE).exists());
    let lines = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(lines.lines().count(), out.log.len());
}

#[test]
fn training_is_deterministic() {
    let train = toy_blocks(8, 31);
    let val = toy_blocks(4, 32);
    let cfg = TrainingConfig {
        width_divisor: 64,
        batch_size: 4,
        epochs: 2,
        seed: 5,
        ..Default::default()
    };
    let a = train_on_blocks(&train, &val, &[], &cfg, None).unwrap();
    let b = train_on_blocks(&train, &val, &[], &cfg, None).unwrap();
    assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
    assert_eq!(a.log, b.log);
}

#[test]
fn invalid_configs_are_rejected() {
    let train = toy_blocks(4, 1);
    for cfg in [
        TrainingConfig { epochs: 0, ..Default::default() },
        TrainingConfig { learning_rate: 0.0, ..Default::default() },
        TrainingConfig { width_divisor: 0, ..Default::default() },
        TrainingConfig { target_variance: -1.0, ..Default::default() },
    ] {
        assert!(matches!(
            train_on_blocks(&train, &train, &[], &cfg, None),
            Err(Error::Config(_))
        ));
    }
    assert!("adam".parse::<Method>().is_err());
    assert_eq!("minimax".parse::<Method>().unwrap(), Method::Minimax);
}
