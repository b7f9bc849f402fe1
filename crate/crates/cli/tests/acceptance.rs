//! Acceptance checks. Each test prints one line,
//! `criterion N: PASS|FAIL <measured> vs <tolerance> (<elapsed> / <budget>)`,
//! and fails when the criterion or its time budget is missed. Run with
//! `--nocapture --test-threads=1` to read the lines in order.

#[path = "../../core/tests/support/metric_fixtures.rs"]
mod metric_fixtures;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use daptain::audio::{AudioClip, Domain, Manifest, MixtureSource, Split};
use daptain::domain::{
    generalization_bound, importance_weights, importance_weights_from_probs, project_weights, renyi2_divergence,
    robust_bias_aware_fit, train_classifier_c, train_classifier_c2, weight_kld_term, BoundInputs, ClassifierConfig,
    ClassifierRole, DomainBatch, DomainClassifier, Distribution, MinimaxConfig, WeightEstimator, WeightMode,
    WeightVector,
};
use daptain::features::{FeatureNormalizer, FEATURE_DIM};
use daptain::metrics::{fwsnrseg, paired_ttest, stoi, FWSNR_MAX_DB, FWSNR_MIN_DB};
use daptain::tensor::{Graph, ParamStore, Tensor, Var};
use daptain::vcae::{
    load_target_features, loss_graph, EpochLog, LatentBatch, Method, SourceBlocks, TrainingConfig, VcaeArchitecture,
    VcaeModel, CHECKPOINT_FILE,
};
use daptain::{Error, Result};
use daptain_cli::{cmd_enhance, cmd_evaluate, cmd_synth, cmd_train, EnhanceInput, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

/// Width divisor of the end-to-end models; a single CPU core cannot train
/// the full-width network within the time budgets.
const WIDTH_DIVISOR: usize = 16;
const BATCH_SIZE: usize = 32;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, measured: &str, tolerance: &str, elapsed: Duration, budget_s: u64) {
    let in_time = elapsed.as_secs_f64() <= budget_s as f64;
    let ok = pass && in_time;
    println!(
        "criterion {n}: {} {measured} vs {tolerance} ({:.1} s / {budget_s} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(pass, "criterion {n}: {measured} vs {tolerance}");
    assert!(in_time, "criterion {n}: {:.1} s over the {budget_s} s budget", elapsed.as_secs_f64());
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- gradients

type Build<'a> = dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> + 'a;

fn loss_at(store: &ParamStore<f64>, build: &Build<'_>) -> f64 {
    let mut g = Graph::new();
    let l = build(&mut g, store).unwrap();
    g.value(l).item()
}

fn analytic(store: &ParamStore<f64>, build: &Build<'_>) -> ParamStore<f64> {
    let mut g = Graph::new();
    let l = build(&mut g, store).unwrap();
    g.backward(l).unwrap();
    let mut s = store.clone();
    s.zero_grads();
    g.accumulate_param_grads(&mut s).unwrap();
    s
}

/// Central difference of `build` at every parameter entry.
fn numeric(store: &ParamStore<f64>, build: &Build<'_>, h: f64) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    for name in store.names().map(String::from).collect::<Vec<_>>() {
        let len = store.get(&name).unwrap().len();
        let grads = (0..len)
            .map(|i| {
                let mut plus = store.clone();
                plus.get_mut(&name).unwrap().data_mut()[i] += h;
                let mut minus = store.clone();
                minus.get_mut(&name).unwrap().data_mut()[i] -= h;
                (loss_at(&plus, build) - loss_at(&minus, build)) / (2.0 * h)
            })
            .collect();
        out.insert(name, grads);
    }
    out
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst relative error of `build`'s analytic gradient, optionally against
/// `sign * numeric(reference)`.
fn fd_error(store: &ParamStore<f64>, build: &Build<'_>, reference: Option<(&Build<'_>, f64)>) -> f64 {
    let a = analytic(store, build);
    let (num, sign) = match reference {
        Some((r, s)) => (numeric(store, r, 1e-5), s),
        None => (numeric(store, build, 1e-5), 1.0),
    };
    let mut worst: f64 = 0.0;
    for (name, n) in &num {
        for (x, y) in a.grad(name).unwrap().data().iter().zip(n) {
            worst = worst.max(rel_err(*x, sign * y, 1e-7));
        }
    }
    worst
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn store(items: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (k, v) in items {
        s.insert(k, v).unwrap();
    }
    s
}

/// Contracts `y` with fixed random weights so each entry gets its own upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = g.reshape(y, vec![1, n])?;
    let w = g.input(random(&[n, 1], &mut rng))?;
    let b = g.input(Tensor::zeros(&[1]))?;
    let out = g.dense(flat, w, b)?;
    g.reshape(out, vec![])
}

fn op_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = store(vec![
            ("x", random(&[3, 4], &mut rng)),
            ("w", random(&[4, 2], &mut rng)),
            ("b", random(&[2], &mut rng)),
        ]);
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let (x, w, b) = (g.param(s, "x")?, g.param(s, "w")?, g.param(s, "b")?);
            let y = g.dense(x, w, b)?;
            project(g, y, seed)
        };
        out.push(("dense", fd_error(&s, &build, None)));

        for stride in [1, 2] {
            let s = store(vec![
                ("x", random(&[2, 2, 17], &mut rng)),
                ("k", random(&[3, 2, 31], &mut rng)),
                ("b", random(&[3], &mut rng)),
            ]);
            let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let (x, k, b) = (g.param(s, "x")?, g.param(s, "k")?, g.param(s, "b")?);
                let y = g.conv1d(x, k, Some(b), stride)?;
                project(g, y, seed)
            };
            out.push(("conv1d", fd_error(&s, &build, None)));
        }

        let mut x = random(&[2, 3, 4], &mut rng);
        // keep central differences off the leaky-ReLU kink
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.05 {
                *v += 0.1
            }
        });
        let s = store(vec![("x", x)]);
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let a = g.leaky_relu(x, 0.1)?;
            project(g, a, seed)
        };
        out.push(("leaky_relu", fd_error(&s, &build, None)));
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let a = g.sigmoid(x)?;
            project(g, a, seed)
        };
        out.push(("sigmoid", fd_error(&s, &build, None)));
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let a = g.upsample2(x)?;
            let a = g.crop(a, 1, 6)?;
            project(g, a, seed)
        };
        out.push(("upsample2+crop", fd_error(&s, &build, None)));
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let a = g.scale(x, -1.3)?;
            let b = g.reshape(x, vec![2, 3, 4])?;
            let c = g.add(a, b)?;
            let d = g.sum_squares(c)?;
            let e = project(g, c, seed)?;
            g.add(d, e)
        };
        out.push(("scale+add+sum_squares", fd_error(&s, &build, None)));
        // Reversal is the identity forward and flips the gradient backward.
        let beta = 0.7;
        let reversed = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            let a = g.grad_reverse(x, beta)?;
            project(g, a, seed)
        };
        let plain = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, "x")?;
            project(g, x, seed)
        };
        out.push(("grad_reverse", fd_error(&s, &reversed, Some((&plain, -beta)))));

        let mut p = random(&[6], &mut rng);
        p.data_mut().iter_mut().for_each(|v| *v = 0.1 + 0.4 * (*v + 1.0));
        let s = store(vec![
            ("p", p),
            ("z", random(&[5, 3], &mut rng)),
            ("w", random(&[2, 2], &mut rng)),
        ]);
        let target = random(&[5, 3], &mut rng);
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let p = g.param(s, "p")?;
            g.weighted_bce(p, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0], &[0.5, 1.0, 2.0, 0.0, 1.0, 1.5])
        };
        out.push(("weighted_bce", fd_error(&s, &build, None)));
        let t = target.clone();
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let z = g.param(s, "z")?;
            g.weighted_mse(z, &t, &[1.0, 2.0, 0.5, 0.0, 1.0])
        };
        out.push(("weighted_mse", fd_error(&s, &build, None)));
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let z = g.param(s, "z")?;
            let v = g.variance_sum(z)?;
            g.abs_dev(v, 0.1)
        };
        out.push(("variance_sum+abs_dev", fd_error(&s, &build, None)));
        let build = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let (z, w) = (g.param(s, "z")?, g.param(s, "w")?);
            g.l2_penalty(&[z, w], 1e-2)
        };
        out.push(("l2_penalty", fd_error(&s, &build, None)));
    }
    out
}

/// Full autoencoder objective on a narrow network, sampled entries per tensor.
fn objective_error() -> f64 {
    let arch = VcaeArchitecture {
        latent_dim: 12,
        ..VcaeArchitecture::with_width_divisor(64)
    };
    let mut params: ParamStore<f64> = VcaeModel::new(arch.clone(), 3).unwrap().params.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let biases: Vec<String> = params.names().filter(|n| n.ends_with(".b")).map(String::from).collect();
    for name in &biases {
        // spread pre-activations away from the leaky-ReLU kink
        params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let blocks = |n: usize, len: usize, amp: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..len).map(|_| amp * rng.gen_range(-0.5..0.5)).collect()).collect()
    };
    let inputs = blocks(4, 1000, 1.0, &mut rng);
    let targets = blocks(4, 600, 0.1, &mut rng);
    let w = [1.0, 0.5, 2.0, 0.25];
    let cfg = TrainingConfig {
        lambda: 0.01,
        target_variance: 50.0,
        reg_coefficient: 1e-3,
        ..Default::default()
    };
    let build = |g: &mut Graph<f64>, p: &ParamStore<f64>| loss_graph(&arch, p, g, &inputs, &targets, &w, &cfg);
    let l0 = loss_at(&params, &build);
    let a = analytic(&params, &build);
    let h = 1e-7;
    // below this a central difference only measures rounding in the loss
    let floor = (1e-12 * l0.abs() / h).max(1e-6);
    let mut worst: f64 = 0.0;
    for name in params.names().map(String::from).collect::<Vec<_>>() {
        let len = params.get(&name).unwrap().len();
        for _ in 0..4 {
            let i = rng.gen_range(0..len);
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= h;
            let num = (loss_at(&plus, &build) - loss_at(&minus, &build)) / (2.0 * h);
            worst = worst.max(rel_err(a.grad(&name).unwrap().data()[i], num, floor));
        }
    }
    worst
}

#[test]
fn criterion_01_gradient_suite() {
    let _g = serial();
    let t0 = Instant::now();
    let ops = op_errors();
    let (worst_op, op_err) = ops.iter().fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    let e2e = objective_error();
    let pass = op_err <= 1e-4 && e2e <= 1e-3;
    report(
        1,
        pass,
        &format!("ops max rel err {op_err:.2e} ({worst_op}), objective {e2e:.2e}"),
        "1e-4 / 1e-3",
        t0.elapsed(),
        60,
    );
}

// ---------------------------------------------------------------- weights

#[test]
fn criterion_02_weight_normalization() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_mean: f64 = 0.0;
    let mut monotone = true;
    for draw in 0..1000u64 {
        let n = rng.gen_range(2..120);
        let scale = rng.gen_range(0.1..5.0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..FEATURE_DIM).map(|_| scale * normal(&mut rng)).collect())
            .collect();
        let batch = DomainBatch::from_rows(rows).unwrap();
        let cfg = ClassifierConfig {
            hidden: [rng.gen_range(4..65), rng.gen_range(2..33)],
            ..ClassifierConfig::default()
        };
        let c = DomainClassifier::new(FEATURE_DIM, ClassifierRole::C, &cfg, draw);
        let probs = c.predict(&batch.features).unwrap();
        let w = importance_weights(&c, &batch).unwrap();
        worst_mean = worst_mean.max((w.mean() - 1.0).abs());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
        monotone &= order.windows(2).all(|p| w.values[p[0]] >= w.values[p[1]]);
    }
    report(
        2,
        worst_mean <= 1e-6 && monotone,
        &format!("max |mean(w) - 1| {worst_mean:.1e}, monotone {monotone}"),
        "1e-6, monotone",
        t0.elapsed(),
        10,
    );
}

const DIM: usize = 41;

/// Two support points embedded in feature space.
fn two_point(count_a: usize, count_b: usize) -> DomainBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rows = vec![a; count_a];
    rows.extend(vec![b; count_b]);
    DomainBatch::from_rows(rows).unwrap()
}

fn js2(p: [f64; 2], q: [f64; 2]) -> f64 {
    let kl = |x: [f64; 2], y: [f64; 2]| x[0] * (x[0] / y[0]).ln() + x[1] * (x[1] / y[1]).ln();
    let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
    0.5 * kl(p, m) + 0.5 * kl(q, m)
}

fn classifier(epochs: usize) -> ClassifierConfig {
    ClassifierConfig {
        epochs,
        ..ClassifierConfig::default()
    }
}

#[test]
fn criterion_03_density_ratio_oracle() {
    let _g = serial();
    let t0 = Instant::now();
    let s = two_point(800, 200);
    let t = two_point(500, 500);
    let (mut c, _) = train_classifier_c(&s, &t, &classifier(5), 10).unwrap();
    let exact = WeightVector {
        values: (0..1000).map(|i| if i < 800 { 0.5 / 0.8 } else { 0.5 / 0.2 }).collect(),
        mode: WeightMode::Iw,
    };
    let weighted = train_classifier_c2(&mut c, &s, &t, &exact, false, &classifier(40), 11).unwrap();
    let uniform = train_classifier_c2(&mut c, &s, &t, &WeightVector::uniform(1000), false, &classifier(40), 12).unwrap();
    let oracle = js2([0.8, 0.2], [0.5, 0.5]);
    let pass = weighted.js_estimate.abs() <= 0.01 && (uniform.js_estimate - oracle).abs() <= 0.02;
    report(
        3,
        pass,
        &format!(
            "JS exact-ratio {:.4}, JS uniform {:.4} (brute force {oracle:.4})",
            weighted.js_estimate, uniform.js_estimate
        ),
        "0 +- 0.01, brute force +- 0.02",
        t0.elapsed(),
        30,
    );
}

/// Diagonal Gaussian log-density.
fn log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * ((x - m).powi(2) / v + (2.0 * std::f64::consts::PI * v).ln()))
        .sum()
}

fn fit_diag(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var = (0..d)
        .map(|j| rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

#[test]
fn criterion_04_kld_estimator() {
    let _g = serial();
    let t0 = Instant::now();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mean: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sd: Vec<f64> = (0..DIM).map(|_| rng.gen_range(0.5..2.0)).collect();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..DIM).map(|j| mean[j] + sd[j] * normal(rng)).collect())
            .collect()
    };
    let source = draw(&mut rng);
    let target = draw(&mut rng);
    // The ideal classifier of two matched domains.
    let ideal = weight_kld_term(&vec![0.5; n], &vec![0.5; n]).unwrap().0;
    // Bayes classifier built from densities fitted to each sample.
    let (ms, vs) = fit_diag(&source);
    let (mt, vt) = fit_diag(&target);
    let c = |x: &Vec<f64>| {
        let d = log_density(x, &mt, &vt) - log_density(x, &ms, &vs);
        1.0 / (1.0 + d.exp())
    };
    let sp: Vec<f64> = source.iter().map(c).collect();
    let tp: Vec<f64> = target.iter().map(c).collect();
    let fitted = weight_kld_term(&tp, &sp).unwrap().0;
    report(
        4,
        ideal.abs() <= 0.02 && fitted.abs() <= 0.02,
        &format!("ideal C {ideal:.2e}, fitted Bayes C {fitted:.2e} at 1e5 samples"),
        "0 +- 0.02",
        t0.elapsed(),
        30,
    );
}

// ---------------------------------------------------------------- divergence and bound

/// `ln integral p^2 / q` for 1-D Gaussians by composite Simpson.
fn renyi_1d_numeric(mp: f64, vp: f64, mq: f64, vq: f64) -> f64 {
    let sd = vp.sqrt().max(vq.sqrt());
    let (lo, hi) = (mp.min(mq) - 40.0 * sd, mp.max(mq) + 40.0 * sd);
    let steps = 200_000;
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| {
        let lp = -0.5 * ((x - mp).powi(2) / vp + (2.0 * std::f64::consts::PI * vp).ln());
        let lq = -0.5 * ((x - mq).powi(2) / vq + (2.0 * std::f64::consts::PI * vq).ln());
        (2.0 * lp - lq).exp()
    };
    let mut s = f(lo) + f(hi);
    for i in 1..steps {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (s * h / 3.0).ln()
}

/// (mean p, var p, mean q, var q), one entry per dimension.
type GaussPair = Vec<(f64, f64, f64, f64)>;

fn gaussian_pairs() -> Vec<GaussPair> {
    vec![
        vec![(0.0, 1.0, 1.0, 1.0)],
        vec![(0.0, 1.0, 0.0, 2.0)],
        vec![(0.5, 0.8, -0.3, 1.5)],
        vec![(2.0, 1.2, 0.0, 1.0), (-1.0, 0.5, 0.0, 0.7)],
        vec![(0.1, 0.3, 0.0, 0.25), (1.0, 2.0, 0.5, 3.0), (-0.5, 1.0, 0.5, 1.0)],
    ]
}

/// Bound values computed with 50-digit arithmetic: (d2, n, h, delta, bound).
const BOUND_ORACLE: [(f64, f64, f64, f64, f64); 5] = [
    (0.5, 3900.0, 33.0, 0.05, 0.000_194_519_511_705_862_493_83),
    (1.0, 1000.0, 10.0, 0.05, 0.000_562_442_812_170_321_541_18),
    (2.5, 50_000.0, 33.0, 0.01, 2.071_305_866_762_917_999_7e-6),
    (0.01, 200.0, 5.0, 0.1, 0.000_122_065_423_571_082_802_53),
    (7.0, 1_000_000.0, 2705.0, 0.05, 0.000_116_909_176_705_632_741_5),
];

#[test]
fn criterion_05_renyi_and_bound() {
    let _g = serial();
    let t0 = Instant::now();
    let mut worst_renyi: f64 = 0.0;
    for pair in gaussian_pairs() {
        let p = Distribution::Gaussian {
            mean: pair.iter().map(|d| d.0).collect(),
            var: pair.iter().map(|d| d.1).collect(),
        };
        let q = Distribution::Gaussian {
            mean: pair.iter().map(|d| d.2).collect(),
            var: pair.iter().map(|d| d.3).collect(),
        };
        let got = renyi2_divergence(&p, &q).unwrap();
        let want: f64 = pair.iter().map(|&(a, b, c, d)| renyi_1d_numeric(a, b, c, d)).sum();
        worst_renyi = worst_renyi.max((got - want).abs() / want.abs());
    }
    let mut worst_bound: f64 = 0.0;
    for (d2, n, h, delta, want) in BOUND_ORACLE {
        let got = generalization_bound(&BoundInputs { d2, n, h, delta }).unwrap();
        worst_bound = worst_bound.max((got - want).abs() / want);
    }
    let bound = |d2: f64, n: f64, h: f64| generalization_bound(&BoundInputs { d2, n, h, delta: 0.05 }).unwrap();
    let (d2s, ns, hs) = ([0.1, 1.0, 10.0], [1e3, 1e4, 1e5], [10.0, 33.0, 100.0]);
    let mut monotone = true;
    for &d2 in &d2s {
        for &n in &ns {
            for &h in &hs {
                let b = bound(d2, n, h);
                monotone &= d2s.iter().filter(|&&x| x > d2).all(|&x| bound(x, n, h) > b);
                monotone &= ns.iter().filter(|&&x| x > n).all(|&x| bound(d2, x, h) < b);
                monotone &= hs.iter().filter(|&&x| x > h).all(|&x| bound(d2, n, x) > b);
            }
        }
    }
    report(
        5,
        worst_renyi <= 0.01 && worst_bound <= 1e-10 && monotone,
        &format!("Renyi rel err {worst_renyi:.1e}, bound rel err {worst_bound:.1e}, monotone {monotone}"),
        "1% / 1e-10 / monotone",
        t0.elapsed(),
        10,
    );
}

// ---------------------------------------------------------------- minimax

fn feasible(w: &[f64], cfg: &MinimaxConfig) -> bool {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().all(|&v| v >= cfg.weight_floor && v <= 1.0) && (mean - 1.0).abs() <= cfg.epsilon + 1e-12
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Random points of the feasible set: half drawn across the set, half near `center`.
fn candidate(rng: &mut ChaCha8Rng, n: usize, center: &[f64], cfg: &MinimaxConfig) -> Option<Vec<f64>> {
    let w: Vec<f64> = if rng.gen_bool(0.5) {
        let e: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let total: f64 = e.iter().sum();
        let budget = rng.gen::<f64>() * cfg.epsilon * n as f64;
        e.iter().map(|v| 1.0 - budget * v / total).collect()
    } else {
        let step = 10f64.powf(rng.gen_range(-4.0..-1.0));
        center
            .iter()
            .map(|c| (c + step * normal(rng)).clamp(cfg.weight_floor, 1.0))
            .collect()
    };
    feasible(&w, cfg).then_some(w)
}

fn robust_grid_value(eps: f64) -> f64 {
    // max over feasible (w_a, w_b) of the closed-form inner minimum
    let inner = |alpha: f64, beta: f64| {
        let h = alpha / (alpha + beta);
        -alpha * h.ln() - beta * (1.0 - h).ln()
    };
    let mut best = f64::NEG_INFINITY;
    let steps = 400;
    for i in 0..=steps {
        for j in 0..=steps {
            let wa = 1e-3 + (1.0 - 1e-3) * i as f64 / steps as f64;
            let wb = 1e-3 + (1.0 - 1e-3) * j as f64 / steps as f64;
            if (0.8 * wa + 0.2 * wb - 1.0).abs() > eps {
                continue;
            }
            best = best.max(inner(0.8 * wa, 0.5) + inner(0.2 * wb, 0.5));
        }
    }
    best
}

#[test]
fn criterion_06_minimax_feasibility_and_optimality() {
    let _g = serial();
    let t0 = Instant::now();
    let cfg = MinimaxConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut beaten = 0;
    let mut infeasible = 0;
    for _ in 0..20 {
        let n = rng.gen_range(3..12);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let p = project_weights(&raw, &cfg).unwrap().values;
        if !feasible(&p, &cfg) {
            infeasible += 1;
        }
        let d = dist2(&p, &raw);
        let mut tried = 0;
        while tried < 1_000_000 {
            if let Some(c) = candidate(&mut rng, n, &p, &cfg) {
                tried += 1;
                if dist2(&c, &raw) < d - 1e-12 {
                    beaten += 1;
                }
            }
        }
    }

    let s = two_point(80, 20);
    let t = two_point(50, 50);
    let mm = MinimaxConfig {
        epochs: 8,
        ..MinimaxConfig::default()
    };
    let fit = robust_bias_aware_fit(&s, &t, &mm, &classifier(30), 16).unwrap();
    let grid = robust_grid_value(mm.epsilon);
    let robust_gap = (fit.robust_loss() - grid).abs() / grid;

    let runs = training_runs();
    let eps = runs.minimax_epsilon;
    let epochs_ok = runs
        .minimax_log
        .iter()
        .all(|l| l.min_omega > 0.0 && l.max_omega <= 1.0 && (l.mean_omega - 1.0).abs() <= eps + 1e-12);
    // The shared training run is timed under criterion 8.
    report(
        6,
        beaten == 0 && infeasible == 0 && robust_gap <= 0.02 && epochs_ok,
        &format!(
            "projection beaten {beaten} times by 2e7 candidates ({infeasible} infeasible), robust fit off grid by {:.2}%, {} training epochs feasible: {epochs_ok}",
            100.0 * robust_gap,
            runs.minimax_log.len()
        ),
        "0 / 2% / all epochs",
        t0.elapsed() - runs.build_time.min(t0.elapsed()),
        120,
    );
}

// ---------------------------------------------------------------- outliers

fn scaled_corpus(dir: &Path, scale: f64, seed: u64) -> (PathBuf, PathBuf) {
    let cfg = RunConfig {
        seed,
        scale,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    let s = cmd_synth(&cfg).unwrap();
    (s.source_manifest, s.target_manifest)
}

#[test]
fn criterion_07_outlier_down_weighting() {
    let _g = serial();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (src_path, tgt_path) = scaled_corpus(dir.path(), 0.1, 42);
    let arch = VcaeArchitecture::default();
    let source = Manifest::load(&src_path).unwrap();
    let target = Manifest::load(&tgt_path).unwrap().split(Split::Train);
    let mut records = MixtureSource::new(42).load_all(&source).unwrap();

    // Overloaded recordings: 20% of the source mixtures amplified into hard clipping.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n_bad = (records.len() as f64 * 0.2).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let bad: Vec<bool> = {
        let mut b = vec![false; records.len()];
        order[..n_bad].iter().for_each(|&i| b[i] = true);
        b
    };
    for (r, &is_bad) in records.iter_mut().zip(&bad) {
        if is_bad {
            let m = &mut r.mix.mixture;
            *m = AudioClip::new(m.samples.iter().map(|v| (20.0 * v).clamp(-1.0, 1.0)).collect(), m.sample_rate);
        }
    }
    let blocks = SourceBlocks::from_mixtures(
        records.iter().map(|r| (r.id.as_str(), r.id.as_str(), &r.mix)),
        &arch,
        true,
    )
    .unwrap();
    let corrupted: Vec<bool> = blocks
        .ids
        .iter()
        .map(|id| {
            let mix = id.rsplit_once('#').unwrap().0;
            bad[records.iter().position(|r| r.id == mix).unwrap()]
        })
        .collect();
    let target_rows = load_target_features(&target, 42, &arch).unwrap();
    let norm = FeatureNormalizer::fit(blocks.features.iter().chain(&target_rows)).unwrap();
    let batch = |rows: &[[f64; FEATURE_DIM]]| {
        DomainBatch::from_rows(rows.iter().map(|r| norm.apply_row(r).to_vec()).collect()).unwrap()
    };
    let (src, tgt) = (batch(&blocks.features), batch(&target_rows));
    let (c, _) = train_classifier_c(&src, &tgt, &ClassifierConfig::default(), 42).unwrap();
    let w = importance_weights(&c, &src).unwrap();
    let mean_of = |flag: bool| {
        let v: Vec<f64> = w.values.iter().zip(&corrupted).filter(|(_, &c)| c == flag).map(|(w, _)| *w).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (bad_mean, clean_mean) = (mean_of(true), mean_of(false));
    let share = corrupted.iter().filter(|&&c| c).count() as f64 / corrupted.len() as f64;
    report(
        7,
        bad_mean <= 0.5 * clean_mean,
        &format!(
            "mean w corrupted {bad_mean:.3} vs clean {clean_mean:.3} (ratio {:.3}, {:.0}% of {} blocks corrupted)",
            bad_mean / clean_mean,
            100.0 * share,
            corrupted.len()
        ),
        "ratio <= 0.5",
        t0.elapsed(),
        180,
    );
}

// ---------------------------------------------------------------- end to end

struct TrainingRuns {
    _dir: tempfile::TempDir,
    /// method -> (mean STOI, mean fwSNRseg) on 0 dB held-out target mixtures
    scores: BTreeMap<String, (f64, f64)>,
    baseline_time: Duration,
    build_time: Duration,
    /// Summed latent variance of the baseline on its validation blocks.
    baseline_val_variance: f64,
    target_variance: f64,
    minimax_log: Vec<EpochLog>,
    iw_log: Vec<EpochLog>,
    minimax_epsilon: f64,
    evaluated: usize,
}

fn run_config(dir: &Path, method: Method, src: &Path, tgt: &Path) -> RunConfig {
    RunConfig {
        seed: 42,
        scale: 0.1,
        source_manifest: Some(src.to_path_buf()),
        target_manifest: Some(tgt.to_path_buf()),
        output_dir: dir.join(method.to_string()),
        training: TrainingConfig {
            method,
            width_divisor: WIDTH_DIVISOR,
            batch_size: BATCH_SIZE,
            ..TrainingConfig::default()
        },
        ..RunConfig::default()
    }
}

fn training_runs() -> &'static TrainingRuns {
    static RUNS: OnceLock<TrainingRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t0 = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let (src, tgt) = scaled_corpus(&dir.path().join("corpus"), 0.1, 42);
        // beside the corpus so relative audio paths still resolve
        let test_path = dir.path().join("corpus").join("target_test_0db.jsonl");
        let test = Manifest::load(&tgt)
            .unwrap()
            .filter(|e| e.split == Split::Test && e.snr_db == 0.0);
        test.save(&test_path).unwrap();

        let mut enhanced = Vec::new();
        let mut baseline_time = Duration::ZERO;
        let mut baseline_val_variance = f64::NAN;
        let mut minimax_log = Vec::new();
        let mut iw_log = Vec::new();
        let mut target_variance = f64::NAN;
        let mut minimax_epsilon = f64::NAN;
        for method in [Method::Baseline, Method::Iw, Method::Minimax] {
            let cfg = run_config(dir.path(), method, &src, &tgt);
            let start = Instant::now();
            let out = cmd_train(&cfg).unwrap();
            let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
            let enh_dir = dir.path().join(format!("enhanced_{method}"));
            let enh_cfg = RunConfig {
                output_dir: enh_dir.clone(),
                ..cfg.clone()
            };
            cmd_enhance(
                &enh_cfg,
                &ckpt,
                &EnhanceInput::Manifest {
                    path: test_path.clone(),
                    split: None,
                },
            )
            .unwrap();
            enhanced.push((method.to_string(), enh_dir));
            match method {
                Method::Baseline => {
                    baseline_time = start.elapsed();
                    target_variance = cfg.training.target_variance;
                    baseline_val_variance = validation_variance(&out.model, &cfg);
                }
                Method::Minimax => {
                    minimax_log = out.log.clone();
                    minimax_epsilon = cfg.training.minimax.epsilon;
                }
                Method::Iw => iw_log = out.log.clone(),
            }
            eprintln!("{method}: trained and enhanced in {:.1} s", start.elapsed().as_secs_f64());
        }
        let eval_cfg = RunConfig {
            output_dir: dir.path().join("evaluation"),
            ..run_config(dir.path(), Method::Baseline, &src, &tgt)
        };
        let summary = cmd_evaluate(&eval_cfg, &test_path, &enhanced).unwrap();
        let mut scores = BTreeMap::new();
        for m in &summary.methods {
            let rows: Vec<_> = summary.results.iter().filter(|r| &r.method == m).collect();
            let n = rows.len() as f64;
            scores.insert(
                m.clone(),
                (
                    rows.iter().map(|r| r.stoi).sum::<f64>() / n,
                    rows.iter().map(|r| r.fwsnrseg_db).sum::<f64>() / n,
                ),
            );
        }
        TrainingRuns {
            _dir: dir,
            scores,
            baseline_time,
            build_time: t0.elapsed(),
            baseline_val_variance,
            target_variance,
            minimax_log,
            iw_log,
            minimax_epsilon,
            evaluated: summary.utterances,
        }
    })
}

/// Summed latent variance over the validation blocks the trainer held out.
fn validation_variance(model: &VcaeModel, cfg: &RunConfig) -> f64 {
    let t = cfg.scaled_training();
    let source = Manifest::load(cfg.source_manifest.as_ref().unwrap()).unwrap();
    let source = source.filter(|e| e.domain == Domain::Source || e.split == Split::Train);
    let blocks = SourceBlocks::load(&source, t.seed, &model.architecture, false).unwrap();
    let (_, val) = blocks.split_validation(t.validation_fraction);
    LatentBatch::new(model.encode_batch(&val.inputs).unwrap())
        .unwrap()
        .summed_variance()
}

#[test]
fn criterion_08_end_to_end_enhancement() {
    let _g = serial();
    let r = training_runs();
    let (s0, f0) = r.scores["unprocessed"];
    let (sb, fb) = r.scores["baseline"];
    let (si, _) = r.scores["iw"];
    let (sm, _) = r.scores["minimax"];
    let mut ordering: Vec<(&str, f64)> = vec![("baseline", sb), ("iw", si), ("minimax", sm)];
    ordering.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ordering: Vec<String> = ordering.iter().map(|(m, s)| format!("{m} {s:.4}")).collect();
    println!(
        "run report: {} held-out 0 dB mixtures; target STOI ordering {}; baseline train+enhance {:.1} s; all runs {:.1} s",
        r.evaluated,
        ordering.join(" > "),
        r.baseline_time.as_secs_f64(),
        r.build_time.as_secs_f64()
    );
    for (name, log) in [("iw", &r.iw_log), ("minimax", &r.minimax_log)] {
        let epochs: Vec<String> = log
            .iter()
            .map(|l| {
                format!(
                    "{}: w in [{:.3}, {:.3}] val {:.4}",
                    l.epoch, l.min_omega, l.max_omega, l.val_loss
                )
            })
            .collect();
        println!("run report: {name} epochs {}", epochs.join("; "));
    }
    let pass = fb - f0 >= 3.0 && sb - s0 >= 0.03 && si >= sb - 0.005 && sm >= sb - 0.005;
    report(
        8,
        pass,
        &format!(
            "fwSNRseg {f0:.2} -> {fb:.2} dB (+{:.2}), STOI {s0:.4} -> {sb:.4} ({:+.4}), iw {si:.4}, minimax {sm:.4}",
            fb - f0,
            sb - s0
        ),
        "+3 dB, +0.03 STOI, iw/minimax >= baseline - 0.005",
        r.baseline_time,
        300,
    );
}

#[test]
fn criterion_09_variance_constraint() {
    let _g = serial();
    let t0 = Instant::now();
    let r = training_runs();
    let rel = (r.baseline_val_variance - r.target_variance).abs() / r.target_variance;
    report(
        9,
        rel <= 0.10,
        &format!(
            "validation summed variance {:.2} vs v = {} (rel gap {rel:.3})",
            r.baseline_val_variance, r.target_variance
        ),
        "rel gap <= 0.10",
        t0.elapsed().saturating_sub(r.build_time),
        60,
    );
}

// ---------------------------------------------------------------- metrics

#[test]
fn criterion_10_metric_oracles() {
    let _g = serial();
    use metric_fixtures::*;
    let t0 = Instant::now();
    let clip = |x: Vec<f64>| AudioClip::new(x, FS);
    let mut worst_stoi: f64 = 0.0;
    for (c, want) in PYSTOI.iter().enumerate() {
        let (x, y) = case(c);
        worst_stoi = worst_stoi.max((stoi(&clip(x), &clip(y)).unwrap() - want).abs());
    }
    let x = speechlike(4);
    let n = lcg_noise(9, LEN);
    let fw: Vec<f64> = [30.0, 10.0, 0.0, -10.0, -30.0]
        .iter()
        .map(|s| fwsnrseg(&clip(x.clone()), &clip(at_snr(&x, &n, *s))).unwrap())
        .collect();
    let fw_ok = fw.iter().all(|s| (FWSNR_MIN_DB..=FWSNR_MAX_DB).contains(s))
        && fw.windows(2).all(|w| w[0] > w[1])
        && (fwsnrseg(&clip(x.clone()), &clip(x.clone())).unwrap() - FWSNR_MAX_DB).abs() < 1e-9
        && (fwsnrseg(&clip(x.clone()), &clip(vec![0.0; LEN])).unwrap() - FWSNR_MIN_DB).abs() < 1e-9;
    let mut worst_p: f64 = 0.0;
    for (a, b, _, p) in TTEST_ORACLE {
        worst_p = worst_p.max((paired_ttest(a, b).unwrap().p_value - p).abs());
    }
    let degenerate = matches!(paired_ttest(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::DegenerateTest(_)));
    report(
        10,
        worst_stoi <= 0.01 && fw_ok && worst_p <= 1e-6 && degenerate,
        &format!("STOI max err {worst_stoi:.4}, fwSNRseg clamp/monotone {fw_ok}, t-test max p err {worst_p:.1e}"),
        "0.01 / holds / 1e-6",
        t0.elapsed(),
        60,
    );
}

// ---------------------------------------------------------------- determinism

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = scaled_corpus(&dir.path().join("corpus"), 0.05, 11);
    let run = |name: &str| {
        let cfg = RunConfig {
            seed: 11,
            scale: 0.05,
            source_manifest: Some(src.clone()),
            target_manifest: Some(tgt.clone()),
            output_dir: dir.path().join(name),
            training: TrainingConfig {
                method: Method::Iw,
                width_divisor: 32,
                batch_size: BATCH_SIZE,
                ..TrainingConfig::default()
            },
            ..RunConfig::default()
        };
        cmd_train(&cfg).unwrap();
        fs::read(cfg.output_dir.join(CHECKPOINT_FILE)).unwrap()
    };
    let a = run("first");
    let b = run("second");
    let identical = a == b;
    let model = VcaeModel::from_bytes(&a).unwrap();
    let round_trip = model.to_bytes().unwrap() == a;
    let mut flipped = a.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    let detected = matches!(VcaeModel::from_bytes(&flipped), Err(Error::Integrity(_)));
    report(
        11,
        identical && round_trip && detected,
        &format!(
            "checkpoints identical {identical} ({} bytes), CRC round trip {round_trip}, flipped byte rejected {detected}",
            a.len()
        ),
        "identical / round trip / rejected",
        t0.elapsed(),
        360,
    );
}

#[test]
fn target_domain_differs_from_source() {
    // Sanity check on the corpus the end-to-end criteria use: the weights
    // are not trivially uniform.
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = scaled_corpus(dir.path(), 0.05, 42);
    let arch = VcaeArchitecture::default();
    let s = load_target_features(&Manifest::load(&src).unwrap(), 42, &arch).unwrap();
    let t = load_target_features(&Manifest::load(&tgt).unwrap(), 42, &arch).unwrap();
    let norm = FeatureNormalizer::fit(s.iter().chain(&t)).unwrap();
    let mean = |rows: &[[f64; FEATURE_DIM]]| -> Vec<f64> {
        (0..FEATURE_DIM)
            .map(|d| rows.iter().map(|r| norm.apply_row(r)[d]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    let gap = dist2(&mean(&s), &mean(&t)).sqrt();
    assert!(gap > 0.1, "feature mean gap {gap}");
    let w = importance_weights_from_probs(&[0.2, 0.5, 0.8], WeightEstimator::Ratio).unwrap();
    assert!((w.mean() - 1.0).abs() < 1e-12);
}
