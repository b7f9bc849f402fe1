//! Frozen metric fixtures shared by the metric tests and the acceptance suite.

#![allow(dead_code)]

pub const FS: u32 = 16_000;
pub const LEN: usize = 32_000;

/// Same 32-bit LCG as the reference script that produced the frozen scores.
pub fn lcg_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = (state * 1_664_525 + 1_013_904_223) % (1 << 32);
            state as f64 / 4_294_967_296.0 - 0.5
        })
        .collect()
}

pub fn speechlike(case: usize) -> Vec<f64> {
    let f0 = 100.0 + 15.0 * case as f64;
    (0..LEN)
        .map(|i| {
            let t = i as f64 / FS as f64;
            let env = (2.0 * std::f64::consts::PI * 3.0 * t + 0.3 * case as f64).sin().max(0.0).powi(2);
            let harm: f64 = (1..=8)
                .map(|h| (2.0 * std::f64::consts::PI * h as f64 * f0 * t).sin() / h as f64)
                .sum();
            0.1 * env * harm
        })
        .collect()
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn at_snr(x: &[f64], n: &[f64], snr: f64) -> Vec<f64> {
    let g = (power(x) / (power(n) * 10f64.powf(snr / 10.0))).sqrt();
    x.iter().zip(n).map(|(a, b)| a + g * b).collect()
}

pub fn case(c: usize) -> (Vec<f64>, Vec<f64>) {
    let x = speechlike(c);
    let n = lcg_noise(1000 + c as u64, LEN);
    let y = match c {
        0 => at_snr(&x, &n, 10.0),
        1 => at_snr(&x, &n, 0.0),
        2 => at_snr(&x, &n, -5.0),
        3 => x.iter().map(|v| 0.5 * v).collect(),
        4 => (0..LEN)
            .map(|i| (i.saturating_sub(7)..=i).map(|j| x[j]).sum::<f64>() / 8.0)
            .collect(),
        5 => at_snr(&x, &n, 5.0),
        6 => x
            .iter()
            .enumerate()
            .map(|(i, v)| if (i / 320) % 2 == 1 { 0.0 } else { *v })
            .collect(),
        7 => at_snr(&x, &n, -10.0),
        8 => n.iter().map(|v| 0.05 * v).collect(),
        9 => {
            let mut d = vec![0.0; 40];
            d.extend_from_slice(&x[..LEN - 40]);
            at_snr(&d, &n, 15.0)
        }
        _ => unreachable!(),
    };
    (x, y)
}

pub const PYSTOI: [f64; 10] = [
    0.7243716880,
    0.6473608941,
    0.6698488703,
    1.0000000000,
    0.9944950568,
    0.7700833171,
    0.7016223080,
    0.5732896651,
    0.3191309577,
    0.8277881142,
];

/// (a, b, t, p) computed with 30-digit arithmetic.
pub const TTEST_ORACLE: &[(&[f64], &[f64], f64, f64)] = &[
    (&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 3.4641016151377545871, 0.074179900227448538433),
    (
        &[0.5, 0.7, 0.2, 0.9, 0.4],
        &[0.1, 0.3, 0.5, 0.2, 0.6],
        1.0397504898200726893,
        0.35717240291604284204,
    ),
    (
        &[10.0, 12.0, 9.0, 11.0, 13.0, 10.0, 12.0, 14.0],
        &[9.0, 11.0, 10.0, 10.0, 12.0, 9.0, 11.0, 12.0],
        2.9656149100771318572,
        0.02093757020692462644,
    ),
    (
        &[0.61, 0.64, 0.58, 0.70, 0.66, 0.59],
        &[0.60, 0.60, 0.57, 0.66, 0.63, 0.60],
        2.4494897427831780982,
        0.05797277355753994663,
    ),
    (
        &[3.1, 2.9, 3.3, 3.0],
        &[1.0, 1.2, 0.8, 1.1],
        12.003570897266958106,
        0.001243923149605650826,
    ),
];
