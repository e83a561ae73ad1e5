//! Checkers shared by the integration tests and the acceptance binary.
#![allow(dead_code)]

use milab_core::theory::scalar_profile_grid_argmax;
use milab_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub const FD_STEP: f64 = 1e-4;

/// Five-point derivative along coordinate `i`. The O(h^4) stencil lets the
/// step stay large enough that round-off in losses of order 10 does not
/// swamp gradients of order 1e-5.
pub fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let mut p = x.to_vec();
    let mut at = |k: f64| {
        p[i] = x[i] + k * FD_STEP;
        f(&p)
    };
    let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP)
}

/// Scores kept well inside the clamp so the finite difference never
/// straddles it.
fn score(r: &mut ChaCha8Rng) -> f64 {
    r.random_range(0.02..0.98)
}

/// Worst relative error of an instance loss gradient over `cases` random
/// score vectors.
pub fn fd_instance_loss(loss: InstanceLoss, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = r.random_range(1..12);
        let s: Vec<f64> = (0..n).map(|_| score(&mut r)).collect();
        let y: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let report = loss.evaluate(&s, &y).unwrap();
        for i in 0..n {
            let num = central(|v| loss.evaluate(v, &y).unwrap().value, &s, i);
            worst = worst.max(rel_err(report.grad[i], num));
        }
    }
    worst
}

pub fn random_batch(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>, usize, usize) {
    let bags = r.random_range(1..6);
    let m = r.random_range(1..6);
    let k = r.random_range(1..4);
    let s = (0..bags * m * k).map(|_| score(r)).collect();
    let y = (0..bags * k).map(|_| r.random_bool(0.5)).collect();
    (s, y, m, k)
}

/// Worst relative error of a bag objective gradient.
pub fn fd_bag_objective(obj: BagObjective, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (s, y, m, k) = random_batch(&mut r);
        let eval = |v: &[f64]| obj.evaluate(&BagBatch { scores: v, labels: &y, bag_size: m, n_labels: k }).unwrap();
        let report = eval(&s);
        for i in 0..s.len() {
            let num = central(|v| eval(v).value, &s, i);
            worst = worst.max(rel_err(report.grad[i], num));
        }
    }
    worst
}

/// Worst relative error of the network parameter gradient of
/// `sum_i c_i f(x_i)` for random coefficients `c`.
pub fn fd_model(arch_of: impl Fn(usize, usize) -> Architecture, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = r.random_range(1..4);
        let k = r.random_range(1..3);
        let arch = arch_of(d, k);
        let n = r.random_range(1..20);
        let params: Vec<f64> = (0..arch.n_params()).map(|_| r.random_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..n * k).map(|_| r.random_range(-1.0..1.0)).collect();
        let objective = |p: &[f64]| {
            let m = Mlp::from_params(arch, p.to_vec()).unwrap();
            m.forward(&x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };
        let analytic = Mlp::from_params(arch, params.clone()).unwrap().backward(&x, &c).unwrap();
        for (i, &a) in analytic.iter().enumerate() {
            worst = worst.max(rel_err(a, central(objective, &params, i)));
        }
    }
    worst
}

/// `(score, rho_pos, rho_neg, clean label, z)` for one Monte Carlo setting.
pub type McRow = (f64, f64, f64, bool, f64);

/// Largest `|mean - ce| / stderr` over `settings` Monte Carlo estimates of
/// the expected unbiased cost under label flips.
pub fn uc_monte_carlo(settings: usize, samples: usize, seed: u64) -> (f64, Vec<McRow>) {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for _ in 0..settings {
        let g = r.random_range(0.05..0.95);
        let rho_pos = r.random_range(0.0..0.4);
        let rho_neg = r.random_range(0.0..0.4);
        let y = r.random_bool(0.5);
        let rates = NoiseRates::new(rho_pos, rho_neg).unwrap();
        let loss = InstanceLoss::Uc(rates);
        let flip = if y { rho_pos } else { rho_neg };
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..samples {
            let noisy = if r.random_bool(flip) { !y } else { y };
            let v = loss.value(g, noisy);
            sum += v;
            sq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sq / n - mean * mean) / (n - 1.0)).sqrt();
        let clean = InstanceLoss::Si.value(g, y);
        let z = (mean - clean).abs() / se;
        worst = worst.max(z);
        rows.push((g, rho_pos, rho_neg, y, z));
    }
    (worst, rows)
}

/// Random AP input with at least one positive; every other case draws
/// scores from a handful of values to force ties.
pub fn ap_case(r: &mut ChaCha8Rng, tied: bool) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(1..=1000);
    let levels = r.random_range(1..8);
    let s: Vec<f64> = (0..n).map(|_| if tied { r.random_range(0..levels) as f64 / 8.0 } else { r.random::<f64>() }).collect();
    let mut y: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
    let at = r.random_range(0..n);
    y[at] = true;
    (s, y)
}

/// Number of inputs on which the AP disagrees with the enumeration oracle
/// (curves compared exactly).
pub fn ap_oracle_mismatches(cases: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..cases)
        .filter(|i| {
            let (s, y) = ap_case(&mut r, i % 2 == 0);
            average_precision(&s, &y).unwrap() != average_precision_bruteforce(&s, &y).unwrap()
        })
        .count()
}

/// Largest `|si_bag_cost - si_loss(unpack)|` over random bag sets, scored by
/// a random network so that scores follow their instances through unpacking.
pub fn bag_equivalence(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let m = r.random_range(2..8);
        let l = r.random_range(1..m);
        let b = r.random_range(1..4) as f64;
        let p = r.random_range(1..6);
        let spec = SynthSpec::new(MilConfig::new(m, l, b, p).unwrap(), r.random::<f64>(), case as u64);
        let bags = generate_bags::<f64>(&spec).unwrap();
        let net = Mlp::<f64>::init(Architecture::two_layer(2), r.random());

        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for bag in &bags {
            for f in &bag.features {
                feats.extend_from_slice(f);
            }
            labels.push(bag.label);
        }
        let bag_scores = net.forward(&feats).unwrap();
        let cost = si_bag_cost(&BagBatch { scores: &bag_scores, labels: &labels, bag_size: m, n_labels: 1 }).unwrap();

        let ds = unpack(&bags).unwrap();
        let inst_scores = net.forward(ds.features()).unwrap();
        let loss = si_loss(&inst_scores, ds.si_labels()).unwrap();
        worst = worst.max((cost.value - loss.value).abs());
    }
    worst
}

/// Largest `|grid argmax - a / (a + b)|` over random weights and the
/// default-configuration pair.
pub fn profile_grid_oracle(pairs: usize, step: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut cases: Vec<(f64, f64)> = (0..pairs).map(|_| (r.random_range(1.0..1e5), r.random_range(1.0..1e5))).collect();
    cases.push((9900.0, 200000.0));
    cases
        .iter()
        .map(|&(a, b)| (scalar_profile_grid_argmax(a, b, step).unwrap() - scalar_profile_argmax(a, b).unwrap()).abs())
        .fold(0.0, f64::max)
}
