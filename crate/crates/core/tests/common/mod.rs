//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the metric or gradient code it checks.

#![allow(dead_code)]

use memscope::nn::{DenseLayer, MlpModel, RealMatrix};
use rand::Rng;

/// P(member > non-member) + ½·P(tie), by enumerating every pair.
pub fn pairwise_auc(scores: &[f64], is_member: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !is_member[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if is_member[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// (threshold, tpr, fpr) for `+inf` and every distinct score, by counting.
pub fn threshold_table(scores: &[f64], is_member: &[bool]) -> Vec<(f64, f64, f64)> {
    let pos = is_member.iter().filter(|&&m| m).count() as f64;
    let neg = is_member.len() as f64 - pos;
    let mut ts: Vec<f64> = scores.to_vec();
    ts.push(f64::INFINITY);
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let tp = scores.iter().zip(is_member).filter(|(&s, &m)| m && s >= t).count() as f64;
            let fp = scores.iter().zip(is_member).filter(|(&s, &m)| !m && s >= t).count() as f64;
            (t, tp / pos, fp / neg)
        })
        .collect()
}

pub fn sweep_advantage(scores: &[f64], is_member: &[bool]) -> f64 {
    threshold_table(scores, is_member)
        .into_iter()
        .map(|(_, tpr, fpr)| tpr - fpr)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best TPR over thresholds whose FPR stays within `alpha`.
pub fn scan_tpr_at_fpr(scores: &[f64], is_member: &[bool], alpha: f64) -> f64 {
    threshold_table(scores, is_member)
        .into_iter()
        .filter(|&(_, _, fpr)| fpr <= alpha)
        .map(|(_, tpr, _)| tpr)
        .fold(0.0, f64::max)
}

/// Score sets with deliberately heavy ties when `tie_levels` is small.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, tie_levels: Option<u32>) -> (Vec<f64>, Vec<bool>) {
    loop {
        let shift = rng.random_range(-0.5..0.5);
        let mut scores = Vec::with_capacity(n);
        let mut members = Vec::with_capacity(n);
        for _ in 0..n {
            let m = rng.random_bool(0.5);
            let raw: f64 = rng.random::<f64>() + if m { shift } else { 0.0 };
            scores.push(match tie_levels {
                Some(k) => (raw * f64::from(k)).floor(),
                None => raw,
            });
            members.push(m);
        }
        if members.iter().any(|&m| m) && members.iter().any(|&m| !m) {
            return (scores, members);
        }
    }
}

pub fn random_model<R: Rng>(rng: &mut R, widths: &[usize]) -> MlpModel {
    let layers = widths
        .windows(2)
        .map(|w| {
            let values = (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            DenseLayer::new(RealMatrix::from_vec(w[0], w[1], values).unwrap(), bias).unwrap()
        })
        .collect();
    MlpModel::from_layers(layers).unwrap()
}

/// Forward pass written with explicit index loops over the raw parameters.
#[allow(clippy::needless_range_loop)]
pub fn scalar_forward(model: &MlpModel, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let n = model.layers().len();
    for (li, layer) in model.layers().iter().enumerate() {
        let (d_in, d_out) = (layer.weights.rows(), layer.weights.cols());
        let mut y = vec![0.0; d_out];
        for j in 0..d_out {
            let mut acc = layer.bias[j];
            for i in 0..d_in {
                acc += x[i] * layer.weights.as_slice()[i * d_out + j];
            }
            y[j] = if li + 1 < n && acc < 0.0 { 0.0 } else { acc };
        }
        x = y;
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `CE(probs, smoothed target) + (λ/2)·Σ W²`, evaluated with [`scalar_forward`].
pub fn scalar_objective(model: &MlpModel, input: &[f64], label: usize, l2: f64, smoothing: f64) -> f64 {
    let probs = scalar_forward(model, input);
    let m = probs.len() as f64;
    let mut loss = 0.0;
    for (i, p) in probs.iter().enumerate() {
        let y = if i == label { 1.0 - smoothing } else { 0.0 } + smoothing / m;
        loss -= y * p.max(1e-12).ln();
    }
    let sq: f64 = model.layers().iter().map(|l| l.weights.as_slice().iter().map(|w| w * w).sum::<f64>()).sum();
    loss + 0.5 * l2 * sq
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative error, so exact zeros compare cleanly.
pub const FD_FLOOR: f64 = 1e-6;

/// Worst relative error between the analytic gradient and central
/// differences over `probes` randomly chosen parameters.
pub fn finite_difference_check<R: Rng>(
    rng: &mut R,
    model: &MlpModel,
    input: &[f64],
    label: usize,
    l2: f64,
    smoothing: f64,
    probes: usize,
) -> f64 {
    let trace = model.forward(input, None).unwrap();
    let grads = model.backward(&trace, label, l2, smoothing);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let li = rng.random_range(0..model.layers().len());
        let on_bias = rng.random_bool(0.3);
        let len = if on_bias {
            model.layers()[li].bias.len()
        } else {
            model.layers()[li].weights.as_slice().len()
        };
        let k = rng.random_range(0..len);
        let analytic = if on_bias {
            grads.layers[li].bias[k]
        } else {
            grads.layers[li].weights.as_slice()[k]
        };
        let eval = |delta: f64| {
            let mut m = model.clone();
            let layer = &mut m.layers_mut()[li];
            if on_bias {
                layer.bias[k] += delta;
            } else {
                layer.weights.as_mut_slice()[k] += delta;
            }
            scalar_objective(&m, input, label, l2, smoothing)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    worst
}
