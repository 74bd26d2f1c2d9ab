//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use decnas_core::data::{shard_clients, ClientSummary, Sample, ShardMode};
use decnas_core::nn::{forward, loss_and_grad, Architecture, LayerSpec, Model, Padding, Parameters, Shape3, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Label-skewed federation summaries built through the real sharder with
/// featureless samples.
pub fn skewed_summaries(seed: u64, clients: usize, samples: usize, classes: usize, k: usize) -> Vec<ClientSummary> {
    let data: Vec<Sample> = (0..samples)
        .map(|i| Sample {
            features: Tensor::zeros(vec![1, 1, 1]),
            label: i % classes,
        })
        .collect();
    let mode = ShardMode::LabelSkew {
        classes_per_client: k,
        size_sigma: 0.7,
    };
    shard_clients(data, clients, mode, classes, seed).unwrap().summaries()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalized(counts: &[u64]) -> Vec<f64> {
    let t: u64 = counts.iter().sum();
    counts.iter().map(|&c| if t == 0 { 0.0 } else { c as f64 / t as f64 }).collect()
}

/// (mean distance to the population, sizes) of an explicit assignment.
pub fn score(clients: &[ClientSummary], assign: &[usize], k: usize) -> (f64, Vec<u64>) {
    let classes = clients[0].class_counts.len();
    let mut groups = vec![vec![0u64; classes]; k];
    let mut all = vec![0u64; classes];
    for (c, &g) in clients.iter().zip(assign) {
        for j in 0..classes {
            groups[g][j] += c.class_counts[j];
            all[j] += c.class_counts[j];
        }
    }
    let all = normalized(&all);
    let mean = groups.iter().map(|g| l1(&normalized(g), &all)).sum::<f64>() / k as f64;
    (mean, groups.iter().map(|g| g.iter().sum()).collect())
}

/// Random order, each client to the currently smallest group.
pub fn random_balanced(clients: &[ClientSummary], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.shuffle(&mut rng);
    let mut sizes = vec![0u64; k];
    let mut assign = vec![0; clients.len()];
    for i in order {
        let g = (0..k).min_by_key(|&g| (sizes[g], g)).unwrap();
        sizes[g] += clients[i].total();
        assign[i] = g;
    }
    assign
}

/// Exhaustive optimum over all assignments with non-empty groups satisfying
/// `max <= r * min`. `None` when no assignment is balance-feasible.
pub fn brute_force(clients: &[ClientSummary], k: usize, r: f64) -> Option<f64> {
    let n = clients.len();
    let mut assign = vec![0usize; n];
    let mut best: Option<f64> = None;
    loop {
        let (mean, sizes) = score(clients, &assign, k);
        let (mx, mn) = (*sizes.iter().max().unwrap(), *sizes.iter().min().unwrap());
        if mn > 0 && mx as f64 <= r * mn as f64 && best.is_none_or(|b| mean < b) {
            best = Some(mean);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

/// Small instance: `n` clients with random sizes, each holding one or two classes.
pub fn small_instance(seed: u64, n: usize, classes: usize) -> Vec<ClientSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let mut counts = vec![0u64; classes];
            let a = rng.random_range(0..classes);
            let b = rng.random_range(0..classes);
            counts[a] += rng.random_range(5..40);
            counts[b] += rng.random_range(0..30);
            ClientSummary {
                client_id: id,
                class_counts: counts,
            }
        })
        .collect()
}

/// Random conv stack ending in a dense classifier. `filters` bounds the
/// width of every hidden layer.
pub fn random_net(rng: &mut ChaCha8Rng, size: std::ops::Range<usize>, filters: std::ops::Range<usize>) -> Architecture {
    loop {
        let input = Shape3 {
            h: rng.random_range(size.clone()),
            w: rng.random_range(size.clone()),
            c: rng.random_range(1..4),
        };
        let mut layers = Vec::new();
        for _ in 0..rng.random_range(1..4) {
            layers.push(LayerSpec::Conv2d {
                kernel: (rng.random_range(1..4), rng.random_range(1..4)),
                stride: rng.random_range(1..3),
                padding: if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid },
                filters: rng.random_range(filters.clone()),
            });
            if rng.random_bool(0.7) {
                layers.push(LayerSpec::Relu);
            }
        }
        if rng.random_bool(0.5) {
            layers.push(LayerSpec::pool(2));
        }
        layers.push(LayerSpec::Flatten);
        if rng.random_bool(0.6) {
            layers.push(LayerSpec::dense(rng.random_range(filters.clone())));
            layers.push(LayerSpec::Relu);
        }
        let classes = rng.random_range(2..6);
        layers.push(LayerSpec::dense(classes));
        layers.push(LayerSpec::Softmax);
        if let Ok(arch) = Architecture::new(input, layers, classes) {
            return arch;
        }
    }
}

pub fn random_batch(arch: &Architecture, n: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let s = arch.input_shape();
    let values = (0..n * s.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(vec![n, s.h, s.w, s.c], values).unwrap()
}

/// Per-filter l2 norms of a layer's weights, in filter order.
pub fn norms(model: &Model, layer: usize) -> Vec<f64> {
    let w = &model.params.layer(layer).unwrap().weight;
    let f = w.shape()[0];
    let row = w.len() / f;
    (0..f)
        .map(|i| w.values()[i * row..(i + 1) * row].iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt())
        .collect()
}

pub struct GradientCheck {
    pub worst_relative_error: f64,
    /// (component, analytic, numeric) at the worst error.
    pub worst_component: (usize, f64, f64),
    /// Components sitting on a ReLU or max-pool switch, where the central
    /// difference is not a derivative.
    pub skipped: usize,
    pub total: usize,
}

/// Compares analytic gradients with f64 central differences of the mean
/// cross-entropy computed from the forward probabilities.
pub fn check_gradients(arch: &Architecture, rng: &mut ChaCha8Rng) -> GradientCheck {
    // Random biases keep pre-activations off the exact ReLU kink that zero
    // biases produce behind a dead layer.
    let mut params = Parameters::<f64>::init(arch, rng);
    for i in 0..arch.layers().len() {
        if let Some(lp) = params.layer_mut(i) {
            lp.bias.values_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let x: Tensor<f64> = random_batch(arch, 3, rng).cast();
    let y: Vec<usize> = (0..3).map(|_| rng.random_range(0..arch.class_count())).collect();
    let (_, grad) = loss_and_grad(arch, &params, &x, &y).unwrap();
    let loss_at = |p: &Parameters<f64>| -> f64 {
        let probs = forward(arch, p, &x).unwrap();
        let c = arch.class_count();
        -y.iter().enumerate().map(|(i, &l)| probs.values()[i * c + l].ln()).sum::<f64>() / y.len() as f64
    };
    let fd = |k: usize, h: f64| {
        let mut plus = params.clone();
        let mut minus = params.clone();
        nudge(&mut plus, k, h);
        nudge(&mut minus, k, -h);
        (loss_at(&plus) - loss_at(&minus)) / (2.0 * h)
    };
    let analytic: Vec<f64> = grad.scalars().collect();
    let mut check = GradientCheck {
        worst_relative_error: 0.0,
        worst_component: (0, 0.0, 0.0),
        skipped: 0,
        total: analytic.len(),
    };
    for (k, &a) in analytic.iter().enumerate() {
        let d1 = fd(k, 1e-4);
        let d2 = fd(k, 5e-5);
        if (d1 - d2).abs() > 1e-6 * (1.0 + d1.abs()) {
            check.skipped += 1;
            continue;
        }
        let rel = (a - d1).abs() / a.abs().max(d1.abs()).max(1e-6);
        if rel > check.worst_relative_error {
            check.worst_relative_error = rel;
            check.worst_component = (k, a, d1);
        }
    }
    check
}

fn nudge(p: &mut Parameters<f64>, mut k: usize, h: f64) {
    for i in 0..p.layers().len() {
        if let Some(lp) = p.layer_mut(i) {
            for t in [&mut lp.weight, &mut lp.bias] {
                if k < t.len() {
                    t.values_mut()[k] += h;
                    return;
                }
                k -= t.len();
            }
        }
    }
    panic!("parameter index out of range");
}
