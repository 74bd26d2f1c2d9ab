//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 and 8 are exact properties and fail the run when violated.
//! Criteria 6 and 7 compare trained accuracies and byte totals of full desk
//! runs; their verdicts are reported but do not abort the suite.
//!
//! `DECNAS_ACCEPTANCE=quick` skips the long end-to-end criteria 6-8.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use decnas_core::coordinator::{cloud_one_round, CandidateState, LocalTraining, RoundContext};
use decnas_core::data::{shard_clients, stack, synthetic_dataset, Federation, ShardMode, SyntheticSpec};
use decnas_core::grouping::{greedy_partition, single_group};
use decnas_core::nn::{logits, loss_and_grad, sgd_step, templates, Architecture, LayerSpec, Model, Shape3};
use decnas_core::pruner::{generate_candidates, prune_layer_to_budget};
use decnas_core::rng::rng_for;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let pass = v.pass && took < limit;
    verdict(pass, format!("{}; {:.1}s (limit {}s)", v.detail, took.as_secs_f64(), limit.as_secs()))
}

// ---- criterion 1 ---------------------------------------------------------

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut total = 0;
    let mut largest = 0;
    for _ in 0..50 {
        let arch = loop {
            let a = support::random_net(&mut rng, 4..8, 2..7);
            if a.param_count() <= 500 {
                break a;
            }
        };
        largest = largest.max(arch.param_count());
        let c = support::check_gradients(&arch, &mut rng);
        worst = worst.max(c.worst_relative_error);
        skipped += c.skipped;
        total += c.total;
    }
    // A handful of kinked components is expected; a large share would hide errors.
    let pass = worst < 1e-4 && skipped * 20 < total;
    verdict(
        pass,
        format!("50 nets up to {largest} params, worst relative error {worst:.2e}, {skipped}/{total} kinked components skipped"),
    )
}

// ---- shared small federation ----------------------------------------------

fn small_federation(seed: u64, shape: Shape3, clients: usize) -> Federation {
    let mut spec = SyntheticSpec::new(seed, 60 * clients);
    spec.noise = 0.5;
    let samples = synthetic_dataset(&spec, shape, 8).unwrap();
    let mode = ShardMode::LabelSkew {
        classes_per_client: 2,
        size_sigma: 0.7,
    };
    shard_clients(samples, clients, mode, 8, seed).unwrap()
}

// ---- criterion 2 ---------------------------------------------------------

fn fusion() -> Verdict {
    let shape = Shape3::new(16, 16, 1);
    let fed = small_federation(2, shape, 20);
    let gm = Model::init(templates::convnet_small(shape, 8).unwrap(), &mut rng_for(2, &[]));
    let cand = prune_layer_to_budget(&gm, 3, gm.macs() as f64 * 0.9).unwrap().unwrap();
    let partition = greedy_partition(&fed.summaries(), 1, 1.1).unwrap();
    let training = LocalTraining {
        epochs: 1,
        lr: 0.1,
        batch_size: usize::MAX,
    };
    let ctx = RoundContext {
        seed: 2,
        iteration: 1,
        round: 1,
        prev_acc: 0.5,
        prev_macs: gm.macs(),
        k_original: 1,
        drop_percent: 33.0,
        training,
    };
    let mut states = vec![CandidateState::new(cand.clone(), 0)];
    cloud_one_round(&mut states, &partition, &fed, &ctx, &mut Vec::new()).unwrap();

    let (x, y) = stack(fed.clients.iter().flat_map(|c| c.train.iter()));
    let (_, g) = loss_and_grad(&cand.model.arch, &cand.model.params, &x, &y).unwrap();
    let central = sgd_step(&cand.model.params, &g, training.lr).unwrap();
    let fused = &states[0].candidate.model.params;
    let worst = fused
        .scalars()
        .zip(central.scalars())
        .map(|(a, b)| f64::from((a - b).abs()))
        .fold(0.0, f64::max);
    verdict(
        worst <= 1e-6,
        format!("{} clients, {} components, max deviation {worst:.2e}", fed.clients.len(), central.scalar_count()),
    )
}

// ---- criterion 3 ---------------------------------------------------------

fn partitions() -> Verdict {
    let mut wins = 0;
    let mut worst_imbalance: f64 = 0.0;
    let mut violations = 0;
    for seed in 0..100 {
        let clients = support::skewed_summaries(seed, 100, 3000, 8, 2);
        let p = greedy_partition(&clients, 10, 1.1).unwrap();
        if p.balance_violated {
            violations += 1;
        }
        worst_imbalance = worst_imbalance.max(p.imbalance());
        let (random_mean, _) = support::score(&clients, &support::random_balanced(&clients, 10, seed + 1000), 10);
        if p.mean_distance <= random_mean {
            wins += 1;
        }
    }
    let mut worst_ratio: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..100u64 {
        let n = 4 + (seed as usize % 7);
        let k = 2 + (seed as usize % 2);
        let clients = support::small_instance(seed, n, 4);
        let Some(opt) = support::brute_force(&clients, k, 1.1) else { continue };
        instances += 1;
        let p = greedy_partition(&clients, k, 1.1).unwrap();
        let ratio = if opt < 1e-12 {
            if p.mean_distance < 1e-12 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            p.mean_distance / opt
        };
        worst_ratio = worst_ratio.max(ratio);
    }
    let pass = violations == 0 && worst_imbalance <= 1.1 && wins >= 95 && worst_ratio <= 1.2;
    verdict(
        pass,
        format!(
            "max/min {worst_imbalance:.3}, beats random balanced {wins}/100, worst brute-force ratio {worst_ratio:.3} over {instances} small instances"
        ),
    )
}

// ---- criterion 4 ---------------------------------------------------------

fn pruning() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nets = 0;
    let mut candidates = 0;
    let mut failures = Vec::new();
    while nets < 20 {
        let arch = support::random_net(&mut rng, 6..12, 2..9);
        let model = Model::init(arch.clone(), &mut rng);
        let x = support::random_batch(&arch, 3, &mut rng);
        let budget = model.macs() as f64 * rng.random_range(0.6..0.98);
        let Ok(cands) = generate_candidates(&model, budget) else { continue };
        nets += 1;
        for c in &cands {
            candidates += 1;
            if !(c.macs as f64 <= budget) {
                failures.push(format!("net {nets}: {} MACs over budget {budget:.0}", c.macs));
            }
            let n = support::norms(&model, c.pruned_layer_index);
            let max_removed = c.removed.iter().map(|&f| n[f]).fold(f64::MIN, f64::max);
            let min_kept = (0..n.len()).filter(|f| !c.removed.contains(f)).map(|f| n[f]).fold(f64::MAX, f64::min);
            if max_removed > min_kept {
                failures.push(format!("net {nets}: removal set is not an ascending-norm prefix"));
            }
            let mut zeroed = model.params.clone();
            let layer = zeroed.layer_mut(c.pruned_layer_index).unwrap();
            let row = layer.weight.len() / n.len();
            for &f in &c.removed {
                layer.weight.values_mut()[f * row..(f + 1) * row].fill(0.0);
                layer.bias.values_mut()[f] = 0.0;
            }
            let reference = logits(&arch, &zeroed, &x).unwrap();
            let pruned = logits(&c.model.arch, &c.model.params, &x).unwrap();
            if reference.values() != pruned.values() {
                failures.push(format!("net {nets} layer {}: logits differ", c.pruned_layer_index));
            }
        }
    }
    let detail = match failures.first() {
        None => format!("20 nets, {candidates} candidates, logits bit-identical"),
        Some(f) => format!("{} failures, first: {f}", failures.len()),
    };
    verdict(failures.is_empty(), detail)
}

// ---- criterion 5 ---------------------------------------------------------

/// Alive counts after each of three rounds of 14 candidates at drop rate `alpha`.
fn alive_counts(fed: &Federation, gm: &Model, alpha: f64) -> (Vec<usize>, bool) {
    let base = prune_layer_to_budget(gm, 0, gm.macs() as f64 * 0.95).unwrap().unwrap();
    let mut states: Vec<CandidateState> = (0..14)
        .map(|id| {
            let mut c = base.clone();
            c.candidate_id = id;
            CandidateState::new(c, 0)
        })
        .collect();
    let partition = single_group(&fed.summaries()).unwrap();
    let mut counts = Vec::new();
    for round in 1..=3 {
        let ctx = RoundContext {
            seed: 5,
            iteration: 1,
            round,
            prev_acc: 0.9,
            prev_macs: gm.macs(),
            k_original: 14,
            drop_percent: alpha,
            training: LocalTraining {
                epochs: 1,
                lr: 0.05,
                batch_size: 16,
            },
        };
        let log = cloud_one_round(&mut states, &partition, fed, &ctx, &mut Vec::new()).unwrap();
        counts.push(log.alive_after);
    }
    // The survivor must be a best-ranked candidate of the final round.
    let best = states
        .iter()
        .filter(|s| s.dropped_round.is_none_or(|r| r == 3))
        .map(|s| s.degradation)
        .fold(f64::INFINITY, f64::min);
    let survivor_is_best = states.iter().filter(|s| s.alive).all(|s| s.degradation == best);
    (counts, survivor_is_best)
}

fn drop_schedule() -> Verdict {
    let shape = Shape3::new(8, 8, 1);
    let fed = small_federation(5, shape, 6);
    let arch = Architecture::new(
        shape,
        vec![
            LayerSpec::conv(3, 4),
            LayerSpec::Relu,
            LayerSpec::pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(8),
            LayerSpec::Softmax,
        ],
        8,
    )
    .unwrap();
    let gm = Model::init(arch, &mut rng_for(5, &[]));
    let (c33, best33) = alive_counts(&fed, &gm, 33.0);
    let (c0, _) = alive_counts(&fed, &gm, 0.0);
    let (c100, _) = alive_counts(&fed, &gm, 100.0);
    let pass = c33 == [9, 4, 1] && best33 && c0 == [14, 14, 14] && c100[0] == 1;
    verdict(pass, format!("alive after rounds 1-3: alpha=33 {c33:?}, alpha=0 {c0:?}, alpha=100 {c100:?}"))
}

// ---- criteria 6-8: full desk runs through the binary -----------------------

const DESK: &str = r#"# Desk frontier configuration.
[data]
source = "synthetic"
height = 32
width = 32
channels = 1
classes = 8
clients = 200
shard = "label_skew"
classes_per_client = 2

[model]
template = "convnet-small"

[search]
groups = 10
final_budget = 0.5
"#;

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        Self { root }
    }

    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = match extra {
            "" => DESK.to_owned(),
            _ => DESK.replace("[search]\n", &format!("[search]\n{extra}\n")),
        };
        let path = self.root.join(format!("{name}.toml"));
        std::fs::write(&path, text).unwrap();
        path
    }

    fn decnas(&self, args: &[&str]) {
        let out = Command::new(env!("CARGO_BIN_EXE_decnas"))
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "decnas {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    /// run-search (plus run-baseline when asked) into `root/name`.
    fn run(&self, name: &str, config: &Path, seed: u64, threads: usize, baseline: bool) -> RunResult {
        let dir = self.root.join(name);
        let (cfg, out, seed, threads) = (
            config.to_str().unwrap(),
            dir.to_str().unwrap(),
            seed.to_string(),
            threads.to_string(),
        );
        let start = Instant::now();
        let common = ["--config", cfg, "--out", out, "--seed", &seed];
        self.decnas(&[&["--threads", &threads, "run-search"][..], &common].concat());
        if baseline {
            self.decnas(&[&["--threads", &threads, "run-baseline"][..], &common].concat());
        }
        RunResult::read(&dir, start.elapsed())
    }
}

struct Row {
    method: String,
    iteration: usize,
    macs_ratio: f64,
    accuracy: f64,
}

struct RunResult {
    frontier: Vec<u8>,
    rows: Vec<Row>,
    uplink: u64,
    elapsed: Duration,
}

impl RunResult {
    fn read(dir: &Path, elapsed: Duration) -> Self {
        let frontier = std::fs::read(dir.join("frontier.csv")).unwrap();
        let rows = String::from_utf8(frontier.clone())
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                Row {
                    method: f[0].to_owned(),
                    iteration: f[1].parse().unwrap(),
                    macs_ratio: f[3].parse().unwrap(),
                    accuracy: f[4].parse().unwrap(),
                }
            })
            .collect();
        let record: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("run.json")).unwrap()).unwrap();
        let uplink = record["cost"]["total_uplink_bytes"].as_u64().unwrap();
        Self {
            frontier,
            rows,
            uplink,
            elapsed,
        }
    }

    fn searched(&self, pick: impl Fn(&[&Row]) -> usize) -> &Row {
        let rows: Vec<&Row> = self.rows.iter().filter(|r| r.method == "decnas").collect();
        rows[pick(&rows)]
    }

    fn unpruned(&self) -> &Row {
        self.searched(|rows| rows.iter().position(|r| r.iteration == 0).unwrap())
    }

    fn last(&self) -> &Row {
        self.searched(|rows| (0..rows.len()).max_by_key(|&i| rows[i].iteration).unwrap())
    }

    fn baseline(&self) -> &Row {
        self.rows.iter().find(|r| r.method == "width_multiplier").unwrap()
    }
}

fn frontier_trend(seeds: &[RunResult]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, run) in (1..).zip(seeds) {
        let (unpruned, last, base) = (run.unpruned(), run.last(), run.baseline());
        let ok = last.macs_ratio <= 0.5 && unpruned.accuracy - last.accuracy <= 0.03 && last.accuracy >= base.accuracy;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: unpruned {:.4}, searched {:.4} at {:.3} MACs, width multiplier {:.4} at {:.3} MACs, margin {:+.4}",
            unpruned.accuracy,
            last.accuracy,
            last.macs_ratio,
            base.accuracy,
            base.macs_ratio,
            last.accuracy - base.accuracy
        ));
    }
    let elapsed: Duration = seeds.iter().map(|r| r.elapsed).sum();
    let pass = pass && elapsed < Duration::from_secs(30 * 60);
    verdict(pass, format!("{}; {:.0}s (limit 1800s)", parts.join("; "), elapsed.as_secs_f64()))
}

fn ablation(all_on: &RunResult, all_off: &RunResult, no_drop: &RunResult) -> Verdict {
    let off_ratio = all_off.uplink as f64 / all_on.uplink as f64;
    let drop_saving = 1.0 - all_on.uplink as f64 / no_drop.uplink as f64;
    let acc_change = all_on.last().accuracy - no_drop.last().accuracy;
    let elapsed = all_off.elapsed + no_drop.elapsed;
    // Early drop may cost at most one point; doing better than the no-drop run is fine.
    let pass = off_ratio >= 10.0 && drop_saving >= 0.5 && acc_change >= -0.01 && elapsed < Duration::from_secs(45 * 60);
    verdict(
        pass,
        format!(
            "all optimizations off: {off_ratio:.1}x uplink; early drop: -{:.1}% uplink, accuracy change {:+.4}; {:.0}s (limit 2700s)",
            drop_saving * 100.0,
            acc_change,
            elapsed.as_secs_f64()
        ),
    )
}

fn report(n: usize, v: &Verdict) {
    println!("criterion {n}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn main() {
    let quick = std::env::var("DECNAS_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let mut hard_failures = Vec::new();
    let mut check = |n: usize, v: Verdict, hard: bool| {
        report(n, &v);
        if hard && !v.pass {
            hard_failures.push(n);
        }
    };
    let minute = Duration::from_secs(60);
    check(1, timed(minute, gradients), true);
    check(2, timed(minute, fusion), true);
    check(3, timed(2 * minute, partitions), true);
    check(4, timed(minute, pruning), true);
    check(5, timed(Duration::from_secs(10), drop_schedule), true);

    if quick {
        println!("criteria 6-8: skipped (DECNAS_ACCEPTANCE=quick)");
    } else {
        let ws = Workspace::new();
        let desk = ws.config("desk", "");
        let seeds: Vec<RunResult> = (1..=3).map(|s| ws.run(&format!("seed{s}"), &desk, s, 8, true)).collect();
        check(6, frontier_trend(&seeds), false);

        let off = ws.config("all-off", "grouping = false\ndynamic_rounds = false\nearly_drop = false");
        let no_drop = ws.config("no-drop", "drop_percent = 0");
        let all_off = ws.run("all-off", &off, 1, 8, false);
        let no_drop = ws.run("no-drop", &no_drop, 1, 8, false);
        check(7, ablation(&seeds[0], &all_off, &no_drop), false);

        let single = ws.run("seed1-single-thread", &desk, 1, 1, true);
        let same = single.frontier == seeds[0].frontier;
        let elapsed = single.elapsed + seeds[0].elapsed;
        let v = verdict(
            same && elapsed < 60 * minute,
            format!(
                "frontier.csv at 1 and 8 threads {}; {:.0}s (limit 3600s)",
                if same { "byte-identical" } else { "differs" },
                elapsed.as_secs_f64()
            ),
        );
        check(8, v, true);
    }

    if !hard_failures.is_empty() {
        eprintln!("failed exact criteria: {hard_failures:?}");
        std::process::exit(1);
    }
}
