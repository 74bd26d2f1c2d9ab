mod support;

use decnas_core::grouping::greedy_partition;
use std::collections::BTreeSet;

fn assignment_of(p: &decnas_core::grouping::Partition, n: usize) -> Vec<usize> {
    let mut a = vec![usize::MAX; n];
    for g in &p.groups {
        for &id in &g.client_ids {
            a[id] = g.group_id;
        }
    }
    a
}

#[test]
fn greedy_beats_random_balanced_on_skewed_federations() {
    let mut wins = 0;
    let mut violations = 0;
    for seed in 0..100 {
        let clients = support::skewed_summaries(seed, 100, 3000, 8, 2);
        let ids: Vec<usize> = clients.iter().map(|c| c.client_id).collect();
        let p = greedy_partition(&clients, 10, 1.1).unwrap();
        let covered: BTreeSet<usize> = p.groups.iter().flat_map(|g| g.client_ids.iter().copied()).collect();
        assert_eq!(covered.len(), clients.len());
        assert_eq!(covered, ids.iter().copied().collect());
        if p.balance_violated {
            violations += 1;
        } else {
            assert!(p.imbalance() <= 1.1);
        }
        let (random_mean, _) = support::score(&clients, &support::random_balanced(&clients, 10, seed + 1000), 10);
        if p.mean_distance <= random_mean {
            wins += 1;
        }
    }
    assert_eq!(violations, 0);
    assert!(wins >= 95, "greedy won {wins}/100");
}

#[test]
fn partition_of_two_hundred_clients_is_fast() {
    let clients = support::skewed_summaries(7, 200, 3500, 8, 2);
    let t = std::time::Instant::now();
    let p = greedy_partition(&clients, 10, 1.1).unwrap();
    assert!(!p.balance_violated);
    assert!(t.elapsed().as_secs_f64() < 5.0, "{:?}", t.elapsed());
}

#[test]
fn greedy_near_brute_force_on_small_instances() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let n = 4 + (seed as usize % 7);
        let k = 2 + (seed as usize % 2);
        let clients = support::small_instance(seed, n, 4);
        let p = greedy_partition(&clients, k, 1.1).unwrap();
        let Some(opt) = support::brute_force(&clients, k, 1.1) else { continue };
        let (mean, _) = support::score(&clients, &assignment_of(&p, n), k);
        assert!((mean - p.mean_distance).abs() < 1e-9);
        let ratio = if opt < 1e-12 { if mean < 1e-12 { 1.0 } else { f64::INFINITY } } else { mean / opt };
        worst = worst.max(ratio);
    }
    assert!(worst <= 1.2);
}
