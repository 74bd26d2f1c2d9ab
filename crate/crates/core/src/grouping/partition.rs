use serde::{Deserialize, Serialize};

use crate::data::{ClientSummary, DistributionVector};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use rand::{Rng, SeedableRng};

pub const DEFAULT_BALANCE_TOLERANCE: f64 = 1.1;

/// L1 distance between two class-distribution vectors; lies in `[0, 2]`.
pub fn manhattan_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("distribution lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: usize,
    pub client_ids: Vec<usize>,
    /// Total samples held by the members.
    pub d: u64,
    pub aggregate_v: DistributionVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<Group>,
    pub r: f64,
    /// Mean L1 distance of each group's distribution to the whole population's.
    pub mean_distance: f64,
    /// Set when the returned groups do not satisfy `max(d) <= r * min(d)`.
    pub balance_violated: bool,
}

impl Partition {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn imbalance(&self) -> f64 {
        let max = self.groups.iter().map(|g| g.d).max().unwrap_or(0);
        let min = self.groups.iter().map(|g| g.d).min().unwrap_or(0);
        if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        }
    }

    /// Builds a partition from explicit member lists (as client indices into `clients`).
    pub fn from_members(clients: &[ClientSummary], members: Vec<Vec<usize>>, r: f64) -> Result<Self> {
        let classes = clients.first().map_or(0, |c| c.class_counts.len());
        let all = population_vector(clients, classes);
        let mut groups = Vec::with_capacity(members.len());
        let mut dist_sum = 0.0;
        for (group_id, idxs) in members.into_iter().enumerate() {
            let mut counts = vec![0u64; classes];
            for &i in &idxs {
                for (acc, &c) in counts.iter_mut().zip(&clients[i].class_counts) {
                    *acc += c;
                }
            }
            let aggregate_v = DistributionVector::from_counts(&counts);
            if !idxs.is_empty() {
                dist_sum += manhattan_distance(aggregate_v.as_slice(), all.as_slice())?;
            }
            let mut client_ids: Vec<usize> = idxs.iter().map(|&i| clients[i].client_id).collect();
            client_ids.sort_unstable();
            groups.push(Group {
                group_id,
                client_ids,
                d: counts.iter().sum(),
                aggregate_v,
            });
        }
        let mut p = Self {
            mean_distance: dist_sum / groups.len().max(1) as f64,
            groups,
            r,
            balance_violated: false,
        };
        p.balance_violated = !(p.imbalance() <= r);
        Ok(p)
    }
}

fn population_vector(clients: &[ClientSummary], classes: usize) -> DistributionVector {
    let mut counts = vec![0u64; classes];
    for c in clients {
        for (acc, &n) in counts.iter_mut().zip(&c.class_counts) {
            *acc += n;
        }
    }
    DistributionVector::from_counts(&counts)
}

/// All clients in one group; used when grouping is disabled.
pub fn single_group(clients: &[ClientSummary]) -> Result<Partition> {
    Partition::from_members(clients, vec![(0..clients.len()).collect()], 1.0)
}

struct GroupState {
    counts: Vec<u64>,
    d: u64,
    distance: f64,
}

fn distance_with(state: &GroupState, extra: &[u64], all: &[f64]) -> f64 {
    let total = (state.d + extra.iter().sum::<u64>()) as f64;
    state
        .counts
        .iter()
        .zip(extra)
        .zip(all)
        .map(|((&a, &b), &p)| ((a + b) as f64 / total - p).abs())
        .sum()
}

/// Greedy size-balanced, distribution-aware partition into `k` groups.
///
/// Clients are taken largest first. Each goes to the group that most lowers
/// the mean distance to the population distribution, among groups that can
/// take it while keeping the partial partition within `max(d) <= r * min(d)`.
/// When no group qualifies the client goes to the smallest group. Ties go to
/// the lowest group id. A move/swap local search then polishes the result
/// without breaking balance.
pub fn greedy_partition(clients: &[ClientSummary], k: usize, r: f64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid("group count must be at least 1"));
    }
    if k > clients.len() {
        return Err(Error::invalid(format!("{k} groups for {} clients", clients.len())));
    }
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::invalid(format!("balance tolerance must be >= 1, got {r}")));
    }
    let classes = clients[0].class_counts.len();
    if clients.iter().any(|c| c.class_counts.len() != classes) {
        return Err(Error::invalid("clients disagree on class count"));
    }
    let all = population_vector(clients, classes);

    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by(|&a, &b| clients[b].total().cmp(&clients[a].total()).then(clients[a].client_id.cmp(&clients[b].client_id)));

    let mut groups: Vec<GroupState> = (0..k)
        .map(|_| GroupState {
            counts: vec![0; classes],
            d: 0,
            distance: 0.0,
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];

    for idx in order {
        let client = &clients[idx];
        let size = client.total();
        let mut best: Option<(usize, f64, f64)> = None;
        for g in 0..k {
            let new_d = groups[g].d + size;
            let min_after = groups
                .iter()
                .enumerate()
                .map(|(h, s)| if h == g { new_d } else { s.d })
                .min()
                .expect("k >= 1");
            if new_d as f64 > r * min_after as f64 {
                continue;
            }
            let new_dist = distance_with(&groups[g], &client.class_counts, all.as_slice());
            let delta = new_dist - groups[g].distance;
            if best.is_none_or(|(_, bd, _)| delta < bd) {
                best = Some((g, delta, new_dist));
            }
        }
        let (g, new_dist) = match best {
            Some((g, _, nd)) => (g, nd),
            None => {
                let g = (0..k).min_by_key(|&g| (groups[g].d, g)).expect("k >= 1");
                (g, distance_with(&groups[g], &client.class_counts, all.as_slice()))
            }
        };
        let state = &mut groups[g];
        for (acc, &c) in state.counts.iter_mut().zip(&client.class_counts) {
            *acc += c;
        }
        state.d += size;
        state.distance = new_dist;
        members[g].push(idx);
    }
    refine(clients, &mut groups, &mut members, r, all.as_slice());
    perturb_and_refine(clients, &mut groups, &mut members, r, all.as_slice());
    Partition::from_members(clients, members, r)
}

const KICKS: usize = 40;

fn quality(groups: &[GroupState], r: f64) -> (f64, f64) {
    (excess(groups.iter().map(|g| g.d), r), groups.iter().map(|g| g.distance).sum())
}

fn rebuild(clients: &[ClientSummary], members: &[Vec<usize>], all: &[f64]) -> Vec<GroupState> {
    members
        .iter()
        .map(|m| {
            let mut counts = vec![0u64; all.len()];
            for &i in m {
                for (acc, &c) in counts.iter_mut().zip(&clients[i].class_counts) {
                    *acc += c;
                }
            }
            let (counts, d, distance) = shifted(
                &GroupState {
                    counts,
                    d: 0,
                    distance: 0.0,
                },
                &vec![0; all.len()],
                &vec![0; all.len()],
                all,
            );
            GroupState { counts, d, distance }
        })
        .collect()
}

/// Iterated local search: random swaps knock the solution out of its local
/// optimum, `refine` repairs it, and the best state seen is kept. The kick
/// stream has a fixed seed so the partition depends on the input only.
fn perturb_and_refine(clients: &[ClientSummary], groups: &mut Vec<GroupState>, members: &mut Vec<Vec<usize>>, r: f64, all: &[f64]) {
    let k = groups.len();
    if k < 2 {
        return;
    }
    let mut rng = SimRng::seed_from_u64(0x9e37_79b9);
    let mut best_members = members.clone();
    let mut best_q = quality(groups, r);
    for _ in 0..KICKS {
        let mut cur = best_members.clone();
        for _ in 0..2 {
            let ga = rng.random_range(0..k);
            let gb = (ga + rng.random_range(1..k)) % k;
            if cur[ga].is_empty() || cur[gb].is_empty() {
                continue;
            }
            let ia = rng.random_range(0..cur[ga].len());
            let ib = rng.random_range(0..cur[gb].len());
            let (a, b) = (cur[ga][ia], cur[gb][ib]);
            cur[ga][ia] = b;
            cur[gb][ib] = a;
        }
        let mut state = rebuild(clients, &cur, all);
        refine(clients, &mut state, &mut cur, r, all);
        let q = quality(&state, r);
        if q.0 < best_q.0 - 1e-12 || ((q.0 - best_q.0).abs() <= 1e-12 && q.1 < best_q.1 - 1e-12) {
            best_q = q;
            best_members = cur;
        }
    }
    *members = best_members;
    *groups = rebuild(clients, members, all);
}

/// Sample excess over the balance bound; zero when balanced.
fn excess(sizes: impl Iterator<Item = u64> + Clone, r: f64) -> f64 {
    let max = sizes.clone().max().unwrap_or(0) as f64;
    let min = sizes.min().unwrap_or(0) as f64;
    (max - r * min).max(0.0)
}

fn shifted(state: &GroupState, add: &[u64], remove: &[u64], all: &[f64]) -> (Vec<u64>, u64, f64) {
    let counts: Vec<u64> = state
        .counts
        .iter()
        .zip(add)
        .zip(remove)
        .map(|((&c, &a), &r)| c + a - r)
        .collect();
    let d: u64 = counts.iter().sum();
    let dist = if d == 0 {
        0.0
    } else {
        counts.iter().zip(all).map(|(&c, &p)| (c as f64 / d as f64 - p).abs()).sum()
    };
    (counts, d, dist)
}

/// Best-improvement local search over single moves and pairwise swaps.
/// A step is taken when it lowers the balance excess, or keeps it at the
/// same value while lowering the summed distance.
fn refine(clients: &[ClientSummary], groups: &mut [GroupState], members: &mut [Vec<usize>], r: f64, all: &[f64]) {
    const EPS: f64 = 1e-12;
    let k = groups.len();
    let classes = all.len();
    let zero = vec![0u64; classes];
    let mut owner = vec![0usize; clients.len()];
    for (g, m) in members.iter().enumerate() {
        for &i in m {
            owner[i] = g;
        }
    }
    for _ in 0..10_000 {
        let sizes: Vec<u64> = groups.iter().map(|g| g.d).collect();
        let cur_excess = excess(sizes.iter().copied(), r);
        // (excess, distance change, client a, target group, swap partner)
        let mut best: Option<(f64, f64, usize, usize, Option<usize>)> = None;
        let mut consider = |ex: f64, delta: f64, a: usize, g: usize, b: Option<usize>| {
            let improves = ex < cur_excess - EPS || ((ex - cur_excess).abs() <= EPS && delta < -EPS);
            if improves && best.is_none_or(|(bx, bd, ..)| ex < bx - EPS || ((ex - bx).abs() <= EPS && delta < bd - EPS)) {
                best = Some((ex, delta, a, g, b));
            }
        };
        for a in 0..clients.len() {
            let ga = owner[a];
            let ca = &clients[a].class_counts;
            if members[ga].len() > 1 {
                let (_, da, dist_a) = shifted(&groups[ga], &zero, ca, all);
                for g in (0..k).filter(|&g| g != ga) {
                    let (_, dg, dist_g) = shifted(&groups[g], ca, &zero, all);
                    let ex = excess(
                        sizes.iter().enumerate().map(|(h, &s)| if h == ga { da } else if h == g { dg } else { s }),
                        r,
                    );
                    let delta = dist_a + dist_g - groups[ga].distance - groups[g].distance;
                    consider(ex, delta, a, g, None);
                }
            }
            for b in (a + 1)..clients.len() {
                let gb = owner[b];
                if gb == ga {
                    continue;
                }
                let cb = &clients[b].class_counts;
                let (_, da, dist_a) = shifted(&groups[ga], cb, ca, all);
                let (_, db, dist_b) = shifted(&groups[gb], ca, cb, all);
                let ex = excess(
                    sizes.iter().enumerate().map(|(h, &s)| if h == ga { da } else if h == gb { db } else { s }),
                    r,
                );
                let delta = dist_a + dist_b - groups[ga].distance - groups[gb].distance;
                consider(ex, delta, a, gb, Some(b));
            }
        }
        let Some((_, _, a, g, partner)) = best else { break };
        let ga = owner[a];
        let ca = clients[a].class_counts.clone();
        let cb = partner.map_or_else(|| zero.clone(), |b| clients[b].class_counts.clone());
        let (counts, d, distance) = shifted(&groups[ga], &cb, &ca, all);
        groups[ga] = GroupState { counts, d, distance };
        let (counts, d, distance) = shifted(&groups[g], &ca, &cb, all);
        groups[g] = GroupState { counts, d, distance };
        members[ga].retain(|&i| i != a);
        members[g].push(a);
        owner[a] = g;
        if let Some(b) = partner {
            members[g].retain(|&i| i != b);
            members[ga].push(b);
            owner[b] = ga;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: usize, counts: Vec<u64>) -> ClientSummary {
        ClientSummary {
            client_id: id,
            class_counts: counts,
        }
    }

    #[test]
    fn distances() {
        assert_eq!(manhattan_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(manhattan_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(manhattan_distance(&[0.5, 0.5], &[0.25, 0.75]).unwrap(), 0.5);
        assert!(manhattan_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn sizes_four_three_two_one() {
        let clients: Vec<_> = [4u64, 3, 2, 1].iter().enumerate().map(|(i, &s)| summary(i, vec![s])).collect();
        let p = greedy_partition(&clients, 2, 1.1).unwrap();
        assert_eq!(p.groups[0].client_ids, vec![0, 3]);
        assert_eq!(p.groups[1].client_ids, vec![1, 2]);
        assert_eq!((p.groups[0].d, p.groups[1].d), (5, 5));
        assert!(!p.balance_violated);
    }

    #[test]
    fn one_group_has_zero_distance() {
        let clients: Vec<_> = (0..5).map(|i| summary(i, vec![i as u64 + 1, 3])).collect();
        let p = greedy_partition(&clients, 1, 1.1).unwrap();
        assert_eq!(p.groups[0].client_ids.len(), 5);
        assert!(p.mean_distance.abs() < 1e-12);
    }

    #[test]
    fn one_hot_clients_split_into_quarter_mixtures() {
        let clients: Vec<_> = (0..8)
            .map(|i| {
                let mut c = vec![0u64; 8];
                c[i] = 10;
                summary(i, c)
            })
            .collect();
        let p = greedy_partition(&clients, 2, 1.1).unwrap();
        for g in &p.groups {
            let v = g.aggregate_v.as_slice();
            assert_eq!(v.iter().filter(|&&x| (x - 0.25).abs() < 1e-12).count(), 4);
        }
        // Every 4/4 split is optimal here: each group sits at distance 1.
        assert!((p.mean_distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giant_client_flags_violation() {
        let clients = vec![summary(0, vec![100, 0]), summary(1, vec![0, 5]), summary(2, vec![3, 3])];
        let p = greedy_partition(&clients, 2, 1.1).unwrap();
        assert!(p.balance_violated);
        assert_eq!(p.groups.iter().map(|g| g.client_ids.len()).sum::<usize>(), 3);
    }

    #[test]
    fn argument_errors() {
        let clients = vec![summary(0, vec![1, 1])];
        assert!(greedy_partition(&clients, 2, 1.1).is_err());
        assert!(greedy_partition(&clients, 0, 1.1).is_err());
        assert!(greedy_partition(&clients, 1, 0.5).is_err());
    }
}
