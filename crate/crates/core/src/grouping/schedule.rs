use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub candidate_id: usize,
    pub group_id: usize,
    /// How many earlier candidates must release this group first.
    pub wave: usize,
}

/// Assigns candidates to groups. The first wave draws distinct groups at
/// random; once all groups are busy, each waiting candidate takes the group
/// that frees up first, i.e. groups are reused in the order they were handed
/// out (training times are uniform in the simulation).
pub fn schedule(group_count: usize, candidate_ids: &[usize], rng: &mut SimRng) -> Vec<Assignment> {
    assert!(group_count > 0, "schedule needs at least one group");
    let mut order: Vec<usize> = (0..group_count).collect();
    order.shuffle(rng);
    candidate_ids
        .iter()
        .enumerate()
        .map(|(i, &candidate_id)| Assignment {
            candidate_id,
            group_id: order[i % group_count],
            wave: i / group_count,
        })
        .collect()
}
