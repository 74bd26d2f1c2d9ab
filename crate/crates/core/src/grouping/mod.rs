//! Client partitioning into balanced, distribution-representative groups and
//! candidate-to-group scheduling.

mod partition;
mod schedule;

pub use partition::{greedy_partition, manhattan_distance, single_group, Group, Partition, DEFAULT_BALANCE_TOLERANCE};
pub use schedule::{schedule, Assignment};
