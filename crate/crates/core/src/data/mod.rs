//! Desk-scale datasets and their distribution over simulated clients.

mod image_dir;
mod shard;
mod synthetic;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use image_dir::load_image_dir;
pub use shard::{shard_clients, ShardMode};
pub use synthetic::{synthetic_dataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::nn::{Shape3, Tensor};
use crate::rng::SimRng;

/// Minimum samples a client needs to yield non-empty train/validation/test shards.
pub const MIN_CLIENT_SAMPLES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[h, w, c]`
    pub features: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Directory(std::path::PathBuf),
}

/// Loads a labeled sample set and checks every class is represented.
pub fn load_dataset(source: &DataSource, input: Shape3, class_count: usize) -> Result<Vec<Sample>> {
    let samples = match source {
        DataSource::Synthetic(spec) => synthetic_dataset(spec, input, class_count)?,
        DataSource::Directory(path) => load_image_dir(path, input, class_count)?,
    };
    let counts = class_counts(samples.iter().map(|s| s.label), class_count);
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientSamples(format!("class {missing} has no samples")));
    }
    Ok(samples)
}

pub fn class_counts(labels: impl IntoIterator<Item = usize>, class_count: usize) -> Vec<u64> {
    let mut counts = vec![0u64; class_count];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

/// Fraction of a client's samples in each class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionVector(Vec<f64>);

impl DistributionVector {
    /// Normalizes raw counts. An all-zero count vector yields the zero vector.
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Self(vec![0.0; counts.len()]);
        }
        Self(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn from_weights(v: Vec<f64>) -> Result<Self> {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("distribution must be non-negative and sum to 1"));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn distribution_vector(client: &ClientDataset) -> DistributionVector {
    DistributionVector::from_counts(&client.class_counts)
}

#[derive(Clone, Debug)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Label counts over all three splits.
    pub class_counts: Vec<u64>,
    pub distribution: DistributionVector,
}

impl ClientDataset {
    /// Splits a client's samples 6:2:2; fails below [`MIN_CLIENT_SAMPLES`].
    pub fn new(client_id: usize, samples: Vec<Sample>, class_count: usize, rng: &mut SimRng) -> Result<Self> {
        let class_counts = class_counts(samples.iter().map(|s| s.label), class_count);
        let (train, validation, test) = split_client(samples, rng)?;
        let distribution = DistributionVector::from_counts(&class_counts);
        Ok(Self {
            client_id,
            train,
            validation,
            test,
            class_counts,
            distribution,
        })
    }

    pub fn train_num(&self) -> usize {
        self.train.len()
    }

    /// Samples a client tests candidates on during search: its validation
    /// split. The test split is reserved for final accuracy.
    pub fn test_num(&self) -> usize {
        self.validation.len()
    }

    pub fn sample_count(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to the
/// lower index.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

pub const SPLIT_WEIGHTS: [f64; 3] = [0.6, 0.2, 0.2];

/// Seeded 6:2:2 split into (train, validation, test), stratified by label
/// where counts permit.
pub fn split_client(mut samples: Vec<Sample>, rng: &mut SimRng) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    let n = samples.len();
    if n < MIN_CLIENT_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "client has {n} samples, needs at least {MIN_CLIENT_SAMPLES}"
        )));
    }
    let targets = apportion(n, &SPLIT_WEIGHTS);
    samples.shuffle(rng);
    // Group by label (stable after the shuffle), then deal each position to
    // the split furthest behind its pro-rata share.
    samples.sort_by_key(|s| s.label);
    let mut parts: [Vec<Sample>; 3] = Default::default();
    for (pos, sample) in samples.into_iter().enumerate() {
        let progress = (pos + 1) as f64 / n as f64;
        let dest = (0..3)
            .filter(|&s| parts[s].len() < targets[s])
            .max_by(|&a, &b| {
                let da = targets[a] as f64 * progress - parts[a].len() as f64;
                let db = targets[b] as f64 * progress - parts[b].len() as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("capacity remains while samples remain");
        parts[dest].push(sample);
    }
    let [train, validation, test] = parts;
    Ok((train, validation, test))
}

/// A pool of clients available for training.
#[derive(Clone, Debug)]
pub struct Federation {
    pub clients: Vec<ClientDataset>,
    pub class_count: usize,
}

/// What the cloud learns about a client: its id and per-class sample counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientSummary {
    pub client_id: usize,
    pub class_counts: Vec<u64>,
}

impl ClientSummary {
    pub fn total(&self) -> u64 {
        self.class_counts.iter().sum()
    }
}

impl Federation {
    pub fn new(clients: Vec<ClientDataset>, class_count: usize) -> Result<Self> {
        let mut ids: Vec<usize> = clients.iter().map(|c| c.client_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate client ids"));
        }
        if clients.is_empty() {
            return Err(Error::EmptySamples("federation has no clients".into()));
        }
        Ok(Self { clients, class_count })
    }

    pub fn summaries(&self) -> Vec<ClientSummary> {
        self.clients
            .iter()
            .map(|c| ClientSummary {
                client_id: c.client_id,
                class_counts: c.class_counts.clone(),
            })
            .collect()
    }

    pub fn client(&self, client_id: usize) -> Option<&ClientDataset> {
        self.clients.iter().find(|c| c.client_id == client_id)
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> {
        self.clients.iter().flat_map(|c| c.test.iter())
    }

    pub fn validation_samples(&self) -> impl Iterator<Item = &Sample> {
        self.clients.iter().flat_map(|c| c.validation.iter())
    }
}

/// Copies samples into one `[n, h, w, c]` batch.
pub fn stack<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> (Tensor<f32>, Vec<usize>) {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut shape = vec![0];
    for s in samples {
        if labels.is_empty() {
            shape.extend_from_slice(s.features.shape());
        }
        values.extend_from_slice(s.features.values());
        labels.push(s.label);
    }
    shape[0] = labels.len();
    if labels.is_empty() {
        shape = vec![0, 0, 0, 0];
    }
    (Tensor::from_parts_unchecked(shape, values), labels)
}
