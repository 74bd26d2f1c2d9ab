//! Run configuration: a flat, sectioned `key = value` file (TOML syntax).

use std::path::{Path, PathBuf};

use decnas_core::coordinator::{BudgetConfig, FlTuneConfig, LocalTraining, RoundSchedule, SearchConfig, Toggles};
use decnas_core::data::{DataSource, ShardMode, SyntheticSpec};
use decnas_core::nn::{templates, Architecture, Shape3};
use decnas_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `synthetic` or a directory with one image subdirectory per class.
    pub source: String,
    pub samples: usize,
    pub noise: f64,
    pub jitter: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub clients: usize,
    /// `label_skew` or `iid`.
    pub shard: String,
    pub classes_per_client: usize,
    pub size_sigma: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            samples: 6000,
            noise: 0.8,
            jitter: 1.5,
            height: 32,
            width: 32,
            channels: 1,
            classes: 8,
            clients: 200,
            shard: "label_skew".into(),
            classes_per_client: 2,
            size_sigma: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub template: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            template: "convnet-small".into(),
        }
    }
}

/// FedAvg used to produce the starting model. `rounds = 0` starts the search
/// from freshly initialised weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub rounds: usize,
    pub clients_per_round: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            rounds: 200,
            clients_per_round: 50,
        }
    }
}

/// FedAvg applied to every frontier model after the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlTuneSection {
    pub rounds: usize,
    pub clients_per_round: usize,
}

impl Default for FlTuneSection {
    fn default() -> Self {
        Self {
            rounds: 80,
            clients_per_round: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub groups: usize,
    pub balance_tolerance: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub drop_percent: f64,
    pub round_schedule: RoundSchedule,
    /// Fraction of the starting MACs removed by the first iteration.
    pub budget_step: f64,
    pub budget_decay: f64,
    /// Target MACs as a fraction of the starting model's.
    pub final_budget: f64,
    pub grouping: bool,
    pub dynamic_rounds: bool,
    pub early_drop: bool,
    /// One group holding every client; rows are tagged `oracle`.
    pub oracle: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            groups: 10,
            balance_tolerance: 1.1,
            epochs: 2,
            lr: 0.05,
            batch_size: 32,
            drop_percent: 33.0,
            round_schedule: "1-5:2,6-10:3,11-15:4,16-:5".parse().expect("valid default"),
            budget_step: 0.05,
            budget_decay: 0.93,
            final_budget: 0.5,
            grouping: true,
            dynamic_rounds: true,
            early_drop: true,
            oracle: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Every n-th search iteration gets a fine-tuned frontier row (plus the first and last).
    pub frontier_stride: usize,
    pub seconds_per_mac: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            frontier_stride: 4,
            seconds_per_mac: decnas_core::cost::DEFAULT_SECONDS_PER_MAC,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub search: SearchSection,
    pub fl_tune: FlTuneSection,
    pub output: OutputSection,
}

/// Seed-stream tags for the driver's own FedAvg runs.
mod tag {
    pub const PRETRAIN: u64 = 101;
    pub const FINAL_TUNE: u64 = 102;
    pub const BASELINE: u64 = 103;
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        let d = &self.data;
        if d.classes < 2 {
            return err("data.classes must be at least 2".into());
        }
        if d.clients == 0 {
            return err("data.clients must be at least 1".into());
        }
        if d.shard != "iid" && d.shard != "label_skew" {
            return err(format!("data.shard must be `iid` or `label_skew`, got `{}`", d.shard));
        }
        if d.shard == "label_skew" && !(1..=d.classes).contains(&d.classes_per_client) {
            return err(format!("data.classes_per_client must be in 1..={}", d.classes));
        }
        self.architecture()?;
        for (name, cpr) in [("pretrain", self.pretrain.clients_per_round), ("fl_tune", self.fl_tune.clients_per_round)] {
            if cpr == 0 {
                return err(format!("{name}.clients_per_round must be at least 1"));
            }
        }
        if self.fl_tune.rounds == 0 {
            return err("fl_tune.rounds must be at least 1".into());
        }
        if self.output.frontier_stride == 0 {
            return err("output.frontier_stride must be at least 1".into());
        }
        if !(self.output.seconds_per_mac >= 0.0 && self.output.seconds_per_mac.is_finite()) {
            return err("output.seconds_per_mac must be >= 0".into());
        }
        self.search_config().validate().map_err(|e| ConfigError(format!("search: {e}")))
    }

    pub fn input_shape(&self) -> Shape3 {
        Shape3 {
            h: self.data.height,
            w: self.data.width,
            c: self.data.channels,
        }
    }

    pub fn architecture(&self) -> Result<Architecture, ConfigError> {
        templates::by_name(&self.model.template, self.input_shape(), self.data.classes)
            .map_err(|e| ConfigError(format!("model.template: {e}")))
    }

    pub fn data_source(&self) -> DataSource {
        if self.data.source == "synthetic" {
            let mut spec = SyntheticSpec::new(self.run.seed, self.data.samples);
            spec.noise = self.data.noise;
            spec.jitter = self.data.jitter;
            DataSource::Synthetic(spec)
        } else {
            DataSource::Directory(PathBuf::from(&self.data.source))
        }
    }

    pub fn shard_mode(&self) -> ShardMode {
        if self.data.shard == "iid" {
            ShardMode::Iid
        } else {
            ShardMode::LabelSkew {
                classes_per_client: self.data.classes_per_client,
                size_sigma: self.data.size_sigma,
            }
        }
    }

    pub fn training(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.search.epochs,
            lr: self.search.lr,
            batch_size: self.search.batch_size,
        }
    }

    pub fn method(&self) -> &'static str {
        if self.search.oracle {
            "oracle"
        } else {
            "decnas"
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            seed: self.run.seed,
            groups: s.groups,
            balance_tolerance: s.balance_tolerance,
            training: self.training(),
            drop_percent: s.drop_percent,
            round_schedule: s.round_schedule.clone(),
            budget: BudgetConfig {
                delta_fraction: s.budget_step,
                decay: s.budget_decay,
                final_fraction: s.final_budget,
            },
            toggles: Toggles {
                grouping: s.grouping && !s.oracle,
                dynamic_rounds: s.dynamic_rounds,
                early_drop: s.early_drop,
            },
        }
    }

    fn fedavg(&self, rounds: usize, clients_per_round: usize, tags: &[u64]) -> FlTuneConfig {
        FlTuneConfig {
            rounds,
            clients_per_round,
            training: self.training(),
            seed: derive_seed(self.run.seed, tags),
        }
    }

    pub fn pretrain_config(&self) -> Option<FlTuneConfig> {
        (self.pretrain.rounds > 0).then(|| self.fedavg(self.pretrain.rounds, self.pretrain.clients_per_round, &[tag::PRETRAIN]))
    }

    /// Final tuning of the model selected at `iteration` (0 = starting model).
    pub fn final_tune_config(&self, iteration: usize) -> FlTuneConfig {
        self.fedavg(self.fl_tune.rounds, self.fl_tune.clients_per_round, &[tag::FINAL_TUNE, iteration as u64])
    }

    /// From-scratch training of a width-multiplier baseline; it gets the
    /// pretraining and final-tuning rounds of a search run combined.
    pub fn baseline_config(&self, factor: f64) -> FlTuneConfig {
        let rounds = self.pretrain.rounds + self.fl_tune.rounds;
        self.fedavg(rounds, self.fl_tune.clients_per_round, &[tag::BASELINE, factor.to_bits()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_and_schedule() {
        let c = RunConfig::from_toml("[search]\nround_schedule = \"1-5:5,7-10:10,11-15:15,16-:20\"\ndrop_percent = 0\n").unwrap();
        assert_eq!(c.search.round_schedule, decnas_core::coordinator::RoundSchedule::imagenet());
        assert_eq!(c.search.drop_percent, 0.0);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = RunConfig::from_toml("[search]\ngroups = 4\nbogus = 1\n").unwrap_err().0;
        assert!(e.contains("bogus") && e.contains("line 3"), "{e}");
        let e = RunConfig::from_toml("[nope]\n").unwrap_err().0;
        assert!(e.contains("nope"), "{e}");
    }

    #[test]
    fn semantic_errors() {
        for bad in [
            "[search]\ndrop_percent = 120",
            "[search]\nepochs = 0",
            "[data]\nshard = \"dirichlet\"",
            "[model]\ntemplate = \"resnet\"",
            "[search]\nround_schedule = \"1-5:0\"",
            "[fl_tune]\nrounds = 0",
        ] {
            assert!(RunConfig::from_toml(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn oracle_disables_grouping() {
        let c = RunConfig::from_toml("[search]\noracle = true\n").unwrap();
        assert!(!c.search_config().toggles.grouping);
        assert_eq!(c.method(), "oracle");
    }
}
