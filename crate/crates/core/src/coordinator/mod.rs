//! The search loop: candidate fine-tuning on client groups, weighted fusion,
//! early dropping, model selection, and FedAvg tuning.

mod client;
mod fedavg;
mod fusion;
mod rounds;
mod search;

pub use client::{client_operation, ClientReport, LocalTraining};
pub use fedavg::{fl_tune, fl_tune_observed, test_accuracy, validation_accuracy, FlTuneConfig};
pub use fusion::{acc_degradation, drop_candidates, fuse_accuracy, fuse_gradients, CandidateState};
pub use rounds::{dynamic_round_number, RoundSchedule, RoundTier};
pub use search::{
    cloud_one_round, run_search, BudgetConfig, CandidateReport, IterationReport, RoundContext, RoundLog, SearchConfig, SearchOutcome,
    Toggles,
};
