//! Monte Carlo and prescribed-trajectory experiments.

pub mod imbalance;
pub mod landscape;
pub mod shrinkwrap;

pub use imbalance::{
    mcc_j_correlation, run_imbalance_sim, Classifier, CorrelationResult, ImbalanceSimConfig,
    ImbalanceSummary, ImbalanceTable, TrialRow,
};
pub use landscape::{landscape_scan, LandscapeConfig, LandscapeMatrix};
pub use shrinkwrap::{run_shrinkwrap, ShrinkwrapConfig, ShrinkwrapRecord, ShrinkwrapTrace};
