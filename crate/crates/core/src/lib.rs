//! Fuzzy difference-in-differences.
//!
//! Point estimators (Wald-DID, Wald-TC, Wald-CIC, local quantile effects),
//! partial-identification bounds for designs whose control group's
//! treatment rate moves, many-group aggregation, influence-function and
//! bootstrap inference, placebo diagnostics, and a simulation harness with
//! closed-form truths.

pub mod bounds;
pub mod dataset;
pub mod empirical;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod multigroup;
mod num;
pub mod placebo;
pub mod simulate;

pub use dataset::{
    check_design, describe_design, load_table, read_table, CellTable, Dataset, DesignInfo,
    Observation, Schema,
};
pub use empirical::{clip01, Envelope, QqTransform, StepCdf};
pub use error::{Error, Result};
pub use estimators::{
    did_decomposition, estimate, lqte, switcher_cdf, wald_cic, wald_did, wald_tc, Ci, CiMethod,
    Decomposition, Estimate, EstimateKind, SwitcherCdf,
};
pub use bounds::{bootstrap_bounds, cic_bounds, tc_bounds, BoundsMethod, BoundsResult};
pub use inference::{BootstrapConfig, BootstrapResult, Scheme};
pub use multigroup::{
    acr_weights, aggregate, chi2_stability, classify_supergroups, AcrWeights, AggregateEstimate,
    SupergroupMap,
};
