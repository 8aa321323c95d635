use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// `module()` names the component that raised it and `hint()` suggests a
/// remedy; the CLI prints both.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("input contains no observations")]
    EmptyInput,

    #[error("first stage fails: {0}")]
    FirstStage(String),

    #[error("two-group mode needs exactly two groups and two periods, found groups {groups:?} and periods {periods:?}")]
    TwoGroupLabels { groups: Vec<i64>, periods: Vec<i64> },

    #[error("no observations in cell d={d}, g={g}, t={t}")]
    MissingCell { d: u32, g: i64, t: i64 },

    #[error("no observations in group {g}, period {t}")]
    MissingGroupPeriod { g: i64, t: i64 },

    #[error("degenerate denominator {value:e} in {what}")]
    WeakDesign { what: &'static str, value: f64 },

    #[error("treatment distribution in the control group is not stable (max share change {max_change:.4})")]
    UnstableControl { max_change: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("unbounded support carries nonzero endpoint mass {mass}")]
    UnboundedMass { mass: f64 },

    #[error("outcome {y} lies outside declared support [{lo}, {hi}]")]
    OutsideSupport { y: f64, lo: f64, hi: f64 },

    #[error("share of units with d={d} identical in both treatment-group periods")]
    ZeroSwitcherShare { d: u32 },

    #[error("estimated density {value:e} below floor {floor:e} at y={at}")]
    DensityFloor { value: f64, floor: f64, at: f64 },

    #[error("{failed} of {total} bootstrap replicates failed ({census})")]
    BootstrapFailures {
        failed: usize,
        total: usize,
        census: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no group has a stable treatment distribution")]
    EmptyStableSet,

    #[error("neither an increasing nor a decreasing supergroup is present")]
    NoTreatmentSupergroup,

    #[error("period {0} not present in data")]
    MissingPeriod(i64),

    #[error("true effect undefined: {0}")]
    UndefinedTruth(String),

    #[error("operation requires a binary treatment, found level {0}")]
    NotBinary(u32),
}

impl Error {
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            Io(_) | Csv(_) | MissingColumn(_) | Parse { .. } | MissingValue { .. } | EmptyInput => {
                "dataset"
            }
            FirstStage(_) | TwoGroupLabels { .. } | MissingGroupPeriod { .. } => "dataset",
            MissingCell { .. } | WeakDesign { .. } | UnstableControl { .. } => "estimators",
            ZeroSwitcherShare { .. } | NotBinary(_) => "estimators",
            EmptySample => "empirical",
            UnboundedMass { .. } | OutsideSupport { .. } => "bounds",
            DensityFloor { .. } | BootstrapFailures { .. } => "inference",
            EmptyStableSet | NoTreatmentSupergroup => "multigroup",
            MissingPeriod(_) => "placebo",
            UndefinedTruth(_) => "simulate",
            InvalidConfig(_) => "config",
        }
    }

    pub fn hint(&self) -> &'static str {
        use Error::*;
        match self {
            Io(_) => "check that the input path exists and is readable",
            Csv(_) => "check the delimiter and that every row has the header's field count",
            MissingColumn(_) => "map columns with --y/--d/--g/--t",
            Parse { .. } => "d must be a non-negative integer, g and t integers, y a finite number",
            MissingValue { .. } => "drop or impute rows with missing values before estimation",
            EmptyInput => "supply a file with a header and at least one data row",
            FirstStage(_) => {
                "swap the group labels, or redefine the treatment as 1 - D so that it rises in the treatment group"
            }
            TwoGroupLabels { .. } => "use --supergroups for many-group data",
            MissingGroupPeriod { .. } => "every group needs observations in both periods",
            MissingCell { .. } => "this estimator needs every listed cell populated; try `did`",
            WeakDesign { .. } => "the treatment barely moves; a Wald ratio is not informative here",
            UnstableControl { .. } => {
                "the control group's treatment shares changed; use `bounds` or raise --stable-tol"
            }
            EmptySample => "the empirical CDF needs at least one point",
            UnboundedMass { .. } => "declare a finite outcome support with --support",
            OutsideSupport { .. } => "widen --support to cover every outcome",
            ZeroSwitcherShare { .. } => "there are no switchers at this treatment level",
            DensityFloor { .. } => "use bootstrap inference (--bootstrap B) for this estimator",
            BootstrapFailures { .. } => {
                "resamples often lose cells; increase sample size or use the cluster scheme"
            }
            InvalidConfig(_) => "fix the offending option",
            EmptyStableSet => "raise --pvalue-threshold or supply a known supergroup map",
            NoTreatmentSupergroup => "every group looks stable; there is no variation to exploit",
            MissingPeriod(_) => "choose an existing pair with --placebo-pair",
            UndefinedTruth(_) => "make the treatment-group thresholds differ across periods",
            NotBinary(_) => "bounds and quantile effects are implemented for binary treatments only",
        }
    }

    /// Variant name, used to tally failures.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            Io(_) => "io",
            Csv(_) => "csv",
            MissingColumn(_) => "missing_column",
            Parse { .. } => "parse",
            MissingValue { .. } => "missing_value",
            EmptyInput => "empty_input",
            FirstStage(_) => "first_stage",
            TwoGroupLabels { .. } => "two_group_labels",
            MissingCell { .. } => "missing_cell",
            MissingGroupPeriod { .. } => "missing_group_period",
            WeakDesign { .. } => "weak_design",
            UnstableControl { .. } => "unstable_control",
            EmptySample => "empty_sample",
            UnboundedMass { .. } => "unbounded_mass",
            OutsideSupport { .. } => "outside_support",
            ZeroSwitcherShare { .. } => "zero_switcher_share",
            DensityFloor { .. } => "density_floor",
            BootstrapFailures { .. } => "bootstrap_failures",
            InvalidConfig(_) => "invalid_config",
            EmptyStableSet => "empty_stable_set",
            NoTreatmentSupergroup => "no_treatment_supergroup",
            MissingPeriod(_) => "missing_period",
            UndefinedTruth(_) => "undefined_truth",
            NotBinary(_) => "not_binary",
        }
    }

    /// Errors caused by the data failing an identifying precondition, as
    /// opposed to bad input or configuration.
    pub fn is_design(&self) -> bool {
        use Error::*;
        !matches!(
            self,
            Io(_) | Csv(_) | MissingColumn(_) | Parse { .. } | MissingValue { .. } | InvalidConfig(_)
        )
    }
}
