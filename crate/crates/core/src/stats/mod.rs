//! The experiment-analysis toolbox: grid enumeration, champion ranking,
//! balanced N-way ANOVA, F-distribution tail probabilities, pairwise run
//! comparison, and report writers.

pub mod anova;
pub mod compare;
pub mod grid;
pub mod report;
pub mod special;

pub use anova::{anova, partial_omega_squared, AnovaError, AnovaResult, AnovaRow, ObservationTable};
pub use compare::{pairwise_compare, CompareError, ComparisonReport, Metric};
pub use grid::{enumerate_grid, rank_configs, table2_grid_spec, table2_model_terms, GridError, GridSpec};
pub use special::{betainc, f_upper_tail, ln_gamma, SpecialError};
