//! Trial matrix, measures, statistics and result files.

pub mod matrix;
pub mod measures;
pub mod report;
pub mod selftest;
pub mod stats;

pub use matrix::{
    matrix_specs, read_measures_csv, run_matrix, run_one, run_specs, write_measures_csv,
    write_timeseries, MatrixError, MatrixResults, MeasureRow, RunOptions, TrialResult,
};
pub use measures::{compute_measures, oscillation_coefficient, Measure, MeasureSet};
pub use report::{group_summaries, render_tables, stats_report, write_outputs, StatsReport};
pub use selftest::{run_all as run_selftest, Check};
pub use stats::{anova4, chi2_independence, BONFERRONI_P};
