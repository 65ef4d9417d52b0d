//! Diagnostics: quantisation residual against NFE, duration distribution
//! statistics, sampling cost, and their CSV reports.

mod bench;
mod report;
mod residual;
mod stats;

pub use bench::{bench_sampling, BenchResult, BenchRow};
pub use report::{
    write_bench_csv, write_dist_csv, write_report, write_residual_csv, BenchReport, DistReport, BENCH_HEADER,
    DIST_HEADER, RESIDUAL_HEADER,
};
pub use residual::{residual_vs_nfe, CurveRow, ResidualCurve, DEFAULT_NFE_GRID};
pub use stats::{
    declared_modes, dist_stats, group_outputs, group_reference, ClassStats, DistStats, MIN_TOKENS_PER_CLASS,
};
