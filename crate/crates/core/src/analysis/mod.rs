//! Offline analysis: optical-depth fits, convergence reports and the
//! training-time scaling benchmark.

mod bench;
mod fit;
mod report;

pub use self::bench::{bench_scaling, synthetic_dataset, BenchConfig, ScalingRow};
pub use self::fit::{fit_od, fit_od_and_gamma, DetuningScan, OdFitResult, ScanRow};
pub use self::report::{
    convergence_rows, read_report_csv, report_convergence, write_report_csv, ConvergenceRow, ReportSummary,
};
