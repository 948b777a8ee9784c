use std::io;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::archive::read_archive_lenient;
use crate::observation::{Dataset, Source};
use crate::Result;

/// One archive record as it appears in the convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub run_index: u64,
    pub source: Source,
    pub scaled_cost: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: usize,
    /// Corrupt archive lines that were skipped.
    pub skipped: usize,
}

const HEADER: [&str; 4] = ["run_index", "source", "scaled_cost", "best_so_far"];

/// Failure cost implied by an archive: the cost recorded for failed runs, or
/// the worst cost seen when no run failed.
fn failure_raw(dataset: &Dataset) -> f64 {
    let obs = dataset.observations();
    let bad = obs.iter().filter(|o| o.bad).map(|o| o.raw_cost).fold(f64::NEG_INFINITY, f64::max);
    if bad.is_finite() {
        bad
    } else {
        obs.iter().map(|o| o.raw_cost).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scaled costs relative to the session's final best, with a running minimum.
pub fn convergence_rows(dataset: &Dataset) -> Vec<ConvergenceRow> {
    let scaled = dataset.rescaled_costs(failure_raw(dataset));
    let mut best = f64::INFINITY;
    dataset
        .observations()
        .iter()
        .zip(scaled)
        .map(|(o, s)| {
            best = best.min(s);
            ConvergenceRow {
                run_index: o.run_index,
                source: o.source,
                scaled_cost: s,
                best_so_far: best,
            }
        })
        .collect()
}

pub fn write_report_csv<W: io::Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.run_index.to_string(),
            r.source.to_string(),
            r.scaled_cost.to_string(),
            r.best_so_far.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: io::Read>(input: R) -> Result<Vec<ConvergenceRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes the convergence table of the archive at `archive` to `out`.
pub fn report_convergence(archive: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<ReportSummary> {
    let (dataset, skipped) = read_archive_lenient(archive)?;
    if skipped > 0 {
        warn!("skipped {skipped} corrupt archive lines");
    }
    let rows = convergence_rows(&dataset);
    write_report_csv(&rows, std::fs::File::create(out)?)?;
    Ok(ReportSummary {
        rows: rows.len(),
        skipped,
    })
}
