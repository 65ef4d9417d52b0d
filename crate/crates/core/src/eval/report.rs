//! CSV output.
//!
//! * `residual.csv`: `model,corpus,nfe,mean_residual`
//! * `dist.csv`: `model,corpus,class,count,mean,std,mode_freqs`, with
//!   mode frequencies `;`-separated (empty for unimodal classes)
//! * `bench.csv`: `model,nfe,median_ms,ms_per_nfe`

use std::fs;
use std::path::Path;

use super::bench::BenchResult;
use super::residual::ResidualCurve;
use super::stats::DistStats;
use crate::error::Result;

pub const RESIDUAL_HEADER: [&str; 4] = ["model", "corpus", "nfe", "mean_residual"];
pub const DIST_HEADER: [&str; 7] = ["model", "corpus", "class", "count", "mean", "std", "mode_freqs"];
pub const BENCH_HEADER: [&str; 4] = ["model", "nfe", "median_ms", "ms_per_nfe"];

#[derive(Clone, Debug, PartialEq)]
pub struct DistReport {
    pub model: String,
    pub corpus: String,
    pub stats: DistStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub model: String,
    pub result: BenchResult,
}

pub fn write_residual_csv(curve: &ResidualCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESIDUAL_HEADER)?;
    for row in &curve.rows {
        for (nfe, r) in curve.nfe.iter().zip(&row.residuals) {
            w.write_record([row.model.clone(), row.corpus.clone(), nfe.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dist_csv(reports: &[DistReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DIST_HEADER)?;
    for rep in reports {
        for c in &rep.stats.classes {
            let freqs = c.mode_freqs.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
            w.write_record([
                rep.model.clone(),
                rep.corpus.clone(),
                c.label.clone(),
                c.count.to_string(),
                c.mean.to_string(),
                c.std.to_string(),
                freqs,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench_csv(reports: &[BenchReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BENCH_HEADER)?;
    for rep in reports {
        for r in &rep.result.rows {
            w.write_record([
                rep.model.clone(),
                r.nfe.to_string(),
                r.median_ms.to_string(),
                r.ms_per_nfe.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `residual.csv`, `dist.csv` and `bench.csv` into `dir`.
pub fn write_report(curve: &ResidualCurve, dist: &[DistReport], bench: &[BenchReport], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_residual_csv(curve, &dir.join("residual.csv"))?;
    write_dist_csv(dist, &dir.join("dist.csv"))?;
    write_bench_csv(bench, &dir.join("bench.csv"))?;
    Ok(())
}
