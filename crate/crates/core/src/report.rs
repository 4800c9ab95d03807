//! Cross-run aggregation of adaptation reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adapt::{load_report, RunReport};
use crate::error::{Error, Result};

/// One run directory reduced to the numbers compared across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub run_dir: String,
    pub strategy: String,
    pub master_seed: u64,
    pub capacity_multiplier: usize,
    pub m: usize,
    pub n_tu: usize,
    pub source_dsc: f64,
    pub stage1_dsc: f64,
    pub stage2_dsc: f64,
    pub stage2_hd95: f64,
}

impl RunRow {
    pub fn from_report(run_dir: &Path, r: &RunReport) -> Result<Self> {
        let ev = r.eval.as_ref().ok_or_else(|| {
            Error::Config(format!("{} has no evaluation results", run_dir.display()))
        })?;
        Ok(Self {
            run_dir: run_dir.display().to_string(),
            strategy: r.strategy.clone(),
            master_seed: r.master_seed,
            capacity_multiplier: r.config.select_capacity_multiplier,
            m: r.m,
            n_tu: r.n_tu,
            source_dsc: ev.source.mean_dsc,
            stage1_dsc: ev.stage1.mean_dsc,
            stage2_dsc: ev.stage2.mean_dsc,
            stage2_hd95: ev.stage2.mean_hd95,
        })
    }
}

/// Stage-2 statistics for one (strategy, capacity) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub capacity_multiplier: usize,
    pub n_tu: usize,
    pub n: usize,
    pub mean_dsc: f64,
    pub std_dsc: f64,
    pub mean_hd95: f64,
    pub std_hd95: f64,
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<RunRow>> {
    if dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let mut rows = dirs
        .iter()
        .map(|d| RunRow::from_report(d, &load_report(d.join("report.json"))?))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        (&a.strategy, a.capacity_multiplier, a.master_seed, &a.run_dir)
            .cmp(&(&b.strategy, b.capacity_multiplier, b.master_seed, &b.run_dir))
    });
    Ok(rows)
}

/// Groups runs by strategy then capacity multiplier, in name order.
pub fn compare(rows: &[RunRow]) -> Vec<ComparisonRow> {
    let mut groups: BTreeMap<(&str, usize), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.strategy, r.capacity_multiplier)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, capacity_multiplier), g)| {
            let (mean_dsc, std_dsc) = mean_std(&g.iter().map(|r| r.stage2_dsc).collect::<Vec<_>>());
            let (mean_hd95, std_hd95) = mean_std(&g.iter().map(|r| r.stage2_hd95).collect::<Vec<_>>());
            ComparisonRow {
                strategy: strategy.to_string(),
                capacity_multiplier,
                n_tu: g[0].n_tu,
                n: g.len(),
                mean_dsc,
                std_dsc,
                mean_hd95,
                std_hd95,
            }
        })
        .collect()
}

pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
