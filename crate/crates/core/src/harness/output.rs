use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::write_epoch_trace;

use super::run::{ExperimentReport, RunReport};

/// Mean and sample standard deviation, accumulated in the given order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One metric across replications.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean ± std across replications of the end-of-run metrics, in replication order.
pub fn aggregate(runs: &[RunReport]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, values: Vec<f64>| {
        if values.is_empty() {
            return;
        }
        let (mean, std) = mean_std(&values);
        rows.push(AggregateRow {
            metric: metric.to_string(),
            mean,
            std,
            n: values.len(),
        });
    };
    let s = || runs.iter().map(|r| &r.summary);
    push("reg_opt", s().map(|x| x.reg_opt).collect());
    push("reg_pistar", s().filter_map(|x| x.reg_pistar).collect());
    push("ledger", s().filter_map(|x| x.ledger).collect());
    push("epochs", s().map(|x| x.epochs as f64).collect());
    push("learner_exp_loss", s().map(|x| x.learner_exp_loss).collect());
    push("a_held", s().filter_map(|x| x.a_held.map(|b| b as u8 as f64)).collect());
    rows
}

/// Per-episode mean ± std of the regret curves across replications.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub t: usize,
    pub mean_reg_opt: f64,
    pub std_reg_opt: f64,
    pub mean_reg_pistar: Option<f64>,
    pub std_reg_pistar: Option<f64>,
}

pub fn aggregate_curve(runs: &[RunReport]) -> Vec<CurveRow> {
    let len = runs.iter().map(|r| r.episodes.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let opt: Vec<f64> = runs.iter().map(|r| r.episodes[i].cum_reg_opt).collect();
            let star: Option<Vec<f64>> = runs.iter().map(|r| r.episodes[i].cum_reg_pistar).collect();
            let (mean_reg_opt, std_reg_opt) = mean_std(&opt);
            let star = star.map(|v| mean_std(&v));
            CurveRow {
                t: runs[0].episodes[i].t,
                mean_reg_opt,
                std_reg_opt,
                mean_reg_pistar: star.map(|s| s.0),
                std_reg_pistar: star.map(|s| s.1),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `config.json`, `episodes.csv`, `summary.csv`, `aggregate.csv`,
/// `curve.csv` and, when enabled, `solver.csv` and `epochs_rep<r>.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&report.config).map_err(|source| Error::Json {
        context: "experiment config".into(),
        source,
    })?;
    std::fs::write(&config_path, text + "\n").map_err(|e| Error::io(&config_path, e))?;

    let runs = &report.runs;
    if report.config.keep_episodes {
        write_rows(&dir.join("episodes.csv"), runs.iter().flat_map(|r| &r.episodes))?;
        write_rows(&dir.join("curve.csv"), aggregate_curve(runs))?;
    }
    write_rows(&dir.join("summary.csv"), runs.iter().map(|r| &r.summary))?;
    write_rows(&dir.join("aggregate.csv"), aggregate(runs))?;
    if report.config.output.solver_diagnostics {
        write_rows(&dir.join("solver.csv"), runs.iter().flat_map(|r| &r.solver))?;
    }
    if report.config.output.epoch_trace {
        for r in runs {
            write_epoch_trace(&dir.join(format!("epochs_rep{}.csv", r.summary.rep)), &r.epoch_trace)?;
        }
    }
    Ok(())
}
