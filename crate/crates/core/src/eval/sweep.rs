//! Measurement-count and sample-size sweeps over independent pipeline cells.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run_pipeline;
use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::generators::Sampling;
use crate::report::{line_chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: usize,
    pub sampling: Sampling,
    pub seed: u64,
    pub method: String,
    pub mise_in: f64,
    pub mise_out: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Name of the swept parameter.
    pub param_name: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Mean in-domain MISE over seeds, or `None` when no row matches.
    pub fn mean_in(&self, param: usize, sampling: Sampling, method: Method) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.param == param && r.sampling == sampling && r.method == method.label())
            .map(|r| r.mise_in)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["param", "sampling", "seed", "method", "mise_in", "mise_out", "runtime_s"])?;
        for r in &self.rows {
            w.write_record([
                r.param.to_string(),
                r.sampling.to_string(),
                r.seed.to_string(),
                r.method.clone(),
                r.mise_in.to_string(),
                r.mise_out.to_string(),
                format!("{:.3}", r.runtime_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One line per (method, sampling): mean in-domain MISE against the parameter.
    pub fn svg(&self) -> String {
        let mut keys: Vec<(String, Sampling)> = self.rows.iter().map(|r| (r.method.clone(), r.sampling)).collect();
        keys.sort_by(|a, b| (&a.0, a.1.to_string()).cmp(&(&b.0, b.1.to_string())));
        keys.dedup();
        let mut params: Vec<usize> = self.rows.iter().map(|r| r.param).collect();
        params.sort_unstable();
        params.dedup();
        let series: Vec<Series> = keys
            .iter()
            .map(|(m, s)| Series {
                label: format!("{m} ({s})"),
                points: params
                    .iter()
                    .filter_map(|&p| {
                        let v: Vec<f64> = self
                            .rows
                            .iter()
                            .filter(|r| r.param == p && &r.method == m && r.sampling == *s)
                            .map(|r| r.mise_in)
                            .collect();
                        (!v.is_empty()).then(|| (p as f64, v.iter().sum::<f64>() / v.len() as f64))
                    })
                    .collect(),
            })
            .collect();
        line_chart(&format!("In-domain MISE by {}", self.param_name), &self.param_name, "MISE", &series)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.save_csv(&dir.join(format!("{stem}.csv")))?;
        std::fs::write(dir.join(format!("{stem}.svg")), self.svg())?;
        Ok(())
    }
}

fn run_cells(param_name: &str, cells: Vec<(usize, ExperimentConfig)>) -> Result<SweepTable> {
    let results: Vec<Result<Vec<SweepRow>>> = cells
        .into_par_iter()
        .map(|(param, cfg)| {
            let run = run_pipeline(&cfg, None)?;
            Ok(run
                .methods
                .iter()
                .map(|m| SweepRow {
                    param,
                    sampling: cfg.dataset.sampling,
                    seed: cfg.seed,
                    method: m.report.method.clone(),
                    mise_in: m.report.in_domain_mise,
                    mise_out: m.report.out_domain_mise,
                    runtime_s: m.report.runtime_s,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(SweepTable {
        param_name: param_name.to_string(),
        rows,
    })
}

/// MISE per (measurement count, sampling, seed).
pub fn sweep_measurements(
    base: &ExperimentConfig,
    counts: &[usize],
    samplings: &[Sampling],
    seeds: &[u64],
) -> Result<SweepTable> {
    if let Some(c) = counts.iter().find(|&&c| c < 2) {
        return Err(Error::InvalidConfig(format!("measurement count {c} below 2")));
    }
    let mut cells = Vec::new();
    for &count in counts {
        for &sampling in samplings {
            for &seed in seeds {
                let mut cfg = base.with_seed(seed);
                cfg.dataset.n_t = count;
                cfg.dataset.sampling = sampling;
                cells.push((count, cfg));
            }
        }
    }
    run_cells("n_t", cells)
}

/// MISE per (treated count, method, seed); the untreated count stays at
/// `base.dataset.n_0`.
pub fn sweep_samples(base: &ExperimentConfig, treated: &[usize], seeds: &[u64]) -> Result<SweepTable> {
    if let Some(c) = treated.iter().find(|&&c| c < 10) {
        return Err(Error::InvalidConfig(format!("treated count {c} below 10")));
    }
    let mut cells = Vec::new();
    for &n_treated in treated {
        for &seed in seeds {
            let mut cfg = base.with_seed(seed);
            cfg.dataset.n = cfg.dataset.n_0 + n_treated;
            cells.push((n_treated, cfg));
        }
    }
    run_cells("n_treated", cells)
}
