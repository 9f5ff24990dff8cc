use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LongitudinalDataset, Measurement, PatientRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

/// Metadata stored next to a long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub covariate_names: Vec<String>,
    pub a_min: f64,
    pub a_max: f64,
    pub t_max: f64,
    pub normalized: bool,
    /// Untreated patient ids. Only needed for normalized files, where a dose
    /// of 0 may also be a treated patient at the lower dose bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub untreated_ids: Option<Vec<u64>>,
}

/// `data.csv` -> `data.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn save_dataset(dataset: &LongitudinalDataset, path: &Path, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Json => {
            let w = BufWriter::new(File::create(path)?);
            serde_json::to_writer(w, dataset)?;
            Ok(())
        }
        DataFormat::Csv => save_csv(dataset, path),
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<LongitudinalDataset> {
    match format {
        DataFormat::Json => {
            let r = BufReader::new(File::open(path)?);
            let ds: LongitudinalDataset = serde_json::from_reader(r)?;
            ds.validate()?;
            Ok(ds)
        }
        DataFormat::Csv => load_csv(path),
    }
}

fn save_csv(dataset: &LongitudinalDataset, path: &Path) -> Result<()> {
    let d = dataset.n_covariates();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "dose".into(), "time".into(), "outcome".into()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for p in &dataset.patients {
        for m in &p.measurements {
            row.clear();
            row.push(p.id.to_string());
            // `Display` for f64 prints the shortest string that round-trips.
            row.push(p.dose.to_string());
            row.push(m.time.to_string());
            row.push(m.outcome.to_string());
            row.extend(p.covariates.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    let sidecar = Sidecar {
        covariate_names: dataset.covariate_names.clone(),
        a_min: dataset.dose_range.0,
        a_max: dataset.dose_range.1,
        t_max: dataset.t_max,
        normalized: dataset.normalized,
        untreated_ids: dataset
            .normalized
            .then(|| dataset.untreated().map(|p| p.id).collect()),
    };
    let sw = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(sw, &sidecar)?;
    Ok(())
}

fn load_csv(path: &Path) -> Result<LongitudinalDataset> {
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    let d = sidecar.covariate_names.len();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected: Vec<String> = ["id", "dose", "time", "outcome"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=d).map(|j| format!("x_{j}")))
        .collect();
    if headers.len() != expected.len() {
        return Err(Error::Parse {
            row: 1,
            column: "header".into(),
            message: format!("expected {} columns, found {}", expected.len(), headers.len()),
        });
    }
    for (h, e) in headers.iter().zip(&expected) {
        if h != e {
            return Err(Error::Parse {
                row: 1,
                column: h.to_string(),
                message: format!("expected column `{e}`"),
            });
        }
    }
    let untreated: Option<BTreeSet<u64>> =
        sidecar.untreated_ids.as_ref().map(|v| v.iter().copied().collect());

    let mut order: Vec<u64> = Vec::new();
    let mut by_id: HashMap<u64, PatientRecord> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // header is row 1
        let rec = rec?;
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            rec[j].trim().parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: expected[j].clone(),
                message: e.to_string(),
            })
        };
        let id: u64 = rec[0].trim().parse().map_err(|e: std::num::ParseIntError| Error::Parse {
            row,
            column: "id".into(),
            message: e.to_string(),
        })?;
        let dose = num(1)?;
        let m = Measurement {
            time: num(2)?,
            outcome: num(3)?,
        };
        let covs = (0..d).map(|j| num(4 + j)).collect::<Result<Vec<_>>>()?;
        match by_id.get_mut(&id) {
            Some(p) => {
                if p.dose.to_bits() != dose.to_bits() || p.covariates != covs {
                    return Err(Error::Parse {
                        row,
                        column: "dose".into(),
                        message: format!("patient {id} metadata differs from earlier rows"),
                    });
                }
                p.measurements.push(m);
            }
            None => {
                order.push(id);
                let mut p = PatientRecord::new(id, covs, dose, vec![m]);
                if let Some(u) = &untreated {
                    p.treated = !u.contains(&id);
                }
                by_id.insert(id, p);
            }
        }
    }
    let patients = order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("id recorded on first sight"))
        .collect();
    LongitudinalDataset::new(
        patients,
        sidecar.covariate_names,
        (sidecar.a_min, sidecar.a_max),
        sidecar.t_max,
        sidecar.normalized,
    )
}
