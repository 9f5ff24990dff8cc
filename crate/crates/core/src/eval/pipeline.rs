//! Generate → baseline → surrogates → fit → evaluate, with artifacts.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    fit_polynomial_baseline, fit_tree_baseline, mise_from_predictions, prediction_grid, EvaluationGrid,
    EvaluationReport, PolyModel, SurfacePredictor, TreeBaseline,
};
use crate::baseline::{fit_baseline, BaselineModel};
use crate::config::{DatasetKind, ExperimentConfig, Method};
use crate::dataset::{normalize, save_dataset, DataFormat, LongitudinalDataset, NormalizationParams};
use crate::edits::{apply_edits, edit_impact_report, Edit, EditImpactReport};
use crate::error::{Result, StageExt};
use crate::fit::{fit_composition_map_with_report, SearchReport, SemanticModel};
use crate::generators::{
    emit_truth_grid, generate_ihdp_dataset, generate_pk_dataset, CovariateMode, CovariateMoments, GroundTruthSurface,
    IhdpConfig, PkConfig,
};
use crate::surrogate::{build_surrogates, SurrogateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FittedMethod {
    Semantic(SemanticModel),
    Polynomial(PolyModel),
    Tree(TreeBaseline),
}

impl FittedMethod {
    pub fn method(&self) -> Method {
        match self {
            FittedMethod::Semantic(_) => Method::Semantic,
            FittedMethod::Polynomial(_) => Method::Polynomial,
            FittedMethod::Tree(_) => Method::Tree,
        }
    }

    pub fn validation_loss(&self) -> f64 {
        match self {
            FittedMethod::Semantic(m) => m.validation_loss,
            FittedMethod::Polynomial(m) => m.validation_loss,
            FittedMethod::Tree(m) => m.validation_loss,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl SurfacePredictor for FittedMethod {
    fn predict(&self, a: f64, t: f64) -> Result<f64> {
        match self {
            FittedMethod::Semantic(m) => m.predict_tau(a, t),
            FittedMethod::Polynomial(m) => m.predict(a, t),
            FittedMethod::Tree(m) => m.predict(a, t),
        }
    }

    fn predict_curve(&self, a: f64, times: &[f64]) -> Result<Vec<f64>> {
        match self {
            FittedMethod::Semantic(m) => m.predict_curve(a, times),
            _ => times.iter().map(|&t| self.predict(a, t)).collect(),
        }
    }
}

/// A fitted method plus its fitting logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub fitted: FittedMethod,
    pub search: Option<SearchReport>,
    pub edit_impact: Option<EditImpactReport>,
}

/// Shared inputs of every method in a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub raw: LongitudinalDataset,
    pub dataset: LongitudinalDataset,
    pub params: NormalizationParams,
    pub truth: GroundTruthSurface,
    pub grid: EvaluationGrid,
    pub baseline: BaselineModel,
    pub surrogates: SurrogateSet,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub fit: MethodFit,
    pub predictions: Vec<f64>,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub prepared: Prepared,
    pub methods: Vec<MethodRun>,
}

impl PipelineRun {
    pub fn report(&self, method: Method) -> Option<&EvaluationReport> {
        self.methods.iter().find(|m| m.report.method == method.label()).map(|m| &m.report)
    }

    pub fn fitted(&self, method: Method) -> Option<&FittedMethod> {
        self.methods.iter().find(|m| m.fit.fitted.method() == method).map(|m| &m.fit.fitted)
    }
}

/// Raw dataset and truth surface for `config`.
pub fn generate(config: &ExperimentConfig) -> Result<(LongitudinalDataset, GroundTruthSurface)> {
    let d = &config.dataset;
    let moments = d.covariates.as_deref().map(CovariateMoments::load).transpose().stage("generate")?;
    let seed = config.data_seed();
    match d.kind {
        DatasetKind::Ihdp => {
            let cfg = IhdpConfig {
                n: d.n,
                n_0: d.n_0,
                n_t: d.n_t,
                sampling: d.sampling,
                covariate_moments: moments,
                seed,
            };
            generate_ihdp_dataset(&cfg).map(|(ds, truth, _)| (ds, truth))
        }
        DatasetKind::Pk => {
            let cfg = PkConfig {
                n: d.n,
                n_0: d.n_0,
                n_t: d.n_t,
                sampling: d.sampling,
                covariate_mode: moments.map_or(CovariateMode::Random, |moments| CovariateMode::Moments { moments }),
                seed,
            };
            generate_pk_dataset(&cfg)
        }
    }
    .stage("generate")
}

/// Baseline fitted on the untreated arm of a normalized dataset.
pub fn fit_baseline_stage(dataset: &LongitudinalDataset, config: &ExperimentConfig) -> Result<BaselineModel> {
    fit_baseline(dataset, config.baseline.kind, &config.baseline_budget()).stage("baseline")
}

/// Composition map for the resolved config, before edits.
pub fn fit_semantic(surrogates: &SurrogateSet, config: &ExperimentConfig) -> Result<(SemanticModel, SearchReport)> {
    let r = config.resolved();
    let library = r.bias.library().stage("fit")?;
    fit_composition_map_with_report(surrogates, &library, &r.fit, r.fit.max_branches).stage("fit")
}

/// Applies `edits` in order; `None` impact when there are no edits.
pub fn edit_model(model: SemanticModel, edits: &[Edit]) -> Result<(SemanticModel, Option<EditImpactReport>)> {
    if edits.is_empty() {
        return Ok((model, None));
    }
    let edited = apply_edits(&model, edits).stage("edit")?;
    let impact = edit_impact_report(&model, &edited, None).stage("edit")?;
    Ok((edited, Some(impact)))
}

pub fn fit_method(surrogates: &SurrogateSet, config: &ExperimentConfig, method: Method) -> Result<MethodFit> {
    let r = config.resolved();
    match method {
        Method::Semantic => {
            let (model, search) = fit_semantic(surrogates, config)?;
            let (model, edit_impact) = edit_model(model, &r.edits)?;
            Ok(MethodFit {
                fitted: FittedMethod::Semantic(model),
                search: Some(search),
                edit_impact,
            })
        }
        Method::Polynomial => Ok(MethodFit {
            fitted: FittedMethod::Polynomial(fit_polynomial_baseline(surrogates, &r.polynomial).stage("fit")?),
            search: None,
            edit_impact: None,
        }),
        Method::Tree => Ok(MethodFit {
            fitted: FittedMethod::Tree(fit_tree_baseline(surrogates, &r.tree_budget()).stage("fit")?),
            search: None,
            edit_impact: None,
        }),
    }
}

/// Predictions on `grid` and the resulting report.
pub fn evaluate(
    fitted: &FittedMethod,
    grid: &EvaluationGrid,
    config: &ExperimentConfig,
    runtime_s: f64,
) -> Result<(Vec<f64>, EvaluationReport)> {
    let predictions = prediction_grid(fitted, grid).stage("evaluate")?;
    let m = mise_from_predictions(&predictions, grid).stage("evaluate")?;
    let compositions = match fitted {
        FittedMethod::Semantic(model) => Some(model.branches.iter().map(|b| b.composition.to_string()).collect()),
        _ => None,
    };
    let report = EvaluationReport {
        method: fitted.method().label().to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        in_domain_mise: m.in_domain,
        out_domain_mise: m.out_domain,
        validation_loss: Some(fitted.validation_loss()),
        compositions,
        prediction_hash: crate::hash_json(&predictions),
        runtime_s,
    };
    Ok((predictions, report))
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let (raw, truth) = generate(config)?;
    let (dataset, params) = normalize(&raw).stage("normalize")?;
    let grid = EvaluationGrid::from_surface(&truth, &config.grid).stage("evaluate")?;
    let baseline = fit_baseline_stage(&dataset, config)?;
    let surrogates = build_surrogates(&dataset, &baseline).stage("surrogates")?;
    Ok(Prepared {
        config: config.clone(),
        raw,
        dataset,
        params,
        truth,
        grid,
        baseline,
        surrogates,
    })
}

pub fn run_method(prepared: &Prepared, method: Method) -> Result<MethodRun> {
    let start = Instant::now();
    let fit = fit_method(&prepared.surrogates, &prepared.config, method)?;
    let runtime = start.elapsed().as_secs_f64();
    let (predictions, report) = evaluate(&fit.fitted, &prepared.grid, &prepared.config, runtime)?;
    Ok(MethodRun {
        fit,
        predictions,
        report,
    })
}

/// Runs every configured method; writes artifacts to `out` when given.
pub fn run_pipeline(config: &ExperimentConfig, out: Option<&Path>) -> Result<PipelineRun> {
    let prepared = prepare(config)?;
    let methods = config
        .methods
        .iter()
        .map(|&m| run_method(&prepared, m))
        .collect::<Result<Vec<_>>>()?;
    let run = PipelineRun { prepared, methods };
    if let Some(dir) = out {
        write_artifacts(&run, dir).stage("write")?;
    }
    Ok(run)
}

/// File names shared by the pipeline and the command-line front end.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const DATASET: &str = "dataset.csv";
    pub const TRUTH: &str = "truth.json";
    pub const TRUTH_GRID: &str = "truth_grid.csv";
    pub const BASELINE: &str = "baseline.json";
    pub const SURROGATES: &str = "surrogates.csv";

    pub fn model(label: &str) -> String {
        format!("model_{label}.json")
    }

    pub fn search(label: &str) -> String {
        format!("search_{label}.json")
    }

    pub fn predictions(label: &str) -> String {
        format!("predictions_{label}.csv")
    }

    pub fn report(label: &str) -> String {
        format!("report_{label}.json")
    }
}

pub fn save_truth(truth: &GroundTruthSurface, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(truth)?)?;
    Ok(())
}

pub fn load_truth(path: &Path) -> Result<GroundTruthSurface> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Long CSV `a, t, prediction` in grid order.
pub fn save_predictions(predictions: &[f64], grid: &EvaluationGrid, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["a", "t", "prediction"])?;
    let n_t = grid.n_t();
    for (i, a) in grid.doses.iter().enumerate() {
        for (j, t) in grid.times.iter().enumerate() {
            w.write_record([a.to_string(), t.to_string(), predictions[i * n_t + j].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = rec.get(2).unwrap_or("").trim();
        out.push(v.parse().map_err(|e: std::num::ParseFloatError| crate::Error::Parse {
            row: i + 2,
            column: "prediction".into(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn save_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

pub fn write_prepared(p: &Prepared, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(files::CONFIG), p.config.to_toml_string())?;
    save_dataset(&p.raw, &dir.join(files::DATASET), DataFormat::Csv)?;
    save_truth(&p.truth, &dir.join(files::TRUTH))?;
    emit_truth_grid(&p.truth, p.config.grid.n_a, p.config.grid.n_t(), p.config.grid.t_hi())?
        .save_csv(&dir.join(files::TRUTH_GRID))?;
    p.baseline.save(&dir.join(files::BASELINE))?;
    p.surrogates.save_csv(&dir.join(files::SURROGATES))?;
    Ok(())
}

pub fn write_method(m: &MethodRun, grid: &EvaluationGrid, dir: &Path) -> Result<()> {
    let label = m.fit.fitted.method().label();
    m.fit.fitted.save(&dir.join(files::model(label)))?;
    if let Some(s) = &m.fit.search {
        std::fs::write(dir.join(files::search(label)), serde_json::to_vec_pretty(s)?)?;
    }
    save_predictions(&m.predictions, grid, &dir.join(files::predictions(label)))?;
    save_report(&m.report, &dir.join(files::report(label)))
}

fn write_artifacts(run: &PipelineRun, dir: &Path) -> Result<()> {
    write_prepared(&run.prepared, dir)?;
    for m in &run.methods {
        write_method(m, &run.prepared.grid, dir)?;
    }
    Ok(())
}
