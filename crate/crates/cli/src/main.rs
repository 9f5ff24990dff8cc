//! `dosetraj`: generate benchmark data, fit surrogate-effect models and
//! evaluate dose-time treatment effect surfaces.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dosetraj_core::baseline::BaselineModel;
use dosetraj_core::config::{DatasetKind, Method};
use dosetraj_core::dataset::{load_dataset, normalize, save_dataset, sidecar_path, DataFormat};
use dosetraj_core::edits::load_edits;
use dosetraj_core::eval::pipeline::{
    files, load_truth, save_predictions, save_report, save_truth,
};
use dosetraj_core::eval::{
    edit_model, evaluate, fit_baseline_stage, fit_method, fit_semantic, generate, sweep_measurements, sweep_samples,
    EvaluationGrid, FittedMethod, SweepTable,
};
use dosetraj_core::generators::emit_truth_grid;
use dosetraj_core::report::render_reports;
use dosetraj_core::surrogate::build_surrogates;
use dosetraj_core::{ExperimentConfig, Sampling, SurrogateSet};

use manifest::{FileEntry, RunManifest};

const ENV_OUT: &str = "DOSETRAJ_OUT";
const ENV_JOBS: &str = "DOSETRAJ_JOBS";

#[derive(Debug, Parser)]
#[command(name = "dosetraj", version, about = "Dose-time treatment effect surfaces from longitudinal trial data")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [env: DOSETRAJ_OUT, default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding the previous stage's files [default: the output directory].
    #[arg(long = "in", global = true)]
    input: Option<PathBuf>,
    /// Worker threads [env: DOSETRAJ_JOBS].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Format for datasets and sweep tables.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => DataFormat::Csv,
            Format::Json => DataFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DatasetArg {
    Ihdp,
    Pk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Semantic,
    Polynomial,
    Tree,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Semantic => Method::Semantic,
            MethodArg::Polynomial => Method::Polynomial,
            MethodArg::Tree => Method::Tree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SamplingArg {
    Regular,
    Irregular,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Regular => Sampling::Regular,
            SamplingArg::Irregular => Sampling::Irregular,
        }
    }
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Generate a benchmark dataset with its ground-truth surface.
    Generate {
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
    },
    /// Fit the untreated-outcome model.
    FitBaseline {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Build surrogate effects for treated measurements.
    Surrogates {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Fit an effect model to surrogates.
    Fit {
        #[arg(long)]
        surrogates: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "semantic")]
        method: MethodArg,
    },
    /// Apply the config's edits, then those in `--edits`, to a semantic model.
    Edit {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        edits: Option<PathBuf>,
    },
    /// Standardized MISE of a fitted model against the ground truth.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// MISE across measurement counts and sampling schemes.
    SweepMeasurements {
        #[arg(long, value_delimiter = ',', default_values_t = vec![5usize, 10, 15, 20, 30])]
        counts: Vec<usize>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![SamplingArg::Regular, SamplingArg::Irregular])]
        sampling: Vec<SamplingArg>,
        /// Seeds [default: five consecutive seeds from the run seed].
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// MISE across treated-sample counts.
    SweepSamples {
        #[arg(long, value_delimiter = ',', default_values_t = vec![50usize, 100, 200, 400])]
        treated: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Render composition-map, property and trajectory charts.
    Report {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        surrogates: Option<PathBuf>,
        /// Ground-truth surface to overlay; skipped when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Validate a config and print it with defaults filled in.
    CheckConfig,
    /// Re-run the command recorded in a manifest and compare output hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::FitBaseline { .. } => "fit-baseline",
            Command::Surrogates { .. } => "surrogates",
            Command::Fit { .. } => "fit",
            Command::Edit { .. } => "edit",
            Command::Evaluate { .. } => "evaluate",
            Command::SweepMeasurements { .. } => "sweep-measurements",
            Command::SweepSamples { .. } => "sweep-samples",
            Command::Report { .. } => "report",
            Command::CheckConfig => "check-config",
            Command::Replay { .. } => "replay",
        }
    }
}

/// Settings shared by every command after flags, environment and config
/// are merged.
struct RunContext {
    config: ExperimentConfig,
    out: PathBuf,
    input: PathBuf,
    format: Format,
    jobs: Option<usize>,
}

fn dataset_file(dir: &Path) -> PathBuf {
    let json = dir.join("dataset.json");
    if json.exists() && !dir.join(files::DATASET).exists() {
        json
    } else {
        dir.join(files::DATASET)
    }
}

fn data_format(path: &Path) -> DataFormat {
    if path.extension().is_some_and(|e| e == "json") {
        DataFormat::Json
    } else {
        DataFormat::Csv
    }
}

fn absolute(p: PathBuf) -> PathBuf {
    std::fs::canonicalize(&p).unwrap_or(p)
}

/// Fills unset input paths from the input directory.
fn resolve_inputs(cmd: &mut Command, input: &Path) {
    let fill = |slot: &mut Option<PathBuf>, default: PathBuf| {
        let p = slot.take().unwrap_or(default);
        *slot = Some(absolute(p));
    };
    match cmd {
        Command::FitBaseline { data } => fill(data, dataset_file(input)),
        Command::Surrogates { data, baseline } => {
            fill(data, dataset_file(input));
            fill(baseline, input.join(files::BASELINE));
        }
        Command::Fit { surrogates, .. } => fill(surrogates, input.join(files::SURROGATES)),
        Command::Edit { model, edits } => {
            fill(model, input.join(files::model("semantic")));
            if let Some(e) = edits.take() {
                *edits = Some(absolute(e));
            }
        }
        Command::Evaluate { model, truth } => {
            fill(model, input.join(files::model("semantic")));
            fill(truth, input.join(files::TRUTH));
        }
        Command::Report {
            model,
            surrogates,
            truth,
        } => {
            fill(model, input.join(files::model("semantic")));
            fill(surrogates, input.join(files::SURROGATES));
            if let Some(t) = truth.take() {
                *truth = Some(absolute(t));
            }
        }
        _ => {}
    }
}

fn inputs_of(cmd: &Command) -> Vec<PathBuf> {
    match cmd {
        Command::FitBaseline { data } => data.iter().cloned().collect(),
        Command::Surrogates { data, baseline } => data.iter().chain(baseline).cloned().collect(),
        Command::Fit { surrogates, .. } => surrogates.iter().cloned().collect(),
        Command::Edit { model, edits } => model.iter().chain(edits).cloned().collect(),
        Command::Evaluate { model, truth } => model.iter().chain(truth).cloned().collect(),
        Command::Report {
            model,
            surrogates,
            truth,
        } => model.iter().chain(surrogates).chain(truth).cloned().collect(),
        _ => Vec::new(),
    }
}

fn req(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("input resolved")
}

fn load_model(path: &Path) -> Result<FittedMethod> {
    FittedMethod::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn default_seeds(seeds: &[u64], base: u64) -> Vec<u64> {
    if seeds.is_empty() {
        (base..base + 5).collect()
    } else {
        seeds.to_vec()
    }
}

fn save_table(table: &SweepTable, ctx: &RunContext, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&ctx.out)?;
    let svg = ctx.out.join(format!("{stem}.svg"));
    std::fs::write(&svg, table.svg())?;
    let data = match ctx.format {
        Format::Csv => {
            let p = ctx.out.join(format!("{stem}.csv"));
            table.save_csv(&p)?;
            p
        }
        Format::Json => {
            let p = ctx.out.join(format!("{stem}.json"));
            std::fs::write(&p, serde_json::to_vec_pretty(table)?)?;
            p
        }
    };
    Ok(vec![data, svg])
}

/// Runs one command; returns the files it wrote.
fn execute(cmd: &Command, ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let out = &ctx.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    match cmd {
        Command::Generate { .. } => {
            let (raw, truth) = generate(cfg)?;
            let data = out.join(match ctx.format {
                Format::Csv => files::DATASET,
                Format::Json => "dataset.json",
            });
            save_dataset(&raw, &data, ctx.format.into())?;
            written.push(data.clone());
            if ctx.format == Format::Csv {
                written.push(sidecar_path(&data));
            }
            save_truth(&truth, &out.join(files::TRUTH))?;
            written.push(out.join(files::TRUTH));
            emit_truth_grid(&truth, cfg.grid.n_a, cfg.grid.n_t(), cfg.grid.t_hi())?.save_csv(&out.join(files::TRUTH_GRID))?;
            written.push(out.join(files::TRUTH_GRID));
        }
        Command::FitBaseline { data } => {
            let path = req(data);
            let raw = load_dataset(path, data_format(path))?;
            let (ds, _) = normalize(&raw)?;
            let model = fit_baseline_stage(&ds, cfg)?;
            model.save(&out.join(files::BASELINE))?;
            written.push(out.join(files::BASELINE));
        }
        Command::Surrogates { data, baseline } => {
            let path = req(data);
            let raw = load_dataset(path, data_format(path))?;
            let (ds, _) = normalize(&raw)?;
            let model = BaselineModel::load(req(baseline))?;
            let set = build_surrogates(&ds, &model)?;
            set.save_csv(&out.join(files::SURROGATES))?;
            written.push(out.join(files::SURROGATES));
        }
        Command::Fit { surrogates, method } => {
            let set = SurrogateSet::load_csv(req(surrogates))?;
            let method = Method::from(*method);
            let label = method.label();
            let fitted = if method == Method::Semantic {
                let (model, search) = fit_semantic(&set, cfg)?;
                let search_path = out.join(files::search(label));
                std::fs::write(&search_path, serde_json::to_vec_pretty(&search)?)?;
                written.push(search_path);
                FittedMethod::Semantic(model)
            } else {
                fit_method(&set, cfg, method)?.fitted
            };
            let model_path = out.join(files::model(label));
            fitted.save(&model_path)?;
            written.push(model_path);
        }
        Command::Edit { model, edits } => {
            let FittedMethod::Semantic(m) = load_model(req(model))? else {
                bail!("edits apply to semantic models only");
            };
            let mut all = cfg.edits.clone();
            if let Some(p) = edits {
                all.extend(load_edits(p)?);
            }
            let (edited, impact) = edit_model(m, &all)?;
            let path = out.join(files::model("semantic"));
            FittedMethod::Semantic(edited).save(&path)?;
            written.push(path);
            if let Some(impact) = impact {
                let p = out.join("edit_impact.json");
                std::fs::write(&p, serde_json::to_vec_pretty(&impact)?)?;
                written.push(p);
            }
        }
        Command::Evaluate { model, truth } => {
            let fitted = load_model(req(model))?;
            let truth = load_truth(req(truth))?;
            let grid = EvaluationGrid::from_surface(&truth, &cfg.grid)?;
            let start = Instant::now();
            let (pred, report) = evaluate(&fitted, &grid, cfg, 0.0)?;
            let report = dosetraj_core::EvaluationReport {
                runtime_s: start.elapsed().as_secs_f64(),
                ..report
            };
            let label = fitted.method().label();
            save_predictions(&pred, &grid, &out.join(files::predictions(label)))?;
            save_report(&report, &out.join(files::report(label)))?;
            written.push(out.join(files::predictions(label)));
            written.push(out.join(files::report(label)));
            println!(
                "{label}: in-domain MISE {:.6}, out-domain MISE {:.6}",
                report.in_domain_mise, report.out_domain_mise
            );
        }
        Command::SweepMeasurements {
            counts,
            sampling,
            seeds,
        } => {
            let samplings: Vec<Sampling> = sampling.iter().map(|&s| s.into()).collect();
            let table = sweep_measurements(cfg, counts, &samplings, &default_seeds(seeds, cfg.seed))?;
            written.extend(save_table(&table, ctx, "sweep_measurements")?);
        }
        Command::SweepSamples { treated, seeds } => {
            let table = sweep_samples(cfg, treated, &default_seeds(seeds, cfg.seed))?;
            written.extend(save_table(&table, ctx, "sweep_samples")?);
        }
        Command::Report {
            model,
            surrogates,
            truth,
        } => {
            let FittedMethod::Semantic(m) = load_model(req(model))? else {
                bail!("reports are rendered for semantic models only");
            };
            let set = SurrogateSet::load_csv(req(surrogates))?;
            let grid = match truth {
                Some(p) => Some(EvaluationGrid::from_surface(&load_truth(p)?, &cfg.grid)?),
                None => None,
            };
            let bundle = render_reports(&m, &set, grid.as_ref(), out)?;
            written.extend(bundle.files());
        }
        Command::CheckConfig | Command::Replay { .. } => unreachable!("handled before execute"),
    }
    Ok(written)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Generate { dataset: Some(d) } = &cli.command {
        cfg.dataset.kind = match d {
            DatasetArg::Ihdp => DatasetKind::Ihdp,
            DatasetArg::Pk => DatasetKind::Pk,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn env_jobs() -> Result<Option<usize>> {
    match std::env::var(ENV_JOBS) {
        Ok(v) => Ok(Some(v.parse().with_context(|| format!("{ENV_JOBS}={v} is not a thread count"))?)),
        Err(_) => Ok(None),
    }
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    Ok(())
}

fn run_recorded(cmd: Command, ctx: &RunContext) -> Result<RunManifest> {
    let mut cmd = cmd;
    resolve_inputs(&mut cmd, &ctx.input);
    let inputs = inputs_of(&cmd)
        .iter()
        .map(|p| FileEntry::of(p))
        .collect::<Result<Vec<_>>>()?;
    let start = Instant::now();
    let written = execute(&cmd, ctx)?;
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        args: serde_json::to_value(&cmd)?,
        config: ctx.config.clone(),
        seed: ctx.config.seed,
        jobs: ctx.jobs,
        format: match ctx.format {
            Format::Csv => "csv".into(),
            Format::Json => "json".into(),
        },
        inputs,
        outputs: written
            .iter()
            .map(|p| FileEntry::of(&absolute(p.clone())))
            .collect::<Result<Vec<_>>>()?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    manifest.save(&ctx.out)?;
    Ok(manifest)
}

/// Output files whose bytes include wall-clock time.
fn volatile_equal(name: &str, a: &Path, b: &Path) -> Result<Option<bool>> {
    if name.starts_with("report_") && name.ends_with(".json") {
        let ra: dosetraj_core::EvaluationReport = serde_json::from_slice(&std::fs::read(a)?)?;
        let rb: dosetraj_core::EvaluationReport = serde_json::from_slice(&std::fs::read(b)?)?;
        return Ok(Some(ra.same_result(&rb)));
    }
    if name.starts_with("sweep_") && (name.ends_with(".csv") || name.ends_with(".json")) {
        let strip = |p: &Path| -> Result<String> {
            let text = std::fs::read_to_string(p)?;
            if name.ends_with(".json") {
                let mut t: SweepTable = serde_json::from_str(&text)?;
                t.rows.iter_mut().for_each(|r| r.runtime_s = 0.0);
                return Ok(serde_json::to_string(&t)?);
            }
            Ok(text
                .lines()
                .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
                .collect::<Vec<_>>()
                .join("\n"))
        };
        return Ok(Some(strip(a)? == strip(b)?));
    }
    Ok(None)
}

fn replay(manifest_path: &Path, out: &Path) -> Result<bool> {
    let m = RunManifest::load(manifest_path)?;
    let cmd: Command = serde_json::from_value(m.args.clone()).context("manifest holds an unknown command")?;
    let ctx = RunContext {
        config: m.config.clone(),
        out: out.to_path_buf(),
        input: out.to_path_buf(),
        format: if m.format == "json" { Format::Json } else { Format::Csv },
        jobs: m.jobs,
    };
    for i in &m.inputs {
        let now = manifest::sha256_file(&i.path)?;
        if now != i.sha256 {
            bail!("input {} changed since the recorded run", i.path.display());
        }
    }
    let again = run_recorded(cmd, &ctx)?;
    let mut all_equal = true;
    for o in &m.outputs {
        let name = o.name();
        let Some(n) = again.outputs.iter().find(|x| x.name() == name) else {
            eprintln!("missing output {name}");
            all_equal = false;
            continue;
        };
        let equal = match volatile_equal(&name, &o.path, &n.path)? {
            Some(eq) => eq,
            None => o.sha256 == n.sha256,
        };
        println!("{} {name}", if equal { "same" } else { "DIFFERENT" });
        all_equal &= equal;
    }
    Ok(all_equal)
}

fn run(cli: Cli) -> Result<()> {
    let jobs = match cli.jobs {
        Some(j) => Some(j),
        None => env_jobs()?,
    };
    init_pool(jobs)?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Command::Replay { manifest } = &cli.command {
        if !replay(manifest, &out)? {
            bail!("replayed outputs differ from the manifest");
        }
        return Ok(());
    }
    let config = load_config(&cli)?;
    if let Command::CheckConfig = cli.command {
        print!("{}", config.to_toml_string());
        eprintln!("config ok, hash {}", config.hash());
        return Ok(());
    }
    let ctx = RunContext {
        config,
        input: cli.input.clone().unwrap_or_else(|| out.clone()),
        out,
        format: cli.format.unwrap_or(Format::Csv),
        jobs,
    };
    let m = run_recorded(cli.command, &ctx)?;
    for o in &m.outputs {
        eprintln!("wrote {}", o.path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
