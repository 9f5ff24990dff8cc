use std::path::Path;
use std::process::{Command, Output};

use dosetraj_core::config::{ExperimentConfig, Method};
use dosetraj_core::edits::Edit;
use dosetraj_core::eval::pipeline::files;
use dosetraj_core::eval::run_pipeline;
use dosetraj_core::fit::Pin;
use dosetraj_core::{EvaluationReport, PropertyId, TerminalKind};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dosetraj"));
    c.env_remove("DOSETRAJ_OUT").env_remove("DOSETRAJ_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default().with_seed(5);
    c.dataset.n = 260;
    c.dataset.n_0 = 200;
    c.dataset.n_t = 8;
    c.baseline.trials = 2;
    c.fit.trials = 2;
    c.bias.terminal = TerminalKind::H;
    c.bias.pins = vec![Pin {
        property: PropertyId::ValueT0,
        value: 0.0,
    }];
    c.edits = vec![Edit::pin(PropertyId::ValueT0, 0.0)];
    c
}

fn write_config(dir: &Path, c: &ExperimentConfig) -> String {
    let p = dir.join("experiment.toml");
    std::fs::write(&p, c.to_toml_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout {}\nstderr {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["fit", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn generate_writes_dataset_truth_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("d");
    let o = run(&["generate", "--dataset", "ihdp", "--out", out.to_str().unwrap(), "--seed", "3"]);
    ok(&o);
    for f in [files::DATASET, files::TRUTH, files::TRUTH_GRID, "manifest_generate.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest_generate.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert!(m["outputs"].as_array().unwrap().iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn environment_sets_output_directory() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &small_config());
    let out = d.path().join("from_env");
    let o = bin()
        .args(["generate", "--config", &cfg])
        .env("DOSETRAJ_OUT", &out)
        .env("DOSETRAJ_JOBS", "1")
        .output()
        .unwrap();
    ok(&o);
    assert!(out.join(files::DATASET).exists());
}

#[test]
fn check_config_accepts_and_rejects() {
    let d = tempfile::tempdir().unwrap();
    let good = write_config(d.path(), &small_config());
    let o = run(&["check-config", "--config", &good]);
    ok(&o);
    assert_eq!(
        ExperimentConfig::from_toml_str(&String::from_utf8_lossy(&o.stdout)).unwrap(),
        small_config()
    );
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "[dataset]\nn = 5\nn_0 = 10\n").unwrap();
    assert_eq!(run(&["check-config", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_pipeline_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["fit-baseline", "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn command_chain_matches_library_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.methods = vec![Method::Semantic];
    let cfg = write_config(d.path(), &config);
    let cli_dir = d.path().join("cli");
    let out = cli_dir.to_str().unwrap();
    for cmd in ["generate", "fit-baseline", "surrogates", "fit", "edit", "evaluate"] {
        ok(&run(&[cmd, "--config", &cfg, "--out", out]));
    }
    let lib_dir = d.path().join("lib");
    run_pipeline(&config, Some(&lib_dir)).unwrap();
    for f in [
        files::DATASET.to_string(),
        "dataset.meta.json".to_string(),
        files::TRUTH.to_string(),
        files::TRUTH_GRID.to_string(),
        files::BASELINE.to_string(),
        files::SURROGATES.to_string(),
        files::model("semantic"),
        files::predictions("semantic"),
    ] {
        let (a, b) = (cli_dir.join(&f), lib_dir.join(&f));
        if !a.exists() && !b.exists() {
            continue;
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{f} differs");
    }
    let load = |p: &Path| -> EvaluationReport { serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap() };
    let (a, b) = (
        load(&cli_dir.join(files::report("semantic"))),
        load(&lib_dir.join(files::report("semantic"))),
    );
    assert!(a.same_result(&b), "{a:?} vs {b:?}");

    // replaying a recorded stage reproduces its outputs
    let replay_dir = d.path().join("replay");
    let o = run(&[
        "replay",
        "--manifest",
        cli_dir.join("manifest_surrogates.json").to_str().unwrap(),
        "--out",
        replay_dir.to_str().unwrap(),
    ]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("same surrogates.csv"));

    // reports render deterministically from the fitted model
    let (r1, r2) = (d.path().join("r1"), d.path().join("r2"));
    for r in [&r1, &r2] {
        ok(&run(&["report", "--config", &cfg, "--in", out, "--out", r.to_str().unwrap()]));
    }
    let mut svgs = 0;
    for e in std::fs::read_dir(&r1).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "svg") {
            svgs += 1;
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(r2.join(p.file_name().unwrap())).unwrap());
        }
    }
    assert!(svgs >= 3);
}
