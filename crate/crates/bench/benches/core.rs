use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng as _;

use dosetraj_core::baseline::gbdt::{train, GbdtParams, Matrix};
use dosetraj_core::eval::pipeline::{fit_semantic, prepare};
use dosetraj_core::eval::{mise_from_predictions, EvaluationGrid};
use dosetraj_core::generators::pk::solve_pk_states;
use dosetraj_core::generators::{ground_truth_tau_ihdp, PkParameters, PkState, TruthGrid};
use dosetraj_core::ode::OdeOptions;
use dosetraj_core::rng::rng;
use dosetraj_core::{ExperimentConfig, TerminalKind};

fn gbdt(c: &mut Criterion) {
    let mut r = rng(1);
    let rows: Vec<Vec<f64>> = (0..2000).map(|_| (0..10).map(|_| r.random::<f64>()).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|x| x[0] * 3.0 + (x[1] * 6.0).sin() + x[2] * x[3]).collect();
    let x = Matrix::from_rows(&rows);
    let params = GbdtParams::default();
    c.bench_function("gbdt_train_2000x10", |b| b.iter(|| train(black_box(&x), &y, &params, 7)));
}

fn pk_ode(c: &mut Criterion) {
    let params = PkParameters::default();
    let start = PkState::initial(&params, 100.0, 0.0);
    let times: Vec<f64> = (0..65).map(|i| i as f64 * 24.0 / 64.0).collect();
    let opts = OdeOptions::default();
    c.bench_function("pk_ode_65_times", |b| {
        b.iter(|| solve_pk_states(black_box(&params), &start, &times, &opts).unwrap())
    });
}

fn mise(c: &mut Criterion) {
    let doses: Vec<f64> = (0..33).map(|i| i as f64 / 32.0).collect();
    let times: Vec<f64> = (0..81).map(|j| j as f64 / 64.0).collect();
    let values = doses
        .iter()
        .flat_map(|&a| times.iter().map(move |&t| ground_truth_tau_ihdp(1.0 + 4.0 * a, t)))
        .collect();
    let grid = EvaluationGrid::new(TruthGrid { doses, times, values }, 65).unwrap();
    let pred: Vec<f64> = grid.truth.iter().map(|v| 0.9 * v).collect();
    c.bench_function("mise_33x81", |b| b.iter(|| mise_from_predictions(black_box(&pred), &grid).unwrap()));
}

fn semantic_fit(c: &mut Criterion) {
    let mut config = ExperimentConfig::default();
    config.dataset.n = 300;
    config.dataset.n_0 = 200;
    config.dataset.n_t = 10;
    config.baseline.trials = 2;
    config.fit.trials = 2;
    config.bias.terminal = TerminalKind::H;
    let prepared = prepare(&config).unwrap();
    let mut group = c.benchmark_group("semantic");
    group.sample_size(10);
    group.bench_function("fit_100_treated", |b| {
        b.iter(|| fit_semantic(black_box(&prepared.surrogates), &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gbdt, pk_ode, mise, semantic_fit);
criterion_main!(benches);
