//! Prepares one benchmark dataset and times every effect model on it.
//!
//! `cargo run --release --example methods -- [seed] [pk]`

use dosetraj_core::config::{DatasetKind, ExperimentConfig, Method};
use dosetraj_core::eval::{prepare, run_method};
use dosetraj_core::semantic::TerminalKind;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().unwrap());
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    if args.get(2).map(String::as_str) == Some("pk") {
        cfg.dataset.kind = DatasetKind::Pk;
    }
    cfg.bias.terminal = TerminalKind::H;
    let t = Instant::now();
    let p = prepare(&cfg).unwrap();
    println!("prepare {:?} baseline val {}", t.elapsed(), p.baseline.validation_loss);
    for m in [Method::Semantic, Method::Polynomial, Method::Tree] {
        let t = Instant::now();
        let r = run_method(&p, m).unwrap();
        println!("{:?} {:?} in {:.4} out {:.4} {:?}", m, t.elapsed(), r.report.in_domain_mise, r.report.out_domain_mise, r.report.compositions);
    }
}
