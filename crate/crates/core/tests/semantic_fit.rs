use std::collections::BTreeSet;

use dosetraj_core::edits::{
    apply_edit, edit_impact_report, restrict_library, BranchSelector, Edit, EditAction, EditTarget, InductiveBias,
};
use dosetraj_core::eval::{mise, EvaluationGrid};
use dosetraj_core::fit::basis::{shared, N_BASIS};
use dosetraj_core::fit::objective::Objective;
use dosetraj_core::fit::{fit_branch, fit_composition_map, fit_composition_map_with_report, BranchData};
use dosetraj_core::generators::TruthGrid;
use dosetraj_core::report::{render_reports, PROPERTY_GRID};
use dosetraj_core::semantic::{enumerate_compositions, reconstruct_trajectory, Motif};
use dosetraj_core::{Composition, FitConfig, PropertyId, SemanticModel, SemanticRepresentation, SurrogatePoint, SurrogateSet, TerminalKind};

const PATIENTS: usize = 60;
const TIMES: usize = 10;

fn comp(s: &str) -> Composition {
    s.parse().unwrap()
}

fn dose(i: usize) -> f64 {
    i as f64 / (PATIENTS - 1) as f64
}

fn times() -> Vec<f64> {
    (0..TIMES).map(|j| j as f64 / (TIMES - 1) as f64).collect()
}

/// One patient per dose on an even grid, measured at `TIMES` even times.
fn surrogates(tau: impl Fn(f64, f64) -> f64) -> SurrogateSet {
    let mut points = Vec::new();
    for i in 0..PATIENTS {
        for (j, t) in times().into_iter().enumerate() {
            points.push(SurrogatePoint {
                patient_id: i as u64,
                measurement_index: j,
                dose: dose(i),
                time: t,
                tau_tilde: tau(dose(i), t),
            });
        }
    }
    SurrogateSet {
        points,
        dataset_hash: "synthetic".into(),
        baseline_hash: "synthetic".into(),
    }
}

/// Saturating truth from the (+−h) class: starts at 0 with slope 3 and
/// approaches 1.
fn saturating(_a: f64, t: f64) -> f64 {
    1.0 - (-3.0 * t).exp()
}

fn train_ids() -> BTreeSet<u64> {
    (0..PATIENTS as u64).filter(|i| i % 3 != 2).collect()
}

fn config() -> FitConfig {
    FitConfig {
        trials: 2,
        ..FitConfig::default()
    }
}

fn fitted_saturating() -> SemanticModel {
    fit_composition_map(&surrogates(saturating), &[comp("+-h")], &config(), 1).unwrap()
}

#[test]
fn branch_recovers_generating_representation() {
    let c = comp("+-h");
    let rep = SemanticRepresentation::from_flat(&c, &[0.0, 3.0, 1.0]).unwrap();
    let ts = times();
    let truth = reconstruct_trajectory(&rep, &ts).unwrap();
    for (t, v) in ts.iter().zip(&truth) {
        assert!((saturating(0.0, *t) - v).abs() < 1e-12, "generator is in the model class");
    }
    let data = BranchData::from_surrogates(&surrogates(saturating), 0.0, 1.0, &train_ids());
    let b = fit_branch(&data, &c, &config(), 2).unwrap();
    assert!(b.train_loss < 1e-6, "train MSE {}", b.train_loss);
    for a in [0.0, 0.3, 0.7, 1.0] {
        let asym = b.property(a, PropertyId::Asymptote).unwrap();
        assert!((asym - 1.0).abs() < 1e-3, "asymptote {asym} at {a}");
    }
}

#[test]
fn null_target_fits_zero() {
    let m = fit_composition_map(&surrogates(|_, _| 0.0), &[comp("+-h")], &config(), 1).unwrap();
    for i in 0..=10 {
        for j in 0..=12 {
            let v = m.predict_tau(i as f64 / 10.0, j as f64 / 10.0).unwrap();
            assert!(v.abs() < 1e-3, "{v}");
        }
    }
}

#[test]
fn fit_is_deterministic() {
    let s = surrogates(saturating);
    let data = BranchData::from_surrogates(&s, 0.0, 1.0, &train_ids());
    let a = fit_branch(&data, &comp("+-h"), &config(), 2).unwrap();
    let b = fit_branch(&data, &comp("+-h"), &config(), 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn duplicated_sample_gives_the_same_fit() {
    let s = surrogates(|a, t| (0.5 + a) * (1.0 - (-2.0 * t).exp()));
    let mut doubled = s.clone();
    doubled.points = s.points.iter().flat_map(|p| [*p, *p]).collect();
    let c = comp("+-h");
    let (da, db) = (
        BranchData::from_surrogates(&s, 0.0, 1.0, &train_ids()),
        BranchData::from_surrogates(&doubled, 0.0, 1.0, &train_ids()),
    );

    // the objective itself is unchanged at arbitrary coefficients
    let d2 = shared().second_differences();
    let base = vec![[0.0; N_BASIS]; 3];
    let oa = Objective::new(&c, &da.train, base.clone(), &[], 0.05, 0.01, &d2);
    let ob = Objective::new(&c, &db.train, base, &[], 0.05, 0.01, &d2);
    for k in 0..20 {
        let x: Vec<f64> = (0..oa.dim()).map(|i| 0.3 * ((k * 31 + i * 7) as f64).sin()).collect();
        let (fa, ga) = oa.value_grad(&x);
        let (fb, gb) = ob.value_grad(&x);
        assert!((fa - fb).abs() <= 1e-12 * fa.abs());
        for (u, v) in ga.iter().zip(&gb) {
            assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
        }
    }

    // fitted coefficients agree up to the optimizer's stopping tolerance
    let a = fit_branch(&da, &c, &config(), 2).unwrap();
    let b = fit_branch(&db, &c, &config(), 2).unwrap();
    assert_eq!((a.learning_rate, a.terminal_penalty), (b.learning_rate, b.terminal_penalty));
    for (ma, mb) in a.maps.iter().zip(&b.maps) {
        for (x, y) in ma.coefficients.iter().zip(&mb.coefficients) {
            assert!((x - y).abs() <= 1e-4 * (1.0 + x.abs()), "{} {x} vs {y}", ma.property);
        }
    }
}

#[test]
fn single_regime_selects_one_branch() {
    let library = enumerate_compositions(4, TerminalKind::H);
    let (m, report) = fit_composition_map_with_report(&surrogates(saturating), &library, &config(), 3).unwrap();
    assert_eq!(m.branches.len(), 1);
    assert_eq!(m.branches[0].composition, comp("+-h"));
    // no evaluated single-branch candidate beats the selection beyond the tolerance
    for c in report.candidates.iter().filter(|c| c.lo == 0.0 && c.hi == 1.0) {
        if let Some(v) = c.validation_loss {
            assert!(m.validation_loss <= v * 1.01 + 1e-15, "{} {v} < {}", c.composition, m.validation_loss);
        }
    }
}

#[test]
fn two_regimes_split_near_the_change() {
    let tau = |a: f64, t: f64| {
        if a < 0.5 {
            1.0 - (-3.0 * t).exp()
        } else {
            12.0 * t * (-5.0 * t).exp()
        }
    };
    let library = enumerate_compositions(4, TerminalKind::H);
    let m = fit_composition_map(&surrogates(tau), &library, &config(), 3).unwrap();
    assert!(m.branches.len() >= 2, "{} branches", m.branches.len());
    let cuts: Vec<f64> = m.branches[1..].iter().map(|b| b.lo).collect();
    assert!(cuts.iter().any(|c| (0.33..=0.67).contains(c)), "cuts {cuts:?}");
}

#[test]
fn forced_library_returns_its_composition() {
    let m = fitted_saturating();
    assert_eq!(m.branches.len(), 1);
    assert_eq!(m.branches[0].composition, comp("+-h"));
    assert_eq!(m.predict_tau(0.4, 0.0).unwrap(), m.branches[0].property(0.4, PropertyId::ValueT0).unwrap());
}

#[test]
fn exported_curves_reassemble_predictions() {
    let m = fitted_saturating();
    let curves = m.export_property_curves(11);
    for (bi, b) in m.branches.iter().enumerate() {
        let mine: Vec<_> = curves.iter().filter(|c| c.branch == bi).collect();
        assert_eq!(mine[0].doses.first(), Some(&b.lo));
        assert_eq!(mine[0].doses.last(), Some(&b.hi));
        for k in 0..11 {
            let a = mine[0].doses[k];
            let flat: Vec<f64> = mine.iter().map(|c| c.values[k]).collect();
            let rep = SemanticRepresentation::from_flat(&b.composition, &flat).unwrap();
            let ts = [0.0, 0.1, 0.5, 0.9, 1.2];
            let manual = reconstruct_trajectory(&rep, &ts).unwrap();
            for (t, v) in ts.iter().zip(manual) {
                assert!((m.predict_tau(a, *t).unwrap() - v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn terminal_h_restriction_leaves_twelve() {
    let full = enumerate_compositions(4, TerminalKind::Any);
    let bias = InductiveBias {
        terminal: TerminalKind::H,
        ..InductiveBias::default()
    };
    let h = restrict_library(&full, &bias).unwrap();
    assert_eq!(h.len(), 12);
    assert!(h.iter().all(|c| full.contains(c)));
    assert_eq!(restrict_library(&full, &InductiveBias::default()).unwrap(), full);
    let forbidden: Motif = "--b".parse().unwrap();
    let bias = InductiveBias {
        forbidden: vec![forbidden],
        ..InductiveBias::default()
    };
    let kept = restrict_library(&full, &bias).unwrap();
    assert!(!kept.is_empty() && kept.len() < full.len());
    assert!(kept.iter().all(|c| !c.motifs().contains(&forbidden)));
}

fn pin_t0() -> Edit {
    Edit::pin(PropertyId::ValueT0, 0.0)
}

#[test]
fn pin_is_exact_idempotent_and_logged() {
    let m = fitted_saturating();
    let once = apply_edit(&m, &pin_t0()).unwrap();
    let twice = apply_edit(&once, &pin_t0()).unwrap();
    assert!(m.provenance.is_empty(), "input untouched");
    assert_eq!(once.provenance.len(), 1);
    assert_eq!(twice.provenance.len(), 2);
    assert_eq!(once.provenance[0].model_hash_before, m.content_hash());
    assert_eq!(once.branches, twice.branches);
    for i in 0..=100 {
        assert_eq!(once.predict_tau(i as f64 / 100.0, 0.0).unwrap(), 0.0);
    }
}

#[test]
fn constant_coefficients_give_a_constant_property() {
    let m = fitted_saturating();
    let edit = Edit {
        target: EditTarget {
            branch: BranchSelector::All,
            property: PropertyId::Asymptote,
        },
        action: EditAction::ReplaceCoefficients(vec![1.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
    };
    let e = apply_edit(&m, &edit).unwrap();
    let curve = e.export_property_curves(21).into_iter().find(|c| c.property == PropertyId::Asymptote).unwrap();
    assert!(curve.values.iter().all(|v| (v - 1.1).abs() < 1e-12), "{:?}", curve.values);
}

#[test]
fn impact_report_is_local_and_consistent() {
    let m = fitted_saturating();
    let noop = Edit {
        target: EditTarget {
            branch: BranchSelector::Index(0),
            property: PropertyId::Asymptote,
        },
        action: EditAction::ClampRange { lo: None, hi: None },
    };
    let same = apply_edit(&m, &noop).unwrap();
    let r = edit_impact_report(&m, &same, None).unwrap();
    assert!(r.properties.iter().all(|p| p.max_distance == 0.0));
    assert!(r.mise_delta.is_none());

    let doses: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
    let ts: Vec<f64> = (0..21).map(|j| j as f64 / 16.0).collect();
    let values = doses.iter().flat_map(|_| ts.iter().map(|&t| saturating(0.0, t))).collect();
    let grid = EvaluationGrid::new(TruthGrid { doses, times: ts, values }, 17).unwrap();

    let pinned = apply_edit(&m, &Edit::pin(PropertyId::ValueT0, 0.05)).unwrap();
    let r = edit_impact_report(&m, &pinned, Some(&grid)).unwrap();
    for p in &r.properties {
        if p.property == PropertyId::ValueT0 {
            assert!(p.max_distance > 0.0);
        } else {
            assert_eq!(p.max_distance, 0.0, "{}", p.property);
        }
    }
    let before = mise(|a, t| m.predict_tau(a, t), &grid).unwrap();
    let after = mise(|a, t| pinned.predict_tau(a, t), &grid).unwrap();
    let (din, dout) = r.mise_delta.unwrap();
    assert!((din - (after.in_domain - before.in_domain)).abs() < 1e-12);
    assert!((dout - (after.out_domain - before.out_domain)).abs() < 1e-12);
}

#[test]
fn reports_render_exported_tables_deterministically() {
    let m = fitted_saturating();
    let s = surrogates(saturating);
    let dir = tempfile::tempdir().unwrap();
    let a = render_reports(&m, &s, None, &dir.path().join("a")).unwrap();
    let b = render_reports(&m, &s, None, &dir.path().join("b")).unwrap();
    for (x, y) in a.files().iter().zip(b.files()) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let per_branch: usize = m
        .branches
        .iter()
        .map(|b| dosetraj_core::semantic::property_layout(&b.composition).len())
        .sum();
    assert_eq!(a.property_charts.len(), per_branch);
    for (curve, (_, csv)) in m.export_property_curves(PROPERTY_GRID).iter().zip(&a.property_charts) {
        let mut r = csv::Reader::from_path(csv).unwrap();
        let rows: Vec<(f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
        let expected: Vec<(f64, f64)> = curve.doses.iter().copied().zip(curve.values.iter().copied()).collect();
        assert_eq!(rows, expected);
    }
}
