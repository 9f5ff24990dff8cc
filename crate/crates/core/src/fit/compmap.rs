//! Composition-map search: screen the library on the full dose range, try
//! splitting at dose quantiles, then refit the chosen configuration.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::branch::{fit_branch, BranchData, FitConfig};
use super::model::{Branch, SemanticModel};
use crate::dataset::split_ids;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::semantic::Composition;
use crate::surrogate::{quantile, SurrogateSet};

pub const CUT_QUANTILES: [f64; 3] = [1.0 / 3.0, 0.5, 2.0 / 3.0];

/// Outcome of one screened (interval, composition) candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub lo: f64,
    pub hi: f64,
    pub composition: String,
    pub validation_loss: Option<f64>,
    pub error: Option<String>,
}

/// A partition with its per-branch winners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationReport {
    pub cuts: Vec<f64>,
    pub compositions: Vec<String>,
    pub validation_loss: f64,
    pub total_motifs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub candidates: Vec<CandidateReport>,
    pub configurations: Vec<ConfigurationReport>,
    pub selected: usize,
}

type Interval = (u64, u64);

fn key(lo: f64, hi: f64) -> Interval {
    (lo.to_bits(), hi.to_bits())
}

/// Cut options for up to `max_branches` branches.
fn cut_options(cuts: &[f64], max_branches: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    if max_branches >= 2 {
        out.extend(cuts.iter().map(|&c| vec![c]));
    }
    if max_branches >= 3 {
        for i in 0..cuts.len() {
            for j in i + 1..cuts.len() {
                out.push(vec![cuts[i], cuts[j]]);
            }
        }
    }
    out.retain(|cs| {
        let mut b = vec![0.0];
        b.extend(cs);
        b.push(1.0);
        b.windows(2).all(|w| w[1] > w[0])
    });
    out
}

fn intervals(cs: &[f64]) -> Vec<(f64, f64)> {
    let mut b = vec![0.0];
    b.extend(cs);
    b.push(1.0);
    b.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Fits the composition map; returns the model and the search log.
pub fn fit_composition_map_with_report(
    surrogates: &SurrogateSet,
    library: &[Composition],
    config: &FitConfig,
    max_branches: usize,
) -> Result<(SemanticModel, SearchReport)> {
    config.validate()?;
    if library.is_empty() {
        return Err(Error::InvalidConfig("empty composition library".into()));
    }
    let mut doses: Vec<f64> = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &surrogates.points {
        if seen.insert(p.patient_id) {
            doses.push(p.dose);
        }
    }
    let distinct: BTreeSet<u64> = doses.iter().map(|d| d.to_bits()).collect();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData("surrogates span fewer than 2 distinct doses".into()));
    }
    let ids = surrogates.patient_ids();
    let split = split_ids(&ids, config.train_fraction, derive_seed(config.seed, stream::SURROGATE_SPLIT))?;
    doses.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = CUT_QUANTILES.iter().map(|&q| quantile(&doses, q)).collect();
    let options = cut_options(&cuts, max_branches);

    let data_for = |lo: f64, hi: f64| BranchData::from_surrogates(surrogates, lo, hi, &split.train_ids);
    let screen = |d: &BranchData, c: &Composition| fit_branch(d, c, config, config.screening_trials);

    // stage 1: every composition on the full range
    let full = data_for(0.0, 1.0);
    let stage1: Vec<Result<Branch>> = library.par_iter().map(|c| screen(&full, c)).collect();
    let mut candidates = Vec::new();
    let mut cache: BTreeMap<(Interval, usize), Branch> = BTreeMap::new();
    let mut ranked: Vec<(f64, usize)> = Vec::new();
    for (ci, r) in stage1.into_iter().enumerate() {
        candidates.push(report(0.0, 1.0, &library[ci], &r));
        if let Ok(b) = r {
            ranked.push((b.validation_loss, ci));
            cache.insert((key(0.0, 1.0), ci), b);
        }
    }
    if ranked.is_empty() {
        return Err(Error::NoFeasibleCandidate(diagnostics(&candidates)));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let top: Vec<usize> = ranked.iter().take(config.top_k).map(|r| r.1).collect();

    // stage 2: top compositions on every sub-interval
    let mut sub: Vec<(f64, f64)> = options.iter().skip(1).flat_map(|cs| intervals(cs)).collect();
    sub.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sub.dedup();
    let sub_data: Vec<BranchData> = sub.iter().map(|&(lo, hi)| data_for(lo, hi)).collect();
    let jobs: Vec<(usize, usize)> = (0..sub.len()).flat_map(|s| top.iter().map(move |&c| (s, c))).collect();
    let stage2: Vec<Result<Branch>> = jobs.par_iter().map(|&(s, c)| screen(&sub_data[s], &library[c])).collect();
    for (&(s, ci), r) in jobs.iter().zip(stage2) {
        let (lo, hi) = sub[s];
        candidates.push(report(lo, hi, &library[ci], &r));
        if let Ok(b) = r {
            cache.insert((key(lo, hi), ci), b);
        }
    }

    // assemble configurations: best composition per interval
    struct Config {
        cuts: Vec<f64>,
        choice: Vec<usize>,
        loss: f64,
        motifs: usize,
    }
    let mut configs: Vec<Config> = Vec::new();
    for cs in &options {
        let ivs = intervals(cs);
        let pool: Vec<usize> = if cs.is_empty() { (0..library.len()).collect() } else { top.clone() };
        let mut choice = Vec::new();
        let (mut sse, mut n) = (0.0, 0usize);
        let mut ok = true;
        for &(lo, hi) in &ivs {
            let best = pool
                .iter()
                .filter_map(|&ci| cache.get(&(key(lo, hi), ci)).map(|b| (b.validation_loss, ci, b)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match best {
                Some((_, ci, b)) => {
                    choice.push(ci);
                    sse += b.validation_loss * b.n_validation_points as f64;
                    n += b.n_validation_points;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        if cs.is_empty() {
            // each single-branch composition is its own configuration
            for &(_, ci) in &ranked {
                let b = &cache[&(key(0.0, 1.0), ci)];
                configs.push(Config {
                    cuts: vec![],
                    choice: vec![ci],
                    loss: b.validation_loss,
                    motifs: library[ci].len(),
                });
            }
        } else {
            configs.push(Config {
                cuts: cs.clone(),
                motifs: choice.iter().map(|&c| library[c].len()).sum(),
                choice,
                loss: sse / n as f64,
            });
        }
    }

    // accept more branches only on a clear relative gain
    let tol = config.tolerance;
    let mut best_by_branches: BTreeMap<usize, f64> = BTreeMap::new();
    let mut accepted: Vec<usize> = Vec::new();
    for nb in 1..=max_branches {
        let prior = best_by_branches.values().copied().fold(f64::INFINITY, f64::min);
        for (i, c) in configs.iter().enumerate().filter(|(_, c)| c.cuts.len() + 1 == nb) {
            if nb == 1 || c.loss <= (1.0 - tol) * prior {
                accepted.push(i);
                let e = best_by_branches.entry(nb).or_insert(f64::INFINITY);
                *e = e.min(c.loss);
            }
        }
    }
    let best = accepted.iter().map(|&i| configs[i].loss).fold(f64::INFINITY, f64::min);
    let selected = *accepted
        .iter()
        .filter(|&&i| configs[i].loss <= (1.0 + tol) * best)
        .min_by(|&&a, &&b| {
            let (x, y) = (&configs[a], &configs[b]);
            x.motifs
                .cmp(&y.motifs)
                .then(x.cuts.len().cmp(&y.cuts.len()))
                .then(x.loss.total_cmp(&y.loss))
                .then(a.cmp(&b))
        })
        .expect("at least one single-branch configuration");

    // final refit with full tuning
    let chosen = &configs[selected];
    let ivs = intervals(&chosen.cuts);
    let finals: Vec<Result<Branch>> = ivs
        .par_iter()
        .zip(&chosen.choice)
        .map(|(&(lo, hi), &ci)| fit_branch(&data_for(lo, hi), &library[ci], config, config.trials))
        .collect();
    let branches = finals.into_iter().collect::<Result<Vec<_>>>()?;
    let (mut vs, mut vn, mut ts, mut tn) = (0.0, 0usize, 0.0, 0usize);
    for b in &branches {
        vs += b.validation_loss * b.n_validation_points as f64;
        vn += b.n_validation_points;
        ts += b.train_loss * b.n_train_points as f64;
        tn += b.n_train_points;
    }
    let model = SemanticModel {
        branches,
        config_hash: crate::hash_json(&(config, library.iter().map(|c| c.to_string()).collect::<Vec<_>>(), max_branches)),
        train_loss: ts / tn as f64,
        validation_loss: vs / vn as f64,
        provenance: Vec::new(),
    };
    let configurations = configs
        .iter()
        .map(|c| ConfigurationReport {
            cuts: c.cuts.clone(),
            compositions: c.choice.iter().map(|&i| library[i].to_string()).collect(),
            validation_loss: c.loss,
            total_motifs: c.motifs,
        })
        .collect();
    Ok((
        model,
        SearchReport {
            candidates,
            configurations,
            selected,
        },
    ))
}

pub fn fit_composition_map(
    surrogates: &SurrogateSet,
    library: &[Composition],
    config: &FitConfig,
    max_branches: usize,
) -> Result<SemanticModel> {
    fit_composition_map_with_report(surrogates, library, config, max_branches).map(|r| r.0)
}

fn report(lo: f64, hi: f64, c: &Composition, r: &Result<Branch>) -> CandidateReport {
    CandidateReport {
        lo,
        hi,
        composition: c.to_string(),
        validation_loss: r.as_ref().ok().map(|b| b.validation_loss),
        error: r.as_ref().err().map(|e| e.to_string()),
    }
}

fn diagnostics(c: &[CandidateReport]) -> String {
    c.iter()
        .map(|r| format!("{} on [{}, {}]: {}", r.composition, r.lo, r.hi, r.error.as_deref().unwrap_or("ok")))
        .collect::<Vec<_>>()
        .join("; ")
}
