//! Least-squares gradient boosting with exact, level-wise splits over
//! presorted features.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub lambda: f64,
    pub min_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_depth: 6,
            n_trees: 100,
            subsample: 1.0,
            colsample: 1.0,
            lambda: 1.0,
            min_leaf: 1,
        }
    }
}

/// Flat node array; a node with `feature == u32::MAX` is a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature == LEAF {
                0
            } else {
                1 + rec(t, n.left as usize).max(rec(t, n.right as usize))
            }
        }
        rec(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl Gbdt {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Row-major feature matrix.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub data: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, |r| r.len());
        Self {
            data: rows.iter().flatten().copied().collect(),
            n_rows: rows.len(),
            n_cols,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits the ensemble; also returns the training MSE after each round.
pub fn train(x: &Matrix, y: &[f64], params: &GbdtParams, seed: u64) -> (Gbdt, Vec<f64>) {
    let n = x.n_rows;
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    // presorted row order per feature
    let sorted: Vec<Vec<u32>> = (0..x.n_cols)
        .map(|c| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, c).total_cmp(&x.get(b as usize, c)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut r = rng::rng(seed);
    let n_sub = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let n_col = ((params.colsample * x.n_cols as f64).round() as usize).clamp(1, x.n_cols.max(1));
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut history = Vec::with_capacity(params.n_trees);
    let mut in_sample = vec![false; n];
    let mut resid = vec![0.0; n];
    for _ in 0..params.n_trees {
        in_sample.iter_mut().for_each(|v| *v = n_sub == n);
        if n_sub < n {
            for i in sample(&mut r, n, n_sub) {
                in_sample[i] = true;
            }
        }
        let mut cols: Vec<usize> = if n_col < x.n_cols {
            sample(&mut r, x.n_cols, n_col).into_vec()
        } else {
            (0..x.n_cols).collect()
        };
        cols.sort_unstable();
        for i in 0..n {
            resid[i] = y[i] - pred[i];
        }
        let tree = grow(x, &resid, &in_sample, &sorted, &cols, params);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict(x.row(i));
        }
        history.push(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    (
        Gbdt {
            base,
            learning_rate: params.learning_rate,
            trees,
        },
        history,
    )
}

fn grow(x: &Matrix, g: &[f64], in_sample: &[bool], sorted: &[Vec<u32>], cols: &[usize], p: &GbdtParams) -> Tree {
    let n = x.n_rows;
    // node id of each sampled row in the current frontier; u32::MAX = settled
    let mut node_of = vec![u32::MAX; n];
    let mut sum0 = 0.0;
    let mut cnt0 = 0usize;
    for i in 0..n {
        if in_sample[i] {
            node_of[i] = 0;
            sum0 += g[i];
            cnt0 += 1;
        }
    }
    let leaf = |sum: f64, cnt: usize| Node {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: sum / (cnt as f64 + p.lambda),
    };
    let mut nodes = vec![leaf(sum0, cnt0)];
    // frontier: (node index, sum, count)
    let mut frontier: Vec<(usize, f64, usize)> = vec![(0, sum0, cnt0)];
    for _depth in 0..p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let m = frontier.len();
        // map node index -> frontier slot
        let mut slot = vec![u32::MAX; nodes.len()];
        for (s, f) in frontier.iter().enumerate() {
            slot[f.0] = s as u32;
        }
        let mut best: Vec<Option<Split>> = (0..m).map(|_| None).collect();
        let mut ls = vec![0.0; m];
        let mut lc = vec![0usize; m];
        let mut last_v = vec![f64::NAN; m];
        for &c in cols {
            ls.iter_mut().for_each(|v| *v = 0.0);
            lc.iter_mut().for_each(|v| *v = 0);
            last_v.iter_mut().for_each(|v| *v = f64::NAN);
            for &ri in &sorted[c] {
                let ri = ri as usize;
                let nd = node_of[ri];
                if nd == u32::MAX {
                    continue;
                }
                let s = slot[nd as usize] as usize;
                let v = x.get(ri, c);
                let (_, tot, cnt) = frontier[s];
                // candidate split between the previous value and this one
                if lc[s] >= p.min_leaf && cnt - lc[s] >= p.min_leaf && v > last_v[s] {
                    let (sl, nl) = (ls[s], lc[s] as f64);
                    let (sr, nr) = (tot - sl, (cnt - lc[s]) as f64);
                    let gain = sl * sl / (nl + p.lambda) + sr * sr / (nr + p.lambda) - tot * tot / (cnt as f64 + p.lambda);
                    if gain > 1e-12 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                        best[s] = Some(Split {
                            gain,
                            feature: c,
                            threshold: 0.5 * (last_v[s] + v),
                        });
                    }
                }
                ls[s] += g[ri];
                lc[s] += 1;
                last_v[s] = v;
            }
        }
        let mut next = Vec::new();
        // child sums
        let mut child: Vec<Option<(usize, usize)>> = vec![None; m];
        for (s, b) in best.iter().enumerate() {
            if let Some(b) = b {
                let l = nodes.len();
                nodes.push(leaf(0.0, 0));
                nodes.push(leaf(0.0, 0));
                let ni = frontier[s].0;
                nodes[ni].feature = b.feature as u32;
                nodes[ni].threshold = b.threshold;
                nodes[ni].left = l as u32;
                nodes[ni].right = (l + 1) as u32;
                child[s] = Some((l, l + 1));
            }
        }
        let mut sums = vec![(0.0, 0usize); nodes.len()];
        for i in 0..n {
            let nd = node_of[i];
            if nd == u32::MAX {
                continue;
            }
            let s = slot[nd as usize] as usize;
            match (&best[s], child[s]) {
                (Some(b), Some((l, r))) => {
                    let to = if x.get(i, b.feature) <= b.threshold { l } else { r };
                    node_of[i] = to as u32;
                    sums[to].0 += g[i];
                    sums[to].1 += 1;
                }
                _ => node_of[i] = u32::MAX,
            }
        }
        for (l, r) in child.iter().flatten() {
            for &c in &[*l, *r] {
                let (sum, cnt) = sums[c];
                nodes[c] = leaf(sum, cnt);
                if cnt >= 2 * p.min_leaf {
                    next.push((c, sum, cnt));
                }
            }
        }
        // rows in children that cannot split further are settled
        let open: std::collections::HashSet<usize> = next.iter().map(|f| f.0).collect();
        for nd in node_of.iter_mut() {
            if *nd != u32::MAX && !open.contains(&(*nd as usize)) {
                *nd = u32::MAX;
            }
        }
        frontier = next;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> (Matrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64, ((i * 7) % 13) as f64]).collect();
        let y = rows.iter().map(|r| (6.0 * r[0]).sin() + 0.1 * r[1]).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn constant_target() {
        let (x, _) = grid(50);
        let y = vec![3.0; 50];
        let (m, _) = train(&x, &y, &GbdtParams::default(), 1);
        for i in 0..50 {
            assert!((m.predict(x.row(i)) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_non_increasing() {
        let (x, y) = grid(300);
        let p = GbdtParams {
            learning_rate: 0.7,
            max_depth: 4,
            n_trees: 60,
            colsample: 0.5,
            ..GbdtParams::default()
        };
        let (_, h) = train(&x, &y, &p, 9);
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
        assert!(h.last().unwrap() < &1e-2);
    }

    #[test]
    fn respects_depth() {
        let (x, y) = grid(200);
        let p = GbdtParams {
            max_depth: 3,
            n_trees: 5,
            ..GbdtParams::default()
        };
        let (m, _) = train(&x, &y, &p, 2);
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn deterministic_with_subsampling() {
        let (x, y) = grid(100);
        let p = GbdtParams {
            subsample: 0.6,
            colsample: 0.5,
            ..GbdtParams::default()
        };
        assert_eq!(train(&x, &y, &p, 4).0, train(&x, &y, &p, 4).0);
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = grid(60);
        let (m, _) = train(&x, &y, &GbdtParams::default(), 0);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Gbdt>(&s).unwrap(), m);
    }
}
