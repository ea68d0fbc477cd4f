//! Cross-validated downstream evaluation, the fixed-cost grid and triple
//! ordering accuracy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embedding::{distance_matrix, knn_predict, pair_distance, select_prototypes};
use super::metrics::{mean_std, task_metrics, Task};
use crate::error::{Error, Result};
use crate::ged::EditCostConfig;
use crate::gedan::{GedanModel, Mode};
use crate::graph::Graph;
use crate::training::{train_unsupervised, UnsupervisedConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub folds: usize,
    pub prototypes: usize,
    /// Prototype draws per fold.
    pub repeats: usize,
    pub k: usize,
    pub task: Task,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            prototypes: 16,
            repeats: 3,
            k: 5,
            task: Task::Regression,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    /// `r2` or `roc_auc`.
    pub metric: String,
    /// One value per fold and prototype draw.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn corpus_targets(corpus: &[Graph]) -> Result<Vec<f64>> {
    corpus
        .iter()
        .map(|g| g.target().ok_or_else(|| Error::MissingTarget(format!("graph {} has no target", g.id()))))
        .collect()
}

/// Shuffled `folds`-way split of `0..n` into test index sets.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!("{folds} folds over {n} graphs")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// K-fold evaluation of KNN on dissimilarity embeddings, with several
/// prototype draws nested inside each fold.
pub fn evaluate_downstream(model: &GedanModel, mode: Mode, corpus: &[Graph], cfg: &PipelineConfig) -> Result<DownstreamReport> {
    let targets = corpus_targets(corpus)?;
    let folds = fold_indices(corpus.len(), cfg.folds, cfg.seed)?;
    let mut plans = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..corpus.len()).filter(|i| test.binary_search(i).is_err()).collect();
        for r in 0..cfg.repeats {
            let seed = cfg.seed.wrapping_add((f * cfg.repeats + r) as u64 + 1);
            let protos = select_prototypes(&train, cfg.prototypes, seed)?;
            plans.push((train.clone(), test.clone(), protos));
        }
    }
    let mut used: Vec<usize> = plans.iter().flat_map(|p| p.2.iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    let cols: Vec<Graph> = used.iter().map(|&p| corpus[p].clone()).collect();
    let dist = distance_matrix(model, corpus, &cols, mode)?;
    let column: BTreeMap<usize, usize> = used.iter().enumerate().map(|(c, &p)| (p, c)).collect();
    let mut values = Vec::with_capacity(plans.len());
    let mut metric = String::new();
    for (train, test, protos) in &plans {
        let vec_of = |i: usize| -> Vec<f64> { protos.iter().map(|p| dist[i][column[p]]).collect() };
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| vec_of(i)).collect();
        let ty: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let sx: Vec<Vec<f64>> = test.iter().map(|&i| vec_of(i)).collect();
        let sy: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
        let pred = knn_predict(&tx, &ty, &sx, cfg.k, cfg.task)?;
        let m = task_metrics(&pred, &sy, cfg.task)?;
        metric = m.name().to_string();
        values.push(m.value());
    }
    let (mean, std) = mean_std(&values);
    Ok(DownstreamReport {
        metric,
        values,
        mean,
        std,
    })
}

/// The 16 configurations with node/edge insertion/deletion prices in {1, 2}.
pub fn grid_configs() -> Vec<EditCostConfig> {
    let mut out = Vec::with_capacity(16);
    for bits in 0..16u32 {
        let price = |b: u32| if bits >> b & 1 == 1 { 2.0 } else { 1.0 };
        out.push(EditCostConfig {
            node_del: price(3),
            node_ins: price(2),
            edge_del: price(1),
            edge_ins: price(0),
            node_sub: 1.0,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub costs: EditCostConfig,
    pub report: DownstreamReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Row with the highest mean downstream metric.
    pub best: usize,
    /// Mean and standard deviation of the per-configuration means.
    pub mean: f64,
    pub std: f64,
}

impl GridReport {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Fixed-cost baseline: for every grid configuration the model scores pairs
/// in unsupervised mode with those prices (after optional unsupervised
/// training) and is evaluated downstream.
pub fn grid_search_costs(
    model: &GedanModel,
    corpus: &[Graph],
    unsup: Option<&UnsupervisedConfig>,
    pipeline: &PipelineConfig,
) -> Result<GridReport> {
    let mut rows = Vec::with_capacity(16);
    for costs in grid_configs() {
        let mut m = model.clone();
        m.config.costs = costs;
        m.config.lambda = 1.0;
        if let Some(cfg) = unsup {
            m = train_unsupervised(&m, corpus, None, cfg)?.best_model;
        }
        let report = evaluate_downstream(&m, Mode::Unsupervised, corpus, pipeline)?;
        rows.push(GridRow { costs, report });
    }
    let best = (0..rows.len())
        .max_by(|&a, &b| rows[a].report.mean.total_cmp(&rows[b].report.mean).then(b.cmp(&a)))
        .expect("grid is non-empty");
    let (mean, std) = mean_std(&rows.iter().map(|r| r.report.mean).collect::<Vec<_>>());
    Ok(GridReport { rows, best, mean, std })
}

/// Triples `[anchor, near, far]` from `ids` whose targets satisfy
/// `|t_anchor - t_near| < |t_anchor - t_far|`.
pub fn sample_triples(targets: &[f64], ids: &[usize], count: usize, seed: u64) -> Result<Vec<[usize; 3]>> {
    if ids.len() < 3 {
        return Err(Error::InvalidArgument(format!("{} graphs cannot form triples", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::InvalidArgument("targets are too uniform to form ordered triples".into()));
        }
        let a = ids[rng.random_range(0..ids.len())];
        let b = ids[rng.random_range(0..ids.len())];
        let c = ids[rng.random_range(0..ids.len())];
        if a == b || a == c || b == c {
            continue;
        }
        let (db, dc) = ((targets[a] - targets[b]).abs(), (targets[a] - targets[c]).abs());
        if db < dc {
            out.push([a, b, c]);
        } else if dc < db {
            out.push([a, c, b]);
        }
    }
    Ok(out)
}

/// Share of triples whose model distances are ordered like their targets
/// (`d(anchor, near) < d(anchor, far)`; ties count as wrong).
pub fn triple_accuracy(model: &GedanModel, mode: Mode, graphs: &[Graph], triples: &[[usize; 3]]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::InvalidArgument("no triples".into()));
    }
    let hits = triples
        .par_iter()
        .map(|&[a, b, c]| {
            let near = pair_distance(model, &graphs[a], &graphs[b], mode)?;
            let far = pair_distance(model, &graphs[a], &graphs[c], mode)?;
            Ok(usize::from(near < far))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / triples.len() as f64)
}
