//! Dissimilarity embeddings against prototype graphs and KNN prediction.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Task;
use crate::error::{Error, Result};
use crate::gedan::{GedanModel, Mode};
use crate::graph::Graph;

/// Uniform sample of `count` distinct ids from `train`, in sampling order.
pub fn select_prototypes(train: &[usize], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > train.len() {
        return Err(Error::InvalidArgument(format!(
            "{count} prototypes requested from {} training graphs",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(train.choose_multiple(&mut rng, count).copied().collect())
}

/// Matching cost between two graphs: the model score without the
/// temperature regularizer, so that it is non-negative.
pub fn pair_distance(model: &GedanModel, g: &Graph, h: &Graph, mode: Mode) -> Result<f64> {
    let p = model.predict(g, h, mode)?;
    Ok(p.score - p.temperature_penalty)
}

/// `rows x cols` matrix of [`pair_distance`], computed in parallel.
pub fn distance_matrix(model: &GedanModel, rows: &[Graph], cols: &[Graph], mode: Mode) -> Result<Vec<Vec<f64>>> {
    rows.par_iter()
        .map(|g| cols.iter().map(|h| pair_distance(model, g, h, mode)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityEmbedding {
    /// Indices of the prototype graphs.
    pub prototypes: Vec<usize>,
    /// One vector per embedded graph, one entry per prototype.
    pub vectors: Vec<Vec<f64>>,
}

/// Embeds every graph as its distances to `graphs[p]` for each prototype `p`.
pub fn embed(graphs: &[Graph], prototypes: &[usize], model: &GedanModel, mode: Mode) -> Result<DissimilarityEmbedding> {
    if let Some(&bad) = prototypes.iter().find(|&&p| p >= graphs.len()) {
        return Err(Error::NodeOutOfRange {
            index: bad,
            len: graphs.len(),
        });
    }
    let protos: Vec<Graph> = prototypes.iter().map(|&p| graphs[p].clone()).collect();
    Ok(DissimilarityEmbedding {
        prototypes: prototypes.to_vec(),
        vectors: distance_matrix(model, graphs, &protos, mode)?,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-nearest-neighbour prediction in Euclidean space. Regression averages
/// the neighbours' targets; classification takes a majority vote over
/// `target > 0.5`, ties going to class 0. Distance ties keep training order.
pub fn knn_predict(train_x: &[Vec<f64>], train_y: &[f64], test_x: &[Vec<f64>], k: usize, task: Task) -> Result<Vec<f64>> {
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::InvalidArgument(format!(
            "knn needs a non-empty training set, got {} points and {} targets",
            train_x.len(),
            train_y.len()
        )));
    }
    if k == 0 || k > train_x.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} training points", train_x.len())));
    }
    Ok(test_x
        .iter()
        .map(|x| {
            let mut order: Vec<(f64, usize)> = train_x.iter().enumerate().map(|(i, t)| (sq_dist(x, t), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let near = order[..k].iter().map(|&(_, i)| train_y[i]);
            match task {
                Task::Regression => near.sum::<f64>() / k as f64,
                Task::Classification => {
                    let pos = near.filter(|&y| y > 0.5).count();
                    if 2 * pos > k {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect())
}
