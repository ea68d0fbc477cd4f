use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, mean_grads, parallel_grads, EpochRecord, Regime, TrainOutcome};
use crate::autodiff::{adam_step, AdamState, ParamGrads};
use crate::error::{Error, Result};
use crate::eval::rank_metrics;
use crate::ged::LabelRow;
use crate::gedan::{GedanModel, Mode, TEMPERATURE_GROUP};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub pairs_per_epoch: usize,
    pub lr: f64,
    /// Share of pairs that are self-pairs or near-duplicates.
    pub self_fraction: f64,
    pub learn_temperature: bool,
    pub seed: u64,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 16,
            pairs_per_epoch: 256,
            lr: 1e-3,
            self_fraction: 0.5,
            learn_temperature: true,
            seed: 0,
        }
    }
}

/// Copy of `g` with one random edit: a relabel, an edge removal or an edge
/// insertion. Labels are drawn from `1..=max_label`.
pub fn near_duplicate(g: &Graph, max_label: usize, rng: &mut impl Rng) -> Graph {
    let n = g.node_count();
    let mut labels = g.labels().to_vec();
    let mut edges = g.edges().to_vec();
    let complete = edges.len() == n * n.saturating_sub(1) / 2;
    match rng.random_range(0..3) {
        _ if n == 0 => {}
        0 if max_label > 1 => {
            let v = rng.random_range(0..n);
            let old = labels[v];
            while labels[v] == old {
                labels[v] = rng.random_range(1..=max_label);
            }
        }
        1 if !edges.is_empty() => {
            edges.remove(rng.random_range(0..edges.len()));
        }
        _ if !complete => loop {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v && !g.has_edge(u, v) {
                edges.push((u, v));
                break;
            }
        },
        _ => {}
    }
    Graph::new(g.id(), labels, edges, None).expect("edits keep the graph valid")
}

/// Pairs for one epoch: a `self_fraction` share pairs a graph with itself or
/// a near-duplicate (even odds), the rest are uniform random pairs.
pub fn sample_unsupervised_pairs(
    corpus: &[Graph],
    count: usize,
    self_fraction: f64,
    rng: &mut impl Rng,
) -> Vec<(Graph, Graph)> {
    let max_label = corpus.iter().map(Graph::max_label).max().unwrap_or(1);
    (0..count)
        .map(|_| {
            let g = &corpus[rng.random_range(0..corpus.len())];
            if rng.random_bool(self_fraction) {
                let h = if rng.random_bool(0.5) {
                    g.clone()
                } else {
                    near_duplicate(g, max_label, rng)
                };
                (g.clone(), h)
            } else {
                (g.clone(), corpus[rng.random_range(0..corpus.len())].clone())
            }
        })
        .collect()
}

/// Mean unsupervised score over `pairs` and its gradient. Learned costs and
/// level weights must be frozen.
pub fn loss_unsupervised(model: &GedanModel, pairs: &[(Graph, Graph)]) -> Result<(f64, ParamGrads)> {
    let regime = Regime::Unsupervised {
        learn_temperature: model.store.group_trainable(TEMPERATURE_GROUP),
    };
    regime.check(&model.store)?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (losses, mut grads) = parallel_grads(&[&model.store], pairs, |tape, binds, (g, h)| {
        Ok((model.forward_tape(tape, &binds[0], g, h, Mode::Unsupervised)?.score, ()))
    })?;
    let mut grads = grads.remove(0);
    mean_grads(&mut grads, pairs.len());
    Ok((losses.iter().map(|l| l.0).sum::<f64>() / pairs.len() as f64, grads))
}

/// Scores of labelled pairs against their exact distances.
pub(crate) fn labelled_metrics(
    model: &GedanModel,
    graphs: &[Graph],
    rows: &[LabelRow],
    mode: Mode,
) -> Result<(f64, f64, f64)> {
    let pred: Vec<f64> = rows
        .par_iter()
        .map(|r| model.score(&graphs[r.i], &graphs[r.j], mode))
        .collect::<Result<_>>()?;
    let truth: Vec<f64> = rows.iter().map(|r| r.ged).collect();
    let m = rank_metrics(&pred, &truth)?;
    Ok((m.rmse, m.tau, m.rho))
}

/// Trains the encoder (and optionally the match temperature) to minimize
/// unsupervised scores. With validation pairs the best epoch is the one with
/// the lowest RMSE against their exact distances.
pub fn train_unsupervised(
    model: &GedanModel,
    corpus: &[Graph],
    validation: Option<(&[Graph], &[LabelRow])>,
    cfg: &UnsupervisedConfig,
) -> Result<TrainOutcome> {
    if corpus.is_empty() || cfg.batch_size == 0 || cfg.pairs_per_epoch == 0 {
        return Err(Error::InvalidArgument(
            "unsupervised training needs graphs, a batch size and pairs per epoch".into(),
        ));
    }
    let mut model = model.clone();
    Regime::Unsupervised {
        learn_temperature: cfg.learn_temperature,
    }
    .apply(&mut model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GedanModel)> = None;
    for epoch in 1..=cfg.epochs {
        let pairs = sample_unsupervised_pairs(corpus, cfg.pairs_per_epoch, cfg.self_fraction, &mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, grads) = loss_unsupervised(&model, batch)?;
            check_finite(epoch, "unsupervised loss", loss)?;
            total += loss * batch.len() as f64;
            model.store.zero_grad();
            model.store.accumulate(&grads);
            adam_step(&mut model.store, &mut adam)?;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: total / pairs.len() as f64,
            temperature: model.temperature(),
            ..EpochRecord::default()
        };
        let mut key = -(epoch as f64);
        if let Some((graphs, rows)) = validation {
            let (rmse, tau, rho) = labelled_metrics(&model, graphs, rows, Mode::Unsupervised)?;
            record.val_rmse = Some(rmse);
            record.val_tau = Some(tau);
            record.val_rho = Some(rho);
            key = rmse;
        }
        if best.as_ref().is_none_or(|(b, _, _)| key < *b) {
            best = Some((key, epoch, model.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, best_model) = best.unwrap_or((0.0, 0, model));
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::GsParams;
    use crate::encoder::ENCODER_GROUP;
    use crate::gedan::{ModelConfig, COST_GROUP};
    use crate::graph::synth_random;

    fn model() -> GedanModel {
        let cfg = ModelConfig {
            num_labels: 4,
            dim: 8,
            depth: 2,
            cost_hidden: 4,
            lambda: 1.0,
            ..ModelConfig::default()
        };
        GedanModel::new(cfg, GsParams::new(16).unwrap()).unwrap()
    }

    #[test]
    fn near_duplicates_differ_by_one_edit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..50 {
            let g = synth_random(6, 0.4, 3, seed);
            let h = near_duplicate(&g, 3, &mut rng);
            let ged = crate::ged::exact_ged(&g, &h, &Default::default()).unwrap();
            assert!(ged <= 1.0, "{ged}");
        }
    }

    #[test]
    fn only_encoder_receives_gradients() {
        let mut m = model();
        Regime::Unsupervised { learn_temperature: false }.apply(&mut m.store);
        let pairs = vec![(synth_random(4, 0.5, 3, 1), synth_random(5, 0.5, 3, 2))];
        let (_, grads) = loss_unsupervised(&m, &pairs).unwrap();
        m.store.zero_grad();
        m.store.accumulate(&grads);
        assert!(m.store.group_grad_max_abs(ENCODER_GROUP) > 0.0);
        for g in m.store.groups().iter().filter(|g| *g != ENCODER_GROUP) {
            assert_eq!(m.store.group_grad_max_abs(g), 0.0, "{g}");
        }
        m.store.set_group_trainable(COST_GROUP, true);
        assert!(loss_unsupervised(&m, &pairs).is_err());
    }

    #[test]
    fn self_pairs_drive_loss_down() {
        let corpus: Vec<Graph> = (0..6).map(|s| synth_random(5, 0.5, 3, s)).collect();
        let cfg = UnsupervisedConfig {
            epochs: 6,
            pairs_per_epoch: 32,
            batch_size: 8,
            lr: 0.01,
            self_fraction: 1.0,
            ..UnsupervisedConfig::default()
        };
        let out = train_unsupervised(&model(), &corpus, None, &cfg).unwrap();
        let first = out.history[0].train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let again = train_unsupervised(&model(), &corpus, None, &cfg).unwrap();
        assert_eq!(out.history, again.history);
    }
}
