use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::unsupervised::labelled_metrics;
use super::{check_finite, mean_grads, parallel_grads, split_indices, EpochRecord, Regime, TrainOutcome};
use crate::autodiff::{adam_step, AdamState, ParamGrads, Tensor};
use crate::error::{Error, Result};
use crate::ged::LabelRow;
use crate::gedan::{GedanModel, Mode};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Mean smooth-L1 error between learned-cost scores and exact distances.
pub fn loss_supervised_ged(model: &GedanModel, graphs: &[Graph], rows: &[LabelRow]) -> Result<(f64, ParamGrads)> {
    Regime::SupervisedGed.check(&model.store)?;
    if rows.is_empty() {
        return Err(Error::MissingTarget("no labelled pairs in batch".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.i >= graphs.len() || r.j >= graphs.len()) {
        return Err(Error::MissingTarget(format!("pair ({}, {}) has no graphs", r.i, r.j)));
    }
    let (losses, mut grads) = parallel_grads(&[&model.store], rows, |tape, binds, r| {
        let score = model.forward_tape(tape, &binds[0], &graphs[r.i], &graphs[r.j], Mode::Gedan)?.score;
        let label = tape.constant(Tensor::scalar(r.ged));
        let diff = tape.sub(score, label)?;
        Ok((tape.smooth_l1(diff, 1.0), ()))
    })?;
    let mut grads = grads.remove(0);
    mean_grads(&mut grads, rows.len());
    Ok((losses.iter().map(|l| l.0).sum::<f64>() / rows.len() as f64, grads))
}

/// Regresses exact distances with every model group trainable and the
/// topological term switched off. The best epoch minimizes validation RMSE.
pub fn train_supervised_ged(
    model: &GedanModel,
    graphs: &[Graph],
    rows: &[LabelRow],
    cfg: &SupervisedConfig,
) -> Result<TrainOutcome> {
    if rows.len() < 2 || cfg.batch_size == 0 {
        return Err(Error::MissingTarget("supervised training needs labelled pairs".into()));
    }
    let mut model = model.clone();
    model.config.lambda = 0.0;
    Regime::SupervisedGed.apply(&mut model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(rows.len(), cfg.val_fraction, &mut rng);
    let val: Vec<LabelRow> = val_idx.iter().map(|&k| rows[k]).collect();
    let mut train: Vec<LabelRow> = train_idx.iter().map(|&k| rows[k]).collect();
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GedanModel)> = None;
    for epoch in 1..=cfg.epochs {
        rand::seq::SliceRandom::shuffle(train.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            let (loss, grads) = loss_supervised_ged(&model, graphs, batch)?;
            check_finite(epoch, "supervised loss", loss)?;
            total += loss * batch.len() as f64;
            model.store.zero_grad();
            model.store.accumulate(&grads);
            adam_step(&mut model.store, &mut adam)?;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            temperature: model.temperature(),
            ..EpochRecord::default()
        };
        let mut key = -(epoch as f64);
        if val.len() >= 2 && val.iter().any(|r| r.ged != val[0].ged) {
            let (rmse, tau, rho) = labelled_metrics(&model, graphs, &val, Mode::Gedan)?;
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
    use crate::autodiff::Tape;
    use crate::gedan::ModelConfig;
    use crate::graph::synth_random;

    #[test]
    fn smooth_l1_branches() {
        let mut t = Tape::new();
        let e = t.constant(Tensor::row(vec![0.0, 0.5, -3.0]));
        let l = t.smooth_l1(e, 1.0);
        assert_eq!(t.value(l).data(), &[0.0, 0.125, 2.5]);
    }

    #[test]
    fn missing_labels_are_rejected() {
        let cfg = ModelConfig {
            num_labels: 4,
            dim: 4,
            depth: 1,
            cost_hidden: 3,
            lambda: 0.0,
            ..ModelConfig::default()
        };
        let mut model = GedanModel::new(cfg, GsParams::new(16).unwrap()).unwrap();
        Regime::SupervisedGed.apply(&mut model.store);
        let graphs = vec![synth_random(3, 0.5, 3, 0)];
        assert!(matches!(loss_supervised_ged(&model, &graphs, &[]), Err(Error::MissingTarget(_))));
        let bad = [LabelRow { i: 0, j: 3, ged: 1.0 }];
        assert!(loss_supervised_ged(&model, &graphs, &bad).is_err());
    }
}
