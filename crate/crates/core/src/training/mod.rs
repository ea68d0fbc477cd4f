//! Training regimes: unsupervised self-organization, supervised GED
//! regression and edit-cost learning.

mod cost_learning;
mod supervised;
mod unsupervised;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamGrads, ParamStore, Tape, Var};
use crate::encoder::ENCODER_GROUP;
use crate::error::{Error, Result};
use crate::gedan::{GedanModel, BETA_GROUP, COST_GROUP, TEMPERATURE_GROUP};

pub use cost_learning::{
    loss_contrastive, loss_task, sample_keys, train_cost_learning, CostLearningConfig,
    CostLearningOutcome, KeyBatch, LossWeights, Positive, TaskHead, HEAD_GROUP,
};
pub use supervised::{loss_supervised_ged, train_supervised_ged, SupervisedConfig};
pub use unsupervised::{
    loss_unsupervised, near_duplicate, sample_unsupervised_pairs, train_unsupervised,
    UnsupervisedConfig,
};

/// Which parameter groups a regime may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Encoder only, plus the match temperature when it is learnable.
    Unsupervised { learn_temperature: bool },
    /// Everything but the assignment module.
    SupervisedGed,
    /// Encoder, learned costs and their level weights.
    CostLearning,
}

const MODEL_GROUPS: [&str; 4] = [ENCODER_GROUP, COST_GROUP, BETA_GROUP, TEMPERATURE_GROUP];

impl Regime {
    pub fn trainable_groups(self) -> &'static [&'static str] {
        match self {
            Regime::Unsupervised { learn_temperature: true } => &[ENCODER_GROUP, TEMPERATURE_GROUP],
            Regime::Unsupervised { learn_temperature: false } => &[ENCODER_GROUP],
            Regime::SupervisedGed => &MODEL_GROUPS,
            Regime::CostLearning => &[ENCODER_GROUP, COST_GROUP, BETA_GROUP],
        }
    }

    /// Marks exactly the regime's groups trainable.
    pub fn apply(self, store: &mut ParamStore) {
        store.set_all_trainable(false);
        for g in self.trainable_groups() {
            store.set_group_trainable(g, true);
        }
    }

    /// Fails if a group the regime must not touch is trainable.
    pub fn check(self, store: &ParamStore) -> Result<()> {
        let allowed = self.trainable_groups();
        match MODEL_GROUPS
            .iter()
            .find(|g| !allowed.contains(g) && store.group_trainable(g))
        {
            Some(g) => Err(Error::FrozenGroupTrainable(g)),
            None => Ok(()),
        }
    }
}

/// One row of a training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub contrastive_loss: Option<f64>,
    pub task_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_rmse: Option<f64>,
    pub val_tau: Option<f64>,
    pub val_rho: Option<f64>,
    pub val_metric: Option<f64>,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) of the best validation score; the last epoch when no
    /// validation data is given.
    pub best_epoch: usize,
    pub best_model: GedanModel,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-item losses (with side values) and summed gradients for every store,
/// computed in parallel and reduced in item order.
pub(crate) fn parallel_grads<T, E, F>(
    stores: &[&ParamStore],
    items: &[T],
    f: F,
) -> Result<(Vec<(f64, E)>, Vec<ParamGrads>)>
where
    T: Sync,
    E: Send,
    F: Fn(&mut Tape, &[Binding], &T) -> Result<(Var, E)> + Sync,
{
    let results: Vec<((f64, E), Vec<ParamGrads>)> = items
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let binds: Vec<Binding> = stores.iter().map(|s| s.bind(&mut tape)).collect();
            let (loss, extra) = f(&mut tape, &binds, item)?;
            let value = tape.value(loss).item();
            let mut grads = tape.backward(loss)?;
            Ok(((value, extra), binds.iter().map(|b| b.collect(&mut grads)).collect()))
        })
        .collect::<Result<_>>()?;
    let mut losses = Vec::with_capacity(results.len());
    let mut merged: Option<Vec<ParamGrads>> = None;
    for (loss, grads) in results {
        losses.push(loss);
        merged = Some(match merged {
            None => grads,
            Some(acc) => acc.into_iter().zip(grads).map(|(a, b)| a.merge(b)).collect(),
        });
    }
    let merged = merged.unwrap_or_else(|| stores.iter().map(|s| ParamGrads(vec![None; s.len()])).collect());
    Ok((losses, merged))
}

pub(crate) fn check_finite(epoch: usize, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            msg: format!("{what} became {value}"),
        })
    }
}

/// Splits `0..n` into shuffled train and validation index sets.
pub(crate) fn split_indices(n: usize, val_fraction: f64, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let val = idx.split_off(n - n_val.min(n));
    (idx, val)
}

/// Divides every gradient by `n`.
pub(crate) fn mean_grads(grads: &mut ParamGrads, n: usize) {
    let scale = 1.0 / n as f64;
    for g in grads.0.iter_mut().flatten() {
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
}
