use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, mean_grads, parallel_grads, split_indices, EpochRecord, Regime};
use crate::autodiff::{adam_step, AdamState, Axis, Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::{task_metrics, Task};
use crate::gedan::{GedanModel, Mode};
use crate::graph::Graph;

pub const HEAD_GROUP: &str = "head";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Softmax temperature of the contrastive term.
    pub contrastive_temp: f64,
    /// Weight of the downstream task term; zero trains contrastively only.
    pub task_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrastive_temp: 1.0,
            task_weight: 1.0,
        }
    }
}

/// Which key counts as the positive for the contrastive term.
#[derive(Debug, Clone, PartialEq)]
pub enum Positive {
    /// A fixed key slot.
    Index(usize),
    /// Any of these same-class slots; the one whose current distance is
    /// closest to their mean distance wins.
    SameClass(Vec<usize>),
}

impl Positive {
    pub fn resolve(&self, scores: &[f64]) -> usize {
        match self {
            Positive::Index(y) => *y,
            Positive::SameClass(slots) => {
                let mean = slots.iter().map(|&s| scores[s]).sum::<f64>() / slots.len() as f64;
                *slots
                    .iter()
                    .min_by(|&&a, &&b| (scores[a] - mean).abs().total_cmp(&(scores[b] - mean).abs()))
                    .expect("same-class slots are never empty")
            }
        }
    }
}

/// A query graph with its `H` comparison keys.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyBatch {
    pub query: usize,
    pub query_target: f64,
    pub keys: Vec<usize>,
    pub key_targets: Vec<f64>,
    pub positive: Positive,
}

fn is_positive(t: f64) -> bool {
    t > 0.5
}

/// Draws `h` keys for `query` from `pool` (indices into `targets`).
///
/// Regression: the pool's minimum- and maximum-target graphs plus `h - 2`
/// random ones, ordered by target; the positive is the key whose target is
/// closest to the query's. Classification: `h` must be even; each class gets
/// its lowest-index graph plus `(h - 2) / 2` random ones, and every key of the
/// query's class is a positive candidate.
pub fn sample_keys(
    targets: &[f64],
    pool: &[usize],
    query: usize,
    h: usize,
    task: Task,
    rng: &mut impl Rng,
) -> Result<KeyBatch> {
    if h < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 keys, got {h}")));
    }
    if let Some(&bad) = pool.iter().chain([&query]).find(|&&i| i >= targets.len()) {
        return Err(Error::NodeOutOfRange {
            index: bad,
            len: targets.len(),
        });
    }
    let mut candidates: Vec<usize> = pool.iter().copied().filter(|&i| i != query).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let qt = targets[query];
    let (keys, positive) = match task {
        Task::Regression => {
            if candidates.len() < h {
                return Err(Error::InvalidArgument(format!(
                    "{} candidate keys for {h} slots",
                    candidates.len()
                )));
            }
            let by_target = |a: &usize, b: &usize| targets[*a].total_cmp(&targets[*b]).then(a.cmp(b));
            let lo = *candidates.iter().min_by(|a, b| by_target(a, b)).unwrap();
            let hi = *candidates.iter().max_by(|a, b| by_target(a, b)).unwrap();
            let rest: Vec<usize> = candidates.iter().copied().filter(|&i| i != lo && i != hi).collect();
            let mut keys: Vec<usize> = rest.choose_multiple(rng, h - 2).copied().collect();
            keys.sort_by(by_target);
            keys.insert(0, lo);
            keys.push(hi);
            let y = (0..h)
                .min_by(|&a, &b| (targets[keys[a]] - qt).abs().total_cmp(&(targets[keys[b]] - qt).abs()))
                .unwrap();
            (keys, Positive::Index(y))
        }
        Task::Classification => {
            if !h.is_multiple_of(2) {
                return Err(Error::InvalidArgument(format!("classification needs an even key count, got {h}")));
            }
            let per_class = h / 2;
            let mut keys = Vec::with_capacity(h);
            for class in [false, true] {
                let members: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&i| is_positive(targets[i]) == class)
                    .collect();
                if members.len() < per_class {
                    return Err(Error::InvalidArgument(format!(
                        "class {} has {} candidate keys, need {per_class}",
                        class as u8,
                        members.len()
                    )));
                }
                let mut chosen: Vec<usize> = members[1..].choose_multiple(rng, per_class - 1).copied().collect();
                chosen.sort_unstable();
                if class {
                    chosen.push(members[0]);
                } else {
                    chosen.insert(0, members[0]);
                }
                keys.extend(chosen);
            }
            let slots: Vec<usize> = (0..h)
                .filter(|&s| is_positive(targets[keys[s]]) == is_positive(qt))
                .collect();
            (keys, Positive::SameClass(slots))
        }
    };
    Ok(KeyBatch {
        query,
        query_target: qt,
        key_targets: keys.iter().map(|&k| targets[k]).collect(),
        keys,
        positive,
    })
}

/// `s_y / T + log sum_k exp(-s_k / T)` for a `1 x H` row of distances.
pub fn loss_contrastive(tape: &mut Tape, scores: Var, positive: usize, temp: f64) -> Result<Var> {
    let [rows, h] = tape.shape(scores);
    if rows != 1 || positive >= h {
        return Err(Error::InvalidArgument(format!(
            "positive {positive} for scores of shape {rows}x{h}"
        )));
    }
    if !(temp > 0.0) {
        return Err(Error::InvalidArgument(format!("contrastive temperature {temp}")));
    }
    let col = tape.transpose(scores);
    let sy = tape.gather_rows(col, &[positive])?;
    let sy = tape.scale(sy, 1.0 / temp);
    let neg = tape.scale(scores, -1.0 / temp);
    let lse = tape.logsumexp_rows(neg);
    tape.add(sy, lse)
}

/// Small MLP mapping the `H` key distances of a query to its target.
/// Regression heads output the value, classification heads a logit.
#[derive(Debug, Clone)]
pub struct TaskHead {
    pub store: ParamStore,
    keys: usize,
    hidden: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadMeta {
    keys: usize,
    hidden: usize,
}

impl TaskHead {
    pub fn new(keys: usize, hidden: usize, seed: u64) -> Result<Self> {
        if keys == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("task head needs keys and hidden units".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut normal = |r: usize, c: usize, std: f64| {
            let d = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(r, c, |_, _| d.sample(&mut rng))
        };
        let w1 = store.add("head.w1", HEAD_GROUP, normal(keys, hidden, (1.0 / keys as f64).sqrt()));
        let b1 = store.add("head.b1", HEAD_GROUP, Tensor::zeros(1, hidden));
        let w2 = store.add("head.w2", HEAD_GROUP, normal(hidden, 1, (1.0 / hidden as f64).sqrt()));
        let b2 = store.add("head.b2", HEAD_GROUP, Tensor::scalar(0.0));
        Ok(Self {
            store,
            keys,
            hidden,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, scores: Var) -> Result<Var> {
        let x = tape.matmul(scores, bind.get(self.w1))?;
        let x = tape.add(x, bind.get(self.b1))?;
        let x = tape.relu(x);
        let x = tape.matmul(x, bind.get(self.w2))?;
        tape.add(x, bind.get(self.b2))
    }

    pub fn predict(&self, scores: &[f64]) -> Result<f64> {
        if scores.len() != self.keys {
            return Err(Error::InvalidArgument(format!(
                "head expects {} distances, got {}",
                self.keys,
                scores.len()
            )));
        }
        let mut tape = Tape::new();
        let bind = self.store.bind_constants(&mut tape);
        let x = tape.constant(Tensor::row(scores.to_vec()));
        let out = self.forward(&mut tape, &bind, x)?;
        Ok(tape.value(out).item())
    }

    pub fn to_json(&self) -> Result<String> {
        let meta = HeadMeta {
            keys: self.keys,
            hidden: self.hidden,
        };
        let mut m = BTreeMap::new();
        m.insert("head".to_string(), serde_json::to_value(meta)?);
        self.store.to_json(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (store, meta) = ParamStore::from_json(text)?;
        let meta: HeadMeta = serde_json::from_value(
            meta.get("head")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing head metadata".into()))?,
        )?;
        let mut head = Self::new(meta.keys, meta.hidden, 0)?;
        head.store.copy_values_from(&store)?;
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Squared error for regression, binary cross-entropy on a logit for
/// classification.
pub fn loss_task(tape: &mut Tape, prediction: Var, target: f64, task: Task) -> Result<Var> {
    match task {
        Task::Regression => {
            let y = tape.constant(Tensor::scalar(target));
            let d = tape.sub(prediction, y)?;
            tape.mul(d, d)
        }
        Task::Classification => {
            let sp = tape.softplus(prediction, 1.0);
            let yz = tape.scale(prediction, if is_positive(target) { 1.0 } else { 0.0 });
            tape.sub(sp, yz)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostLearningConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Keys per query.
    pub keys: usize,
    pub weights: LossWeights,
    pub head_hidden: usize,
    pub val_fraction: f64,
    pub task: Task,
    pub seed: u64,
}

impl Default for CostLearningConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            lr: 3e-3,
            keys: 8,
            weights: LossWeights::default(),
            head_hidden: 16,
            val_fraction: 0.1,
            task: Task::Regression,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CostLearningOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_model: GedanModel,
    pub head: TaskHead,
}

struct QueryLoss {
    contrastive: f64,
    task: f64,
    prediction: f64,
}

fn query_loss(
    model: &GedanModel,
    head: &TaskHead,
    tape: &mut Tape,
    binds: &[Binding],
    corpus: &[Graph],
    batch: &KeyBatch,
    cfg: &CostLearningConfig,
) -> Result<(Var, QueryLoss)> {
    let q = &corpus[batch.query];
    let scores: Vec<Var> = batch
        .keys
        .iter()
        .map(|&k| Ok(model.forward_tape(tape, &binds[0], q, &corpus[k], Mode::Gedan)?.score))
        .collect::<Result<_>>()?;
    let row = tape.concat(&scores, Axis::Cols)?;
    let values = tape.value(row).data().to_vec();
    let y = batch.positive.resolve(&values);
    let lc = loss_contrastive(tape, row, y, cfg.weights.contrastive_temp)?;
    let pred = head.forward(tape, &binds[1], row)?;
    let prediction = tape.value(pred).item();
    let contrastive = tape.value(lc).item();
    let lt = loss_task(tape, pred, batch.query_target, cfg.task)?;
    let task = tape.value(lt).item();
    if cfg.weights.task_weight == 0.0 {
        return Ok((lc, QueryLoss { contrastive, task, prediction }));
    }
    let wt = tape.scale(lt, cfg.weights.task_weight);
    Ok((tape.add(lc, wt)?, QueryLoss { contrastive, task, prediction }))
}

/// Learns the encoder, the per-level cost networks and their weights from
/// graph-level targets: each query is contrasted against `keys` reference
/// graphs and a task head predicts its target from those distances. The best
/// epoch minimizes the validation loss.
pub fn train_cost_learning(
    model: &GedanModel,
    corpus: &[Graph],
    cfg: &CostLearningConfig,
) -> Result<CostLearningOutcome> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument("cost learning needs epochs and a batch size".into()));
    }
    let targets: Vec<f64> = corpus
        .iter()
        .map(|g| g.target().ok_or_else(|| Error::MissingTarget(format!("graph {} has no target", g.id()))))
        .collect::<Result<_>>()?;
    let mut model = model.clone();
    Regime::CostLearning.apply(&mut model.store);
    let mut head = TaskHead::new(cfg.keys, cfg.head_hidden, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, val) = split_indices(corpus.len(), cfg.val_fraction, &mut rng);
    train.sort_unstable();
    let pool = train.clone();
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let val_batches: Vec<KeyBatch> = val
        .iter()
        .map(|&q| sample_keys(&targets, &pool, q, cfg.keys, cfg.task, &mut val_rng))
        .collect::<Result<_>>()?;
    let mut adam_model = AdamState::new(&model.store, cfg.lr);
    let mut adam_head = AdamState::new(&head.store, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GedanModel, TaskHead)> = None;
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let (mut total, mut contrastive, mut task) = (0.0, 0.0, 0.0);
        for chunk in train.chunks(cfg.batch_size) {
            let batches: Vec<KeyBatch> = chunk
                .iter()
                .map(|&q| sample_keys(&targets, &pool, q, cfg.keys, cfg.task, &mut rng))
                .collect::<Result<_>>()?;
            let (losses, mut grads) = parallel_grads(&[&model.store, &head.store], &batches, |tape, binds, b| {
                query_loss(&model, &head, tape, binds, corpus, b, cfg)
            })?;
            for (loss, parts) in &losses {
                total += loss;
                contrastive += parts.contrastive;
                task += parts.task;
            }
            check_finite(epoch, "cost-learning loss", total)?;
            let mut head_grads = grads.pop().expect("two stores");
            let mut model_grads = grads.pop().expect("two stores");
            mean_grads(&mut model_grads, batches.len());
            mean_grads(&mut head_grads, batches.len());
            model.store.zero_grad();
            model.store.accumulate(&model_grads);
            adam_step(&mut model.store, &mut adam_model)?;
            head.store.zero_grad();
            head.store.accumulate(&head_grads);
            adam_step(&mut head.store, &mut adam_head)?;
        }
        let n = train.len() as f64;
        let mut record = EpochRecord {
            epoch,
            train_loss: total / n,
            contrastive_loss: Some(contrastive / n),
            task_loss: Some(task / n),
            temperature: model.temperature(),
            ..EpochRecord::default()
        };
        let mut key = -(epoch as f64);
        if !val_batches.is_empty() {
            let results: Vec<(f64, QueryLoss)> = val_batches
                .par_iter()
                .map(|b| {
                    let mut tape = Tape::new();
                    let binds = [model.store.bind_constants(&mut tape), head.store.bind_constants(&mut tape)];
                    let (loss, parts) = query_loss(&model, &head, &mut tape, &binds, corpus, b, cfg)?;
                    Ok((tape.value(loss).item(), parts))
                })
                .collect::<Result<_>>()?;
            let val_loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
            let preds: Vec<f64> = results.iter().map(|r| r.1.prediction).collect();
            let truth: Vec<f64> = val_batches.iter().map(|b| b.query_target).collect();
            record.val_loss = Some(val_loss);
            record.val_metric = task_metrics(&preds, &truth, cfg.task).ok().map(|m| m.value());
            key = val_loss;
        }
        if best.as_ref().is_none_or(|(b, ..)| key < *b) {
            best = Some((key, epoch, model.clone(), head.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, best_model, head) = best.expect("at least one epoch");
    Ok(CostLearningOutcome {
        history,
        best_epoch,
        best_model,
        head,
    })
}
