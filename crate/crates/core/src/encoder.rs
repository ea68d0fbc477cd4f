//! Multi-scale GIN node representations on the unit sphere.
//!
//! Level 0 is the normalized label embedding. Level `k` sums each node with
//! its neighbors, applies a two-layer ReLU MLP and an affine layer norm, adds
//! the previous level and projects back onto the sphere.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, EPSILON_LABEL};

pub const ENCODER_GROUP: &str = "encoder";
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct LevelParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    embed: ParamId,
    levels: Vec<LevelParams>,
    num_labels: usize,
    dim: usize,
}

/// Per-level node representations of one graph. Row `n` of every level is
/// the representation of an ε-node.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleEmbedding {
    levels: Vec<Tensor>,
}

impl MultiScaleEmbedding {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Number of real nodes.
    pub fn node_count(&self) -> usize {
        self.levels[0].rows() - 1
    }

    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k]
    }

    /// Row of node `v` at level `k`; `v == node_count()` is the ε-node.
    pub fn node(&self, k: usize, v: usize) -> &[f64] {
        self.levels[k].row_slice(v)
    }
}

fn random_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}

fn unit_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    for i in 0..rows {
        let norm = t.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..cols {
            t.set(i, j, t.get(i, j) / norm);
        }
    }
    t
}

impl EncoderParams {
    /// Registers a randomly initialized encoder in `store`. `num_labels`
    /// counts the ε label 0.
    pub fn new(
        store: &mut ParamStore,
        num_labels: usize,
        dim: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim < 2 || num_labels < 2 {
            return Err(Error::InvalidArgument(format!(
                "encoder needs width >= 2 and at least one real label, got d={dim}, labels={num_labels}"
            )));
        }
        let embed = store.add("encoder.embed", ENCODER_GROUP, unit_rows(num_labels, dim, rng));
        let std = (1.0 / dim as f64).sqrt();
        let levels = (1..=depth)
            .map(|k| LevelParams {
                w1: store.add(format!("encoder.{k}.w1"), ENCODER_GROUP, random_matrix(dim, dim, std, rng)),
                b1: store.add(format!("encoder.{k}.b1"), ENCODER_GROUP, random_matrix(1, dim, 0.5, rng)),
                w2: store.add(format!("encoder.{k}.w2"), ENCODER_GROUP, random_matrix(dim, dim, std, rng)),
                b2: store.add(format!("encoder.{k}.b2"), ENCODER_GROUP, random_matrix(1, dim, 0.5, rng)),
                gamma: store.add(format!("encoder.{k}.gamma"), ENCODER_GROUP, Tensor::full(1, dim, 1.0)),
                beta: store.add(format!("encoder.{k}.beta"), ENCODER_GROUP, Tensor::zeros(1, dim)),
            })
            .collect();
        Ok(Self {
            embed,
            levels,
            num_labels,
            dim,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Encodes `g` plus one trailing ε-node; returns one `(n+1) x d` matrix
    /// per level `0..=K`.
    pub fn encode_tape(&self, tape: &mut Tape, bind: &Binding, g: &Graph) -> Result<Vec<Var>> {
        let n = g.node_count();
        let mut labels = g.labels().to_vec();
        labels.push(EPSILON_LABEL);
        if let Some(&label) = labels.iter().find(|&&l| l >= self.num_labels) {
            return Err(Error::UnknownLabel {
                label,
                rows: self.num_labels,
            });
        }
        let mut adj = Tensor::identity(n + 1);
        for &(u, v) in g.edges() {
            adj.set(u, v, 1.0);
            adj.set(v, u, 1.0);
        }
        let adj = tape.constant(adj);
        let h0 = tape.gather_rows(bind.get(self.embed), &labels)?;
        let mut h = tape.row_normalize(h0);
        let mut out = vec![h];
        for lp in &self.levels {
            let z = tape.matmul(adj, h)?;
            let z = tape.matmul(z, bind.get(lp.w1))?;
            let z = tape.add(z, bind.get(lp.b1))?;
            let z = tape.relu(z);
            let z = tape.matmul(z, bind.get(lp.w2))?;
            let z = tape.add(z, bind.get(lp.b2))?;
            let z = tape.relu(z);
            let z = tape.layer_norm(z, LN_EPS);
            let z = tape.mul(z, bind.get(lp.gamma))?;
            let z = tape.add(z, bind.get(lp.beta))?;
            let z = tape.add(z, h)?;
            h = tape.row_normalize(z);
            out.push(h);
        }
        Ok(out)
    }

    /// Inference-time encoding.
    pub fn encode(&self, store: &ParamStore, g: &Graph) -> Result<MultiScaleEmbedding> {
        let mut tape = Tape::new();
        let bind = store.bind_constants(&mut tape);
        let vars = self.encode_tape(&mut tape, &bind, g)?;
        Ok(MultiScaleEmbedding {
            levels: vars.into_iter().map(|v| tape.value(v).clone()).collect(),
        })
    }
}

/// `(1 - cos(hv, hw)) / 2`, in `[0, 1]`.
pub fn level_distance(hv: &[f64], hw: &[f64]) -> Result<f64> {
    let dot: f64 = hv.iter().zip(hw).map(|(a, b)| a * b).sum();
    let nv = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nw = hw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv == 0.0 || nw == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((0.5 * (1.0 - dot / (nv * nw))).clamp(0.0, 1.0))
}

/// Sum of level distances over levels `0..=depth`.
pub fn multiscale_distance(
    v: usize,
    w: usize,
    emb_g: &MultiScaleEmbedding,
    emb_h: &MultiScaleEmbedding,
    depth: usize,
) -> Result<f64> {
    if depth > emb_g.depth() || depth > emb_h.depth() {
        return Err(Error::InvalidArgument(format!(
            "level {depth} requested, embeddings have {} and {}",
            emb_g.depth(),
            emb_h.depth()
        )));
    }
    for (x, e) in [(v, emb_g), (w, emb_h)] {
        if x > e.node_count() {
            return Err(Error::NodeOutOfRange {
                index: x,
                len: e.node_count() + 1,
            });
        }
    }
    (0..=depth).try_fold(0.0, |acc, k| Ok(acc + level_distance(emb_g.node(k, v), emb_h.node(k, w))?))
}
