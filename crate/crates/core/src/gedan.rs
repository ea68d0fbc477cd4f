//! The matching frame and the differentiable GED forward passes.
//!
//! For graphs `g` (n nodes) and `h` (m nodes) every matrix is square of size
//! `N = n + m`. Rows `0..n` are nodes of `g` and rows `n..N` are ε-nodes;
//! columns `0..m` are nodes of `h` and columns `m..N` are ε-nodes. The
//! upper-right block prices deletions, the lower-left block insertions, and
//! only their diagonals are allowed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, GsParams};
use crate::autodiff::{softplus_inverse, softplus_unit, Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{level_distance, EncoderParams, MultiScaleEmbedding};
use crate::error::{Error, Result};
use crate::ged::{mapping_cost, EditCostConfig};
use crate::graph::Graph;

/// Finite stand-in for an infinite cost on forbidden frame entries.
pub const SENTINEL: f64 = 1e4;

pub const COST_GROUP: &str = "cost";
pub const BETA_GROUP: &str = "beta";
pub const TEMPERATURE_GROUP: &str = "temperature";

/// Softplus sharpness of the learned cost functions.
const COST_SOFTPLUS_BETA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Size of the label table, counting the ε label 0.
    pub num_labels: usize,
    pub dim: usize,
    pub depth: usize,
    pub cost_hidden: usize,
    pub costs: EditCostConfig,
    /// Weight of the topological term against the learned costs.
    pub lambda: f64,
    /// Weight of the `log T` penalty.
    pub lambda_temp: f64,
    /// When false the match temperature is dropped from the frame and the
    /// penalty.
    pub use_temperature: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_labels: 8,
            dim: 32,
            depth: 3,
            cost_hidden: 32,
            costs: EditCostConfig::default(),
            lambda: 0.5,
            lambda_temp: 0.1,
            use_temperature: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.lambda_temp >= 0.0) || self.cost_hidden == 0 {
            return Err(Error::InvalidArgument(
                "lambda_temp must be >= 0 and cost_hidden >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which score to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Topological costs only.
    Unsupervised,
    /// Topological costs blended with learned costs by `lambda`.
    Gedan,
}

#[derive(Debug, Clone, Copy)]
struct CostMlp {
    wa: ParamId,
    wb: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct GedanModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    cost_mlps: Vec<CostMlp>,
    betas: Vec<ParamId>,
    temperature: ParamId,
    pub gs: GsParams,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub score: Var,
    pub p: Var,
    /// Per-entry cost whose `P`-weighted sum (plus the temperature penalty)
    /// is the score.
    pub integrand: Var,
    pub iterations: usize,
}

/// Value-level result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub p: Tensor,
    pub integrand: Tensor,
    pub temperature_penalty: f64,
    pub n: usize,
    pub m: usize,
}

/// `(B, Mask)`: insertion/deletion prices and the sentinel mask.
pub fn build_b_mask(n: usize, m: usize, costs: &EditCostConfig, sentinel: f64) -> (Tensor, Tensor) {
    let size = n + m;
    let mut b = Tensor::zeros(size, size);
    let mut mask = Tensor::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            if i < n && j >= m {
                if j - m == i {
                    b.set(i, j, costs.node_del);
                } else {
                    mask.set(i, j, sentinel);
                }
            } else if i >= n && j < m {
                if i - n == j {
                    b.set(i, j, costs.node_ins);
                } else {
                    mask.set(i, j, sentinel);
                }
            }
        }
    }
    (b, mask)
}

/// Implied edge costs from degree differences; ε-nodes have degree 0.
pub fn build_d(g: &Graph, h: &Graph, costs: &EditCostConfig) -> Tensor {
    let (n, m) = (g.node_count(), h.node_count());
    let dg = g.degrees();
    let dh = h.degrees();
    Tensor::from_fn(n + m, n + m, |i, j| {
        let a = if i < n { dg[i] as f64 } else { 0.0 };
        let b = if j < m { dh[j] as f64 } else { 0.0 };
        (a - b).max(0.0) * costs.edge_del + (b - a).max(0.0) * costs.edge_ins
    })
}

/// One on every entry except the ε-vs-ε block.
fn real_entries(n: usize, m: usize) -> Tensor {
    Tensor::from_fn(n + m, n + m, |i, j| if i >= n && j >= m { 0.0 } else { 1.0 })
}

fn padded_index(real: usize, pad: usize) -> Vec<usize> {
    (0..real).chain(std::iter::repeat_n(real, pad)).collect()
}

/// Level distance matrices `M_0..=M_K` from precomputed embeddings.
pub fn build_m(emb_g: &MultiScaleEmbedding, emb_h: &MultiScaleEmbedding, depth: usize) -> Result<Vec<Tensor>> {
    let (n, m) = (emb_g.node_count(), emb_h.node_count());
    let gi = padded_index(n, m);
    let hi = padded_index(m, n);
    (0..=depth)
        .map(|k| {
            let mut t = Tensor::zeros(n + m, n + m);
            for i in 0..n + m {
                for j in 0..n + m {
                    if i < n || j < m {
                        t.set(i, j, level_distance(emb_g.node(k, gi[i]), emb_h.node(k, hi[j]))?);
                    }
                }
            }
            Ok(t)
        })
        .collect()
}

/// Row `i` rounded to its column under the hard assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardMatching {
    /// Frame row to frame column.
    pub sigma: Vec<usize>,
    /// Node of `g` to node of `h`, `None` for a deletion.
    pub map: Vec<Option<usize>>,
}

/// Rounds a soft permutation by solving the assignment on `-P`.
pub fn hard_decode(p: &Tensor, n: usize, m: usize) -> Result<HardMatching> {
    if p.rows() != n + m {
        return Err(Error::InvalidArgument(format!(
            "soft permutation of size {} does not match frame {}",
            p.rows(),
            n + m
        )));
    }
    let (sigma, _) = hungarian(&p.map(|x| -x))?;
    let map = (0..n).map(|i| (sigma[i] < m).then_some(sigma[i])).collect();
    Ok(HardMatching { sigma, map })
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    model: ModelConfig,
    gs: serde_json::Value,
}

impl GedanModel {
    pub fn new(config: ModelConfig, gs: GsParams) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, config.num_labels, config.dim, config.depth, &mut rng)?;
        let (d, hid) = (config.dim, config.cost_hidden);
        let cost_mlps = (0..=config.depth)
            .map(|k| CostMlp {
                wa: store.add(format!("cost.{k}.wa"), COST_GROUP, normal_matrix(d, hid, (1.0 / d as f64).sqrt(), &mut rng)),
                wb: store.add(format!("cost.{k}.wb"), COST_GROUP, normal_matrix(d, hid, (1.0 / d as f64).sqrt(), &mut rng)),
                b1: store.add(format!("cost.{k}.b1"), COST_GROUP, normal_matrix(1, hid, 0.5, &mut rng)),
                w2: store.add(format!("cost.{k}.w2"), COST_GROUP, normal_matrix(hid, 1, (1.0 / hid as f64).sqrt(), &mut rng)),
                b2: store.add(format!("cost.{k}.b2"), COST_GROUP, Tensor::scalar(0.0)),
            })
            .collect();
        let one = softplus_inverse(1.0);
        let betas = (0..=config.depth)
            .map(|k| store.add(format!("beta.{k}"), BETA_GROUP, Tensor::scalar(one)))
            .collect();
        let temperature = store.add("temperature", TEMPERATURE_GROUP, Tensor::scalar(one));
        Ok(Self {
            config,
            store,
            encoder,
            cost_mlps,
            betas,
            temperature,
            gs,
        })
    }

    pub fn temperature(&self) -> f64 {
        softplus_unit(self.store.value(self.temperature).item())
    }

    pub fn betas(&self) -> Vec<f64> {
        self.betas.iter().map(|&b| softplus_unit(self.store.value(b).item())).collect()
    }

    pub fn temperature_id(&self) -> ParamId {
        self.temperature
    }

    pub fn check_pair(&self, g: &Graph, h: &Graph) -> Result<()> {
        self.gs.check_frame(g.node_count() + h.node_count())
    }

    /// Learned cost matrix `C_k` from padded level-`k` representations.
    fn cost_matrix(&self, tape: &mut Tape, bind: &Binding, k: usize, hg: Var, hh: Var) -> Result<Var> {
        let size = tape.shape(hg)[0];
        let mlp = self.cost_mlps[k];
        let a = tape.matmul(hg, bind.get(mlp.wa))?;
        let b = tape.matmul(hh, bind.get(mlp.wb))?;
        let rows: Vec<usize> = (0..size * size).map(|r| r / size).collect();
        let cols: Vec<usize> = (0..size * size).map(|r| r % size).collect();
        let a = tape.gather_rows(a, &rows)?;
        let b = tape.gather_rows(b, &cols)?;
        let z = tape.add(a, b)?;
        let z = tape.add(z, bind.get(mlp.b1))?;
        let z = tape.relu(z);
        let z = tape.matmul(z, bind.get(mlp.w2))?;
        let z = tape.add(z, bind.get(mlp.b2))?;
        let z = tape.softplus(z, COST_SOFTPLUS_BETA);
        tape.reshape(z, size, size)
    }

    /// Builds the frame and scores the pair on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, bind: &Binding, g: &Graph, h: &Graph, mode: Mode) -> Result<ForwardVars> {
        self.check_pair(g, h)?;
        let (n, m) = (g.node_count(), h.node_count());
        let size = n + m;
        let eg = self.encoder.encode_tape(tape, bind, g)?;
        let eh = self.encoder.encode_tape(tape, bind, h)?;
        let gi = padded_index(n, m);
        let hi = padded_index(m, n);
        let real = tape.constant(real_entries(n, m));
        let mut hg_pad = Vec::with_capacity(eg.len());
        let mut hh_pad = Vec::with_capacity(eg.len());
        let mut m_levels = Vec::with_capacity(eg.len());
        for (&a, &b) in eg.iter().zip(&eh) {
            let pa = tape.gather_rows(a, &gi)?;
            let pb = tape.gather_rows(b, &hi)?;
            let pbt = tape.transpose(pb);
            let s = tape.matmul(pa, pbt)?;
            let s = tape.neg(s);
            let s = tape.add_scalar(s, 1.0);
            let s = tape.relu(s);
            let s = tape.scale(s, 0.5);
            m_levels.push(tape.mul(s, real)?);
            hg_pad.push(pa);
            hh_pad.push(pb);
        }
        let mut m_sum = m_levels[0];
        for &mk in &m_levels[1..] {
            m_sum = tape.add(m_sum, mk)?;
        }
        let cfg = &self.config;
        let temp = tape.softplus(bind.get(self.temperature), 1.0);
        let m_term = if cfg.use_temperature {
            tape.div(m_sum, temp)?
        } else {
            m_sum
        };
        let (b, mask) = build_b_mask(n, m, &cfg.costs, SENTINEL);
        let mut bd = b;
        bd.add_assign(&build_d(g, h, &cfg.costs));
        let bd = tape.constant(bd);
        let topo = tape.add(m_term, bd)?;
        let mask = tape.constant(mask);
        let matcher_cost = tape.add(topo, mask)?;
        let gs_vars = self.gs.bind_frozen(tape);
        let (p, iterations, _) = self.gs.apply(tape, gs_vars, matcher_cost, None)?;

        let integrand = match mode {
            Mode::Unsupervised => topo,
            Mode::Gedan => {
                let mut learned: Option<Var> = None;
                let mut beta_total: Option<Var> = None;
                for k in 0..m_levels.len() {
                    let c = self.cost_matrix(tape, bind, k, hg_pad[k], hh_pad[k])?;
                    let beta = tape.softplus(bind.get(self.betas[k]), 1.0);
                    let term = tape.mul(m_levels[k], c)?;
                    let term = tape.mul(term, beta)?;
                    learned = Some(match learned {
                        Some(acc) => tape.add(acc, term)?,
                        None => term,
                    });
                    beta_total = Some(match beta_total {
                        Some(acc) => tape.add(acc, beta)?,
                        None => beta,
                    });
                }
                let learned = tape.div(learned.expect("depth >= 0"), beta_total.expect("depth >= 0"))?;
                let a = tape.scale(topo, cfg.lambda);
                let b = tape.scale(learned, 1.0 - cfg.lambda);
                tape.add(a, b)?
            }
        };
        let weighted = tape.mul(p, integrand)?;
        let mut score = tape.sum(weighted);
        if cfg.use_temperature {
            let log_t = tape.log(temp);
            let penalty = tape.scale(log_t, cfg.lambda_temp);
            score = tape.add(score, penalty)?;
        }
        debug_assert_eq!(tape.shape(p), [size, size]);
        Ok(ForwardVars {
            score,
            p,
            integrand,
            iterations,
        })
    }

    /// Inference-time forward pass.
    pub fn predict(&self, g: &Graph, h: &Graph, mode: Mode) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bind = self.store.bind_constants(&mut tape);
        let out = self.forward_tape(&mut tape, &bind, g, h, mode)?;
        let score = tape.value(out.score).item();
        if !score.is_finite() {
            return Err(Error::NonFinite("model score"));
        }
        let temperature_penalty = if self.config.use_temperature {
            self.config.lambda_temp * self.temperature().ln()
        } else {
            0.0
        };
        Ok(Prediction {
            score,
            p: tape.value(out.p).clone(),
            integrand: tape.value(out.integrand).clone(),
            temperature_penalty,
            n: g.node_count(),
            m: h.node_count(),
        })
    }

    pub fn score(&self, g: &Graph, h: &Graph, mode: Mode) -> Result<f64> {
        Ok(self.predict(g, h, mode)?.score)
    }

    /// Embeddings of a graph at every level.
    pub fn embed_nodes(&self, g: &Graph) -> Result<MultiScaleEmbedding> {
        self.encoder.encode(&self.store, g)
    }

    /// Exact edit cost of the rounded matching under the fixed costs.
    pub fn hard_edit_cost(&self, g: &Graph, h: &Graph, mode: Mode) -> Result<f64> {
        let pred = self.predict(g, h, mode)?;
        let hm = hard_decode(&pred.p, pred.n, pred.m)?;
        Ok(mapping_cost(g, h, &hm.map, &self.config.costs))
    }

    fn meta(&self) -> Result<BTreeMap<String, serde_json::Value>> {
        let gs: serde_json::Value = serde_json::from_str(&self.gs.to_json()?)?;
        let meta = ModelMeta {
            model: self.config.clone(),
            gs,
        };
        match serde_json::to_value(meta)? {
            serde_json::Value::Object(map) => Ok(map.into_iter().collect()),
            _ => unreachable!("struct serializes to an object"),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.store.to_json(self.meta()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, self.meta()?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (loaded, meta) = ParamStore::from_json(text)?;
        let meta: ModelMeta = serde_json::from_value(serde_json::Value::Object(meta.into_iter().collect()))
            .map_err(|e| Error::Checkpoint(format!("model metadata: {e}")))?;
        let gs = GsParams::from_json(&meta.gs.to_string())?;
        let mut model = Self::new(meta.model, gs)?;
        model.store.copy_values_from(&loaded)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
