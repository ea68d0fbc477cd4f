//! Node-level cost attribution, corpus importance and heatmap export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::gedan::{build_b_mask, build_d, build_m, hard_decode, GedanModel, Mode};
use crate::graph::Graph;

/// Cost charged to one node of `g` under the hard matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub node: usize,
    /// Matched node of `h`, `None` when deleted.
    pub matched: Option<usize>,
    /// Fixed insertion/deletion and degree-change prices.
    pub edit: f64,
    /// Embedding dissimilarity term.
    pub embedding: f64,
    /// Learned-cost term (zero in unsupervised mode).
    pub learned: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCostMap {
    pub nodes: Vec<NodeCost>,
    /// `(node of h, cost)` for every node of `h` inserted from a dummy.
    pub insertions: Vec<(usize, f64)>,
    /// Sum of matched entries of the cost matrix.
    pub total: f64,
    /// Frame row to frame column.
    pub sigma: Vec<usize>,
}

fn mode_lambda(model: &GedanModel, mode: Mode) -> f64 {
    match mode {
        Mode::Unsupervised => 1.0,
        Mode::Gedan => model.config.lambda,
    }
}

fn embedding_term(model: &GedanModel, g: &Graph, h: &Graph) -> Result<Tensor> {
    let eg = model.embed_nodes(g)?;
    let eh = model.embed_nodes(h)?;
    let levels = build_m(&eg, &eh, model.config.depth)?;
    let mut sum = levels[0].clone();
    for t in &levels[1..] {
        sum.add_assign(t);
    }
    if model.config.use_temperature {
        let t = model.temperature();
        sum = sum.map(|x| x / t);
    }
    Ok(sum)
}

/// Rounds the soft matching of `(g, h)` and splits the cost of every matched
/// entry onto the node of `g` in its row, or onto the inserted node of `h`
/// for dummy rows. Entries sum to `total`.
pub fn pair_cost_map(g: &Graph, h: &Graph, model: &GedanModel, mode: Mode) -> Result<PairCostMap> {
    let pred = model.predict(g, h, mode)?;
    let (n, m) = (pred.n, pred.m);
    let hm = hard_decode(&pred.p, n, m)?;
    let lambda = mode_lambda(model, mode);
    let (mut bd, _) = build_b_mask(n, m, &model.config.costs, 0.0);
    bd.add_assign(&build_d(g, h, &model.config.costs));
    let emb = embedding_term(model, g, h)?;
    let mut nodes = Vec::with_capacity(n);
    let mut insertions = Vec::new();
    let mut total = 0.0;
    for (i, &j) in hm.sigma.iter().enumerate() {
        let cost = pred.integrand.get(i, j);
        total += cost;
        if i < n {
            let edit = lambda * bd.get(i, j);
            let embedding = lambda * emb.get(i, j);
            nodes.push(NodeCost {
                node: i,
                matched: hm.map[i],
                edit,
                embedding,
                learned: cost - edit - embedding,
                total: cost,
            });
        } else if j < m {
            insertions.push((j, cost));
        }
    }
    Ok(PairCostMap {
        nodes,
        insertions,
        total,
        sigma: hm.sigma,
    })
}

/// Expected cost per node of `g` under the soft matching: row sums of
/// `P * integrand`.
pub fn soft_node_costs(g: &Graph, h: &Graph, model: &GedanModel, mode: Mode) -> Result<Vec<f64>> {
    let pred = model.predict(g, h, mode)?;
    Ok((0..pred.n)
        .map(|i| {
            pred.p
                .row_slice(i)
                .iter()
                .zip(pred.integrand.row_slice(i))
                .map(|(p, c)| p * c)
                .sum()
        })
        .collect())
}

/// Raw mean soft cost of each node of `corpus[query]` over one-vs-all
/// comparisons with every other corpus graph.
pub fn node_importance(query: usize, corpus: &[Graph], model: &GedanModel, mode: Mode) -> Result<Vec<f64>> {
    let g = corpus.get(query).ok_or(Error::NodeOutOfRange {
        index: query,
        len: corpus.len(),
    })?;
    let others: Vec<&Graph> = corpus.iter().enumerate().filter(|&(i, _)| i != query).map(|(_, h)| h).collect();
    let rows: Vec<Vec<f64>> = others
        .par_iter()
        .map(|h| soft_node_costs(g, h, model, mode))
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; g.node_count()];
    for r in &rows {
        for (a, b) in mean.iter_mut().zip(r) {
            *a += b;
        }
    }
    if !rows.is_empty() {
        mean.iter_mut().for_each(|x| *x /= rows.len() as f64);
    }
    Ok(mean)
}

/// Scales every importance vector by the largest value across all of them.
pub fn normalize_importance(all: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let max = all.iter().flatten().copied().fold(0.0, f64::max);
    all.iter()
        .map(|v| v.iter().map(|&x| if max > 0.0 { x / max } else { 0.0 }).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Json,
    Dot,
}

/// Eight fill colors from darkest (lowest cost) to lightest (highest cost).
pub const GRADIENT: [&str; 8] = [
    "#08306b", "#08519c", "#2171b5", "#4292c6", "#6baed6", "#9ecae1", "#c6dbef", "#f7fbff",
];

pub fn gradient_color(score: f64) -> &'static str {
    GRADIENT[((score * GRADIENT.len() as f64) as usize).min(GRADIENT.len() - 1)]
}

fn check_importance(graph: &Graph, importance: &[f64]) -> Result<()> {
    if importance.len() != graph.node_count() {
        return Err(Error::InvalidArgument(format!(
            "{} importance values for {} nodes",
            importance.len(),
            graph.node_count()
        )));
    }
    if importance.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument("importance must lie in [0, 1]".into()));
    }
    Ok(())
}

pub fn heatmap_json(graph: &Graph, importance: &[f64]) -> Result<String> {
    check_importance(graph, importance)?;
    let map: BTreeMap<String, f64> = importance.iter().enumerate().map(|(i, &x)| (i.to_string(), x)).collect();
    Ok(serde_json::to_string_pretty(&map)?)
}

/// Undirected DOT graph with one filled node per graph node.
pub fn heatmap_dot(graph: &Graph, importance: &[f64]) -> Result<String> {
    check_importance(graph, importance)?;
    let id = graph.id().replace('\\', "\\\\").replace('"', "\\\"");
    let mut out = format!("graph \"{id}\" {{\n  node [style=filled];\n");
    for (v, &x) in importance.iter().enumerate() {
        writeln!(
            out,
            "  {v} [label=\"{v}:{}\", fillcolor=\"{}\", importance=\"{x}\"];",
            graph.label(v),
            gradient_color(x)
        )
        .expect("writing to a string");
    }
    for &(u, v) in graph.edges() {
        writeln!(out, "  {u} -- {v};").expect("writing to a string");
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_heatmap(graph: &Graph, importance: &[f64], path: &Path, format: HeatmapFormat) -> Result<()> {
    let text = match format {
        HeatmapFormat::Json => heatmap_json(graph, importance)?,
        HeatmapFormat::Dot => heatmap_dot(graph, importance)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
