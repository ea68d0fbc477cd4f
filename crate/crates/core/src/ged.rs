//! Exact graph edit distance.
//!
//! Two independent routes compute the same value: [`brute_force_ged`]
//! enumerates every injective partial node map and prices it with
//! [`mapping_cost`], while [`exact_ged`] runs a depth-first branch-and-bound
//! with incremental edge accounting and an admissible bound on the unassigned
//! remainder. Edges are unlabeled, so the only edge operations are insertion
//! and deletion.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest graph accepted by [`brute_force_ged`].
pub const BRUTE_FORCE_GUARD: usize = 8;
/// Largest graph accepted by [`exact_ged`].
pub const EXACT_GUARD: usize = 16;

/// Scalar edit-operation prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditCostConfig {
    pub node_del: f64,
    pub node_ins: f64,
    pub edge_del: f64,
    pub edge_ins: f64,
    /// Charged when a node is mapped onto a node with a different label.
    pub node_sub: f64,
}

impl EditCostConfig {
    pub fn new(node_del: f64, node_ins: f64, edge_del: f64, edge_ins: f64) -> Result<Self> {
        let c = Self {
            node_del,
            node_ins,
            edge_del,
            edge_ins,
            node_sub: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.node_del, self.node_ins, self.edge_del, self.edge_ins];
        if positive.iter().any(|c| !(c.is_finite() && *c > 0.0))
            || !(self.node_sub.is_finite() && self.node_sub >= 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "edit costs must be positive (substitution non-negative): {self:?}"
            )));
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.node_del == self.node_ins && self.edge_del == self.edge_ins
    }

    /// Every cost `>= 1`, the regime where [`ged_lower_bound`] is admissible.
    pub fn at_least_unit(&self) -> bool {
        [self.node_del, self.node_ins, self.edge_del, self.edge_ins]
            .iter()
            .all(|&c| c >= 1.0)
    }
}

impl Default for EditCostConfig {
    fn default() -> Self {
        CostConfigId::UNIFORM.costs()
    }
}

/// One of the five benchmark cost configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfigId(u8);

impl CostConfigId {
    pub const UNIFORM: Self = Self(1);

    pub fn new(id: u8) -> Result<Self> {
        if (1..=5).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::InvalidArgument(format!(
                "cost configuration must be in 1..=5, got {id}"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (1..=5).map(Self)
    }

    /// `(node_ins, node_del, edge_ins, edge_del)` per configuration, with a
    /// unit substitution cost throughout.
    pub fn costs(self) -> EditCostConfig {
        let (ni, nd, ei, ed) = match self.0 {
            1 => (1.0, 1.0, 1.0, 1.0),
            2 => (2.0, 2.0, 1.0, 1.0),
            3 => (1.0, 1.0, 2.0, 2.0),
            4 => (2.0, 1.0, 2.0, 1.0),
            5 => (1.0, 2.0, 1.0, 2.0),
            _ => unreachable!("validated on construction"),
        };
        EditCostConfig {
            node_del: nd,
            node_ins: ni,
            edge_del: ed,
            edge_ins: ei,
            node_sub: 1.0,
        }
    }
}

/// Cost of the edit path induced by an injective node map `map[u] = Some(x)`
/// (substitute `u` by `x`) or `None` (delete `u`). Unmapped nodes of `h` are
/// inserted.
pub fn mapping_cost(g: &Graph, h: &Graph, map: &[Option<usize>], c: &EditCostConfig) -> f64 {
    debug_assert_eq!(map.len(), g.node_count());
    let mut inverse = vec![None; h.node_count()];
    let mut cost = 0.0;
    for (u, t) in map.iter().enumerate() {
        match *t {
            Some(x) => {
                debug_assert!(inverse[x].is_none(), "map is not injective");
                inverse[x] = Some(u);
                if g.label(u) != h.label(x) {
                    cost += c.node_sub;
                }
            }
            None => cost += c.node_del,
        }
    }
    cost += inverse.iter().filter(|p| p.is_none()).count() as f64 * c.node_ins;
    for &(u, v) in g.edges() {
        let kept = matches!((map[u], map[v]), (Some(x), Some(y)) if h.has_edge(x, y));
        if !kept {
            cost += c.edge_del;
        }
    }
    for &(x, y) in h.edges() {
        let kept = matches!((inverse[x], inverse[y]), (Some(u), Some(v)) if g.has_edge(u, v));
        if !kept {
            cost += c.edge_ins;
        }
    }
    cost
}

fn guard(g: &Graph, h: &Graph, limit: usize) -> Result<()> {
    let nodes = g.node_count().max(h.node_count());
    if nodes > limit {
        return Err(Error::SizeGuard {
            nodes,
            guard: limit,
        });
    }
    Ok(())
}

/// Exhaustive minimum over all injective partial node maps.
pub fn brute_force_ged(g: &Graph, h: &Graph, c: &EditCostConfig) -> Result<f64> {
    guard(g, h, BRUTE_FORCE_GUARD)?;
    fn rec(
        g: &Graph,
        h: &Graph,
        c: &EditCostConfig,
        map: &mut Vec<Option<usize>>,
        used: &mut [bool],
        best: &mut f64,
    ) {
        if map.len() == g.node_count() {
            *best = best.min(mapping_cost(g, h, map, c));
            return;
        }
        for x in 0..h.node_count() {
            if !used[x] {
                used[x] = true;
                map.push(Some(x));
                rec(g, h, c, map, used, best);
                map.pop();
                used[x] = false;
            }
        }
        map.push(None);
        rec(g, h, c, map, used, best);
        map.pop();
    }
    let mut best = f64::INFINITY;
    rec(
        g,
        h,
        c,
        &mut Vec::with_capacity(g.node_count()),
        &mut vec![false; h.node_count()],
        &mut best,
    );
    Ok(best)
}

/// `| |V_g| - |V_h| | + | |E_g| - |E_h| |`.
pub fn ged_lower_bound(g: &Graph, h: &Graph) -> usize {
    g.node_count().abs_diff(h.node_count()) + g.edge_count().abs_diff(h.edge_count())
}

struct Search<'a> {
    g: &'a Graph,
    h: &'a Graph,
    c: EditCostConfig,
    /// Order in which nodes of `g` are assigned.
    order: Vec<usize>,
    /// `position[u]` is the depth at which `u` gets assigned.
    position: Vec<usize>,
    map: Vec<Option<usize>>,
    used: Vec<bool>,
    /// Label histograms of unassigned g nodes and unused h nodes.
    g_labels: Vec<usize>,
    h_labels: Vec<usize>,
    best: f64,
}

impl Search<'_> {
    fn remainder_bound(&self, depth: usize) -> f64 {
        let c = &self.c;
        let rg = self.g.node_count() - depth;
        let rh = self.used.iter().filter(|u| !**u).count();
        let common: usize = self
            .g_labels
            .iter()
            .zip(&self.h_labels)
            .map(|(a, b)| (*a).min(*b))
            .sum();
        let node_lb = (0..=rg.min(rh))
            .map(|k| {
                (rg - k) as f64 * c.node_del
                    + (rh - k) as f64 * c.node_ins
                    + k.saturating_sub(common) as f64 * c.node_sub
            })
            .fold(f64::INFINITY, f64::min);

        let assigned = |u: usize| self.position[u] < depth;
        let eg = self
            .g
            .edges()
            .iter()
            .filter(|&&(u, v)| !assigned(u) || !assigned(v))
            .count();
        let eh = self
            .h
            .edges()
            .iter()
            .filter(|&&(x, y)| !self.used[x] || !self.used[y])
            .count();
        let edge_lb = if eg > eh {
            (eg - eh) as f64 * c.edge_del
        } else {
            (eh - eg) as f64 * c.edge_ins
        };
        node_lb + edge_lb
    }

    /// Cost added by assigning `u` to `t`, given the nodes placed so far.
    fn step_cost(&self, depth: usize, u: usize, t: Option<usize>) -> f64 {
        let c = &self.c;
        let mut cost = match t {
            Some(x) if self.g.label(u) != self.h.label(x) => c.node_sub,
            Some(_) => 0.0,
            None => c.node_del,
        };
        for &w in &self.order[..depth] {
            let g_edge = self.g.has_edge(u, w);
            let h_edge = matches!((t, self.map[w]), (Some(x), Some(y)) if self.h.has_edge(x, y));
            if g_edge && !h_edge {
                cost += c.edge_del;
            } else if h_edge && !g_edge {
                cost += c.edge_ins;
            }
        }
        cost
    }

    fn completion_cost(&self) -> f64 {
        let unused = self.used.iter().filter(|u| !**u).count();
        let open_edges = self
            .h
            .edges()
            .iter()
            .filter(|&&(x, y)| !self.used[x] || !self.used[y])
            .count();
        unused as f64 * self.c.node_ins + open_edges as f64 * self.c.edge_ins
    }

    fn dfs(&mut self, depth: usize, acc: f64) {
        if depth == self.order.len() {
            let total = acc + self.completion_cost();
            if total < self.best {
                self.best = total;
            }
            return;
        }
        let u = self.order[depth];
        let lu = self.g.label(u);
        self.g_labels[lu] -= 1;
        let candidates: Vec<Option<usize>> = (0..self.h.node_count())
            .filter(|&x| !self.used[x])
            .map(Some)
            .chain(std::iter::once(None))
            .collect();
        for t in candidates {
            let step = self.step_cost(depth, u, t);
            if let Some(x) = t {
                self.used[x] = true;
                self.h_labels[self.h.label(x)] -= 1;
            }
            self.map[u] = t;
            let bound = acc + step + self.remainder_bound(depth + 1);
            if bound < self.best - 1e-9 {
                self.dfs(depth + 1, acc + step);
            }
            self.map[u] = None;
            if let Some(x) = t {
                self.used[x] = false;
                self.h_labels[self.h.label(x)] += 1;
            }
        }
        self.g_labels[lu] += 1;
    }
}

/// Exact GED by depth-first branch-and-bound.
///
/// Nodes of `g` are placed in order of decreasing degree (ties by index);
/// each is tried against unused nodes of `h` in ascending index order and
/// finally against deletion.
pub fn exact_ged(g: &Graph, h: &Graph, c: &EditCostConfig) -> Result<f64> {
    guard(g, h, EXACT_GUARD)?;
    c.validate()?;
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.sort_by_key(|&u| (std::cmp::Reverse(g.neighbors(u).len()), u));
    let labels = g.max_label().max(h.max_label()) + 1;
    let mut g_labels = vec![0; labels];
    for &l in g.labels() {
        g_labels[l] += 1;
    }
    let mut h_labels = vec![0; labels];
    for &l in h.labels() {
        h_labels[l] += 1;
    }
    // Incumbent: map nodes index-by-index.
    let seed: Vec<Option<usize>> = (0..g.node_count())
        .map(|u| (u < h.node_count()).then_some(u))
        .collect();
    let mut position = vec![0; order.len()];
    for (d, &u) in order.iter().enumerate() {
        position[u] = d;
    }
    let mut search = Search {
        g,
        h,
        c: *c,
        order,
        position,
        map: vec![None; g.node_count()],
        used: vec![false; h.node_count()],
        g_labels,
        h_labels,
        best: mapping_cost(g, h, &seed, c),
    };
    search.dfs(0, 0.0);
    Ok(search.best)
}

/// One row of a pair-label table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub i: usize,
    pub j: usize,
    pub ged: f64,
}

/// Summary statistics of a set of GED values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GedStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl GedStats {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: 0.0,
                median: 0.0,
                std: 0.0,
                variance: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 {
            sorted[count / 2]
        } else {
            0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
        };
        Self {
            count,
            mean,
            median,
            std: variance.sqrt(),
            variance,
            min: sorted[0],
            max: sorted[count - 1],
        }
    }
}

/// Exact GED for every unordered pair `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub rows: Vec<LabelRow>,
    pub stats: GedStats,
}

impl LabelTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<LabelRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    pub fn write_stats(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.stats)?)?;
        Ok(())
    }
}

/// Labels all unordered pairs (including self-pairs) with exact GED.
pub fn gen_pair_labels(graphs: &[Graph], conf: CostConfigId, max_nodes: usize) -> Result<LabelTable> {
    let limit = max_nodes.min(EXACT_GUARD);
    if let Some(g) = graphs.iter().find(|g| g.node_count() > limit) {
        return Err(Error::SizeGuard {
            nodes: g.node_count(),
            guard: limit,
        });
    }
    let costs = conf.costs();
    let pairs: Vec<(usize, usize)> = (0..graphs.len())
        .flat_map(|i| (i..graphs.len()).map(move |j| (i, j)))
        .collect();
    let rows = pairs
        .par_iter()
        .map(|&(i, j)| {
            exact_ged(&graphs[i], &graphs[j], &costs).map(|ged| LabelRow { i, j, ged })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.ged).collect();
    Ok(LabelTable {
        stats: GedStats::from_values(&values),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth_random;
    use proptest::prelude::*;

    fn conf(id: u8) -> EditCostConfig {
        CostConfigId::new(id).unwrap().costs()
    }

    fn triangle() -> Graph {
        Graph::new("tri", vec![1, 1, 1], [(0, 1), (1, 2), (0, 2)], None).unwrap()
    }

    fn empty() -> Graph {
        Graph::new("e", vec![], [], None).unwrap()
    }

    #[test]
    fn configuration_table() {
        let c4 = conf(4);
        assert_eq!((c4.node_ins, c4.node_del, c4.edge_ins, c4.edge_del), (2.0, 1.0, 2.0, 1.0));
        let c5 = conf(5);
        assert_eq!((c5.node_ins, c5.node_del, c5.edge_ins, c5.edge_del), (1.0, 2.0, 1.0, 2.0));
        assert!(CostConfigId::all().all(|id| id.costs().node_sub == 1.0));
        assert!(conf(2).is_symmetric() && !conf(4).is_symmetric());
        assert!(CostConfigId::new(0).is_err() && CostConfigId::new(6).is_err());
        assert!(EditCostConfig::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let g = triangle();
        assert_eq!(brute_force_ged(&g, &g, &conf(1)).unwrap(), 0.0);
        let a = Graph::new("a", vec![1], [], None).unwrap();
        let b = Graph::new("b", vec![2], [], None).unwrap();
        assert_eq!(brute_force_ged(&a, &b, &conf(1)).unwrap(), 1.0);
        assert_eq!(brute_force_ged(&empty(), &triangle(), &conf(1)).unwrap(), 6.0);
        let big = synth_random(9, 0.3, 2, 0);
        assert!(matches!(
            brute_force_ged(&big, &a, &conf(1)),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn exact_examples() {
        let g = synth_random(6, 0.5, 3, 5);
        assert_eq!(exact_ged(&g, &g, &conf(1)).unwrap(), 0.0);
        assert_eq!(exact_ged(&empty(), &empty(), &conf(3)).unwrap(), 0.0);
        assert!(exact_ged(&synth_random(17, 0.1, 2, 0), &g, &conf(1)).is_err());
    }

    #[test]
    fn asymmetric_insertion_pricing() {
        // Path 1-2-3 inside a star-shaped 4-node graph: one node and one edge
        // must be inserted. Enumerated by hand: g ⊂ h, so the cheapest path
        // keeps all of g and inserts the extra node and edge.
        let g = Graph::new("g", vec![1, 2, 3], [(0, 1), (1, 2)], None).unwrap();
        let h = Graph::new("h", vec![1, 2, 3, 1], [(0, 1), (1, 2), (1, 3)], None).unwrap();
        assert_eq!(exact_ged(&g, &h, &conf(4)).unwrap(), 4.0);
        assert_eq!(exact_ged(&g, &h, &conf(5)).unwrap(), 2.0);
        // And back: deletions under conf4 cost 1, under conf5 cost 2.
        assert_eq!(exact_ged(&h, &g, &conf(4)).unwrap(), 2.0);
        assert_eq!(exact_ged(&h, &g, &conf(5)).unwrap(), 4.0);
        assert_eq!(brute_force_ged(&g, &h, &conf(4)).unwrap(), 4.0);
    }

    #[test]
    fn lower_bound_examples() {
        let a = synth_random(5, 0.0, 1, 0);
        let a = Graph::new("a", a.labels().to_vec(), [(0, 1), (1, 2), (2, 3), (3, 4)], None).unwrap();
        assert_eq!(ged_lower_bound(&a, &triangle()), 3);
        assert_eq!(ged_lower_bound(&a, &a), 0);
        assert_eq!(ged_lower_bound(&empty(), &triangle()), 6);
    }

    #[test]
    fn mapping_cost_counts_each_operation() {
        let g = triangle();
        let h = Graph::new("h", vec![1, 2], [(0, 1)], None).unwrap();
        // 0->0, 1->1 (sub), delete 2 and its two edges.
        let c = mapping_cost(&g, &h, &[Some(0), Some(1), None], &conf(1));
        assert_eq!(c, 1.0 + 1.0 + 2.0);
    }

    #[test]
    fn label_table() {
        let gs: Vec<Graph> = (0..10).map(|s| synth_random(1 + s as usize % 5, 0.5, 3, s)).collect();
        let mut gs2 = gs.clone();
        gs2.push(gs[0].clone());
        let table = gen_pair_labels(&gs2, CostConfigId::UNIFORM, 8).unwrap();
        assert_eq!(table.rows.len(), 11 * 12 / 2);
        let dup = table.rows.iter().find(|r| r.i == 0 && r.j == 10).unwrap();
        assert_eq!(dup.ged, 0.0);
        for row in &table.rows {
            assert!(row.ged >= ged_lower_bound(&gs2[row.i], &gs2[row.j]) as f64);
            let bf = brute_force_ged(&gs2[row.i], &gs2[row.j], &conf(1)).unwrap();
            assert_eq!(row.ged, bf, "row {row:?}");
        }
        assert!(table.stats.min <= table.stats.median && table.stats.median <= table.stats.max);
        assert!((table.stats.std.powi(2) - table.stats.variance).abs() < 1e-12);
        assert!(gen_pair_labels(&gs2, CostConfigId::UNIFORM, 3).is_err());

        let f = tempfile::NamedTempFile::new().unwrap();
        table.write_csv(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("i,j,ged\n"));
        assert_eq!(LabelTable::read_csv(f.path()).unwrap(), table.rows);
    }

    #[test]
    fn stats_known_values() {
        let s = GedStats::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.variance, 1.25);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }

    fn small() -> impl Strategy<Value = Graph> {
        (0usize..6, 0.0f64..1.0, 1usize..4, any::<u64>())
            .prop_map(|(n, p, l, s)| synth_random(n, p, l, s))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_matches_brute_force(g in small(), h in small(), id in 1u8..=5) {
            let c = conf(id);
            prop_assert_eq!(exact_ged(&g, &h, &c).unwrap(), brute_force_ged(&g, &h, &c).unwrap());
        }

        #[test]
        fn symmetric_configs_are_symmetric(g in small(), h in small(), id in 1u8..=3) {
            let c = conf(id);
            prop_assert_eq!(exact_ged(&g, &h, &c).unwrap(), exact_ged(&h, &g, &c).unwrap());
        }

        #[test]
        fn above_lower_bound(g in small(), h in small(), id in 1u8..=5) {
            prop_assert!(exact_ged(&g, &h, &conf(id)).unwrap() >= ged_lower_bound(&g, &h) as f64);
        }

        #[test]
        fn triangle_inequality(a in small(), b in small(), c in small()) {
            let k = conf(1);
            let ab = exact_ged(&a, &b, &k).unwrap();
            let bc = exact_ged(&b, &c, &k).unwrap();
            let ac = exact_ged(&a, &c, &k).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
