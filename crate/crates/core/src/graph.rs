//! Node-labeled undirected graphs, JSON-lines ingestion, dummy-node padding
//! and seeded random generators.
//!
//! Label id `0` is reserved for the dummy node ε used to square up a pair of
//! graphs; ingested graphs must use labels `>= 1`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label id of the dummy node ε.
pub const EPSILON_LABEL: usize = 0;

/// A node-labeled undirected simple graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    id: String,
    labels: Vec<usize>,
    /// Normalized `(u, v)` with `u < v`, sorted.
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    target: Option<f64>,
}

impl Graph {
    /// Builds a validated graph. Labels must be `>= 1`.
    pub fn new(
        id: impl Into<String>,
        labels: Vec<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        target: Option<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if let Some(node) = labels.iter().position(|&l| l == EPSILON_LABEL) {
            return Err(Error::ReservedLabel { id, node });
        }
        Self::build(id, labels, edges, target)
    }

    fn build(
        id: String,
        labels: Vec<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        target: Option<f64>,
    ) -> Result<Self> {
        let n = labels.len();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::InvalidGraph {
                    id,
                    msg: format!("self-loop on node {u}"),
                });
            }
            if u >= n || v >= n {
                return Err(Error::InvalidGraph {
                    id,
                    msg: format!("edge ({u}, {v}) has an endpoint >= {n}"),
                });
            }
            let e = (u.min(v), u.max(v));
            if !set.insert(e) {
                return Err(Error::InvalidGraph {
                    id,
                    msg: format!("duplicate edge ({}, {})", e.0, e.1),
                });
            }
        }
        if let Some(t) = target {
            if !t.is_finite() {
                return Err(Error::InvalidGraph {
                    id,
                    msg: "non-finite target".into(),
                });
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self {
            id,
            labels,
            edges,
            adj,
            target,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn target(&self) -> Option<f64> {
        self.target
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Number of edges incident to `v`.
    pub fn degree(&self, v: usize) -> Result<usize> {
        self.adj
            .get(v)
            .map(Vec::len)
            .ok_or(Error::NodeOutOfRange {
                index: v,
                len: self.node_count(),
            })
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn with_target(mut self, target: Option<f64>) -> Self {
        self.target = target;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Returns the graph with nodes renumbered so that old node `v` becomes
    /// `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        if perm.len() != n || perm.iter().copied().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::InvalidArgument(format!(
                "permutation of length {} is not a bijection on {n} nodes",
                perm.len()
            )));
        }
        let mut labels = vec![0; n];
        for (v, &p) in perm.iter().enumerate() {
            if p >= n {
                return Err(Error::NodeOutOfRange { index: p, len: n });
            }
            labels[p] = self.labels[v];
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        Self::build(self.id.clone(), labels, edges, self.target)
    }

    /// Appends `count` isolated ε-nodes.
    fn padded(&self, count: usize) -> Self {
        let mut labels = self.labels.clone();
        labels.extend(std::iter::repeat_n(EPSILON_LABEL, count));
        let mut adj = self.adj.clone();
        adj.extend(std::iter::repeat_n(Vec::new(), count));
        Self {
            id: self.id.clone(),
            labels,
            edges: self.edges.clone(),
            adj,
            target: self.target,
        }
    }
}

/// One JSON-lines record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub nodes: Vec<usize>,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub target: Option<f64>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            id: Some(g.id.clone()),
            nodes: g.labels.clone(),
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            target: g.target,
        }
    }
}

impl GraphRecord {
    pub fn into_graph(self, default_id: String) -> Result<Graph> {
        Graph::new(
            self.id.unwrap_or(default_id),
            self.nodes,
            self.edges.into_iter().map(|[u, v]| (u, v)),
            self.target,
        )
    }
}

/// Supported on-disk graph formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphFormat {
    #[default]
    Jsonl,
}

/// Reads graphs from a JSON-lines file, one graph per non-blank line.
///
/// Records without an `id` get their zero-based record index as id.
pub fn parse_graphs(path: &Path, format: GraphFormat) -> Result<Vec<Graph>> {
    let GraphFormat::Jsonl = format;
    let reader = BufReader::new(File::open(path)?);
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let record: GraphRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let graph = record
            .into_graph(graphs.len().to_string())
            .map_err(|e| bad(e.to_string()))?;
        graphs.push(graph);
    }
    Ok(graphs)
}

/// Writes graphs as JSON lines in the format read by [`parse_graphs`].
pub fn write_graphs(path: &Path, graphs: &[Graph]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for g in graphs {
        serde_json::to_writer(&mut out, &GraphRecord::from(g))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Whether a padded slot holds an original node or a dummy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Real(usize),
    Epsilon,
}

/// Two graphs padded with dummies to a common size `n + m`.
#[derive(Debug, Clone)]
pub struct PaddedPair {
    pub left: Graph,
    pub right: Graph,
    /// Original size of the left graph.
    pub n: usize,
    /// Original size of the right graph.
    pub m: usize,
    pub frame_size: usize,
}

impl PaddedPair {
    pub fn left_slot(&self, i: usize) -> Slot {
        if i < self.n {
            Slot::Real(i)
        } else {
            Slot::Epsilon
        }
    }

    pub fn right_slot(&self, j: usize) -> Slot {
        if j < self.m {
            Slot::Real(j)
        } else {
            Slot::Epsilon
        }
    }
}

/// Pads `g` with `|h|` dummies and `h` with `|g|` dummies.
pub fn pad_pair(g: &Graph, h: &Graph) -> PaddedPair {
    let n = g.node_count();
    let m = h.node_count();
    PaddedPair {
        left: g.padded(m),
        right: h.padded(n),
        n,
        m,
        frame_size: n + m,
    }
}

/// Erdős–Rényi graph with labels uniform in `1..=labels`.
pub fn synth_random(n: usize, p: f64, labels: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_with(&mut rng, format!("synth-{seed}"), n, p, labels)
}

fn synth_with(rng: &mut impl Rng, id: String, n: usize, p: f64, labels: usize) -> Graph {
    let p = p.clamp(0.0, 1.0);
    let labels = labels.max(1);
    let node_labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=labels)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(id, node_labels, edges, None).expect("generated graph is valid")
}

/// Parameters for a synthetic corpus.
#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: f64,
    pub labels: usize,
}

/// Corpus of random graphs with sizes uniform in `min_nodes..=max_nodes`.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.count)
        .map(|i| {
            let n = rng.random_range(spec.min_nodes..=spec.max_nodes.max(spec.min_nodes));
            synth_with(&mut rng, format!("g{i}"), n, spec.edge_prob, spec.labels)
        })
        .collect()
}

/// Synthetic regression corpus whose target is the number of nodes carrying
/// `label`.
pub fn label_count_corpus(spec: &SynthSpec, label: usize, seed: u64) -> Vec<Graph> {
    synth_corpus(spec, seed)
        .into_iter()
        .map(|g| {
            let t = g.labels().iter().filter(|&&l| l == label).count() as f64;
            g.with_target(Some(t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parse_minimal_and_path() {
        let f = write_tmp(
            "{\"nodes\":[1],\"edges\":[]}\n\n{\"id\":\"p\",\"nodes\":[1,2,1],\"edges\":[[0,1],[1,2]],\"target\":2.5}\n",
        );
        let gs = parse_graphs(f.path(), GraphFormat::Jsonl).unwrap();
        assert_eq!(gs.len(), 2);
        assert_eq!(gs[0].node_count(), 1);
        assert_eq!(gs[0].degree(0).unwrap(), 0);
        assert_eq!(gs[0].id(), "0");
        assert_eq!(gs[1].degrees(), vec![1, 2, 1]);
        assert_eq!(gs[1].target(), Some(2.5));
    }

    #[test]
    fn parse_rejects_reserved_label() {
        let f = write_tmp("{\"nodes\":[1,0],\"edges\":[]}\n");
        let err = parse_graphs(f.path(), GraphFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("reserved label"), "{err}");
    }

    #[test]
    fn parse_reports_line_numbers() {
        let f = write_tmp("{\"nodes\":[1],\"edges\":[]}\n{\"nodes\":[1,2],\"edges\":[[0,0]]}\n");
        let err = parse_graphs(f.path(), GraphFormat::Jsonl).unwrap_err();
        match err {
            Error::MalformedRecord { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("self-loop"));
            }
            other => panic!("unexpected {other}"),
        }
        let f = write_tmp("{\"nodes\":[1,2],\"edges\":[[0,1],[1,0]]}\n");
        assert!(parse_graphs(f.path(), GraphFormat::Jsonl)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let f = write_tmp("{\"nodes\":[1,2],\"edges\":[[0,2]]}\n");
        assert!(parse_graphs(f.path(), GraphFormat::Jsonl).is_err());
        let f = write_tmp("not json\n");
        assert!(matches!(
            parse_graphs(f.path(), GraphFormat::Jsonl),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn degrees() {
        let tri = Graph::new("t", vec![1, 1, 1], [(0, 1), (1, 2), (0, 2)], None).unwrap();
        assert!((0..3).all(|v| tri.degree(v).unwrap() == 2));
        let star = Graph::new("s", vec![1; 4], [(0, 1), (0, 2), (0, 3)], None).unwrap();
        assert_eq!(star.degree(0).unwrap(), 3);
        let iso = Graph::new("i", vec![3], [], None).unwrap();
        assert_eq!(iso.degree(0).unwrap(), 0);
        assert!(matches!(iso.degree(1), Err(Error::NodeOutOfRange { .. })));
    }

    #[test]
    fn padding() {
        let g = synth_random(3, 0.5, 3, 1);
        let h = synth_random(2, 0.5, 3, 2);
        let p = pad_pair(&g, &h);
        assert_eq!(p.frame_size, 5);
        assert_eq!(p.left.node_count(), 5);
        assert_eq!(p.right.node_count(), 5);
        assert_eq!(&p.left.labels()[3..], &[0, 0]);
        assert_eq!(&p.right.labels()[2..], &[0, 0, 0]);
        assert!((3..5).all(|v| p.left.degree(v).unwrap() == 0));
        assert_eq!(p.left_slot(2), Slot::Real(2));
        assert_eq!(p.left_slot(3), Slot::Epsilon);

        let g4 = synth_random(4, 0.5, 2, 9);
        assert_eq!(pad_pair(&g4, &g4).frame_size, 8);

        let empty = Graph::new("e", vec![], [], None).unwrap();
        let one = Graph::new("o", vec![2], [], None).unwrap();
        let p = pad_pair(&empty, &one);
        assert_eq!(p.frame_size, 1);
        assert_eq!(p.left.labels(), &[EPSILON_LABEL]);
    }

    #[test]
    fn synth_examples() {
        let g = synth_random(5, 0.0, 3, 4);
        assert_eq!(g.edge_count(), 0);
        let k4 = synth_random(4, 1.0, 3, 4);
        assert_eq!(k4.edge_count(), 6);
        assert_eq!(synth_random(7, 0.4, 5, 11), synth_random(7, 0.4, 5, 11));
        assert!(g.labels().iter().all(|&l| (1..=3).contains(&l)));
    }

    #[test]
    fn permutation_preserves_structure() {
        let g = synth_random(5, 0.5, 3, 3);
        let p = g.permuted(&[4, 2, 0, 1, 3]).unwrap();
        assert_eq!(p.edge_count(), g.edge_count());
        for &(u, v) in g.edges() {
            let map = [4, 2, 0, 1, 3];
            assert!(p.has_edge(map[u], map[v]));
        }
        assert!(g.permuted(&[0, 0, 1, 2, 3]).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (0usize..9, 0.0f64..1.0, 1usize..5, any::<u64>())
            .prop_map(|(n, p, l, s)| synth_random(n, p, l, s))
    }

    proptest! {
        #[test]
        fn frame_size_symmetric(g in arb_graph(), h in arb_graph()) {
            prop_assert_eq!(pad_pair(&g, &h).frame_size, pad_pair(&h, &g).frame_size);
        }

        #[test]
        fn handshake(g in arb_graph()) {
            prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
        }

        #[test]
        fn jsonl_roundtrip(gs in proptest::collection::vec(arb_graph(), 0..5), t in proptest::option::of(-5.0f64..5.0)) {
            let gs: Vec<Graph> = gs.into_iter().map(|g| g.with_target(t)).collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_graphs(f.path(), &gs).unwrap();
            let back = parse_graphs(f.path(), GraphFormat::Jsonl).unwrap();
            prop_assert_eq!(back, gs);
        }
    }
}
