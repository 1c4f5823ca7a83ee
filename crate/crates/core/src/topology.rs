//! Labeled undirected graphs, assumption checks, generators, and the
//! edge-list file format.
//!
//! ```text
//! # comment
//! nodes 5
//! byzantine 4
//! edge 0 1
//! edge 1 2
//! ```

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::node_rng;
use crate::NodeId;

const STREAM_TOPOLOGY: u64 = 3;
pub const GENERATE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Honest,
    Byzantine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<NodeId>>,
    labels: Vec<Label>,
}

impl Graph {
    /// Builds a graph from undirected edges. Duplicates are merged; self-loops
    /// and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: &[(NodeId, NodeId)], byzantine: &[NodeId]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            sets[u].insert(v);
            sets[v].insert(u);
        }
        let mut labels = vec![Label::Honest; n];
        for &b in byzantine {
            if b >= n {
                return Err(Error::InvalidGraph(format!("byzantine id {b} out of range for {n} nodes")));
            }
            labels[b] = Label::Byzantine;
        }
        Ok(Graph {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Sorted, duplicate-free neighbor list.
    pub fn neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.neighbors[i]
    }

    pub fn label(&self, i: NodeId) -> Label {
        self.labels[i]
    }

    pub fn is_byzantine(&self, i: NodeId) -> bool {
        self.labels[i] == Label::Byzantine
    }

    pub fn honest_ids(&self) -> Vec<NodeId> {
        (0..self.n()).filter(|&i| !self.is_byzantine(i)).collect()
    }

    pub fn byzantine_ids(&self) -> Vec<NodeId> {
        (0..self.n()).filter(|&i| self.is_byzantine(i)).collect()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (u, ns) in self.neighbors.iter().enumerate() {
            out.extend(ns.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn honest_degree(&self, i: NodeId) -> usize {
        self.neighbors[i].iter().filter(|&&j| !self.is_byzantine(j)).count()
    }

    pub fn byzantine_degree(&self, i: NodeId) -> usize {
        self.neighbors[i].len() - self.honest_degree(i)
    }

    pub fn stats(&self) -> GraphStats {
        let honest = self.honest_ids();
        let honest_degree: Vec<usize> = (0..self.n()).map(|i| self.honest_degree(i)).collect();
        let byzantine_degree: Vec<usize> = (0..self.n()).map(|i| self.byzantine_degree(i)).collect();
        GraphStats {
            delta_min: honest.iter().map(|&i| honest_degree[i]).min().unwrap_or(0),
            lambda2: honest_lambda2(self),
            max_byzantine_neighbors: honest.iter().map(|&i| byzantine_degree[i]).max().unwrap_or(0),
            honest_degree,
            byzantine_degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    /// Minimum number of honest neighbors over honest nodes.
    pub delta_min: usize,
    /// Algebraic connectivity of the honest-induced subgraph.
    pub lambda2: f64,
    /// Largest Byzantine neighbor count seen by an honest node.
    pub max_byzantine_neighbors: usize,
    pub honest_degree: Vec<usize>,
    pub byzantine_degree: Vec<usize>,
}

impl GraphStats {
    /// Separation `1/(η·δ_min)` beyond which Byzantine messages get zero
    /// weight at consensus.
    pub fn separation_threshold(&self, eta: f64) -> f64 {
        1.0 / (eta * self.delta_min as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssumptionReport {
    /// `(i, |N_i∩H| > |N_i∩B|)` for every honest node.
    pub majority_honest: Vec<(NodeId, bool)>,
    pub honest_connected: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.honest_connected && self.majority_honest.iter().all(|&(_, ok)| ok)
    }

    pub fn failing_nodes(&self) -> Vec<NodeId> {
        self.majority_honest.iter().filter(|(_, ok)| !ok).map(|&(i, _)| i).collect()
    }
}

pub fn check_assumptions(g: &Graph) -> AssumptionReport {
    let honest = g.honest_ids();
    let majority_honest = honest
        .iter()
        .map(|&i| (i, g.honest_degree(i) > g.byzantine_degree(i)))
        .collect();
    AssumptionReport { majority_honest, honest_connected: honest_connected(g) }
}

/// Breadth-first traversal restricted to honest nodes.
fn honest_connected(g: &Graph) -> bool {
    let honest = g.honest_ids();
    let Some(&start) = honest.first() else {
        return false;
    };
    let mut seen = vec![false; g.n()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if !g.is_byzantine(v) && !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == honest.len()
}

/// Second-smallest Laplacian eigenvalue of the honest-induced subgraph. Zero
/// when fewer than two honest nodes exist.
pub fn honest_lambda2(g: &Graph) -> f64 {
    let honest = g.honest_ids();
    let h = honest.len();
    if h < 2 {
        return 0.0;
    }
    let mut index = vec![usize::MAX; g.n()];
    for (k, &i) in honest.iter().enumerate() {
        index[i] = k;
    }
    let mut lap = DMatrix::<f64>::zeros(h, h);
    for (a, &i) in honest.iter().enumerate() {
        for &j in g.neighbors(i) {
            if !g.is_byzantine(j) {
                lap[(a, index[j])] = -1.0;
                lap[(a, a)] += 1.0;
            }
        }
    }
    let mut eig: Vec<f64> = lap.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig[1].max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Uniform-ish `k`-regular graph over all nodes (pairing with restarts).
    RandomRegular { k: usize },
    /// Each pair of nodes joined independently with probability `p`.
    ErdosRenyi { p: f64 },
    /// Honest ring plus `chords` random honest chords; every Byzantine node
    /// attaches to `byz_degree` random honest nodes.
    RingPlusChords {
        chords: usize,
        #[serde(default = "default_byz_degree")]
        byz_degree: usize,
    },
}

fn default_byz_degree() -> usize {
    2
}

/// Generates a labeled graph (Byzantine ids are the last `n_byz`) that passes
/// both assumption checks, retrying up to [`GENERATE_ATTEMPTS`] times.
pub fn generate(kind: &GeneratorKind, n_honest: usize, n_byz: usize, seed: u64) -> Result<Graph> {
    let n = n_honest + n_byz;
    if n_honest == 0 {
        return Err(Error::param("n_honest", "must be >= 1"));
    }
    match *kind {
        GeneratorKind::RandomRegular { k } => {
            if k == 0 || k >= n || (n * k) % 2 == 1 {
                return Err(Error::param("k", format!("no {k}-regular graph on {n} nodes")));
            }
        }
        GeneratorKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::param("p", format!("{p} is outside (0, 1]")));
            }
        }
        GeneratorKind::RingPlusChords { byz_degree, .. } => {
            if n_byz > 0 && (byz_degree == 0 || byz_degree > n_honest) {
                return Err(Error::param("byz_degree", format!("{byz_degree} is outside 1..={n_honest}")));
            }
        }
    }
    let byzantine: Vec<NodeId> = (n_honest..n).collect();
    for attempt in 0..GENERATE_ATTEMPTS {
        let mut rng = node_rng(seed, attempt, STREAM_TOPOLOGY);
        let Some(edges) = draw_edges(kind, n_honest, n_byz, &mut rng) else {
            continue;
        };
        let g = Graph::new(n, &edges, &byzantine)?;
        if check_assumptions(&g).all_pass() {
            log::debug!("topology admitted on attempt {attempt}");
            return Ok(g);
        }
    }
    Err(Error::NoAdmissibleTopology { attempts: GENERATE_ATTEMPTS })
}

fn draw_edges(kind: &GeneratorKind, n_honest: usize, n_byz: usize, rng: &mut impl Rng) -> Option<Vec<(NodeId, NodeId)>> {
    let n = n_honest + n_byz;
    match *kind {
        GeneratorKind::RandomRegular { k } => random_regular(n, k, rng),
        GeneratorKind::ErdosRenyi { p } => {
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            Some(edges)
        }
        GeneratorKind::RingPlusChords { chords, byz_degree } => {
            let mut set = BTreeSet::new();
            if n_honest > 1 {
                for i in 0..n_honest {
                    let j = (i + 1) % n_honest;
                    if i != j {
                        set.insert((i.min(j), i.max(j)));
                    }
                }
            }
            let max_edges = n_honest * (n_honest - 1) / 2;
            let target = (set.len() + chords).min(max_edges);
            while set.len() < target {
                let u = rng.random_range(0..n_honest);
                let v = rng.random_range(0..n_honest);
                if u != v {
                    set.insert((u.min(v), u.max(v)));
                }
            }
            let honest: Vec<NodeId> = (0..n_honest).collect();
            for b in n_honest..n {
                for &h in honest.choose_multiple(rng, byz_degree) {
                    set.insert((h, b));
                }
            }
            Some(set.into_iter().collect())
        }
    }
}

/// Stub pairing where each pick is redrawn if it would create a loop or a
/// repeated edge; gives up on dead ends.
fn random_regular(n: usize, k: usize, rng: &mut impl Rng) -> Option<Vec<(NodeId, NodeId)>> {
    let mut stubs: Vec<NodeId> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mut edges = BTreeSet::new();
    while !stubs.is_empty() {
        let mut placed = false;
        for _ in 0..100 {
            let a = rng.random_range(0..stubs.len());
            let b = rng.random_range(0..stubs.len());
            let (u, v) = (stubs[a], stubs[b]);
            if a == b || u == v || edges.contains(&(u.min(v), u.max(v))) {
                continue;
            }
            edges.insert((u.min(v), u.max(v)));
            let (hi, lo) = (a.max(b), a.min(b));
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(edges.into_iter().collect())
}

/// Serializes to the edge-list format.
pub fn to_text(g: &Graph) -> String {
    let mut out = String::new();
    writeln!(out, "nodes {}", g.n()).unwrap();
    out.push_str("byzantine");
    for b in g.byzantine_ids() {
        write!(out, " {b}").unwrap();
    }
    out.push('\n');
    for (u, v) in g.edges() {
        writeln!(out, "edge {u} {v}").unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: Graph,
    pub warnings: Vec<String>,
}

pub fn parse_graph(text: &str) -> Result<ParsedGraph> {
    let err = |line: usize, reason: String| Error::GraphParse { line, reason };
    let mut n: Option<usize> = None;
    let mut byzantine: Option<Vec<NodeId>> = None;
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap();
        let ids: Vec<usize> = tokens
            .map(|t| t.parse::<usize>().map_err(|_| err(line_no, format!("`{t}` is not a node id"))))
            .collect::<Result<_>>()?;
        match (keyword, n, &byzantine) {
            ("nodes", None, _) => {
                let [count] = ids[..] else {
                    return Err(err(line_no, "expected `nodes <n>`".into()));
                };
                n = Some(count);
            }
            ("byzantine", Some(count), None) => {
                if let Some(&b) = ids.iter().find(|&&b| b >= count) {
                    return Err(err(line_no, format!("byzantine id {b} out of range")));
                }
                byzantine = Some(ids);
            }
            ("edge", Some(count), Some(_)) => {
                let [u, v] = ids[..] else {
                    return Err(err(line_no, "expected `edge <u> <v>`".into()));
                };
                if u == v {
                    return Err(err(line_no, format!("self-loop at node {u}")));
                }
                if u > v {
                    return Err(err(line_no, format!("edge must be declared with u < v, got {u} {v}")));
                }
                if v >= count {
                    return Err(err(line_no, format!("node {v} out of range")));
                }
                if !seen.insert((u, v)) {
                    warnings.push(format!("line {line_no}: duplicate edge {u} {v} ignored"));
                    continue;
                }
                edges.push((u, v));
            }
            ("nodes", Some(_), _) => return Err(err(line_no, "repeated `nodes` header".into())),
            ("byzantine", None, _) => return Err(err(line_no, "`byzantine` before `nodes`".into())),
            ("byzantine", Some(_), Some(_)) => return Err(err(line_no, "repeated `byzantine` header".into())),
            ("edge", _, _) => {
                return Err(err(line_no, "edge before `nodes` and `byzantine` headers".into()));
            }
            (other, _, _) => return Err(err(line_no, format!("unknown directive `{other}`"))),
        }
    }
    let n = n.ok_or_else(|| err(0, "missing `nodes` header".into()))?;
    let byzantine = byzantine.ok_or_else(|| err(0, "missing `byzantine` header".into()))?;
    Ok(ParsedGraph { graph: Graph::new(n, &edges, &byzantine)?, warnings })
}

pub fn load_graph(path: &Path) -> Result<ParsedGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_graph(&text)?;
    for w in &parsed.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(parsed)
}

pub fn save_graph(g: &Graph, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(g)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn complete(n: usize) -> Vec<(NodeId, NodeId)> {
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect()
    }

    #[test]
    fn assumption_examples() {
        let tri = Graph::new(3, &complete(3), &[]).unwrap();
        assert!(check_assumptions(&tri).all_pass());

        // Node 0 sees one honest and one Byzantine neighbor: 1 > 1 fails.
        let g = Graph::new(3, &[(0, 1), (0, 2)], &[2]).unwrap();
        let r = check_assumptions(&g);
        assert_eq!(r.failing_nodes(), vec![0]);

        // Two honest triangles bridged only by Byzantine node 6.
        let edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 6), (3, 6)];
        let g = Graph::new(7, &edges, &[6]).unwrap();
        assert!(!check_assumptions(&g).honest_connected);
    }

    #[test]
    fn lambda2_examples() {
        let path = Graph::new(2, &[(0, 1)], &[]).unwrap();
        assert!((honest_lambda2(&path) - 2.0).abs() < 1e-9);
        let k3 = Graph::new(3, &complete(3), &[]).unwrap();
        assert!((honest_lambda2(&k3) - 3.0).abs() < 1e-9);
        let split = Graph::new(4, &[(0, 1), (2, 3)], &[]).unwrap();
        assert!(honest_lambda2(&split).abs() < 1e-9);
        // Byzantine node excluded from the Laplacian: honest path 0-1 remains.
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], &[2]).unwrap();
        assert!((honest_lambda2(&g) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn stats_and_threshold() {
        let g = Graph::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)], &[3]).unwrap();
        let s = g.stats();
        assert_eq!(s.delta_min, 2);
        assert_eq!(s.max_byzantine_neighbors, 1);
        assert_eq!(s.honest_degree, vec![2, 2, 2, 1]);
        assert_eq!(s.separation_threshold(0.005), 100.0);
    }

    #[test]
    fn graph_normalizes_input() {
        let g = Graph::new(3, &[(2, 0), (0, 2), (1, 0)], &[]).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.edges(), vec![(0, 1), (0, 2)]);
        assert!(Graph::new(2, &[(1, 1)], &[]).is_err());
        assert!(Graph::new(2, &[(0, 2)], &[]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let g = generate(&GeneratorKind::RandomRegular { k: 6 }, 20, 4, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(back.graph, g);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# header\nnodes 3\nbyzantine\nedge 0 1\nedge 2 2\n";
        match parse_graph(text).unwrap_err() {
            Error::GraphParse { line, reason } => {
                assert_eq!(line, 5);
                assert!(reason.contains("self-loop"));
            }
            e => panic!("unexpected {e}"),
        }
        let asym = parse_graph("nodes 3\nbyzantine\nedge 1 0\n").unwrap_err();
        assert!(matches!(asym, Error::GraphParse { line: 3, .. }));
        assert!(parse_graph("nodes 3\nbyzantine 2\nedge 0 3\n").is_err());
        assert!(parse_graph("byzantine\nnodes 3\n").is_err());
        assert!(parse_graph("nodes 3\nbyzantine\nfoo 1\n").is_err());
    }

    #[test]
    fn duplicate_edges_warn() {
        let parsed = parse_graph("nodes 3\nbyzantine 2 # last\nedge 0 1\nedge 0 1\nedge 1 2\n").unwrap();
        assert_eq!(parsed.graph.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("line 4"));
        assert!(parsed.graph.is_byzantine(2));
    }

    #[test]
    fn generators_pass_and_repeat() {
        let kinds = [
            GeneratorKind::RandomRegular { k: 6 },
            GeneratorKind::ErdosRenyi { p: 0.35 },
            GeneratorKind::RingPlusChords { chords: 10, byz_degree: 2 },
        ];
        for kind in &kinds {
            let a = generate(kind, 20, 4, 42).unwrap();
            assert!(check_assumptions(&a).all_pass(), "{kind:?}");
            assert_eq!(a.byzantine_ids(), vec![20, 21, 22, 23]);
            let b = generate(kind, 20, 4, 42).unwrap();
            assert_eq!(a, b);
            let honest_only = generate(kind, 12, 0, 1).unwrap();
            assert!(check_assumptions(&honest_only).all_pass());
        }
        let regular = generate(&GeneratorKind::RandomRegular { k: 6 }, 20, 4, 3).unwrap();
        assert!((0..24).all(|i| regular.neighbors(i).len() == 6));
    }

    #[test]
    fn generator_exhaustion() {
        // Every Byzantine node hits both honest nodes of a 2-node ring.
        let kind = GeneratorKind::RingPlusChords { chords: 0, byz_degree: 2 };
        let err = generate(&kind, 2, 3, 0).unwrap_err();
        assert!(err.to_string().contains("no admissible topology found"));
        assert!(generate(&GeneratorKind::RandomRegular { k: 3 }, 3, 0, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn stats_match_brute_force(seed in any::<u64>(), n_h in 4usize..16, n_b in 0usize..4, p in 0.2f64..0.8) {
            let g = match generate(&GeneratorKind::ErdosRenyi { p }, n_h, n_b, seed) {
                Ok(g) => g,
                Err(_) => return Ok(()),
            };
            let edges = g.edges();
            let mut brute = usize::MAX;
            for i in 0..n_h {
                let count = edges
                    .iter()
                    .filter(|&&(u, v)| (u == i && v < n_h) || (v == i && u < n_h))
                    .count();
                brute = brute.min(count);
            }
            prop_assert_eq!(g.stats().delta_min, brute);
        }

        #[test]
        fn lambda2_agrees_with_traversal(n in 2usize..14, bits in proptest::collection::vec(any::<bool>(), 91), byz in 0usize..3) {
            let pairs = complete(n);
            let edges: Vec<_> = pairs.iter().zip(&bits).filter(|(_, &b)| b).map(|(e, _)| *e).collect();
            let byzantine: Vec<_> = (0..byz.min(n - 1)).map(|k| n - 1 - k).collect();
            let g = Graph::new(n, &edges, &byzantine).unwrap();
            if g.honest_ids().len() >= 2 {
                prop_assert_eq!(honest_lambda2(&g) > 1e-9, check_assumptions(&g).honest_connected);
            }
        }
    }
}
