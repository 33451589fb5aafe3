//! Sparse undirected weighted graphs, shared by both applications.
//!
//! A [`WeightedGraph`] stores every non-loop edge once with `u < v`, plus a
//! separate table of self-loops. For a symmetric matrix `A` the graph has an
//! edge `(i, j)` exactly when `A[i][j] != 0`, with weight `A[i][j]`; diagonal
//! entries become self-loops.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type EdgeId = usize;

/// Tolerance used when the same matrix entry is given twice.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub w: f64,
}

impl Edge {
    pub fn other(&self, x: NodeId) -> NodeId {
        if self.u == x {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    /// Per node: (neighbor, edge id), sorted by neighbor.
    adjacency: Vec<Vec<(NodeId, EdgeId)>>,
    self_loops: BTreeMap<NodeId, f64>,
    connected: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub connected: bool,
    pub has_self_loops: bool,
    pub n: usize,
    pub edge_count: usize,
    pub self_loop_count: usize,
}

impl WeightedGraph {
    /// Builds a graph from an edge list. Identical duplicates (in either
    /// orientation) are merged; duplicates with different weights are
    /// rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId, f64)>,
    {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut canon: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
        let mut self_loops = BTreeMap::new();
        for (a, b, w) in edges {
            if a >= n {
                return Err(Error::NodeOutOfRange(a));
            }
            if b >= n {
                return Err(Error::NodeOutOfRange(b));
            }
            let target = if a == b {
                &mut self_loops
            } else {
                &mut canon
            };
            let key = if a == b { (a, a) } else { (a.min(b), a.max(b)) };
            match target.get(&key) {
                Some(&old) if old != w => {
                    return Err(Error::ConflictingEdge {
                        u: key.0,
                        v: key.1,
                        first: old,
                        second: w,
                    })
                }
                _ => {
                    target.insert(key, w);
                }
            }
        }
        let self_loops = self_loops.into_iter().map(|((k, _), w)| (k, w)).collect();
        let edges: Vec<Edge> = canon
            .into_iter()
            .map(|((u, v), w)| Edge { u, v, w })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for (id, e) in edges.iter().enumerate() {
            adjacency[e.u].push((e.v, id));
            adjacency[e.v].push((e.u, id));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let connected = is_connected(n, &adjacency);
        Ok(Self {
            n,
            edges,
            adjacency,
            self_loops,
            connected,
        })
    }

    /// Builds `G_A` from coordinate entries of a symmetric matrix. Either
    /// triangle (or both) may be given; zero entries carry no edge.
    pub fn from_symmetric_matrix<I>(n: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut seen: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, value) in entries {
            if i >= n {
                return Err(Error::NodeOutOfRange(i));
            }
            if j >= n {
                return Err(Error::NodeOutOfRange(j));
            }
            let key = (i.min(j), i.max(j));
            match seen.get(&key) {
                Some(&old) => {
                    let scale = old.abs().max(value.abs()).max(1.0);
                    if (old - value).abs() > SYMMETRY_TOLERANCE * scale {
                        return Err(Error::Asymmetric {
                            i,
                            j,
                            a: value,
                            b: old,
                        });
                    }
                }
                None => {
                    seen.insert(key, value);
                }
            }
        }
        Self::from_edges(
            n,
            seen.into_iter()
                .filter(|&(_, v)| v != 0.0)
                .map(|((i, j), v)| (i, j, v)),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self, i: NodeId) -> &[(NodeId, EdgeId)] {
        &self.adjacency[i]
    }

    pub fn neighbors(&self, i: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[i].iter().map(|&(j, _)| j)
    }

    pub fn degree(&self, i: NodeId) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_between(&self, u: NodeId, v: NodeId) -> Option<EdgeId> {
        let list = &self.adjacency[u];
        list.binary_search_by_key(&v, |&(j, _)| j)
            .ok()
            .map(|pos| list[pos].1)
    }

    pub fn self_loops(&self) -> &BTreeMap<NodeId, f64> {
        &self.self_loops
    }

    /// Diagonal entry `[A]_kk`, zero when `k` has no self-loop.
    pub fn diagonal(&self, k: NodeId) -> f64 {
        self.self_loops.get(&k).copied().unwrap_or(0.0)
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport {
            connected: self.connected,
            has_self_loops: !self.self_loops.is_empty(),
            n: self.n,
            edge_count: self.edges.len(),
            self_loop_count: self.self_loops.len(),
        }
    }

    /// Upper-triangle nonzero entries including the diagonal, row-major.
    pub fn matrix_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<_> = self
            .edges
            .iter()
            .map(|e| (e.u, e.v, e.w))
            .chain(self.self_loops.iter().map(|(&k, &w)| (k, k, w)))
            .collect();
        out.sort_by_key(|e| (e.0, e.1));
        out
    }

    /// Dense row-major copy of the associated symmetric matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for e in &self.edges {
            a[e.u][e.v] = e.w;
            a[e.v][e.u] = e.w;
        }
        for (&k, &w) in &self.self_loops {
            a[k][k] = w;
        }
        a
    }

    /// Canonical edge-list text: one `u v w` line per edge, self-loops last.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {:?}", e.u, e.v, e.w);
        }
        for (&k, &w) in &self.self_loops {
            let _ = writeln!(out, "{k} {k} {w:?}");
        }
        out
    }

    /// Coordinate matrix text: header `n nnz`, then upper-triangle triples.
    pub fn to_matrix_text(&self) -> String {
        let entries = self.matrix_entries();
        let mut out = format!("{} {}\n", self.n, entries.len());
        for (i, j, v) in entries {
            let _ = writeln!(out, "{i} {j} {v:?}");
        }
        out
    }
}

fn is_connected(n: usize, adjacency: &[Vec<(NodeId, EdgeId)>]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(x) = queue.pop_front() {
        for &(y, _) in &adjacency[x] {
            if !seen[y] {
                seen[y] = true;
                count += 1;
                queue.push_back(y);
            }
        }
    }
    count == n
}

fn significant(line: &str) -> Option<&str> {
    let body = line.split('#').next().unwrap_or("").trim();
    (!body.is_empty()).then_some(body)
}

fn parse_id(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid node id {tok:?}"),
    })
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    let v = tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid weight {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite weight {tok:?}"),
        });
    }
    Ok(v)
}

/// Parses `u v [w]` lines. `#` starts a comment; blank lines are skipped.
/// The node count is one more than the largest id mentioned.
pub fn load_edge_list(text: &str) -> Result<WeightedGraph> {
    let mut edges = Vec::new();
    let mut n = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some(body) = significant(raw) else {
            continue;
        };
        let toks: Vec<&str> = body.split_whitespace().collect();
        if !(2..=3).contains(&toks.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected `u v [w]`, got {body:?}"),
            });
        }
        let u = parse_id(toks[0], line)?;
        let v = parse_id(toks[1], line)?;
        let w = match toks.get(2) {
            Some(t) => parse_real(t, line)?,
            None => 1.0,
        };
        n = n.max(u.checked_add(1).ok_or(Error::NodeOutOfRange(u))?);
        n = n.max(v.checked_add(1).ok_or(Error::NodeOutOfRange(v))?);
        edges.push((u, v, w));
    }
    if edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    WeightedGraph::from_edges(n, edges)
}

/// Parses the coordinate format: a header `n nnz` followed by `nnz` lines
/// of `i j value`, all 0-based.
pub fn load_matrix(text: &str) -> Result<WeightedGraph> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter_map(|(i, l)| significant(l).map(|b| (i + 1, b)));
    let (hline, header) = lines.next().ok_or(Error::EmptyGraph)?;
    let htoks: Vec<&str> = header.split_whitespace().collect();
    if htoks.len() != 2 {
        return Err(Error::Parse {
            line: hline,
            message: "expected header `n nnz`".into(),
        });
    }
    let n = parse_id(htoks[0], hline)?;
    let nnz = parse_id(htoks[1], hline)?;
    let mut entries = Vec::with_capacity(nnz);
    for (line, body) in lines {
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `i j value`, got {body:?}"),
            });
        }
        entries.push((
            parse_id(toks[0], line)?,
            parse_id(toks[1], line)?,
            parse_real(toks[2], line)?,
        ));
    }
    if entries.len() != nnz {
        return Err(Error::Parse {
            line: hline,
            message: format!("header announces {nnz} entries, found {}", entries.len()),
        });
    }
    WeightedGraph::from_symmetric_matrix(n, entries)
}

/// Removes every self-loop `(k, k)` in ascending `k`, multiplying the weight
/// of edge `(j_k, k)` by `[A]_kk`, where `j_k = assignment[k]`.
///
/// The resulting graph carries no diagonal; walks that consist of a single
/// self-loop step are lost, so its spectrum generally differs from the
/// original one.
pub fn absorb_self_loops(
    g: &WeightedGraph,
    assignment: &BTreeMap<NodeId, NodeId>,
) -> Result<WeightedGraph> {
    let mut edges: Vec<Edge> = g.edges.clone();
    for (&k, &akk) in &g.self_loops {
        let j = match assignment.get(&k) {
            Some(&j) => j,
            None if g.degree(k) == 0 => {
                return Err(Error::CannotAbsorb {
                    node: k,
                    reason: "no other neighbor".into(),
                })
            }
            None => {
                return Err(Error::CannotAbsorb {
                    node: k,
                    reason: "no assigned neighbor".into(),
                })
            }
        };
        let id = (j != k)
            .then(|| g.edge_between(k, j))
            .flatten()
            .ok_or_else(|| Error::CannotAbsorb {
                node: k,
                reason: format!("assigned node {j} is not a neighbor"),
            })?;
        edges[id].w *= akk;
    }
    WeightedGraph::from_edges(g.n, edges.iter().map(|e| (e.u, e.v, e.w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> WeightedGraph {
        // K4 without the edge 2-3, both triangles of the symmetric matrix
        let mut entries = Vec::new();
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)] {
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
        WeightedGraph::from_symmetric_matrix(4, entries).unwrap()
    }

    #[test]
    fn smallest_graph() {
        let g = load_edge_list("0 1\n").unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[Edge { u: 0, v: 1, w: 1.0 }]);
    }

    #[test]
    fn triangle_and_comments() {
        let g = load_edge_list("# K3\n0 1\n\n0 2 # spoke\n1 2\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge_count(), 3);
        assert!(g.is_connected());
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn realized_component_with_isolated_nodes() {
        let g = load_edge_list("0 2\n0 4\n0 5\n2 4\n").unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(g.edge_count(), 4);
        assert!(!g.is_connected());
    }

    #[test]
    fn self_loop_recorded() {
        let g = load_edge_list("0 1 2.5\n1 1 3\n").unwrap();
        assert_eq!(g.self_loops().get(&1), Some(&3.0));
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.diagonal(1), 3.0);
        assert_eq!(g.diagonal(0), 0.0);
    }

    #[test]
    fn edge_list_errors() {
        assert!(matches!(load_edge_list(""), Err(Error::EmptyGraph)));
        assert!(matches!(
            load_edge_list("# nothing\n\n"),
            Err(Error::EmptyGraph)
        ));
        assert!(matches!(
            load_edge_list("0 1 1\n1 0 2\n"),
            Err(Error::ConflictingEdge { .. })
        ));
        assert!(matches!(
            load_edge_list("-1 2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_edge_list("0 1\n0 99999999999999999999999\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_edge_list("0 1 2 3\n"),
            Err(Error::Parse { .. })
        ));
        // same weight twice is the same edge
        assert_eq!(load_edge_list("0 1\n1 0\n").unwrap().edge_count(), 1);
    }

    #[test]
    fn diamond_matrix_graph() {
        let g = diamond();
        let got: Vec<_> = g.edges().iter().map(|e| (e.u + 1, e.v + 1)).collect();
        assert_eq!(got, vec![(1, 2), (1, 3), (1, 4), (2, 3), (2, 4)]);
        let report = g.validate();
        assert!(report.connected);
        assert_eq!(report.n, 4);
        assert_eq!(report.edge_count, 5);
        assert!(!report.has_self_loops);
    }

    #[test]
    fn matrix_single_diagonal_entry() {
        let g = WeightedGraph::from_symmetric_matrix(1, [(0, 0, 2.5)]).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.self_loops().get(&0), Some(&2.5));
    }

    #[test]
    fn matrix_consistent_duplicate() {
        let g = WeightedGraph::from_symmetric_matrix(2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.is_connected());
    }

    #[test]
    fn matrix_asymmetry_rejected() {
        let err = WeightedGraph::from_symmetric_matrix(2, [(0, 1, 1.0), (1, 0, 1.0 + 1e-9)]);
        assert!(matches!(err, Err(Error::Asymmetric { .. })));
        // within the decimal round-off tolerance
        let ok = WeightedGraph::from_symmetric_matrix(2, [(0, 1, 0.1), (1, 0, 0.1 + 1e-17)]);
        assert!(ok.is_ok());
    }

    #[test]
    fn matrix_text_format() {
        let g = load_matrix("# flip\n2 2\n0 1 1.0\n1 0 1.0\n").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(matches!(
            load_matrix("2 3\n0 1 1\n"),
            Err(Error::Parse { .. })
        ));
        let back = load_matrix(&g.to_matrix_text()).unwrap();
        assert_eq!(back.matrix_entries(), g.matrix_entries());
    }

    #[test]
    fn validate_disconnected() {
        let g = load_edge_list("0 1\n2 3\n").unwrap();
        assert!(!g.validate().connected);
        let k3 = load_edge_list("0 1\n0 2\n1 2\n").unwrap();
        let r = k3.validate();
        assert!(r.connected && !r.has_self_loops);
    }

    #[test]
    fn absorb_identity_without_loops() {
        let g = diamond();
        let h = absorb_self_loops(&g, &BTreeMap::new()).unwrap();
        assert_eq!(h.matrix_entries(), g.matrix_entries());
    }

    #[test]
    fn absorb_two_node_example() {
        let g = WeightedGraph::from_symmetric_matrix(2, [(0, 1, 1.0), (1, 1, 3.0)]).unwrap();
        let h = absorb_self_loops(&g, &BTreeMap::from([(1, 0)])).unwrap();
        assert_eq!(h.matrix_entries(), vec![(0, 1, 3.0)]);
        assert_eq!(h.n(), 2);
        assert!(h.self_loops().is_empty());
    }

    #[test]
    fn absorb_errors() {
        let lonely = WeightedGraph::from_symmetric_matrix(1, [(0, 0, 1.0)]).unwrap();
        assert!(matches!(
            absorb_self_loops(&lonely, &BTreeMap::new()),
            Err(Error::CannotAbsorb { node: 0, .. })
        ));
        let g = load_edge_list("0 1\n1 2\n2 2 4\n").unwrap();
        assert!(absorb_self_loops(&g, &BTreeMap::from([(2, 0)])).is_err());
        assert!(absorb_self_loops(&g, &BTreeMap::from([(2, 2)])).is_err());
        assert!(absorb_self_loops(&g, &BTreeMap::from([(2, 1)])).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn edge_lists() -> impl Strategy<Value = Vec<(usize, usize, i32)>> {
            prop::collection::vec((0usize..8, 0usize..8, -4i32..5), 1..20)
        }

        proptest! {
            #[test]
            fn edge_list_round_trip(raw in edge_lists()) {
                // keep first weight per undirected pair so the input is valid
                let mut first = BTreeMap::new();
                for (u, v, w) in raw {
                    first.entry((u.min(v), u.max(v))).or_insert(w as f64 / 2.0);
                }
                let text: String = first.iter().map(|(&(u, v), w)| format!("{v} {u} {w}\n")).collect();
                let g = load_edge_list(&text).unwrap();
                let back = load_edge_list(&g.to_edge_list()).unwrap();
                prop_assert_eq!(back.matrix_entries(), g.matrix_entries());
                let expected: Vec<_> = first.iter().map(|(&(u, v), &w)| (u, v, w)).collect();
                let mut got = g.matrix_entries();
                got.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
                prop_assert_eq!(got, expected);
            }

            #[test]
            fn matrix_reextraction_exact(raw in edge_lists()) {
                let mut first = BTreeMap::new();
                for (u, v, w) in raw {
                    first.entry((u.min(v), u.max(v))).or_insert(w as f64 * 0.37);
                }
                let n = first.keys().map(|&(_, v)| v + 1).max().unwrap();
                let entries: Vec<_> = first.iter().flat_map(|(&(u, v), &w)| [(u, v, w), (v, u, w)]).collect();
                let g = WeightedGraph::from_symmetric_matrix(n, entries).unwrap();
                let nonzero: Vec<_> = first.iter().filter(|(_, &w)| w != 0.0).map(|(&(u, v), &w)| (u, v, w)).collect();
                prop_assert_eq!(g.matrix_entries(), nonzero);
            }

            #[test]
            fn absorb_removes_all_loops(raw in edge_lists()) {
                let mut first = BTreeMap::new();
                for (u, v, w) in raw {
                    first.entry((u.min(v), u.max(v))).or_insert(1.0 + w.abs() as f64);
                }
                let n = first.keys().map(|&(_, v)| v + 1).max().unwrap();
                let g = WeightedGraph::from_edges(n, first.iter().map(|(&(u, v), &w)| (u, v, w))).unwrap();
                let assignment: BTreeMap<_, _> = g
                    .self_loops()
                    .keys()
                    .filter_map(|&k| g.neighbors(k).next().map(|j| (k, j)))
                    .collect();
                match absorb_self_loops(&g, &assignment) {
                    Ok(h) => {
                        prop_assert_eq!(h.n(), g.n());
                        prop_assert!(h.self_loops().is_empty());
                    }
                    Err(Error::CannotAbsorb { node, .. }) => prop_assert_eq!(g.degree(node), 0),
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }
        }
    }
}
