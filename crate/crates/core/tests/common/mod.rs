#![allow(dead_code)]

use std::collections::HashSet;

use nib_core::graph::{load_edge_list, WeightedGraph};
use nib_core::NeighborhoodSystem;

pub fn graph(text: &str) -> WeightedGraph {
    load_edge_list(text).unwrap()
}

pub fn k3() -> WeightedGraph {
    graph("0 1\n0 2\n1 2\n")
}

/// Two triangles glued along edge (0,1): K4 without the edge (2,3).
pub fn diamond() -> WeightedGraph {
    graph("0 1\n0 2\n0 3\n1 2\n1 3\n")
}

pub fn cycle(n: usize) -> WeightedGraph {
    let text: String = (0..n).map(|k| format!("{k} {}\n", (k + 1) % n)).collect();
    graph(&text)
}

pub fn tree() -> WeightedGraph {
    graph("0 1\n1 2\n1 3\n3 4\n3 5\n")
}

/// Triangles hanging off each other at single vertices, no cycle between them.
pub fn triangle_cactus() -> WeightedGraph {
    graph("0 1\n1 2\n0 2\n2 3\n3 4\n2 4\n4 5\n5 6\n4 6\n2 7\n7 8\n2 8\n")
}

/// `k` triangles closed into a ring; consecutive triangles share a vertex.
pub fn triangle_ring(k: usize) -> WeightedGraph {
    let n = 2 * k;
    let mut text = String::new();
    for t in 0..k {
        let (a, b, c) = (2 * t, 2 * t + 1, (2 * t + 2) % n);
        text += &format!("{a} {b}\n{b} {c}\n{a} {c}\n");
    }
    graph(&text)
}

/// Cliques of size `size` in a chain (`closed = false`) or ring, consecutive
/// cliques sharing one vertex.
pub fn clique_chain(count: usize, size: usize, closed: bool) -> WeightedGraph {
    let step = size - 1;
    let n = if closed { count * step } else { count * step + 1 };
    let mut text = String::new();
    for t in 0..count {
        let members: Vec<usize> = (0..size).map(|a| (t * step + a) % n).collect();
        for a in 0..size {
            for b in a + 1..size {
                text += &format!("{} {}\n", members[a], members[b]);
            }
        }
    }
    graph(&text)
}

pub fn smallest_fulfilled_r(g: &WeightedGraph, limit: usize) -> Option<usize> {
    (0..=limit).find(|&r| NeighborhoodSystem::build(g, r).classify(g).loop_bound_fulfilled)
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(x) = stack.pop() {
        for &(a, b) in edges {
            for (u, v) in [(a, b), (b, a)] {
                if u == x && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Every connected simple graph with `n ≤ max_nodes` and at most `max_edges`
/// edges, one representative per isomorphism class.
pub fn connected_graphs(max_nodes: usize, max_edges: usize) -> Vec<WeightedGraph> {
    let mut out = Vec::new();
    for n in 1..=max_nodes {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let index = |a: usize, b: usize| {
            let (a, b) = (a.min(b), a.max(b));
            pairs.iter().position(|&p| p == (a, b)).unwrap()
        };
        let perms = permutations(n);
        let mut seen: HashSet<u32> = HashSet::new();
        for mask in 0u32..(1 << pairs.len()) {
            let m = mask.count_ones() as usize;
            if m > max_edges || m + 1 < n {
                continue;
            }
            let edges: Vec<(usize, usize)> = (0..pairs.len())
                .filter(|&e| mask >> e & 1 == 1)
                .map(|e| pairs[e])
                .collect();
            if !is_connected(n, &edges) {
                continue;
            }
            let canon = perms
                .iter()
                .map(|p| edges.iter().fold(0u32, |acc, &(a, b)| acc | 1 << index(p[a], p[b])))
                .min()
                .unwrap();
            if seen.insert(canon) {
                out.push(WeightedGraph::from_edges(n, edges.iter().map(|&(a, b)| (a, b, 1.0))).unwrap());
            }
        }
    }
    out
}

/// Same structure with weights drawn uniformly from `[-1, 1]`.
pub fn reweighted(g: &WeightedGraph, seed: u64) -> WeightedGraph {
    use rand::Rng;
    let mut rng = nib_core::rng::task_rng(seed, 0);
    WeightedGraph::from_edges(
        g.n(),
        g.edges().iter().map(|e| {
            let mut w = 0.0;
            while w == 0.0 {
                w = rng.gen_range(-1.0..=1.0);
            }
            (e.u, e.v, w)
        }),
    )
    .unwrap()
}

/// Random simple connected `degree`-regular graph from the pairing model,
/// redrawing until the pairing is simple and connected.
pub fn random_regular(n: usize, degree: usize, seed: u64) -> WeightedGraph {
    use rand::seq::SliceRandom;
    for attempt in 0.. {
        let mut rng = nib_core::rng::task_rng(seed, attempt);
        let mut stubs: Vec<usize> = (0..n).flat_map(|x| std::iter::repeat(x).take(degree)).collect();
        stubs.shuffle(&mut rng);
        let mut seen = HashSet::new();
        let simple = stubs.chunks(2).all(|c| c[0] != c[1] && seen.insert((c[0].min(c[1]), c[0].max(c[1]))));
        if !simple {
            continue;
        }
        let g = WeightedGraph::from_edges(n, stubs.chunks(2).map(|c| (c[0], c[1], 1.0))).unwrap();
        if g.is_connected() {
            return g;
        }
    }
    unreachable!()
}
