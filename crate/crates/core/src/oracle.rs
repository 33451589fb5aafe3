//! Ground truth by brute force: percolation by enumeration and sampling,
//! spectra by dense linear algebra.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::rng::task_rng;

pub const MAX_ENUMERATION_EDGES: usize = 24;
pub const MAX_DENSE_DIMENSION: usize = 2048;

/// Union-find with path compression and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn reset(&mut self) {
        for (x, p) in self.parent.iter_mut().enumerate() {
            *p = x;
        }
        self.size.iter_mut().for_each(|s| *s = 1);
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut x = x;
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Size of the component containing `x`.
    pub fn component_size(&mut self, x: usize) -> usize {
        let root = self.find(x);
        self.size[root]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactPercolation {
    pub p: f64,
    /// `pi[i][s - 1] = π_i(s)` for `s = 1..=n`.
    pub pi: Vec<Vec<f64>>,
    pub mean_size: Vec<f64>,
    /// Every cluster of a finite graph is small, so this is `Σ_s π_i(s)`.
    pub h1: Vec<f64>,
}

const ENUMERATION_CHUNK_BITS: usize = 12;

/// Cluster-size distribution of every node over all `2^|E|` occupation
/// configurations. Configurations are split into fixed chunks whose partial
/// sums are added in chunk order, so the result does not depend on the
/// thread count.
pub fn exact_percolation_enumeration(g: &WeightedGraph, p: f64) -> Result<ExactPercolation> {
    let m = g.edge_count();
    if m > MAX_ENUMERATION_EDGES {
        return Err(Error::TooLarge {
            what: "edges for exact enumeration",
            value: m,
            limit: MAX_ENUMERATION_EDGES,
        });
    }
    let n = g.n();
    let up: Vec<f64> = (0..=m).map(|k| p.powi(k as i32)).collect();
    let down: Vec<f64> = (0..=m).map(|k| (1.0 - p).powi(k as i32)).collect();
    let total = 1u64 << m;
    let chunk = 1u64 << ENUMERATION_CHUNK_BITS.min(m);
    let chunks = total / chunk;
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; n * n];
            let mut uf = UnionFind::new(n);
            for mask in c * chunk..(c + 1) * chunk {
                let k = mask.count_ones() as usize;
                let weight = up[k] * down[m - k];
                if weight == 0.0 {
                    continue;
                }
                uf.reset();
                for (e, edge) in g.edges().iter().enumerate() {
                    if mask >> e & 1 == 1 {
                        uf.union(edge.u, edge.v);
                    }
                }
                for i in 0..n {
                    let s = uf.component_size(i);
                    acc[i * n + s - 1] += weight;
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; n * n];
    for part in &partial {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
    }
    let pi: Vec<Vec<f64>> = acc.chunks(n).map(<[f64]>::to_vec).collect();
    let mean_size = pi
        .iter()
        .map(|row| row.iter().enumerate().map(|(s, x)| (s + 1) as f64 * x).sum())
        .collect();
    let h1 = pi.iter().map(|row| row.iter().sum()).collect();
    Ok(ExactPercolation { p, pi, mean_size, h1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

impl McEstimate {
    /// From the sum and the sum of squares of the per-trial values.
    pub fn from_sums(sum: f64, sum_sq: f64, trials: u64) -> Self {
        let t = trials as f64;
        let mean = sum / t;
        let var = if trials > 1 {
            ((sum_sq - sum * sum / t) / (t - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / t).sqrt(),
            trials,
        }
    }

    /// `|value − mean|` in standard errors. The error is floored at
    /// `1/trials`, the resolution of a single count, so an event never
    /// observed still tolerates a value of order one count.
    pub fn sigmas(&self, value: f64) -> f64 {
        let floor = 1.0 / self.trials.max(1) as f64;
        (value - self.mean).abs() / self.stderr.max(floor)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct McPercolation {
    pub p: f64,
    pub seed: u64,
    pub trials: u64,
    /// `pi[i][s - 1]` for `s = 1..=s_max`.
    pub pi: Vec<Vec<McEstimate>>,
    pub mean_size: Vec<McEstimate>,
    /// Largest cluster as a fraction of `n`.
    pub giant_fraction: McEstimate,
}

#[derive(Clone)]
struct McTally {
    pi: Vec<u64>,
    size: Vec<u64>,
    size_sq: Vec<u128>,
    giant: u64,
    giant_sq: u128,
}

impl McTally {
    fn new(n: usize, s_max: usize) -> Self {
        Self {
            pi: vec![0; n * s_max],
            size: vec![0; n],
            size_sq: vec![0; n],
            giant: 0,
            giant_sq: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.pi.iter_mut().zip(&other.pi).for_each(|(a, b)| *a += b);
        self.size.iter_mut().zip(&other.size).for_each(|(a, b)| *a += b);
        self.size_sq.iter_mut().zip(&other.size_sq).for_each(|(a, b)| *a += b);
        self.giant += other.giant;
        self.giant_sq += other.giant_sq;
        self
    }
}

/// Sampled cluster statistics. Trial `t` draws its edge coins from its own
/// generator seeded with `mix(seed, t)`, and tallies are integers, so the
/// estimate is identical for any thread count. `π_i(s)` is tracked for
/// `s ≤ s_max`.
pub fn mc_percolation(g: &WeightedGraph, p: f64, trials: u64, seed: u64, s_max: usize) -> McPercolation {
    let n = g.n();
    let s_max = s_max.min(n);
    let tally = (0..trials)
        .into_par_iter()
        .fold(
            || (McTally::new(n, s_max), UnionFind::new(n)),
            |(mut tally, mut uf), t| {
                let mut rng = task_rng(seed, t);
                uf.reset();
                for edge in g.edges() {
                    if rng.gen::<f64>() < p {
                        uf.union(edge.u, edge.v);
                    }
                }
                let mut largest = 0;
                for i in 0..n {
                    let s = uf.component_size(i);
                    largest = largest.max(s);
                    if s <= s_max {
                        tally.pi[i * s_max + s - 1] += 1;
                    }
                    tally.size[i] += s as u64;
                    tally.size_sq[i] += (s * s) as u128;
                }
                tally.giant += largest as u64;
                tally.giant_sq += (largest * largest) as u128;
                (tally, uf)
            },
        )
        .map(|(tally, _)| tally)
        .reduce(|| McTally::new(n, s_max), McTally::merge);

    let pi = (0..n)
        .map(|i| {
            (0..s_max)
                .map(|s| {
                    let c = tally.pi[i * s_max + s] as f64;
                    McEstimate::from_sums(c, c, trials)
                })
                .collect()
        })
        .collect();
    let mean_size = (0..n)
        .map(|i| McEstimate::from_sums(tally.size[i] as f64, tally.size_sq[i] as f64, trials))
        .collect();
    let nf = n as f64;
    let giant_fraction = McEstimate::from_sums(
        tally.giant as f64 / nf,
        tally.giant_sq as f64 / (nf * nf),
        trials,
    );
    McPercolation {
        p,
        seed,
        trials,
        pi,
        mean_size,
        giant_fraction,
    }
}

fn check_square_symmetric(a: &[Vec<f64>]) -> Result<usize> {
    let n = a.len();
    if n > MAX_DENSE_DIMENSION {
        return Err(Error::TooLarge {
            what: "dense matrix dimension",
            value: n,
            limit: MAX_DENSE_DIMENSION,
        });
    }
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSymmetric);
        }
        for j in 0..i {
            let scale = row[j].abs().max(a[j][i].abs()).max(1.0);
            if (row[j] - a[j][i]).abs() > 1e-12 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(n)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn dense_eigenvalues(a: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
    let n = check_square_symmetric(a)?;
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let off = |m: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i][j] * m[i][j];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&m) < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

/// Lorentzian-broadened density `(1/nπ) Σ_λ η / ((x − λ)² + η²)`.
pub fn exact_density(eigs: &[f64], x: f64, eta: f64) -> f64 {
    eigs.iter()
        .map(|&l| eta / ((x - l) * (x - l) + eta * eta))
        .sum::<f64>()
        / (eigs.len() as f64 * std::f64::consts::PI)
}

fn shifted(a: &[Vec<f64>], z: Complex64) -> DMatrix<Complex64> {
    let n = a.len();
    DMatrix::from_fn(n, n, |i, j| {
        let entry = Complex64::new(-a[i][j], 0.0);
        if i == j {
            z + entry
        } else {
            entry
        }
    })
}

/// `[(zI − A)⁻¹]_ii` by a dense LU solve.
pub fn resolvent_diagonal(a: &[Vec<f64>], z: Complex64, i: usize) -> Result<Complex64> {
    let n = check_square_symmetric(a)?;
    let mut e = nalgebra::DVector::from_element(n, Complex64::new(0.0, 0.0));
    e[i] = Complex64::new(1.0, 0.0);
    let x = shifted(a, z).lu().solve(&e).ok_or(Error::Singular)?;
    Ok(x[i])
}

/// All diagonal entries of `(zI − A)⁻¹` from one factorization.
pub fn resolvent_diagonals(a: &[Vec<f64>], z: Complex64) -> Result<Vec<Complex64>> {
    let n = check_square_symmetric(a)?;
    let lu = shifted(a, z).lu();
    (0..n)
        .map(|i| {
            let mut e = nalgebra::DVector::from_element(n, Complex64::new(0.0, 0.0));
            e[i] = Complex64::new(1.0, 0.0);
            lu.solve(&e).map(|x| x[i]).ok_or(Error::Singular)
        })
        .collect()
}

/// `[A^s]_ii` by `s` matrix-vector products on `e_i`.
pub fn diag_power(a: &[Vec<f64>], s: usize, i: usize) -> f64 {
    let n = a.len();
    let mut x = vec![0.0; n];
    x[i] = 1.0;
    for _ in 0..s {
        x = a.iter().map(|row| row.iter().zip(&x).map(|(r, v)| r * v).sum()).collect();
    }
    x[i]
}
