//! Spectral density of sparse symmetric matrices by neighborhood-intersection
//! message passing.
//!
//! A message `H_{c→k}(z)` is the generating value of the excursions from `k`
//! that stay inside region `c`, dressed at every other node `s` by the
//! excursions `s` makes into its other regions. It is a local walk sum:
//!
//! ```text
//! H_{c→k} = vᵀ (D − A_local)⁻¹ v
//! D_ss    = z − A_ss − Σ_{c' ∋ s, c' ≠ c} H_{c'→s}
//! H_i     = A_ii + Σ_{c ∋ i} H_{c→i},      ρ = −(1/nπ) Im Σ_i 1/(z − H_i)
//! ```
//!
//! `v` holds the weights of the region's edges at `k` and `A_local` the
//! region's edges among the other members. Self-loops enter as the constant
//! message `A_ss`.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, NodeId, WeightedGraph};
use crate::neighborhoods::{EquivalenceClassing, NeighborhoodSystem, Pair, ScheduleOrder, UnboundedSchedule};
use crate::percolation::Mode;

/// Largest imaginary part a message may carry before the update is
/// rejected.
pub const IMAG_SIGN_TOLERANCE: f64 = 1e-9;

/// How the diagonal entry `D_ss` combines the messages node `s` receives
/// from its other regions (including the constant self-loop message).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeFactor {
    /// `z − Σ H`: the resummed cavity propagator at `s`.
    #[default]
    Additive,
    /// `z · ∏ (z − H)/z`; agrees with `Additive` when `s` has at most one
    /// other region.
    Product,
    /// `∏ (z − H)`, with the empty product equal to 1.
    Literal,
}

impl NodeFactor {
    pub fn diagonal(self, z: Complex64, incoming: impl Iterator<Item = Complex64>) -> Complex64 {
        match self {
            NodeFactor::Additive => incoming.fold(z, |d, h| d - h),
            NodeFactor::Product => incoming.fold(z, |d, h| d * (z - h) / z),
            NodeFactor::Literal => incoming.fold(Complex64::new(1.0, 0.0), |d, h| d * (z - h)),
        }
    }
}

/// `F_{s∖c}(z) = 1 / D_ss` for the given incoming messages.
pub fn node_factor(factor: NodeFactor, z: Complex64, incoming: &[Complex64]) -> Complex64 {
    1.0 / factor.diagonal(z, incoming.iter().copied())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl XGrid {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn points(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => {
                let step = (self.max - self.min) / (n - 1) as f64;
                (0..n).map(|k| self.min + step * k as f64).collect()
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralConfig {
    pub eta: f64,
    pub grid: XGrid,
    pub r: usize,
    pub mode: Mode,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub warm_start: bool,
    pub node_factor: NodeFactor,
    pub schedule_order: ScheduleOrder,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            grid: XGrid::new(-3.0, 3.0, 601),
            r: 0,
            mode: Mode::Auto,
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.0,
            warm_start: false,
            node_factor: NodeFactor::Additive,
            schedule_order: ScheduleOrder::Canonical,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping {} outside [0, 1)", self.damping)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol must be positive and max_iter nonzero".into()));
        }
        if !(self.grid.min <= self.grid.max) {
            return Err(Error::Config("grid minimum exceeds maximum".into()));
        }
        Ok(())
    }
}

/// The dense system for one message or one inference term.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSystem {
    /// Region nodes other than the root.
    pub members: Vec<NodeId>,
    /// Weights of the region's edges between the root and each member.
    pub v: Vec<f64>,
    /// Region couplings among the members, dense and symmetric.
    pub a_local: Vec<Vec<f64>>,
    pub d: Vec<Complex64>,
}

impl LocalSystem {
    /// `vᵀ (D − A_local)⁻¹ v`.
    pub fn solve(&self) -> Result<Complex64> {
        let n = self.members.len();
        if n == 0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for a in 0..n {
            for b in 0..n {
                m[a * n + b] = Complex64::new(-self.a_local[a][b], 0.0);
            }
            m[a * n + a] += self.d[a];
        }
        let rhs: Vec<Complex64> = self.v.iter().map(|&w| Complex64::new(w, 0.0)).collect();
        let x = lu_solve(m, n, rhs)?;
        Ok(self.v.iter().zip(&x).map(|(&w, xs)| w * xs).sum())
    }
}

/// Dense LU with partial pivoting on a row-major `n × n` matrix.
fn lu_solve(mut m: Vec<Complex64>, n: usize, mut b: Vec<Complex64>) -> Result<Vec<Complex64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &c| m[a * n + col].norm().total_cmp(&m[c * n + col].norm()))
            .expect("nonempty range");
        let scale = m[pivot * n + col];
        if !(scale.norm() > f64::MIN_POSITIVE) || !scale.is_finite() {
            return Err(Error::Singular);
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / scale;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..n {
                let sub = f * m[col * n + k];
                m[row * n + k] -= sub;
            }
            let sub = f * b[col];
            b[row] -= sub;
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * b[k];
        }
        b[row] = acc / m[row * n + row];
    }
    Ok(b)
}

/// Static part of a local system: who the members are, what couples them
/// and which messages dress each member.
struct LocalTemplate {
    members: Vec<NodeId>,
    v: Vec<f64>,
    couplings: Vec<(usize, usize, f64)>,
    diag: Vec<f64>,
    feeds: Vec<Vec<usize>>,
}

impl LocalTemplate {
    fn new(g: &WeightedGraph, root: NodeId, mut members: Vec<NodeId>, edges: &[EdgeId]) -> Self {
        members.sort_unstable();
        members.dedup();
        members.retain(|&s| s != root);
        let index: HashMap<NodeId, usize> = members.iter().enumerate().map(|(a, &s)| (s, a)).collect();
        let mut v = vec![0.0; members.len()];
        let mut couplings = Vec::new();
        for &e in edges {
            let edge = g.edge(e);
            if edge.u == root {
                v[index[&edge.v]] += edge.w;
            } else if edge.v == root {
                v[index[&edge.u]] += edge.w;
            } else {
                couplings.push((index[&edge.u], index[&edge.v], edge.w));
            }
        }
        let diag = members.iter().map(|&s| g.diagonal(s)).collect();
        Self {
            members,
            v,
            couplings,
            diag,
            feeds: Vec::new(),
        }
    }

    fn system(&self, state: &[Complex64], z: Complex64, factor: NodeFactor) -> LocalSystem {
        let n = self.members.len();
        let mut a_local = vec![vec![0.0; n]; n];
        for &(a, b, w) in &self.couplings {
            a_local[a][b] += w;
            a_local[b][a] += w;
        }
        let d = self
            .feeds
            .iter()
            .zip(&self.diag)
            .map(|(feed, &diag)| {
                let constant = (diag != 0.0).then_some(Complex64::new(diag, 0.0));
                factor.diagonal(z, constant.into_iter().chain(feed.iter().map(|&m| state[m])))
            })
            .collect();
        LocalSystem {
            members: self.members.clone(),
            v: self.v.clone(),
            a_local,
            d,
        }
    }
}

/// Labels of the messages, for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MessageKey {
    Class { class: usize, node: NodeId },
    Pair { source: Pair, target: Pair },
}

/// Precomputed message structure for one matrix.
pub struct SpectralEngine {
    mode: Mode,
    node_factor: NodeFactor,
    templates: Vec<LocalTemplate>,
    keys: Vec<MessageKey>,
    /// Local systems whose solutions add up to `H_i − A_ii`.
    beliefs: Vec<Vec<usize>>,
    diagonal: Vec<f64>,
}

impl SpectralEngine {
    pub fn bounded(g: &WeightedGraph, classing: &EquivalenceClassing, node_factor: NodeFactor) -> Self {
        let mut ids: HashMap<(usize, NodeId), usize> = HashMap::new();
        let mut keys = Vec::new();
        for (c, class) in classing.classes.iter().enumerate() {
            for &k in class.nodes() {
                ids.insert((c, k), keys.len());
                keys.push(MessageKey::Class { class: c, node: k });
            }
        }
        let templates = keys
            .iter()
            .map(|key| {
                let MessageKey::Class { class: c, node: k } = *key else {
                    unreachable!()
                };
                let class = &classing.classes[c];
                let mut template = LocalTemplate::new(g, k, class.nodes().to_vec(), class.edges());
                template.feeds = template
                    .members
                    .iter()
                    .map(|&s| {
                        classing.membership[s]
                            .iter()
                            .filter(|&&other| other != c)
                            .map(|&other| ids[&(other, s)])
                            .collect()
                    })
                    .collect();
                template
            })
            .collect();
        let beliefs = (0..g.n())
            .map(|i| classing.membership[i].iter().map(|&c| ids[&(c, i)]).collect())
            .collect();
        Self {
            mode: Mode::Bounded,
            node_factor,
            templates,
            keys,
            beliefs,
            diagonal: (0..g.n()).map(|i| g.diagonal(i)).collect(),
        }
    }

    pub fn unbounded(
        g: &WeightedGraph,
        system: &NeighborhoodSystem,
        schedule: &UnboundedSchedule,
        node_factor: NodeFactor,
    ) -> Self {
        let mut ids: HashMap<(Pair, Pair), usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut regions: Vec<(NodeId, Pair, &[EdgeId])> = Vec::new();
        for (&target, visits) in &schedule.targets {
            for visit in visits {
                let source = visit.pair;
                if source.0 == target.0 || visit.remaining.is_empty() {
                    continue;
                }
                ids.insert((source, target), keys.len());
                keys.push(MessageKey::Pair { source, target });
                regions.push((source.0, target, &visit.remaining));
            }
        }
        let message_count = keys.len();
        let mut beliefs = vec![Vec::new(); g.n()];
        for (i, visits) in schedule.nodes.iter().enumerate() {
            for visit in visits {
                if visit.remaining.is_empty() {
                    continue;
                }
                beliefs[i].push(regions.len());
                regions.push((i, visit.pair, &visit.remaining));
            }
        }
        let templates = regions
            .iter()
            .enumerate()
            .map(|(id, &(root, feed_target, edges))| {
                let members = edges
                    .iter()
                    .flat_map(|&e| [g.edge(e).u, g.edge(e).v])
                    .collect();
                let mut template = LocalTemplate::new(g, root, members, edges);
                // a message (k,q)→T is dressed by messages into its own
                // source pair; an inference term at i by messages into (i, j)
                let into = if id < message_count {
                    match keys[id] {
                        MessageKey::Pair { source, .. } => source,
                        MessageKey::Class { .. } => unreachable!(),
                    }
                } else {
                    feed_target
                };
                template.feeds = template
                    .members
                    .iter()
                    .map(|&p| {
                        system
                            .primary(p)
                            .nodes()
                            .iter()
                            .filter(|&&s| s != p)
                            .filter_map(|&s| ids.get(&((p, s), into)).copied())
                            .collect()
                    })
                    .collect();
                template
            })
            .collect();
        Self {
            mode: Mode::Unbounded,
            node_factor,
            templates,
            keys,
            beliefs,
            diagonal: (0..g.n()).map(|i| g.diagonal(i)).collect(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn keys(&self) -> &[MessageKey] {
        &self.keys
    }

    pub fn message_count(&self) -> usize {
        self.keys.len()
    }

    pub fn initial_state(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.keys.len()]
    }

    /// The local system behind message `id` at the given state.
    pub fn local_system(&self, id: usize, state: &[Complex64], z: Complex64) -> LocalSystem {
        self.templates[id].system(state, z, self.node_factor)
    }

    /// One synchronous sweep; returns the new messages and `max |ΔH|`.
    pub fn sweep(&self, state: &[Complex64], z: Complex64, damping: f64, iteration: usize) -> Result<(Vec<Complex64>, f64)> {
        let next = (0..self.keys.len())
            .into_par_iter()
            .map(|m| {
                let h = self.local_system(m, state, z).solve()?;
                let h = if damping > 0.0 {
                    damping * state[m] + (1.0 - damping) * h
                } else {
                    h
                };
                if !h.is_finite() {
                    return Err(Error::Diverged { iteration });
                }
                if h.im > IMAG_SIGN_TOLERANCE {
                    return Err(Error::ImaginarySign {
                        message: m,
                        imag: h.im,
                        iteration,
                    });
                }
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;
        let delta = next
            .iter()
            .zip(state)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        Ok((next, delta))
    }

    pub fn iterate(&self, mut state: Vec<Complex64>, z: Complex64, config: &SpectralConfig) -> Result<Solved> {
        let mut delta = if state.is_empty() { 0.0 } else { f64::INFINITY };
        let mut iterations = 0;
        while delta > config.tol && iterations < config.max_iter {
            iterations += 1;
            let (next, d) = self.sweep(&state, z, config.damping, iterations)?;
            state = next;
            delta = d;
        }
        Ok(Solved {
            converged: delta <= config.tol,
            state,
            iterations,
            delta,
        })
    }

    /// `H_i(z)`.
    pub fn infer_node(&self, state: &[Complex64], i: NodeId, z: Complex64) -> Result<Complex64> {
        let mut h = Complex64::new(self.diagonal[i], 0.0);
        for &id in &self.beliefs[i] {
            h += self.local_system(id, state, z).solve()?;
        }
        Ok(h)
    }

    pub fn infer_all(&self, state: &[Complex64], z: Complex64) -> Result<Vec<Complex64>> {
        (0..self.diagonal.len())
            .map(|i| self.infer_node(state, i, z))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub state: Vec<Complex64>,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
}

/// `(clipped, raw)` density `−(1/nπ) Im Σ 1/(z − H_i)`.
pub fn density_at(h: &[Complex64], z: Complex64) -> (f64, f64) {
    let raw = -h.iter().map(|&hi| (1.0 / (z - hi)).im).sum::<f64>() / (h.len() as f64 * std::f64::consts::PI);
    (raw.max(0.0), raw)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub x: f64,
    pub rho: f64,
    pub rho_raw: f64,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumMetadata {
    pub eta: f64,
    pub r: usize,
    pub mode: Mode,
    pub node_factor: NodeFactor,
    pub loop_bound_fulfilled: bool,
    pub mass_estimate: f64,
    pub per_x_iterations: Vec<usize>,
    pub failed_points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub metadata: SpectrumMetadata,
    pub rows: Vec<SpectrumRow>,
}

impl SpectrumReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,rho\n");
        for row in &self.rows {
            out += &format!("{:.16e},{:.16e}\n", row.x, row.rho);
        }
        out
    }

    pub fn max_rho_raw_negative(&self) -> f64 {
        self.rows.iter().map(|r| -r.rho_raw).fold(0.0, f64::max)
    }
}

/// Trapezoid rule over sorted `(x, y)` samples.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Builds the engine for the configured mode.
pub fn engine_for(g: &WeightedGraph, config: &SpectralConfig) -> Result<(SpectralEngine, bool)> {
    let system = NeighborhoodSystem::build(g, config.r);
    let classing = system.classify(g);
    let fulfilled = classing.loop_bound_fulfilled;
    let engine = match (config.mode, fulfilled) {
        (Mode::Bounded, false) => return Err(Error::LoopBoundNotFulfilled { r: config.r }),
        (Mode::Auto | Mode::Bounded, true) => SpectralEngine::bounded(g, &classing, config.node_factor),
        _ => {
            let schedule = system.schedules(config.schedule_order);
            SpectralEngine::unbounded(g, &system, &schedule, config.node_factor)
        }
    };
    Ok((engine, fulfilled))
}

/// `H_i(z)` for every node at one point.
pub fn solve_point(engine: &SpectralEngine, z: Complex64, config: &SpectralConfig) -> Result<(Vec<Complex64>, Solved)> {
    let solved = engine.iterate(engine.initial_state(), z, config)?;
    Ok((engine.infer_all(&solved.state, z)?, solved))
}

/// Density on the configured grid. Failures at a point are recorded on its
/// row and the sweep continues.
pub fn sweep(g: &WeightedGraph, config: &SpectralConfig) -> Result<SpectrumReport> {
    config.validate()?;
    let (engine, fulfilled) = engine_for(g, config)?;
    let xs = config.grid.points();
    let point = |x: f64, start: Vec<Complex64>| -> (SpectrumRow, Option<Vec<Complex64>>) {
        let z = Complex64::new(x, config.eta);
        let outcome = engine
            .iterate(start, z, config)
            .and_then(|s| engine.infer_all(&s.state, z).map(|h| (h, s)));
        match outcome {
            Ok((h, solved)) => {
                let (rho, rho_raw) = density_at(&h, z);
                let row = SpectrumRow {
                    x,
                    rho,
                    rho_raw,
                    iterations: solved.iterations,
                    delta: solved.delta,
                    converged: solved.converged,
                    error: (!solved.converged).then(|| "not converged".to_string()),
                };
                (row, Some(solved.state))
            }
            Err(e) => (
                SpectrumRow {
                    x,
                    rho: f64::NAN,
                    rho_raw: f64::NAN,
                    iterations: 0,
                    delta: f64::NAN,
                    converged: false,
                    error: Some(e.to_string()),
                },
                None,
            ),
        }
    };
    let rows: Vec<SpectrumRow> = if config.warm_start {
        let mut state = engine.initial_state();
        xs.iter()
            .map(|&x| {
                let (row, next) = point(x, state.clone());
                state = next.unwrap_or_else(|| engine.initial_state());
                row
            })
            .collect()
    } else {
        xs.par_iter()
            .map(|&x| point(x, engine.initial_state()).0)
            .collect()
    };
    let ok: Vec<&SpectrumRow> = rows.iter().filter(|r| r.rho.is_finite()).collect();
    let mass_estimate = trapezoid(
        &ok.iter().map(|r| r.x).collect::<Vec<_>>(),
        &ok.iter().map(|r| r.rho).collect::<Vec<_>>(),
    );
    let metadata = SpectrumMetadata {
        eta: config.eta,
        r: config.r,
        mode: engine.mode(),
        node_factor: config.node_factor,
        loop_bound_fulfilled: fulfilled,
        mass_estimate,
        per_x_iterations: rows.iter().map(|r| r.iterations).collect(),
        failed_points: rows.iter().filter(|r| !r.converged).count(),
    };
    Ok(SpectrumReport { metadata, rows })
}
