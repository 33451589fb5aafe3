//! Bond percolation by neighborhood-intersection message passing.
//!
//! Messages carry generating functions for the size of the cluster a node
//! reaches through one region. Internally a message stores the reduced
//! value `M = H / z`, i.e. it counts the reached nodes *other than* the
//! receiving node; the factor `z` for the node itself is applied once when
//! a component is formed:
//!
//! ```text
//! y_s     = z · ∏_{other regions of s} M_{region→s}
//! M_{c→k} = G_{c→k}(y) = ⟨ ∏_{s∈c∖k} y_s^{w_ks} ⟩
//! H_i(z)  = z · ∏_{regions f at i} G_f(y)
//! ```
//!
//! where `w_ks = 1` when `s` is reachable from `k` through occupied edges of
//! the region. The average over occupation configurations is precomputed
//! once per region as a distribution of reached sets ([`ReachDistribution`]),
//! exactly by enumeration up to `enum_threshold` edges and by sampling
//! beyond. Sweeps are synchronous.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genfn::GenValue;
use crate::graph::{EdgeId, NodeId, WeightedGraph};
use crate::neighborhoods::{
    EquivalenceClassing, Neighborhood, NeighborhoodSystem, Pair, ScheduleOrder, UnboundedSchedule,
};
use crate::rng::task_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bounded,
    Unbounded,
    #[default]
    Auto,
}

/// Starting values for scalar-mode messages. Series mode always starts
/// from `M = 1` (`H = z`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageInit {
    #[default]
    Ones,
    /// Uniform in `(0, 1)`, drawn from the configured seed.
    Random,
}

/// Which edges an unbounded message averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionRule {
    /// `N_{k∩q} ∖ P̄_{i∩j}(N_{k∩q})`.
    #[default]
    Remaining,
    /// The accumulated set `P̄_{i∩j}(N_{k∩q})` itself.
    Prior,
}

#[derive(Clone, Debug, Serialize)]
pub struct PercConfig {
    pub p: f64,
    pub r: usize,
    pub mode: Mode,
    /// Evaluation point for the scalar pass reported as `h_z`.
    pub z: f64,
    /// When set, a series pass up to this degree provides `π_i(s)`.
    pub s_max: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub enum_threshold: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub init: MessageInit,
    pub schedule_order: ScheduleOrder,
    pub region_rule: RegionRule,
}

impl Default for PercConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            r: 0,
            mode: Mode::Auto,
            z: 1.0,
            s_max: None,
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.0,
            enum_threshold: 16,
            mc_samples: 100_000,
            seed: 0,
            init: MessageInit::Ones,
            schedule_order: ScheduleOrder::Canonical,
            region_rule: RegionRule::Remaining,
        }
    }
}

impl PercConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p = {} outside [0, 1]", self.p)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping {} outside [0, 1)", self.damping)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol must be positive and max_iter nonzero".into()));
        }
        if self.enum_threshold > 30 {
            return Err(Error::TooLarge {
                what: "enum_threshold",
                value: self.enum_threshold,
                limit: 30,
            });
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Distribution of the set of region nodes reachable from the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachDistribution {
    /// (reached slots, probability); slots exclude the root.
    outcomes: Vec<(Vec<u32>, f64)>,
    slots: usize,
}

impl ReachDistribution {
    pub fn outcomes(&self) -> &[(Vec<u32>, f64)] {
        &self.outcomes
    }

    /// Probability that each slot is reached.
    pub fn reach_probabilities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.slots];
        for (reached, prob) in &self.outcomes {
            for &s in reached {
                out[s as usize] += prob;
            }
        }
        out
    }

    /// `⟨∏ y_s^{w_s}⟩`.
    pub fn evaluate(&self, y: &[GenValue], one: &GenValue) -> GenValue {
        let mut total = GenValue::zero(one.s_max());
        for (reached, prob) in &self.outcomes {
            match reached.split_first() {
                None => total.add_scaled(*prob, one),
                Some((&first, rest)) => {
                    let mut prod = y[first as usize].clone();
                    for &s in rest {
                        prod = prod.mul(&y[s as usize]);
                    }
                    total.add_scaled(*prob, &prod);
                }
            }
        }
        total
    }

    /// Value and the partial derivatives `∂G/∂y_s = ⟨w_s ∏_{t≠s} y_t^{w_t}⟩`.
    pub fn evaluate_with_partials(&self, y: &[GenValue], one: &GenValue) -> (GenValue, Vec<GenValue>) {
        let zero = GenValue::zero(one.s_max());
        let mut value = zero.clone();
        let mut partials = vec![zero; self.slots];
        for (reached, prob) in &self.outcomes {
            // prefix[t] = ∏_{u<t} y_u over the reached list
            let mut prefix = Vec::with_capacity(reached.len() + 1);
            prefix.push(one.clone());
            for &s in reached {
                let next = prefix.last().unwrap().mul(&y[s as usize]);
                prefix.push(next);
            }
            value.add_scaled(*prob, prefix.last().unwrap());
            let mut suffix = one.clone();
            for (t, &s) in reached.iter().enumerate().rev() {
                let without = prefix[t].mul(&suffix);
                partials[s as usize].add_scaled(*prob, &without);
                suffix = suffix.mul(&y[s as usize]);
            }
        }
        (value, partials)
    }
}

struct SmallUnionFind {
    parent: Vec<usize>,
}

impl SmallUnionFind {
    fn reset(&mut self, n: usize) {
        self.parent.clear();
        self.parent.extend(0..n);
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Computes the reach distribution of a region. Local node 0 is the root,
/// nodes `1..=slots` are the component slots, any further nodes only relay
/// connectivity.
pub fn reach_distribution(
    n_local: usize,
    slots: usize,
    edges: &[(usize, usize)],
    p: f64,
    enum_threshold: usize,
    mc_samples: usize,
    seed: u64,
) -> ReachDistribution {
    let m = edges.len();
    let words = slots.div_ceil(64).max(1);
    let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let mut uf = SmallUnionFind { parent: Vec::new() };
    let mut record = |occupied: &dyn Fn(usize) -> bool, weight: f64, acc: &mut BTreeMap<Vec<u64>, f64>| {
        uf.reset(n_local);
        for (e, &(a, b)) in edges.iter().enumerate() {
            if occupied(e) {
                uf.union(a, b);
            }
        }
        let root = uf.find(0);
        let mut key = vec![0u64; words];
        for s in 0..slots {
            if uf.find(s + 1) == root {
                key[s / 64] |= 1 << (s % 64);
            }
        }
        *acc.entry(key).or_insert(0.0) += weight;
    };

    if m <= enum_threshold {
        let up: Vec<f64> = (0..=m).map(|k| p.powi(k as i32)).collect();
        let down: Vec<f64> = (0..=m).map(|k| (1.0 - p).powi(k as i32)).collect();
        for mask in 0u64..(1u64 << m) {
            let k = mask.count_ones() as usize;
            let weight = up[k] * down[m - k];
            if weight == 0.0 {
                continue;
            }
            record(&|e| mask >> e & 1 == 1, weight, &mut acc);
        }
    } else {
        let mut rng = task_rng(seed, 0);
        let share = 1.0 / mc_samples as f64;
        let mut occupied = vec![false; m];
        for _ in 0..mc_samples {
            for slot in occupied.iter_mut() {
                *slot = rng.gen::<f64>() < p;
            }
            record(&|e| occupied[e], share, &mut acc);
        }
    }

    let outcomes = acc
        .into_iter()
        .map(|(key, prob)| {
            let reached = (0..slots as u32)
                .filter(|&s| key[s as usize / 64] >> (s % 64) & 1 == 1)
                .collect();
            (reached, prob)
        })
        .collect();
    ReachDistribution { outcomes, slots }
}

/// A region seen from a root: which nodes are slots, and which messages
/// feed each slot.
struct Factor {
    dist: ReachDistribution,
    /// Graph node of each slot.
    slot_nodes: Vec<NodeId>,
    /// Message ids whose product (times `z`) is the slot's component.
    feeds: Vec<Vec<usize>>,
}

fn local_edges(g: &WeightedGraph, root: NodeId, slot_nodes: &[NodeId], edges: &[EdgeId]) -> (usize, Vec<(usize, usize)>) {
    let mut index: HashMap<NodeId, usize> = HashMap::new();
    index.insert(root, 0);
    for (s, &x) in slot_nodes.iter().enumerate() {
        index.insert(x, s + 1);
    }
    let mut next = slot_nodes.len() + 1;
    let mut local = |x: NodeId, index: &mut HashMap<NodeId, usize>| {
        *index.entry(x).or_insert_with(|| {
            next += 1;
            next - 1
        })
    };
    let pairs = edges
        .iter()
        .map(|&e| {
            let edge = g.edge(e);
            (local(edge.u, &mut index), local(edge.v, &mut index))
        })
        .collect();
    (index.len(), pairs)
}

/// Labels of the messages, for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MessageKey {
    /// `H_{c→k}` for class `c` and member `k`.
    Class { class: usize, node: NodeId },
    /// `H_{k∩q→i∩j}`.
    Pair { source: Pair, target: Pair },
}

/// Precomputed message structure for one graph, probability and method.
pub struct PercolationEngine {
    mode: Mode,
    factors: Vec<Factor>,
    /// Factor of each message.
    messages: Vec<usize>,
    keys: Vec<MessageKey>,
    /// Factors whose product gives `H_i / z`, per node.
    beliefs: Vec<Vec<usize>>,
}

impl PercolationEngine {
    /// Messages between equivalence classes; exact when the loop bound is
    /// fulfilled.
    pub fn bounded(g: &WeightedGraph, classing: &EquivalenceClassing, config: &PercConfig) -> Self {
        let mut ids: HashMap<(usize, NodeId), usize> = HashMap::new();
        let mut keys = Vec::new();
        for (c, class) in classing.classes.iter().enumerate() {
            for &k in class.nodes() {
                ids.insert((c, k), keys.len());
                keys.push(MessageKey::Class { class: c, node: k });
            }
        }
        let plans: Vec<(usize, NodeId)> = keys
            .iter()
            .map(|key| match *key {
                MessageKey::Class { class, node } => (class, node),
                MessageKey::Pair { .. } => unreachable!(),
            })
            .collect();
        let factors: Vec<Factor> = plans
            .par_iter()
            .enumerate()
            .map(|(id, &(c, k))| {
                let class = &classing.classes[c];
                let slot_nodes: Vec<NodeId> = class.nodes().iter().copied().filter(|&s| s != k).collect();
                let feeds = slot_nodes
                    .iter()
                    .map(|&s| {
                        classing.membership[s]
                            .iter()
                            .filter(|&&other| other != c)
                            .map(|&other| ids[&(other, s)])
                            .collect()
                    })
                    .collect();
                let (n_local, edges) = local_edges(g, k, &slot_nodes, class.edges());
                let dist = reach_distribution(
                    n_local,
                    slot_nodes.len(),
                    &edges,
                    config.p,
                    config.enum_threshold,
                    config.mc_samples,
                    crate::rng::mix(config.seed, id as u64),
                );
                Factor {
                    dist,
                    slot_nodes,
                    feeds,
                }
            })
            .collect();
        let beliefs = (0..g.n())
            .map(|i| classing.membership[i].iter().map(|&c| ids[&(c, i)]).collect())
            .collect();
        Self {
            mode: Mode::Bounded,
            messages: (0..factors.len()).collect(),
            factors,
            keys,
            beliefs,
        }
    }

    /// Messages between intersection neighborhoods, with the overcounting
    /// schedules deciding which edges each message averages over.
    pub fn unbounded(
        g: &WeightedGraph,
        system: &NeighborhoodSystem,
        schedule: &UnboundedSchedule,
        config: &PercConfig,
    ) -> Self {
        struct Plan {
            root: NodeId,
            region: Neighborhood,
            edges: Vec<EdgeId>,
            /// (source, target) pairs feeding the slots are looked up as
            /// `(slot, s) → region_pair`
            region_pair: Pair,
        }
        let mut ids: HashMap<(Pair, Pair), usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut plans = Vec::new();
        for (&target, visits) in &schedule.targets {
            for visit in visits {
                let source = visit.pair;
                if source.0 == target.0 {
                    continue;
                }
                let edges = match config.region_rule {
                    RegionRule::Remaining => visit.remaining.clone(),
                    RegionRule::Prior => visit.prior.clone(),
                };
                if edges.is_empty() {
                    continue;
                }
                ids.insert((source, target), keys.len());
                keys.push(MessageKey::Pair { source, target });
                plans.push(Plan {
                    root: source.0,
                    region: system.intersection(source.0, source.1).expect("schedule pair").clone(),
                    edges,
                    region_pair: source,
                });
            }
        }
        for (i, visits) in schedule.nodes.iter().enumerate() {
            for visit in visits {
                if visit.remaining.is_empty() {
                    continue;
                }
                plans.push(Plan {
                    root: i,
                    region: system.intersection(visit.pair.0, visit.pair.1).expect("node pair").clone(),
                    edges: visit.remaining.clone(),
                    region_pair: visit.pair,
                });
            }
        }
        let message_count = keys.len();
        let factors: Vec<Factor> = plans
            .par_iter()
            .enumerate()
            .map(|(id, plan)| {
                let slot_nodes: Vec<NodeId> = plan
                    .region
                    .nodes()
                    .iter()
                    .copied()
                    .filter(|&s| s != plan.root)
                    .collect();
                let feeds = slot_nodes
                    .iter()
                    .map(|&p| {
                        system
                            .primary(p)
                            .nodes()
                            .iter()
                            .filter(|&&s| s != p)
                            .filter_map(|&s| ids.get(&((p, s), plan.region_pair)).copied())
                            .collect()
                    })
                    .collect();
                let (n_local, edges) = local_edges(g, plan.root, &slot_nodes, &plan.edges);
                let dist = reach_distribution(
                    n_local,
                    slot_nodes.len(),
                    &edges,
                    config.p,
                    config.enum_threshold,
                    config.mc_samples,
                    crate::rng::mix(config.seed, id as u64),
                );
                Factor {
                    dist,
                    slot_nodes,
                    feeds,
                }
            })
            .collect();
        let mut beliefs = vec![Vec::new(); g.n()];
        for (id, plan) in plans.iter().enumerate().skip(message_count) {
            beliefs[plan.root].push(id);
        }
        Self {
            mode: Mode::Unbounded,
            messages: (0..message_count).collect(),
            factors,
            keys,
            beliefs,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    pub fn keys(&self) -> &[MessageKey] {
        &self.keys
    }

    /// Initial reduced messages `M`.
    pub fn initial_state(&self, s_max: Option<usize>, init: MessageInit, seed: u64) -> Vec<GenValue> {
        match (s_max, init) {
            (None, MessageInit::Random) => (0..self.messages.len())
                .map(|m| GenValue::Scalar(task_rng(seed, m as u64).gen_range(f64::EPSILON..1.0)))
                .collect(),
            _ => vec![GenValue::one(s_max); self.messages.len()],
        }
    }

    fn components(&self, factor: &Factor, state: &[GenValue], z: f64, one: &GenValue) -> Vec<GenValue> {
        factor
            .feeds
            .iter()
            .map(|feed| {
                let mut prod = one.clone();
                for &m in feed {
                    prod = prod.mul(&state[m]);
                }
                prod.times_z(z)
            })
            .collect()
    }

    fn one_like(state: &[GenValue], s_max: Option<usize>) -> GenValue {
        GenValue::one(state.first().map_or(s_max, GenValue::s_max))
    }

    /// One synchronous sweep; returns the new reduced messages and the
    /// largest absolute change.
    pub fn sweep(&self, state: &[GenValue], z: f64, damping: f64) -> (Vec<GenValue>, f64) {
        let one = Self::one_like(state, None);
        let next: Vec<GenValue> = self
            .messages
            .par_iter()
            .enumerate()
            .map(|(m, &f)| {
                let factor = &self.factors[f];
                let y = self.components(factor, state, z, &one);
                factor.dist.evaluate(&y, &one).damp(&state[m], damping)
            })
            .collect();
        let delta = next
            .iter()
            .zip(state)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        (next, delta)
    }

    /// Iterates sweeps until the change drops to `tol`.
    pub fn iterate(&self, mut state: Vec<GenValue>, z: f64, config: &PercConfig) -> Result<Convergence> {
        let mut delta = f64::INFINITY;
        for iteration in 1..=config.max_iter {
            let (next, d) = self.sweep(&state, z, config.damping);
            if !next.iter().all(GenValue::is_finite) {
                return Err(Error::Diverged { iteration });
            }
            state = next;
            delta = d;
            if delta <= config.tol {
                return Ok(Convergence {
                    state,
                    iterations: iteration,
                    delta,
                    converged: true,
                });
            }
        }
        Ok(Convergence {
            state,
            iterations: config.max_iter,
            delta,
            converged: false,
        })
    }

    /// `H_i(z)` from converged reduced messages.
    pub fn infer_node(&self, state: &[GenValue], i: NodeId, z: f64) -> GenValue {
        self.infer_node_truncated(state, i, z, None)
    }

    /// As [`infer_node`](Self::infer_node), with an explicit truncation for
    /// the case of an engine without messages.
    pub fn infer_node_truncated(&self, state: &[GenValue], i: NodeId, z: f64, s_max: Option<usize>) -> GenValue {
        let one = Self::one_like(state, s_max);
        let mut prod = one.clone();
        for &f in &self.beliefs[i] {
            let factor = &self.factors[f];
            let y = self.components(factor, state, z, &one);
            prod = prod.mul(&factor.dist.evaluate(&y, &one));
        }
        prod.times_z(z)
    }

    /// Messages as full generating functions `H = z·M`.
    pub fn messages_h(&self, state: &[GenValue], z: f64) -> BTreeMap<MessageKey, GenValue> {
        self.keys
            .iter()
            .zip(state)
            .map(|(&k, m)| (k, m.times_z(z)))
            .collect()
    }

    /// Derivatives of all reduced messages at `z = 1`, by iterating the
    /// differentiated message equations from zero.
    pub fn derivatives(&self, state: &[f64], config: &PercConfig) -> Result<Convergence<f64>> {
        let gen: Vec<GenValue> = state.iter().map(|&x| GenValue::Scalar(x)).collect();
        let one = GenValue::Scalar(1.0);
        // ∂G/∂y per message slot, frozen at the fixed point
        let partials: Vec<Vec<f64>> = self
            .messages
            .par_iter()
            .map(|&f| {
                let factor = &self.factors[f];
                let y = self.components(factor, &gen, 1.0, &one);
                let (_, partials) = factor.dist.evaluate_with_partials(&y, &one);
                partials.iter().map(GenValue::at_one).collect()
            })
            .collect();
        let mut deriv = vec![0.0; state.len()];
        let mut delta = f64::INFINITY;
        for iteration in 1..=config.max_iter {
            let next: Vec<f64> = self
                .messages
                .par_iter()
                .enumerate()
                .map(|(m, &f)| {
                    let factor = &self.factors[f];
                    factor
                        .feeds
                        .iter()
                        .zip(&partials[m])
                        .map(|(feed, &dg)| dg * component_derivative(feed, state, &deriv))
                        .sum()
                })
                .collect();
            if !next.iter().all(|x: &f64| x.is_finite()) {
                return Err(Error::Diverged { iteration });
            }
            delta = next
                .iter()
                .zip(&deriv)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            deriv = next;
            if delta <= config.tol {
                return Ok(Convergence {
                    state: deriv,
                    iterations: iteration,
                    delta,
                    converged: true,
                });
            }
        }
        Ok(Convergence {
            state: deriv,
            iterations: config.max_iter,
            delta,
            converged: false,
        })
    }

    /// `⟨s_i⟩ = H_i'(1)` given reduced messages and their derivatives at 1.
    pub fn expected_size(&self, state: &[f64], deriv: &[f64], i: NodeId) -> f64 {
        let gen: Vec<GenValue> = state.iter().map(|&x| GenValue::Scalar(x)).collect();
        let one = GenValue::Scalar(1.0);
        let mut values = Vec::new();
        let mut slopes = Vec::new();
        for &f in &self.beliefs[i] {
            let factor = &self.factors[f];
            let y = self.components(factor, &gen, 1.0, &one);
            let (value, partials) = factor.dist.evaluate_with_partials(&y, &one);
            values.push(value.at_one());
            slopes.push(
                factor
                    .feeds
                    .iter()
                    .zip(&partials)
                    .map(|(feed, dg)| dg.at_one() * component_derivative(feed, state, deriv))
                    .sum::<f64>(),
            );
        }
        let mut total: f64 = values.iter().product();
        for (a, slope) in slopes.iter().enumerate() {
            let others: f64 = values
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, v)| v)
                .product();
            total += others * slope;
        }
        total
    }

    /// Slot nodes of the belief factors at `i`, for diagnostics.
    pub fn belief_regions(&self, i: NodeId) -> Vec<Vec<NodeId>> {
        self.beliefs[i]
            .iter()
            .map(|&f| self.factors[f].slot_nodes.clone())
            .collect()
    }
}

/// `d/dz [z ∏_{m∈feed} M_m(z)]` at `z = 1`.
fn component_derivative(feed: &[usize], state: &[f64], deriv: &[f64]) -> f64 {
    let prod: f64 = feed.iter().map(|&m| state[m]).product();
    let mut total = prod;
    for (a, &m) in feed.iter().enumerate() {
        let others: f64 = feed
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .map(|(_, &o)| state[o])
            .product();
        total += deriv[m] * others;
    }
    total
}

#[derive(Clone, Debug)]
pub struct Convergence<T = GenValue> {
    pub state: Vec<T>,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
}

/// `⟨∏_{k∈C∖{i}} y_k^{w_ik}⟩` over the occupation configurations of the
/// region's edges, together with the partial derivatives in each `y_k`.
pub fn eval_g(
    g: &WeightedGraph,
    region: &Neighborhood,
    root: NodeId,
    y: &BTreeMap<NodeId, GenValue>,
    config: &PercConfig,
) -> Result<(GenValue, BTreeMap<NodeId, GenValue>)> {
    if !region.contains_node(root) {
        return Err(Error::NotInNeighborhood { i: root, j: root });
    }
    let slot_nodes: Vec<NodeId> = region.nodes().iter().copied().filter(|&s| s != root).collect();
    let s_max = y.values().next().and_then(GenValue::s_max);
    if y.values().any(|v| v.s_max() != s_max) {
        return Err(Error::ModeMismatch);
    }
    let ys = slot_nodes
        .iter()
        .map(|s| y.get(s).cloned().ok_or(Error::NotInNeighborhood { i: root, j: *s }))
        .collect::<Result<Vec<_>>>()?;
    let (n_local, edges) = local_edges(g, root, &slot_nodes, region.edges());
    let dist = reach_distribution(
        n_local,
        slot_nodes.len(),
        &edges,
        config.p,
        config.enum_threshold,
        config.mc_samples,
        config.seed,
    );
    let (value, partials) = dist.evaluate_with_partials(&ys, &GenValue::one(s_max));
    Ok((value, slot_nodes.into_iter().zip(partials).collect()))
}

/// Probability that a node sits in a finite cluster, `H_i(1)`.
pub fn small_cluster_prob(h: &GenValue) -> f64 {
    h.at_one()
}

/// `S = 1 − (1/n) Σ_i H_i(1)`.
pub fn percolating_fraction(h1: &[f64]) -> f64 {
    if h1.is_empty() {
        return 0.0;
    }
    1.0 - h1.iter().sum::<f64>() / h1.len() as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeReport {
    pub id: NodeId,
    pub h1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_z: Option<f64>,
    pub mean_size: f64,
    /// `π_i(s)` for `s = 1..=s_max`; empty without a series pass.
    pub pi: Vec<f64>,
    /// Mass beyond `s_max`: `1 − Σ_s π_i(s)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PercolationReport {
    pub p: f64,
    pub r: usize,
    pub mode: Mode,
    pub loop_bound_fulfilled: bool,
    #[serde(rename = "S")]
    pub s: f64,
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
    pub nodes: Vec<NodeReport>,
}

impl PercolationReport {
    /// One CSV row per `(node, s)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,s,pi\n");
        for node in &self.nodes {
            for (s, pi) in node.pi.iter().enumerate() {
                out += &format!("{},{},{:.16e}\n", node.id, s + 1, pi);
            }
        }
        out
    }
}

/// Runs classification, message passing and inference.
pub fn run(g: &WeightedGraph, config: &PercConfig) -> Result<PercolationReport> {
    config.validate()?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let system = NeighborhoodSystem::build(g, config.r);
    let classing = system.classify(g);
    let mode = match (config.mode, classing.loop_bound_fulfilled) {
        (Mode::Bounded, false) => return Err(Error::LoopBoundNotFulfilled { r: config.r }),
        (Mode::Auto, true) | (Mode::Bounded, true) => Mode::Bounded,
        _ => Mode::Unbounded,
    };
    let engine = match mode {
        Mode::Bounded => PercolationEngine::bounded(g, &classing, config),
        _ => {
            let schedule = system.schedules(config.schedule_order);
            PercolationEngine::unbounded(g, &system, &schedule, config)
        }
    };
    run_engine(g, &engine, config, classing.loop_bound_fulfilled)
}

pub fn run_engine(
    g: &WeightedGraph,
    engine: &PercolationEngine,
    config: &PercConfig,
    fulfilled: bool,
) -> Result<PercolationReport> {
    let n = g.n();
    let mut passes: Vec<(usize, f64, bool)> = Vec::new();
    let mut track = |c: &Convergence| passes.push((c.iterations, c.delta, c.converged));

    let scalar = engine.iterate(engine.initial_state(None, config.init, config.seed), 1.0, config)?;
    track(&scalar);
    let h1: Vec<f64> = (0..n)
        .map(|i| engine.infer_node(&scalar.state, i, 1.0).at_one())
        .collect();
    let values: Vec<f64> = scalar.state.iter().map(GenValue::at_one).collect();
    let deriv = engine.derivatives(&values, config)?;
    let mean_size: Vec<f64> = (0..n)
        .map(|i| engine.expected_size(&values, &deriv.state, i))
        .collect();

    let h_z = if config.z != 1.0 {
        let at_z = engine.iterate(engine.initial_state(None, config.init, config.seed), config.z, config)?;
        track(&at_z);
        Some(
            (0..n)
                .map(|i| engine.infer_node(&at_z.state, i, config.z).at_one())
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };

    let series = match config.s_max {
        Some(s_max) => {
            let run = engine.iterate(engine.initial_state(Some(s_max), config.init, config.seed), 1.0, config)?;
            track(&run);
            Some(
                (0..n)
                    .map(|i| engine.infer_node_truncated(&run.state, i, 1.0, Some(s_max)))
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };

    let iterations = passes.iter().map(|p| p.0).max().unwrap_or(0);
    let delta = passes.iter().map(|p| p.1).fold(0.0, f64::max);
    let converged = deriv.converged && passes.iter().all(|p| p.2);
    let nodes = (0..n)
        .map(|i| {
            let (pi, tail) = match &series {
                Some(h) => {
                    let s = h[i].as_series().expect("series pass");
                    let pi = s.coeffs()[1..].to_vec();
                    (pi, Some(1.0 - s.sum()))
                }
                None => (Vec::new(), None),
            };
            NodeReport {
                id: i,
                h1: h1[i],
                h_z: h_z.as_ref().map(|v| v[i]),
                mean_size: mean_size[i],
                pi,
                tail,
            }
        })
        .collect();
    let report = PercolationReport {
        p: config.p,
        r: config.r,
        mode: engine.mode(),
        loop_bound_fulfilled: fulfilled,
        s: percolating_fraction(&h1),
        iterations,
        delta,
        converged,
        nodes,
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::PercolationNotConverged(Box::new(report)))
    }
}
