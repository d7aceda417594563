//! Shortest path with random edge costs.
//!
//! Every stage draws a fresh, independent cost for every edge. The traveller
//! sees the current costs only after committing to an edge, so the problem is
//! a finite-horizon MDP over vertices. Costs are negated to fit the
//! maximizing engine. Once at the sink the traveller takes the zero-cost
//! `stay` action until the horizon.

use std::fmt;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Stage, Successor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomCostGraph {
    /// Vertices are labelled `1..=vertices`.
    pub vertices: usize,
    pub edges: Vec<EdgeSpec>,
    pub source: usize,
    pub sink: usize,
}

/// The six-vertex graph of the running example. Mean path costs are 4.0 via
/// vertex 2, 5.0 via 3, 3.5 via 4 and 5.5 via 5.
pub fn build_example1_graph() -> RandomCostGraph {
    let e = |from, to, mean| EdgeSpec {
        from,
        to,
        mean,
        sd: 0.25,
    };
    RandomCostGraph {
        vertices: 6,
        edges: vec![
            e(1, 2, 1.5),
            e(1, 3, 2.0),
            e(1, 4, 2.5),
            e(1, 5, 4.0),
            e(2, 4, 1.5),
            e(3, 5, 1.5),
            e(4, 6, 1.0),
            e(5, 6, 1.5),
        ],
        source: 1,
        sink: 6,
    }
}

/// Directed edge used as the action; `from == to` is the stay action at the
/// sink.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl fmt::Debug for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.from == self.to {
            write!(f, "stay{}", self.from)
        } else if self.from < 10 && self.to < 10 {
            write!(f, "e{}{}", self.from, self.to)
        } else {
            write!(f, "e{}_{}", self.from, self.to)
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostModel {
    /// `N(mu, sigma^2)` truncated symmetrically at `mu +- 4 sigma`, which keeps
    /// the mean and bounds the contributions.
    #[default]
    Normal,
    /// `mu +- sigma` with probability one half each: same mean and variance,
    /// and an outcome space small enough to enumerate.
    TwoPoint,
}

/// One stage's realized cost for every edge, in graph order.
pub type EdgeCosts = Vec<f64>;

#[derive(Debug, Clone)]
pub struct ShortestPath {
    graph: RandomCostGraph,
    model: CostModel,
    horizon: Stage,
    /// Edge indices leaving each vertex, in graph order.
    out: Vec<Vec<usize>>,
    /// Fewest edges from each vertex to the sink.
    hops: Vec<Option<usize>>,
    two_point: Vec<(EdgeCosts, f64)>,
    bound: f64,
}

impl ShortestPath {
    pub fn new(graph: RandomCostGraph, model: CostModel) -> Result<Self> {
        let n = graph.vertices;
        let in_range = |v: usize| v >= 1 && v <= n;
        if !in_range(graph.source) || !in_range(graph.sink) {
            return Err(Error::config("source and sink must be graph vertices"));
        }
        let mut out = vec![Vec::new(); n + 1];
        for (i, e) in graph.edges.iter().enumerate() {
            if !in_range(e.from) || !in_range(e.to) || e.from == e.to {
                return Err(Error::config(format!("invalid edge {} -> {}", e.from, e.to)));
            }
            if !(e.sd >= 0.0 && e.mean.is_finite() && e.sd.is_finite()) {
                return Err(Error::config(format!(
                    "edge {} -> {} needs a finite mean and nonnegative deviation",
                    e.from, e.to
                )));
            }
            if e.from == graph.sink {
                return Err(Error::config("the sink must not have outgoing edges"));
            }
            out[e.from].push(i);
        }
        let horizon = longest_path(&graph, &out, graph.source, &mut vec![0; n + 1])?;
        let hops = shortest_hops(&graph, &out);
        for v in reachable(&out, &graph, graph.source) {
            if hops[v].is_none() {
                return Err(Error::config(format!(
                    "vertex {v} is reachable from the source but cannot reach the sink"
                )));
            }
        }
        let two_point = if graph.edges.len() <= 16 {
            two_point_law(&graph)
        } else {
            Vec::new()
        };
        let spread = match model {
            CostModel::Normal => 4.0,
            CostModel::TwoPoint => 1.0,
        };
        let bound = graph
            .edges
            .iter()
            .map(|e| e.mean.abs() + spread * e.sd)
            .fold(0.0, f64::max);
        if model == CostModel::TwoPoint && two_point.is_empty() {
            return Err(Error::config(
                "the two-point cost model supports at most 16 edges",
            ));
        }
        Ok(Self {
            graph,
            model,
            horizon,
            out,
            hops,
            two_point,
            bound,
        })
    }

    pub fn example1() -> Self {
        Self::new(build_example1_graph(), CostModel::Normal).expect("example graph is valid")
    }

    pub fn graph(&self) -> &RandomCostGraph {
        &self.graph
    }

    pub fn cost_model(&self) -> CostModel {
        self.model
    }

    pub fn edge(&self, from: usize, to: usize) -> Edge {
        Edge { from, to }
    }

    /// A cost vector from `(from, to, cost)` triples covering every edge.
    pub fn costs(&self, triples: &[(usize, usize, f64)]) -> Result<EdgeCosts> {
        let mut costs = vec![f64::NAN; self.graph.edges.len()];
        for &(from, to, c) in triples {
            let i = self.edge_index(from, to).ok_or_else(|| {
                Error::contract(format!("no edge {from} -> {to}"))
            })?;
            costs[i] = c;
        }
        if costs.iter().any(|c| c.is_nan()) {
            return Err(Error::contract("every edge needs a cost"));
        }
        Ok(costs)
    }

    fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.graph
            .edges
            .iter()
            .position(|e| e.from == from && e.to == to)
    }

    fn edge_cost(&self, action: &Edge, costs: &EdgeCosts) -> f64 {
        match self.edge_index(action.from, action.to) {
            Some(i) => costs[i],
            None => 0.0,
        }
    }

    fn mean_cost(&self, action: &Edge) -> f64 {
        match self.edge_index(action.from, action.to) {
            Some(i) => self.graph.edges[i].mean,
            None => 0.0,
        }
    }

    /// All source-to-sink paths as vertex sequences.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        fn walk(sp: &ShortestPath, v: usize, path: &mut Vec<usize>, all: &mut Vec<Vec<usize>>) {
            if v == sp.graph.sink {
                all.push(path.clone());
                return;
            }
            for &i in &sp.out[v] {
                let to = sp.graph.edges[i].to;
                path.push(to);
                walk(sp, to, path, all);
                path.pop();
            }
        }
        let mut all = Vec::new();
        walk(self, self.graph.source, &mut vec![self.graph.source], &mut all);
        all
    }

    /// Total cost of a vertex path under fixed edge costs.
    pub fn path_cost(&self, path: &[usize], costs: &EdgeCosts) -> Result<f64> {
        path.windows(2)
            .map(|w| {
                self.edge_index(w[0], w[1])
                    .map(|i| costs[i])
                    .ok_or_else(|| Error::contract(format!("no edge {} -> {}", w[0], w[1])))
            })
            .sum()
    }
}

fn longest_path(
    graph: &RandomCostGraph,
    out: &[Vec<usize>],
    v: usize,
    state: &mut Vec<u8>,
) -> Result<usize> {
    // 0 unvisited, 1 on stack, 2 + length finished
    match state[v] {
        1 => return Err(Error::config("the graph must be acyclic")),
        s if s >= 2 => return Ok((s - 2) as usize),
        _ => {}
    }
    state[v] = 1;
    let mut best = 0;
    for &i in &out[v] {
        best = best.max(1 + longest_path(graph, out, graph.edges[i].to, state)?);
    }
    state[v] = 2 + u8::try_from(best).map_err(|_| Error::config("paths are too long"))?;
    Ok(best)
}

fn shortest_hops(graph: &RandomCostGraph, out: &[Vec<usize>]) -> Vec<Option<usize>> {
    let n = graph.vertices;
    let mut hops = vec![None; n + 1];
    hops[graph.sink] = Some(0);
    // Bellman-Ford style relaxation; graphs here are tiny
    for _ in 0..n {
        for v in 1..=n {
            for &i in &out[v] {
                if let Some(h) = hops[graph.edges[i].to] {
                    if hops[v].is_none_or(|cur| h + 1 < cur) {
                        hops[v] = Some(h + 1);
                    }
                }
            }
        }
    }
    hops
}

fn reachable(out: &[Vec<usize>], graph: &RandomCostGraph, from: usize) -> Vec<usize> {
    let mut seen = vec![false; graph.vertices + 1];
    let mut stack = vec![from];
    let mut order = Vec::new();
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        order.push(v);
        stack.extend(out[v].iter().map(|&i| graph.edges[i].to));
    }
    order
}

fn two_point_law(graph: &RandomCostGraph) -> Vec<(EdgeCosts, f64)> {
    let m = graph.edges.len();
    let p = 0.5f64.powi(m as i32);
    (0..1u32 << m)
        .map(|bits| {
            let costs = graph
                .edges
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    if bits >> i & 1 == 1 {
                        e.mean + e.sd
                    } else {
                        e.mean - e.sd
                    }
                })
                .collect();
            (costs, p)
        })
        .collect()
}

impl Mdp for ShortestPath {
    type State = usize;
    type Action = Edge;
    type Outcome = EdgeCosts;

    fn horizon(&self) -> Stage {
        self.horizon
    }

    fn initial_state(&self) -> usize {
        self.graph.source
    }

    fn actions(&self, t: Stage, v: &usize) -> Vec<Edge> {
        let v = *v;
        if v == self.graph.sink || self.out[v].is_empty() {
            return vec![Edge { from: v, to: v }];
        }
        let left = self.horizon.saturating_sub(t + 1);
        let edges = |filter: bool| {
            self.out[v]
                .iter()
                .map(|&i| &self.graph.edges[i])
                .filter(|e| !filter || self.hops[e.to].is_some_and(|h| h <= left))
                .map(|e| Edge {
                    from: e.from,
                    to: e.to,
                })
                .collect::<Vec<_>>()
        };
        let timely = edges(true);
        if timely.is_empty() {
            edges(false)
        } else {
            timely
        }
    }

    fn transition(&self, _t: Stage, _v: &usize, action: &Edge, _w: &EdgeCosts) -> usize {
        action.to
    }

    fn contribution(&self, _t: Stage, _v: &usize, action: &Edge, w: &EdgeCosts) -> f64 {
        -self.edge_cost(action, w)
    }

    fn sample_outcome(&self, _t: Stage, rng: &mut dyn RngCore) -> EdgeCosts {
        match self.model {
            CostModel::Normal => self
                .graph
                .edges
                .iter()
                .map(|e| {
                    if e.sd == 0.0 {
                        return e.mean;
                    }
                    let normal = Normal::new(e.mean, e.sd).expect("finite parameters");
                    let lo = e.mean - 4.0 * e.sd;
                    let hi = e.mean + 4.0 * e.sd;
                    loop {
                        let x: f64 = normal.sample(rng);
                        if (lo..=hi).contains(&x) {
                            break x;
                        }
                    }
                })
                .collect(),
            CostModel::TwoPoint => self
                .graph
                .edges
                .iter()
                .map(|e| {
                    if rng.random::<bool>() {
                        e.mean + e.sd
                    } else {
                        e.mean - e.sd
                    }
                })
                .collect(),
        }
    }

    fn outcomes(&self, _t: Stage) -> Option<&[(EdgeCosts, f64)]> {
        match self.model {
            CostModel::Normal => None,
            CostModel::TwoPoint => Some(&self.two_point),
        }
    }

    fn contribution_bound(&self) -> f64 {
        self.bound
    }

    fn successor_distribution(
        &self,
        _t: Stage,
        _v: &usize,
        action: &Edge,
    ) -> Option<Vec<Successor<usize>>> {
        Some(vec![Successor {
            state: action.to,
            probability: 1.0,
            mean_contribution: -self.mean_cost(action),
        }])
    }

    fn solve_relaxed(
        &self,
        t: Stage,
        starts: &[usize],
        outcomes: &[EdgeCosts],
    ) -> Option<Vec<f64>> {
        let n = self.graph.vertices;
        let mut value = vec![0.0; n + 1];
        for (k, w) in outcomes.iter().enumerate().rev() {
            let tau = t + k;
            let next: Vec<f64> = (0..=n)
                .map(|v| {
                    if v == 0 {
                        return 0.0;
                    }
                    self.actions(tau, &v)
                        .iter()
                        .map(|a| -self.edge_cost(a, w) + value[a.to])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            value = next;
        }
        Some(starts.iter().map(|&v| value[v]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve_inner, DualPenalty};
    use crate::mdp::{cumulative_reward, sample_trajectory, Trajectory};
    use crate::rng::seeded;

    /// One realization of the edge costs used in the hand-worked expansion
    /// steps.
    fn sample_costs(sp: &ShortestPath) -> EdgeCosts {
        sp.costs(&[
            (1, 2, 1.28),
            (2, 4, 0.80),
            (1, 3, 2.04),
            (3, 5, 1.80),
            (1, 4, 2.31),
            (4, 6, 1.50),
            (1, 5, 3.78),
            (5, 6, 1.50),
        ])
        .unwrap()
    }

    #[test]
    fn example_graph_shape() {
        let sp = ShortestPath::example1();
        assert_eq!(sp.horizon(), 3);
        let labels: Vec<String> = sp.actions(0, &1).iter().map(|e| e.to_string()).collect();
        assert_eq!(labels, ["e12", "e13", "e14", "e15"]);
        assert_eq!(sp.actions(2, &6), vec![Edge { from: 6, to: 6 }]);
        assert_eq!(sp.paths().len(), 4);
        let means = sp.costs(
            &sp.graph()
                .edges
                .iter()
                .map(|e| (e.from, e.to, e.mean))
                .collect::<Vec<_>>(),
        );
        let total = sp.path_cost(&[1, 2, 4, 6], &means.unwrap()).unwrap();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn hand_summed_two_edge_path() {
        let sp = ShortestPath::example1();
        let w = sample_costs(&sp);
        let traj = Trajectory::new(0, vec![w.clone(), w.clone(), w]);
        let actions = [sp.edge(1, 4), sp.edge(4, 6), sp.edge(6, 6)];
        let h = cumulative_reward(&sp, 0, &1, &actions, &traj).unwrap();
        assert!((h + 3.81).abs() < 1e-12);
    }

    #[test]
    fn relaxed_solver_matches_path_enumeration() {
        let sp = ShortestPath::example1();
        let mut rng = seeded(5);
        for _ in 0..200 {
            let traj = sample_trajectory(&sp, 0, &mut rng);
            // paths of two edges reach the sink one stage early and then stay
            let best = sp
                .paths()
                .iter()
                .map(|path| {
                    path.windows(2)
                        .enumerate()
                        .map(|(k, e)| sp.path_cost(e, &traj.outcomes[k]).unwrap())
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            let fast = sp.solve_relaxed(0, &[1], &traj.outcomes).unwrap()[0];
            let generic =
                solve_inner(&sp, 0, &1, &traj, &DualPenalty::Zero, 1000, &mut rng).unwrap();
            assert!((fast + best).abs() < 1e-12);
            assert!((generic.value + best).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_costs_stay_within_four_sigma() {
        let sp = ShortestPath::example1();
        let mut rng = seeded(1);
        let mut sum = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let w = sp.sample_outcome(0, &mut rng);
            for (c, e) in w.iter().zip(&sp.graph().edges) {
                assert!((c - e.mean).abs() <= 4.0 * e.sd);
            }
            sum += w[0];
        }
        // sd of the mean is 0.25 / sqrt(n)
        assert!((sum / n as f64 - 1.5).abs() < 4.0 * 0.25 / (n as f64).sqrt());
        assert_eq!(sp.contribution_bound(), 5.0);
    }

    #[test]
    fn two_point_model_is_enumerable() {
        let sp = ShortestPath::new(build_example1_graph(), CostModel::TwoPoint).unwrap();
        let law = sp.outcomes(0).unwrap();
        assert_eq!(law.len(), 256);
        let total: f64 = law.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = law.iter().map(|(w, p)| p * w[2]).sum();
        assert!((mean - 2.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        let mut g = build_example1_graph();
        g.edges.push(EdgeSpec {
            from: 6,
            to: 1,
            mean: 1.0,
            sd: 0.1,
        });
        assert!(ShortestPath::new(g, CostModel::Normal).is_err());
        let mut g = build_example1_graph();
        g.edges.retain(|e| e.to != 6 || e.from != 5);
        assert!(ShortestPath::new(g, CostModel::Normal).is_err());
    }
}
