//! Selection, candidate sampling and default rollout policies.

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dual::{dual_bounds_on_trajectory, DualPenalty, DEFAULT_STATE_BUDGET};
use crate::error::{Error, Result};
use crate::mdp::{sample_trajectory, Mdp, Policy, Stage};
use crate::tree::{ActionNodeId, SearchTree, StateNode, StateNodeId, SuccessorLaw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    Ucb1,
    EpsilonGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub kind: SelectionKind,
    /// Exploration probability, used by epsilon-greedy only.
    pub epsilon: f64,
    /// Multiplier on the UCB1 bonus.
    pub exploration_scale: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            kind: SelectionKind::Ucb1,
            epsilon: 0.1,
            exploration_scale: 1.0,
        }
    }
}

impl SelectionConfig {
    pub fn ucb1(exploration_scale: f64) -> Self {
        Self {
            kind: SelectionKind::Ucb1,
            exploration_scale,
            ..Self::default()
        }
    }

    pub fn epsilon_greedy(epsilon: f64) -> Self {
        Self {
            kind: SelectionKind::EpsilonGreedy,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SelectionKind::Ucb1 if !(self.exploration_scale > 0.0 && self.exploration_scale.is_finite()) => {
                Err(Error::config(format!(
                    "UCB1 exploration scale must be positive, got {}",
                    self.exploration_scale
                )))
            }
            SelectionKind::EpsilonGreedy if !(self.epsilon > 0.0 && self.epsilon <= 1.0) => {
                Err(Error::config(format!(
                    "epsilon must lie in (0, 1], got {}",
                    self.epsilon
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Children of `x` ordered by action index.
fn ordered_children<S, A>(tree: &SearchTree<S, A>, x: StateNodeId) -> Vec<ActionNodeId>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let mut children = tree.state(x).children.clone();
    children.sort_by_key(|&y| tree.action(y).action_index);
    children
}

/// Position of the first maximum, so ties go to the earliest entry.
pub(crate) fn first_argmax(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.into_iter().enumerate() {
        if i == 0 || s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// UCB1 scores of the children of `x`, in action-index order. Unvisited
/// children score `+inf`.
pub fn ucb1_scores<S, A>(
    tree: &SearchTree<S, A>,
    x: StateNodeId,
    exploration_scale: f64,
) -> Vec<(ActionNodeId, f64)>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let children = ordered_children(tree, x);
    let total: u64 = children.iter().map(|&y| tree.action(y).visits).sum();
    let log_total = (total.max(1) as f64).ln();
    children
        .into_iter()
        .map(|y| {
            let node = tree.action(y);
            let score = if node.visits == 0 {
                f64::INFINITY
            } else {
                node.q_value
                    + exploration_scale * (2.0 * log_total / node.visits as f64).sqrt()
            };
            (y, score)
        })
        .collect()
}

/// Exact selection law at `x`.
pub fn selection_probabilities<S, A>(
    tree: &SearchTree<S, A>,
    x: StateNodeId,
    config: &SelectionConfig,
) -> Result<Vec<(ActionNodeId, f64)>>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let children = ordered_children(tree, x);
    if children.is_empty() {
        return Err(Error::contract(format!("node {x} has no expanded action")));
    }
    let n = children.len() as f64;
    let probs = match config.kind {
        SelectionKind::Ucb1 => {
            let scores = ucb1_scores(tree, x, config.exploration_scale);
            let best = first_argmax(scores.iter().map(|s| s.1));
            (0..children.len())
                .map(|i| if i == best { 1.0 } else { 0.0 })
                .collect::<Vec<_>>()
        }
        SelectionKind::EpsilonGreedy => {
            let best = first_argmax(children.iter().map(|&y| tree.action(y).q_value));
            (0..children.len())
                .map(|i| {
                    let explore = config.epsilon / n;
                    if i == best {
                        1.0 - config.epsilon + explore
                    } else {
                        explore
                    }
                })
                .collect()
        }
    };
    Ok(children.into_iter().zip(probs).collect())
}

/// Picks an expanded child of `x` with the selection policy.
pub fn select_action<S, A>(
    tree: &SearchTree<S, A>,
    x: StateNodeId,
    config: &SelectionConfig,
    rng: &mut dyn RngCore,
) -> Result<ActionNodeId>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let children = ordered_children(tree, x);
    if children.is_empty() {
        return Err(Error::contract(format!("node {x} has no expanded action")));
    }
    match config.kind {
        SelectionKind::Ucb1 => {
            let scores = ucb1_scores(tree, x, config.exploration_scale);
            Ok(scores[first_argmax(scores.iter().map(|s| s.1))].0)
        }
        SelectionKind::EpsilonGreedy => {
            if rng.random::<f64>() < config.epsilon {
                Ok(children[rng.random_range(0..children.len())])
            } else {
                let best = first_argmax(children.iter().map(|&y| tree.action(y).q_value));
                Ok(children[best])
            }
        }
    }
}

/// Exact law of [`select_successor`]: transition probabilities (or observation
/// counts) renormalized over the expanded successors.
pub fn successor_probabilities<S, A>(
    tree: &SearchTree<S, A>,
    y: ActionNodeId,
) -> Vec<(StateNodeId, f64)>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let edges = &tree.action(y).successors;
    let total: f64 = edges.iter().map(|e| e.weight).sum();
    edges.iter().map(|e| (e.node, e.weight / total)).collect()
}

pub fn select_successor<S, A>(
    tree: &SearchTree<S, A>,
    y: ActionNodeId,
    rng: &mut dyn RngCore,
) -> Result<StateNodeId>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let edges = &tree.action(y).successors;
    if edges.is_empty() {
        return Err(Error::contract(format!("{y} has no expanded successor")));
    }
    Ok(edges[weighted_index(edges.iter().map(|e| e.weight), rng)].node)
}

/// Samples an index with probability proportional to `weights`.
pub(crate) fn weighted_index(
    weights: impl Iterator<Item = f64> + Clone,
    rng: &mut dyn RngCore,
) -> usize {
    let total: f64 = weights.clone().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples an unexpanded successor of `y` proportional to its transition
/// probability (exact law only).
pub fn sample_unexpanded_successor<S, A>(
    tree: &SearchTree<S, A>,
    y: ActionNodeId,
    rng: &mut dyn RngCore,
) -> Result<S>
where
    S: Clone + PartialEq + std::fmt::Debug,
    A: Clone + PartialEq + std::fmt::Debug,
{
    let node = tree.action(y);
    if !matches!(node.law, SuccessorLaw::Exact(_)) {
        return Err(Error::contract(format!("{y} has no enumerable successor law")));
    }
    let support = node.unexpanded_support();
    if support.is_empty() {
        return Err(Error::contract(format!("{y} is fully expanded")));
    }
    let i = weighted_index(support.iter().map(|s| s.probability), rng);
    Ok(support[i].state.clone())
}

/// Number of unexpanded actions drawn per expansion consideration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CandidateConfig {
    /// `None` uses every unexpanded action when at most 16 actions are
    /// feasible and 8 otherwise.
    pub k: Option<usize>,
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        match self.k {
            Some(0) => Err(Error::config("candidate count k must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn count_for(&self, feasible: usize) -> usize {
        match self.k {
            Some(k) => k,
            None if feasible <= 16 => feasible,
            None => 8,
        }
    }
}

/// Draws `min(k, #unexpanded)` distinct unexpanded action indices uniformly
/// without replacement, returned in increasing order.
pub fn sample_candidates<S, A: PartialEq>(
    node: &StateNode<S, A>,
    config: &CandidateConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>> {
    let open = node.unexpanded();
    if open.is_empty() {
        return Err(Error::contract(format!("node {} is fully expanded", node.id)));
    }
    let k = config.count_for(node.actions.len());
    if k >= open.len() {
        return Ok(open);
    }
    let mut picked: Vec<usize> = index::sample(rng, open.len(), k)
        .into_iter()
        .map(|i| open[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Rolling-horizon default policy: sample a trajectory, solve the
/// deterministic problem for every feasible first action, and play the best.
#[derive(Debug, Clone, Copy)]
pub struct RollingHorizonPolicy {
    /// Trajectories averaged per decision.
    pub lookahead_samples: usize,
    pub state_budget: usize,
}

impl RollingHorizonPolicy {
    pub fn new(lookahead_samples: usize) -> Result<Self> {
        if lookahead_samples == 0 {
            return Err(Error::config("rolling-horizon policy needs at least one sample"));
        }
        Ok(Self {
            lookahead_samples,
            state_budget: DEFAULT_STATE_BUDGET,
        })
    }
}

impl Default for RollingHorizonPolicy {
    fn default() -> Self {
        Self {
            lookahead_samples: 1,
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

impl<P: Mdp + ?Sized> Policy<P> for RollingHorizonPolicy {
    fn decide(
        &self,
        problem: &P,
        t: Stage,
        state: &P::State,
        rng: &mut dyn RngCore,
    ) -> Result<P::Action> {
        let actions = problem.actions(t, state);
        if actions.len() == 1 {
            return Ok(actions[0].clone());
        }
        let mut totals = vec![0.0; actions.len()];
        for _ in 0..self.lookahead_samples {
            let traj = sample_trajectory(problem, t, rng);
            let values = dual_bounds_on_trajectory(
                problem,
                t,
                state,
                &actions,
                &traj,
                &DualPenalty::Zero,
                self.state_budget,
                rng,
            )?;
            for (acc, v) in totals.iter_mut().zip(values) {
                *acc += v;
            }
        }
        Ok(actions[first_argmax(totals)].clone())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandomPolicy;

impl<P: Mdp + ?Sized> Policy<P> for UniformRandomPolicy {
    fn decide(
        &self,
        problem: &P,
        t: Stage,
        state: &P::State,
        rng: &mut dyn RngCore,
    ) -> Result<P::Action> {
        let mut actions = problem.actions(t, state);
        if actions.is_empty() {
            return Err(Error::contract(format!(
                "no feasible action in state {state:?} at stage {t}"
            )));
        }
        let i = rng.random_range(0..actions.len());
        Ok(actions.swap_remove(i))
    }
}

/// Which default policy drives the simulation phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutKind {
    RollingHorizon { lookahead_samples: usize },
    UniformRandom,
}

impl Default for RolloutKind {
    fn default() -> Self {
        RolloutKind::RollingHorizon {
            lookahead_samples: 1,
        }
    }
}

pub fn default_rollout_policy<P: Mdp + ?Sized>(kind: RolloutKind) -> Result<Box<dyn Policy<P>>> {
    Ok(match kind {
        RolloutKind::RollingHorizon { lookahead_samples } => {
            Box::new(RollingHorizonPolicy::new(lookahead_samples)?)
        }
        RolloutKind::UniformRandom => Box::new(UniformRandomPolicy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::random_mdp::{generate_random_mdp, RandomMdp, RandomMdpSizes};
    use crate::rng::seeded;
    use crate::tree::WideningConfig;

    fn mdp() -> RandomMdp {
        generate_random_mdp(
            RandomMdpSizes {
                states: 4,
                actions: 4,
                outcomes: 3,
                horizon: 3,
            },
            21,
        )
        .unwrap()
    }

    fn tree_with_children(
        mdp: &RandomMdp,
        stats: &[(usize, f64, u64)],
    ) -> (SearchTree<usize, usize>, Vec<ActionNodeId>) {
        let mut tree = SearchTree::new(mdp, WideningConfig::default(), 100.0).unwrap();
        let root = tree.root();
        let ids = stats
            .iter()
            .map(|&(a, q, v)| {
                let y = tree.add_state_action_child(mdp, root, &a).unwrap();
                tree.action_mut(y).q_value = q;
                tree.action_mut(y).visits = v;
                y
            })
            .collect();
        (tree, ids)
    }

    #[test]
    fn ucb1_hand_example() {
        let mdp = mdp();
        let (tree, ids) = tree_with_children(&mdp, &[(0, 1.0, 3), (1, 0.5, 1)]);
        let scores = ucb1_scores(&tree, tree.root(), 1.0);
        let first = 1.0 + (2.0 * 4f64.ln() / 3.0).sqrt();
        let second = 0.5 + (2.0 * 4f64.ln()).sqrt();
        assert!((scores[0].1 - first).abs() < 1e-12);
        assert!((scores[1].1 - second).abs() < 1e-12);
        // printed to three decimals: 1.961 rounds up to 1.962 in the hand table
        assert!((scores[0].1 - 1.962).abs() < 1e-3);
        assert!((scores[1].1 - 2.165).abs() < 1e-3);
        let mut rng = seeded(0);
        let picked = select_action(&tree, tree.root(), &SelectionConfig::default(), &mut rng);
        assert_eq!(picked.unwrap(), ids[1]);
    }

    #[test]
    fn ucb1_prefers_unvisited_then_less_visited() {
        let mdp = mdp();
        let mut rng = seeded(0);
        let (tree, ids) = tree_with_children(&mdp, &[(2, 0.3, 5), (1, 0.3, 1)]);
        let picked = select_action(&tree, tree.root(), &SelectionConfig::default(), &mut rng);
        assert_eq!(picked.unwrap(), ids[1]);
        let (tree, ids) = tree_with_children(&mdp, &[(0, 9.0, 5), (3, -9.0, 0)]);
        let picked = select_action(&tree, tree.root(), &SelectionConfig::default(), &mut rng);
        assert_eq!(picked.unwrap(), ids[1]);
    }

    #[test]
    fn ties_go_to_the_lowest_action() {
        let mdp = mdp();
        let (tree, ids) = tree_with_children(&mdp, &[(3, 0.0, 0), (1, 0.0, 0)]);
        let mut rng = seeded(0);
        let picked = select_action(&tree, tree.root(), &SelectionConfig::default(), &mut rng);
        assert_eq!(picked.unwrap(), ids[1]);
    }

    #[test]
    fn no_children_is_a_contract_error() {
        let mdp = mdp();
        let tree = SearchTree::new(&mdp, WideningConfig::default(), 100.0).unwrap();
        let mut rng = seeded(0);
        let r = select_action(&tree, tree.root(), &SelectionConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn epsilon_greedy_exact_law() {
        let mdp = mdp();
        let (tree, ids) = tree_with_children(&mdp, &[(0, 0.1, 2), (1, 0.9, 2), (2, 0.4, 2)]);
        let cfg = SelectionConfig::epsilon_greedy(0.3);
        let probs = selection_probabilities(&tree, tree.root(), &cfg).unwrap();
        assert_eq!(probs[1].0, ids[1]);
        assert!((probs[1].1 - (0.7 + 0.1)).abs() < 1e-12);
        assert!((probs[0].1 - 0.1).abs() < 1e-12);
        assert!((probs[2].1 - 0.1).abs() < 1e-12);

        let n = 20_000;
        let mut rng = seeded(4);
        let hits = (0..n)
            .filter(|_| select_action(&tree, tree.root(), &cfg, &mut rng).unwrap() == ids[0])
            .count();
        let sigma = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.1).abs() < 4.0 * sigma);
    }

    #[test]
    fn bad_selection_configs_are_rejected() {
        assert!(SelectionConfig::epsilon_greedy(0.0).validate().is_err());
        assert!(SelectionConfig::epsilon_greedy(1.5).validate().is_err());
        assert!(SelectionConfig::ucb1(0.0).validate().is_err());
        assert!(SelectionConfig::epsilon_greedy(1.0).validate().is_ok());
    }

    #[test]
    fn candidate_pairs_are_uniform() {
        let mdp = mdp();
        let tree = SearchTree::new(&mdp, WideningConfig::default(), 100.0).unwrap();
        let node = tree.state(tree.root());
        let cfg = CandidateConfig { k: Some(2) };
        let mut rng = seeded(9);
        let n = 12_000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..n {
            let c = sample_candidates(node, &cfg, &mut rng).unwrap();
            assert_eq!(c.len(), 2);
            assert!(c[0] < c[1]);
            *counts.entry((c[0], c[1])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for &c in counts.values() {
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn candidates_skip_expanded_actions() {
        let mdp = mdp();
        let mut tree = SearchTree::new(&mdp, WideningConfig::default(), 100.0).unwrap();
        let root = tree.root();
        tree.add_state_action_child(&mdp, root, &1).unwrap();
        let mut rng = seeded(1);
        let all = sample_candidates(tree.state(root), &CandidateConfig::default(), &mut rng);
        assert_eq!(all.unwrap(), vec![0, 2, 3]);
        for _ in 0..50 {
            let c = sample_candidates(tree.state(root), &CandidateConfig { k: Some(2) }, &mut rng)
                .unwrap();
            assert!(!c.contains(&1));
        }
        assert_eq!(CandidateConfig::default().count_for(40), 8);
    }

    #[test]
    fn successor_law_is_renormalized_over_expanded() {
        let mdp = mdp();
        let mut tree = SearchTree::new(&mdp, WideningConfig::default(), 100.0).unwrap();
        let root = tree.root();
        let y = tree.add_state_action_child(&mdp, root, &0).unwrap();
        let support: Vec<_> = tree
            .action(y)
            .unexpanded_support()
            .iter()
            .map(|s| (s.state, s.probability))
            .collect();
        let x = tree.add_state_child(&mdp, y, support[0].0).unwrap();
        assert_eq!(successor_probabilities(&tree, y), vec![(x, 1.0)]);
        for &(s, _) in &support[1..] {
            tree.add_state_child(&mdp, y, s).unwrap();
        }
        let probs = successor_probabilities(&tree, y);
        for ((_, p), (_, q)) in probs.iter().zip(&support) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rolling_horizon_last_stage_is_greedy() {
        let mdp = mdp();
        let policy = RollingHorizonPolicy::default();
        let mut rng = seeded(12);
        let a = policy.decide(&mdp, 2, &1, &mut rng).unwrap();
        let mut replay = seeded(12);
        let w = mdp.sample_outcome(2, &mut replay);
        let best = (0..4)
            .map(|a| mdp.contribution(2, &1, &a, &w))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b })
            .0;
        assert_eq!(a, best);
        let mut again = seeded(12);
        assert_eq!(policy.decide(&mdp, 2, &1, &mut again).unwrap(), a);
    }
}
