//! The search loop.
//!
//! Each iteration descends from the root with the selection policy until it
//! either expands a new action at a state node (Case 1), adds a new successor
//! under a state-action node (Case 2), or reaches a leaf. The leaf is then
//! valued by one rollout of the default policy and the values along the path
//! are backed up.
//!
//! In the primal-dual variant a Case-1 consideration samples one outcome
//! trajectory, computes an information-relaxation bound for every candidate
//! action on it, folds it into the candidate's running estimate `u-bar`, and
//! expands the best candidate only if `u-bar > V-bar(x)`. Otherwise the
//! iteration keeps selecting below `x`. A node without any expanded action
//! always expands, since there would be nothing to select. The vanilla
//! variant expands a uniformly drawn candidate without computing bounds.

pub mod invariants;
pub mod trace;

pub use invariants::{InvariantKind, InvariantMonitor, Violation};
pub use trace::{
    DualSample, ExpansionDecision, IterationTrace, RootActionStat, SearchPath, TraceEvent,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dual::{dual_bounds_on_trajectory, smooth_dual_estimate, DualPenalty, DEFAULT_STATE_BUDGET};
use crate::error::{Error, Result};
use crate::mdp::{rollout_reward, sample_trajectory, Mdp, Policy, Trajectory};
use crate::policies::{
    default_rollout_policy, first_argmax, sample_candidates, sample_unexpanded_successor,
    select_action, select_successor, CandidateConfig, RolloutKind, SelectionConfig,
};
use crate::rng::{substream, Phase};
use crate::tree::{
    widening_due, ActionNodeId, DualStat, SearchTree, StateNodeId, SuccessorLaw, WideningConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PrimalDual,
    Vanilla,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::PrimalDual => "primal_dual",
            Variant::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "primal_dual" | "pd" => Ok(Variant::PrimalDual),
            "vanilla" => Ok(Variant::Vanilla),
            other => Err(Error::config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig<S> {
    pub variant: Variant,
    pub selection: SelectionConfig,
    pub candidates: CandidateConfig,
    pub penalty: DualPenalty<S>,
    pub widening: WideningConfig,
    /// `C_lambda`.
    pub mixture_scale: f64,
    pub rollout: RolloutKind,
    /// State budget of each inner (perfect-information) solve.
    pub state_budget: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Keep every iteration's trace; otherwise only the latest is kept.
    pub record_traces: bool,
}

impl<S> EngineConfig<S> {
    pub fn new(variant: Variant, iterations: u64, seed: u64) -> Self {
        Self {
            variant,
            selection: SelectionConfig::default(),
            candidates: CandidateConfig::default(),
            penalty: DualPenalty::Zero,
            widening: WideningConfig::default(),
            mixture_scale: 100.0,
            rollout: RolloutKind::default(),
            state_budget: DEFAULT_STATE_BUDGET,
            iterations,
            seed,
            record_traces: true,
        }
    }

    pub fn validate<P: Mdp<State = S> + ?Sized>(&self, problem: &P) -> Result<()> {
        self.selection.validate()?;
        self.candidates.validate()?;
        self.widening.validate()?;
        if !(self.mixture_scale.is_finite() && self.mixture_scale > 0.0) {
            return Err(Error::config(format!(
                "mixture scale must be positive, got {}",
                self.mixture_scale
            )));
        }
        if self.state_budget == 0 {
            return Err(Error::config("state budget must be positive"));
        }
        if let RolloutKind::RollingHorizon { lookahead_samples: 0 } = self.rollout {
            return Err(Error::config("rolling-horizon rollouts need at least one sample"));
        }
        self.penalty.validate(problem)
    }
}

/// Result of one Case-1 consideration.
#[derive(Debug, Clone, PartialEq)]
pub struct Case1Report {
    pub decision: ExpansionDecision,
    pub samples: Vec<DualSample>,
    /// The new state-action node and the successor attached under it.
    pub expansion: Option<(ActionNodeId, StateNodeId)>,
}

/// Case 1 at `x`: draws candidates and, for the primal-dual variant, one
/// lookahead trajectory shared by all of them.
pub fn expand_state_node<P: Mdp + ?Sized>(
    tree: &mut SearchTree<P::State, P::Action>,
    problem: &P,
    config: &EngineConfig<P::State>,
    x: StateNodeId,
    candidate_rng: &mut dyn RngCore,
    lookahead_rng: &mut dyn RngCore,
    successor_rng: &mut dyn RngCore,
) -> Result<Case1Report> {
    let candidates = sample_candidates(tree.state(x), &config.candidates, candidate_rng)?;
    match config.variant {
        Variant::Vanilla => {
            let node = tree.state(x);
            let index = candidates[candidate_rng.random_range(0..candidates.len())];
            let decision = ExpansionDecision {
                node: x,
                value_before: node.value,
                best_index: index,
                best_estimate: None,
                forced: node.children.is_empty(),
                expanded: true,
            };
            let expansion = expand_action(tree, problem, x, index, successor_rng)?;
            Ok(Case1Report {
                decision,
                samples: Vec::new(),
                expansion: Some(expansion),
            })
        }
        Variant::PrimalDual => {
            let traj = sample_trajectory(problem, tree.state(x).stage, lookahead_rng);
            expand_state_node_on(
                tree,
                problem,
                config,
                x,
                &candidates,
                &traj,
                lookahead_rng,
                successor_rng,
            )
        }
    }
}

/// The primal-dual Case 1 at `x` with given candidate indices and lookahead
/// trajectory (starting at the node's stage).
#[allow(clippy::too_many_arguments)]
pub fn expand_state_node_on<P: Mdp + ?Sized>(
    tree: &mut SearchTree<P::State, P::Action>,
    problem: &P,
    config: &EngineConfig<P::State>,
    x: StateNodeId,
    candidates: &[usize],
    traj: &Trajectory<P::Outcome>,
    inner_rng: &mut dyn RngCore,
    successor_rng: &mut dyn RngCore,
) -> Result<Case1Report> {
    let node = tree.state(x);
    if candidates.is_empty() {
        return Err(Error::contract(format!("no candidate to consider at {x}")));
    }
    for &i in candidates {
        if i >= node.actions.len() || node.is_expanded(i) {
            return Err(Error::contract(format!(
                "candidate {i} at {x} is not an unexpanded action"
            )));
        }
    }
    let actions: Vec<P::Action> = candidates.iter().map(|&i| node.actions[i].clone()).collect();
    let bounds = dual_bounds_on_trajectory(
        problem,
        node.stage,
        &node.state,
        &actions,
        traj,
        &config.penalty,
        config.state_budget,
        inner_rng,
    )?;
    let value_before = node.value;
    let forced = node.children.is_empty();

    let node = tree.state_mut(x);
    let mut samples = Vec::with_capacity(candidates.len());
    let mut estimates = Vec::with_capacity(candidates.len());
    for ((&i, &u), a) in candidates.iter().zip(&bounds).zip(&actions) {
        let stat = node.dual[i].get_or_insert(DualStat::default());
        stat.lookaheads += 1;
        stat.estimate = smooth_dual_estimate(stat.estimate, u, stat.lookaheads);
        estimates.push(stat.estimate);
        samples.push(DualSample {
            node: x,
            action_index: i,
            action: format!("{a:?}"),
            sample: u,
            estimate: stat.estimate,
            lookaheads: stat.lookaheads,
        });
    }
    let best = first_argmax(estimates.iter().copied());
    let expand = forced || estimates[best] > value_before;
    let expansion = if expand {
        Some(expand_action(tree, problem, x, candidates[best], successor_rng)?)
    } else {
        None
    };
    Ok(Case1Report {
        decision: ExpansionDecision {
            node: x,
            value_before,
            best_index: candidates[best],
            best_estimate: Some(estimates[best]),
            forced,
            expanded: expand,
        },
        samples,
        expansion,
    })
}

/// Adds the action with index `index` at `x` and one successor below it.
fn expand_action<P: Mdp + ?Sized>(
    tree: &mut SearchTree<P::State, P::Action>,
    problem: &P,
    x: StateNodeId,
    index: usize,
    rng: &mut dyn RngCore,
) -> Result<(ActionNodeId, StateNodeId)> {
    let action = tree.state(x).actions[index].clone();
    let y = tree.add_state_action_child(problem, x, &action)?;
    let (child, _) = expand_state_action_node(tree, problem, y, rng)?;
    Ok((y, child))
}

/// Case 2 at `y`. With an exact law, an unexpanded successor is drawn in
/// proportion to its probability. With a sampled law, one outcome is drawn;
/// the flag tells whether it led to a state not yet in the tree.
pub fn expand_state_action_node<P: Mdp + ?Sized>(
    tree: &mut SearchTree<P::State, P::Action>,
    problem: &P,
    y: ActionNodeId,
    rng: &mut dyn RngCore,
) -> Result<(StateNodeId, bool)> {
    match tree.action(y).law {
        SuccessorLaw::Exact(_) => {
            let state = sample_unexpanded_successor(tree, y, rng)?;
            Ok((tree.add_state_child(problem, y, state)?, true))
        }
        SuccessorLaw::Sampled => {
            let node = tree.action(y);
            let t = node.stage;
            let parent = &tree.state(node.parent).state;
            let w = problem.sample_outcome(t, rng);
            let next = problem.transition(t, parent, &node.action, &w);
            let r = problem.contribution(t, parent, &node.action, &w);
            tree.observe_successor(problem, y, next, r)
        }
    }
}

/// Values the leaf `x` with one rollout of `policy` (zero at the horizon).
/// While `x` has no expanded action its `V-tilde` and `V-bar` are the
/// running mean of its rollouts.
pub fn simulate<P: Mdp + ?Sized>(
    tree: &mut SearchTree<P::State, P::Action>,
    problem: &P,
    x: StateNodeId,
    policy: &dyn Policy<P>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let node = tree.state(x);
    let t = node.stage;
    let value = if t < problem.horizon() {
        let traj = sample_trajectory(problem, t, rng);
        rollout_reward(problem, t, &node.state, policy, &traj, rng)?
    } else {
        0.0
    };
    let node = tree.state_mut(x);
    node.simulations += 1;
    if node.children.is_empty() {
        node.value_mean += (value - node.value_mean) / node.simulations as f64;
        node.value = node.value_mean;
    }
    Ok(value)
}

/// Backs values up `path` at iteration `n`, leaf to root. Visit counts must
/// already include this iteration.
pub fn backpropagate<S, A>(tree: &mut SearchTree<S, A>, path: &SearchPath, n: u64) -> Result<()>
where
    S: Clone + PartialEq + fmt::Debug,
    A: Clone + PartialEq + fmt::Debug,
{
    if path.states.len() != path.actions.len() + 1 {
        return Err(Error::contract("a path alternates state and state-action nodes"));
    }
    let lambda = tree.mixture_weight(n);
    for k in (0..path.actions.len()).rev() {
        let (x, y, child) = (path.states[k], path.actions[k], path.states[k + 1]);
        let child_value = tree.state(child).value;
        let node = tree.action_mut(y);
        let edge = node
            .successors
            .iter()
            .find(|e| e.node == child)
            .ok_or_else(|| Error::contract(format!("{child} is not a successor of {y}")))?;
        if node.visits == 0 {
            return Err(Error::contract(format!("{y} is on the path but has no visit")));
        }
        let target = edge.mean_contribution + child_value;
        node.q_value += (target - node.q_value) / node.visits as f64;
        let q = node.q_value;
        let best = tree.max_child_q(x).expect("x has the child y");
        let node = tree.state_mut(x);
        if node.visits == 0 {
            return Err(Error::contract(format!("{x} is on the path but has no visit")));
        }
        node.value_mean += (q - node.value_mean) / node.visits as f64;
        node.value = (1.0 - lambda) * node.value_mean + lambda * best;
    }
    Ok(())
}

/// A search in progress.
pub struct Search<'p, P: Mdp + ?Sized> {
    problem: &'p P,
    config: EngineConfig<P::State>,
    tree: SearchTree<P::State, P::Action>,
    rollout: Box<dyn Policy<P>>,
    monitor: InvariantMonitor,
    traces: Vec<IterationTrace>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<S, A> {
    pub tree: SearchTree<S, A>,
    pub traces: Vec<IterationTrace>,
    pub violations: Vec<Violation>,
}

impl<S, A> SearchOutcome<S, A>
where
    S: Clone + PartialEq + fmt::Debug,
    A: Clone + PartialEq + fmt::Debug,
{
    pub fn recommend(&self) -> Result<&A> {
        self.tree.recommend()
    }
}

impl<'p, P: Mdp + ?Sized> Search<'p, P> {
    pub fn new(problem: &'p P, config: EngineConfig<P::State>) -> Result<Self> {
        config.validate(problem)?;
        let tree = SearchTree::new(problem, config.widening, config.mixture_scale)?;
        let rollout = default_rollout_policy::<P>(config.rollout)?;
        let monitor = InvariantMonitor::new(
            problem.horizon(),
            problem.contribution_bound(),
            config.variant == Variant::PrimalDual,
        );
        Ok(Self {
            problem,
            config,
            tree,
            rollout,
            monitor,
            traces: Vec::new(),
        })
    }

    /// Replaces the default rollout policy.
    pub fn with_rollout_policy(mut self, policy: Box<dyn Policy<P>>) -> Self {
        self.rollout = policy;
        self
    }

    pub fn tree(&self) -> &SearchTree<P::State, P::Action> {
        &self.tree
    }

    pub fn config(&self) -> &EngineConfig<P::State> {
        &self.config
    }

    pub fn traces(&self) -> &[IterationTrace] {
        &self.traces
    }

    pub fn violations(&self) -> &[Violation] {
        self.monitor.violations()
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<&IterationTrace> {
        let n = self.tree.iteration + 1;
        let seed = self.config.seed;
        let mut selection_rng = substream(seed, n, Phase::Selection);
        let mut candidate_rng = substream(seed, n, Phase::Candidates);
        let mut lookahead_rng = substream(seed, n, Phase::DualLookahead);
        let mut successor_rng = substream(seed, n, Phase::Successor);
        let mut rollout_rng = substream(seed, n, Phase::Rollout);
        let widening = self.config.widening;
        let tree = &mut self.tree;
        let problem = self.problem;

        let mut path = SearchPath::default();
        let mut events = Vec::new();
        let mut dual_samples = Vec::new();
        let mut decisions = Vec::new();
        let mut x = tree.root();
        loop {
            path.states.push(x);
            let before = tree.state(x).visits;
            tree.state_mut(x).visits += 1;
            let node = tree.state(x);
            if node.is_terminal() {
                break;
            }
            if node.is_expandable()
                && widening_due(before, widening.state_scale, widening.state_exponent)?
            {
                let report = expand_state_node(
                    tree,
                    problem,
                    &self.config,
                    x,
                    &mut candidate_rng,
                    &mut lookahead_rng,
                    &mut successor_rng,
                )?;
                dual_samples.extend(report.samples);
                decisions.push(report.decision);
                if let Some((y, child)) = report.expansion {
                    tree.action_mut(y).visits += 1;
                    tree.state_mut(child).visits += 1;
                    path.actions.push(y);
                    path.states.push(child);
                    events.push(TraceEvent::ExpandedAction);
                    break;
                }
                events.push(TraceEvent::ExpansionSkipped);
            }
            if tree.state(x).children.is_empty() {
                break;
            }
            let y = select_action(tree, x, &self.config.selection, &mut selection_rng)?;
            let before = tree.action(y).visits;
            tree.action_mut(y).visits += 1;
            path.actions.push(y);
            if tree.action(y).is_expandable()
                && widening_due(before, widening.action_scale, widening.action_exponent)?
            {
                let (child, created) =
                    expand_state_action_node(tree, problem, y, &mut successor_rng)?;
                if created {
                    tree.state_mut(child).visits += 1;
                    path.states.push(child);
                    events.push(TraceEvent::ExpandedSuccessor);
                    break;
                }
                x = child;
                continue;
            }
            x = select_successor(tree, y, &mut selection_rng)?;
        }

        let rollout_value = simulate(
            tree,
            problem,
            path.leaf(),
            self.rollout.as_ref(),
            &mut rollout_rng,
        )?;
        backpropagate(tree, &path, n)?;
        tree.iteration = n;
        if events.is_empty() {
            events.push(TraceEvent::RolloutOnly);
        }

        let root = tree.state(tree.root());
        let mut root_stats: Vec<RootActionStat> = root
            .children
            .iter()
            .map(|&y| {
                let a = tree.action(y);
                RootActionStat {
                    node: y,
                    action_index: a.action_index,
                    action: format!("{:?}", a.action),
                    q: a.q_value,
                    visits: a.visits,
                    u: a.retired_dual.map(|d| d.estimate),
                }
            })
            .collect();
        root_stats.sort_by_key(|s| s.action_index);
        let trace = IterationTrace {
            iteration: n,
            path,
            events,
            rollout_value,
            dual_samples,
            decisions,
            root_value: root.value,
            root: root_stats,
        };
        self.monitor.observe(tree, &trace);
        if !self.config.record_traces {
            self.traces.clear();
        }
        self.traces.push(trace);
        Ok(self.traces.last().expect("just pushed"))
    }

    /// Runs the remaining iterations of the configured budget.
    pub fn run(mut self) -> Result<SearchOutcome<P::State, P::Action>> {
        while self.tree.iteration < self.config.iterations {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> SearchOutcome<P::State, P::Action> {
        SearchOutcome {
            violations: self.monitor.violations().to_vec(),
            tree: self.tree,
            traces: self.traces,
        }
    }
}

/// Runs `config.iterations` iterations from a fresh root.
pub fn run<P: Mdp + ?Sized>(
    problem: &P,
    config: EngineConfig<P::State>,
) -> Result<SearchOutcome<P::State, P::Action>> {
    Search::new(problem, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Stage;
    use crate::problems::shortest_path::ShortestPath;
    use crate::rng::seeded;

    fn figure_costs(sp: &ShortestPath) -> Trajectory<Vec<f64>> {
        let w = sp
            .costs(&[
                (1, 2, 1.28),
                (2, 4, 0.80),
                (1, 3, 2.04),
                (3, 5, 1.80),
                (1, 4, 2.31),
                (4, 6, 1.50),
                (1, 5, 3.78),
                (5, 6, 1.50),
            ])
            .unwrap();
        Trajectory::new(0, vec![w.clone(), w.clone(), w])
    }

    #[test]
    fn example_one_expansion_steps() {
        let sp = ShortestPath::example1();
        let config = EngineConfig::new(Variant::PrimalDual, 0, 0);
        let mut tree = SearchTree::new(&sp, config.widening, config.mixture_scale).unwrap();
        let traj = figure_costs(&sp);
        let root = tree.root();
        let mut rng = seeded(1);

        // step 1: nothing expanded, the lowest-cost bound wins
        let all = tree.state(root).unexpanded();
        let step1 =
            expand_state_node_on(&mut tree, &sp, &config, root, &all, &traj, &mut rng, &mut seeded(2))
                .unwrap();
        let bounds: Vec<f64> = step1.samples.iter().map(|s| s.sample).collect();
        for (b, want) in bounds.iter().zip([-3.58, -5.34, -3.81, -5.28]) {
            assert!((b - want).abs() < 1e-12, "{bounds:?}");
        }
        assert!(step1.decision.forced);
        let (y12, _) = step1.expansion.unwrap();
        assert_eq!(tree.action(y12).action, sp.edge(1, 2));

        // step 2: the incumbent costs 3.97 and only e14 promises better
        tree.action_mut(y12).q_value = -3.97;
        tree.state_mut(root).value = -3.97;
        let open = tree.state(root).unexpanded();
        let step2 =
            expand_state_node_on(&mut tree, &sp, &config, root, &open, &traj, &mut rng, &mut seeded(3))
                .unwrap();
        assert!(!step2.decision.forced);
        let (y14, _) = step2.expansion.unwrap();
        assert_eq!(tree.action(y14).action, sp.edge(1, 4));
        assert!((tree.action(y14).retired_dual.unwrap().estimate + 3.81).abs() < 1e-12);

        // step 3: 5.34 and 5.28 are no better than the incumbent
        let open = tree.state(root).unexpanded();
        let step3 =
            expand_state_node_on(&mut tree, &sp, &config, root, &open, &traj, &mut rng, &mut seeded(4))
                .unwrap();
        assert!(step3.expansion.is_none());
        assert!(!step3.decision.expanded);
        assert_eq!(tree.state(root).children.len(), 2);
        assert_eq!(tree.state(root).dual[1].unwrap().lookaheads, 3);
    }

    /// One state per stage; action `a` earns `a` and the outcome picks the
    /// next state.
    struct Branch {
        horizon: Stage,
        law: Vec<(usize, f64)>,
    }

    impl Mdp for Branch {
        type State = usize;
        type Action = usize;
        type Outcome = usize;

        fn horizon(&self) -> Stage {
            self.horizon
        }
        fn initial_state(&self) -> usize {
            0
        }
        fn actions(&self, _: Stage, _: &usize) -> Vec<usize> {
            vec![0, 1]
        }
        fn transition(&self, _: Stage, _: &usize, _: &usize, w: &usize) -> usize {
            *w
        }
        fn contribution(&self, _: Stage, _: &usize, a: &usize, _: &usize) -> f64 {
            *a as f64
        }
        fn sample_outcome(&self, _: Stage, rng: &mut dyn RngCore) -> usize {
            if rng.random::<f64>() < self.law[0].1 {
                self.law[0].0
            } else {
                self.law[1].0
            }
        }
        fn outcomes(&self, _: Stage) -> Option<&[(usize, f64)]> {
            Some(&self.law)
        }
        fn contribution_bound(&self) -> f64 {
            1.0
        }
    }

    fn branch(horizon: Stage) -> Branch {
        Branch {
            horizon,
            law: vec![(0, 0.9), (1, 0.1)],
        }
    }

    #[test]
    fn case_two_follows_transition_probabilities() {
        let problem = branch(2);
        let mut tree = SearchTree::new(&problem, WideningConfig::default(), 100.0).unwrap();
        let y = tree.add_state_action_child(&problem, tree.root(), &0).unwrap();
        let reps = 4000;
        let mut first = 0;
        for i in 0..reps {
            let mut t = tree.clone();
            let (child, created) =
                expand_state_action_node(&mut t, &problem, y, &mut seeded(i)).unwrap();
            assert!(created);
            if t.state(child).state == 0 {
                first += 1;
            }
        }
        let p = first as f64 / reps as f64;
        let sd = (0.9 * 0.1 / reps as f64).sqrt();
        assert!((p - 0.9).abs() < 3.0 * sd, "{p}");

        let (c0, _) = expand_state_action_node(&mut tree, &problem, y, &mut seeded(0)).unwrap();
        let (c1, _) = expand_state_action_node(&mut tree, &problem, y, &mut seeded(0)).unwrap();
        assert_ne!(tree.state(c0).state, tree.state(c1).state);
        assert!(expand_state_action_node(&mut tree, &problem, y, &mut seeded(0)).is_err());
    }

    fn one_step_path(
        problem: &Branch,
        mixture_scale: f64,
    ) -> (SearchTree<usize, usize>, SearchPath) {
        let mut tree = SearchTree::new(problem, WideningConfig::default(), mixture_scale).unwrap();
        let root = tree.root();
        let y = tree.add_state_action_child(problem, root, &0).unwrap();
        let x = tree.add_state_child(problem, y, 0).unwrap();
        let path = SearchPath {
            states: vec![root, x],
            actions: vec![y],
        };
        (tree, path)
    }

    #[test]
    fn backup_running_means() {
        let problem = branch(3);
        let (mut tree, path) = one_step_path(&problem, 100.0);
        let (root, y, x) = (path.states[0], path.actions[0], path.states[1]);
        let visit = |tree: &mut SearchTree<usize, usize>| {
            tree.state_mut(root).visits += 1;
            tree.action_mut(y).visits += 1;
            tree.state_mut(x).visits += 1;
        };
        visit(&mut tree);
        tree.state_mut(x).value = 2.0;
        backpropagate(&mut tree, &path, 1).unwrap();
        // action 0 earns nothing, so Q is the child value itself
        assert_eq!(tree.action(y).q_value, 2.0);
        visit(&mut tree);
        tree.state_mut(x).value = 4.0;
        backpropagate(&mut tree, &path, 2).unwrap();
        assert_eq!(tree.action(y).q_value, 3.0);
        let root_node = tree.state(root);
        assert_eq!(root_node.value_mean, 2.5);
        let lambda = 2.0 / 102.0;
        assert!((root_node.value - ((1.0 - lambda) * 2.5 + lambda * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn backup_with_mixture_near_one_is_a_max() {
        let problem = branch(3);
        let (mut tree, path) = one_step_path(&problem, 1e-12);
        let root = path.states[0];
        let y1 = tree.add_state_action_child(&problem, root, &1).unwrap();
        tree.action_mut(y1).q_value = 5.0;
        tree.state_mut(root).visits = 1;
        tree.action_mut(path.actions[0]).visits = 1;
        tree.state_mut(path.states[1]).visits = 1;
        tree.state_mut(path.states[1]).value = 1.0;
        backpropagate(&mut tree, &path, 1).unwrap();
        assert!((tree.state(root).value - 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_leave_the_bare_root() {
        let sp = ShortestPath::example1();
        let out = run(&sp, EngineConfig::new(Variant::PrimalDual, 0, 0)).unwrap();
        assert_eq!(out.tree.state_nodes().len(), 1);
        assert!(out.tree.action_nodes().is_empty());
        assert!(out.traces.is_empty());
        assert!(out.recommend().is_err());
    }

    #[test]
    fn one_stage_problems_end_at_terminal_leaves() {
        let problem = branch(1);
        let out = run(&problem, EngineConfig::new(Variant::PrimalDual, 50, 3)).unwrap();
        for t in &out.traces {
            let leaf = out.tree.state(t.path.leaf());
            assert_eq!(leaf.stage, 1);
            assert_eq!(t.rollout_value, 0.0);
        }
        assert!(out.violations.is_empty());
        assert_eq!(*out.recommend().unwrap(), 1);
    }

    #[test]
    fn first_iteration_expands_the_root() {
        let sp = ShortestPath::example1();
        let out = run(&sp, EngineConfig::new(Variant::PrimalDual, 1, 11)).unwrap();
        let t = &out.traces[0];
        assert_eq!(t.events, vec![TraceEvent::ExpandedAction]);
        assert_eq!(t.dual_samples.len(), 4);
        assert!(t.decisions[0].forced);
        assert_eq!(out.tree.state(out.tree.root()).children.len(), 1);
        assert_eq!(t.path.states.len(), 2);
    }

    #[test]
    fn runs_are_reproducible() {
        let sp = ShortestPath::example1();
        for variant in [Variant::PrimalDual, Variant::Vanilla] {
            let a = run(&sp, EngineConfig::new(variant, 300, 5)).unwrap();
            let b = run(&sp, EngineConfig::new(variant, 300, 5)).unwrap();
            assert_eq!(a.traces, b.traces);
            assert_eq!(a.tree.snapshot().to_text(), b.tree.snapshot().to_text());
            let c = run(&sp, EngineConfig::new(variant, 300, 6)).unwrap();
            assert_ne!(a.traces, c.traces);
        }
    }

    #[test]
    fn example_one_converges_to_the_middle_path() {
        let sp = ShortestPath::example1();
        let out = run(&sp, EngineConfig::new(Variant::PrimalDual, 5000, 1)).unwrap();
        assert!(out.violations.is_empty(), "{:?}", &out.violations[..1]);
        assert_eq!(*out.recommend().unwrap(), sp.edge(1, 4));
        let root = out.tree.state(out.tree.root());
        assert!((root.value + 3.5).abs() < 0.2, "{}", root.value);
    }

    #[test]
    fn vanilla_takes_no_lookaheads() {
        let sp = ShortestPath::example1();
        let out = run(&sp, EngineConfig::new(Variant::Vanilla, 500, 2)).unwrap();
        assert!(out.traces.iter().all(|t| t.dual_samples.is_empty()));
        assert!(out.violations.is_empty());
        assert_eq!(out.tree.state(out.tree.root()).children.len(), 4);
    }

    #[test]
    fn single_path_per_iteration() {
        let problem = branch(4);
        let mut search = Search::new(&problem, EngineConfig::new(Variant::PrimalDual, 200, 9)).unwrap();
        for _ in 0..200 {
            let before: u64 = search
                .tree()
                .state(search.tree().root())
                .children
                .iter()
                .map(|&y| search.tree().action(y).visits)
                .sum();
            search.step().unwrap();
            let after: u64 = search
                .tree()
                .state(search.tree().root())
                .children
                .iter()
                .map(|&y| search.tree().action(y).visits)
                .sum();
            assert!(after - before <= 1);
        }
        assert!(search.violations().is_empty());
    }

    #[test]
    fn variant_names() {
        assert_eq!("primal-dual".parse::<Variant>().unwrap(), Variant::PrimalDual);
        assert_eq!("vanilla".parse::<Variant>().unwrap(), Variant::Vanilla);
        assert!("greedy".parse::<Variant>().is_err());
    }
}
