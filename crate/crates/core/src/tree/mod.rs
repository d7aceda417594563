//! The partial decision tree.
//!
//! State nodes and state-action nodes live in two flat, append-only stores and
//! refer to each other by index. Every node corresponds to a unique path from
//! the root, so identical states reached along different paths are distinct
//! nodes. Dual statistics for not-yet-expanded actions are kept on the parent
//! state node, indexed by the action's position in the feasible-action list.

mod snapshot;

pub use snapshot::{SnapshotActionNode, SnapshotDual, SnapshotStateNode, TreeSnapshot};

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Stage, Successor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct StateNodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct ActionNodeId(pub usize);

impl fmt::Display for StateNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

impl fmt::Display for ActionNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "y{}", self.0)
    }
}

/// Smoothed dual upper bound `u` and lookahead count `l` of one action.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualStat {
    pub estimate: f64,
    pub lookaheads: u64,
}

#[derive(Debug, Clone)]
pub struct StateNode<S, A> {
    pub id: StateNodeId,
    pub parent: Option<ActionNodeId>,
    pub stage: Stage,
    pub state: S,
    /// `V-bar`, the value estimate used by the parent's backup.
    pub value: f64,
    /// `V-tilde`, the running average of child values.
    pub value_mean: f64,
    pub visits: u64,
    /// Number of rollouts evaluated from this node while it was a leaf.
    pub simulations: u64,
    /// Feasible actions in problem order; empty at the terminal stage.
    pub actions: Vec<A>,
    /// Expanded children in expansion order.
    pub children: Vec<ActionNodeId>,
    child_by_action: Vec<Option<ActionNodeId>>,
    /// Dual statistics per action index, populated on first candidacy and
    /// cleared when the action is expanded.
    pub dual: Vec<Option<DualStat>>,
}

impl<S, A: PartialEq> StateNode<S, A> {
    pub fn action_index(&self, action: &A) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }

    pub fn child_for(&self, index: usize) -> Option<ActionNodeId> {
        self.child_by_action.get(index).copied().flatten()
    }

    pub fn is_expanded(&self, index: usize) -> bool {
        self.child_for(index).is_some()
    }

    pub fn unexpanded(&self) -> Vec<usize> {
        (0..self.actions.len())
            .filter(|&i| !self.is_expanded(i))
            .collect()
    }

    pub fn is_expandable(&self) -> bool {
        self.children.len() < self.actions.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.actions.is_empty()
    }
}

/// How the successors of a state-action node are distributed.
#[derive(Debug, Clone, PartialEq)]
pub enum SuccessorLaw<S> {
    /// Known transition law with positive-probability support.
    Exact(Vec<Successor<S>>),
    /// Unknown support; successors are discovered by sampling outcomes and
    /// weighted by how often they were observed.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorEdge<S> {
    pub state: S,
    pub node: StateNodeId,
    /// Transition probability (exact law) or observation count (sampled law).
    pub weight: f64,
    /// Expected stage contribution conditional on this successor.
    pub mean_contribution: f64,
}

#[derive(Debug, Clone)]
pub struct ActionNode<S, A> {
    pub id: ActionNodeId,
    pub parent: StateNodeId,
    pub stage: Stage,
    pub action: A,
    pub action_index: usize,
    /// `Q-bar`.
    pub q_value: f64,
    pub visits: u64,
    pub successors: Vec<SuccessorEdge<S>>,
    pub law: SuccessorLaw<S>,
    /// Dual statistics the action carried when it was expanded.
    pub retired_dual: Option<DualStat>,
}

impl<S: PartialEq, A> ActionNode<S, A> {
    pub fn successor(&self, state: &S) -> Option<&SuccessorEdge<S>> {
        self.successors.iter().find(|e| &e.state == state)
    }

    pub fn is_expandable(&self) -> bool {
        match &self.law {
            SuccessorLaw::Exact(support) => self.successors.len() < support.len(),
            SuccessorLaw::Sampled => true,
        }
    }

    /// Positive-probability successors not yet in the tree (exact law only).
    pub fn unexpanded_support(&self) -> Vec<&Successor<S>> {
        match &self.law {
            SuccessorLaw::Exact(support) => support
                .iter()
                .filter(|s| self.successor(&s.state).is_none())
                .collect(),
            SuccessorLaw::Sampled => Vec::new(),
        }
    }
}

/// Double progressive widening schedule `ceil(C * v^alpha)` for both node types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WideningConfig {
    pub state_scale: f64,
    pub state_exponent: f64,
    pub action_scale: f64,
    pub action_exponent: f64,
}

impl Default for WideningConfig {
    fn default() -> Self {
        Self {
            state_scale: 1.0,
            state_exponent: 0.5,
            action_scale: 1.0,
            action_exponent: 0.5,
        }
    }
}

impl WideningConfig {
    pub fn validate(&self) -> Result<()> {
        check_widening(self.state_scale, self.state_exponent)?;
        check_widening(self.action_scale, self.action_exponent)
    }
}

fn check_widening(scale: f64, exponent: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::config(format!(
            "widening scale must be positive, got {scale}"
        )));
    }
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(Error::config(format!(
            "widening exponent must lie in (0, 1], got {exponent}"
        )));
    }
    Ok(())
}

/// True iff a node with `visits` prior visits is at a progressive widening
/// iteration, i.e. `ceil(C v^alpha) > ceil(C (v-1)^alpha)`. Always true at 0.
pub fn widening_due(visits: u64, scale: f64, exponent: f64) -> Result<bool> {
    check_widening(scale, exponent)?;
    if visits == 0 {
        return Ok(true);
    }
    let width = |v: u64| (scale * (v as f64).powf(exponent)).ceil();
    Ok(width(visits) > width(visits - 1))
}

#[derive(Debug, Clone)]
pub struct SearchTree<S, A> {
    /// Number of completed iterations `n`.
    pub iteration: u64,
    pub widening: WideningConfig,
    /// `C_lambda` in the mixture schedule `n / (n + C_lambda)`.
    pub mixture_scale: f64,
    states: Vec<StateNode<S, A>>,
    actions: Vec<ActionNode<S, A>>,
}

impl<S, A> SearchTree<S, A>
where
    S: Clone + PartialEq + fmt::Debug,
    A: Clone + PartialEq + fmt::Debug,
{
    pub fn new<P>(problem: &P, widening: WideningConfig, mixture_scale: f64) -> Result<Self>
    where
        P: Mdp<State = S, Action = A> + ?Sized,
    {
        widening.validate()?;
        if !(mixture_scale.is_finite() && mixture_scale > 0.0) {
            return Err(Error::config(format!(
                "mixture scale must be positive, got {mixture_scale}"
            )));
        }
        let mut tree = Self {
            iteration: 0,
            widening,
            mixture_scale,
            states: Vec::new(),
            actions: Vec::new(),
        };
        tree.push_state(problem, None, 0, problem.initial_state())?;
        Ok(tree)
    }

    pub fn root(&self) -> StateNodeId {
        StateNodeId(0)
    }

    pub fn state(&self, id: StateNodeId) -> &StateNode<S, A> {
        &self.states[id.0]
    }

    pub fn state_mut(&mut self, id: StateNodeId) -> &mut StateNode<S, A> {
        &mut self.states[id.0]
    }

    pub fn action(&self, id: ActionNodeId) -> &ActionNode<S, A> {
        &self.actions[id.0]
    }

    pub fn action_mut(&mut self, id: ActionNodeId) -> &mut ActionNode<S, A> {
        &mut self.actions[id.0]
    }

    pub fn state_nodes(&self) -> &[StateNode<S, A>] {
        &self.states
    }

    pub fn action_nodes(&self) -> &[ActionNode<S, A>] {
        &self.actions
    }

    /// `lambda^n = n / (n + C_lambda)`.
    pub fn mixture_weight(&self, n: u64) -> f64 {
        n as f64 / (n as f64 + self.mixture_scale)
    }

    fn push_state<P>(
        &mut self,
        problem: &P,
        parent: Option<ActionNodeId>,
        stage: Stage,
        state: S,
    ) -> Result<StateNodeId>
    where
        P: Mdp<State = S, Action = A> + ?Sized,
    {
        let actions = if stage < problem.horizon() {
            let actions = problem.actions(stage, &state);
            if actions.is_empty() {
                return Err(Error::contract(format!(
                    "no feasible action in state {state:?} at stage {stage}"
                )));
            }
            actions
        } else {
            Vec::new()
        };
        let id = StateNodeId(self.states.len());
        self.states.push(StateNode {
            id,
            parent,
            stage,
            state,
            value: 0.0,
            value_mean: 0.0,
            visits: 0,
            simulations: 0,
            child_by_action: vec![None; actions.len()],
            dual: vec![None; actions.len()],
            actions,
            children: Vec::new(),
        });
        Ok(id)
    }

    /// Expands `action` at `x`. The new node has no successors yet; the caller
    /// attaches one immediately.
    pub fn add_state_action_child<P>(
        &mut self,
        problem: &P,
        x: StateNodeId,
        action: &A,
    ) -> Result<ActionNodeId>
    where
        P: Mdp<State = S, Action = A> + ?Sized,
    {
        let node = &self.states[x.0];
        let index = node.action_index(action).ok_or_else(|| {
            Error::contract(format!("action {action:?} is not feasible at node {x}"))
        })?;
        if node.is_expanded(index) {
            return Err(Error::contract(format!(
                "action {action:?} is already expanded at node {x}"
            )));
        }
        let stage = node.stage;
        let law = match problem.successor_distribution(stage, &node.state, action) {
            Some(support) => SuccessorLaw::Exact(support),
            None => SuccessorLaw::Sampled,
        };
        let id = ActionNodeId(self.actions.len());
        let node = &mut self.states[x.0];
        let retired_dual = node.dual[index].take();
        node.child_by_action[index] = Some(id);
        node.children.push(id);
        self.actions.push(ActionNode {
            id,
            parent: x,
            stage,
            action: action.clone(),
            action_index: index,
            q_value: 0.0,
            visits: 0,
            successors: Vec::new(),
            law,
            retired_dual,
        });
        Ok(id)
    }

    /// Adds `state` as a successor of `y`, which must carry an exact law
    /// giving the state positive probability.
    pub fn add_state_child<P>(
        &mut self,
        problem: &P,
        y: ActionNodeId,
        state: S,
    ) -> Result<StateNodeId>
    where
        P: Mdp<State = S, Action = A> + ?Sized,
    {
        let node = &self.actions[y.0];
        if node.successor(&state).is_some() {
            return Err(Error::contract(format!(
                "state {state:?} is already a successor of {y}"
            )));
        }
        let (weight, mean_contribution) = match &node.law {
            SuccessorLaw::Exact(support) => {
                let s = support
                    .iter()
                    .find(|s| s.state == state && s.probability > 0.0)
                    .ok_or_else(|| {
                        Error::contract(format!(
                            "state {state:?} has zero probability after {y}"
                        ))
                    })?;
                (s.probability, s.mean_contribution)
            }
            SuccessorLaw::Sampled => {
                return Err(Error::contract(format!(
                    "{y} has a sampled successor law; use observe_successor"
                )))
            }
        };
        self.attach(problem, y, state, weight, mean_contribution)
    }

    /// Records one sampled transition of `y` (sampled law only). Returns the
    /// successor node and whether it was newly created.
    pub fn observe_successor<P>(
        &mut self,
        problem: &P,
        y: ActionNodeId,
        state: S,
        contribution: f64,
    ) -> Result<(StateNodeId, bool)>
    where
        P: Mdp<State = S, Action = A> + ?Sized,
    {
        let node = &mut self.actions[y.0];
        if !matches!(node.law, SuccessorLaw::Sampled) {
            return Err(Error::contract(format!(
                "{y} has an exact successor law; use add_state_child"
            )));
        }
        if let Some(edge) = node.successors.iter_mut().find(|e| e.state == state) {
            edge.weight += 1.0;
            edge.mean_contribution += (contribution - edge.mean_contribution) / edge.weight;
            return Ok((edge.node, false));
        }
        let id = self.attach(problem, y, state, 1.0, contribution)?;
        Ok((id, true))
    }

    fn attach<P>(
        &mut self,
        problem: &P,
        y: ActionNodeId,
        state: S,
        weight: f64,
        mean_contribution: f64,
    ) -> Result<StateNodeId>
    where
        P: Mdp<State = S, Action = A> + ?Sized,
    {
        let stage = self.actions[y.0].stage + 1;
        let id = self.push_state(problem, Some(y), stage, state.clone())?;
        self.actions[y.0].successors.push(SuccessorEdge {
            state,
            node: id,
            weight,
            mean_contribution,
        });
        Ok(id)
    }

    /// Largest `Q-bar` among expanded children of `x`.
    pub fn max_child_q(&self, x: StateNodeId) -> Option<f64> {
        self.states[x.0]
            .children
            .iter()
            .map(|&y| self.actions[y.0].q_value)
            .reduce(f64::max)
    }

    /// Expanded root action with the largest `Q-bar`; ties go to the action
    /// listed first by the problem.
    pub fn recommend(&self) -> Result<&A> {
        let root = &self.states[0];
        let best = root
            .children
            .iter()
            .map(|&y| &self.actions[y.0])
            .min_by(|a, b| {
                b.q_value
                    .total_cmp(&a.q_value)
                    .then(a.action_index.cmp(&b.action_index))
            })
            .ok_or_else(|| Error::NotReady("the root has no expanded action".into()))?;
        Ok(&best.action)
    }

    /// `(stage, state)` sequence from the root to `x`, with the action taken
    /// at each step.
    pub fn path_labels(&self, x: StateNodeId) -> Vec<(Stage, S, Option<A>)> {
        let mut out = Vec::new();
        let mut cur = x;
        let mut via: Option<A> = None;
        loop {
            let node = &self.states[cur.0];
            out.push((node.stage, node.state.clone(), via.take()));
            match node.parent {
                Some(y) => {
                    let a = &self.actions[y.0];
                    via = Some(a.action.clone());
                    cur = a.parent;
                }
                None => break,
            }
        }
        out.reverse();
        out
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot::from_tree(self)
    }
}
