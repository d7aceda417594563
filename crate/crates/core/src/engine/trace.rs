use serde::Serialize;

use crate::tree::{ActionNodeId, StateNodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    ExpandedAction,
    ExpansionSkipped,
    ExpandedSuccessor,
    RolloutOnly,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::ExpandedAction => "expanded_action",
            TraceEvent::ExpansionSkipped => "expansion_skipped",
            TraceEvent::ExpandedSuccessor => "expanded_successor",
            TraceEvent::RolloutOnly => "rollout_only",
        }
    }
}

/// Nodes visited by one iteration, root first. `states` has one more entry
/// than `actions`; `actions[k]` sits between `states[k]` and `states[k + 1]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SearchPath {
    pub states: Vec<StateNodeId>,
    pub actions: Vec<ActionNodeId>,
}

impl SearchPath {
    pub fn leaf(&self) -> StateNodeId {
        *self.states.last().expect("a path contains the root")
    }
}

/// One lookahead taken for a candidate during a Case-1 consideration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSample {
    pub node: StateNodeId,
    pub action_index: usize,
    pub action: String,
    /// The sampled bound `u-hat`.
    pub sample: f64,
    /// Smoothed `u-bar` after this sample.
    pub estimate: f64,
    pub lookaheads: u64,
}

/// Outcome of one Case-1 consideration at `node`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionDecision {
    pub node: StateNodeId,
    /// `V-bar(x)` before the consideration.
    pub value_before: f64,
    /// Best candidate and its `u-bar` (primal-dual only).
    pub best_index: usize,
    pub best_estimate: Option<f64>,
    /// True when the node had no expanded action, so expansion was forced.
    pub forced: bool,
    pub expanded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootActionStat {
    pub node: ActionNodeId,
    pub action_index: usize,
    pub action: String,
    pub q: f64,
    pub visits: u64,
    /// Last smoothed dual estimate the action carried.
    pub u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub iteration: u64,
    pub path: SearchPath,
    pub events: Vec<TraceEvent>,
    pub rollout_value: f64,
    pub dual_samples: Vec<DualSample>,
    pub decisions: Vec<ExpansionDecision>,
    pub root_value: f64,
    /// Expanded root actions after backpropagation, in action order.
    pub root: Vec<RootActionStat>,
}

impl IterationTrace {
    /// The event that best summarizes the iteration.
    pub fn primary_event(&self) -> TraceEvent {
        for e in [
            TraceEvent::ExpandedAction,
            TraceEvent::ExpandedSuccessor,
            TraceEvent::ExpansionSkipped,
        ] {
            if self.events.contains(&e) {
                return e;
            }
        }
        TraceEvent::RolloutOnly
    }
}
