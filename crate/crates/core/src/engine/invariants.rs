//! Run-time checks of the backpropagation invariants.

use std::fmt;

use serde::Serialize;

use super::trace::IterationTrace;
use crate::mdp::Stage;
use crate::tree::SearchTree;

const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    /// An action was expanded although its `u-bar` did not beat `V-bar`.
    ExpansionGuard,
    /// `V-bar` left the interval spanned by `V-tilde` and the best `Q-bar`.
    ConvexMixture,
    /// A value estimate exceeded `(T - t) c_max` in magnitude.
    ValueBound,
    /// Visit counters or the iteration count did not advance by exactly the
    /// traversed path.
    CounterMonotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub iteration: u64,
    pub kind: InvariantKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iteration {}: {:?}: {}", self.iteration, self.kind, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct InvariantMonitor {
    horizon: Stage,
    contribution_bound: f64,
    check_guard: bool,
    state_visits: Vec<u64>,
    action_visits: Vec<u64>,
    iteration: u64,
    violations: Vec<Violation>,
}

impl InvariantMonitor {
    /// `check_guard` enables the expansion-guard check, which only applies to
    /// the primal-dual variant.
    pub fn new(horizon: Stage, contribution_bound: f64, check_guard: bool) -> Self {
        Self {
            horizon,
            contribution_bound,
            check_guard,
            state_visits: Vec::new(),
            action_visits: Vec::new(),
            iteration: 0,
            violations: Vec::new(),
        }
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn flag(&mut self, iteration: u64, kind: InvariantKind, detail: String) {
        self.violations.push(Violation {
            iteration,
            kind,
            detail,
        });
    }

    fn bound(&self, stage: Stage) -> f64 {
        let b = self.horizon.saturating_sub(stage) as f64 * self.contribution_bound;
        b + TOLERANCE * (1.0 + b)
    }

    /// Checks the tree right after the iteration recorded in `trace`.
    pub fn observe<S, A>(&mut self, tree: &SearchTree<S, A>, trace: &IterationTrace)
    where
        S: Clone + PartialEq + fmt::Debug,
        A: Clone + PartialEq + fmt::Debug,
    {
        let n = trace.iteration;
        if tree.iteration != self.iteration + 1 || n != tree.iteration {
            self.flag(
                n,
                InvariantKind::CounterMonotonicity,
                format!(
                    "iteration count went from {} to {} (trace says {n})",
                    self.iteration, tree.iteration
                ),
            );
        }
        self.iteration = tree.iteration;

        if self.check_guard {
            for d in &trace.decisions {
                if d.expanded && !d.forced {
                    let ok = d.best_estimate.is_some_and(|u| u > d.value_before);
                    if !ok {
                        self.flag(
                            n,
                            InvariantKind::ExpansionGuard,
                            format!(
                                "node {} expanded action {} with u {:?} against V {}",
                                d.node, d.best_index, d.best_estimate, d.value_before
                            ),
                        );
                    }
                }
                if d.forced && !tree.state(d.node).children.is_empty() && !d.expanded {
                    self.flag(
                        n,
                        InvariantKind::ExpansionGuard,
                        format!("forced consideration at {} did not expand", d.node),
                    );
                }
            }
        }

        self.check_counters(tree, trace);

        for &x in &trace.path.states {
            let node = tree.state(x);
            let b = self.bound(node.stage);
            if node.value.abs() > b || node.value_mean.abs() > b {
                self.flag(
                    n,
                    InvariantKind::ValueBound,
                    format!(
                        "node {x} at stage {} has V {} and V~ {} beyond {b}",
                        node.stage, node.value, node.value_mean
                    ),
                );
            }
            if let Some(best) = tree.max_child_q(x) {
                let lo = node.value_mean.min(best);
                let hi = node.value_mean.max(best);
                let tol = TOLERANCE * (1.0 + hi.abs().max(lo.abs()));
                if node.value < lo - tol || node.value > hi + tol {
                    self.flag(
                        n,
                        InvariantKind::ConvexMixture,
                        format!("node {x}: V {} outside [{lo}, {hi}]", node.value),
                    );
                }
            }
        }
        for &y in &trace.path.actions {
            let node = tree.action(y);
            let b = self.bound(node.stage);
            if node.q_value.abs() > b {
                self.flag(
                    n,
                    InvariantKind::ValueBound,
                    format!("node {y} at stage {} has Q {} beyond {b}", node.stage, node.q_value),
                );
            }
        }
    }

    fn check_counters<S, A>(&mut self, tree: &SearchTree<S, A>, trace: &IterationTrace)
    where
        S: Clone + PartialEq + fmt::Debug,
        A: Clone + PartialEq + fmt::Debug,
    {
        let n = trace.iteration;
        let mut expected_states = self.state_visits.clone();
        expected_states.resize(tree.state_nodes().len(), 0);
        for &x in &trace.path.states {
            expected_states[x.0] += 1;
        }
        let mut expected_actions = self.action_visits.clone();
        expected_actions.resize(tree.action_nodes().len(), 0);
        for &y in &trace.path.actions {
            expected_actions[y.0] += 1;
        }
        let mut problems = Vec::new();
        for (node, &want) in tree.state_nodes().iter().zip(&expected_states) {
            if node.visits != want {
                problems.push(format!("{} has {} visits, expected {want}", node.id, node.visits));
            }
        }
        for (node, &want) in tree.action_nodes().iter().zip(&expected_actions) {
            if node.visits != want {
                problems.push(format!("{} has {} visits, expected {want}", node.id, node.visits));
            }
        }
        for p in problems {
            self.flag(n, InvariantKind::CounterMonotonicity, p);
        }
        self.state_visits = tree.state_nodes().iter().map(|s| s.visits).collect();
        self.action_visits = tree.action_nodes().iter().map(|a| a.visits).collect();
    }
}
