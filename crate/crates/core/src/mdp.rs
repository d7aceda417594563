//! Finite-horizon MDP abstraction shared by the search engine, the exact
//! oracle and the benchmark problems.
//!
//! Decision epochs are `0..T`; stage `T` is terminal with value zero. The
//! outcome revealed after deciding at stage `t` is `W_{t+1}`, and its law is
//! queried through [`Mdp::sample_outcome`] / [`Mdp::outcomes`] with the
//! *decision* stage `t` as argument. Outcomes are independent across stages.
//!
//! The engine maximizes. Minimization problems negate their contributions.

use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;

use rand::RngCore;

use crate::error::{Error, Result};

/// Decision epoch index, `0 <= t <= T`.
pub type Stage = usize;

/// A successor state of a state-action pair together with its transition
/// probability and the expected stage contribution conditional on landing there.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor<S> {
    pub state: S,
    pub probability: f64,
    pub mean_contribution: f64,
}

pub trait Mdp: Send + Sync {
    type State: Clone + Eq + Hash + Debug + Send + Sync;
    type Action: Clone + Eq + Hash + Debug + Send + Sync;
    type Outcome: Clone + Debug + Send + Sync;

    fn horizon(&self) -> Stage;

    fn initial_state(&self) -> Self::State;

    /// Feasible actions in a stable order. Never empty for `t < T`.
    fn actions(&self, t: Stage, state: &Self::State) -> Vec<Self::Action>;

    fn transition(
        &self,
        t: Stage,
        state: &Self::State,
        action: &Self::Action,
        outcome: &Self::Outcome,
    ) -> Self::State;

    fn contribution(
        &self,
        t: Stage,
        state: &Self::State,
        action: &Self::Action,
        outcome: &Self::Outcome,
    ) -> f64;

    /// Draws `W_{t+1}`.
    fn sample_outcome(&self, t: Stage, rng: &mut dyn RngCore) -> Self::Outcome;

    /// Exact law of `W_{t+1}` when the outcome space is small enough to enumerate.
    fn outcomes(&self, _t: Stage) -> Option<&[(Self::Outcome, f64)]> {
        None
    }

    /// Upper bound on `|c_t(s, a, w)|`.
    fn contribution_bound(&self) -> f64;

    /// Exact successor law of `(s, a)` at stage `t`, grouping outcomes that
    /// lead to the same state. Problems whose outcomes cannot be enumerated
    /// may still override this when the successor law is known in closed form.
    fn successor_distribution(
        &self,
        t: Stage,
        state: &Self::State,
        action: &Self::Action,
    ) -> Option<Vec<Successor<Self::State>>> {
        let outcomes = self.outcomes(t)?;
        Some(group_outcomes(self, t, state, action, outcomes))
    }

    /// Optional specialized solver for the zero-penalty deterministic inner
    /// problem: for each start state at stage `t`, the best cumulative reward
    /// over `outcomes` (which hold `w_{t+1}, ..., w_T`).
    fn solve_relaxed(
        &self,
        _t: Stage,
        _starts: &[Self::State],
        _outcomes: &[Self::Outcome],
    ) -> Option<Vec<f64>> {
        None
    }
}

fn group_outcomes<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    action: &P::Action,
    outcomes: &[(P::Outcome, f64)],
) -> Vec<Successor<P::State>> {
    let mut index: HashMap<P::State, usize> = HashMap::new();
    let mut grouped: Vec<(P::State, f64, f64)> = Vec::new();
    for (w, p) in outcomes {
        if *p <= 0.0 {
            continue;
        }
        let next = problem.transition(t, state, action, w);
        let reward = problem.contribution(t, state, action, w);
        match index.get(&next) {
            Some(&i) => {
                grouped[i].1 += p;
                grouped[i].2 += p * reward;
            }
            None => {
                index.insert(next.clone(), grouped.len());
                grouped.push((next, *p, p * reward));
            }
        }
    }
    grouped
        .into_iter()
        .map(|(state, probability, weighted)| Successor {
            state,
            probability,
            mean_contribution: weighted / probability,
        })
        .collect()
}

/// A sampled exogenous sequence `(w_{t+1}, ..., w_T)` starting after stage `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<O> {
    pub start: Stage,
    pub outcomes: Vec<O>,
}

impl<O> Trajectory<O> {
    pub fn new(start: Stage, outcomes: Vec<O>) -> Self {
        Self { start, outcomes }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

impl<O: Clone> Trajectory<O> {
    /// The trajectory seen from stage `start + 1`.
    pub fn tail(&self) -> Trajectory<O> {
        Trajectory {
            start: self.start + 1,
            outcomes: self.outcomes.get(1..).unwrap_or(&[]).to_vec(),
        }
    }
}

pub fn sample_trajectory<P: Mdp + ?Sized>(
    problem: &P,
    start: Stage,
    rng: &mut dyn RngCore,
) -> Trajectory<P::Outcome> {
    let outcomes = (start..problem.horizon())
        .map(|t| problem.sample_outcome(t, rng))
        .collect();
    Trajectory { start, outcomes }
}

/// A (possibly randomized) operating policy `pi_t(s)`.
pub trait Policy<P: Mdp + ?Sized>: Send + Sync {
    fn decide(
        &self,
        problem: &P,
        t: Stage,
        state: &P::State,
        rng: &mut dyn RngCore,
    ) -> Result<P::Action>;
}

impl<P: Mdp + ?Sized, F> Policy<P> for F
where
    F: Fn(Stage, &P::State) -> P::Action + Send + Sync,
{
    fn decide(&self, _: &P, t: Stage, state: &P::State, _: &mut dyn RngCore) -> Result<P::Action> {
        Ok(self(t, state))
    }
}

fn check_trajectory<P: Mdp + ?Sized, O>(problem: &P, t: Stage, traj: &Trajectory<O>) -> Result<()> {
    if t > problem.horizon() {
        return Err(Error::contract(format!(
            "stage {t} is past the horizon {}",
            problem.horizon()
        )));
    }
    let expected = problem.horizon() - t;
    if traj.start != t || traj.len() != expected {
        return Err(Error::contract(format!(
            "trajectory starting at {} with {} outcomes does not cover stages {t}..{}",
            traj.start,
            traj.len(),
            problem.horizon()
        )));
    }
    Ok(())
}

/// `h_t(s, a, w)`: total contribution of a fixed action sequence along a fixed
/// outcome sequence.
pub fn cumulative_reward<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    actions: &[P::Action],
    traj: &Trajectory<P::Outcome>,
) -> Result<f64> {
    check_trajectory(problem, t, traj)?;
    if actions.len() != traj.len() {
        return Err(Error::contract(format!(
            "{} actions for {} remaining stages",
            actions.len(),
            traj.len()
        )));
    }
    let mut s = state.clone();
    let mut total = 0.0;
    for (i, (a, w)) in actions.iter().zip(&traj.outcomes).enumerate() {
        let tau = t + i;
        if !problem.actions(tau, &s).contains(a) {
            return Err(Error::contract(format!(
                "action {a:?} at step {i} (stage {tau}) is infeasible in state {s:?}"
            )));
        }
        total += problem.contribution(tau, &s, a, w);
        s = problem.transition(tau, &s, a, w);
    }
    Ok(total)
}

/// `h_t(s, pi, w)`: total contribution collected by following `policy`.
pub fn rollout_reward<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    policy: &dyn Policy<P>,
    traj: &Trajectory<P::Outcome>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    check_trajectory(problem, t, traj)?;
    let mut s = state.clone();
    let mut total = 0.0;
    for (i, w) in traj.outcomes.iter().enumerate() {
        let tau = t + i;
        let a = policy.decide(problem, tau, &s, rng)?;
        if !problem.actions(tau, &s).contains(&a) {
            return Err(Error::contract(format!(
                "policy chose infeasible action {a:?} at stage {tau} in state {s:?}"
            )));
        }
        total += problem.contribution(tau, &s, &a, w);
        s = problem.transition(tau, &s, &a, w);
    }
    Ok(total)
}
