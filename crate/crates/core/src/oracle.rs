//! Exact finite-horizon solvers for small instances.
//!
//! Everything here works on the reachable state graph built from
//! [`Mdp::successor_distribution`], so a problem qualifies as soon as its
//! successor law is known in closed form, even when its raw outcome space is
//! continuous.

use std::collections::HashMap;

use rand::RngCore;

use crate::dual::{dual_bounds_on_trajectory, DualPenalty, DEFAULT_STATE_BUDGET};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, Stage, Trajectory};
use crate::rng::seeded;

/// Two optimal-action values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    /// Cap on reachable `(stage, state)` pairs.
    pub state_budget: usize,
    /// Cap on enumerated outcome trajectories.
    pub trajectory_budget: usize,
    /// Cap on trajectory-conditioned states per inner solve.
    pub inner_budget: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            state_budget: 2_000_000,
            trajectory_budget: 1_000_000,
            inner_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

/// `V_t(s)` and `Q_t(s, a)` over the reachable states, for the optimal policy
/// or for a fixed one.
#[derive(Debug, Clone)]
pub struct ValueTable<S, A> {
    horizon: Stage,
    start: Stage,
    states: Vec<Vec<S>>,
    index: Vec<HashMap<S, usize>>,
    actions: Vec<Vec<Vec<A>>>,
    values: Vec<Vec<f64>>,
    q: Vec<Vec<Vec<f64>>>,
}

impl<S, A> ValueTable<S, A>
where
    S: Clone + Eq + std::hash::Hash,
    A: Clone + PartialEq,
{
    pub fn horizon(&self) -> Stage {
        self.horizon
    }

    fn slot(&self, t: Stage, state: &S) -> Option<(usize, usize)> {
        let k = t.checked_sub(self.start)?;
        let i = *self.index.get(k)?.get(state)?;
        Some((k, i))
    }

    /// States reachable at stage `t`, in discovery order.
    pub fn states(&self, t: Stage) -> &[S] {
        t.checked_sub(self.start)
            .and_then(|k| self.states.get(k))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn value(&self, t: Stage, state: &S) -> Option<f64> {
        let (k, i) = self.slot(t, state)?;
        Some(self.values[k][i])
    }

    /// `(action, Q)` pairs in problem order; empty at the horizon.
    pub fn q_values(&self, t: Stage, state: &S) -> Option<Vec<(A, f64)>> {
        let (k, i) = self.slot(t, state)?;
        if k >= self.q.len() {
            return Some(Vec::new());
        }
        Some(
            self.actions[k][i]
                .iter()
                .cloned()
                .zip(self.q[k][i].iter().copied())
                .collect(),
        )
    }

    pub fn q(&self, t: Stage, state: &S, action: &A) -> Option<f64> {
        let (k, i) = self.slot(t, state)?;
        let j = self.actions.get(k)?[i].iter().position(|a| a == action)?;
        Some(self.q[k][i][j])
    }

    /// Actions whose `Q` is within [`TIE_TOLERANCE`] of the state's value.
    pub fn optimal_actions(&self, t: Stage, state: &S) -> Vec<A> {
        let Some((k, i)) = self.slot(t, state) else {
            return Vec::new();
        };
        if k >= self.q.len() {
            return Vec::new();
        }
        let v = self.values[k][i];
        self.actions[k][i]
            .iter()
            .zip(&self.q[k][i])
            .filter(|(_, &q)| q >= v - TIE_TOLERANCE)
            .map(|(a, _)| a.clone())
            .collect()
    }
}

/// Transition `(successor index, probability, mean contribution)` lists per
/// `(stage, state, action)`.
type Arcs = Vec<Vec<Vec<Vec<(usize, f64, f64)>>>>;

struct Model<S, A> {
    states: Vec<Vec<S>>,
    index: Vec<HashMap<S, usize>>,
    actions: Vec<Vec<Vec<A>>>,
    arcs: Arcs,
}

fn build_model<P: Mdp + ?Sized>(
    problem: &P,
    t0: Stage,
    starts: &[P::State],
    budget: usize,
) -> Result<Model<P::State, P::Action>> {
    let horizon = problem.horizon();
    if t0 > horizon {
        return Err(Error::contract(format!(
            "stage {t0} is past the horizon {horizon}"
        )));
    }
    let mut first = Vec::new();
    let mut first_index = HashMap::new();
    for s in starts {
        if !first_index.contains_key(s) {
            first_index.insert(s.clone(), first.len());
            first.push(s.clone());
        }
    }
    let mut total = first.len();
    let mut states = vec![first];
    let mut index = vec![first_index];
    let mut actions = Vec::new();
    let mut arcs: Arcs = Vec::new();

    for t in t0..horizon {
        let k = t - t0;
        let mut next_states = Vec::new();
        let mut next_index: HashMap<P::State, usize> = HashMap::new();
        let mut stage_actions = Vec::with_capacity(states[k].len());
        let mut stage_arcs = Vec::with_capacity(states[k].len());
        for s in &states[k] {
            let feasible = problem.actions(t, s);
            if feasible.is_empty() {
                return Err(Error::contract(format!(
                    "no feasible action in state {s:?} at stage {t}"
                )));
            }
            let mut per_action = Vec::with_capacity(feasible.len());
            for a in &feasible {
                let law = problem.successor_distribution(t, s, a).ok_or_else(|| {
                    Error::config(format!(
                        "the successor law of {a:?} in {s:?} at stage {t} cannot be enumerated"
                    ))
                })?;
                let mut out = Vec::with_capacity(law.len());
                for succ in law {
                    if succ.probability <= 0.0 {
                        continue;
                    }
                    let j = match next_index.get(&succ.state) {
                        Some(&j) => j,
                        None => {
                            total += 1;
                            if total > budget {
                                return Err(Error::Budget {
                                    what: "reachable oracle states",
                                    budget,
                                });
                            }
                            next_index.insert(succ.state.clone(), next_states.len());
                            next_states.push(succ.state);
                            next_states.len() - 1
                        }
                    };
                    out.push((j, succ.probability, succ.mean_contribution));
                }
                per_action.push(out);
            }
            stage_actions.push(feasible);
            stage_arcs.push(per_action);
        }
        actions.push(stage_actions);
        arcs.push(stage_arcs);
        states.push(next_states);
        index.push(next_index);
    }
    Ok(Model {
        states,
        index,
        actions,
        arcs,
    })
}

/// Backward induction; `combine(k, i, q)` turns the action values of state `i`
/// in layer `k` into the state's value.
fn backward<S, A>(
    model: Model<S, A>,
    horizon: Stage,
    start: Stage,
    mut combine: impl FnMut(usize, usize, &[f64]) -> Result<f64>,
) -> Result<ValueTable<S, A>> {
    let layers = model.states.len();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); layers];
    let mut q: Vec<Vec<Vec<f64>>> = vec![Vec::new(); layers - 1];
    values[layers - 1] = vec![0.0; model.states[layers - 1].len()];
    for k in (0..layers - 1).rev() {
        let mut qk = Vec::with_capacity(model.arcs[k].len());
        let mut vk = Vec::with_capacity(model.arcs[k].len());
        for (i, per_action) in model.arcs[k].iter().enumerate() {
            let qs: Vec<f64> = per_action
                .iter()
                .map(|arcs| {
                    arcs.iter()
                        .map(|&(j, p, c)| p * (c + values[k + 1][j]))
                        .sum()
                })
                .collect();
            vk.push(combine(k, i, &qs)?);
            qk.push(qs);
        }
        values[k] = vk;
        q[k] = qk;
    }
    Ok(ValueTable {
        horizon,
        start,
        states: model.states,
        index: model.index,
        actions: model.actions,
        values,
        q,
    })
}

fn max_of(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `V*` and `Q*` for every state reachable from the initial state.
pub fn solve_exact<P: Mdp + ?Sized>(problem: &P) -> Result<ValueTable<P::State, P::Action>> {
    solve_exact_from(problem, 0, &[problem.initial_state()], &OracleConfig::default())
}

/// `V*` and `Q*` for every state reachable from `starts` at stage `t0`.
pub fn solve_exact_from<P: Mdp + ?Sized>(
    problem: &P,
    t0: Stage,
    starts: &[P::State],
    config: &OracleConfig,
) -> Result<ValueTable<P::State, P::Action>> {
    let model = build_model(problem, t0, starts, config.state_budget)?;
    backward(model, problem.horizon(), t0, |_, _, q| Ok(max_of(q)))
}

/// `V^pi` and `Q^pi` for a randomized policy given by its action law, a list
/// of `(action, probability)` pairs per `(stage, state)`.
pub fn evaluate_policy_law<P, F>(
    problem: &P,
    law: F,
    config: &OracleConfig,
) -> Result<ValueTable<P::State, P::Action>>
where
    P: Mdp + ?Sized,
    F: Fn(Stage, &P::State) -> Vec<(P::Action, f64)>,
{
    let model = build_model(problem, 0, &[problem.initial_state()], config.state_budget)?;
    let states = model.states.clone();
    let actions = model.actions.clone();
    backward(model, problem.horizon(), 0, |k, i, q| {
        let s = &states[k][i];
        let mut v = 0.0;
        for (a, p) in law(k, s) {
            let j = actions[k][i].iter().position(|b| *b == a).ok_or_else(|| {
                Error::contract(format!(
                    "policy chose infeasible action {a:?} at stage {k} in state {s:?}"
                ))
            })?;
            v += p * q[j];
        }
        Ok(v)
    })
}

/// `V^pi` and `Q^pi` for a deterministic policy. The policy is queried with a
/// fixed-seed generator; randomized policies should use
/// [`evaluate_policy_law`].
pub fn evaluate_policy<P: Mdp + ?Sized>(
    problem: &P,
    policy: &dyn Policy<P>,
    config: &OracleConfig,
) -> Result<ValueTable<P::State, P::Action>> {
    let failure = std::cell::RefCell::new(None);
    let table = evaluate_policy_law(
        problem,
        |t, s| {
            let mut rng = seeded(0);
            match policy.decide(problem, t, s, &mut rng) {
                Ok(a) => vec![(a, 1.0)],
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    Vec::new()
                }
            }
        },
        config,
    )?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(table),
    }
}

/// Uniform law over the feasible actions.
pub fn uniform_policy_law<P: Mdp + ?Sized>(
    problem: &P,
) -> impl Fn(Stage, &P::State) -> Vec<(P::Action, f64)> + '_ {
    move |t, s| {
        let actions = problem.actions(t, s);
        let p = 1.0 / actions.len() as f64;
        actions.into_iter().map(|a| (a, p)).collect()
    }
}

/// Calls `visit` once per outcome trajectory from stage `t` with its
/// probability. Refuses when the trajectory count exceeds the budget.
pub fn for_each_trajectory<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    budget: usize,
    mut visit: impl FnMut(&Trajectory<P::Outcome>, f64) -> Result<()>,
) -> Result<()> {
    let mut laws = Vec::new();
    let mut count: usize = 1;
    for tau in t..problem.horizon() {
        let law = problem.outcomes(tau).ok_or_else(|| {
            Error::config(format!("outcomes after stage {tau} cannot be enumerated"))
        })?;
        count = count.saturating_mul(law.len());
        if count > budget {
            return Err(Error::Budget {
                what: "enumerated trajectories",
                budget,
            });
        }
        laws.push(law);
    }
    let mut traj = Trajectory::new(t, Vec::with_capacity(laws.len()));
    recurse(&laws, 1.0, &mut traj, &mut visit)
}

fn recurse<O: Clone>(
    laws: &[&[(O, f64)]],
    prob: f64,
    traj: &mut Trajectory<O>,
    visit: &mut impl FnMut(&Trajectory<O>, f64) -> Result<()>,
) -> Result<()> {
    let depth = traj.len();
    if depth == laws.len() {
        return visit(traj, prob);
    }
    for (w, p) in laws[depth] {
        if *p <= 0.0 {
            continue;
        }
        traj.outcomes.push(w.clone());
        recurse(laws, prob * p, traj, visit)?;
        traj.outcomes.pop();
    }
    Ok(())
}

/// Exact `E[u]` of the sampled dual bound of `(s, a)` at stage `t`, by
/// enumerating every outcome trajectory.
pub fn exact_dual_expectation<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    action: &P::Action,
    penalty: &DualPenalty<P::State>,
    config: &OracleConfig,
) -> Result<f64> {
    if t >= problem.horizon() {
        return Err(Error::contract(format!(
            "no decision to bound at terminal stage {t}"
        )));
    }
    penalty.validate(problem)?;
    let mut rng = seeded(0);
    let rng: &mut dyn RngCore = &mut rng;
    let mut total = 0.0;
    for_each_trajectory(problem, t, config.trajectory_budget, |traj, p| {
        let u = dual_bounds_on_trajectory(
            problem,
            t,
            state,
            std::slice::from_ref(action),
            traj,
            penalty,
            config.inner_budget,
            rng,
        )?[0];
        total += p * u;
        Ok(())
    })?;
    Ok(total)
}

/// Exact expectation of the penalty accumulated by a deterministic policy,
/// which is zero for a dual-feasible penalty.
pub fn exact_policy_penalty<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    policy: &dyn Policy<P>,
    penalty: &DualPenalty<P::State>,
    config: &OracleConfig,
) -> Result<f64> {
    let mut rng = seeded(0);
    let mut total = 0.0;
    for_each_trajectory(problem, t, config.trajectory_budget, |traj, p| {
        let mut s = state.clone();
        let mut actions = Vec::with_capacity(traj.len());
        for (i, w) in traj.outcomes.iter().enumerate() {
            let a = policy.decide(problem, t + i, &s, &mut seeded(0))?;
            s = problem.transition(t + i, &s, &a, w);
            actions.push(a);
        }
        total += p * crate::dual::penalty_term(penalty, problem, t, state, &actions, traj, &mut rng)?;
        Ok(())
    })?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::random_mdp::{generate_random_mdp, RandomMdpSizes};

    /// One stage, one state, two actions and two outcomes.
    struct OneShot {
        reward: [[f64; 2]; 2],
        law: [(usize, f64); 2],
    }

    impl OneShot {
        fn new(reward: [[f64; 2]; 2], p: [f64; 2]) -> Self {
            Self {
                reward,
                law: [(0, p[0]), (1, p[1])],
            }
        }
    }

    impl Mdp for OneShot {
        type State = usize;
        type Action = usize;
        type Outcome = usize;

        fn horizon(&self) -> Stage {
            1
        }
        fn initial_state(&self) -> usize {
            0
        }
        fn actions(&self, _: Stage, _: &usize) -> Vec<usize> {
            vec![0, 1]
        }
        fn transition(&self, _: Stage, _: &usize, _: &usize, _: &usize) -> usize {
            0
        }
        fn contribution(&self, _: Stage, _: &usize, a: &usize, w: &usize) -> f64 {
            self.reward[*a][*w]
        }
        fn sample_outcome(&self, _: Stage, rng: &mut dyn RngCore) -> usize {
            (rng.next_u32() % 2) as usize
        }
        fn outcomes(&self, _: Stage) -> Option<&[(usize, f64)]> {
            Some(&self.law)
        }
        fn contribution_bound(&self) -> f64 {
            4.0
        }
    }

    #[test]
    fn two_by_two_hand_values() {
        // c(a, w): a0 -> (1, 3), a1 -> (4, -2), P(w) = (0.25, 0.75)
        let mdp = OneShot::new([[1.0, 3.0], [4.0, -2.0]], [0.25, 0.75]);
        let table = solve_exact(&mdp).unwrap();
        let q0 = 0.25 * 1.0 + 0.75 * 3.0;
        let q1 = 0.25 * 4.0 + 0.75 * -2.0;
        assert_eq!(table.q(0, &0, &0), Some(q0));
        assert_eq!(table.q(0, &0, &1), Some(q1));
        assert_eq!(table.value(0, &0), Some(q0.max(q1)));
        assert_eq!(table.optimal_actions(0, &0), vec![0]);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mdp = OneShot::new([[0.0; 2]; 2], [0.5, 0.5]);
        let table = solve_exact(&mdp).unwrap();
        assert_eq!(table.value(0, &0), Some(0.0));
        assert_eq!(table.value(1, &0), Some(0.0));
    }

    #[test]
    fn optimal_policy_evaluates_to_v_star() {
        let mdp = generate_random_mdp(
            RandomMdpSizes {
                states: 6,
                actions: 3,
                outcomes: 3,
                horizon: 4,
            },
            13,
        )
        .unwrap();
        let star = solve_exact(&mdp).unwrap();
        let policy = |t: Stage, s: &usize| star.optimal_actions(t, s)[0];
        let table = evaluate_policy(&mdp, &policy, &OracleConfig::default()).unwrap();
        assert!((table.value(0, &0).unwrap() - star.value(0, &0).unwrap()).abs() <= 1e-12);
        let uniform =
            evaluate_policy_law(&mdp, uniform_policy_law(&mdp), &OracleConfig::default()).unwrap();
        assert!(uniform.value(0, &0).unwrap() <= star.value(0, &0).unwrap() + 1e-12);
    }

    #[test]
    fn budgets_are_enforced() {
        let mdp = generate_random_mdp(
            RandomMdpSizes {
                states: 8,
                actions: 2,
                outcomes: 4,
                horizon: 6,
            },
            2,
        )
        .unwrap();
        let tight = OracleConfig {
            state_budget: 3,
            ..OracleConfig::default()
        };
        assert!(matches!(
            solve_exact_from(&mdp, 0, &[0], &tight),
            Err(Error::Budget { .. })
        ));
        let tight = OracleConfig {
            trajectory_budget: 100,
            ..OracleConfig::default()
        };
        assert!(matches!(
            exact_dual_expectation(&mdp, 0, &0, &0, &DualPenalty::Zero, &tight),
            Err(Error::Budget { .. })
        ));
    }
}
