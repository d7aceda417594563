//! Information-relaxation dual bounds.
//!
//! Fixing an outcome trajectory turns the MDP into a deterministic problem
//! whose optimal value, minus a dual penalty, bounds the true value from above
//! in expectation. This module provides the penalties, a generic solver for
//! the deterministic inner problem and the stochastic-approximation update
//! used to smooth sampled bounds.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::sync::{Arc, Mutex};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::mdp::{rollout_reward, sample_trajectory, Mdp, Policy, Stage, Trajectory};
use crate::rng::{derive_seed, seeded};

/// Default cap on trajectory-conditioned states per inner solve.
pub const DEFAULT_STATE_BUDGET: usize = 200_000;

/// Default Monte Carlo sample count for penalty expectations.
pub const DEFAULT_PENALTY_SAMPLES: usize = 32;

/// Generating functions `nu_t(s)` of a value-function penalty.
pub trait NuFunction<S>: Send + Sync {
    fn value(&self, t: Stage, state: &S) -> f64;
}

impl<S, F> NuFunction<S> for F
where
    F: Fn(Stage, &S) -> f64 + Send + Sync,
{
    fn value(&self, t: Stage, state: &S) -> f64 {
        self(t, state)
    }
}

/// How `E[nu_{t+1}(f(s, a, W))]` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMode {
    /// Sum over the successor law; the penalty is then exactly dual feasible.
    Exact,
    /// Average over `m` fresh outcome samples. Feasible only approximately.
    MonteCarlo(usize),
}

#[derive(Default)]
pub enum DualPenalty<S> {
    #[default]
    Zero,
    ValueFunction {
        nu: Arc<dyn NuFunction<S>>,
        mode: ExpectationMode,
    },
}

impl<S> Clone for DualPenalty<S> {
    fn clone(&self) -> Self {
        match self {
            DualPenalty::Zero => DualPenalty::Zero,
            DualPenalty::ValueFunction { nu, mode } => DualPenalty::ValueFunction {
                nu: Arc::clone(nu),
                mode: *mode,
            },
        }
    }
}

impl<S> fmt::Debug for DualPenalty<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DualPenalty::Zero => f.write_str("Zero"),
            DualPenalty::ValueFunction { mode, .. } => {
                write!(f, "ValueFunction({mode:?})")
            }
        }
    }
}


impl<S> DualPenalty<S> {
    pub fn value_function(nu: impl NuFunction<S> + 'static, mode: ExpectationMode) -> Self {
        DualPenalty::ValueFunction {
            nu: Arc::new(nu),
            mode,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DualPenalty::Zero)
    }

    /// Checks that the penalty can be evaluated on `problem`.
    pub fn validate<P>(&self, problem: &P) -> Result<()>
    where
        P: Mdp<State = S> + ?Sized,
    {
        match self {
            DualPenalty::Zero => Ok(()),
            DualPenalty::ValueFunction { mode, .. } => match mode {
                ExpectationMode::MonteCarlo(0) => Err(Error::config(
                    "Monte Carlo penalty expectation needs at least one sample",
                )),
                ExpectationMode::MonteCarlo(_) => Ok(()),
                ExpectationMode::Exact => {
                    let s = problem.initial_state();
                    let enumerable = problem.horizon() == 0
                        || problem
                            .actions(0, &s)
                            .first()
                            .is_some_and(|a| problem.successor_distribution(0, &s, a).is_some());
                    if enumerable {
                        Ok(())
                    } else {
                        Err(Error::config(
                            "exact penalty expectation requires an enumerable outcome model",
                        ))
                    }
                }
            },
        }
    }
}

/// `E[nu_{t+1}(f(s, a, W_{t+1}))]`.
fn expected_nu<P: Mdp + ?Sized>(
    problem: &P,
    nu: &dyn NuFunction<P::State>,
    mode: ExpectationMode,
    t: Stage,
    state: &P::State,
    action: &P::Action,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    match mode {
        ExpectationMode::Exact => {
            let law = problem.successor_distribution(t, state, action).ok_or_else(|| {
                Error::config("exact penalty expectation requires an enumerable outcome model")
            })?;
            Ok(law
                .iter()
                .map(|s| s.probability * nu.value(t + 1, &s.state))
                .sum())
        }
        ExpectationMode::MonteCarlo(m) => {
            if m == 0 {
                return Err(Error::config(
                    "Monte Carlo penalty expectation needs at least one sample",
                ));
            }
            let mut total = 0.0;
            for _ in 0..m {
                let w = problem.sample_outcome(t, rng);
                total += nu.value(t + 1, &problem.transition(t, state, action, &w));
            }
            Ok(total / m as f64)
        }
    }
}

/// One-step penalty `nu_{t+1}(s') - E[nu_{t+1}(f(s, a, W))]` for the realized
/// successor `s'`.
fn step_penalty<P: Mdp + ?Sized>(
    problem: &P,
    penalty: &DualPenalty<P::State>,
    t: Stage,
    state: &P::State,
    action: &P::Action,
    next: &P::State,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    match penalty {
        DualPenalty::Zero => Ok(0.0),
        DualPenalty::ValueFunction { nu, mode } => {
            let mean = expected_nu(problem, nu.as_ref(), *mode, t, state, action, rng)?;
            Ok(nu.value(t + 1, next) - mean)
        }
    }
}

/// `z_t(s, a, w)`: the additive penalty accumulated along the path that
/// `actions` produce on `traj`.
pub fn penalty_term<P: Mdp + ?Sized>(
    penalty: &DualPenalty<P::State>,
    problem: &P,
    t: Stage,
    state: &P::State,
    actions: &[P::Action],
    traj: &Trajectory<P::Outcome>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if actions.len() != traj.len() || traj.start != t || t + traj.len() != problem.horizon() {
        return Err(Error::contract(format!(
            "penalty needs {} actions and outcomes from stage {t}, got {} and {}",
            problem.horizon().saturating_sub(t),
            actions.len(),
            traj.len()
        )));
    }
    if penalty.is_zero() {
        return Ok(0.0);
    }
    let mut s = state.clone();
    let mut total = 0.0;
    for (i, (a, w)) in actions.iter().zip(&traj.outcomes).enumerate() {
        let tau = t + i;
        let next = problem.transition(tau, &s, a, w);
        total += step_penalty(problem, penalty, tau, &s, a, &next, rng)?;
        s = next;
    }
    Ok(total)
}

/// Optimal value and one optimal action sequence of the inner problem.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution<A> {
    pub value: f64,
    pub actions: Vec<A>,
    /// Value of each feasible first action (in problem order) followed by
    /// optimal play.
    pub first_action_values: Vec<f64>,
}

/// Backward induction over the states reachable from `starts` under the fixed
/// outcome sequence.
struct Layered<S> {
    states: Vec<Vec<S>>,
    /// `edges[k][i]`: `(step reward minus penalty, successor index)` per action.
    edges: Vec<Vec<Vec<(f64, usize)>>>,
    values: Vec<Vec<f64>>,
    best: Vec<Vec<usize>>,
}

fn solve_layers<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    starts: &[P::State],
    outcomes: &[P::Outcome],
    penalty: &DualPenalty<P::State>,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Layered<P::State>> {
    let len = outcomes.len();
    let mut states: Vec<Vec<P::State>> = Vec::with_capacity(len + 1);
    let mut edges: Vec<Vec<Vec<(f64, usize)>>> = Vec::with_capacity(len);
    let mut first = Vec::new();
    let mut seen: HashMap<P::State, usize> = HashMap::new();
    for s in starts {
        if !seen.contains_key(s) {
            seen.insert(s.clone(), first.len());
            first.push(s.clone());
        }
    }
    let mut total = first.len();
    states.push(first);

    for (k, w) in outcomes.iter().enumerate() {
        let tau = t + k;
        let mut index: HashMap<P::State, usize> = HashMap::new();
        let mut next_layer: Vec<P::State> = Vec::new();
        let mut layer_edges = Vec::with_capacity(states[k].len());
        for s in &states[k] {
            let actions = problem.actions(tau, s);
            if actions.is_empty() {
                return Err(Error::contract(format!(
                    "no feasible action in state {s:?} at stage {tau}"
                )));
            }
            let mut out = Vec::with_capacity(actions.len());
            for a in &actions {
                let next = problem.transition(tau, s, a, w);
                let mut reward = problem.contribution(tau, s, a, w);
                if !penalty.is_zero() {
                    reward -= step_penalty(problem, penalty, tau, s, a, &next, rng)?;
                }
                let j = match index.get(&next) {
                    Some(&j) => j,
                    None => {
                        total += 1;
                        if total > budget {
                            return Err(Error::Budget {
                                what: "trajectory-conditioned inner states",
                                budget,
                            });
                        }
                        let j = next_layer.len();
                        index.insert(next.clone(), j);
                        next_layer.push(next);
                        j
                    }
                };
                out.push((reward, j));
            }
            layer_edges.push(out);
        }
        edges.push(layer_edges);
        states.push(next_layer);
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); len + 1];
    let mut best: Vec<Vec<usize>> = vec![Vec::new(); len];
    values[len] = vec![0.0; states[len].len()];
    for k in (0..len).rev() {
        let (v, b): (Vec<f64>, Vec<usize>) = edges[k]
            .iter()
            .map(|out| {
                let mut best_i = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, &(r, j)) in out.iter().enumerate() {
                    let v = r + values[k + 1][j];
                    if v > best_v {
                        best_v = v;
                        best_i = i;
                    }
                }
                (best_v, best_i)
            })
            .unzip();
        values[k] = v;
        best[k] = b;
    }
    Ok(Layered {
        states,
        edges,
        values,
        best,
    })
}

fn check_inner_trajectory<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    traj: &Trajectory<P::Outcome>,
) -> Result<()> {
    if traj.start != t || t + traj.len() != problem.horizon() {
        return Err(Error::contract(format!(
            "inner problem at stage {t} needs outcomes for stages {t}..{}, got {} from stage {}",
            problem.horizon(),
            traj.len(),
            traj.start
        )));
    }
    Ok(())
}

/// `max_a [h_t(s, a, w) - z_t(s, a, w)]` on the fixed trajectory `traj`,
/// with an optimizing action sequence (ties go to the earlier action).
pub fn solve_inner<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    traj: &Trajectory<P::Outcome>,
    penalty: &DualPenalty<P::State>,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<InnerSolution<P::Action>> {
    check_inner_trajectory(problem, t, traj)?;
    let layers = solve_layers(
        problem,
        t,
        std::slice::from_ref(state),
        &traj.outcomes,
        penalty,
        budget,
        rng,
    )?;
    let mut actions = Vec::with_capacity(traj.len());
    let mut i = 0;
    for k in 0..traj.len() {
        let b = layers.best[k][i];
        let s = &layers.states[k][i];
        actions.push(problem.actions(t + k, s)[b].clone());
        i = layers.edges[k][i][b].1;
    }
    let first_action_values = match layers.edges.first() {
        Some(edges) => edges[0]
            .iter()
            .map(|&(r, j)| r + layers.values[1][j])
            .collect(),
        None => Vec::new(),
    };
    Ok(InnerSolution {
        value: layers.values[0][0],
        actions,
        first_action_values,
    })
}

/// Inner-problem values for several start states at stage `t`, all on the
/// same outcome sequence. Uses the problem's specialized solver when the
/// penalty is zero and one is available.
pub fn inner_values<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    starts: &[P::State],
    traj: &Trajectory<P::Outcome>,
    penalty: &DualPenalty<P::State>,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    check_inner_trajectory(problem, t, traj)?;
    if traj.is_empty() {
        return Ok(vec![0.0; starts.len()]);
    }
    if penalty.is_zero() {
        if let Some(values) = problem.solve_relaxed(t, starts, &traj.outcomes) {
            return Ok(values);
        }
    }
    let layers = solve_layers(problem, t, starts, &traj.outcomes, penalty, budget, rng)?;
    let index: HashMap<&P::State, usize> = layers.states[0]
        .iter()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    Ok(starts.iter().map(|s| layers.values[0][index[s]]).collect())
}

/// Sampled bounds `c_t(s, a, w_{t+1}) + max_a [h_{t+1} - z_{t+1}]` for each
/// of `candidates`, all evaluated on the single trajectory `traj`.
#[allow(clippy::too_many_arguments)]
pub fn dual_bounds_on_trajectory<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    candidates: &[P::Action],
    traj: &Trajectory<P::Outcome>,
    penalty: &DualPenalty<P::State>,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    check_inner_trajectory(problem, t, traj)?;
    let w = traj.outcomes.first().ok_or_else(|| {
        Error::contract(format!("no decision to bound at terminal stage {t}"))
    })?;
    let feasible = problem.actions(t, state);
    let mut heads = Vec::with_capacity(candidates.len());
    let mut nexts = Vec::with_capacity(candidates.len());
    for a in candidates {
        if !feasible.contains(a) {
            return Err(Error::contract(format!(
                "candidate {a:?} is infeasible in state {state:?} at stage {t}"
            )));
        }
        heads.push(problem.contribution(t, state, a, w));
        nexts.push(problem.transition(t, state, a, w));
    }
    let tails = inner_values(problem, t + 1, &nexts, &traj.tail(), penalty, budget, rng)?;
    Ok(heads.iter().zip(tails).map(|(h, v)| h + v).collect())
}

/// One sampled lookahead for a single action.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBound<A> {
    pub value: f64,
    pub trajectory_seed: u64,
    pub action: A,
    pub stage: Stage,
}

pub fn sample_dual_bound<P: Mdp + ?Sized>(
    problem: &P,
    t: Stage,
    state: &P::State,
    action: &P::Action,
    penalty: &DualPenalty<P::State>,
    budget: usize,
    trajectory_seed: u64,
) -> Result<SampledBound<P::Action>> {
    let mut rng = seeded(trajectory_seed);
    let traj = sample_trajectory(problem, t, &mut rng);
    let value = dual_bounds_on_trajectory(
        problem,
        t,
        state,
        std::slice::from_ref(action),
        &traj,
        penalty,
        budget,
        &mut rng,
    )?[0];
    Ok(SampledBound {
        value,
        trajectory_seed,
        action: action.clone(),
        stage: t,
    })
}

/// `(1 - 1/l) u + s / l`, where `l` counts lookaheads including this one.
pub fn smooth_dual_estimate(prev: f64, sample: f64, lookaheads_after: u64) -> f64 {
    debug_assert!(lookaheads_after >= 1);
    let alpha = 1.0 / lookaheads_after as f64;
    (1.0 - alpha) * prev + alpha * sample
}

/// `nu_t(s)` estimated by averaging rollouts of a policy, cached per `(t, s)`.
///
/// Each `(t, s)` pair uses its own seed derived from the state's debug label,
/// so values do not depend on query order.
pub struct PolicyValueNu<P: Mdp> {
    problem: Arc<P>,
    policy: Arc<dyn Policy<P>>,
    rollouts: usize,
    seed: u64,
    cache: Mutex<HashMap<(Stage, P::State), f64>>,
}

impl<P: Mdp> PolicyValueNu<P> {
    pub fn new(problem: Arc<P>, policy: Arc<dyn Policy<P>>, rollouts: usize, seed: u64) -> Self {
        Self {
            problem,
            policy,
            rollouts: rollouts.max(1),
            seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn estimate(&self, t: Stage, state: &P::State) -> f64 {
        if t >= self.problem.horizon() {
            return 0.0;
        }
        let mut rng = seeded(derive_seed(&[self.seed, t as u64, label_hash(state)]));
        let mut total = 0.0;
        for _ in 0..self.rollouts {
            let traj = sample_trajectory(self.problem.as_ref(), t, &mut rng);
            total += rollout_reward(
                self.problem.as_ref(),
                t,
                state,
                self.policy.as_ref(),
                &traj,
                &mut rng,
            )
            .unwrap_or(0.0);
        }
        total / self.rollouts as f64
    }
}

impl<P: Mdp> NuFunction<P::State> for PolicyValueNu<P> {
    fn value(&self, t: Stage, state: &P::State) -> f64 {
        let key = (t, state.clone());
        if let Some(&v) = self.cache.lock().expect("nu cache poisoned").get(&key) {
            return v;
        }
        let v = self.estimate(t, state);
        self.cache.lock().expect("nu cache poisoned").insert(key, v);
        v
    }
}

/// FNV-1a over the `Debug` label: stable across runs and platforms.
fn label_hash<S: fmt::Debug + Hash>(state: &S) -> u64 {
    format!("{state:?}")
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::cumulative_reward;
    use crate::problems::random_mdp::{
        generate_random_mdp, generate_random_mdp_with, RandomMdpSizes, RewardModel,
    };
    use rand::Rng;

    const SIZES: RandomMdpSizes = RandomMdpSizes {
        states: 5,
        actions: 3,
        outcomes: 3,
        horizon: 4,
    };

    #[test]
    fn smoothing_is_a_running_mean() {
        assert_eq!(smooth_dual_estimate(123.0, 7.5, 1), 7.5);
        let u = smooth_dual_estimate(0.0, 3.0, 1);
        assert_eq!(smooth_dual_estimate(u, 5.0, 2), 4.0);
        let mut u = 0.0;
        for l in 1..50 {
            u = smooth_dual_estimate(u, -2.25, l);
            assert!((u + 2.25).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_penalty_is_zero() {
        let mdp = generate_random_mdp(SIZES, 2).unwrap();
        let mut rng = seeded(0);
        let traj = sample_trajectory(&mdp, 0, &mut rng);
        let z = penalty_term(&DualPenalty::Zero, &mdp, 0, &0, &[0, 1, 2, 0], &traj, &mut rng);
        assert_eq!(z.unwrap(), 0.0);
    }

    #[test]
    fn inner_value_dominates_every_sequence() {
        let mdp = generate_random_mdp_with(SIZES, RewardModel::PerOutcome, 4).unwrap();
        let mut rng = seeded(1);
        for _ in 0..20 {
            let traj = sample_trajectory(&mdp, 0, &mut rng);
            let sol = solve_inner(&mdp, 0, &0, &traj, &DualPenalty::Zero, 1000, &mut rng).unwrap();
            let achieved = cumulative_reward(&mdp, 0, &0, &sol.actions, &traj).unwrap();
            assert!((achieved - sol.value).abs() < 1e-12);
            for _ in 0..100 {
                let actions: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
                let h = cumulative_reward(&mdp, 0, &0, &actions, &traj).unwrap();
                assert!(sol.value >= h - 1e-12);
            }
        }
    }

    #[test]
    fn last_stage_inner_problem_is_one_step() {
        let mdp = generate_random_mdp_with(SIZES, RewardModel::PerOutcome, 5).unwrap();
        let traj = Trajectory::new(3, vec![1]);
        let mut rng = seeded(0);
        let sol = solve_inner(&mdp, 3, &2, &traj, &DualPenalty::Zero, 100, &mut rng).unwrap();
        let best = (0..3)
            .map(|a| mdp.contribution(3, &2, &a, &1))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sol.value, best);
        assert_eq!(sol.first_action_values.len(), 3);
    }

    #[test]
    fn budget_is_enforced() {
        let mdp = generate_random_mdp(
            RandomMdpSizes {
                states: 40,
                actions: 6,
                outcomes: 2,
                horizon: 5,
            },
            6,
        )
        .unwrap();
        let mut rng = seeded(2);
        let traj = sample_trajectory(&mdp, 0, &mut rng);
        let err = solve_inner(&mdp, 0, &0, &traj, &DualPenalty::Zero, 5, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Budget { budget: 5, .. }));
    }

    #[test]
    fn multi_start_matches_single_start() {
        let mdp = generate_random_mdp(SIZES, 7).unwrap();
        let mut rng = seeded(3);
        let traj = sample_trajectory(&mdp, 1, &mut rng);
        let starts = [4, 0, 2, 0];
        let many = inner_values(&mdp, 1, &starts, &traj, &DualPenalty::Zero, 1000, &mut rng)
            .unwrap();
        for (s, v) in starts.iter().zip(&many) {
            let one = solve_inner(&mdp, 1, s, &traj, &DualPenalty::Zero, 1000, &mut rng).unwrap();
            assert_eq!(one.value, *v);
        }
    }

    #[test]
    fn monte_carlo_penalty_needs_samples() {
        let mdp = generate_random_mdp(SIZES, 7).unwrap();
        let nu = |_: Stage, s: &usize| *s as f64;
        let penalty = DualPenalty::value_function(nu, ExpectationMode::MonteCarlo(0));
        assert!(matches!(penalty.validate(&mdp), Err(Error::Config(_))));
        let penalty = DualPenalty::value_function(nu, ExpectationMode::Exact);
        assert!(penalty.validate(&mdp).is_ok());
    }

    #[test]
    fn sampled_bound_is_reproducible() {
        let mdp = generate_random_mdp(SIZES, 9).unwrap();
        let a = sample_dual_bound(&mdp, 0, &0, &1, &DualPenalty::Zero, 1000, 77).unwrap();
        let b = sample_dual_bound(&mdp, 0, &0, &1, &DualPenalty::Zero, 1000, 77).unwrap();
        assert_eq!(a, b);
        let last = sample_dual_bound(&mdp, 3, &2, &1, &DualPenalty::Zero, 1000, 5).unwrap();
        let mut rng = seeded(5);
        let w = mdp.sample_outcome(3, &mut rng);
        assert_eq!(last.value, mdp.contribution(3, &2, &1, &w));
    }
}
