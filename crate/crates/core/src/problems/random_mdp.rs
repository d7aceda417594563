//! Small random MDPs with fully enumerable outcomes, used by the property
//! tests and the duality suite.
//!
//! States and actions are `0..S` and `0..A`; every action is feasible
//! everywhere and the process starts in state 0. Each stage has its own
//! outcome law and transition table. By default the stage contribution
//! `c_t(s, a)` does not depend on the outcome; see [`RewardModel`].

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Stage};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomMdpSizes {
    pub states: usize,
    pub actions: usize,
    pub outcomes: usize,
    pub horizon: usize,
}

impl RandomMdpSizes {
    pub const MAX_STATES: usize = 64;
    pub const MAX_ACTIONS: usize = 8;
    pub const MAX_OUTCOMES: usize = 8;
    pub const MAX_HORIZON: usize = 8;

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, value: usize, max: usize| {
            if value == 0 || value > max {
                Err(Error::config(format!("{name} must lie in 1..={max}, got {value}")))
            } else {
                Ok(())
            }
        };
        check("state count", self.states, Self::MAX_STATES)?;
        check("action count", self.actions, Self::MAX_ACTIONS)?;
        check("outcome count", self.outcomes, Self::MAX_OUTCOMES)?;
        check("horizon", self.horizon, Self::MAX_HORIZON)
    }
}

/// How contributions depend on the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardModel {
    /// `c_t(s, a)` only. With this model the value-function penalty built
    /// from `V*` gives a zero-variance, exact dual bound.
    #[default]
    StateAction,
    /// `c_t(s, a, w)` drawn independently for every outcome.
    PerOutcome,
}

#[derive(Debug, Clone)]
pub struct RandomMdp {
    sizes: RandomMdpSizes,
    reward_model: RewardModel,
    /// `law[t]`: `(w, P(W_{t+1} = w))` for the outcome drawn after stage `t`.
    law: Vec<Vec<(usize, f64)>>,
    /// `next[t][s][a][w]`.
    next: Vec<Vec<Vec<Vec<usize>>>>,
    /// `reward[t][s][a][w]`; constant in `w` under [`RewardModel::StateAction`].
    reward: Vec<Vec<Vec<Vec<f64>>>>,
}

pub fn generate_random_mdp(sizes: RandomMdpSizes, seed: u64) -> Result<RandomMdp> {
    generate_random_mdp_with(sizes, RewardModel::default(), seed)
}

pub fn generate_random_mdp_with(
    sizes: RandomMdpSizes,
    reward_model: RewardModel,
    seed: u64,
) -> Result<RandomMdp> {
    sizes.validate()?;
    let mut rng = seeded(seed);
    let RandomMdpSizes {
        states,
        actions,
        outcomes,
        horizon,
    } = sizes;

    let law = (0..horizon)
        .map(|_| {
            // bounded away from zero so every outcome matters
            let weights: Vec<f64> = (0..outcomes).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            weights
                .into_iter()
                .enumerate()
                .map(|(w, x)| (w, x / total))
                .collect()
        })
        .collect();
    let next = (0..horizon)
        .map(|_| {
            (0..states)
                .map(|_| {
                    (0..actions)
                        .map(|_| (0..outcomes).map(|_| rng.random_range(0..states)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let reward = (0..horizon)
        .map(|_| {
            (0..states)
                .map(|_| {
                    (0..actions)
                        .map(|_| match reward_model {
                            RewardModel::StateAction => {
                                vec![rng.random_range(-1.0..1.0); outcomes]
                            }
                            RewardModel::PerOutcome => {
                                (0..outcomes).map(|_| rng.random_range(-1.0..1.0)).collect()
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    Ok(RandomMdp {
        sizes,
        reward_model,
        law,
        next,
        reward,
    })
}

impl RandomMdp {
    pub fn sizes(&self) -> RandomMdpSizes {
        self.sizes
    }

    pub fn reward_model(&self) -> RewardModel {
        self.reward_model
    }

    /// The same MDP with each stage's outcome list listed in a shuffled order.
    pub fn with_permuted_outcomes(&self, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut out = self.clone();
        for stage in &mut out.law {
            stage.shuffle(&mut rng);
        }
        out
    }
}

impl Mdp for RandomMdp {
    type State = usize;
    type Action = usize;
    type Outcome = usize;

    fn horizon(&self) -> Stage {
        self.sizes.horizon
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn actions(&self, _t: Stage, _state: &usize) -> Vec<usize> {
        (0..self.sizes.actions).collect()
    }

    fn transition(&self, t: Stage, state: &usize, action: &usize, outcome: &usize) -> usize {
        self.next[t][*state][*action][*outcome]
    }

    fn contribution(&self, t: Stage, state: &usize, action: &usize, outcome: &usize) -> f64 {
        self.reward[t][*state][*action][*outcome]
    }

    fn sample_outcome(&self, t: Stage, rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        let law = &self.law[t];
        let mut acc = 0.0;
        for &(w, p) in law {
            acc += p;
            if u < acc {
                return w;
            }
        }
        law[law.len() - 1].0
    }

    fn outcomes(&self, t: Stage) -> Option<&[(usize, f64)]> {
        Some(&self.law[t])
    }

    fn contribution_bound(&self) -> f64 {
        1.0
    }
}
