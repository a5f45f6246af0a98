use super::{check_joint_action, EnvError, EnvSpec, Environment, Observation, StepResult};

/// Shared payoff of the one-step non-monotonic game, indexed `[u1][u2]`
/// with actions A = 0, B = 1, C = 2.
pub const PAYOFF: [[f64; 3]; 3] = [[8.0, -12.0, -12.0], [-12.0, 0.0, 0.0], [-12.0, 0.0, 0.0]];

pub fn payoff(u1: usize, u2: usize) -> Result<f64, EnvError> {
    let row = PAYOFF.get(u1).ok_or(EnvError::ActionOutOfRange(u1))?;
    row.get(u2).copied().ok_or(EnvError::ActionOutOfRange(u2))
}

/// Two agents, three actions, one step. State and observations are the
/// constant vector `[1]`.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: EnvSpec,
    done: bool,
    last_reward: Option<f64>,
}

impl Default for MatrixGame {
    fn default() -> Self {
        Self::new()
    }
}

impl MatrixGame {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec { n_agents: 2, n_actions: 3, obs_dim: 1, state_dim: 1, episode_limit: 1, gamma: 0.99 },
            done: true,
            last_reward: None,
        }
    }

    fn observation(&self) -> Observation {
        Observation {
            state: vec![1.0],
            obs: vec![vec![1.0]; 2],
            avail: vec![vec![true; 3]; 2],
        }
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.done = false;
        self.last_reward = None;
        self.observation()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let obs = self.observation();
        check_joint_action(&self.spec, &obs.avail, joint_action)?;
        let reward = payoff(joint_action[0], joint_action[1])?;
        self.done = true;
        self.last_reward = Some(reward);
        Ok(StepResult {
            reward,
            terminated: true,
            next_state: obs.state,
            next_obs: obs.obs,
            avail_actions: obs.avail,
        })
    }

    fn succeeded(&self) -> bool {
        self.last_reward == Some(8.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_constant() {
        let mut env = MatrixGame::new();
        let o = env.reset(0);
        assert_eq!(o.state, vec![1.0]);
        assert_eq!(o.obs, vec![vec![1.0], vec![1.0]]);
        assert!(o.avail.iter().all(|m| m.iter().all(|&x| x)));
        assert_eq!(env.reset(123), o);
    }

    #[test]
    fn step_rewards() {
        let mut env = MatrixGame::new();
        for (joint, r) in [([0, 0], 8.0), ([0, 1], -12.0), ([2, 1], 0.0)] {
            env.reset(0);
            let s = env.step(&joint).unwrap();
            assert_eq!(s.reward, r);
            assert!(s.terminated);
            assert_eq!(env.succeeded(), r == 8.0);
            assert_eq!(env.step(&joint), Err(EnvError::EpisodeOver));
        }
    }

    #[test]
    fn payoff_entries_and_errors() {
        assert_eq!(payoff(0, 0).unwrap(), 8.0);
        assert_eq!(payoff(1, 2).unwrap(), 0.0);
        assert!(payoff(3, 0).is_err());
        assert!(payoff(0, 3).is_err());
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(payoff(x, y).unwrap(), payoff(y, x).unwrap());
            }
        }
    }

    #[test]
    fn brute_force_optimum() {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for x in 0..3 {
            for y in 0..3 {
                let v = payoff(x, y).unwrap();
                if v > best.2 {
                    best = (x, y, v);
                }
            }
        }
        assert_eq!(best, (0, 0, 8.0));
    }

    #[test]
    fn rejects_bad_arity() {
        let mut env = MatrixGame::new();
        env.reset(0);
        assert!(matches!(env.step(&[0]), Err(EnvError::WrongArity { .. })));
        assert!(matches!(env.step(&[0, 5]), Err(EnvError::ActionOutOfRange(5))));
    }
}
