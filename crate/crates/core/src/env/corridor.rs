use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_joint_action, EnvError, EnvSpec, Environment, Observation, StepResult};

pub const CORRIDOR_LEN: usize = 5;
pub const START_CELL: usize = 2;
pub const LEFT_EXIT: usize = 0;
pub const RIGHT_EXIT: usize = CORRIDOR_LEN - 1;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const STAY: usize = 2;
pub const COMMIT: usize = 3;

pub const OBS_DIM: usize = 2 * CORRIDOR_LEN + 4;
pub const STATE_DIM: usize = 2 * CORRIDOR_LEN + 5;

pub const EXIT_REWARD: f64 = 10.0;
pub const STEP_COST: f64 = 0.1;

pub const CORRIDOR_RULES: &str = "\
Two agents each walk their own 5-cell corridor, both starting in the middle cell. \
One of the two ends (left or right) is the rewarded exit, chosen uniformly at reset. \
Agent 1 observes which exit is rewarded; agent 2 does not. Each agent observes its own \
position, the other agent's position, and who has committed. Actions: left, right, stay, \
commit; commit is only available at an end cell and locks the agent there (it can only \
stay afterwards). Once both agents have committed the episode ends with +10 if both \
stand on the rewarded exit and -10 otherwise. Every step costs 0.1. Episodes last at \
most 10 steps.";

/// The corridor pair's static description and a plain-text rule summary.
pub fn secret_corridor_spec() -> (EnvSpec, &'static str) {
    (
        EnvSpec {
            n_agents: 2,
            n_actions: 4,
            obs_dim: OBS_DIM,
            state_dim: STATE_DIM,
            episode_limit: 10,
            gamma: 0.99,
        },
        CORRIDOR_RULES,
    )
}

/// Full underlying state of the corridor pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CorridorState {
    pub pos: [usize; 2],
    /// `false` = left exit rewarded, `true` = right exit rewarded.
    pub goal_right: bool,
    pub committed: [bool; 2],
    pub t: usize,
}

impl CorridorState {
    pub fn goal_cell(&self) -> usize {
        if self.goal_right {
            RIGHT_EXIT
        } else {
            LEFT_EXIT
        }
    }

    pub fn encode(&self, limit: usize) -> Vec<f64> {
        let mut s = vec![0.0; STATE_DIM];
        s[self.pos[0]] = 1.0;
        s[CORRIDOR_LEN + self.pos[1]] = 1.0;
        s[2 * CORRIDOR_LEN + usize::from(self.goal_right)] = 1.0;
        for (i, &c) in self.committed.iter().enumerate() {
            s[2 * CORRIDOR_LEN + 2 + i] = f64::from(u8::from(c));
        }
        s[STATE_DIM - 1] = self.t as f64 / limit as f64;
        s
    }

    /// Observation of `agent`; a function of the state and the agent index only.
    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let other = 1 - agent;
        let mut o = vec![0.0; OBS_DIM];
        o[self.pos[agent]] = 1.0;
        o[CORRIDOR_LEN + self.pos[other]] = 1.0;
        if agent == 0 {
            o[2 * CORRIDOR_LEN + usize::from(self.goal_right)] = 1.0;
        }
        o[2 * CORRIDOR_LEN + 2] = f64::from(u8::from(self.committed[agent]));
        o[2 * CORRIDOR_LEN + 3] = f64::from(u8::from(self.committed[other]));
        o
    }

    pub fn avail(&self, agent: usize) -> Vec<bool> {
        if self.committed[agent] {
            return vec![false, false, true, false];
        }
        let p = self.pos[agent];
        vec![true, true, true, p == LEFT_EXIT || p == RIGHT_EXIT]
    }

    /// Applies a joint action: returns (next state, reward, terminated, success).
    pub fn transition(&self, joint: [usize; 2], limit: usize) -> (CorridorState, f64, bool, bool) {
        let mut next = *self;
        next.t += 1;
        let mut reward = -STEP_COST;
        for (agent, &a) in joint.iter().enumerate() {
            if self.committed[agent] {
                continue;
            }
            let p = self.pos[agent];
            match a {
                COMMIT => next.committed[agent] = true,
                LEFT => next.pos[agent] = p.saturating_sub(1),
                RIGHT => next.pos[agent] = (p + 1).min(CORRIDOR_LEN - 1),
                _ => {}
            }
        }
        if next.committed == [true, true] {
            let goal = self.goal_cell();
            let success = next.pos == [goal, goal];
            reward += if success { EXIT_REWARD } else { -EXIT_REWARD };
            return (next, reward, true, success);
        }
        (next, reward, next.t >= limit, false)
    }
}

/// Two-agent corridor where only agent 1 knows which exit pays.
#[derive(Clone, Debug)]
pub struct SecretCorridor {
    spec: EnvSpec,
    state: CorridorState,
    done: bool,
    success: bool,
}

impl Default for SecretCorridor {
    fn default() -> Self {
        Self::new()
    }
}

impl SecretCorridor {
    pub fn new() -> Self {
        Self {
            spec: secret_corridor_spec().0,
            state: CorridorState { pos: [START_CELL; 2], goal_right: false, committed: [false; 2], t: 0 },
            done: true,
            success: false,
        }
    }

    pub fn state(&self) -> &CorridorState {
        &self.state
    }

    /// Places the team in an arbitrary state (used for planning and tests).
    pub fn set_state(&mut self, state: CorridorState) {
        self.state = state;
        self.done = false;
        self.success = false;
    }

    fn observation(&self) -> Observation {
        Observation {
            state: self.state.encode(self.spec.episode_limit),
            obs: (0..2).map(|i| self.state.observe(i)).collect(),
            avail: (0..2).map(|i| self.state.avail(i)).collect(),
        }
    }
}

impl Environment for SecretCorridor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = CorridorState { pos: [START_CELL; 2], goal_right: rng.gen_bool(0.5), committed: [false; 2], t: 0 };
        self.done = false;
        self.success = false;
        self.observation()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let avail: Vec<Vec<bool>> = (0..2).map(|i| self.state.avail(i)).collect();
        check_joint_action(&self.spec, &avail, joint_action)?;
        let (next, reward, terminated, success) =
            self.state.transition([joint_action[0], joint_action[1]], self.spec.episode_limit);
        self.state = next;
        self.done = terminated;
        self.success = success;
        let o = self.observation();
        Ok(StepResult { reward, terminated, next_state: o.state, next_obs: o.obs, avail_actions: o.avail })
    }

    fn succeeded(&self) -> bool {
        self.success
    }
}
