//! Cooperative Dec-POMDP environments behind one interface.

pub mod corridor;
mod episode;
pub mod matrix;

pub use corridor::{secret_corridor_spec, CorridorState, SecretCorridor, CORRIDOR_LEN, CORRIDOR_RULES, EXIT_REWARD, STEP_COST};
pub use episode::{Episode, EpisodeStep};
pub use matrix::{payoff, MatrixGame, PAYOFF};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent} chose unavailable action {action}")]
    InvalidAction { agent: usize, action: usize },
    #[error("expected {expected} actions, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("action {0} is out of range")]
    ActionOutOfRange(usize),
    #[error("unknown environment {0:?} (expected \"matrix\" or \"corridor\")")]
    UnknownEnv(String),
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("invalid environment spec: {0}")]
    BadSpec(String),
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_agents < 2 {
            return Err(EnvError::BadSpec(format!("n_agents = {} < 2", self.n_agents)));
        }
        if self.n_actions < 2 {
            return Err(EnvError::BadSpec(format!("n_actions = {} < 2", self.n_actions)));
        }
        if self.episode_limit < 1 {
            return Err(EnvError::BadSpec("episode_limit must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(EnvError::BadSpec(format!("gamma = {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// What an agent team sees at the start of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub avail: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub terminated: bool,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub avail_actions: Vec<Vec<bool>>,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; deterministic in `seed`.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult, EnvError>;

    /// Whether the episode that just ended counts as a success.
    fn succeeded(&self) -> bool;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Matrix,
    Corridor,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self, EnvError> {
        match name {
            "matrix" => Ok(Self::Matrix),
            "corridor" => Ok(Self::Corridor),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Matrix => "matrix",
            Self::Corridor => "corridor",
        }
    }

    pub fn build(self) -> Box<dyn Environment> {
        match self {
            Self::Matrix => Box::new(MatrixGame::new()),
            Self::Corridor => Box::new(SecretCorridor::new()),
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            Self::Matrix => MatrixGame::new().spec().clone(),
            Self::Corridor => secret_corridor_spec().0,
        }
    }
}

/// Plays one episode from `reset(seed)`, asking `choose` for the joint action
/// at every step. `choose` receives the current observation and step index.
pub fn run_episode(
    env: &mut dyn Environment,
    seed: u64,
    mut choose: impl FnMut(&Observation, usize) -> Result<Vec<usize>, EnvError>,
) -> Result<Episode, EnvError> {
    let limit = env.spec().episode_limit;
    let mut o = env.reset(seed);
    let mut steps = Vec::new();
    for t in 0..limit {
        let actions = choose(&o, t)?;
        let r = env.step(&actions)?;
        steps.push(EpisodeStep {
            state: std::mem::take(&mut o.state),
            obs: std::mem::take(&mut o.obs),
            avail: std::mem::take(&mut o.avail),
            actions,
            reward: r.reward,
            terminated: r.terminated,
        });
        if r.terminated {
            break;
        }
        o = Observation { state: r.next_state, obs: r.next_obs, avail: r.avail_actions };
    }
    Ok(Episode { steps })
}

pub(crate) fn check_joint_action(spec: &EnvSpec, avail: &[Vec<bool>], joint: &[usize]) -> Result<(), EnvError> {
    if joint.len() != spec.n_agents {
        return Err(EnvError::WrongArity { expected: spec.n_agents, got: joint.len() });
    }
    for (agent, &a) in joint.iter().enumerate() {
        if a >= spec.n_actions {
            return Err(EnvError::ActionOutOfRange(a));
        }
        if !avail[agent][a] {
            return Err(EnvError::InvalidAction { agent, action: a });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let mut s = MatrixGame::new().spec().clone();
        assert!(s.validate().is_ok());
        s.gamma = 1.0;
        assert!(s.validate().is_err());
        s.gamma = 0.5;
        s.n_agents = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn env_names() {
        assert_eq!(EnvKind::parse("matrix").unwrap(), EnvKind::Matrix);
        assert_eq!(EnvKind::parse("corridor").unwrap().name(), "corridor");
        assert!(matches!(EnvKind::parse("smac"), Err(EnvError::UnknownEnv(_))));
    }
}
