use serde::{Deserialize, Serialize};

/// One time step of a stored trajectory. `obs`, `avail` and `state` are what
/// the agents saw before acting; `actions` is the joint action taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub avail: Vec<Vec<bool>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub terminated: bool,
}

/// A complete trajectory. The last step, and only the last step, is terminal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Exactly one terminal step, at the end, within `limit` steps.
    pub fn is_well_formed(&self, limit: usize) -> bool {
        let terminals = self.steps.iter().filter(|s| s.terminated).count();
        !self.steps.is_empty()
            && self.steps.len() <= limit
            && terminals == 1
            && self.steps.last().is_some_and(|s| s.terminated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(terminated: bool) -> EpisodeStep {
        EpisodeStep {
            state: vec![1.0],
            obs: vec![vec![1.0]; 2],
            avail: vec![vec![true; 3]; 2],
            actions: vec![0, 0],
            reward: 1.0,
            terminated,
        }
    }

    #[test]
    fn well_formedness() {
        let ok = Episode { steps: vec![step(false), step(true)] };
        assert!(ok.is_well_formed(2));
        assert!(!ok.is_well_formed(1));
        assert!(!Episode { steps: vec![step(true), step(true)] }.is_well_formed(5));
        assert!(!Episode { steps: vec![step(false)] }.is_well_formed(5));
        assert!(!Episode::default().is_well_formed(5));
        assert_eq!(ok.total_reward(), 2.0);
    }
}
