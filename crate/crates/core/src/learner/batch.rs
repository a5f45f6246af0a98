use crate::autodiff::Tensor;
use crate::env::Episode;
use crate::nets::{agent_input, Dims};

/// Episodes padded to a common length, laid out time-major.
///
/// Per-agent rows are indexed `(t·B + b)·n + i`, per-sample rows `t·B + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub episodes: usize,
    pub t_max: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    /// One `(B·n) × input_dim` block per step.
    pub inputs: Vec<Tensor<f64>>,
    /// `(T·B) × state_dim`.
    pub states: Tensor<f64>,
    pub actions: Vec<usize>,
    /// `(T·B·n) × n_actions`, row-major.
    pub avail: Vec<bool>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Prefix-of-ones validity per episode.
    pub valid: Vec<bool>,
    pub gamma: f64,
}

impl Batch {
    pub fn from_episodes(episodes: &[&Episode], dims: &Dims, gamma: f64) -> Self {
        let (n, na) = (dims.n_agents, dims.n_actions);
        let b = episodes.len();
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(t_max);
        let mut states = Tensor::zeros(t_max * b, dims.state_dim);
        let mut actions = vec![0; t_max * b * n];
        let mut avail = vec![true; t_max * b * n * na];
        let mut rewards = vec![0.0; t_max * b];
        let mut terminated = vec![false; t_max * b];
        let mut valid = vec![false; t_max * b];
        for t in 0..t_max {
            let mut block = Tensor::zeros(b * n, dims.input_dim());
            for (e, ep) in episodes.iter().enumerate() {
                let Some(step) = ep.steps.get(t) else { continue };
                let srow = t * b + e;
                states.row_mut(srow).copy_from_slice(&step.state);
                rewards[srow] = step.reward;
                terminated[srow] = step.terminated;
                valid[srow] = true;
                for i in 0..n {
                    let prev = (t > 0).then(|| ep.steps[t - 1].actions[i]);
                    block.row_mut(e * n + i).copy_from_slice(&agent_input(dims, i, &step.obs[i], prev));
                    let arow = srow * n + i;
                    actions[arow] = step.actions[i];
                    avail[arow * na..(arow + 1) * na].copy_from_slice(&step.avail[i]);
                }
            }
            inputs.push(block);
        }
        Self { episodes: b, t_max, n_agents: n, n_actions: na, inputs, states, actions, avail, rewards, terminated, valid, gamma }
    }

    pub fn samples(&self) -> usize {
        self.t_max * self.episodes
    }

    pub fn rows(&self) -> usize {
        self.samples() * self.n_agents
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Validity per sample as a `(T·B) × 1` column of 0/1.
    pub fn valid_col(&self) -> Tensor<f64> {
        Tensor::from_vec(self.samples(), 1, self.valid.iter().map(|&v| f64::from(u8::from(v))).collect())
    }

    /// Validity per agent row as a `(T·B·n) × 1` column of 0/1.
    pub fn valid_rows_col(&self) -> Tensor<f64> {
        let n = self.n_agents;
        Tensor::from_vec(self.rows(), 1, (0..self.rows()).map(|r| f64::from(u8::from(self.valid[r / n]))).collect())
    }

    /// Number of valid steps of episode `e`.
    pub fn episode_len(&self, e: usize) -> usize {
        (0..self.t_max).filter(|&t| self.valid[t * self.episodes + e]).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EpisodeStep;

    fn ep(len: usize, tag: f64) -> Episode {
        let steps = (0..len)
            .map(|t| EpisodeStep {
                state: vec![tag, t as f64],
                obs: vec![vec![tag], vec![-tag]],
                avail: vec![vec![true, t % 2 == 0], vec![true, true]],
                actions: vec![t % 2, 1],
                reward: tag,
                terminated: t + 1 == len,
            })
            .collect();
        Episode { steps }
    }

    #[test]
    fn padding_and_layout() {
        let dims = Dims { n_agents: 2, n_actions: 2, obs_dim: 1, state_dim: 2 };
        let (a, b) = (ep(3, 1.0), ep(1, 2.0));
        let batch = Batch::from_episodes(&[&a, &b], &dims, 0.9);
        assert_eq!((batch.t_max, batch.episodes), (3, 2));
        assert_eq!(batch.episode_len(0), 3);
        assert_eq!(batch.episode_len(1), 1);
        assert_eq!(batch.valid, vec![true, true, true, false, true, false]);
        // step 1 of episode 0, agent 0: obs 1, prev action 0, id 0
        assert_eq!(batch.inputs[1].row(0), &[1.0, 1.0, 0.0, 1.0, 0.0]);
        // step 0 has no previous action
        assert_eq!(batch.inputs[0].row(3), &[-2.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(batch.states.row(2), &[1.0, 1.0]);
        assert_eq!(&batch.avail[(2 * 2) * 2..(2 * 2) * 2 + 2], &[true, false]);
        assert_eq!(batch.valid_rows_col().sum(), 8.0);
    }
}
