use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::env::{EnvKind, Episode, EpisodeStep};
use crate::learner::Batch;
use crate::nets::{Networks, ParamSet};
use crate::objective::{greedy_joint_action, tables};

use super::HarnessError;

const NAMES: [&str; 3] = ["A", "B", "C"];

/// Per-agent values and the reconstructed joint value grid of the matrix game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationTable {
    /// `q[i][a]`: agent `i`'s local value of action `a`, with the partner at
    /// the joint greedy action (messages noise-free).
    pub q: Vec<Vec<f64>>,
    /// `q_tot[u1][u2]`.
    pub q_tot: Vec<Vec<f64>>,
    /// Per-agent argmax of `q`.
    pub local_greedy: Vec<usize>,
    /// Argmax of `q_tot` over all joint actions.
    pub joint_greedy: Vec<usize>,
    /// What the trained agents do when acting greedily.
    pub policy_greedy: Vec<usize>,
}

impl FactorizationTable {
    pub fn q_tot_at(&self, u: &[usize]) -> f64 {
        self.q_tot[u[0]][u[1]]
    }

    /// Plain-text layout; greedy entries are wrapped in `**`.
    pub fn to_text(&self) -> String {
        let mark = |v: f64, on: bool| if on { format!("**{v:.1}**") } else { format!("{v:.1}") };
        let mut s = String::new();
        for (i, qi) in self.q.iter().enumerate() {
            let cells: Vec<String> = qi.iter().enumerate().map(|(a, &v)| mark(v, self.local_greedy[i] == a)).collect();
            s.push_str(&format!("Q_{}: {}\n", i + 1, cells.join("  ")));
        }
        s.push_str(&format!("\nQ_tot   {:>10} {:>10} {:>10}\n", NAMES[0], NAMES[1], NAMES[2]));
        for (u1, row) in self.q_tot.iter().enumerate() {
            s.push_str(&format!("{:<7}", NAMES[u1]));
            for (u2, &v) in row.iter().enumerate() {
                s.push_str(&format!(" {:>10}", mark(v, self.joint_greedy == [u1, u2])));
            }
            s.push('\n');
        }
        let names: Vec<&str> = self.policy_greedy.iter().map(|&a| NAMES[a]).collect();
        s.push_str(&format!("\ngreedy joint action: ({})\n", names.join(", ")));
        s
    }
}

/// Builds the table from trained parameters; `policy_greedy` is supplied by
/// the caller (actors or local values, depending on the algorithm).
pub fn factorization_table(
    env: EnvKind,
    nets: &Networks,
    params: &ParamSet,
    policy_greedy: Vec<usize>,
) -> Result<FactorizationTable, HarnessError> {
    if env != EnvKind::Matrix {
        return Err(HarnessError::Config("factorization tables need the matrix game".into()));
    }
    // one sample suffices: the game has a single constant state
    let ep = Episode {
        steps: vec![EpisodeStep {
            state: vec![1.0],
            obs: vec![vec![1.0]; 2],
            avail: vec![vec![true; 3]; 2],
            actions: vec![0, 0],
            reward: 0.0,
            terminated: true,
        }],
    };
    let first = Batch::from_episodes(&[&ep], &nets.dims, 0.0);
    let noise = Tensor::zeros(2, nets.cfg.msg_dim);
    let tabs = tables(nets, &params.critics[..1], &params.encoder, &first, &noise).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let t = &tabs[0];
    let star = t.greedy(0);
    let joint_greedy = t.decode(star);
    let mut q = vec![vec![0.0; 3]; 2];
    for (i, qi) in q.iter_mut().enumerate() {
        for (a, v) in qi.iter_mut().enumerate() {
            *v = t.q(0, t.with_action(star, i, a), i);
        }
    }
    let mut q_tot = vec![vec![0.0; 3]; 3];
    for (u1, row) in q_tot.iter_mut().enumerate() {
        for (u2, v) in row.iter_mut().enumerate() {
            *v = t.q_tot(0, u1 * 3 + u2);
        }
    }
    let local_greedy = greedy_joint_action(&q, None);
    Ok(FactorizationTable { q, q_tot, local_greedy, joint_greedy, policy_greedy })
}
